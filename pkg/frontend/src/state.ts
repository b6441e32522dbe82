// UI state and the rules around it. Pure data + helpers so the invariants
// (one in-flight command per button, link staleness, battery warning) are
// testable without a browser.

import type { TelemetryEnvelope, TrackBox, VideoFrame } from "./protocol";

export const LINK_STALE_MS = 2000;
export const BATTERY_LOW_PERCENT = 20;

export type ConnectionStatus = "connecting" | "open" | "closed";

export interface UiState {
  connection: ConnectionStatus;
  telemetry: TelemetryEnvelope | null;
  lastTelemetryAt: number | null;
  frame: VideoFrame | null;
  trackAction: string;
  trackBox: TrackBox | null;
  tracking: boolean;
  keyboardMode: boolean;
  // command name -> id of the one unanswered command for that button
  pending: Map<string, number>;
  statusText: string;
}

export function initialState(): UiState {
  return {
    connection: "connecting",
    telemetry: null,
    lastTelemetryAt: null,
    frame: null,
    trackAction: "hover",
    trackBox: null,
    tracking: false,
    keyboardMode: false,
    pending: new Map(),
    statusText: "",
  };
}

export function applyTelemetry(
  state: UiState, telemetry: TelemetryEnvelope, nowMs: number,
): void {
  state.telemetry = telemetry;
  state.lastTelemetryAt = nowMs;
  state.trackAction = telemetry.track_action;
}

export function linkLost(state: UiState, nowMs: number): boolean {
  if (state.connection !== "open" || state.lastTelemetryAt === null)
    return false;
  return nowMs - state.lastTelemetryAt > LINK_STALE_MS;
}

export function batteryLow(state: UiState): boolean {
  return state.telemetry !== null
    && state.telemetry.battery_percent < BATTERY_LOW_PERCENT;
}

// Emergency must stay available no matter what is in flight.
export function canSend(state: UiState, name: string): boolean {
  return name === "emergency" || !state.pending.has(name);
}

export function beginCommand(
  state: UiState, name: string, id: number,
): boolean {
  if (!canSend(state, name)) return false;
  if (name !== "emergency") state.pending.set(name, id);
  return true;
}

// Returns the button name the id belonged to, or null for an id that was
// already settled (the gateway answers each id exactly once, so a second
// settle is a bug on our side).
export function settleCommand(state: UiState, id: number): string | null {
  for (const [name, pendingId] of state.pending) {
    if (pendingId === id) {
      state.pending.delete(name);
      return name;
    }
  }
  return null;
}
