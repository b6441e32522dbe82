// Page wiring: one GatewayLink, one UiState, direct DOM updates.

import { createKeyboardHandler } from "./keyboard";
import type { CommandName, TrackBox } from "./protocol";
import { GatewayLink } from "./socket";
import {
  applyTelemetry,
  batteryLow,
  beginCommand,
  canSend,
  initialState,
  linkLost,
  settleCommand,
} from "./state";
import { paintFrame, paintOverlay } from "./video";

const state = initialState();

const $ = (id: string) => document.getElementById(id)!;
const videoCanvas = $("video-canvas") as HTMLCanvasElement;
const overlayCanvas = $("overlay-canvas") as HTMLCanvasElement;
const speedInput = $("speed-input") as HTMLInputElement;
const keyboardToggle = $("keyboard-toggle") as HTMLInputElement;
const trackButton = $("track-button") as HTMLButtonElement;

function setStatus(text: string): void {
  state.statusText = text;
  $("status-strip").textContent = text;
}

function setConnectionBadge(text: string): void {
  const badge = $("conn-badge");
  badge.textContent = text;
  badge.className = `badge badge-${text}`;
}

function renderTelemetry(): void {
  const t = state.telemetry;
  if (!t) return;
  const battery = $("telemetry-battery");
  battery.textContent = `${t.battery_percent.toFixed(0)}%`;
  battery.classList.toggle("low-battery", batteryLow(state));
  $("telemetry-state").textContent = t.state;
  $("telemetry-altitude").textContent = `${t.altitude_m.toFixed(2)} m`;
  $("telemetry-attitude").textContent =
    `${t.pitch_deg.toFixed(1)} / ${t.roll_deg.toFixed(1)} / ${t.yaw_deg.toFixed(1)}`;
  $("telemetry-speed").textContent =
    `${t.vx_m_s.toFixed(2)} / ${t.vy_m_s.toFixed(2)} / ${t.vz_m_s.toFixed(2)}`;
  $("telemetry-link").textContent = t.link_ok ? "ok" : "down";
  $("track-action").textContent = state.trackAction;
}

const link = new GatewayLink(`ws://${location.host}/ws`, {
  onOpen: () => {
    setConnectionBadge("open");
    ($("reconnect-banner") as HTMLElement).hidden = true;
    setStatus("");
  },
  onClose: () => {
    setConnectionBadge("closed");
    state.connection = "closed";
    ($("reconnect-banner") as HTMLElement).hidden = false;
  },
  onTelemetry: (telemetry) => {
    state.connection = "open";
    applyTelemetry(state, telemetry, Date.now());
    renderTelemetry();
  },
  onTrack: (track) => {
    state.trackAction = track.action;
    state.trackBox = track.box;
    $("track-action").textContent = track.action;
    drawOverlay(track.box, track.action);
  },
  onFrame: (frame) => {
    state.frame = frame;
    if (videoCanvas.width !== frame.width
        || videoCanvas.height !== frame.height) {
      videoCanvas.width = frame.width;
      videoCanvas.height = frame.height;
      overlayCanvas.width = frame.width;
      overlayCanvas.height = frame.height;
    }
    const ctx = videoCanvas.getContext("2d");
    if (ctx) paintFrame(ctx, frame);
  },
  onErrorMessage: (message) => setStatus(`gateway: ${message}`),
});

function drawOverlay(box: TrackBox | null, action: string): void {
  const ctx = overlayCanvas.getContext("2d");
  if (!ctx) return;
  if (!state.tracking) {
    ctx.clearRect(0, 0, overlayCanvas.width, overlayCanvas.height);
    return;
  }
  paintOverlay(ctx, overlayCanvas.width, overlayCanvas.height, box, action);
}

function issue(
  name: CommandName, params?: Record<string, unknown>,
  button?: HTMLButtonElement,
): void {
  if (!link.isOpen) {
    setStatus("not connected");
    return;
  }
  if (!canSend(state, name)) return;
  const { id, done } = link.sendCommand(name, params);
  beginCommand(state, name, id);
  if (button && name !== "emergency") button.disabled = true;
  done
    .then(() => {
      if (name === "track") {
        state.tracking = !state.tracking;
        trackButton.textContent =
          state.tracking ? "stop tracking" : "start tracking";
        if (!state.tracking) drawOverlay(null, "");
      }
    })
    .catch((error: Error) => setStatus(error.message))
    .finally(() => {
      settleCommand(state, id);
      if (button) button.disabled = false;
    });
}

function wireButtons(): void {
  document.querySelectorAll<HTMLButtonElement>("button[data-command]")
    .forEach((button) => {
      button.addEventListener("click", () => {
        const name = button.dataset.command as CommandName;
        if (name === "move") {
          issue(name, {
            direction: button.dataset.direction,
            speed: Number(speedInput.value) || 0.2,
          }, button);
        } else if (name === "track") {
          issue(name, { enabled: !state.tracking }, button);
        } else {
          issue(name, undefined, button);
        }
      });
    });
  $("reconnect-button").addEventListener("click", () => {
    setConnectionBadge("connecting");
    link.connect();
  });
}

function wireKeyboard(): void {
  const handler = createKeyboardHandler({
    enabled: () => state.keyboardMode && link.isOpen,
    send: (command) => {
      link.sendCommand(command.name, command.params)
        .done.catch((error: Error) => setStatus(error.message));
    },
  });
  document.addEventListener("keydown", (event) => {
    const tag = (event.target as HTMLElement | null)?.tagName;
    if (tag === "INPUT" || tag === "TEXTAREA") return;
    handler(event);
  });
  keyboardToggle.addEventListener("change", () => {
    state.keyboardMode = keyboardToggle.checked;
  });
}

// "link lost" is about telemetry going stale, not the socket dying
window.setInterval(() => {
  ($("link-banner") as HTMLElement).hidden = !linkLost(state, Date.now());
}, 500);

wireButtons();
wireKeyboard();
setConnectionBadge("connecting");
link.connect();
