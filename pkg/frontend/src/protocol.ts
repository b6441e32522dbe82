// Wire types for the gateway WebSocket: JSON envelopes as text frames,
// video as binary frames (u16 width, u16 height, u32 seq, little-endian,
// then raw RGB bytes).

export type CommandName =
  | "takeoff"
  | "land"
  | "hover"
  | "emergency"
  | "reset"
  | "trim"
  | "move"
  | "track";

export interface CommandEnvelope {
  type: "command";
  id: number;
  name: CommandName;
  params?: Record<string, unknown>;
}

export interface AckEnvelope {
  type: "ack";
  id: number | null;
}

export interface ErrorEnvelope {
  type: "error";
  id?: number | null;
  message: string;
}

export interface TelemetryEnvelope {
  type: "telemetry";
  state: string;
  track_action: string;
  battery_percent: number;
  pitch_deg: number;
  roll_deg: number;
  yaw_deg: number;
  altitude_m: number;
  vx_m_s: number;
  vy_m_s: number;
  vz_m_s: number;
  state_mask: number;
  link_ok: boolean;
}

export interface TrackBox {
  x: number;
  y: number;
  w: number;
  h: number;
}

export interface TrackEnvelope {
  type: "track";
  action: string;
  box: TrackBox | null;
}

export type ServerEnvelope =
  | AckEnvelope
  | ErrorEnvelope
  | TelemetryEnvelope
  | TrackEnvelope;

const SERVER_TYPES = new Set(["ack", "error", "telemetry", "track"]);

export function parseEnvelope(text: string): ServerEnvelope | null {
  let value: unknown;
  try {
    value = JSON.parse(text);
  } catch {
    console.warn("unparseable envelope from gateway", text.slice(0, 120));
    return null;
  }
  const envelope = value as { type?: unknown };
  if (typeof envelope !== "object" || envelope === null ||
      !SERVER_TYPES.has(envelope.type as string)) {
    console.warn("unknown envelope type from gateway", envelope?.type);
    return null;
  }
  return value as ServerEnvelope;
}

export interface VideoFrame {
  width: number;
  height: number;
  seq: number;
  rgb: Uint8Array;
}

const FRAME_HEADER_BYTES = 8;

export function decodeFrameMessage(buffer: ArrayBuffer): VideoFrame | null {
  if (buffer.byteLength < FRAME_HEADER_BYTES) {
    console.warn(`frame message too short (${buffer.byteLength} bytes)`);
    return null;
  }
  const view = new DataView(buffer);
  const width = view.getUint16(0, true);
  const height = view.getUint16(2, true);
  const seq = view.getUint32(4, true);
  const rgb = new Uint8Array(buffer, FRAME_HEADER_BYTES);
  if (rgb.byteLength !== width * height * 3) {
    console.warn(
      `frame payload ${rgb.byteLength} bytes does not match ${width}x${height}`);
    return null;
  }
  return { width, height, seq, rgb };
}
