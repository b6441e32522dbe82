// WebSocket wrapper for the gateway: assigns command ids, matches acks
// and errors back to the callers, routes telemetry/track/video messages.

import {
  CommandName,
  decodeFrameMessage,
  parseEnvelope,
  TelemetryEnvelope,
  TrackEnvelope,
  VideoFrame,
} from "./protocol";

// the slice of WebSocket we touch, so tests can substitute a fake
export interface SocketLike {
  binaryType: string;
  readyState: number;
  send(data: string): void;
  close(): void;
  onopen: (() => void) | null;
  onclose: (() => void) | null;
  onmessage: ((event: { data: string | ArrayBuffer }) => void) | null;
}

export interface LinkHandlers {
  onOpen?: () => void;
  onClose?: () => void;
  onTelemetry?: (telemetry: TelemetryEnvelope) => void;
  onTrack?: (track: TrackEnvelope) => void;
  onFrame?: (frame: VideoFrame) => void;
  // errors that belong to no in-flight command (e.g. "occupied")
  onErrorMessage?: (message: string) => void;
}

interface Settle {
  resolve: () => void;
  reject: (error: Error) => void;
}

const OPEN = 1; // WebSocket.OPEN without depending on the global

export class GatewayLink {
  private socket: SocketLike | null = null;
  private nextId = 1;
  private inFlight = new Map<number, Settle>();

  constructor(
    private url: string,
    private handlers: LinkHandlers,
    private makeSocket: (url: string) => SocketLike =
      (u) => new WebSocket(u) as unknown as SocketLike,
  ) {}

  connect(): void {
    const socket = this.makeSocket(this.url);
    socket.binaryType = "arraybuffer";
    socket.onopen = () => this.handlers.onOpen?.();
    socket.onclose = () => {
      this.socket = null;
      for (const settle of this.inFlight.values())
        settle.reject(new Error("socket closed"));
      this.inFlight.clear();
      this.handlers.onClose?.();
    };
    socket.onmessage = (event) => this.handleMessage(event.data);
    this.socket = socket;
  }

  get isOpen(): boolean {
    return this.socket !== null && this.socket.readyState === OPEN;
  }

  sendCommand(
    name: CommandName, params?: Record<string, unknown>,
  ): { id: number; done: Promise<void> } {
    const id = this.nextId++;
    if (!this.isOpen) {
      return { id, done: Promise.reject(new Error("not connected")) };
    }
    const done = new Promise<void>((resolve, reject) => {
      this.inFlight.set(id, { resolve, reject });
    });
    const envelope = params === undefined
      ? { type: "command", id, name }
      : { type: "command", id, name, params };
    this.socket!.send(JSON.stringify(envelope));
    return { id, done };
  }

  close(): void {
    this.socket?.close();
  }

  private handleMessage(data: string | ArrayBuffer): void {
    if (typeof data !== "string") {
      const frame = decodeFrameMessage(data);
      if (frame) this.handlers.onFrame?.(frame);
      return;
    }
    const envelope = parseEnvelope(data);
    if (!envelope) return;
    switch (envelope.type) {
      case "telemetry":
        this.handlers.onTelemetry?.(envelope);
        return;
      case "track":
        this.handlers.onTrack?.(envelope);
        return;
      case "ack": {
        const settle = envelope.id === null
          ? undefined : this.inFlight.get(envelope.id);
        if (!settle) {
          console.warn("ack for unknown command id", envelope.id);
          return;
        }
        this.inFlight.delete(envelope.id as number);
        settle.resolve();
        return;
      }
      case "error": {
        const id = envelope.id;
        const settle = typeof id === "number"
          ? this.inFlight.get(id) : undefined;
        if (settle) {
          this.inFlight.delete(id as number);
          settle.reject(new Error(envelope.message));
        } else {
          this.handlers.onErrorMessage?.(envelope.message);
        }
        return;
      }
    }
  }
}
