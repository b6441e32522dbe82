// Keyboard flight: arrows for the horizontal plane, PageUp/PageDown for
// altitude, T/L/H for takeoff/land/hover, Space for emergency. Repeats
// are throttled to five commands a second; emergency skips the throttle.

import type { CommandName } from "./protocol";

export interface KeyCommand {
  name: CommandName;
  params?: Record<string, unknown>;
}

const move = (direction: string): KeyCommand =>
  ({ name: "move", params: { direction, speed: 0.2 } });

export const KEY_BINDINGS: Record<string, KeyCommand> = {
  ArrowUp: move("forward"),
  ArrowDown: move("backward"),
  ArrowLeft: move("left"),
  ArrowRight: move("right"),
  PageUp: move("up"),
  PageDown: move("down"),
  t: { name: "takeoff" },
  l: { name: "land" },
  h: { name: "hover" },
  " ": { name: "emergency" },
};

export const KEY_MIN_GAP_MS = 200;

export interface KeyEventLike {
  key: string;
  preventDefault(): void;
}

export function createKeyboardHandler(options: {
  enabled: () => boolean;
  send: (command: KeyCommand) => void;
  now?: () => number;
}): (event: KeyEventLike) => void {
  const now = options.now ?? (() => Date.now());
  let lastSentAt = -Infinity;
  return (event) => {
    const key = event.key.length === 1 ? event.key.toLowerCase() : event.key;
    const binding = KEY_BINDINGS[key];
    if (!binding || !options.enabled()) return;
    event.preventDefault();
    if (binding.name === "emergency") {
      options.send(binding); // never throttled, never consumes the budget
      return;
    }
    const t = now();
    if (t - lastSentAt < KEY_MIN_GAP_MS) return;
    lastSentAt = t;
    options.send(binding);
  };
}
