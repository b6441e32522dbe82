// Canvas painting: the RGB frame at native size, plus the tracking
// overlay (detection box and action label) on a second canvas.

import type { TrackBox, VideoFrame } from "./protocol";

// structural slices of CanvasRenderingContext2D, recordable in tests
export interface FramePainter {
  createImageData(width: number, height: number): {
    data: Uint8ClampedArray; width: number; height: number;
  };
  putImageData(image: unknown, dx: number, dy: number): void;
}

export interface OverlayPainter {
  strokeStyle: string;
  fillStyle: string;
  lineWidth: number;
  font: string;
  clearRect(x: number, y: number, w: number, h: number): void;
  strokeRect(x: number, y: number, w: number, h: number): void;
  fillText(text: string, x: number, y: number): void;
}

export function paintFrame(ctx: FramePainter, frame: VideoFrame): void {
  const image = ctx.createImageData(frame.width, frame.height);
  const rgba = image.data;
  const rgb = frame.rgb;
  for (let i = 0, j = 0; i < rgb.length; i += 3, j += 4) {
    rgba[j] = rgb[i];
    rgba[j + 1] = rgb[i + 1];
    rgba[j + 2] = rgb[i + 2];
    rgba[j + 3] = 255;
  }
  ctx.putImageData(image, 0, 0);
}

export function paintOverlay(
  ctx: OverlayPainter, width: number, height: number,
  box: TrackBox | null, action: string,
): void {
  ctx.clearRect(0, 0, width, height);
  if (box) {
    // box is center-format in frame-relative units
    const w = box.w * width;
    const h = box.h * height;
    ctx.strokeStyle = "#46e08c";
    ctx.lineWidth = 2;
    ctx.strokeRect(box.x * width - w / 2, box.y * height - h / 2, w, h);
  }
  ctx.fillStyle = "#46e08c";
  ctx.font = "16px monospace";
  ctx.fillText(action, 8, height - 10);
}
