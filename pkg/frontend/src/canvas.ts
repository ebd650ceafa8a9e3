/** Canvas rendering of a hallucination result with a draggable landmark overlay. */

import type { Point } from "./api.js";
import { CoordinateMap } from "./coords.js";
import type { EditorSession } from "./session.js";

const HANDLE_RADIUS = 6;

export async function decodePng(b64: string): Promise<HTMLImageElement> {
  const img = new Image();
  img.src = `data:image/png;base64,${b64}`;
  await img.decode();
  return img;
}

export class ResultCanvas {
  private map: CoordinateMap;
  private dragIndex: number | null = null;
  onDragRelease: (() => void) | null = null;

  constructor(
    private canvas: HTMLCanvasElement,
    private session: EditorSession,
  ) {
    this.map = new CoordinateMap(canvas.width);
    canvas.addEventListener("pointerdown", (e) => this.onDown(e));
    canvas.addEventListener("pointermove", (e) => this.onMove(e));
    canvas.addEventListener("pointerup", (e) => this.onUp(e));
  }

  private canvasPoint(e: PointerEvent): Point {
    const rect = this.canvas.getBoundingClientRect();
    return [
      ((e.clientX - rect.left) / rect.width) * this.canvas.width,
      ((e.clientY - rect.top) / rect.height) * this.canvas.height,
    ];
  }

  private hitTest(p: Point): number | null {
    const points = this.session.landmarks;
    for (let i = 0; i < points.length; i++) {
      const c = this.map.toCanvas(points[i]);
      if (Math.hypot(c[0] - p[0], c[1] - p[1]) <= HANDLE_RADIUS + 2) return i;
    }
    return null;
  }

  private onDown(e: PointerEvent): void {
    this.dragIndex = this.hitTest(this.canvasPoint(e));
    if (this.dragIndex !== null) this.canvas.setPointerCapture(e.pointerId);
  }

  private onMove(e: PointerEvent): void {
    if (this.dragIndex === null) return;
    this.session.moveLandmark(this.dragIndex, this.map.toModel(this.canvasPoint(e)));
    void this.render();
  }

  private onUp(e: PointerEvent): void {
    if (this.dragIndex === null) return;
    this.dragIndex = null;
    this.canvas.releasePointerCapture(e.pointerId);
    // edits are sent on drag release, not while dragging
    if (this.onDragRelease) this.onDragRelease();
  }

  async render(): Promise<void> {
    const ctx = this.canvas.getContext("2d");
    if (!ctx) return;
    const img = await decodePng(this.session.current.response.hr_png_base64);
    ctx.imageSmoothingEnabled = false;
    ctx.drawImage(img, 0, 0, this.canvas.width, this.canvas.height);
    for (const p of this.session.landmarks) {
      const [cx, cy] = this.map.toCanvas(p);
      ctx.beginPath();
      ctx.arc(cx, cy, HANDLE_RADIUS, 0, 2 * Math.PI);
      ctx.strokeStyle = "#00ff88";
      ctx.lineWidth = 2;
      ctx.stroke();
    }
  }
}
