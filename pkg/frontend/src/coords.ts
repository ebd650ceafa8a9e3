/** Mapping between model coordinates (128-scale pixels) and canvas pixels. */

import type { Point } from "./api.js";

export const MODEL_SIZE = 128;

export class CoordinateMap {
  readonly scale: number;

  constructor(public canvasSize: number) {
    this.scale = canvasSize / MODEL_SIZE;
  }

  toCanvas(p: Point): Point {
    return [p[0] * this.scale, p[1] * this.scale];
  }

  toModel(p: Point): Point {
    return [p[0] / this.scale, p[1] / this.scale];
  }
}
