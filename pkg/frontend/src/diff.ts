/** Difference heatmap between two RGBA buffers, for the before/after toggle. */

export function diffHeat(before: Uint8ClampedArray, after: Uint8ClampedArray): Uint8ClampedArray {
  if (before.length !== after.length) {
    throw new Error(`buffer lengths differ: ${before.length} vs ${after.length}`);
  }
  const out = new Uint8ClampedArray(before.length);
  for (let i = 0; i < before.length; i += 4) {
    const d =
      (Math.abs(before[i] - after[i]) +
        Math.abs(before[i + 1] - after[i + 1]) +
        Math.abs(before[i + 2] - after[i + 2])) /
      3;
    const heat = Math.min(255, d * 4);
    out[i] = heat;
    out[i + 1] = 0;
    out[i + 2] = 255 - heat;
    out[i + 3] = 255;
  }
  return out;
}
