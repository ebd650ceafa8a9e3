import { describe, expect, it } from "vitest";

import { diffHeat } from "../src/diff.js";

function rgba(pixels: number[][]): Uint8ClampedArray {
  const out = new Uint8ClampedArray(pixels.length * 4);
  pixels.forEach((p, i) => out.set([...p, 255], i * 4));
  return out;
}

describe("diffHeat", () => {
  it("is cold for identical buffers", () => {
    const buf = rgba([
      [10, 20, 30],
      [200, 100, 50],
    ]);
    const heat = diffHeat(buf, buf);
    expect(heat[0]).toBe(0);
    expect(heat[2]).toBe(255);
    expect(heat[4]).toBe(0);
  });

  it("is hot where pixels changed", () => {
    const a = rgba([[0, 0, 0]]);
    const b = rgba([[255, 255, 255]]);
    const heat = diffHeat(a, b);
    expect(heat[0]).toBe(255);
    expect(heat[2]).toBe(0);
    expect(heat[3]).toBe(255);
  });

  it("rejects mismatched buffers", () => {
    expect(() => diffHeat(rgba([[0, 0, 0]]), rgba([[0, 0, 0], [1, 1, 1]]))).toThrow();
  });
});
