import { describe, expect, it } from "vitest";

import { canvasToNorm, clampWire, normToCanvas } from "../src/coords.js";

describe("canvas <-> normalized mapping", () => {
  it("is the inverse pair of the service grid convention", () => {
    // service: cell i of an r-cell axis sits at 2*i/(r-1) - 1
    const size = 384;
    for (const i of [0, 1, 100, 383]) {
      const v = (2 * i) / (size - 1) - 1;
      expect(normToCanvas(v, size)).toBeCloseTo(i, 9);
    }
  });

  it("round-trips canvas -> normalized -> canvas within one pixel", () => {
    const size = 384;
    for (let p = 0; p < size; p += 7) {
      const back = normToCanvas(canvasToNorm(p, size), size);
      expect(Math.abs(back - p)).toBeLessThan(1.0);
    }
  });

  it("round-trips normalized -> canvas -> normalized exactly at corners", () => {
    const size = 256;
    for (const v of [-1, 0, 1]) {
      expect(canvasToNorm(normToCanvas(v, size), size)).toBeCloseTo(v, 12);
    }
  });

  it("clamps to the wire bound", () => {
    expect(clampWire(2.0)).toBe(1.25);
    expect(clampWire(-9)).toBe(-1.25);
    expect(clampWire(0.7)).toBe(0.7);
  });
});
