import { describe, expect, it } from "vitest";

import {
  applyError,
  applyGenerate,
  applyReset,
  centersWire,
  dragCenter,
  initialState,
} from "../src/editor.js";

describe("editor state transitions", () => {
  it("dragging level 0 co-moves every child handle by the same delta", () => {
    const s0 = initialState();
    const [y0, x0] = s0.centers[0][0];
    const s1 = dragCenter(s0, 0, 0, y0 + 0.2, x0);
    expect(s1.centers[0][0][0]).toBeCloseTo(y0 + 0.2, 12);
    for (let level = 1; level <= 2; level++) {
      s0.centers[level].forEach((c, i) => {
        expect(s1.centers[level][i][0]).toBeCloseTo(c[0] + 0.2, 12);
        expect(s1.centers[level][i][1]).toBeCloseTo(c[1], 12);
      });
    }
  });

  it("dragging a fine handle moves only that handle", () => {
    const s0 = initialState();
    const s1 = dragCenter(s0, 2, 1, 0.9, -0.9);
    expect(s1.centers[2][1]).toEqual([0.9, -0.9]);
    expect(s1.centers[0]).toEqual(s0.centers[0]);
    expect(s1.centers[1]).toEqual(s0.centers[1]);
    s0.centers[2].forEach((c, i) => {
      if (i !== 1) expect(s1.centers[2][i]).toEqual(c);
    });
  });

  it("clamps dragged handles to the wire bound", () => {
    const s1 = dragCenter(initialState(), 1, 0, 7, -7);
    expect(s1.centers[1][0]).toEqual([1.25, -1.25]);
  });

  it("does not mutate the previous state", () => {
    const s0 = initialState();
    const frozen = JSON.stringify(s0);
    dragCenter(s0, 0, 0, 0.5, 0.5);
    applyError(s0, "x");
    expect(JSON.stringify(s0)).toBe(frozen);
  });

  it("reset replaces seed and centers; errors keep handles and image", () => {
    let s = applyGenerate(initialState(), { image: "abc", heatmaps: ["h"] });
    s = applyReset(s, 42, {
      level0: [[0.1, 0.1]],
      level1: [[0, 0], [0.2, 0.2]],
      level2: [[0, 0], [0.1, 0], [0, 0.1], [0.1, 0.1]],
    });
    expect(s.seed).toBe(42);
    expect(s.centers[0][0]).toEqual([0.1, 0.1]);
    const withError = applyError(s, "offline");
    expect(withError.error).toBe("offline");
    expect(withError.lastImage).toBe("abc");
    expect(withError.centers).toEqual(s.centers);
  });

  it("serializes centers in wire order (y, x) per level", () => {
    const wire = centersWire(initialState());
    expect(wire.level0).toHaveLength(1);
    expect(wire.level1).toHaveLength(2);
    expect(wire.level2).toHaveLength(4);
  });
});
