/**
 * Client-side Gaussian bump renderer for live heatmap previews.
 *
 * Deliberate duplication of the service-side renderer (same formula:
 * exp(-((gy-cy)^2 + (gx-cx)^2) / variance) on the 2*i/(res-1) - 1 grid,
 * no normalizing constant); shared/heatmap_golden.json pins both sides.
 */

export function gridCoord(i: number, res: number): number {
  return (2 * i) / (res - 1) - 1;
}

export function gaussianBump(
  res: number,
  center: [number, number],
  variance: number
): number[][] {
  if (variance <= 0) {
    throw new Error(`variance must be > 0, got ${variance}`);
  }
  const [cy, cx] = center;
  const map: number[][] = [];
  for (let i = 0; i < res; i++) {
    const row: number[] = [];
    const dy = gridCoord(i, res) - cy;
    for (let j = 0; j < res; j++) {
      const dx = gridCoord(j, res) - cx;
      row.push(Math.exp(-(dy * dy + dx * dx) / variance));
    }
    map.push(row);
  }
  return map;
}

/** Elementwise sum of sub-maps, clamped to [0, 1] for display. */
export function levelPreview(
  res: number,
  centers: number[][],
  variance: number
): number[][] {
  const sum: number[][] = Array.from({ length: res }, () =>
    new Array<number>(res).fill(0)
  );
  for (const c of centers) {
    const bump = gaussianBump(res, [c[0], c[1]], variance);
    for (let i = 0; i < res; i++) {
      for (let j = 0; j < res; j++) {
        sum[i][j] += bump[i][j];
      }
    }
  }
  for (let i = 0; i < res; i++) {
    for (let j = 0; j < res; j++) {
      sum[i][j] = Math.min(1, sum[i][j]);
    }
  }
  return sum;
}

/** Variance schedule: var0 shrunk by 1/sqrt(2) per level. */
export function levelVariances(var0: number, levels: number): number[] {
  const out = [var0];
  for (let l = 1; l < levels; l++) {
    out.push(out[l - 1] / Math.SQRT2);
  }
  return out;
}
