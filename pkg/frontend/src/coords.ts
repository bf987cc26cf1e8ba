/**
 * Canvas <-> normalized coordinate mapping.
 *
 * The service places grid cell i of an r-cell axis at 2*i/(r-1) - 1, so a
 * canvas of `size` device pixels maps normalized v to pixel (v+1)/2*(size-1).
 * These two functions are the exact inverse pair of that convention.
 */

export const WIRE_BOUND = 1.25;

export function normToCanvas(v: number, size: number): number {
  return ((v + 1) / 2) * (size - 1);
}

export function canvasToNorm(p: number, size: number): number {
  return (2 * p) / (size - 1) - 1;
}

/** Handles may be dragged slightly past the frame; the wire clamps there. */
export function clampWire(v: number, bound: number = WIRE_BOUND): number {
  return Math.min(bound, Math.max(-bound, v));
}
