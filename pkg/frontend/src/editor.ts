/**
 * Editor state and its pure transitions.
 *
 * State is a pure function of (seed, centers, last response); every
 * transition returns a fresh object so rendering can diff cheaply and tests
 * stay synchronous.  Centers are normalized (y, x), one list per level.
 */

import { clampWire } from "./coords.js";

export interface EditorState {
  seed: number;
  centers: number[][][]; // [level][handle][y, x]
  autoGenerate: boolean;
  lastImage: string | null;
  lastHeatmaps: string[] | null;
  lastAttn: string[] | null;
  pending: boolean;
  error: string | null;
}

export function initialState(): EditorState {
  return {
    seed: 0,
    centers: [
      [[0, 0]],
      [[0.1, 0.1], [-0.1, -0.1]],
      [[0.2, 0.2], [-0.2, 0.2], [0.2, -0.2], [-0.2, -0.2]],
    ],
    autoGenerate: false,
    lastImage: null,
    lastHeatmaps: null,
    lastAttn: null,
    pending: false,
    error: null,
  };
}

function cloneCenters(centers: number[][][]): number[][][] {
  return centers.map((level) => level.map((c) => [c[0], c[1]]));
}

/**
 * Move one handle to normalized (ny, nx).  Dragging the level-0 handle
 * translates every child handle by the same delta (the hierarchy follows its
 * root); dragging a child moves only itself.  Everything clamps to the wire
 * bound so dragging slightly past the frame is allowed but bounded.
 */
export function dragCenter(
  state: EditorState,
  level: number,
  index: number,
  ny: number,
  nx: number
): EditorState {
  const centers = cloneCenters(state.centers);
  if (level < 0 || level >= centers.length || index >= centers[level].length) {
    throw new Error(`no handle at level ${level} index ${index}`);
  }
  const target: [number, number] = [clampWire(ny), clampWire(nx)];
  if (level === 0) {
    const dy = target[0] - centers[0][0][0];
    const dx = target[1] - centers[0][0][1];
    for (let l = 1; l < centers.length; l++) {
      for (const c of centers[l]) {
        c[0] = clampWire(c[0] + dy);
        c[1] = clampWire(c[1] + dx);
      }
    }
    centers[0][0] = [target[0], target[1]];
  } else {
    centers[level][index] = [target[0], target[1]];
  }
  return { ...state, centers };
}

export function setAutoGenerate(state: EditorState, on: boolean): EditorState {
  return { ...state, autoGenerate: on };
}

export function beginRequest(state: EditorState): EditorState {
  return { ...state, pending: true, error: null };
}

/** Image and overlays replace atomically; stale payloads never get here
 * because the latest-wins gate filters them out. */
export function applyGenerate(
  state: EditorState,
  payload: { image: string; heatmaps: string[]; attn?: string[] }
): EditorState {
  return {
    ...state,
    pending: false,
    error: null,
    lastImage: payload.image,
    lastHeatmaps: payload.heatmaps,
    lastAttn: payload.attn ?? null,
  };
}

export function applyReset(
  state: EditorState,
  seed: number,
  centers: { level0: number[][]; level1: number[][]; level2: number[][] }
): EditorState {
  return {
    ...state,
    seed,
    centers: [centers.level0, centers.level1, centers.level2].map((level) =>
      level.map((c) => [c[0], c[1]])
    ),
    pending: false,
    error: null,
  };
}

/** Service failures show inline and leave handles/image untouched. */
export function applyError(state: EditorState, message: string): EditorState {
  return { ...state, pending: false, error: message };
}

export function centersWire(state: EditorState) {
  return {
    level0: state.centers[0].map((c) => [c[0], c[1]]),
    level1: state.centers[1].map((c) => [c[0], c[1]]),
    level2: state.centers[2].map((c) => [c[0], c[1]]),
  };
}
