/**
 * DOM bootstrap for the heatmap editor.
 *
 * One canvas shows the generated image with draggable center handles on top;
 * a column of small canvases previews the per-level heatmaps locally (no
 * server round trip while dragging).  Generate/Reset buttons and an "auto"
 * toggle fire requests through a latest-wins gate so a drag burst ends in
 * exactly one image that matches the final handle positions.
 */

import { ApiClient, ModelInfo } from "./api.js";
import { levelPreview, levelVariances } from "./bump.js";
import { canvasToNorm, normToCanvas } from "./coords.js";
import {
  EditorState,
  applyError,
  applyGenerate,
  applyReset,
  beginRequest,
  centersWire,
  dragCenter,
  initialState,
  setAutoGenerate,
} from "./editor.js";
import { LatestWins } from "./latest.js";

const SERVICE_URL =
  new URLSearchParams(window.location.search).get("service") ??
  "http://127.0.0.1:8321";
const CANVAS_SIZE = 384;
const HANDLE_COLORS = ["#ff3b30", "#ff9500", "#ffd60a"];
const HANDLE_RADIUS = [9, 7, 5];

const api = new ApiClient(SERVICE_URL);
const gate = new LatestWins<Awaited<ReturnType<ApiClient["generate"]>>>();

let state: EditorState = initialState();
let info: ModelInfo | null = null;
let drag: { level: number; index: number } | null = null;

const imageCanvas = document.getElementById("image") as HTMLCanvasElement;
const hoverLabel = document.getElementById("hover") as HTMLElement;
const errorBanner = document.getElementById("error") as HTMLElement;
const autoBox = document.getElementById("auto") as HTMLInputElement;
const generateBtn = document.getElementById("generate") as HTMLButtonElement;
const resetBtn = document.getElementById("reset") as HTMLButtonElement;
const seedLabel = document.getElementById("seed") as HTMLElement;
const previewColumn = document.getElementById("previews") as HTMLElement;

let lastImageEl: HTMLImageElement | null = null;

function setState(next: EditorState) {
  state = next;
  render();
}

function render() {
  const ctx = imageCanvas.getContext("2d")!;
  ctx.fillStyle = "#202020";
  ctx.fillRect(0, 0, CANVAS_SIZE, CANVAS_SIZE);
  if (lastImageEl) {
    ctx.imageSmoothingEnabled = false;
    ctx.drawImage(lastImageEl, 0, 0, CANVAS_SIZE, CANVAS_SIZE);
  }
  for (let level = state.centers.length - 1; level >= 0; level--) {
    for (const [y, x] of state.centers[level]) {
      const py = normToCanvas(y, CANVAS_SIZE);
      const px = normToCanvas(x, CANVAS_SIZE);
      ctx.beginPath();
      ctx.arc(px, py, HANDLE_RADIUS[level], 0, 2 * Math.PI);
      ctx.strokeStyle = "#000";
      ctx.lineWidth = 3;
      ctx.stroke();
      ctx.strokeStyle = HANDLE_COLORS[level];
      ctx.lineWidth = 2;
      ctx.stroke();
    }
  }
  renderPreviews();
  errorBanner.textContent = state.error ?? "";
  errorBanner.style.display = state.error ? "block" : "none";
  seedLabel.textContent = `seed ${state.seed}`;
  generateBtn.disabled = state.pending;
}

function renderPreviews() {
  if (!info) return;
  const variances = levelVariances(info.var0, state.centers.length);
  state.centers.forEach((centers, level) => {
    const canvas = previewColumn.children[level] as HTMLCanvasElement;
    const res = info!.level_resolutions[level];
    const map = levelPreview(res, centers, variances[level]);
    const ctx = canvas.getContext("2d")!;
    const cell = canvas.width / res;
    for (let i = 0; i < res; i++) {
      for (let j = 0; j < res; j++) {
        const v = Math.round(map[i][j] * 255);
        ctx.fillStyle = `rgb(${v},${Math.round(v * 0.6)},${255 - v})`;
        ctx.fillRect(j * cell, i * cell, cell + 1, cell + 1);
      }
    }
  });
}

function nearestHandle(px: number, py: number): { level: number; index: number } | null {
  let bestLevel = -1;
  let bestIndex = -1;
  let bestDist = 18; // grab radius in device pixels
  state.centers.forEach((centers, level) => {
    centers.forEach(([y, x], index) => {
      const d = Math.hypot(
        normToCanvas(x, CANVAS_SIZE) - px,
        normToCanvas(y, CANVAS_SIZE) - py
      );
      if (d < bestDist) {
        bestDist = d;
        bestLevel = level;
        bestIndex = index;
      }
    });
  });
  return bestLevel >= 0 ? { level: bestLevel, index: bestIndex } : null;
}

async function generateNow() {
  if (!info) return;
  setState(beginRequest(state));
  try {
    const payload = await gate.run((signal) =>
      api.generate(
        { latent_seed: state.seed, centers: centersWire(state) },
        signal
      )
    );
    if (payload === undefined) return; // superseded by a newer request
    const img = new Image();
    img.onload = () => {
      lastImageEl = img;
      setState(applyGenerate(state, payload));
    };
    img.src = `data:image/png;base64,${payload.image}`;
  } catch (err) {
    setState(applyError(state, `service error: ${String(err)}`));
  }
}

async function resetNow() {
  try {
    const payload = await api.reset();
    setState(applyReset(state, payload.seed, payload.centers));
    void generateNow();
  } catch (err) {
    setState(applyError(state, `service error: ${String(err)}`));
  }
}

function bindEvents() {
  imageCanvas.addEventListener("mousedown", (ev) => {
    const rect = imageCanvas.getBoundingClientRect();
    drag = nearestHandle(ev.clientX - rect.left, ev.clientY - rect.top);
  });
  imageCanvas.addEventListener("mousemove", (ev) => {
    const rect = imageCanvas.getBoundingClientRect();
    const px = ev.clientX - rect.left;
    const py = ev.clientY - rect.top;
    const ny = canvasToNorm(py, CANVAS_SIZE);
    const nx = canvasToNorm(px, CANVAS_SIZE);
    hoverLabel.textContent = `y ${ny.toFixed(3)}  x ${nx.toFixed(3)}`;
    if (drag) {
      setState(dragCenter(state, drag.level, drag.index, ny, nx));
    }
  });
  const endDrag = () => {
    if (drag && state.autoGenerate) {
      void generateNow();
    }
    drag = null;
  };
  imageCanvas.addEventListener("mouseup", endDrag);
  imageCanvas.addEventListener("mouseleave", endDrag);
  generateBtn.addEventListener("click", () => void generateNow());
  resetBtn.addEventListener("click", () => void resetNow());
  autoBox.addEventListener("change", () =>
    setState(setAutoGenerate(state, autoBox.checked))
  );
}

async function boot() {
  bindEvents();
  render();
  try {
    info = await api.modelInfo();
    for (const res of info.level_resolutions) {
      const canvas = document.createElement("canvas");
      canvas.width = canvas.height = 96;
      canvas.title = `${res}x${res}`;
      previewColumn.appendChild(canvas);
    }
    await resetNow();
  } catch (err) {
    setState(applyError(state, `service unreachable: ${String(err)}`));
  }
}

void boot();
