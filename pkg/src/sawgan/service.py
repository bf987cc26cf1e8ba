"""HTTP inference service for interactive heatmap editing.

Loads one checkpoint and renders images from (latent seed, dragged heatmap
centers).  Centers travel in normalized (y, x) coordinates on the wire and
are clamped to [-1.25, 1.25] so handles can be dragged slightly past the
frame.  Responses carry the image and per-level heatmap previews (and,
optionally, attention overlays) as base64 PNG inside one JSON body, so a
round trip is a single request.

Model parameters are never mutated; generation runs under a single-flight
lock while /model/info stays lock-free.
"""

from __future__ import annotations

import base64
import hashlib
import io
import threading
from pathlib import Path

import numpy as np
import torch
from fastapi import FastAPI, HTTPException, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from . import attention
from . import heatmap as hmp
from . import nets, trainer

WIRE_COORD_BOUND = 1.25
LEVEL_KEYS = ("level0", "level1", "level2")


class GenerateRequest(BaseModel):
    latent_seed: int
    centers: dict[str, list[list[float]]]
    include_overlays: bool = False


class ModelBundle:
    def __init__(self, checkpoint_path):
        state = trainer.load_checkpoint(checkpoint_path)
        self.G = state.G.eval()
        self.D = state.D.eval()
        self.cfg = state.cfg
        for p in self.G.parameters():
            p.requires_grad_(False)
        self.checkpoint_hash = hashlib.sha256(
            Path(checkpoint_path).read_bytes()
        ).hexdigest()[:16]


def _png_b64(img: "np.ndarray") -> str:
    """[C, H, W] in [-1, 1] -> base64 PNG."""
    from PIL import Image

    arr = ((np.clip(img, -1, 1) + 1) * 127.5).astype(np.uint8)
    pil = Image.fromarray(arr[0], "L") if arr.shape[0] == 1 else Image.fromarray(
        arr.transpose(1, 2, 0), "RGB"
    )
    buf = io.BytesIO()
    pil.save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def _heatmap_png_b64(values: np.ndarray, size: int) -> str:
    from PIL import Image

    arr = (np.clip(values, 0.0, 1.0) * 255).astype(np.uint8)
    pil = Image.fromarray(arr, "L").resize((size, size), Image.BILINEAR)
    buf = io.BytesIO()
    pil.save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def _validate_centers(centers: dict, counts) -> list[list[tuple[float, float]]]:
    per_level = []
    for lvl, key in enumerate(LEVEL_KEYS):
        if key not in centers:
            raise HTTPException(400, detail={"error": "missing level", "field": f"centers.{key}"})
        raw = centers[key]
        if len(raw) != counts[lvl]:
            raise HTTPException(400, detail={
                "error": f"level {lvl} expects {counts[lvl]} centers, got {len(raw)}",
                "field": f"centers.{key}",
            })
        level = []
        for i, c in enumerate(raw):
            if len(c) != 2:
                raise HTTPException(400, detail={
                    "error": "center must be [y, x]",
                    "field": f"centers.{key}[{i}]",
                })
            y = float(np.clip(c[0], -WIRE_COORD_BOUND, WIRE_COORD_BOUND))
            x = float(np.clip(c[1], -WIRE_COORD_BOUND, WIRE_COORD_BOUND))
            level.append((y, x))
        per_level.append(level)
    return per_level


def centers_payload(pyramid: hmp.HeatmapPyramid) -> dict:
    return {
        key: [[c.y, c.x] for c in lvl.centers]
        for key, lvl in zip(LEVEL_KEYS, pyramid.levels)
    }


def create_app(checkpoint_path=None) -> FastAPI:
    app = FastAPI(title="sawgan edit service")
    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"]
    )
    app.state.bundle = ModelBundle(checkpoint_path) if checkpoint_path else None
    app.state.generate_lock = threading.Lock()

    @app.exception_handler(RequestValidationError)
    async def validation_handler(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={
            "error": "invalid request body",
            "detail": exc.errors(),
        })

    def bundle() -> ModelBundle:
        if app.state.bundle is None:
            raise HTTPException(503, detail="model not loaded")
        return app.state.bundle

    @app.get("/model/info")
    def model_info():
        b = bundle()
        cfg = b.cfg
        return {
            "base_res": cfg.base_res,
            "levels": list(range(len(cfg.heatmap_counts))),
            "level_resolutions": list(hmp.LEVEL_RESOLUTIONS),
            "center_counts": list(cfg.heatmap_counts),
            "latent_dim": cfg.latent_dim,
            "var0": cfg.heatmap_var0,
            "checkpoint_hash": b.checkpoint_hash,
        }

    @app.post("/generate")
    def generate(req: GenerateRequest):
        b = bundle()
        cfg = b.cfg
        per_level = _validate_centers(req.centers, cfg.heatmap_counts)
        pyramid = hmp.pyramid_from_centers(
            per_level, cfg.base_res, cfg.heatmap_var0, cfg.heatmap_counts
        )
        rng = np.random.default_rng(req.latent_seed)
        z = rng.standard_normal(cfg.latent_dim)
        with app.state.generate_lock:
            img = nets.generate(b.G, z, pyramid).numpy()
            heatmaps = [
                _heatmap_png_b64(np.clip(hmp.level_sum(lvl), 0, 1), cfg.base_res)
                for lvl in pyramid.levels
            ]
            attn = None
            if req.include_overlays:
                attn = []
                for lvl in cfg.align_levels:
                    amap = attention.gradcam(b.D, img, attention.TAP_FOR_LEVEL[lvl])
                    overlay = attention.attention_overlay(img, amap.values)
                    buf = io.BytesIO()
                    overlay.save(buf, format="PNG")
                    attn.append(base64.b64encode(buf.getvalue()).decode("ascii"))
        body = {
            "image": _png_b64(img),
            "heatmaps": heatmaps,
            "checkpoint_hash": b.checkpoint_hash,
        }
        if attn is not None:
            body["attn"] = attn
        return body

    @app.post("/reset")
    def reset():
        b = bundle()
        cfg = b.cfg
        seed = int(np.random.SeedSequence().entropy % (2**31))
        pyramid = hmp.sample_pyramid(
            cfg.base_res, cfg.heatmap_var0,
            rng=np.random.default_rng(np.random.SeedSequence().entropy),
            counts=cfg.heatmap_counts,
        )
        return {"seed": seed, "centers": centers_payload(pyramid)}

    return app


def run_server(checkpoint_path, host="127.0.0.1", port=8321):
    import uvicorn

    app = create_app(checkpoint_path)
    uvicorn.run(app, host=host, port=port, log_level="warning")


def main(argv=None):
    import argparse

    p = argparse.ArgumentParser(description="sawgan editing service")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8321)
    args = p.parse_args(argv)
    run_server(args.checkpoint, args.host, args.port)


if __name__ == "__main__":
    main()
