"""Hierarchical Gaussian heatmap sampling.

A heatmap pyramid carries three levels of unnormalized Gaussian bumps on
small square grids (4x4, 8x8, 16x16).  Level 0 holds a single bump whose
center is drawn around the middle of the frame; levels 1 and 2 hold two and
four bumps whose centers are pixel-space offsets from the level-0 center, so
moving the level-0 center drags the whole pyramid along.  Bump spread shrinks
by 1/sqrt(2) per level.

Coordinate conventions:
  * pixel frame: v in [0, res) on each axis, (y, x) order everywhere.
  * normalized frame: cell i of an r-cell axis sits at 2*i/(r-1) - 1, so the
    frame spans [-1, 1].  Centers are stored normalized, which makes maps
    rendered at different grid resolutions geometrically aligned.

All randomness flows through an injected numpy Generator; there is no global
RNG.  Functions here are pure given the generator, so concurrent use is safe
as long as each thread owns its generator.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

LEVEL_RESOLUTIONS = (4, 8, 16)
DEFAULT_CENTER_COUNTS = (1, 2, 4)
DEFAULT_VAR0 = 0.5
MAX_LEVEL0_TRIES = 100


class HeatmapSamplingError(RuntimeError):
    """Level-0 center sampling kept landing outside the frame."""


@dataclass(frozen=True)
class Coord2D:
    """A 2-D point, (y, x) order, tagged with its coordinate frame."""

    y: float
    x: float
    frame: str = "norm"  # "norm" or "pixel"


@dataclass
class HeatmapLevel:
    level: int
    resolution: int
    centers: list[Coord2D]  # normalized
    variance: float  # normalized units squared
    maps: np.ndarray  # [n, resolution, resolution], one sub-map per center


@dataclass
class HeatmapPyramid:
    levels: list[HeatmapLevel]
    base_resolution: int
    var0: float
    seed: int | None = None

    @property
    def center0(self) -> Coord2D:
        return self.levels[0].centers[0]


def normalize_pixel(v: float | np.ndarray, res: int):
    """Map pixel coordinate(s) in [0, res) to normalized [-1, 1]."""
    return 2.0 * v / (res - 1) - 1.0


def pixel_from_normalized(v: float | np.ndarray, res: int):
    return (v + 1.0) * (res - 1) / 2.0


def grid_coords(res: int) -> np.ndarray:
    """Normalized coordinates of the res grid cells along one axis."""
    return normalize_pixel(np.arange(res, dtype=np.float64), res)


def sample_level0_center(res: int, rng: np.random.Generator) -> Coord2D | None:
    """Draw a level-0 center, or None when the draw lands outside the frame.

    Per-axis pixel draws come from N(res/2, (res/3)^2), y first then x.  A
    draw is accepted only when both coordinates fall inside [0, res); the
    caller resamples on rejection.  Accepted centers are returned normalized.
    """
    if res < 4:
        raise ValueError(f"res must be >= 4, got {res}")
    y = rng.normal(res / 2.0, res / 3.0)
    x = rng.normal(res / 2.0, res / 3.0)
    if not (0.0 <= y < res and 0.0 <= x < res):
        return None
    return Coord2D(normalize_pixel(y, res), normalize_pixel(x, res))


def _center_yx(center) -> tuple[float, float]:
    if isinstance(center, Coord2D):
        if center.frame != "norm":
            raise ValueError("gaussian_bump expects a normalized center")
        return center.y, center.x
    y, x = center
    return float(y), float(x)


def gaussian_bump(res: int, center, variance: float) -> np.ndarray:
    """Render one unnormalized Gaussian bump on an res x res grid.

    Cell value is exp(-((gy-cy)^2 + (gx-cx)^2) / variance) with grid cells at
    normalized coordinates; the constant in front is dropped so values stay in
    (0, 1] and the cell nearest the center attains the maximum.
    """
    if variance <= 0:
        raise ValueError(f"variance must be > 0, got {variance}")
    cy, cx = _center_yx(center)
    g = grid_coords(res)
    d2 = (g[:, None] - cy) ** 2 + (g[None, :] - cx) ** 2
    return np.exp(-d2 / variance)


def level_variances(var0: float, n_levels: int = 3) -> list[float]:
    """var0 shrunk by 1/sqrt(2) per level (successive division, so the
    var_{l+1} = var_l / sqrt(2) relation is exact in floating point)."""
    out = [float(var0)]
    for _ in range(n_levels - 1):
        out.append(out[-1] / math.sqrt(2.0))
    return out


def sample_child_offsets(
    rng: np.random.Generator,
    base_res: int,
    counts=DEFAULT_CENTER_COUNTS,
) -> dict[int, np.ndarray]:
    """Pixel-space (dy, dx) offsets for the child levels, std base_res/6.

    Draw order is level 1 then level 2, each as one (n, 2) block; this order
    is part of the determinism contract.
    """
    std = base_res / 6.0
    return {
        lvl: rng.normal(0.0, std, size=(counts[lvl], 2))
        for lvl in range(1, len(counts))
    }


def pyramid_from_parts(
    center0_px: tuple[float, float],
    child_offsets_px: dict[int, np.ndarray],
    base_res: int,
    var0: float = DEFAULT_VAR0,
    counts=DEFAULT_CENTER_COUNTS,
    seed: int | None = None,
) -> HeatmapPyramid:
    """Assemble a pyramid from a pixel-frame level-0 center and pixel-frame
    child offsets.  Child centers are center0 + offset, not rejection-tested.
    """
    variances = level_variances(var0, len(counts))
    y0, x0 = center0_px
    levels = []
    for lvl, (res_l, n) in enumerate(zip(LEVEL_RESOLUTIONS, counts)):
        if lvl == 0:
            centers_px = np.array([[y0, x0]], dtype=np.float64)
        else:
            centers_px = np.asarray(child_offsets_px[lvl], dtype=np.float64) + np.array([y0, x0])
        if centers_px.shape != (n, 2):
            raise ValueError(f"level {lvl} expects {n} centers, got {centers_px.shape}")
        centers = [
            Coord2D(normalize_pixel(cy, base_res), normalize_pixel(cx, base_res))
            for cy, cx in centers_px
        ]
        maps = np.stack([gaussian_bump(res_l, c, variances[lvl]) for c in centers])
        levels.append(HeatmapLevel(lvl, res_l, centers, variances[lvl], maps))
    return HeatmapPyramid(levels, base_res, float(var0), seed)


def sample_pyramid(
    base_res: int,
    var0: float = DEFAULT_VAR0,
    rng: np.random.Generator | None = None,
    seed: int | None = None,
    counts=DEFAULT_CENTER_COUNTS,
) -> HeatmapPyramid:
    """Sample a full hierarchical pyramid.

    The level-0 center is resampled on rejection (bounded at
    MAX_LEVEL0_TRIES, then HeatmapSamplingError); child centers follow the
    accepted level-0 center and are never rejection-tested.
    """
    if rng is None:
        rng = np.random.default_rng(seed)
    for _ in range(MAX_LEVEL0_TRIES):
        c0 = sample_level0_center(base_res, rng)
        if c0 is not None:
            break
    else:
        raise HeatmapSamplingError(
            f"no in-frame level-0 center after {MAX_LEVEL0_TRIES} tries"
        )
    c0_px = (pixel_from_normalized(c0.y, base_res), pixel_from_normalized(c0.x, base_res))
    offsets = sample_child_offsets(rng, base_res, counts)
    return pyramid_from_parts(c0_px, offsets, base_res, var0, counts, seed)


def sample_pyramid_nonhierarchical(
    base_res: int,
    var0: float = DEFAULT_VAR0,
    rng: np.random.Generator | None = None,
    seed: int | None = None,
    counts=DEFAULT_CENTER_COUNTS,
) -> HeatmapPyramid:
    """Ablation arm: levels do not share a common anchor.

    Each level draws its own in-frame anchor the way level 0 does, and child
    bumps within a level offset from that level's anchor, so there is no
    cross-level dependence.
    """
    if rng is None:
        rng = np.random.default_rng(seed)
    variances = level_variances(var0, len(counts))
    levels = []
    for lvl, (res_l, n) in enumerate(zip(LEVEL_RESOLUTIONS, counts)):
        for _ in range(MAX_LEVEL0_TRIES):
            anchor = sample_level0_center(base_res, rng)
            if anchor is not None:
                break
        else:
            raise HeatmapSamplingError(
                f"no in-frame anchor for level {lvl} after {MAX_LEVEL0_TRIES} tries"
            )
        ay = pixel_from_normalized(anchor.y, base_res)
        ax = pixel_from_normalized(anchor.x, base_res)
        if n == 1:
            centers_px = np.array([[ay, ax]])
        else:
            centers_px = rng.normal(0.0, base_res / 6.0, size=(n, 2)) + np.array([ay, ax])
        centers = [
            Coord2D(normalize_pixel(cy, base_res), normalize_pixel(cx, base_res))
            for cy, cx in centers_px
        ]
        maps = np.stack([gaussian_bump(res_l, c, variances[lvl]) for c in centers])
        levels.append(HeatmapLevel(lvl, res_l, centers, variances[lvl], maps))
    return HeatmapPyramid(levels, base_res, float(var0), seed)


def pyramid_from_centers(
    centers_per_level,
    base_res: int,
    var0: float = DEFAULT_VAR0,
    counts=DEFAULT_CENTER_COUNTS,
    seed: int | None = None,
) -> HeatmapPyramid:
    """Build a pyramid from explicit normalized (y, x) centers per level.

    No resampling happens; this is the path the editing service uses when a
    client supplies dragged centers.
    """
    if len(centers_per_level) != len(counts):
        raise ValueError(f"expected {len(counts)} levels, got {len(centers_per_level)}")
    variances = level_variances(var0, len(counts))
    levels = []
    for lvl, (res_l, n) in enumerate(zip(LEVEL_RESOLUTIONS, counts)):
        raw = centers_per_level[lvl]
        if len(raw) != n:
            raise ValueError(f"level {lvl} expects {n} centers, got {len(raw)}")
        centers = [Coord2D(float(c[0]), float(c[1])) if not isinstance(c, Coord2D) else c for c in raw]
        maps = np.stack([gaussian_bump(res_l, c, variances[lvl]) for c in centers])
        levels.append(HeatmapLevel(lvl, res_l, centers, variances[lvl], maps))
    return HeatmapPyramid(levels, base_res, float(var0), seed)


def level_sum(level: HeatmapLevel) -> np.ndarray:
    """Elementwise sum of a level's sub-maps (can exceed 1 where bumps
    overlap; callers clamp to [0, 1] for alignment targets)."""
    if level.maps.shape[0] < 1:
        raise ValueError("level has no sub-maps")
    return level.maps.sum(axis=0)


def pyramid_to_record(p: HeatmapPyramid) -> dict:
    """Serializable record {seed, base_res, var0, centers}; enough to
    re-render maps exactly."""
    return {
        "seed": p.seed,
        "base_res": p.base_resolution,
        "var0": p.var0,
        "centers": [[[c.y, c.x] for c in lvl.centers] for lvl in p.levels],
    }


def pyramid_from_record(rec: dict) -> HeatmapPyramid:
    counts = tuple(len(lvl) for lvl in rec["centers"])
    return pyramid_from_centers(
        rec["centers"], rec["base_res"], rec["var0"], counts, rec.get("seed")
    )


def pyramid_to_json(p: HeatmapPyramid) -> str:
    return json.dumps(pyramid_to_record(p), sort_keys=True)


def pyramid_from_json(text: str) -> HeatmapPyramid:
    return pyramid_from_record(json.loads(text))
