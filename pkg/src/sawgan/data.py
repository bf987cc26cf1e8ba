"""Datasets: the synthetic blob set and image-folder ingestion.

The blob dataset renders one Gaussian intensity bump per image at a uniform
random position inside a margin box.  Because the only thing that varies is
the bump position, spatial-awareness claims become directly measurable: the
centroid of a generated image should track the requested heatmap center.

Folder ingestion center-crops to square, resizes, and normalizes to [-1, 1];
unreadable files are skipped and counted.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np


@dataclass
class BlobSpec:
    res: int = 32
    blob_std: float = 3.0  # pixels
    margin: int = 8  # centers drawn uniformly in [margin, res - margin)
    intensity: float = 1.0
    noise_std: float = 0.05
    # per-sample appearance jitter (uniform around the base values); keeps
    # the bump symmetric, so centroid recovery is unaffected
    std_jitter: float = 0.0
    intensity_jitter: float = 0.0

    def __post_init__(self):
        if not 0 < self.margin < self.res / 2:
            raise ValueError("margin must be in (0, res/2)")
        if self.blob_std <= 0:
            raise ValueError("blob_std must be > 0")
        if self.std_jitter < 0 or self.std_jitter >= self.blob_std:
            if self.std_jitter != 0:
                raise ValueError("std_jitter must be in [0, blob_std)")
        if not 0 <= self.intensity_jitter <= self.intensity:
            raise ValueError("intensity_jitter must be in [0, intensity]")


def render_blob(
    spec: BlobSpec,
    center_px,
    rng: np.random.Generator | None = None,
    blob_std: float | None = None,
    intensity: float | None = None,
) -> np.ndarray:
    """Render one [1, res, res] image in [-1, 1] with a bump at center_px
    (y, x).  Centers outside the margin box are an error."""
    cy, cx = float(center_px[0]), float(center_px[1])
    lo, hi = spec.margin, spec.res - spec.margin
    if not (lo <= cy < hi and lo <= cx < hi):
        raise ValueError(f"center {center_px} outside margin box [{lo}, {hi})")
    std = spec.blob_std if blob_std is None else blob_std
    peak = spec.intensity if intensity is None else intensity
    idx = np.arange(spec.res, dtype=np.float64)
    d2 = (idx[:, None] - cy) ** 2 + (idx[None, :] - cx) ** 2
    bump = np.exp(-d2 / (2.0 * std**2))
    img = -1.0 + 2.0 * peak * bump
    if spec.noise_std > 0 and rng is not None:
        img = img + rng.normal(0.0, spec.noise_std, size=img.shape)
    return np.clip(img, -1.0, 1.0)[None].astype(np.float32)


def image_centroid(img: np.ndarray) -> tuple[float, float]:
    """(y, x) center of mass of the nonnegative intensity (img + 1)."""
    mass = np.clip(np.asarray(img, dtype=np.float64).mean(axis=0) + 1.0, 0.0, None)
    total = mass.sum()
    if total == 0:
        return (img.shape[-2] - 1) / 2.0, (img.shape[-1] - 1) / 2.0
    idx_y = np.arange(mass.shape[0])
    idx_x = np.arange(mass.shape[1])
    return float((mass.sum(axis=1) * idx_y).sum() / total), float((mass.sum(axis=0) * idx_x).sum() / total)


class BlobDataset:
    """Infinite generative dataset; every batch is freshly rendered."""

    def __init__(self, spec: BlobSpec | None = None):
        self.spec = spec or BlobSpec()
        self.out_ch = 1
        self.res = self.spec.res

    def sample_centers(self, n: int, rng: np.random.Generator) -> np.ndarray:
        lo, hi = self.spec.margin, self.spec.res - self.spec.margin
        return rng.uniform(lo, hi, size=(n, 2))

    def sample_batch(self, n: int, rng: np.random.Generator) -> np.ndarray:
        centers = self.sample_centers(n, rng)
        s = self.spec
        out = []
        for c in centers:
            std = s.blob_std + (rng.uniform(-s.std_jitter, s.std_jitter) if s.std_jitter else 0.0)
            peak = s.intensity - (rng.uniform(0.0, s.intensity_jitter) if s.intensity_jitter else 0.0)
            out.append(render_blob(s, c, rng, blob_std=std, intensity=peak))
        return np.stack(out)


class ImageFolderDataset:
    """Eagerly loaded folder of PNG/JPEG images.

    Files are read in sorted-name order; undecodable files are skipped with a
    warning and counted in `skipped`.  With flip=True every image is followed
    at index N + i by its horizontal mirror.
    """

    EXTENSIONS = {".png", ".jpg", ".jpeg"}

    def __init__(self, path, res: int, flip: bool = False):
        from PIL import Image

        self.res = res
        self.out_ch = 3
        self.skipped = 0
        images = []
        files = sorted(
            p for p in Path(path).iterdir() if p.suffix.lower() in self.EXTENSIONS
        )
        if not files:
            raise ValueError(f"no images under {path}")
        for f in files:
            try:
                with Image.open(f) as im:
                    im = im.convert("RGB")
                    w, h = im.size
                    side = min(w, h)
                    im = im.crop((
                        (w - side) // 2, (h - side) // 2,
                        (w - side) // 2 + side, (h - side) // 2 + side,
                    ))
                    im = im.resize((res, res), Image.BILINEAR)
                arr = np.asarray(im, dtype=np.float32).transpose(2, 0, 1)
                images.append(arr / 127.5 - 1.0)
            except Exception as exc:  # undecodable file
                self.skipped += 1
                warnings.warn(f"skipping unreadable image {f}: {exc}")
        if not images:
            raise ValueError(f"no decodable images under {path}")
        if flip:
            images = images + [img[:, :, ::-1].copy() for img in images]
        self.images = np.stack(images)

    def __len__(self):
        return len(self.images)

    def sample_batch(self, n: int, rng: np.random.Generator) -> np.ndarray:
        idx = rng.integers(0, len(self.images), size=n)
        return self.images[idx]

    def iter_epoch(self, batch: int, rng: np.random.Generator):
        """Deterministic shuffled epoch under a fixed rng state."""
        order = rng.permutation(len(self.images))
        for i in range(0, len(order) - batch + 1, batch):
            yield self.images[order[i:i + batch]]


def make_dataset(spec: str, res: int, flip: bool = False, blob_spec: BlobSpec | None = None):
    """'blobs' or a directory path."""
    if spec == "blobs":
        return BlobDataset(blob_spec or BlobSpec(res=res))
    return ImageFolderDataset(spec, res, flip)
