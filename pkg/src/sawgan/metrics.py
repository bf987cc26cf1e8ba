"""Equilibrium and distribution metrics.

The disequilibrium indicator resamples fixed score pools: each repeat draws
64 scores per side without replacement and records min(real) - max(fake);
the report carries the mean over 200 repeats.  Scores are always the raw
pre-sigmoid outputs of the discriminator.

Distribution distance is the Frechet (Wasserstein-2) distance between
Gaussian fits of feature embeddings.  At desk scale the embedding comes from
a frozen, seeded, untrained convolutional extractor, so absolute values are
only comparable within this repository.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

DI_REPEATS = 200
DI_PER_SIDE = 64
COV_REG = 1e-6
EXTRACTOR_SEED = 2716
EXTRACTOR_DIM = 64


class PoolTooSmallError(ValueError):
    pass


@dataclass
class DIReport:
    repeats: int
    per_side: int
    min_real: list[float]
    max_fake: list[float]
    di_mean: float
    seed: int | None

    def to_dict(self) -> dict:
        return {
            "repeats": self.repeats,
            "per_side": self.per_side,
            "min_real": self.min_real,
            "max_fake": self.max_fake,
            "di_mean": self.di_mean,
            "seed": self.seed,
        }


@dataclass
class FeatureStats:
    mean: np.ndarray
    cov: np.ndarray
    count: int
    regularized: bool = False


def disequilibrium_indicator(
    score_real_pool,
    score_fake_pool,
    repeats: int = DI_REPEATS,
    per_side: int = DI_PER_SIDE,
    rng: np.random.Generator | None = None,
    seed: int | None = None,
) -> DIReport:
    """Resampled min(real) - max(fake) gap.

    Draw protocol (part of the reproducibility contract): per repeat, first
    `rng.choice(len(real), per_side, replace=False)` on the real pool, then
    the same on the fake pool.
    """
    real = np.asarray(score_real_pool, dtype=np.float64)
    fake = np.asarray(score_fake_pool, dtype=np.float64)
    if len(real) < per_side or len(fake) < per_side:
        raise PoolTooSmallError(
            f"pools must hold at least per_side={per_side} scores, "
            f"got {len(real)} real / {len(fake)} fake"
        )
    if rng is None:
        rng = np.random.default_rng(seed)
    mins, maxs = [], []
    for _ in range(repeats):
        idx_r = rng.choice(len(real), per_side, replace=False)
        idx_f = rng.choice(len(fake), per_side, replace=False)
        mins.append(float(real[idx_r].min()))
        maxs.append(float(fake[idx_f].max()))
    di = float(np.mean(np.array(mins) - np.array(maxs)))
    return DIReport(repeats, per_side, mins, maxs, di, seed)


def _sqrtm_psd(m: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root via eigendecomposition; small negative
    eigenvalues from roundoff are clipped at zero."""
    w, v = np.linalg.eigh((m + m.T) / 2.0)
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.T


def frechet_distance(a: FeatureStats, b: FeatureStats) -> float:
    """||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}).

    The cross term uses Tr((S_b^{1/2} S_a S_b^{1/2})^{1/2}), which equals
    Tr((S_a S_b)^{1/2}) and keeps the eigendecomposition on a symmetric
    matrix.
    """
    if a.mean.shape != b.mean.shape or a.cov.shape != b.cov.shape:
        raise ValueError("feature stats dimensions do not match")
    if not (np.isfinite(a.mean).all() and np.isfinite(b.mean).all()
            and np.isfinite(a.cov).all() and np.isfinite(b.cov).all()):
        raise ValueError("feature stats contain non-finite values")
    sb = _sqrtm_psd(b.cov)
    cross = _sqrtm_psd(sb @ a.cov @ sb)
    val = float(
        np.sum((a.mean - b.mean) ** 2)
        + np.trace(a.cov) + np.trace(b.cov) - 2.0 * np.trace(cross)
    )
    return max(val, 0.0)


def compute_feature_stats(features: np.ndarray) -> FeatureStats:
    """Gaussian fit of a feature matrix [N, dim]; covariance is regularized
    (and flagged) when there are fewer samples than dim + 1."""
    features = np.asarray(features, dtype=np.float64)
    n, dim = features.shape
    mean = features.mean(axis=0)
    if n < 2:
        cov = np.eye(dim) * COV_REG
        return FeatureStats(mean, cov, n, True)
    cov = np.cov(features, rowvar=False)
    regularized = n < dim + 1
    if regularized:
        cov = cov + COV_REG * np.eye(dim)
    return FeatureStats(mean, np.atleast_2d(cov), n, regularized)


class FeatureExtractor(nn.Module):
    """Frozen random-weight conv embedding for desk-scale distribution
    distances.  Weights are generated from a fixed seed, never trained."""

    def __init__(self, in_ch: int = 1, seed: int = EXTRACTOR_SEED):
        super().__init__()
        self.seed = seed
        self.conv1 = nn.Conv2d(in_ch, 16, 3, padding=1)
        self.conv2 = nn.Conv2d(16, 32, 3, padding=1)
        self.conv3 = nn.Conv2d(32, EXTRACTOR_DIM, 3, padding=1)
        rng = np.random.default_rng(seed)
        with torch.no_grad():
            for m in (self.conv1, self.conv2, self.conv3):
                fan_in = m.weight.shape[1] * 9
                m.weight.copy_(torch.from_numpy(
                    rng.normal(0, 1 / np.sqrt(fan_in), size=tuple(m.weight.shape))
                ).float())
                m.bias.zero_()
        for p in self.parameters():
            p.requires_grad_(False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = F.leaky_relu(self.conv1(x), 0.2)
        h = F.avg_pool2d(h, 2)
        h = F.leaky_relu(self.conv2(h), 0.2)
        h = F.avg_pool2d(h, 2)
        h = F.leaky_relu(self.conv3(h), 0.2)
        return h.mean(dim=(2, 3))


def extract_features(images, extractor: FeatureExtractor, batch: int = 256) -> np.ndarray:
    if isinstance(images, np.ndarray):
        images = torch.from_numpy(images).float()
    feats = []
    with torch.no_grad():
        for i in range(0, images.shape[0], batch):
            feats.append(extractor(images[i:i + batch]).numpy())
    return np.concatenate(feats, axis=0)


def fid_between_sets(images_a, images_b, extractor: FeatureExtractor) -> float:
    """Frechet distance between the Gaussian feature fits of two image sets."""
    stats_a = compute_feature_stats(extract_features(images_a, extractor))
    stats_b = compute_feature_stats(extract_features(images_b, extractor))
    return frechet_distance(stats_a, stats_b)


# ------------------------------------------------------------- metrics log


class MetricsLog:
    """Append-only line-delimited JSON records."""

    def __init__(self, path):
        self.path = path

    def append(self, record: dict):
        with open(self.path, "a") as f:
            f.write(json.dumps(record, sort_keys=True) + "\n")

    @staticmethod
    def read(path) -> list[dict]:
        records = []
        with open(path) as f:
            for line in f:
                line = line.strip()
                if line:
                    records.append(json.loads(line))
        return records


def score_curves(records: list[dict]) -> dict[str, list]:
    """Per-evaluation series of the real-score minimum and fake-score
    maximum, for plotting."""
    steps, min_real, max_fake = [], [], []
    for rec in records:
        if "min_real" in rec and "max_fake" in rec:
            steps.append(rec["step"])
            min_real.append(rec["min_real"])
            max_fake.append(rec["max_fake"])
    return {"step": steps, "min_real": min_real, "max_fake": max_fake}


def plot_score_curves(records: list[dict], out_path):
    """Write the real-min / fake-max score curves as a PNG or SVG."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    series = score_curves(records)
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.plot(series["step"], series["min_real"], label="min real score")
    ax.plot(series["step"], series["max_fake"], label="max fake score")
    ax.set_xlabel("step")
    ax.set_ylabel("discriminator score")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)
    return out_path
