"""Adversarial losses, R1 penalty, and the attention-alignment regularizer.

The adversarial pair is the non-saturating logistic form on raw scores.  The
alignment term compares the discriminator's max-normalized attention map on a
generated image against the clamped heatmap level sum, as a per-sample mean
absolute difference averaged over levels, and hard-zeros samples whose value
falls strictly below the truncation threshold; at or above the threshold the
raw value (and its gradient) passes through unchanged.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from . import heatmap as hmp
from .attention import TAP_FOR_LEVEL, UnknownTapError, gradcam_batch, normalize_max1_t

DEFAULT_TAU = 0.25


@dataclass
class AlignConfig:
    tau: float = DEFAULT_TAU
    weight: float = 1.0
    levels: tuple = (0, 1, 2)
    heatmap_combine: str = "sum-clipped"
    attention_norm: str = "max1"
    # gradient direction for the attention maps: +1 follows realness
    # evidence, -1 fakeness evidence.  On content-sparse desk datasets only
    # the -1 direction reliably tracks generated content (at scale the two
    # are reported to coincide), so training defaults to -1 via TrainConfig
    # while analysis visualizations keep +1.
    attention_sign: float = 1.0

    def __post_init__(self):
        if self.tau < 0:
            raise ValueError("tau must be >= 0")
        if self.weight < 0:
            raise ValueError("weight must be >= 0")
        if not set(self.levels) <= {0, 1, 2}:
            raise ValueError(f"levels must be within {{0,1,2}}, got {self.levels}")
        if self.heatmap_combine != "sum-clipped":
            raise ValueError(f"unsupported heatmap_combine {self.heatmap_combine!r}")
        if self.attention_norm != "max1":
            raise ValueError(f"unsupported attention_norm {self.attention_norm!r}")
        if self.attention_sign not in (1.0, -1.0):
            raise ValueError("attention_sign must be +1 or -1")


def adv_losses(scores_real: torch.Tensor, scores_fake: torch.Tensor):
    """Non-saturating logistic pair: (loss_D, loss_G)."""
    loss_d = F.softplus(-scores_real).mean() + F.softplus(scores_fake).mean()
    loss_g = F.softplus(-scores_fake).mean()
    return loss_d, loss_g


def r1_penalty(D, x_real: torch.Tensor, gamma: float, create_graph: bool = True) -> torch.Tensor:
    """(gamma/2) * mean over the batch of the squared score gradient norm,
    evaluated at real samples."""
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    x = x_real.detach().requires_grad_(True)
    scores, _ = D(x)
    grads = torch.autograd.grad(scores.sum(), x, create_graph=create_graph)[0]
    return (gamma / 2.0) * grads.pow(2).sum(dim=tuple(range(1, grads.dim()))).mean()


def truncate_below(values: torch.Tensor, tau: float) -> torch.Tensor:
    """Hard-zero entries strictly below tau; at or above tau the raw value
    (and its gradient) passes through unchanged."""
    return torch.where(values < tau, torch.zeros_like(values), values)


def alignment_targets(pyramids, levels, device="cpu") -> dict[int, torch.Tensor]:
    """Per-level clamped heatmap sums [B, r, r] used as alignment targets."""
    out = {}
    for lvl in levels:
        sums = np.stack([
            np.clip(hmp.level_sum(p.levels[lvl]), 0.0, 1.0) for p in pyramids
        ]).astype(np.float32)
        out[lvl] = torch.from_numpy(sums).to(device)
    return out


def alignment_loss_from_targets(
    D,
    images: torch.Tensor,
    targets: dict[int, torch.Tensor],
    cfg: AlignConfig,
    create_graph: bool = True,
) -> torch.Tensor:
    """Truncated L1 alignment loss given precomputed target tensors.

    The gradient reaches the generator through `images`; the trainer freezes
    discriminator parameters around this call so they receive none.
    """
    if not create_graph and not images.requires_grad:
        images = images.detach().requires_grad_(True)
    scores, taps = D(images)
    acts = []
    for lvl in cfg.levels:
        name = TAP_FOR_LEVEL[lvl]
        if name not in taps:
            raise UnknownTapError(f"no discriminator tap {name!r} for level {lvl}")
        acts.append(taps[name])
    grads = torch.autograd.grad(
        cfg.attention_sign * scores.sum(), acts, create_graph=create_graph
    )

    per_level = []
    for lvl, act, grad in zip(cfg.levels, acts, grads):
        weights = grad.mean(dim=(2, 3), keepdim=True)
        cam = normalize_max1_t(F.relu((weights * act).sum(dim=1)))
        per_level.append((cam - targets[lvl]).abs().mean(dim=(1, 2)))
    per_sample = torch.stack(per_level, dim=1).mean(dim=1)
    loss = truncate_below(per_sample, cfg.tau).mean() * cfg.weight
    return loss if create_graph else loss.detach()


def alignment_loss(D, images, pyramids, cfg: AlignConfig, create_graph: bool = True) -> torch.Tensor:
    """Alignment loss against heatmap pyramids (one per batch sample)."""
    if isinstance(pyramids, hmp.HeatmapPyramid):
        pyramids = [pyramids]
    targets = alignment_targets(pyramids, cfg.levels, device=images.device)
    return alignment_loss_from_targets(D, images, targets, cfg, create_graph)
