"""Spatial encoding layers.

These inject a stack of heatmap channels into a generator feature map.  The
normalization variant standardizes the feature map per sample and channel,
then denormalizes it with point-wise scale/shift fields predicted from the
heatmap; the concatenation variant merges heatmap features through the
channel dimension instead.  Both wrap the result in a 0.1-scaled residual
whose final convolution starts at zero, so a freshly initialized layer is an
exact identity.  The flatten variant is an ablation that bypasses spatial
structure entirely by appending vectorized heatmap sums to the latent code.
"""

from __future__ import annotations

import torch
import torch.nn as nn
import torch.nn.functional as F

LEAKY_SLOPE = 0.2
INSTANCE_NORM_EPS = 1e-5
RESIDUAL_SCALE = 0.1
HIDDEN_DIM = 64
CONCAT_MID_DIM = 256


class ShapeMismatchError(ValueError):
    """Feature map does not match the resolution this layer was declared for."""


def instance_norm(x: torch.Tensor, eps: float = INSTANCE_NORM_EPS) -> torch.Tensor:
    """Per-sample per-channel standardization over spatial positions.

    Uses the biased variance; eps keeps constant channels finite.
    """
    mean = x.mean(dim=(2, 3), keepdim=True)
    var = x.var(dim=(2, 3), unbiased=False, keepdim=True)
    return (x - mean) / torch.sqrt(var + eps)


def _resize_heatmap(hm: torch.Tensor, size) -> torch.Tensor:
    if hm.shape[-2:] == tuple(size):
        return hm
    return F.interpolate(hm, size=size, mode="bilinear", align_corners=True)


class SELNorm(nn.Module):
    """Normalization/denormalization encoding with a scaled residual.

    forward(x, hm):
        normalized = instance_norm(x)
        feat  = lrelu(extract(hm resized to x))
        dx    = (1 + sigma_head(feat)) * normalized + mu_head(feat)
        out   = x + 0.1 * post(lrelu(dx))
    sigma/mu are single-channel, i.e. point-wise over space.
    """

    variant = "norm"

    def __init__(self, feat_ch: int, hm_ch: int, expected_res: int | None = None,
                 padding_mode: str = "zeros"):
        super().__init__()
        self.expected_res = expected_res
        self.extract = nn.Conv2d(hm_ch, HIDDEN_DIM, 3, padding=1, padding_mode=padding_mode)
        self.sigma_head = nn.Conv2d(HIDDEN_DIM, 1, 3, padding=1, padding_mode=padding_mode)
        self.mu_head = nn.Conv2d(HIDDEN_DIM, 1, 3, padding=1, padding_mode=padding_mode)
        self.post = nn.Conv2d(feat_ch, feat_ch, 3, padding=1, padding_mode=padding_mode)

    def reset_residual_to_identity(self):
        nn.init.zeros_(self.post.weight)
        nn.init.zeros_(self.post.bias)

    def modulation_fields(self, hm: torch.Tensor, size) -> tuple[torch.Tensor, torch.Tensor]:
        feat = F.leaky_relu(self.extract(_resize_heatmap(hm, size)), LEAKY_SLOPE)
        return self.sigma_head(feat), self.mu_head(feat)

    def forward(self, x: torch.Tensor, hm: torch.Tensor) -> torch.Tensor:
        if self.expected_res is not None and x.shape[-2:] != (self.expected_res, self.expected_res):
            raise ShapeMismatchError(
                f"feature map is {tuple(x.shape[-2:])}, layer declared for "
                f"{self.expected_res}x{self.expected_res}"
            )
        sigma, mu = self.modulation_fields(hm, x.shape[-2:])
        dx = (1 + sigma) * instance_norm(x) + mu
        return x + RESIDUAL_SCALE * self.post(F.leaky_relu(dx, LEAKY_SLOPE))


class SELConcat(nn.Module):
    """Concatenation encoding with the same outer residual as SELNorm.

    Heatmap features (hm_ch -> 64) are concatenated with the feature map and
    merged back through two convolutions (C+64 -> 256 -> C).
    """

    variant = "concat"

    def __init__(self, feat_ch: int, hm_ch: int, expected_res: int | None = None,
                 padding_mode: str = "zeros"):
        super().__init__()
        self.expected_res = expected_res
        self.extract = nn.Conv2d(hm_ch, HIDDEN_DIM, 3, padding=1, padding_mode=padding_mode)
        self.merge_a = nn.Conv2d(feat_ch + HIDDEN_DIM, CONCAT_MID_DIM, 3, padding=1,
                                 padding_mode=padding_mode)
        self.merge_b = nn.Conv2d(CONCAT_MID_DIM, feat_ch, 3, padding=1,
                                 padding_mode=padding_mode)
        self.post = nn.Conv2d(feat_ch, feat_ch, 3, padding=1, padding_mode=padding_mode)

    def reset_residual_to_identity(self):
        nn.init.zeros_(self.post.weight)
        nn.init.zeros_(self.post.bias)

    def forward(self, x: torch.Tensor, hm: torch.Tensor) -> torch.Tensor:
        if self.expected_res is not None and x.shape[-2:] != (self.expected_res, self.expected_res):
            raise ShapeMismatchError(
                f"feature map is {tuple(x.shape[-2:])}, layer declared for "
                f"{self.expected_res}x{self.expected_res}"
            )
        feat = F.leaky_relu(self.extract(_resize_heatmap(hm, x.shape[-2:])), LEAKY_SLOPE)
        h = torch.cat([x, feat], dim=1)
        dx = self.merge_b(F.leaky_relu(self.merge_a(h), LEAKY_SLOPE))
        return x + RESIDUAL_SCALE * self.post(F.leaky_relu(dx, LEAKY_SLOPE))


def flatten_condition(z: torch.Tensor, level_sums) -> torch.Tensor:
    """Concatenate [z ; vec(sum_0) ; vec(sum_1) ; ...] for the flatten ablation.

    z is [B, L]; each level sum is [B, r_l, r_l].
    """
    parts = [z] + [s.reshape(s.shape[0], -1) for s in level_sums]
    return torch.cat(parts, dim=1)


def unflatten_condition(v: torch.Tensor, latent_dim: int, resolutions) -> tuple[torch.Tensor, list[torch.Tensor]]:
    """Inverse of flatten_condition; mainly for round-trip checks."""
    z = v[:, :latent_dim]
    sums, at = [], latent_dim
    for r in resolutions:
        sums.append(v[:, at:at + r * r].reshape(-1, r, r))
        at += r * r
    return z, sums
