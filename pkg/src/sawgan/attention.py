"""Attention extraction from discriminator tap activations.

Channel importance is the spatial average of the score gradient at a tap;
the attention map is the ReLU of the importance-weighted activation sum.
Gradients are taken toward maximizing the score (the direction of a "real"
decision); a hidden sign flag flips this for robustness probes.  The
computation never touches discriminator parameters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .nets import TAP_FOR_LEVEL, tap_name  # noqa: F401  (re-exported for callers)

EPS_MAX1 = 1e-8


class UnknownTapError(KeyError):
    pass


@dataclass
class AttentionMap:
    resolution: int
    values: np.ndarray  # [h, w], nonnegative
    source_tap: str
    normalization: str = "raw"  # "raw" or "max1"


def gradcam_batch(
    D,
    x: torch.Tensor,
    tap: str,
    create_graph: bool = False,
    sign: float = 1.0,
) -> torch.Tensor:
    """Attention maps [B, h, w] for a batch at one tap.

    With create_graph=True the result stays differentiable through the input
    images (the training path); otherwise the input is detached onto a fresh
    leaf first (the analysis path).
    """
    if not create_graph and not x.requires_grad:
        x = x.detach().requires_grad_(True)
    scores, taps = D(x)
    if tap not in taps:
        raise UnknownTapError(f"discriminator has no tap {tap!r}; taps: {sorted(taps)}")
    act = taps[tap]
    grads = torch.autograd.grad(sign * scores.sum(), act, create_graph=create_graph)[0]
    weights = grads.mean(dim=(2, 3), keepdim=True)
    cam = F.relu((weights * act).sum(dim=1))
    return cam if create_graph else cam.detach()


def gradcam(D, x, tap: str, sign: float = 1.0) -> AttentionMap:
    """Single-image attention map at one tap (analysis path, detached)."""
    if isinstance(x, np.ndarray):
        x = torch.from_numpy(x).float()
    if x.dim() == 3:
        x = x.unsqueeze(0)
    cam = gradcam_batch(D, x, tap, create_graph=False, sign=sign)[0]
    values = cam.cpu().numpy()
    return AttentionMap(values.shape[-1], values, tap, "raw")


def normalize_max1_values(values: np.ndarray) -> np.ndarray:
    return values / (values.max() + EPS_MAX1)


def normalize_max1(amap: AttentionMap) -> AttentionMap:
    """Scale so the peak is 1; an all-zero map stays zero."""
    return AttentionMap(
        amap.resolution, normalize_max1_values(amap.values), amap.source_tap, "max1"
    )


def normalize_max1_t(cam: torch.Tensor) -> torch.Tensor:
    """Per-sample max-1 normalization of a [B, h, w] tensor (differentiable)."""
    peak = cam.amax(dim=(1, 2), keepdim=True)
    return cam / (peak + EPS_MAX1)


def attention_overlay(image: np.ndarray, values: np.ndarray, alpha: float = 0.5):
    """Alpha-blend a heat-colored attention map over an image.

    image is [C, H, W] in [-1, 1]; the map is bilinearly upsampled to the
    image size.  Returns a PIL RGB image.
    """
    from PIL import Image

    h, w = image.shape[-2:]
    vals = torch.from_numpy(np.asarray(values, dtype=np.float32))[None, None]
    up = F.interpolate(vals, size=(h, w), mode="bilinear", align_corners=True)[0, 0].numpy()
    up = normalize_max1_values(np.clip(up, 0, None))

    gray = np.clip((image.mean(axis=0) + 1) / 2, 0, 1)
    base = np.stack([gray] * 3, axis=-1)
    # simple black->red->yellow heat ramp
    heat = np.stack([np.clip(2 * up, 0, 1), np.clip(2 * up - 1, 0, 1), np.zeros_like(up)], axis=-1)
    blended = (1 - alpha) * base + alpha * heat
    return Image.fromarray((blended * 255).astype(np.uint8), mode="RGB")
