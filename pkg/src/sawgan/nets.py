"""Small convolutional generator/discriminator backbones.

The generator starts from a dense projection to a 4x4 feature map and
upsamples by 2x per block to the output resolution, injecting heatmap
information through a spatial encoding layer at the 4/8/16 feature maps.
The discriminator mirrors this downward and exposes named tap activations
(the per-resolution features that attention extraction reads), recorded
after the convolution at each resolution and before downsampling.

Backbones are deliberately plain (conv + leaky-ReLU, tanh output, no style
modulation or cross-sample ops) so the conditioning mechanisms stay the only
moving part.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import heatmap as hmp
from . import sel

LEAKY_SLOPE = 0.2
SEL_LEVELS = (0, 1, 2)
LEVEL_RES = hmp.LEVEL_RESOLUTIONS  # (4, 8, 16)


def tap_name(res: int) -> str:
    return f"res{res}"


TAP_FOR_LEVEL = {lvl: tap_name(r) for lvl, r in zip(SEL_LEVELS, LEVEL_RES)}


class LevelMismatchError(ValueError):
    """Supplied heatmaps do not match the generator's encoding levels."""


def default_gen_channels(base_res: int) -> dict[int, int]:
    """Channel width per feature resolution, halving from 64 with a floor."""
    ch, out, r = 64, {}, 4
    while r <= base_res:
        out[r] = max(ch, 16)
        ch //= 2
        r *= 2
    return out


def default_disc_channels(base_res: int) -> dict[int, int]:
    ch, out, r = 16, {}, base_res
    while r >= 4:
        out[r] = min(ch, 64)
        ch *= 2
        r //= 2
    return out


@dataclass
class GeneratorSpec:
    base_res: int = 32
    latent_dim: int = 64
    out_ch: int = 1
    sel_variant: str = "norm"  # norm | concat | flatten | none
    sel_levels: tuple = SEL_LEVELS
    heatmap_counts: tuple = hmp.DEFAULT_CENTER_COUNTS
    channels: dict[int, int] | None = None
    # circular conv padding keeps the synthesis path translation-symmetric,
    # so per-sample position can only enter through the spatial inputs (the
    # learned constant still anchors an absolute frame)
    padding_mode: str = "circular"
    # the latent modulates channels only from this resolution up: appearance
    # comes from z, coarse layout from the spatial inputs -- the information
    # asymmetry under test, enforced structurally at desk scale
    latent_mod_start: int = 32

    def __post_init__(self):
        if self.sel_variant not in ("norm", "concat", "flatten", "none"):
            raise ValueError(f"unknown sel_variant {self.sel_variant!r}")
        if self.base_res < 8 or self.base_res & (self.base_res - 1):
            raise ValueError("base_res must be a power of two >= 8")
        if self.channels is None:
            self.channels = default_gen_channels(self.base_res)


@dataclass
class DiscriminatorSpec:
    base_res: int = 32
    in_ch: int = 1
    taps: tuple = LEVEL_RES  # resolutions whose activations are recorded
    channels: dict[int, int] | None = None

    def __post_init__(self):
        if self.channels is None:
            self.channels = default_disc_channels(self.base_res)


class Generator(nn.Module):
    """Constant-input conv generator with channel-wise latent modulation.

    Spatial layout grows out of a learned constant 4x4 map (and the heatmaps
    injected into it); the latent acts per channel as a scale/shift after
    each convolution, so appearance comes from z while position information
    has to arrive through the spatial inputs.  No style mixing, noise
    injection, or weight demodulation.
    """

    def __init__(self, spec: GeneratorSpec):
        super().__init__()
        self.spec = spec
        ch = spec.channels
        self.uses_heatmaps = spec.sel_variant in ("norm", "concat", "flatten")
        in_dim = spec.latent_dim
        if spec.sel_variant == "flatten":
            in_dim += sum(r * r for r in LEVEL_RES[: len(spec.sel_levels)])
        self.const = nn.Parameter(torch.zeros(ch[4], 4, 4))

        sel_cls = {"norm": sel.SELNorm, "concat": sel.SELConcat}.get(spec.sel_variant)
        self.sels = nn.ModuleDict()
        self.convs = nn.ModuleDict()
        self.mods = nn.ModuleDict()  # latent -> per-channel (scale, shift)
        res, cur = 4, ch[4]
        while res <= spec.base_res:
            lvl = LEVEL_RES.index(res) if res in LEVEL_RES else None
            if sel_cls is not None and lvl in spec.sel_levels:
                self.sels[str(lvl)] = sel_cls(
                    cur, spec.heatmap_counts[lvl], expected_res=res,
                    padding_mode=spec.padding_mode,
                )
            self.convs[str(res)] = nn.Conv2d(cur, ch[res], 3, padding=1,
                                             padding_mode=spec.padding_mode)
            if res >= min(spec.latent_mod_start, spec.base_res):
                self.mods[str(res)] = nn.Linear(in_dim, 2 * ch[res])
            cur = ch[res]
            res *= 2
        self.to_out = nn.Conv2d(cur, spec.out_ch, 3, padding=1,
                                padding_mode=spec.padding_mode)

    def forward(self, z: torch.Tensor, hmaps: dict[int, torch.Tensor] | None = None) -> torch.Tensor:
        spec = self.spec
        if self.uses_heatmaps:
            self._check_heatmaps(z, hmaps)
            if spec.sel_variant == "flatten":
                sums = [hmaps[lvl].sum(dim=1) for lvl in spec.sel_levels]
                z = sel.flatten_condition(z, sums)
        elif hmaps:
            raise LevelMismatchError("generator has sel_variant='none' but got heatmaps")

        x = self.const.unsqueeze(0).expand(z.shape[0], -1, -1, -1)
        res = 4
        while res <= spec.base_res:
            lvl = LEVEL_RES.index(res) if res in LEVEL_RES else None
            if str(lvl) in self.sels:
                x = self.sels[str(lvl)](x, hmaps[lvl])
            x = self.convs[str(res)](x)
            if str(res) in self.mods:
                scale, shift = self.mods[str(res)](z).chunk(2, dim=1)
                x = x * (1 + scale[:, :, None, None]) + shift[:, :, None, None]
            x = F.leaky_relu(x, LEAKY_SLOPE)
            if res < spec.base_res:
                x = F.interpolate(x, scale_factor=2, mode="nearest")
            res *= 2
        return torch.tanh(self.to_out(x))

    def _check_heatmaps(self, z, hmaps):
        if hmaps is None:
            raise LevelMismatchError("generator needs heatmaps for every encoding level")
        for lvl in self.spec.sel_levels:
            if lvl not in hmaps:
                raise LevelMismatchError(f"missing heatmaps for level {lvl}")
            t = hmaps[lvl]
            want = (self.spec.heatmap_counts[lvl], LEVEL_RES[lvl], LEVEL_RES[lvl])
            if tuple(t.shape[1:]) != want:
                raise LevelMismatchError(
                    f"level {lvl} heatmaps are {tuple(t.shape[1:])}, expected {want}"
                )
            if t.shape[0] != z.shape[0]:
                raise LevelMismatchError("heatmap batch does not match latent batch")


class Discriminator(nn.Module):
    def __init__(self, spec: DiscriminatorSpec):
        super().__init__()
        self.spec = spec
        ch = spec.channels
        self.from_img = nn.Conv2d(spec.in_ch, ch[spec.base_res], 3, padding=1)
        self.convs = nn.ModuleDict()
        res = spec.base_res
        cur = ch[res]
        while res > 4:
            nxt = res // 2
            self.convs[str(nxt)] = nn.Conv2d(cur, ch[nxt], 3, padding=1)
            cur = ch[nxt]
            res = nxt
        self.head = nn.Linear(cur * 4 * 4, 1)

    def forward(self, x: torch.Tensor) -> tuple[torch.Tensor, dict[str, torch.Tensor]]:
        spec = self.spec
        taps: dict[str, torch.Tensor] = {}
        h = F.leaky_relu(self.from_img(x), LEAKY_SLOPE)
        res = spec.base_res
        if res in spec.taps:
            taps[tap_name(res)] = h
        while res > 4:
            h = F.avg_pool2d(h, 2)
            res //= 2
            h = F.leaky_relu(self.convs[str(res)](h), LEAKY_SLOPE)
            if res in spec.taps:
                taps[tap_name(res)] = h
        score = self.head(h.flatten(1)).squeeze(1)
        return score, taps


def init_weights(module: nn.Module, rng: np.random.Generator):
    """Fan-in scaled normal init for convs/linears from the injected rng,
    zero biases.  Spatial encoding residuals keep their random init (the 0.1
    residual scale bounds the perturbation), so the heatmap pathway carries
    signal from the first step; call reset_residual_to_identity() on a layer
    to start it as an exact identity instead."""
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            fan_in = m.weight.shape[1] * (m.weight[0, 0].numel() if m.weight.dim() == 4 else 1)
            w = rng.normal(0.0, 1.0 / np.sqrt(fan_in), size=tuple(m.weight.shape))
            with torch.no_grad():
                m.weight.copy_(torch.from_numpy(w).float())
                if m.bias is not None:
                    m.bias.zero_()
    if isinstance(module, Generator):
        with torch.no_grad():
            module.const.copy_(torch.from_numpy(
                rng.normal(0.0, 1.0, size=tuple(module.const.shape))
            ).float())


def pyramids_to_tensors(pyramids, device="cpu") -> dict[int, torch.Tensor]:
    """Stack per-sample pyramids into per-level [B, n, r, r] float tensors."""
    levels = {}
    for lvl in range(len(pyramids[0].levels)):
        maps = np.stack([p.levels[lvl].maps for p in pyramids]).astype(np.float32)
        levels[lvl] = torch.from_numpy(maps).to(device)
    return levels


def generate(G: Generator, z, pyramid) -> torch.Tensor:
    """Render one image [out_ch, base_res, base_res] from a latent vector and
    a heatmap pyramid; deterministic given parameters."""
    if isinstance(z, np.ndarray):
        z = torch.from_numpy(z).float()
    z = z.reshape(1, -1)
    hmaps = pyramids_to_tensors([pyramid]) if G.uses_heatmaps else None
    if hmaps is not None and len(pyramid.levels) < len(G.spec.sel_levels):
        raise LevelMismatchError("pyramid has fewer levels than the generator encodes")
    with torch.no_grad():
        img = G(z, hmaps)
    return img[0]


def generate_batch(G: Generator, z: torch.Tensor, hmaps) -> torch.Tensor:
    with torch.no_grad():
        return G(z, hmaps)


def discriminate(D: Discriminator, x) -> tuple[torch.Tensor, dict[str, torch.Tensor]]:
    """Score images and return the retained tap activations.

    Accepts [C, H, W] or [B, C, H, W]; keeps the batch dimension in outputs.
    """
    if isinstance(x, np.ndarray):
        x = torch.from_numpy(x).float()
    if x.dim() == 3:
        x = x.unsqueeze(0)
    want = (D.spec.in_ch, D.spec.base_res, D.spec.base_res)
    if tuple(x.shape[1:]) != want:
        raise ValueError(f"image shape {tuple(x.shape[1:])} does not match {want}")
    return D(x)
