import math

import numpy as np
import pytest
import torch

from sawgan import heatmap as hmp
from sawgan import losses, nets


def softplus_scalar(v):
    return max(v, 0.0) + math.log1p(math.exp(-abs(v)))


# ------------------------------------------------------------- adversarial


def test_adv_losses_at_zero_scores():
    z = torch.zeros(5)
    loss_d, loss_g = losses.adv_losses(z, z)
    assert loss_d.item() == pytest.approx(2 * math.log(2), abs=1e-7)
    assert loss_g.item() == pytest.approx(math.log(2), abs=1e-7)


def test_adv_losses_limit():
    loss_d, _ = losses.adv_losses(torch.full((3,), 20.0), torch.full((3,), -20.0))
    assert loss_d.item() < 1e-6


def test_adv_losses_match_elementwise_oracle():
    rng = np.random.default_rng(0)
    sr = rng.normal(size=16)
    sf = rng.normal(size=16)
    loss_d, loss_g = losses.adv_losses(torch.from_numpy(sr), torch.from_numpy(sf))
    want_d = np.mean([softplus_scalar(-v) for v in sr]) + np.mean(
        [softplus_scalar(v) for v in sf]
    )
    want_g = np.mean([softplus_scalar(-v) for v in sf])
    assert loss_d.item() == pytest.approx(want_d, rel=1e-6)
    assert loss_g.item() == pytest.approx(want_g, rel=1e-6)


# ---------------------------------------------------------------------- R1


class ConstD(torch.nn.Module):
    def forward(self, x):
        return torch.ones(x.shape[0]) + 0.0 * x.sum(dim=(1, 2, 3)), {}


class PixelSumD(torch.nn.Module):
    def forward(self, x):
        return x.sum(dim=(1, 2, 3)), {}


def test_r1_zero_for_constant_discriminator():
    pen = losses.r1_penalty(ConstD(), torch.randn(4, 1, 8, 8), gamma=1.0)
    assert pen.item() == 0.0


def test_r1_pixel_sum_analytic():
    x = torch.randn(4, 1, 32, 32)
    pen = losses.r1_penalty(PixelSumD(), x, gamma=1.0)
    assert pen.item() == pytest.approx(32 * 32 / 2, rel=1e-6)


def test_r1_matches_finite_differences():
    rng = np.random.default_rng(1)
    D = nets.Discriminator(nets.DiscriminatorSpec(base_res=16, in_ch=1,
                                                  channels={16: 4, 8: 4, 4: 4})).double()
    nets.init_weights(D, rng)
    D = D.double()
    x = torch.from_numpy(rng.normal(size=(1, 1, 16, 16)))
    pen = losses.r1_penalty(D, x, gamma=1.0, create_graph=False)

    h = 1e-6
    grad_fd = np.zeros(x.numel())
    flat = x.view(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + h
        up = D(x)[0].item()
        flat[i] = orig - h
        dn = D(x)[0].item()
        flat[i] = orig
        grad_fd[i] = (up - dn) / (2 * h)
    want = 0.5 * float((grad_fd**2).sum())
    assert abs(pen.item() - want) / want < 1e-3


def test_r1_rejects_negative_gamma():
    with pytest.raises(ValueError):
        losses.r1_penalty(PixelSumD(), torch.randn(1, 1, 8, 8), gamma=-1.0)


# -------------------------------------------------------------- truncation


def test_truncate_below_boundary_convention():
    v = torch.tensor([0.20, 0.25, 0.30, 0.2499999])
    out = losses.truncate_below(v, 0.25)
    assert out.tolist() == [0.0, 0.25, pytest.approx(0.30), 0.0]


def test_alignment_config_validation():
    with pytest.raises(ValueError):
        losses.AlignConfig(tau=-0.1)
    with pytest.raises(ValueError):
        losses.AlignConfig(weight=-1.0)
    with pytest.raises(ValueError):
        losses.AlignConfig(levels=(0, 3))
    with pytest.raises(ValueError):
        losses.AlignConfig(heatmap_combine="product")


# ------------------------------------------------------------ alignment loss


class FakeTapD(torch.nn.Module):
    """Emits fixed per-level maps as taps, wired to the input so gradients
    exist; score is the mean of every tap."""

    def __init__(self, maps):  # maps: {level: [B, r, r]}
        super().__init__()
        self.maps = maps

    def forward(self, x):
        gate = 1.0 + 0.0 * x.sum(dim=(1, 2, 3))  # [B]
        taps = {}
        score = 0.0
        for lvl, m in self.maps.items():
            act = m.unsqueeze(1) * gate.view(-1, 1, 1, 1)
            taps[f"res{m.shape[-1]}"] = act
            score = score + act.mean(dim=(1, 2, 3))
        return score, taps


def _target_like_maps(seed=0, batch=2):
    rng = np.random.default_rng(seed)
    maps = {}
    for lvl, r in enumerate((4, 8, 16)):
        m = rng.uniform(0.3, 1.0, size=(batch, r, r))
        m = m / m.reshape(batch, -1).max(axis=1).reshape(batch, 1, 1)  # peak exactly 1
        maps[lvl] = torch.from_numpy(m).float()
    return maps


def test_alignment_zero_when_attention_equals_target():
    maps = _target_like_maps()
    D = FakeTapD(maps)
    x = torch.randn(2, 1, 32, 32)
    targets = {lvl: m.clone() for lvl, m in maps.items()}
    cfg = losses.AlignConfig(tau=0.0)
    loss = losses.alignment_loss_from_targets(D, x, targets, cfg, create_graph=False)
    assert loss.item() < 1e-6
    # with the stated tau the tiny epsilon residue truncates to exactly zero
    cfg = losses.AlignConfig(tau=0.25)
    loss = losses.alignment_loss_from_targets(D, x, targets, cfg, create_graph=False)
    assert loss.item() == 0.0


def test_alignment_truncation_keeps_and_drops_offsets():
    maps = _target_like_maps(seed=3)
    D = FakeTapD(maps)
    x = torch.randn(2, 1, 32, 32)
    cfg = losses.AlignConfig(tau=0.25)
    # targets offset by a constant -> per-sample value is that constant
    for offset, expect_kept in ((0.30, True), (0.20, False)):
        targets = {lvl: torch.clamp(m - offset, 0.0, 1.0) for lvl, m in maps.items()}
        loss = losses.alignment_loss_from_targets(D, x, targets, cfg, create_graph=False)
        if expect_kept:
            assert loss.item() == pytest.approx(offset, abs=1e-5)
        else:
            assert loss.item() == 0.0


def test_alignment_bounded_by_weight_and_monotone_in_tau():
    rng = np.random.default_rng(4)
    maps = _target_like_maps(seed=5, batch=3)
    D = FakeTapD(maps)
    x = torch.randn(3, 1, 32, 32)
    targets = {
        lvl: torch.from_numpy(rng.uniform(0, 1, size=tuple(m.shape))).float()
        for lvl, m in maps.items()
    }
    prev = None
    for tau in (0.0, 0.1, 0.25, 0.5, 1.0):
        cfg = losses.AlignConfig(tau=tau, weight=0.7)
        loss = losses.alignment_loss_from_targets(D, x, targets, cfg, create_graph=False).item()
        assert 0.0 <= loss <= 0.7
        if prev is not None:
            assert loss <= prev + 1e-9
        prev = loss


def test_alignment_loss_with_real_nets_and_pyramids():
    rng = np.random.default_rng(6)
    D = nets.Discriminator(nets.DiscriminatorSpec(base_res=32, in_ch=1))
    nets.init_weights(D, rng)
    G = nets.Generator(nets.GeneratorSpec(base_res=32, sel_variant="norm"))
    nets.init_weights(G, rng)
    pyramids = [hmp.sample_pyramid(32, rng=rng) for _ in range(2)]
    z = torch.from_numpy(rng.standard_normal((2, 64))).float()
    fake = G(z, nets.pyramids_to_tensors(pyramids))

    for p in D.parameters():
        p.requires_grad_(False)
    loss = losses.alignment_loss(D, fake, pyramids, losses.AlignConfig(tau=0.0))
    assert 0.0 <= loss.item() <= 1.0
    loss.backward()
    assert all(p.grad is None for p in D.parameters())
    assert any(
        p.grad is not None and p.grad.abs().max() > 0 for p in G.parameters()
    )
    for p in D.parameters():
        p.requires_grad_(True)


def test_alignment_missing_tap_errors():
    maps = {0: torch.rand(1, 4, 4)}
    D = FakeTapD(maps)
    with pytest.raises(losses.UnknownTapError):
        losses.alignment_loss_from_targets(
            D, torch.randn(1, 1, 32, 32), {0: maps[0], 1: torch.rand(1, 8, 8)},
            losses.AlignConfig(levels=(0, 1)), create_graph=False,
        )


def test_alignment_gradient_matches_finite_differences_above_tau():
    rng = np.random.default_rng(8)
    D = nets.Discriminator(
        nets.DiscriminatorSpec(base_res=16, in_ch=1, channels={16: 4, 8: 6, 4: 8})
    )
    nets.init_weights(D, rng)
    D = D.double()
    pyramids = [hmp.sample_pyramid(16, rng=rng)]
    cfg = losses.AlignConfig(tau=0.0)
    targets = {
        lvl: t.double() for lvl, t in losses.alignment_targets(pyramids, cfg.levels).items()
    }
    x = torch.from_numpy(rng.normal(size=(1, 1, 16, 16)))

    x_leaf = x.clone().requires_grad_(True)
    loss = losses.alignment_loss_from_targets(D, x_leaf, targets, cfg, create_graph=True)
    assert loss.item() >= cfg.tau
    (grad,) = torch.autograd.grad(loss, x_leaf)

    h = 1e-6
    fd = np.zeros(x.numel())
    flat = x.view(-1)
    for i in range(flat.numel()):
        orig = flat[i].item()
        flat[i] = orig + h
        up = losses.alignment_loss_from_targets(D, x, targets, cfg, create_graph=False).item()
        flat[i] = orig - h
        dn = losses.alignment_loss_from_targets(D, x, targets, cfg, create_graph=False).item()
        flat[i] = orig
        fd[i] = (up - dn) / (2 * h)
    g = grad.view(-1).numpy()
    rel = np.linalg.norm(g - fd) / max(np.linalg.norm(g), np.linalg.norm(fd))
    assert rel < 1e-3
