"""Adversarial training loop.

One step is one discriminator update (non-saturating adversarial loss plus
the R1 penalty on reals) followed by one generator update (adversarial loss
plus the weighted attention-alignment term).  Heatmap pyramids are freshly
sampled for every batch; the ablation arms swap the pyramid source (plain
2-D Gaussian noise, or per-level independent sampling).

Reproducibility contract: all randomness flows through one numpy generator
owned by the state, consumed in a fixed order per step (real batch, D-step
conditions, D-step latents, G-step conditions, G-step latents).  Evaluation
draws from derived streams keyed by (seed, step) so it never perturbs the
training trajectory.  The metrics log contains only deterministic fields;
wall times go to a separate timing log.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from . import data as datamod
from . import heatmap as hmp
from . import metrics as metricsmod
from . import nets
from .losses import (
    AlignConfig,
    adv_losses,
    alignment_loss_from_targets,
    alignment_targets,
    r1_penalty,
)

CKPT_VERSION = 1
SEL_VARIANTS = ("norm", "concat", "flatten", "none")
HEATMAP_MODES = ("hierarchical", "independent", "noise")


class NonFiniteLossError(RuntimeError):
    pass


class CheckpointError(RuntimeError):
    pass


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    dataset: str = "blobs"  # "blobs" or an image folder path
    base_res: int = 32
    out_ch: int = 1
    latent_dim: int = 64
    sel_variant: str = "norm"  # norm | concat | flatten | none
    batch_size: int = 16
    total_steps: int = 5000
    lr: float = 2e-4
    beta1: float = 0.0
    beta2: float = 0.99
    r1_gamma: float = 1.0
    align_weight: float = 1.0
    align_tau: float = 0.25
    align_levels: tuple = (0, 1, 2)
    align_warmup: int = 0
    align_attn_sign: float = -1.0  # -1 tracks content on desk-scale data
    heatmap_var0: float = hmp.DEFAULT_VAR0
    heatmap_counts: tuple = hmp.DEFAULT_CENTER_COUNTS
    heatmap_mode: str = "hierarchical"
    blob_std: float = 3.0
    blob_margin: int = 8
    blob_noise: float = 0.05
    blob_std_jitter: float = 0.0
    blob_intensity_jitter: float = 0.0
    flip_augment: bool = False
    eval_every: int = 2500
    eval_pool: int = 2048
    eval_at_start: bool = True
    checkpoint_every: int = 2500
    grid_rows: int = 4
    grid_cols: int = 4
    seed: int = 0

    def __post_init__(self):
        if self.sel_variant not in SEL_VARIANTS:
            raise ConfigError(f"sel_variant must be one of {SEL_VARIANTS}")
        if self.heatmap_mode not in HEATMAP_MODES:
            raise ConfigError(f"heatmap_mode must be one of {HEATMAP_MODES}")
        if self.total_steps < 0 or self.batch_size < 1:
            raise ConfigError("total_steps must be >= 0 and batch_size >= 1")
        self.align_levels = tuple(self.align_levels)
        self.heatmap_counts = tuple(self.heatmap_counts)

    def to_flat_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["align_levels"] = list(self.align_levels)
        out["heatmap_counts"] = list(self.heatmap_counts)
        return out

    @classmethod
    def from_flat_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        with open(path) as f:
            return cls.from_flat_dict(json.load(f))

    def save(self, path):
        with open(path, "w") as f:
            json.dump(self.to_flat_dict(), f, indent=2, sort_keys=True)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_flat_dict(), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @property
    def uses_heatmaps(self) -> bool:
        return self.sel_variant != "none"

    def align_config(self, weight: float | None = None) -> AlignConfig:
        return AlignConfig(
            tau=self.align_tau,
            weight=self.align_weight if weight is None else weight,
            levels=self.align_levels,
            attention_sign=self.align_attn_sign,
        )


@dataclass
class TrainState:
    cfg: TrainConfig
    G: nets.Generator
    D: nets.Discriminator
    opt_g: torch.optim.Adam
    opt_d: torch.optim.Adam
    rng: np.random.Generator
    dataset: object
    step: int = 0
    extractor: metricsmod.FeatureExtractor = None
    run_dir: Path | None = None


def _build_nets(cfg: TrainConfig):
    G = nets.Generator(nets.GeneratorSpec(
        base_res=cfg.base_res,
        latent_dim=cfg.latent_dim,
        out_ch=cfg.out_ch,
        sel_variant=cfg.sel_variant,
        heatmap_counts=cfg.heatmap_counts,
    ))
    D = nets.Discriminator(nets.DiscriminatorSpec(base_res=cfg.base_res, in_ch=cfg.out_ch))
    return G, D


def _build_dataset(cfg: TrainConfig):
    blob_spec = datamod.BlobSpec(
        res=cfg.base_res, blob_std=cfg.blob_std,
        margin=cfg.blob_margin, noise_std=cfg.blob_noise,
        std_jitter=cfg.blob_std_jitter,
        intensity_jitter=cfg.blob_intensity_jitter,
    )
    ds = datamod.make_dataset(cfg.dataset, cfg.base_res, cfg.flip_augment, blob_spec)
    if ds.out_ch != cfg.out_ch:
        raise ConfigError(
            f"dataset emits {ds.out_ch} channel(s) but out_ch={cfg.out_ch}"
        )
    return ds


def init_state(cfg: TrainConfig, run_dir=None) -> TrainState:
    rng = np.random.default_rng(cfg.seed)
    G, D = _build_nets(cfg)
    nets.init_weights(G, rng)
    nets.init_weights(D, rng)
    opt_g = torch.optim.Adam(G.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2))
    opt_d = torch.optim.Adam(D.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2))
    return TrainState(
        cfg=cfg, G=G, D=D, opt_g=opt_g, opt_d=opt_d, rng=rng,
        dataset=_build_dataset(cfg),
        extractor=metricsmod.FeatureExtractor(in_ch=cfg.out_ch),
        run_dir=Path(run_dir) if run_dir else None,
    )


# ------------------------------------------------------------- conditions


def _sample_conditions(state: TrainState, n: int, want_targets: bool):
    """Per-batch heatmap tensors {level: [n, n_l, r, r]}, alignment targets,
    and the underlying pyramids (None for the noise arm / baseline)."""
    cfg = state.cfg
    if not cfg.uses_heatmaps:
        return None, None, None
    if cfg.heatmap_mode == "noise":
        hmaps, targets = {}, {}
        for lvl, (r, c) in enumerate(zip(hmp.LEVEL_RESOLUTIONS, cfg.heatmap_counts)):
            maps = state.rng.standard_normal((n, c, r, r)).astype(np.float32)
            hmaps[lvl] = torch.from_numpy(maps)
            if want_targets and lvl in cfg.align_levels:
                targets[lvl] = torch.from_numpy(
                    np.clip(maps.sum(axis=1), 0.0, 1.0)
                )
        return hmaps, (targets if want_targets else None), None
    sampler = (
        hmp.sample_pyramid if cfg.heatmap_mode == "hierarchical"
        else hmp.sample_pyramid_nonhierarchical
    )
    pyramids = [
        sampler(cfg.base_res, cfg.heatmap_var0, rng=state.rng, counts=cfg.heatmap_counts)
        for _ in range(n)
    ]
    hmaps = nets.pyramids_to_tensors(pyramids)
    targets = alignment_targets(pyramids, cfg.align_levels) if want_targets else None
    return hmaps, targets, pyramids


# ------------------------------------------------------------------ steps


def _check_finite(state: TrainState, values: dict, extra: dict):
    bad = {k: v for k, v in values.items() if v is not None and not np.isfinite(v)}
    if not bad:
        return
    dump = {"step": state.step, "non_finite": bad, "batch_stats": extra}
    if state.run_dir is not None:
        path = Path(state.run_dir) / f"diagnostic_step{state.step:06d}.json"
        path.write_text(json.dumps(dump, indent=2, default=float))
    raise NonFiniteLossError(f"non-finite loss at step {state.step}: {bad}")


def _d_step(state: TrainState, reals: torch.Tensor) -> dict:
    cfg = state.cfg
    hm_d, _, _ = _sample_conditions(state, cfg.batch_size, want_targets=False)
    z = torch.from_numpy(state.rng.standard_normal((cfg.batch_size, cfg.latent_dim))).float()
    with torch.no_grad():
        fake = state.G(z, hm_d)
    scores_real, _ = state.D(reals)
    scores_fake, _ = state.D(fake)
    loss_adv, _ = adv_losses(scores_real, scores_fake)
    if cfg.r1_gamma > 0:
        pen = r1_penalty(state.D, reals, cfg.r1_gamma)
    else:
        pen = torch.zeros(())
    loss = loss_adv + pen
    state.opt_d.zero_grad(set_to_none=True)
    loss.backward()
    state.opt_d.step()
    return {
        "loss_D": float(loss.detach()),
        "R1": float(pen.detach()),
        "scores_real_mean": float(scores_real.mean().detach()),
        "scores_fake_mean": float(scores_fake.mean().detach()),
    }


def _alignment_value(state: TrainState, fake: torch.Tensor, targets) -> float:
    """Unweighted alignment value for logging when the term is inactive."""
    val = alignment_loss_from_targets(
        state.D, fake.detach(), targets, state.cfg.align_config(weight=1.0),
        create_graph=False,
    )
    return float(val)


def _g_step(state: TrainState) -> dict:
    cfg = state.cfg
    for p in state.D.parameters():
        p.requires_grad_(False)
    try:
        hm_g, targets, _ = _sample_conditions(state, cfg.batch_size, want_targets=True)
        z = torch.from_numpy(state.rng.standard_normal((cfg.batch_size, cfg.latent_dim))).float()
        fake = state.G(z, hm_g)
        scores_fake, _ = state.D(fake)
        loss_adv = F.softplus(-scores_fake).mean()
        l_align_raw = None
        if cfg.uses_heatmaps:
            active = cfg.align_weight > 0 and state.step >= cfg.align_warmup
            if active:
                raw = alignment_loss_from_targets(
                    state.D, fake, targets, cfg.align_config(weight=1.0)
                )
                loss = loss_adv + cfg.align_weight * raw
                l_align_raw = float(raw.detach())
            else:
                l_align_raw = _alignment_value(state, fake, targets)
                loss = loss_adv
        else:
            loss = loss_adv
        state.opt_g.zero_grad(set_to_none=True)
        loss.backward()
        state.opt_g.step()
    finally:
        for p in state.D.parameters():
            p.requires_grad_(True)
    return {"loss_G": float(loss.detach()), "L_align": l_align_raw}


def train_step(state: TrainState) -> dict:
    """Run one D update then one G update; returns the step's log record."""
    reals = torch.from_numpy(
        state.dataset.sample_batch(state.cfg.batch_size, state.rng)
    ).float()
    d_rec = _d_step(state, reals)
    g_rec = _g_step(state)
    values = {**d_rec, **g_rec}
    _check_finite(state, values, {
        "reals_mean": float(reals.mean()),
        "reals_std": float(reals.std()),
    })
    state.step += 1
    return {"step": state.step, **values}


# ------------------------------------------------------------- evaluation


def _score_pool(D, images: np.ndarray, batch: int = 128) -> np.ndarray:
    scores = []
    with torch.no_grad():
        for i in range(0, len(images), batch):
            s, _ = D(torch.from_numpy(images[i:i + batch]).float())
            scores.append(s.numpy())
    return np.concatenate(scores)


def _eval_conditions(cfg: TrainConfig, n: int, rng: np.random.Generator):
    if not cfg.uses_heatmaps:
        return None
    if cfg.heatmap_mode == "noise":
        return {
            lvl: torch.from_numpy(
                rng.standard_normal((n, c, r, r)).astype(np.float32)
            )
            for lvl, (r, c) in enumerate(zip(hmp.LEVEL_RESOLUTIONS, cfg.heatmap_counts))
        }
    sampler = (
        hmp.sample_pyramid if cfg.heatmap_mode == "hierarchical"
        else hmp.sample_pyramid_nonhierarchical
    )
    pyramids = [
        sampler(cfg.base_res, cfg.heatmap_var0, rng=rng, counts=cfg.heatmap_counts)
        for _ in range(n)
    ]
    return nets.pyramids_to_tensors(pyramids)


def generate_pool(state: TrainState, n: int, rng: np.random.Generator, batch: int = 64) -> np.ndarray:
    cfg = state.cfg
    out = []
    with torch.no_grad():
        for i in range(0, n, batch):
            b = min(batch, n - i)
            hmaps = _eval_conditions(cfg, b, rng)
            z = torch.from_numpy(rng.standard_normal((b, cfg.latent_dim))).float()
            out.append(state.G(z, hmaps).numpy())
    return np.concatenate(out)


def render_sample_grid(state: TrainState, rng: np.random.Generator, out_path,
                       row_pyramids=None) -> Path:
    """Grid PNG: rows share a heatmap pyramid, columns share a latent code."""
    from PIL import Image
    from PIL.PngImagePlugin import PngInfo

    cfg = state.cfg
    rows, cols = cfg.grid_rows, cfg.grid_cols
    if row_pyramids is not None and cfg.uses_heatmaps:
        row_conditions = nets.pyramids_to_tensors(row_pyramids)
    else:
        row_conditions = _eval_conditions(cfg, rows, rng)
    z = torch.from_numpy(rng.standard_normal((cols, cfg.latent_dim))).float()
    cells = []
    with torch.no_grad():
        for r in range(rows):
            if row_conditions is None:
                hmaps = None
            else:
                hmaps = {
                    lvl: t[r:r + 1].expand(cols, -1, -1, -1)
                    for lvl, t in row_conditions.items()
                }
            cells.append(state.G(z, hmaps).numpy())
    grid = np.stack(cells)  # [rows, cols, C, H, W]
    pad, res, ch = 2, cfg.base_res, cfg.out_ch
    canvas = np.ones(
        (ch, rows * (res + pad) - pad, cols * (res + pad) - pad), dtype=np.float32
    )
    for r in range(rows):
        for c in range(cols):
            y, x = r * (res + pad), c * (res + pad)
            canvas[:, y:y + res, x:x + res] = grid[r, c]
    arr = ((np.clip(canvas, -1, 1) + 1) * 127.5).astype(np.uint8)
    img = Image.fromarray(arr[0], mode="L") if ch == 1 else Image.fromarray(
        arr.transpose(1, 2, 0), mode="RGB"
    )
    meta = PngInfo()
    meta.add_text("config_hash", cfg.config_hash())
    out_path = Path(out_path)
    img.save(out_path, pnginfo=meta)
    return out_path


def evaluate(state: TrainState, write_grid: bool = True) -> tuple[dict, metricsmod.DIReport]:
    """Metrics on a parameter snapshot; never consumes the training rng."""
    cfg, step = state.cfg, state.step
    rng = np.random.default_rng([cfg.seed, 104729 + step])
    n = cfg.eval_pool
    reals = state.dataset.sample_batch(n, rng)
    fakes = generate_pool(state, n, rng)
    scores_real = _score_pool(state.D, reals)
    scores_fake = _score_pool(state.D, fakes)
    di_seed = (104729 * (cfg.seed + 1) + step) % (2**31)
    di = metricsmod.disequilibrium_indicator(
        scores_real, scores_fake, seed=di_seed
    )
    stats_r = metricsmod.compute_feature_stats(
        metricsmod.extract_features(reals, state.extractor)
    )
    stats_f = metricsmod.compute_feature_stats(
        metricsmod.extract_features(fakes, state.extractor)
    )
    fid = metricsmod.frechet_distance(stats_r, stats_f)
    record = {
        "step": step,
        "min_real": float(scores_real.min()),
        "max_fake": float(scores_fake.max()),
        "di_mean": di.di_mean,
        "fid": fid,
        "cov_regularized": bool(stats_r.regularized or stats_f.regularized),
        "config_hash": cfg.config_hash(),
    }
    if write_grid and state.run_dir is not None:
        render_sample_grid(state, rng, Path(state.run_dir) / f"samples_{step:06d}.png")
    return record, di


# ------------------------------------------------------------ checkpoints


def save_checkpoint(state: TrainState, path) -> Path:
    payload = {
        "version": CKPT_VERSION,
        "config": state.cfg.to_flat_dict(),
        "config_hash": state.cfg.config_hash(),
        "step": state.step,
        "G": state.G.state_dict(),
        "D": state.D.state_dict(),
        "opt_g": state.opt_g.state_dict(),
        "opt_d": state.opt_d.state_dict(),
        "rng_state": state.rng.bit_generator.state,
    }
    path = Path(path)
    torch.save(payload, path)
    return path


def load_checkpoint(path, run_dir=None) -> TrainState:
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(payload, dict) or "version" not in payload:
        raise CheckpointError(f"{path} is not a training checkpoint")
    if payload["version"] != CKPT_VERSION:
        raise CheckpointError(
            f"checkpoint version {payload['version']} != supported {CKPT_VERSION}"
        )
    cfg = TrainConfig.from_flat_dict(payload["config"])
    G, D = _build_nets(cfg)
    G.load_state_dict(payload["G"])
    D.load_state_dict(payload["D"])
    opt_g = torch.optim.Adam(G.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2))
    opt_d = torch.optim.Adam(D.parameters(), lr=cfg.lr, betas=(cfg.beta1, cfg.beta2))
    opt_g.load_state_dict(payload["opt_g"])
    opt_d.load_state_dict(payload["opt_d"])
    rng = np.random.default_rng()
    rng.bit_generator.state = payload["rng_state"]
    return TrainState(
        cfg=cfg, G=G, D=D, opt_g=opt_g, opt_d=opt_d, rng=rng,
        dataset=_build_dataset(cfg), step=payload["step"],
        extractor=metricsmod.FeatureExtractor(in_ch=cfg.out_ch),
        run_dir=Path(run_dir) if run_dir else None,
    )


# ------------------------------------------------------------------- loop


def train(cfg: TrainConfig | None, run_dir, resume=None, progress=False) -> Path:
    """Run (or resume) a training run; returns the run directory.

    Artifacts: config.json, metrics.jsonl (deterministic fields only),
    timing.jsonl (wall times), sample grids, ckpt_<step>.pt, ckpt_final.pt.
    """
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    if resume is not None:
        state = load_checkpoint(resume, run_dir)
        cfg = state.cfg
    else:
        state = init_state(cfg, run_dir)
    cfg.save(run_dir / "config.json")
    log = metricsmod.MetricsLog(run_dir / "metrics.jsonl")
    timing = metricsmod.MetricsLog(run_dir / "timing.jsonl")
    if resume is None:
        log.append({"kind": "header", "config_hash": cfg.config_hash(),
                    "config": cfg.to_flat_dict()})
        if cfg.eval_at_start and cfg.total_steps > 0:
            record, _ = evaluate(state)
            log.append(record)

    while state.step < cfg.total_steps:
        t0 = time.perf_counter()
        record = train_step(state)
        timing.append({"step": state.step, "seconds": time.perf_counter() - t0})
        log.append(record)
        at_end = state.step == cfg.total_steps
        if (cfg.eval_every > 0 and state.step % cfg.eval_every == 0) or at_end:
            eval_record, _ = evaluate(state)
            log.append(eval_record)
        if (cfg.checkpoint_every > 0 and state.step % cfg.checkpoint_every == 0) or at_end:
            save_checkpoint(state, run_dir / f"ckpt_{state.step:06d}.pt")
        if progress and state.step % 100 == 0:
            print(f"step {state.step}/{cfg.total_steps} "
                  f"loss_D={record['loss_D']:.3f} loss_G={record['loss_G']:.3f}",
                  flush=True)
    save_checkpoint(state, run_dir / "ckpt_final.pt")
    return run_dir


# -------------------------------------------------------------- analysis


def params_digest(module: torch.nn.Module) -> str:
    h = hashlib.sha256()
    for name, p in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(p.detach().numpy().tobytes())
    return h.hexdigest()


def spatial_awareness_probe(
    G: nets.Generator, cfg: TrainConfig, n_probes: int = 64, seed: int = 314159
) -> dict:
    """Correlate requested level-0 centers with generated blob centroids.

    Feeds bump pyramids at uniformly drawn in-frame centers (children sampled
    hierarchically) to a trained generator and measures the per-axis Pearson
    correlation between requested center and image center of mass, both in
    normalized coordinates.
    """
    rng = np.random.default_rng([cfg.seed, seed])
    requested, measured = [], []
    for _ in range(n_probes):
        cy, cx = rng.uniform(-0.45, 0.45, size=2)
        c0_px = (
            hmp.pixel_from_normalized(cy, cfg.base_res),
            hmp.pixel_from_normalized(cx, cfg.base_res),
        )
        offsets = hmp.sample_child_offsets(rng, cfg.base_res, cfg.heatmap_counts)
        pyramid = hmp.pyramid_from_parts(
            c0_px, offsets, cfg.base_res, cfg.heatmap_var0, cfg.heatmap_counts
        )
        z = rng.standard_normal(cfg.latent_dim)
        img = nets.generate(G, z, pyramid).numpy()
        gy, gx = datamod.image_centroid(img)
        requested.append((cy, cx))
        measured.append((
            hmp.normalize_pixel(gy, cfg.base_res),
            hmp.normalize_pixel(gx, cfg.base_res),
        ))
    req = np.array(requested)
    got = np.array(measured)
    r_y = float(np.corrcoef(req[:, 0], got[:, 0])[0, 1])
    r_x = float(np.corrcoef(req[:, 1], got[:, 1])[0, 1])
    return {
        "r_y": r_y, "r_x": r_x, "r_min": min(r_y, r_x),
        "requested": req.tolist(), "measured": got.tolist(),
    }
