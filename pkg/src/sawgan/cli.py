"""Operator command line.

Subcommands: train, eval, attn, sample, heatmap, serve.  Every flag of
`train` mirrors a TrainConfig field; unknown config keys are rejected rather
than silently accepted.  Commands exit 0 on success and print every output
file path; failures exit nonzero with a one-line JSON error on stderr.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from pathlib import Path

import numpy as np


class CliError(RuntimeError):
    pass


class Parser(argparse.ArgumentParser):
    def error(self, message):
        print(json.dumps({"error": message, "type": "usage"}), file=sys.stderr)
        sys.exit(2)


def _parse_bool(v: str) -> bool:
    if v.lower() in ("1", "true", "yes", "on"):
        return True
    if v.lower() in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {v!r}")


def _parse_int_tuple(v: str) -> tuple:
    return tuple(int(p) for p in v.split(",") if p)


def add_config_flags(parser: argparse.ArgumentParser):
    """One flag per TrainConfig field, so --help enumerates every key."""
    from .trainer import TrainConfig

    for f in dataclasses.fields(TrainConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.type in ("bool",) or isinstance(f.default, bool):
            parser.add_argument(flag, dest=f.name, type=_parse_bool, default=None,
                                metavar="BOOL", help=f"TrainConfig.{f.name}")
        elif isinstance(f.default, tuple):
            parser.add_argument(flag, dest=f.name, type=_parse_int_tuple, default=None,
                                metavar="A,B,...", help=f"TrainConfig.{f.name}")
        elif isinstance(f.default, int):
            parser.add_argument(flag, dest=f.name, type=int, default=None,
                                help=f"TrainConfig.{f.name}")
        elif isinstance(f.default, float):
            parser.add_argument(flag, dest=f.name, type=float, default=None,
                                help=f"TrainConfig.{f.name}")
        else:
            parser.add_argument(flag, dest=f.name, type=str, default=None,
                                help=f"TrainConfig.{f.name}")


def config_from_args(args) -> "TrainConfig":
    from .trainer import TrainConfig

    base = {}
    if args.config:
        with open(args.config) as f:
            base = json.load(f)
    for f in dataclasses.fields(TrainConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            base[f.name] = v
    return TrainConfig.from_flat_dict(base)


def _emit(path):
    print(str(path))
    return path


# ---------------------------------------------------------------- commands


def cmd_train(args) -> int:
    from . import trainer

    cfg = config_from_args(args)
    out = Path(args.out) if args.out else Path("runs") / f"train-{cfg.config_hash()}-s{cfg.seed}"
    run_dir = trainer.train(cfg, out, resume=args.resume, progress=not args.quiet)
    _emit(run_dir / "config.json")
    _emit(run_dir / "metrics.jsonl")
    _emit(run_dir / "ckpt_final.pt")
    return 0


def cmd_eval(args) -> int:
    from . import trainer

    state = trainer.load_checkpoint(args.checkpoint)
    if args.pool:
        state.cfg.eval_pool = args.pool
    record, di = trainer.evaluate(state, write_grid=False)
    report = {**record, "di_report": di.to_dict()}
    out = Path(args.out) if args.out else Path(args.checkpoint).parent / "eval_report.json"
    out.write_text(json.dumps(report, indent=2, sort_keys=True))
    _emit(out)
    return 0


def _image_from_args(args, state):
    from . import heatmap as hmp
    from . import nets

    cfg = state.cfg
    if args.image:
        from PIL import Image

        with Image.open(args.image) as im:
            im = im.convert("L" if cfg.out_ch == 1 else "RGB")
            im = im.resize((cfg.base_res, cfg.base_res), Image.BILINEAR)
        arr = np.asarray(im, dtype=np.float32) / 127.5 - 1.0
        return arr[None] if cfg.out_ch == 1 else arr.transpose(2, 0, 1)
    rng = np.random.default_rng(args.seed)
    z = rng.standard_normal(cfg.latent_dim)
    if cfg.uses_heatmaps:
        pyramid = hmp.sample_pyramid(cfg.base_res, cfg.heatmap_var0, rng=rng,
                                     counts=cfg.heatmap_counts)
    else:
        pyramid = None
    if pyramid is not None:
        return nets.generate(state.G, z, pyramid).numpy()
    import torch

    with torch.no_grad():
        return state.G(torch.from_numpy(z).float().reshape(1, -1))[0].numpy()


def cmd_attn(args) -> int:
    from . import attention, trainer

    state = trainer.load_checkpoint(args.checkpoint)
    img = _image_from_args(args, state)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    taps = args.taps.split(",") if args.taps else [f"res{r}" for r in state.D.spec.taps]
    for tap in taps:
        amap = attention.gradcam(state.D, img, tap)
        overlay = attention.attention_overlay(img, amap.values)
        path = out_dir / f"attn_{tap}.png"
        overlay.save(path)
        _emit(path)
    return 0


def cmd_sample(args) -> int:
    from . import heatmap as hmp
    from . import trainer

    state = trainer.load_checkpoint(args.checkpoint)
    state.cfg.grid_rows = args.rows
    state.cfg.grid_cols = args.cols
    rng = np.random.default_rng(args.seed)
    row_pyramids = None
    if args.pyramid:
        record = json.loads(Path(args.pyramid).read_text())
        row_pyramids = [hmp.pyramid_from_record(record)] * args.rows
    out = Path(args.out)
    trainer.render_sample_grid(state, rng, out, row_pyramids=row_pyramids)
    _emit(out)
    return 0


def cmd_heatmap(args) -> int:
    from PIL import Image

    from . import heatmap as hmp

    pyramid = hmp.sample_pyramid(args.base_res, args.var0, seed=args.seed,
                                 counts=_parse_int_tuple(args.counts))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    record_path = out_dir / "pyramid.json"
    record_path.write_text(hmp.pyramid_to_json(pyramid))
    _emit(record_path)
    for lvl in pyramid.levels:
        s = np.clip(hmp.level_sum(lvl), 0.0, 1.0)
        img = Image.fromarray((s * 255).astype(np.uint8), mode="L")
        img = img.resize((128, 128), Image.NEAREST)
        path = out_dir / f"level{lvl.level}.png"
        img.save(path)
        _emit(path)
    return 0


def cmd_serve(args) -> int:
    from .service import run_server

    run_server(args.checkpoint, host=args.host, port=args.port)
    return 0


def build_parser() -> Parser:
    p = Parser(prog="sawgan", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="run a training job", parents=[], conflict_handler="resolve")
    t.add_argument("--config", help="flat JSON config file (keys = TrainConfig fields)")
    t.add_argument("--out", help="run directory (default runs/train-<hash>-s<seed>)")
    t.add_argument("--resume", help="checkpoint to resume from")
    t.add_argument("--quiet", action="store_true")
    add_config_flags(t)
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--out")
    e.add_argument("--pool", type=int)
    e.set_defaults(fn=cmd_eval)

    a = sub.add_parser("attn", help="attention overlays for an image or seed")
    a.add_argument("--checkpoint", required=True)
    a.add_argument("--image", help="input image file (otherwise generated from --seed)")
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--taps", help="comma-separated tap names, default all")
    a.add_argument("--out", required=True, help="output directory")
    a.set_defaults(fn=cmd_attn)

    s = sub.add_parser("sample", help="sample grid: rows share a pyramid, columns share a latent")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--rows", type=int, default=3)
    s.add_argument("--cols", type=int, default=4)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--pyramid", help="pyramid record JSON applied to every row")
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_sample)

    h = sub.add_parser("heatmap", help="render a sampled pyramid to PNGs")
    h.add_argument("--base-res", type=int, default=32)
    h.add_argument("--var0", type=float, default=0.5)
    h.add_argument("--seed", type=int, default=0)
    h.add_argument("--counts", default="1,2,4")
    h.add_argument("--out", required=True)
    h.set_defaults(fn=cmd_heatmap)

    v = sub.add_parser("serve", help="run the editing service")
    v.add_argument("--checkpoint", required=True)
    v.add_argument("--host", default="127.0.0.1")
    v.add_argument("--port", type=int, default=8321)
    v.set_defaults(fn=cmd_serve)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except Exception as exc:  # one-line machine-readable failure
        print(json.dumps({"error": str(exc), "type": type(exc).__name__}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
