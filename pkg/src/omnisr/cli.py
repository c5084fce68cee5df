"""Command-line entry point.

Exit codes: 0 success, 2 usage error, 3 missing file, 4 validation failure.
Failures print a single ``error code=<n> kind=<kind> msg=<text>`` line on stderr.
Set ``OMNISR_LOG`` (DEBUG, INFO, WARNING, ...) to control log verbosity.
"""

import argparse
import logging
import os
import sys
from pathlib import Path

import torch

from . import __version__
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint, transfer_weights
from .config import ConfigError, load_config
from .imageio import list_pngs, read_png, write_png
from .metrics import format_db, mean_db, psnr, ws_psnr

log = logging.getLogger("omnisr")

EXIT_USAGE = 2
EXIT_MISSING = 3
EXIT_INVALID = 4


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _one_line(text):
    return " ".join(str(text).split())


def _fail(code, kind, msg):
    print(f"error code={code} kind={kind} msg={_one_line(msg)}", file=sys.stderr)
    return code


# ---------------------------------------------------------------- make-data

def cmd_make_data(args):
    from .training.data import PairDataset, synthesize_erp_sample, write_dataset
    from .training.degradation import degrade_bicubic
    from .imageio import quantize

    if args.count < 1:
        raise ValueError("--count must be positive")
    if args.height % 4 or args.width % 4:
        raise ValueError("height and width must be multiples of 4")
    degrader = None
    if args.degradation == "learned":
        if not args.checkpoint:
            raise ValueError("--degradation learned needs --checkpoint")
        degrader = load_checkpoint(args.checkpoint)
    hrs, lrs, names = [], [], []
    for i in range(args.count):
        hr = quantize(synthesize_erp_sample(args.seed * 100003 + i, args.height, args.width))
        if degrader is None:
            lr = degrade_bicubic(hr, 4)
        else:
            with torch.no_grad():
                lr = degrader(hr[None])[0]
        hrs.append(hr)
        lrs.append(quantize(lr.clamp(0, 1)))
        names.append(f"img_{i:04d}")
    n_val = int(round(args.count * args.val_fraction))
    ds = PairDataset(lrs, hrs, names, scale=4)
    write_dataset(args.out, ds, val_names=names[len(names) - n_val:] if n_val else (),
                  extra={"seed": args.seed, "degradation": args.degradation})
    print(f"wrote {args.count} pairs to {args.out}")
    return 0


# -------------------------------------------------------------------- train

def _train_degradation(cfg, out):
    from .training.data import load_dataset, read_manifest
    from .training.degradation import (DegradationConfig, DegradationTrainConfig,
                                       train_degradation_model)

    root = cfg["data"]["root"]
    train = load_dataset(root, cfg["data"].get("train_split", "train"))
    val = None
    val_split = cfg["data"].get("val_split", "val")
    if read_manifest(root).get(val_split):
        v = load_dataset(root, val_split)
        val = (v.targets, v.inputs)
    tcfg = DegradationTrainConfig.from_dict(cfg.get("degradation_train", {}))
    mcfg = DegradationConfig.from_dict({"seed": tcfg.seed, **cfg.get("degradation_model", {})})
    result = train_degradation_model(train.targets, train.inputs, tcfg, mcfg, val=val)
    save_checkpoint(result.model, out, meta={"val_ws_psnr": result.val_ws_psnr})
    print(f"degradation val_ws_psnr {format_db(result.val_ws_psnr)}")
    print(f"checkpoint {out}")


def _train_sr(cfg, out):
    from .models import build_model
    from .training.data import load_dataset, read_manifest
    from .training.loop import Phase, make_stage2_dataset, run_phases, train_sr_model
    from .training.schedule import TrainConfig

    data = cfg.get("data") or {}
    if "root" not in data:
        raise ValueError("config needs data.root")
    root = data["root"]
    train = load_dataset(root, data.get("train_split", "train"))
    val_split = data.get("val_split", "val")
    val = load_dataset(root, val_split) if read_manifest(root).get(val_split) else None

    model = build_model(dict(cfg.get("model", {})))
    if cfg.get("init_from"):
        report = transfer_weights(model, cfg["init_from"])
        log.info("initialised %d tensors from %s; unmatched: %s", len(report.loaded),
                 cfg["init_from"], ", ".join(report.unmatched) or "none")
    if model.config.variant == "stage2":
        if not cfg.get("stage2_source"):
            raise ValueError("stage2 training needs stage2_source (a Model A checkpoint)")
        source = load_checkpoint(cfg["stage2_source"])
        train = make_stage2_dataset(source, train)
        val = make_stage2_dataset(source, val) if val is not None else None

    if cfg.get("phases"):
        datasets = {"real": train}
        if data.get("pseudo_root"):
            datasets["pseudo"] = load_dataset(data["pseudo_root"], data.get("train_split", "train"))
        phases = [Phase.from_dict(p) for p in cfg["phases"]]
        results = run_phases(model, datasets, phases, val)
        best = results[-1].best_val
    else:
        result = train_sr_model(model, train, TrainConfig.from_dict(cfg.get("train", {})), val)
        best = result.best_val
    save_checkpoint(model, out, meta={"best_val_ws_psnr": best if val is not None else None})
    if val is not None:
        print(f"best val_ws_psnr {format_db(best)}")
    print(f"checkpoint {out}")


def cmd_train(args):
    cfg = load_config(args.config, args.set)
    out = args.out or cfg.get("output")
    if not out:
        raise ValueError("no output checkpoint given (--out or output:)")
    if cfg.get("kind", "sr") == "degradation":
        _train_degradation(cfg, out)
    else:
        _train_sr(cfg, out)
    return 0


# -------------------------------------------------------------------- infer

def _inference_options(args):
    from .pipeline import InferenceOptions

    cfg = load_config(args.config, args.set) if (args.config or args.set) else {}
    opts = dict(cfg.get("inference", {}))
    if args.self_ensemble is not None:
        opts["self_ensemble"] = args.self_ensemble
    if args.tile is not None:
        opts["tile"] = args.tile
    if args.tile_overlap is not None:
        opts["tile_overlap"] = args.tile_overlap
    return InferenceOptions(**opts)


def _load_sr(path, variant_ok):
    model = load_checkpoint(path)
    variant = getattr(getattr(model, "config", None), "variant", None)
    if variant not in variant_ok:
        raise ValueError(f"{path} holds a {variant or 'non-SR'} model, expected one of {variant_ok}")
    return model


def cmd_infer(args):
    from .pipeline import infer_two_stage

    opts = _inference_options(args)
    model_a = _load_sr(args.model_a, ("A", "B"))
    model_b = _load_sr(args.model_b, ("A", "B")) if args.model_b else None
    stage2 = _load_sr(args.stage2, ("stage2",)) if args.stage2 else None
    src = Path(args.input)
    if not src.exists():
        raise FileNotFoundError(f"input {src} not found")
    pairs = ([(p, Path(args.output) / p.name) for p in list_pngs(src)] if src.is_dir()
             else [(src, Path(args.output))])
    for inp, out in pairs:
        lr = read_png(inp)
        sr = infer_two_stage(lr, model_a, model_b, stage2, opts)
        write_png(out, sr.clamp(0, 1))
        log.info("%s -> %s", inp, out)
    print(f"wrote {len(pairs)} image(s)")
    return 0


# --------------------------------------------------------------------- eval

def evaluate_dirs(gt_dir, pred_dir):
    """Per-image (name, ws_psnr, psnr) rows sorted by name."""
    for d in (gt_dir, pred_dir):
        if not Path(d).is_dir():
            raise FileNotFoundError(f"directory {d} not found")
    gt = {p.stem: p for p in list_pngs(gt_dir)}
    pred = {p.stem: p for p in list_pngs(pred_dir)}
    if not gt:
        raise ValueError(f"no PNG files in {gt_dir}")
    if set(gt) != set(pred):
        diff = sorted(set(gt) ^ set(pred))
        raise ValueError(f"image sets differ, e.g. {diff[0]}")
    rows = []
    for name in sorted(gt):
        ref, test = read_png(gt[name]), read_png(pred[name])
        if ref.shape != test.shape:
            raise ValueError(f"{name}: shape {tuple(ref.shape)} vs {tuple(test.shape)}")
        rows.append((name, ws_psnr(ref, test).value_db, psnr(ref, test).value_db))
    return rows


def format_report(rows):
    lines = [f"{name} {format_db(w)} {format_db(p)}" for name, w, p in rows]
    lines.append(f"mean {format_db(mean_db(r[1] for r in rows))} {format_db(mean_db(r[2] for r in rows))}")
    return "\n".join(lines) + "\n"


def cmd_eval(args):
    report = format_report(evaluate_dirs(args.gt, args.pred))
    sys.stdout.write(report)
    if args.report:
        Path(args.report).write_text(report)
    return 0


# ------------------------------------------------------------------ degrade

def cmd_degrade(args):
    from .training.degradation import degrade_bicubic

    model = None
    if args.method == "learned":
        if not args.checkpoint:
            raise ValueError("--method learned needs --checkpoint")
        model = load_checkpoint(args.checkpoint)
        if getattr(model, "checkpoint_kind", None) != "degradation":
            raise ValueError(f"{args.checkpoint} is not a degradation checkpoint")
    src = Path(args.input)
    if not src.exists():
        raise FileNotFoundError(f"input {src} not found")
    pairs = ([(p, Path(args.output) / p.name) for p in list_pngs(src)] if src.is_dir()
             else [(src, Path(args.output))])
    for inp, out in pairs:
        hr = read_png(inp)
        if model is None:
            lr = degrade_bicubic(hr, 4)
        else:
            with torch.no_grad():
                lr = model(hr[None])[0]
        write_png(out, lr.clamp(0, 1))
    print(f"wrote {len(pairs)} image(s)")
    return 0


# -------------------------------------------------------------- viz-offsets

def cmd_viz_offsets(args):
    from .viz import render_offsets

    model = _load_sr(args.checkpoint, ("A", "B", "stage2"))
    if not Path(args.input).exists():
        raise FileNotFoundError(f"input {args.input} not found")
    paths = render_offsets(model, read_png(args.input), args.out_dir, stride=args.stride)
    for p in paths:
        print(p)
    return 0


def build_parser():
    p = _Parser(prog="omnisr", description="Omnidirectional image super-resolution toolkit")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("make-data", help="synthesize a paired toy ERP dataset")
    s.add_argument("--out", required=True)
    s.add_argument("--count", type=int, default=8)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--height", type=int, default=128)
    s.add_argument("--width", type=int, default=256)
    s.add_argument("--val-fraction", type=float, default=0.25)
    s.add_argument("--degradation", choices=("bicubic", "learned"), default="bicubic")
    s.add_argument("--checkpoint")
    s.set_defaults(func=cmd_make_data)

    s = sub.add_parser("train", help="train an SR or degradation model from a config file")
    s.add_argument("--config", required=True)
    s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    s.add_argument("--out")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("infer", help="two-stage super-resolution of an image or directory")
    s.add_argument("--model-a", required=True)
    s.add_argument("--model-b")
    s.add_argument("--stage2")
    s.add_argument("--input", required=True)
    s.add_argument("--output", required=True)
    s.add_argument("--self-ensemble", choices=("none", "x8"))
    s.add_argument("--tile", type=int)
    s.add_argument("--tile-overlap", type=int)
    s.add_argument("--config")
    s.add_argument("--set", action="append", default=[], metavar="KEY=VALUE")
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("eval", help="WS-PSNR/PSNR report for two directories of PNGs")
    s.add_argument("--gt", required=True)
    s.add_argument("--pred", required=True)
    s.add_argument("--report")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("degrade", help="downscale HR images x4 (bicubic or learned)")
    s.add_argument("--input", required=True)
    s.add_argument("--output", required=True)
    s.add_argument("--method", choices=("bicubic", "learned"), default="bicubic")
    s.add_argument("--checkpoint")
    s.set_defaults(func=cmd_degrade)

    s = sub.add_parser("viz-offsets", help="plot deformable offsets of every position-aware block")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--stride", type=int, default=4)
    s.set_defaults(func=cmd_viz_offsets)
    return p


def _setup_logging(verbose):
    level = os.environ.get("OMNISR_LOG", "").upper() or ("DEBUG" if verbose > 1 else "INFO" if verbose else "WARNING")
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        return _fail(EXIT_USAGE, "usage", exc)
    _setup_logging(args.verbose)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        return _fail(EXIT_MISSING, "missing", exc)
    except (ConfigError, CheckpointError, ValueError) as exc:
        return _fail(EXIT_INVALID, "invalid", exc)


if __name__ == "__main__":
    sys.exit(main())
