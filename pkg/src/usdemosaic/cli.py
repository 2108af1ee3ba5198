"""Command-line entry point: ``usdemosaic <command> ...``."""
from __future__ import annotations

import argparse
import csv
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import data
from .config import RunConfig, default_output_root
from .metrics import evaluate
from .network import (
    build_model, count_params, demosaic, hsa_formula, hsa_param_count, lsa_formula, lsa_param_count,
)
from .sei import SEI_MAX_PRESETS, SEIReport
from .sfa import mosaic_sample, parse_pattern, save_pattern

log = logging.getLogger("usdemosaic")


class CLIError(Exception):
    pass


def _write_csv(rows, path=None, stream=None):
    if not rows:
        return
    fields = list(rows[0])
    if path is not None:
        import io

        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)
        data.atomic_write_bytes(path, buf.getvalue().encode())
    if stream is not None:
        writer = csv.DictWriter(stream, fieldnames=fields)
        writer.writeheader()
        writer.writerows(rows)


def _fmt(v):
    if isinstance(v, float):
        return "inf" if v == math.inf else f"{v:.6g}"
    return "" if v is None else v


def _out_dir(args, name) -> Path:
    out = Path(args.out) if args.out else default_output_root() / name
    out.mkdir(parents=True, exist_ok=True)
    return out


# simulate ---------------------------------------------------------------

def cmd_simulate(args) -> int:
    pattern = parse_pattern(args.pattern)
    out = _out_dir(args, "simulated")
    rng = np.random.default_rng(args.seed)
    sources = []
    for path in args.cubes:
        cf = data.read_cube(path)
        sources.append((Path(path).stem, cf.data.astype(np.float64), cf.wavelengths))
    wl = data.source_wavelengths(args.source_bands)
    for k in range(args.synthetic):
        scene = data.generate_scene(rng, args.height, args.width, args.source_bands, args.complexity)
        sources.append((f"scene{k:03d}", scene, wl))
    if not sources:
        raise CLIError("nothing to simulate: pass cube files or --synthetic N")
    entries = []
    for idx, (name, cube, wavelengths) in enumerate(sources):
        if cube.shape[2] != pattern.bands:
            if wavelengths is None:
                raise CLIError(f"{name}: {cube.shape[2]} bands without wavelengths cannot be resampled "
                               f"to {pattern.bands}")
            bank = data.make_ssf_bank(wavelengths, pattern.bands, tuple(args.range), args.fwhm)
            cube, wavelengths = data.spectral_resample(cube, bank), bank.centers
        cube, _ = data.normalize_cube(cube)
        cube = cube[: cube.shape[0] // pattern.r1 * pattern.r1, : cube.shape[1] // pattern.r2 * pattern.r2]
        cube = cube.astype(np.float32)
        mosaic = mosaic_sample(cube, pattern)
        gt_path, mosaic_path = out / f"{name}_gt.cube", out / f"{name}_mosaic.cube"
        data.save_cube(cube, gt_path, wavelengths=wavelengths)
        data.save_cube(mosaic, mosaic_path)
        if args.png:
            data.save_mosaic_png(mosaic, out / f"{name}_mosaic.png")
        split = "val" if idx < args.val else "train"
        entries.append((mosaic_path.name, split, gt_path.name))
    save_pattern(pattern, out / "pattern.txt")
    data.write_manifest(entries, out / "manifest.txt")
    print(f"wrote {len(entries)} mosaic/ground-truth pairs to {out}")
    return 0


# train ------------------------------------------------------------------

def build_run_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    if args.pattern:
        cfg.pattern = args.pattern
    if args.manifest:
        cfg.manifest = args.manifest
    if args.out:
        cfg.out = args.out
    if args.seed is not None:
        cfg.train.seed = args.seed
    if args.sei_max is not None:
        cfg.train.sei_max = SEI_MAX_PRESETS.get(args.sei_max) or float(args.sei_max)
    if args.transform_policy:
        cfg.train.policy = args.transform_policy
    if args.supervised:
        cfg.train.supervised = True
    for key in ("epochs", "lr", "patch_size", "batch_size", "sei_every", "steps_per_epoch"):
        value = getattr(args, key, None)
        if value is not None:
            setattr(cfg.train, "max_epochs" if key == "epochs" else key, value)
    if args.no_interp_branch:
        cfg.model["interp_branch"] = False
    for key in ("attention", "channels", "blocks", "reduction"):
        value = getattr(args, key, None)
        if value is not None:
            cfg.model[key] = value
    return cfg


def _load_split(entries, split, pattern):
    mosaics, gts = [], []
    for entry in entries:
        if entry.split != split:
            continue
        cube = data.read_cube(entry.path).data
        mosaics.append(cube[..., 0] if cube.shape[2] == 1 else mosaic_sample(cube, pattern))
        if entry.gt is not None:
            gts.append(data.load_cube(entry.gt))
        elif cube.shape[2] == pattern.bands:
            gts.append(cube)
    complete = len(gts) == len(mosaics) and mosaics
    return mosaics, (gts if complete else None)


def cmd_train(args) -> int:
    from .train import fit, save_checkpoint

    cfg = build_run_config(args)
    if not cfg.manifest:
        raise CLIError("no training data: pass --manifest or set 'manifest' in the config")
    pattern = cfg.resolve_pattern()
    entries = data.read_manifest(cfg.manifest)
    train_y, train_gt = _load_split(entries, "train", pattern)
    val_y, val_gt = _load_split(entries, "val", pattern)
    if not train_y:
        raise CLIError(f"{cfg.manifest} lists no 'train' entries")
    out = Path(cfg.out) if cfg.out else default_output_root() / f"run-seed{cfg.train.seed}"
    out.mkdir(parents=True, exist_ok=True)
    status = out / "STATUS"
    status.write_text("running\n")
    cfg.out = str(out)
    cfg.snapshot(out / "config.json")
    try:
        result = fit(train_y, val_y, cfg.model_config(), cfg.train, cfg.loss, run_dir=out,
                     train_gts=train_gt, val_gts=val_gt)
        save_checkpoint(result.model, out / "final.pt", {"epoch": result.history[-1]["epoch"],
                                                         "seed": cfg.train.seed})
    except BaseException as exc:
        status.write_text(f"failed: {exc}\n")
        raise
    status.write_text("complete\n")
    print(f"run directory {out}; best (lowest-SEI) epoch {result.best_epoch}"
          + ("; stopped on SEI threshold" if result.stopped_early else ""))
    return 0


# demosaic / evaluate / sei ---------------------------------------------

def cmd_demosaic(args) -> int:
    from .train import load_checkpoint

    model, _ = load_checkpoint(args.checkpoint)
    cube_in = data.read_cube(args.mosaic).data
    if cube_in.shape[2] != 1:
        raise CLIError(f"{args.mosaic} holds {cube_in.shape[2]} bands; expected a mosaic")
    y = cube_in[..., 0]
    pattern = model.pattern
    if y.shape[0] % pattern.r1 or y.shape[1] % pattern.r2:
        raise CLIError(f"mosaic {y.shape} is not a multiple of the {pattern.period} period")
    out = Path(args.out) if args.out else Path(args.mosaic).with_name(Path(args.mosaic).stem + "_demosaiced.cube")
    data.save_cube(demosaic(model, y), out)
    print(out)
    return 0


def cmd_evaluate(args) -> int:
    if len(args.cubes) != len(args.gt):
        raise CLIError("pass one --gt per estimated cube")
    rows = []
    for est_path, gt_path in zip(args.cubes, args.gt):
        report = evaluate(data.load_cube(est_path), data.load_cube(gt_path), ergas_ratio=args.ergas_ratio)
        rows.append({"image": Path(est_path).name, **report.row()})
    if len(rows) > 1:
        mean = {"image": "mean"}
        for key in rows[0]:
            if key != "image":
                vals = [r[key] for r in rows if r[key] is not None]
                mean[key] = float(np.mean(vals)) if vals else None
        rows.append(mean)
    rows = [{k: _fmt(v) for k, v in r.items()} for r in rows]
    _write_csv(rows, args.out, sys.stdout)
    return 0


def cmd_sei(args) -> int:
    pattern = None
    rows = []
    if args.checkpoint:
        from .train import load_checkpoint

        model, _ = load_checkpoint(args.checkpoint)
        pattern = model.pattern
        cubes = [(p, demosaic(model, data.load_mosaic(p))) for p in args.inputs]
    else:
        if not args.pattern:
            raise CLIError("--pattern is required when scoring cube files")
        pattern = parse_pattern(args.pattern)
        cubes = [(p, data.load_cube(p)) for p in args.inputs]
    for path, cube in cubes:
        report = SEIReport.of(cube, pattern)
        rows.append({"input": Path(path).name, "sei": f"{report.sei:.6e}",
                     **({f"v{b}": f"{v:.6e}" for b, v in enumerate(report.per_band)} if args.per_band else {})})
    _write_csv(rows, args.out, sys.stdout)
    return 0


def cmd_sei_curve(args) -> int:
    from .train import read_history

    history = [r for r in read_history(args.history) if r.get("sei") is not None]
    keys = ["epoch", "sei"] + [k for k in ("psnr", "ssim", "sam", "ergas") if history and history[0].get(k) is not None]
    rows = [{k: _fmt(r[k]) if k != "epoch" else int(r[k]) for k in keys} for r in history]
    _write_csv(rows, args.out, sys.stdout)
    if args.plot:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        epochs = [r["epoch"] for r in history]
        fig, ax = plt.subplots(figsize=(6, 3.5))
        ax.plot(epochs, [r["sei"] for r in history], color="tab:red", label="SEI")
        ax.set_xlabel("epoch")
        ax.set_ylabel("SEI")
        if "psnr" in keys:
            ax2 = ax.twinx()
            ax2.plot(epochs, [r["psnr"] for r in history], color="tab:blue", label="PSNR")
            ax2.set_ylabel("PSNR (dB)")
        fig.tight_layout()
        fig.savefig(args.plot, dpi=120)
    return 0


def cmd_params(args) -> int:
    cfg = build_run_config(args)
    mcfg = cfg.model_config()
    pattern = mcfg.pattern
    c, d = mcfg.channels, mcfg.reduction
    r1, r2 = pattern.period
    lsa, hsa = lsa_param_count(c, r1, r2, d), hsa_param_count(c, r1, r2, d)
    rows = [
        {"quantity": "lsa_weights_formula", "value": lsa_formula(c, r1, r2, d)},
        {"quantity": "lsa_weights_realized", "value": lsa},
        {"quantity": "lsa_params_with_bias", "value": lsa_param_count(c, r1, r2, d, biases=True)},
        {"quantity": "hsa_weights_formula", "value": hsa_formula(c, r1, r2, d)},
        {"quantity": "hsa_weights_realized", "value": hsa},
        {"quantity": "hsa_params_with_bias", "value": hsa_param_count(c, r1, r2, d, biases=True)},
        {"quantity": "lsa_over_hsa", "value": lsa / hsa},
    ]
    for kind in ("none", "lsa", "hsa"):
        mcfg.attention = kind
        rows.append({"quantity": f"model_total_{kind}", "value": count_params(build_model(mcfg))[0]})
    _write_csv([{k: _fmt(v) for k, v in r.items()} for r in rows], args.out, sys.stdout)
    print(f"# LSA uses {lsa} weights vs {hsa} for HSA per attention site: "
          f"~{100 * (1 - lsa / hsa):.1f}% reduction", file=sys.stdout)
    return 0


# parser -----------------------------------------------------------------

def _add_train_flags(p, with_data=True):
    p.add_argument("--config", help="run configuration JSON")
    p.add_argument("--pattern", help="'RxC' for a row-major layout, or a pattern file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--no-interp-branch", action="store_true", help="ablation: drop the interpolation branch")
    p.add_argument("--attention", choices=("none", "lsa", "hsa"))
    p.add_argument("--channels", type=int)
    p.add_argument("--blocks", type=int)
    p.add_argument("--reduction", type=int)
    if with_data:
        p.add_argument("--manifest")
        p.add_argument("--sei-max", help=f"threshold value or preset name {sorted(SEI_MAX_PRESETS)}")
        p.add_argument("--transform-policy", choices=("shift", "mixed", "none"))
        p.add_argument("--supervised", action="store_true", help="ablation: train against ground truth")
        p.add_argument("--epochs", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--patch-size", type=int)
        p.add_argument("--batch-size", type=int)
        p.add_argument("--steps-per-epoch", type=int)
        p.add_argument("--sei-every", type=int)
    else:
        for name in ("manifest", "sei_max", "transform_policy", "supervised"):
            p.set_defaults(**{name: None})


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="usdemosaic", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="synthesize mosaics and ground-truth cubes")
    p.add_argument("cubes", nargs="*", help="source cube files")
    p.add_argument("--pattern", default="5x5")
    p.add_argument("--synthetic", type=int, default=0, help="number of procedural scenes to add")
    p.add_argument("--height", type=int, default=128)
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--complexity", type=int, default=3)
    p.add_argument("--source-bands", type=int, default=61)
    p.add_argument("--range", type=float, nargs=2, default=data.DEFAULT_RANGE, metavar=("LO", "HI"))
    p.add_argument("--fwhm", type=float)
    p.add_argument("--val", type=int, default=0, help="tag the first N outputs as validation")
    p.add_argument("--png", action="store_true")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="unsupervised (or supervised ablation) training")
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("demosaic", help="run a checkpoint on a mosaic file")
    p.add_argument("checkpoint")
    p.add_argument("mosaic")
    p.add_argument("--out")
    p.set_defaults(func=cmd_demosaic)

    p = sub.add_parser("evaluate", help="PSNR/SSIM/SAM/ERGAS against ground truth")
    p.add_argument("cubes", nargs="+")
    p.add_argument("--gt", nargs="+", required=True)
    p.add_argument("--ergas-ratio", type=float, default=1.0)
    p.add_argument("--out", help="also write the table to this CSV")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sei", help="self-evaluation index of cubes, or of a checkpoint on mosaics")
    p.add_argument("inputs", nargs="+")
    p.add_argument("--checkpoint")
    p.add_argument("--pattern")
    p.add_argument("--per-band", action="store_true")
    p.add_argument("--out")
    p.set_defaults(func=cmd_sei)

    p = sub.add_parser("sei-curve", help="extract the SEI curve from a run history")
    p.add_argument("history")
    p.add_argument("--plot", help="optional PNG path")
    p.add_argument("--out")
    p.set_defaults(func=cmd_sei_curve)

    p = sub.add_parser("params", help="parameter accounting, LSA vs HSA")
    _add_train_flags(p, with_data=False)
    p.set_defaults(func=cmd_params)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(levelname)s %(message)s")
    try:
        return args.func(args)
    except (CLIError, ValueError, OSError) as exc:
        print(f"usdemosaic {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
