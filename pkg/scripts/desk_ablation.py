"""Desk-scale ablations: USD (mixed / shift-only), no interpolation branch, supervised.

Writes one CSV row per (variant, seed) plus per-variant means, with the WB
baseline for reference. Each run takes several minutes on one CPU core.
"""
import argparse
import csv
import sys
from pathlib import Path

import numpy as np
import torch

from usdemosaic.experiments import DeskSetup, desk_data, desk_run

VARIANTS = {
    "usd_mixed": {},
    "usd_shift": {"policy": "shift"},
    "no_interp_branch": {"interp_branch": False},
    "supervised": {"supervised": True},
    "usd_hsa": {"attention": "hsa"},
    "usd_no_attention": {"attention": "none"},
}


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--variants", nargs="+", default=["usd_mixed", "usd_shift", "no_interp_branch", "supervised"],
                        choices=sorted(VARIANTS))
    parser.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    parser.add_argument("--steps", type=int, default=DeskSetup.steps)
    parser.add_argument("--out", type=Path, default=Path("desk_ablation.csv"))
    args = parser.parse_args(argv)
    torch.set_num_threads(1)

    setup = DeskSetup(steps=args.steps)
    data = desk_data(setup)
    wb = data.wb_psnr()
    rows = []
    for name in args.variants:
        scores = []
        for seed in args.seeds:
            outcome = desk_run(setup, seed, data, **VARIANTS[name])
            scores.append(outcome.psnr)
            rows.append({"variant": name, "seed": seed, "psnr": f"{outcome.psnr:.3f}",
                         "gain_over_wb": f"{outcome.psnr - wb:+.3f}", "seconds": f"{outcome.seconds:.0f}"})
            print(rows[-1], file=sys.stderr, flush=True)
        rows.append({"variant": name, "seed": "mean", "psnr": f"{np.mean(scores):.3f}",
                     "gain_over_wb": f"{np.mean(scores) - wb:+.3f}", "seconds": ""})
    rows.append({"variant": "wb", "seed": "", "psnr": f"{wb:.3f}", "gain_over_wb": "+0.000", "seconds": ""})
    with open(args.out, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
        writer.writeheader()
        writer.writerows(rows)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
