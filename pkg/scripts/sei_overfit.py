"""Train on one small patch far past the best epoch and record SEI next to PSNR."""
import argparse
import csv
from pathlib import Path

import torch

from usdemosaic.experiments import DeskSetup, overfit_run


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--steps", type=int, default=6000)
    parser.add_argument("--patch", type=int, default=32)
    parser.add_argument("--lr", type=float, default=1e-3)
    parser.add_argument("--every", type=int, default=200)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", type=Path, default=Path("sei_overfit.csv"))
    parser.add_argument("--plot", type=Path, help="optional PNG (needs matplotlib)")
    args = parser.parse_args(argv)
    torch.set_num_threads(1)

    outcome = overfit_run(DeskSetup(), args.seed, args.steps, args.patch, args.lr, args.every)
    rows = [{"epoch": h["epoch"], "sei": h["sei"], "psnr": h["psnr"]} for h in outcome.history if "sei" in h]
    with open(args.out, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["epoch", "sei", "psnr"])
        writer.writeheader()
        writer.writerows(rows)
    best = max(rows, key=lambda r: r["psnr"])
    calm = min(rows, key=lambda r: r["sei"])
    print(f"max PSNR {best['psnr']:.2f} dB at step {best['epoch']}; "
          f"lowest SEI {calm['sei']:.3e} at step {calm['epoch']} ({calm['psnr']:.2f} dB); "
          f"final SEI {rows[-1]['sei']:.3e} ({rows[-1]['psnr']:.2f} dB)")
    if args.plot:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        fig, ax = plt.subplots(figsize=(6, 3.5))
        ax.plot([r["epoch"] for r in rows], [r["sei"] for r in rows], color="tab:red")
        ax.set_xlabel("step")
        ax.set_ylabel("SEI", color="tab:red")
        ax2 = ax.twinx()
        ax2.plot([r["epoch"] for r in rows], [r["psnr"] for r in rows], color="tab:blue")
        ax2.set_ylabel("PSNR (dB)", color="tab:blue")
        fig.tight_layout()
        fig.savefig(args.plot, dpi=120)


if __name__ == "__main__":
    main()
