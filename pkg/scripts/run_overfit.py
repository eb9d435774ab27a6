#!/usr/bin/env python3
"""Synthetic overfit experiment: memorize 20 noise-free windows.

Reproduces the capacity check from the verification suite and optionally
dumps the loss log and a checkpoint for inspection.
"""

import argparse
import json
from pathlib import Path

from trajkin.experiments import OVERFIT_SEED, run_overfit
from trajkin.losses import append_report
from trajkin.model import save_checkpoint


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--steps", type=int, default=500)
    parser.add_argument("--k", type=int, default=20)
    parser.add_argument("--windows", type=int, default=20)
    parser.add_argument("--seed", type=int, default=OVERFIT_SEED)
    parser.add_argument("--out-dir", default=None, help="write loss log + checkpoint here")
    args = parser.parse_args()

    result = run_overfit(steps=args.steps, k=args.k, n_windows=args.windows, seed=args.seed)
    smoothed = result.smoothed_total(block=50)
    print(f"train min-ADE {result.min_ade:.4f}  min-FDE {result.min_fde:.4f}")
    print("50-step smoothed total loss:", " ".join(f"{s:.3f}" for s in smoothed))
    print("strictly decreasing:", all(b < a for a, b in zip(smoothed, smoothed[1:])))

    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "loss_log.jsonl", "w") as fh:
            for i, r in enumerate(result.reports):
                append_report(fh, i, r)
        save_checkpoint(out / "overfit.pt", result.model, result.weights, extra={"seed": args.seed})
        with open(out / "summary.json", "w") as fh:
            json.dump({"min_ade": result.min_ade, "min_fde": result.min_fde, "smoothed": smoothed}, fh, indent=2)
        print(f"artifacts in {out}")


if __name__ == "__main__":
    main()
