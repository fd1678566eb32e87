"""Half-rate arbitrary-step experiment: train on offsets 1..3, score 1, 1.5, 2, 2.5, 3.

The series is resampled by keeping every other row; the dropped rows supply
ground truth for the fractional offsets.

    python scripts/arbitrary_step.py --seeds 0 1 2 3 4
"""
import argparse

import numpy as np

from etnode.experiments import DESK, desk_config, run_arbitrary_step


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    p.add_argument("--epochs", type=int, default=DESK["epochs"])
    args = p.parse_args()

    runs = [run_arbitrary_step(s, cfg=desk_config(s, epochs=args.epochs)) for s in args.seeds]
    offsets = runs[0]["offsets"]
    rmse = np.array([r["rmse"] for r in runs])
    base = np.array([r["persistence"] for r in runs])
    print(f"{'step':>6} {'rmse mean':>10} {'rmse std':>9} {'persistence':>12}")
    for k, m in enumerate(offsets):
        print(f"{m:>6g} {rmse[:, k].mean():>10.4f} {rmse[:, k].std():>9.4f} {base[:, k].mean():>12.4f}")


if __name__ == "__main__":
    main()
