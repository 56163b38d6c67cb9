"""Grid loop under bounded noise: the two budget rules for splitting the threshold between noise and attack.

The quadrature rule spends sqrt(eps^2 - eps_v^2) and can alarm when the noise aligns with the
attack residual; the triangle rule spends eps - eps_v and cannot.
"""
import argparse
from pathlib import Path

import numpy as np

from mhfdia.harness import load_config, run

ROOT = Path(__file__).resolve().parents[1]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--epsilon-v", type=float, default=0.2)
    ap.add_argument("--seeds", type=int, default=5)
    args = ap.parse_args()
    for budget in ("quadrature", "triangle"):
        alarms, worst = 0, 0.0
        for seed in range(args.seeds):
            cfg = load_config(ROOT / "configs" / "grid.ini", {
                "budget": budget, "epsilon_v": args.epsilon_v, "noise": "uniform-ball", "seed": seed})
            tr = run(cfg)
            alarms += int(tr.column("alarm").sum())
            worst = max(worst, float(np.nanmax(tr.column("residual"))))
        print(f"{budget:8s} alarms {alarms:5d}  max residual {worst:.4f}  (delta {cfg.delta})")


if __name__ == "__main__":
    main()
