"""Parameter sweeps on the grid scenario (M at two step sizes, attack-support size, window length).

    python scripts/sweeps.py --which M --reps 20
    MHFDIA_THREADS=8 python scripts/sweeps.py --which support_size --reps 50
"""
import argparse
from pathlib import Path

from mhfdia.harness import SweepSpec, load_config, sweep
from mhfdia.trace import export

ROOT = Path(__file__).resolve().parents[1]

PLANS = {
    "M": [({"lambda0": 1e-4}, (100, 500, 1000, 2131, 5000)), ({"lambda0": 1e-3}, (100, 300, 1000, 2131))],
    "support_size": [({}, (1, 3, 5, 7, 10, 13, 15, 17, 19))],
    "T": [({}, (5, 10, 20, 30))],
    "lambda0": [({}, (1e-5, 1e-4, 1e-3, 1e-2))],
}


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--which", choices=sorted(PLANS), default="M")
    ap.add_argument("--reps", type=int, default=20)
    ap.add_argument("--config", default=ROOT / "configs" / "grid.ini")
    ap.add_argument("--out", default="results/sweeps")
    args = ap.parse_args()
    for overrides, values in PLANS[args.which]:
        base = load_config(args.config, overrides)
        table, _ = sweep(SweepSpec(args.which, values, reps=args.reps), base)
        tag = "_".join(f"{k}{v:g}" for k, v in overrides.items())
        path = export(table, Path(args.out) / f"{args.which}{'_' + tag if tag else ''}.csv")
        print(f"-- {args.which} {overrides} -> {path}")
        for row in table.rows:
            r = dict(zip(table.columns, row))
            print(f"  {r['value']:>8g}: mean {r['eff_mean']:.4f} [{r['eff_min']:.4f}, {r['eff_max']:.4f}]  "
                  f"max residual {r['stealth_max']:.4f}  infeasible windows {int(r['infeasible_windows'])}")


if __name__ == "__main__":
    main()
