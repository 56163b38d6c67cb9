"""Vehicle path-following under the MH attack on the position channels (line, circle, figure-8)."""
import argparse
from pathlib import Path

from mhfdia.trace import export
from mhfdia.vehicle import PATHS, VehicleRunConfig, run_vehicle_scenario, tracking_summary


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--attack", choices=("mh", "eig", "none"), default="mh")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="results/vehicle")
    args = ap.parse_args()
    for path in PATHS:
        cfg = VehicleRunConfig(path, attack=args.attack, seed=args.seed)
        tr = run_vehicle_scenario(cfg)
        export(tr, Path(args.out) / f"{path}_{args.attack}.csv")
        s = tracking_summary(tr, cfg.attack_start)
        print(f"{path:8s} nominal {s['nominal_max']:.4f} m  post-attack {s['post_max']:.4f} m  "
              f"max residual {s['max_residual']:.3f}  alarms {s['alarms']}")


if __name__ == "__main__":
    main()
