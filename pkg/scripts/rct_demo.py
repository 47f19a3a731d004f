"""Support-function curves for the two-arm Gaussian example and the Makarov comparison.

    python3 scripts/rct_demo.py --out runs/rct
"""

import argparse
from pathlib import Path

from otgmm.mc_harness import run_rct_demo, write_rct_csv
from otgmm.models import makarov_bounds


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=4000)
    ap.add_argument("--epsilon", type=float, default=0.01)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, default=Path("runs/rct"))
    args = ap.parse_args()

    rows = run_rct_demo(args.n, 0.0, 2.0, 1.0, args.epsilon, seed=args.seed)
    args.out.mkdir(parents=True, exist_ok=True)
    write_rct_csv(rows, args.out / "curves.csv")
    # c_0(1) estimates the smallest attainable P(Y1 >= Y0)
    low = next(c for th, u, c in rows if th == rows[0][0] and u == 1.0) + rows[0][0]
    print(f"entropic estimate of the lower bound: {low:.4f}")
    print(f"Makarov bounds: {makarov_bounds(0.0, 2.0, 1.0)}")
    print(f"curves written to {args.out / 'curves.csv'}")


if __name__ == "__main__":
    main()
