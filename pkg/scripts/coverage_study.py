"""Coverage heatmap of the confidence region over the config's parameter grid.

    python3 scripts/coverage_study.py --config scripts/configs/smoke.json --out runs/mc
"""

import argparse
import warnings
from pathlib import Path

from otgmm.mc_harness import (
    LogitDGPConfig,
    heatmap_svg,
    run_coverage_study,
    write_coverage_csv,
    write_distance_csv,
)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default="scripts/configs/smoke.json")
    ap.add_argument("--out", type=Path, default=Path("runs/mc"))
    ap.add_argument("--threads", type=int, default=None)
    args = ap.parse_args()

    cfg = LogitDGPConfig.from_json(args.config)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        report = run_coverage_study(cfg, threads=args.threads)
    args.out.mkdir(parents=True, exist_ok=True)
    write_coverage_csv(report, args.out / "coverage.csv")
    write_distance_csv(report, args.out / "distance.csv")
    (args.out / "heatmap.svg").write_text(
        heatmap_svg(report.grid, report.coverage, f"coverage, {report.n_sims} simulations"))
    print(f"{report.n_sims} simulations ({report.n_failed} failed); results in {args.out}")


if __name__ == "__main__":
    main()
