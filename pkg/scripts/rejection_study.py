"""Size and power of the bootstrap test in the desk-scale panel design.

Rejection rates at the population point where the regularized distance is
zero and at theta0 + (3, 3). With the default config this takes about ten
minutes per 50 replications on one core.

    python3 scripts/rejection_study.py --config scripts/configs/desk.json
"""

import argparse
import warnings

import numpy as np

from otgmm.mc_harness import LogitDGPConfig, population_regularized_point, run_rejection_study


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=None)
    ap.add_argument("--n-sims", type=int, default=None)
    ap.add_argument("--threads", type=int, default=None)
    args = ap.parse_args()

    cfg = LogitDGPConfig.from_json(args.config) if args.config else LogitDGPConfig()
    if args.n_sims:
        cfg.n_sims = args.n_sims
    interior = population_regularized_point(cfg)
    far = np.asarray(cfg.theta0) + 3.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        study = run_rejection_study(cfg, [interior, cfg.theta0, far], threads=args.threads,
                                    keep_results=False)
    for name, th, rate in zip(("interior", "theta0", "theta0+3"), study.points,
                              study.rejection_rate):
        print(f"{name:>9} {np.round(th, 4)}  rejection rate {rate:.3f}")
    print(f"{len(study.reps)} replications, failed: {study.failed_reps}")


if __name__ == "__main__":
    main()
