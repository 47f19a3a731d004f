"""Command-line interface: ``otgmm <command> [options]``.

Every command that takes ``--out`` writes its files there together with
``manifest.json``, which records the resolved arguments and SHA-256 hashes of
inputs and outputs; ``otgmm replay`` re-runs a manifest and compares hashes.
Exit codes: 0 success (or hypothesis accepted), 3 hypothesis rejected,
1 data or numerical error, 2 usage error.
"""

from __future__ import annotations

import argparse
import math
import sys
import tempfile
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from ._io import dump_json, read_matrix, sha256_file, write_table
from ._parallel import THREADS_ENV
from .direction_search import DistanceOptions
from .exceptions import OTGMMError
from .identified_set import ParamGrid, default_eta, estimate_identified_set, write_estimate_csv
from .inference import adjusted_bootstrap_test, bootstrap_test, confidence_region
from .measures import EmpiricalMeasure
from .models import MODELS, get_model
from .ot_core import CostTensor, sinkhorn

EXIT_OK, EXIT_DATA, EXIT_USAGE, EXIT_REJECT = 0, 1, 2, 3


# ------------------------------------------------------------ parsing ----

def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _axis(text: str) -> tuple[float, float, int]:
    parts = text.split(":")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"grid axis must be low:high:count, got {text!r}")
    try:
        lo, hi, cnt = float(parts[0]), float(parts[1]), int(parts[2])
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad grid axis {text!r}") from None
    if cnt < 1 or hi < lo:
        raise argparse.ArgumentTypeError(f"bad grid axis {text!r}")
    return lo, hi, cnt


def _positive(text: str) -> float:
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return v


def _alpha(text: str) -> float:
    v = float(text)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError(f"alpha must lie in (0, 1), got {text}")
    return v


def _add_common(p: argparse.ArgumentParser, out_required: bool = False) -> None:
    p.add_argument("--out", type=Path, required=out_required, help="output directory")
    p.add_argument("--threads", type=int, default=None,
                   help=f"worker threads (default: ${THREADS_ENV} or 1)")


def _add_data(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", choices=sorted(MODELS), default="benefit_share")
    p.add_argument("--x", type=Path, help="CSV of first-marginal sample points (one row per observation)")
    p.add_argument("--y", type=Path, help="CSV of second-marginal sample points")
    p.add_argument("--panel-dir", type=Path,
                   help="directory with wave1.csv, retainers.csv, refreshment.csv (panel_logit)")
    p.add_argument("--epsilon", type=_positive, default=0.1)
    p.add_argument("--tol", type=_positive, default=1e-9)
    p.add_argument("--max-iter", type=int, default=10_000)
    p.add_argument("--directions", type=int, default=None, help="direction grid resolution")


def _add_bootstrap(p: argparse.ArgumentParser) -> None:
    p.add_argument("--iota-scale", type=float, default=0.05)
    p.add_argument("--bootstrap", "-B", type=int, default=200, dest="B")
    p.add_argument("--alpha", type=_alpha, default=0.10)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--adjusted", action="store_true", help="use the bias-adjusted statistic")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="otgmm", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("sinkhorn", help="solve one entropic OT problem from a cost matrix")
    p.add_argument("cost", type=Path, help="CSV cost matrix")
    p.add_argument("mu", type=Path, nargs="?", help="CSV of row weights (last column); uniform if omitted")
    p.add_argument("nu", type=Path, nargs="?", help="CSV of column weights (last column)")
    p.add_argument("--epsilon", type=_positive, required=True)
    p.add_argument("--tol", type=_positive, default=1e-9)
    p.add_argument("--max-iter", type=int, default=10_000)
    p.add_argument("--coupling-out", type=Path)
    _add_common(p)

    p = sub.add_parser("test", help="bootstrap test of H0: theta = theta0")
    _add_data(p)
    p.add_argument("--theta0", type=_floats, required=True)
    _add_bootstrap(p)
    _add_common(p)

    p = sub.add_parser("idset", help="identified set estimate on a grid")
    _add_data(p)
    p.add_argument("--grid", type=_axis, action="append", required=True, help="low:high:count, once per axis")
    p.add_argument("--eta", type=_positive)
    p.add_argument("--eta-scale", type=_positive, default=0.5, help="c in c n^{-1/2} log n when --eta is absent")
    _add_common(p, out_required=True)

    p = sub.add_parser("region", help="confidence region by test inversion")
    _add_data(p)
    p.add_argument("--grid", type=_axis, action="append", required=True)
    _add_bootstrap(p)
    _add_common(p, out_required=True)

    p = sub.add_parser("logit-slope", help="componentwise slope bounds under attrition")
    p.add_argument("--panel-dir", type=Path, required=True)
    p.add_argument("--grid", type=_axis, action="append", required=True)
    p.add_argument("--epsilon", type=_positive, default=0.01)
    p.add_argument("--sharp", action="store_true", help="also report the distance-statistic membership")
    p.add_argument("--eta", type=_positive)
    _add_common(p, out_required=True)

    p = sub.add_parser("ame", help="AME bounds under attrition, profiled over the slope set")
    p.add_argument("--panel-dir", type=Path, required=True)
    p.add_argument("--grid", type=_axis, action="append", required=True)
    p.add_argument("--epsilon", type=_positive, default=0.01)
    p.add_argument("--grid-size", type=int, default=None)
    p.add_argument("--tau", type=int, default=1)
    p.add_argument("--j", type=int, default=1)
    _add_common(p, out_required=True)

    p = sub.add_parser("mc", help="Monte Carlo coverage study of the panel design")
    p.add_argument("--config", type=Path, help="JSON config (defaults to the desk-scale design)")
    p.add_argument("--n-sims", type=int, help="override the number of replications")
    p.add_argument("--svg", action="store_true", help="also write heatmap.svg")
    _add_common(p, out_required=True)

    p = sub.add_parser("rct-demo", help="support-function curves for the two-arm Gaussian example")
    p.add_argument("--n", type=int, default=4000)
    p.add_argument("--mu0", type=float, default=0.0)
    p.add_argument("--mu1", type=float, default=2.0)
    p.add_argument("--sigma", type=_positive, default=1.0)
    p.add_argument("--epsilon", type=_positive, default=0.01)
    p.add_argument("--theta", type=_floats, default=[0.3, 0.5, 0.683, 0.85, 1.0])
    p.add_argument("--u-points", type=int, default=41)
    p.add_argument("--seed", type=int, default=0)
    _add_common(p, out_required=True)

    p = sub.add_parser("replay", help="re-run a manifest and compare output hashes")
    p.add_argument("manifest", type=Path)
    p.add_argument("--out", type=Path, help="directory for the re-run (default: a temporary one)")
    return parser


# ------------------------------------------------------------ helpers ----

def _load_problem(args):
    """(model, mu, nu, n, resampler, inputs) for the data options of ``test``/``idset``/``region``."""
    if args.model == "panel_logit":
        from .panel_logit import panel_resampler, partitioned_problem, read_panel_csv

        if args.panel_dir is None:
            raise OTGMMError("panel_logit needs --panel-dir")
        data = read_panel_csv(args.panel_dir)
        prob = partitioned_problem(data)
        inputs = [args.panel_dir / f for f in ("wave1.csv", "retainers.csv", "refreshment.csv")]
        return prob.model, prob.mu, prob.nu, prob.n, panel_resampler(data), inputs
    if args.x is None or args.y is None:
        raise OTGMMError(f"model {args.model} needs --x and --y sample files")
    xs, ys = read_matrix(args.x), read_matrix(args.y)
    kwargs = {}
    if args.model == "zero":
        kwargs = {"d_x": xs.shape[1], "d_y": ys.shape[1]}
    model = get_model(args.model, **kwargs)
    mu, nu = EmpiricalMeasure.from_samples(xs), EmpiricalMeasure.from_samples(ys)
    return model, mu, nu, None, None, [args.x, args.y]


def _opts(args) -> DistanceOptions:
    return DistanceOptions(resolution=args.directions, tol=args.tol, max_iter=args.max_iter)


def _iota(args, n: int) -> float:
    return args.iota_scale * math.log(n) / math.sqrt(n)


def _write_manifest(args, argv, inputs, outputs, extra=None) -> None:
    if args.out is None:
        return
    config = {k: (str(v) if isinstance(v, Path) else v) for k, v in vars(args).items()}
    manifest = {
        "command": args.command,
        "argv": list(argv),
        "config": config,
        "version": __version__,
        "inputs": {str(p): sha256_file(p) for p in inputs},
        "outputs": {Path(p).name: sha256_file(p) for p in outputs},
    }
    if extra:
        manifest.update(extra)
    dump_json(manifest, args.out / "manifest.json")


def _prepare_out(args) -> None:
    if getattr(args, "out", None) is not None:
        args.out.mkdir(parents=True, exist_ok=True)


# ----------------------------------------------------------- commands ----

def cmd_sinkhorn(args, argv) -> int:
    C = read_matrix(args.cost)
    n, m = C.shape
    a = read_matrix(args.mu)[:, -1] if args.mu else np.full(n, 1.0 / n)
    b = read_matrix(args.nu)[:, -1] if args.nu else np.full(m, 1.0 / m)
    if len(a) != n or len(b) != m:
        raise OTGMMError(f"cost is {n}x{m} but weights have lengths {len(a)} and {len(b)}")
    mu = EmpiricalMeasure(np.arange(n, dtype=float), a / a.sum())
    nu = EmpiricalMeasure(np.arange(m, dtype=float), b / b.sum())
    res = sinkhorn(CostTensor(C, [1.0], [0.0]), mu, nu, args.epsilon, tol=args.tol,
                   max_iter=args.max_iter)
    summary = {"value": res.value, "transport_cost": res.transport_cost, "kl_term": res.kl_term,
               "iterations": res.iterations, "marginal_error": res.marginal_error,
               "converged": res.converged, "epsilon": args.epsilon}
    print(dump_json(summary))
    outputs = []
    if args.coupling_out:
        P = res.coupling
        write_table(args.coupling_out, [f"col_{j + 1}" for j in range(m)], P.tolist())
        outputs.append(args.coupling_out)
    if args.out:
        _prepare_out(args)
        dump_json(summary, args.out / "sinkhorn.json")
        outputs.append(args.out / "sinkhorn.json")
    inputs = [p for p in (args.cost, args.mu, args.nu) if p]
    _write_manifest(args, argv, inputs, outputs)
    return EXIT_OK


def cmd_test(args, argv) -> int:
    model, mu, nu, n, resampler, inputs = _load_problem(args)
    n_eff = n or mu.sample_size
    theta0 = np.asarray(args.theta0)
    if args.adjusted:
        if resampler is not None:
            raise OTGMMError("--adjusted is available for two-sample models only")
        res = adjusted_bootstrap_test(model, theta0, mu, nu, args.epsilon, iota=_iota(args, n_eff),
                                      B=args.B, alpha=args.alpha, seed=args.seed, opts=_opts(args),
                                      threads=args.threads)
    else:
        res = bootstrap_test(model, theta0, mu, nu, args.epsilon, iota=_iota(args, n_eff), B=args.B,
                             alpha=args.alpha, seed=args.seed, opts=_opts(args),
                             resampler=resampler, n=n, threads=args.threads)
    summary = res.summary()
    print(dump_json(summary))
    if args.out:
        _prepare_out(args)
        dump_json(summary, args.out / "test.json")
        write_table(args.out / "draws.csv", ["b", "draw"], list(enumerate(res.draws)))
        _write_manifest(args, argv, inputs, [args.out / "test.json", args.out / "draws.csv"])
    return EXIT_REJECT if res.reject else EXIT_OK


def cmd_idset(args, argv) -> int:
    model, mu, nu, n, _, inputs = _load_problem(args)
    n_eff = n or min(mu.sample_size, nu.sample_size)
    eta = args.eta if args.eta is not None else default_eta(n_eff, args.eta_scale)
    est = estimate_identified_set(model, mu, nu, ParamGrid(tuple(args.grid)), args.epsilon, eta,
                                  opts=_opts(args), threads=args.threads)
    _prepare_out(args)
    path = args.out / "identified_set.csv"
    write_estimate_csv(est, path)
    print(dump_json({"eta": eta, "members": int(est.members.sum()), "grid_points": len(est.members),
                     "warnings": est.warnings}))
    _write_manifest(args, argv, inputs, [path], {"eta": eta})
    return EXIT_OK


def cmd_region(args, argv) -> int:
    model, mu, nu, n, resampler, inputs = _load_problem(args)
    n_eff = n or mu.sample_size
    grid = ParamGrid(tuple(args.grid))
    region = confidence_region(model, mu, nu, grid, args.epsilon, iota=_iota(args, n_eff), B=args.B,
                               alpha=args.alpha, seed=args.seed, opts=_opts(args),
                               resampler=resampler, n=n, threads=args.threads,
                               adjust_epsilon=args.epsilon if args.adjusted else None)
    _prepare_out(args)
    path = args.out / "region.csv"
    k = grid.k
    write_table(path, [f"theta_{i + 1}" for i in range(k)]
                + ["d_hat", "statistic", "critical_value", "p_value", "accepted"],
                [[*th, r.d_hat, r.statistic, r.critical_value, r.p_value, not r.reject]
                 for th, r in zip(grid.points, region.per_point)])
    print(dump_json({"accepted": int(region.accepted.sum()), "grid_points": len(grid),
                     "alpha": args.alpha}))
    _write_manifest(args, argv, inputs, [path])
    return EXIT_OK


def _panel_inputs(d: Path) -> list[Path]:
    return [d / f for f in ("wave1.csv", "retainers.csv", "refreshment.csv")]


def cmd_logit_slope(args, argv) -> int:
    from .panel_logit import read_panel_csv, slope_identified_set, write_slope_csv

    data = read_panel_csv(args.panel_dir)
    res = slope_identified_set(data, ParamGrid(tuple(args.grid)), args.epsilon, sharp=args.sharp,
                               eta=args.eta)
    _prepare_out(args)
    path = args.out / "slope_bounds.csv"
    write_slope_csv(res, path)
    print(dump_json({"members": int(res.members.sum()), "grid_points": len(res.members),
                     "p_hat": data.p_hat}))
    _write_manifest(args, argv, _panel_inputs(args.panel_dir), [path])
    return EXIT_OK


def cmd_ame(args, argv) -> int:
    from .panel_logit import ame_bounds_attrition, read_panel_csv, slope_identified_set, write_ame_csv

    data = read_panel_csv(args.panel_dir)
    slope = slope_identified_set(data, ParamGrid(tuple(args.grid)), args.epsilon)
    if not slope.members.any():
        raise OTGMMError("the slope identified set is empty on this grid")
    res = ame_bounds_attrition(data, slope, args.epsilon, grid_size=args.grid_size, tau=args.tau,
                               j=args.j)
    _prepare_out(args)
    path = args.out / "ame_intervals.csv"
    write_ame_csv(res, path)
    print(dump_json({"union": res.union, "grid_points": len(res.intervals)}))
    _write_manifest(args, argv, _panel_inputs(args.panel_dir), [path], {"union": res.union})
    return EXIT_OK


def cmd_mc(args, argv) -> int:
    from .mc_harness import (
        LogitDGPConfig,
        heatmap_svg,
        run_coverage_study,
        write_coverage_csv,
        write_distance_csv,
    )

    config = LogitDGPConfig.from_json(args.config) if args.config else LogitDGPConfig()
    if args.n_sims is not None:
        config.n_sims = args.n_sims
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        report = run_coverage_study(config, threads=args.threads)
    _prepare_out(args)
    outputs = [args.out / "coverage.csv", args.out / "distance.csv"]
    write_coverage_csv(report, outputs[0])
    write_distance_csv(report, outputs[1])
    config.to_json(args.out / "config.json")
    if args.svg and report.grid.k == 2:
        (args.out / "heatmap.svg").write_text(
            heatmap_svg(report.grid, report.coverage, f"coverage, {report.n_sims} simulations"))
        outputs.append(args.out / "heatmap.svg")
    print(dump_json({"n_sims": report.n_sims, "n_failed": report.n_failed}))
    inputs = [args.config] if args.config else []
    _write_manifest(args, argv, inputs, outputs)
    return EXIT_OK


def cmd_rct_demo(args, argv) -> int:
    from .mc_harness import run_rct_demo, write_rct_csv

    rows = run_rct_demo(args.n, args.mu0, args.mu1, args.sigma, args.epsilon, args.theta,
                        args.seed, args.u_points)
    _prepare_out(args)
    path = args.out / "curves.csv"
    write_rct_csv(rows, path)
    _write_manifest(args, argv, [], [path])
    return EXIT_OK


def cmd_replay(args, argv) -> int:
    import json

    manifest = json.loads(Path(args.manifest).read_text())
    old_argv = list(manifest["argv"])
    out = args.out or Path(tempfile.mkdtemp(prefix="otgmm-replay-"))
    if "--out" in old_argv:
        old_argv[old_argv.index("--out") + 1] = str(out)
    else:
        old_argv += ["--out", str(out)]
    code = main(old_argv)
    fresh = json.loads((out / "manifest.json").read_text())["outputs"]
    mismatched = sorted(k for k, v in manifest["outputs"].items() if fresh.get(k) != v)
    print(dump_json({"replayed": str(out), "exit_code": code, "mismatched": mismatched}))
    return EXIT_OK if not mismatched else EXIT_DATA


COMMANDS = {
    "sinkhorn": cmd_sinkhorn, "test": cmd_test, "idset": cmd_idset, "region": cmd_region,
    "logit-slope": cmd_logit_slope, "ame": cmd_ame, "mc": cmd_mc, "rct-demo": cmd_rct_demo,
    "replay": cmd_replay,
}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args, argv)
    except (OTGMMError, ValueError, OSError) as exc:
        print(f"otgmm {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
