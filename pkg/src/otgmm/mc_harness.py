"""Seeded simulation designs and experiment drivers.

Two designs are covered: Gaussian outcomes in a two-arm randomized trial (the
benefit-share example) and a two-period fixed-effects logit with discrete
covariates, completely-at-random attrition and a refreshment sample.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from numpy.polynomial.hermite_e import hermegauss
from scipy.optimize import fsolve

from ._io import write_table
from .direction_search import DistanceOptions, make_support_function
from .identified_set import ParamGrid
from .inference import bootstrap_test
from .measures import EmpiricalMeasure
from .models import BenefitShareModel, PanelLogitScoreModel
from .panel_logit import PanelData, naive_problem, panel_resampler, partitioned_problem

log = logging.getLogger(__name__)


@dataclass
class LogitDGPConfig:
    """Panel logit design plus the solver settings of a coverage run."""

    theta0: tuple[float, ...] = (1.0, 2.0)
    supports: tuple[tuple[float, ...], ...] = ((0.42, 0.55, 0.60), (0.54, 0.65, 0.72))
    n_org: int = 2000
    n_ref: int = 2000
    attrition_rate: float = 0.10
    n_sims: int = 50
    seed: int = 0
    epsilon: float = 0.1
    iota_scale: float = 0.05
    B: int = 200
    alpha: float = 0.10
    grid: tuple[tuple[float, float, int], ...] = ((-0.5, 2.5, 7), (0.5, 3.5, 7))
    design: str = "partitioned"
    directions: int = 64

    def __post_init__(self) -> None:
        self.theta0 = tuple(float(v) for v in self.theta0)
        self.supports = tuple(tuple(float(a) for a in s) for s in self.supports)
        self.grid = tuple((float(a), float(b), int(c)) for a, b, c in self.grid)
        if len(self.supports) != len(self.theta0):
            raise ValueError("one covariate support per slope coefficient is required")
        if any(len(s) == 0 for s in self.supports):
            raise ValueError("covariate supports must be nonempty")
        if not 0 <= self.attrition_rate < 1:
            raise ValueError("attrition_rate must lie in [0, 1)")
        if self.design not in ("partitioned", "naive"):
            raise ValueError(f"unknown design {self.design!r}")

    @property
    def k(self) -> int:
        return len(self.theta0)

    def to_json(self, path=None) -> str:
        text = json.dumps(asdict(self), indent=2)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text

    @classmethod
    def from_json(cls, source) -> LogitDGPConfig:
        """Load from a JSON string or file path; unknown keys are rejected."""
        text = str(source) if str(source).lstrip().startswith("{") else Path(source).read_text()
        return cls(**json.loads(text))

    def param_grid(self) -> ParamGrid:
        return ParamGrid(self.grid)


def _covariates(rng: np.random.Generator, supports, n: int) -> np.ndarray:
    return np.column_stack([np.asarray(s)[rng.integers(len(s), size=n)] for s in supports])


def _logistic(rng: np.random.Generator, size) -> np.ndarray:
    v = rng.random(size)
    return np.log(v / (1.0 - v))


def simulate_panel_logit(config: LogitDGPConfig, rep: int) -> PanelData:
    """One panel from ``Y_t = 1{X_t'theta0 + alpha - e_t > 0}`` with MCAR attrition.

    The stream is ``default_rng([config.seed, rep])`` and draws are taken in a
    fixed order, so ``(config, rep)`` determines the data exactly.
    """
    rng = np.random.default_rng([config.seed, rep])
    th = np.asarray(config.theta0)
    n = config.n_org
    x1 = _covariates(rng, config.supports, n)
    x2 = _covariates(rng, config.supports, n)
    alpha = rng.standard_normal(n)
    e = _logistic(rng, (n, 2))
    y1 = (x1 @ th + alpha - e[:, 0] > 0).astype(float)
    y2 = (x2 @ th + alpha - e[:, 1] > 0).astype(float)
    retained = rng.random(n) >= config.attrition_rate
    m = config.n_ref
    x_ref = _covariates(rng, config.supports, m)
    y_ref = (x_ref @ th + rng.standard_normal(m) - _logistic(rng, m) > 0).astype(float)
    return PanelData.from_arrays(y1, x1, retained, y2[retained], x2[retained], y_ref, x_ref)


def complete_pairs(config: LogitDGPConfig, n: int, seed: int = 0):
    """``n`` complete two-period records without attrition: ``(y1, x1, y2, x2)``."""
    rng = np.random.default_rng([config.seed, seed, 1])
    th = np.asarray(config.theta0)
    x1 = _covariates(rng, config.supports, n)
    x2 = _covariates(rng, config.supports, n)
    alpha = rng.standard_normal(n)
    e = _logistic(rng, (n, 2))
    return ((x1 @ th + alpha - e[:, 0] > 0).astype(float), x1,
            (x2 @ th + alpha - e[:, 1] > 0).astype(float), x2)


# ----------------------------------------------- population quantities ----

def covariate_cells(config: LogitDGPConfig) -> np.ndarray:
    grids = np.meshgrid(*config.supports, indexing="ij")
    return np.column_stack([g.ravel() for g in grids])


def population_joint(config: LogitDGPConfig, nodes: int = 80):
    """Population law of ``(y1, x1, y2, x2)`` by Gauss-Hermite integration over the fixed effect.

    Returns ``(atoms, joint)`` with ``atoms`` the ``(y, x)`` rows and
    ``joint[i, j] = P((y1, x1) = atoms[i], (y2, x2) = atoms[j])``.
    """
    z, w = hermegauss(nodes)
    w = w / w.sum()
    cells = covariate_cells(config)
    px = 1.0 / len(cells)
    th = np.asarray(config.theta0)
    lam = 1.0 / (1.0 + np.exp(-(cells @ th)[:, None] - z[None, :]))  # (cells, nodes)
    atoms = np.vstack([np.column_stack([np.zeros(len(cells)), cells]),
                       np.column_stack([np.ones(len(cells)), cells])])
    pr = np.vstack([1.0 - lam, lam])  # P(y | x, alpha) aligned with atoms
    joint = (pr * w) @ pr.T * px * px
    return atoms, joint


def population_regularized_point(config: LogitDGPConfig, x0=None) -> np.ndarray:
    """Parameter at which the population distance of the partitioned design is zero for every epsilon.

    With positive regularization the distance vanishes exactly where the
    moment averaged under the independent coupling of the attriter marginals,
    combined with the retainers' moment, is zero. Under completely-at-random
    attrition both attriter marginals equal the population marginals.
    """
    atoms, joint = population_joint(config)
    f1, f2 = joint.sum(axis=1), joint.sum(axis=0)
    p = 1.0 - config.attrition_rate
    model = PanelLogitScoreModel(config.k)

    def moment(th):
        phi = model.phi_tensor(atoms, atoms, th)
        ret = np.tensordot(joint, phi, axes=([0, 1], [0, 1]))
        ind = np.tensordot(np.outer(f1, f2), phi, axes=([0, 1], [0, 1]))
        if config.design == "naive":
            return ind
        return p * ret + (1 - p) * ind

    start = np.asarray(config.theta0 if x0 is None else x0, dtype=float)
    sol, info, ier, msg = fsolve(moment, start, full_output=True, xtol=1e-12)
    if ier != 1:
        raise RuntimeError(f"root search failed: {msg}")
    return sol


# ------------------------------------------------------------ RCT demo ----

def rct_samples(n: int, mu0: float, mu1: float, sigma: float, seed: int):
    rng = np.random.default_rng(seed)
    y0 = rng.normal(mu0, sigma, n)
    y1 = rng.normal(mu1, sigma, n)
    return EmpiricalMeasure.from_samples(y0), EmpiricalMeasure.from_samples(y1)


def run_rct_demo(n: int = 4000, mu0: float = 0.0, mu1: float = 2.0, sigma: float = 1.0,
                 epsilon: float = 0.01, theta_list=(0.3, 0.5, 0.683, 0.85, 1.0), seed: int = 0,
                 u_points: int = 41) -> list[tuple[float, float, float]]:
    """Curves ``u -> c_theta(u)`` on a grid of ``[-1, 1]``, one per ``theta``.

    The benefit-share parameter enters additively, so one set of transport
    solves at ``theta = 0`` serves every curve.
    """
    if n < 100:
        raise ValueError("n must be at least 100")
    mu, nu = rct_samples(n, mu0, mu1, sigma, seed)
    model = BenefitShareModel()
    opts = DistanceOptions()
    cache: dict = {}
    us = np.union1d(np.linspace(-1.0, 1.0, u_points), [0.0])
    rows = []
    for th in theta_list:
        sf = make_support_function(model, th, mu, nu, epsilon, opts, cache=cache)
        rows.extend((float(th), float(u), sf.evaluate([u]).value) for u in us)
    return rows


def write_rct_csv(rows, path) -> None:
    write_table(path, ["theta", "u", "c_value"], rows)


# ------------------------------------------------------- coverage study ----

@dataclass
class RejectionStudy:
    points: np.ndarray
    reject: np.ndarray        # (n_ok, n_points) booleans at the study's alpha
    d_values: np.ndarray      # (n_ok, n_points)
    statistics: np.ndarray
    critical_values: np.ndarray
    reps: list[int]
    failed_reps: list[int] = field(default_factory=list)
    results: list = field(default_factory=list, repr=False)

    @property
    def rejection_rate(self) -> np.ndarray:
        return self.reject.mean(axis=0)

    def reject_at(self, alpha: float) -> np.ndarray:
        return np.array([[r.at_alpha(alpha).reject for r in row] for row in self.results])


@dataclass
class CoverageReport:
    grid: ParamGrid
    mean_distance: np.ndarray
    coverage: np.ndarray
    n_sims: int
    n_failed: int = 0
    study: RejectionStudy | None = field(default=None, repr=False)


def _problem(config: LogitDGPConfig, data: PanelData):
    return partitioned_problem(data) if config.design == "partitioned" else naive_problem(data)


def run_rejection_study(config: LogitDGPConfig, points, reps=None, threads: int | None = None,
                        keep_results: bool = True) -> RejectionStudy:
    """Bootstrap tests at fixed parameter values over seeded replications.

    Replication ``r`` simulates with ``(config.seed, r)``; the test at point
    ``i`` uses bootstrap seed ``(config.seed, r, i)``. Replications that raise
    are logged and excluded.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    reps = list(range(config.n_sims)) if reps is None else list(reps)
    opts = DistanceOptions(resolution=config.directions)
    iota = config.iota_scale * math.log(config.n_org) / math.sqrt(config.n_org)
    rej, dv, st, cv, ok, failed, kept = [], [], [], [], [], [], []
    for r in reps:
        try:
            data = simulate_panel_logit(config, r)
            prob = _problem(config, data)
            resampler = panel_resampler(data, config.design)
            res = [bootstrap_test(prob.model, th, prob.mu, prob.nu, config.epsilon, iota=iota,
                                  B=config.B, alpha=config.alpha, seed=(config.seed, r, i),
                                  opts=opts, resampler=resampler, n=prob.n, threads=threads)
                   for i, th in enumerate(points)]
        except Exception as exc:  # noqa: BLE001 - a replication may fail for any reason
            log.warning("replication %d failed: %s", r, exc)
            failed.append(r)
            continue
        ok.append(r)
        rej.append([x.reject for x in res])
        dv.append([x.d_hat for x in res])
        st.append([x.statistic for x in res])
        cv.append([x.critical_value for x in res])
        if keep_results:
            for x in res:
                x.distance = None
            kept.append(res)
    shape = (len(ok), len(points))
    return RejectionStudy(points, np.array(rej, dtype=bool).reshape(shape),
                          np.array(dv).reshape(shape), np.array(st).reshape(shape),
                          np.array(cv).reshape(shape), ok, failed, kept)


def run_coverage_study(config: LogitDGPConfig, grid: ParamGrid | None = None,
                       threads: int | None = None) -> CoverageReport:
    """Coverage of each grid point by the confidence region, across replications."""
    if config.n_sims < 10:
        raise ValueError("n_sims must be at least 10")
    grid = grid or config.param_grid()
    study = run_rejection_study(config, grid.points, threads=threads)
    return CoverageReport(grid, study.d_values.mean(axis=0), 1.0 - study.rejection_rate,
                          len(study.reps), len(study.failed_reps), study)


def write_coverage_csv(report: CoverageReport, path) -> None:
    k = report.grid.k
    write_table(path, [f"theta_{i + 1}" for i in range(k)] + ["coverage", "mean_distance"],
                [[*th, c, d] for th, c, d in zip(report.grid.points, report.coverage,
                                                 report.mean_distance)])


def write_distance_csv(report: CoverageReport, path) -> None:
    s = report.study
    k = report.grid.k
    rows = []
    for a, r in enumerate(s.reps):
        for i, th in enumerate(report.grid.points):
            rows.append([*th, r, s.d_values[a, i], s.statistics[a, i], s.critical_values[a, i],
                         not s.reject[a, i]])
    write_table(path, [f"theta_{i + 1}" for i in range(k)]
                + ["rep", "d_hat", "statistic", "critical_value", "accepted"], rows)


def heatmap_svg(grid: ParamGrid, values, title: str = "", cell: int = 40) -> str:
    """Self-contained SVG of a 2-D grid; fill is linear from white (0) to dark blue (1)."""
    if grid.k != 2:
        raise ValueError("heatmaps need a two-dimensional grid")
    n1, n2 = grid.shape
    vals = np.clip(np.asarray(values, dtype=float).reshape(n1, n2), 0.0, 1.0)
    pad = 60
    width, height = pad + n1 * cell + 20, pad + n2 * cell + 40
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'font-family="sans-serif" font-size="10">',
           f'<text x="{pad}" y="16" font-size="12">{title}</text>']
    a1, a2 = grid.axis_values(0), grid.axis_values(1)
    for i in range(n1):
        for j in range(n2):
            v = vals[i, j]
            rgb = tuple(int(round(255 + (c - 255) * v)) for c in (8, 48, 107))
            x, y = pad + i * cell, 24 + (n2 - 1 - j) * cell
            out.append(f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" '
                       f'fill="rgb{rgb}" stroke="#999" stroke-width="0.5"/>')
            color = "white" if v > 0.5 else "black"
            out.append(f'<text x="{x + cell / 2}" y="{y + cell / 2 + 3}" text-anchor="middle" '
                       f'fill="{color}">{v:.2f}</text>')
    for i, v in enumerate(a1):
        out.append(f'<text x="{pad + i * cell + cell / 2}" y="{24 + n2 * cell + 14}" '
                   f'text-anchor="middle">{v:.2f}</text>')
    for j, v in enumerate(a2):
        out.append(f'<text x="{pad - 6}" y="{24 + (n2 - 1 - j) * cell + cell / 2 + 3}" '
                   f'text-anchor="end">{v:.2f}</text>')
    out.append(f'<text x="{pad + n1 * cell / 2}" y="{height - 6}" text-anchor="middle">theta_1</text>')
    out.append(f'<text x="12" y="{24 + n2 * cell / 2}" transform="rotate(-90 12 {24 + n2 * cell / 2})" '
               f'text-anchor="middle">theta_2</text>')
    out.append("</svg>")
    return "\n".join(out)
