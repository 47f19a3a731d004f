"""Two-period fixed-effects logit with attrition and a refreshment sample.

Retainers are observed in both waves, so their joint law is kept as observed.
Attriters are seen in wave 1 only; their wave-2 law is recovered from the
refreshment sample by the law of total probability, and the two attriter
marginals are coupled by entropic optimal transport. Covariates are discrete,
so every marginal is a probability mass function over ``(y, x)`` atoms.

The second half of the module builds Chebyshev outer bounds for the average
marginal effect and extends them to the attrition design.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import NamedTuple

import numpy as np

from ._io import read_table, write_table
from .direction_search import DistanceOptions, distance_statistic
from .exceptions import InvalidInputError, NumericalInputError
from .identified_set import ParamGrid, default_eta
from .measures import EmpiricalMeasure
from .models import MomentModel, PanelLogitScoreModel
from .ot_core import CostTensor, sinkhorn

CLIP_WARNING = 0.1


# ---------------------------------------------------------------- data ----

@dataclass
class PanelData:
    """Wave-1 panel, wave-2 records of the retainers, and a refreshment sample.

    ``ret_ids`` refer to ``unit_ids``. Outcomes are 0/1 and covariate rows have
    ``k`` columns in every block.
    """

    unit_ids: np.ndarray
    y1: np.ndarray
    x1: np.ndarray
    ret_ids: np.ndarray
    y2: np.ndarray
    x2: np.ndarray
    y_ref: np.ndarray
    x_ref: np.ndarray
    ret_rows: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.unit_ids = np.asarray(self.unit_ids).astype(np.int64)
        self.ret_ids = np.asarray(self.ret_ids).astype(np.int64).reshape(-1)
        self.y1, self.y2, self.y_ref = (np.asarray(v, dtype=float).reshape(-1)
                                        for v in (self.y1, self.y2, self.y_ref))
        x1 = np.asarray(self.x1, dtype=float)
        self.x1 = x1[:, None] if x1.ndim == 1 else x1
        k = self.x1.shape[1]
        self.x2 = np.asarray(self.x2, dtype=float).reshape(-1, k)
        self.x_ref = np.asarray(self.x_ref, dtype=float).reshape(-1, k)
        for name, y, x in (("wave1", self.y1, self.x1), ("retainers", self.y2, self.x2),
                           ("refreshment", self.y_ref, self.x_ref)):
            if x.shape != (len(y), k):
                raise InvalidInputError(f"{name}: covariates have shape {x.shape}, expected ({len(y)}, {k})")
            bad = ~np.isin(y, (0.0, 1.0))
            if bad.any():
                raise InvalidInputError(f"{name}: outcome at row {int(np.argmax(bad))} is not 0/1")
        if len(self.unit_ids) != len(self.y1):
            raise InvalidInputError("unit_ids and wave-1 outcomes differ in length")
        if len(np.unique(self.unit_ids)) != len(self.unit_ids):
            raise InvalidInputError("duplicate unit ids in wave 1")
        if len(np.unique(self.ret_ids)) != len(self.ret_ids):
            raise InvalidInputError("duplicate unit ids among retainers")
        if len(self.ret_ids) != len(self.y2):
            raise InvalidInputError("retainer ids and wave-2 outcomes differ in length")
        pos = {int(u): i for i, u in enumerate(self.unit_ids)}
        try:
            self.ret_rows = np.array([pos[int(u)] for u in self.ret_ids], dtype=np.int64)
        except KeyError as exc:
            raise InvalidInputError(f"retainer unit {exc.args[0]} not present in wave 1") from None

    @classmethod
    def from_arrays(cls, y1, x1, retained, y2, x2, y_ref, x_ref) -> PanelData:
        """Build from wave-1 arrays plus a retention mask; ``y2, x2`` are rows of the retained units."""
        retained = np.asarray(retained, dtype=bool)
        ids = np.arange(len(retained))
        return cls(ids, y1, x1, ids[retained], y2, x2, y_ref, x_ref)

    @property
    def k(self) -> int:
        return self.x1.shape[1]

    @property
    def n_org(self) -> int:
        return len(self.y1)

    @property
    def n_ret(self) -> int:
        return len(self.ret_ids)

    @property
    def n_ref(self) -> int:
        return len(self.y_ref)

    @property
    def p_hat(self) -> float:
        return self.n_ret / self.n_org

    @property
    def attriter_rows(self) -> np.ndarray:
        mask = np.ones(self.n_org, dtype=bool)
        mask[self.ret_rows] = False
        return np.flatnonzero(mask)

    def retainer_pairs(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        r = self.ret_rows
        return self.y1[r], self.x1[r], self.y2, self.x2

    def resample(self, rng: np.random.Generator) -> PanelData:
        """Nonparametric bootstrap: wave-1 units (with their wave-2 records) and the refreshment sample."""
        rows = rng.integers(self.n_org, size=self.n_org)
        ref = rng.integers(self.n_ref, size=self.n_ref)
        ret_pos = np.full(self.n_org, -1)
        ret_pos[self.ret_rows] = np.arange(self.n_ret)
        drawn_ret = ret_pos[rows]
        keep = drawn_ret >= 0
        ids = np.arange(self.n_org)
        return PanelData(ids, self.y1[rows], self.x1[rows], ids[keep],
                         self.y2[drawn_ret[keep]], self.x2[drawn_ret[keep]],
                         self.y_ref[ref], self.x_ref[ref])


def write_panel_csv(data: PanelData, directory) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    xs = [f"x1_{i + 1}" for i in range(data.k)]
    x2s = [f"x2_{i + 1}" for i in range(data.k)]
    write_table(d / "wave1.csv", ["unit_id", "y1", *xs],
                [[int(u), int(y), *x] for u, y, x in zip(data.unit_ids, data.y1, data.x1)])
    write_table(d / "retainers.csv", ["unit_id", "y2", *x2s],
                [[int(u), int(y), *x] for u, y, x in zip(data.ret_ids, data.y2, data.x2)])
    write_table(d / "refreshment.csv", ["y2", *x2s],
                [[int(y), *x] for y, x in zip(data.y_ref, data.x_ref)])


def read_panel_csv(directory) -> PanelData:
    d = Path(directory)
    w1 = read_table(d / "wave1.csv", ["unit_id", "y1"])
    k = sum(1 for c in w1 if c.startswith("x1_"))
    if k == 0:
        raise InvalidInputError(f"{d / 'wave1.csv'}: no covariate columns x1_1..x1_k")
    x2cols = [f"x2_{i + 1}" for i in range(k)]
    ret = read_table(d / "retainers.csv", ["unit_id", "y2", *x2cols])
    ref = read_table(d / "refreshment.csv", ["y2", *x2cols])
    return PanelData(
        w1["unit_id"], w1["y1"], np.column_stack([w1[f"x1_{i + 1}"] for i in range(k)]),
        ret["unit_id"], ret["y2"], np.column_stack([ret[c] for c in x2cols]).reshape(-1, k),
        ref["y2"], np.column_stack([ref[c] for c in x2cols]).reshape(-1, k),
    )


# ---------------------------------------------------------- marginals ----

@dataclass
class DiscretePMF:
    """Probability mass function on unique ``(y, x_1..x_k)`` atoms (one per row)."""

    support: np.ndarray
    probs: np.ndarray
    clipped_mass: float = 0.0

    def __post_init__(self) -> None:
        self.support = np.atleast_2d(np.asarray(self.support, dtype=float))
        self.probs = np.asarray(self.probs, dtype=float).reshape(-1)
        if len(self.support) != len(self.probs):
            raise InvalidInputError("support and probs differ in length")
        if np.any(self.probs < 0):
            raise InvalidInputError("negative probability")
        if abs(self.probs.sum() - 1.0) > 1e-12:
            raise InvalidInputError(f"probabilities sum to {self.probs.sum():.15g}")
        if len(np.unique(self.support, axis=0)) != len(self.support):
            raise InvalidInputError("atoms are not unique")

    @classmethod
    def from_rows(cls, rows) -> DiscretePMF:
        rows = np.atleast_2d(np.asarray(rows, dtype=float))
        if len(rows) == 0:
            raise InvalidInputError("cannot estimate a pmf from zero observations")
        atoms, counts = np.unique(rows, axis=0, return_counts=True)
        return cls(atoms, counts / counts.sum())

    def prob_of(self, atoms) -> np.ndarray:
        """Probabilities of arbitrary atoms (0 for atoms outside the support)."""
        lookup = {tuple(a): p for a, p in zip(self.support, self.probs)}
        return np.array([lookup.get(tuple(a), 0.0) for a in np.atleast_2d(atoms)])

    def to_measure(self, sample_size: int | None = None) -> EmpiricalMeasure:
        keep = self.probs > 0
        w = self.probs[keep]
        return EmpiricalMeasure(self.support[keep], w / w.sum(), sample_size=sample_size)


def _union_support(*pmfs: DiscretePMF) -> np.ndarray:
    return np.unique(np.concatenate([p.support for p in pmfs]), axis=0)


class PanelMarginals(NamedTuple):
    f1_ret: DiscretePMF
    f1_att: DiscretePMF
    f2_ret: DiscretePMF
    f2: DiscretePMF
    p_hat: float


def estimate_marginals(data: PanelData, f2_ret_method: str = "frequency") -> PanelMarginals:
    """Frequency estimates of the wave-1 and wave-2 marginals by retention status.

    Only discrete covariates are supported; a smoothing estimator for the
    retainers' wave-2 law is not implemented.
    """
    if f2_ret_method != "frequency":
        raise NotImplementedError("only the frequency estimator for discrete covariates is available")
    if data.n_ret == 0 or data.n_ref == 0:
        raise InvalidInputError("need at least one retainer and one refreshment record")
    if not 0 < data.p_hat < 1:
        raise InvalidInputError(f"retention share must lie strictly in (0, 1), got {data.p_hat}")
    att = data.attriter_rows
    r = data.ret_rows
    f1_ret = DiscretePMF.from_rows(np.column_stack([data.y1[r], data.x1[r]]))
    f1_att = DiscretePMF.from_rows(np.column_stack([data.y1[att], data.x1[att]]))
    f2_ret = DiscretePMF.from_rows(np.column_stack([data.y2, data.x2]))
    f2 = DiscretePMF.from_rows(np.column_stack([data.y_ref, data.x_ref]))
    return PanelMarginals(f1_ret, f1_att, f2_ret, f2, data.p_hat)


def recover_attriter_marginal(f2: DiscretePMF, f2_ret: DiscretePMF, p_hat: float) -> DiscretePMF:
    """``(f2 - p f2_ret) / (1 - p)`` on the union support, clipped at 0 and renormalized.

    The removed negative mass (before renormalization) is kept in
    ``clipped_mass``; above 0.1 a warning is issued.
    """
    if not 0 <= p_hat < 1:
        raise InvalidInputError("p_hat must lie in [0, 1)")
    support = _union_support(f2, f2_ret)
    raw = (f2.prob_of(support) - p_hat * f2_ret.prob_of(support)) / (1.0 - p_hat)
    clipped = float(-raw[raw < 0].sum())
    probs = np.clip(raw, 0.0, None)
    total = probs.sum()
    if not total > 0:
        raise InvalidInputError("recovered attriter distribution has no positive mass")
    if clipped > CLIP_WARNING:
        warnings.warn(f"recovering the attriter marginal clipped {clipped:.3f} of negative mass",
                      RuntimeWarning, stacklevel=2)
    return DiscretePMF(support, probs / total, clipped_mass=clipped)


# ------------------------------------------------------ slope bounds ----

def _point_tensor(model: PanelLogitScoreModel, s1: np.ndarray, s2: np.ndarray, theta) -> np.ndarray:
    return model.phi_tensor(s1, s2, np.asarray(theta, dtype=float))


def attriter_ot_bounds(model: PanelLogitScoreModel, theta, f1_att: DiscretePMF,
                       f2_att: DiscretePMF, epsilon: float, tol: float = 1e-9,
                       max_iter: int = 10_000) -> tuple[np.ndarray, np.ndarray]:
    """Entropic lower and upper bounds of each moment component over attriter couplings.

    The lower bound of component ``c`` is the regularized minimum of
    ``E phi_c``; the upper bound is minus the regularized minimum of
    ``-E phi_c``.
    """
    mu, nu = f1_att.to_measure(), f2_att.to_measure()
    phi = _point_tensor(model, mu.points, nu.points, theta)
    k = phi.shape[2]
    lower, upper = np.empty(k), np.empty(k)
    base = CostTensor(phi, np.zeros(k), theta)
    for c in range(k):
        e = np.zeros(k)
        e[c] = 1.0
        for sign, out in ((1.0, lower), (-1.0, upper)):
            res = sinkhorn(base.with_direction(sign * e), mu, nu, epsilon, tol=tol, max_iter=max_iter)
            if not res.converged:
                raise NumericalInputError(f"Sinkhorn did not converge for component {c + 1}")
            out[c] = sign * res.value
    return lower, upper


@dataclass
class SlopeBounds:
    theta: np.ndarray
    nu_lower: np.ndarray
    nu_upper: np.ndarray
    retainer_moment: np.ndarray
    attriter_lower: np.ndarray
    attriter_upper: np.ndarray
    p_hat: float

    @property
    def member(self) -> bool:
        return bool(np.all(self.nu_lower <= 0) and np.all(self.nu_upper >= 0))


def retainer_moment(data: PanelData, theta, model: PanelLogitScoreModel | None = None) -> np.ndarray:
    model = model or PanelLogitScoreModel(data.k)
    y1, x1, y2, x2 = data.retainer_pairs()
    return model.pair_moments(y1, x1, y2, x2, theta).mean(axis=0)


def slope_bounds(data: PanelData, theta, epsilon: float,
                 marginals: PanelMarginals | None = None, f2_att: DiscretePMF | None = None,
                 tol: float = 1e-9) -> SlopeBounds:
    model = PanelLogitScoreModel(data.k)
    m = marginals or estimate_marginals(data)
    f2_att = f2_att or recover_attriter_marginal(m.f2, m.f2_ret, m.p_hat)
    theta = np.asarray(theta, dtype=float)
    lo_att, hi_att = attriter_ot_bounds(model, theta, m.f1_att, f2_att, epsilon, tol=tol)
    ret = retainer_moment(data, theta, model)
    p = m.p_hat
    return SlopeBounds(theta, p * ret + (1 - p) * lo_att, p * ret + (1 - p) * hi_att, ret,
                       lo_att, hi_att, p)


class PartitionedPanelModel(MomentModel):
    """Moment ``p nu_ret(theta) + (1 - p) phi(x, y, theta)`` on attriter atoms.

    Every coupling of the attriter marginals yields ``E phi~ = p nu_ret + (1-p)
    E phi``, the overall moment with the retainers' joint law held fixed, so
    the distance statistic of this model measures how far the whole panel is
    from satisfying the moment condition.
    """

    name = "panel_logit_partitioned"

    def __init__(self, y1, x1, y2, x2, p_hat: float) -> None:
        self.base = PanelLogitScoreModel(np.atleast_2d(x1).shape[1])
        self.k = self.p = self.base.k
        self.d_x = self.d_y = self.base.d_x
        self.pairs = tuple(np.asarray(v, dtype=float) for v in (y1, x1, y2, x2))
        self.p_hat = float(p_hat)

    @classmethod
    def from_data(cls, data: PanelData) -> PartitionedPanelModel:
        return cls(*data.retainer_pairs(), data.p_hat)

    def retainer_moment(self, theta) -> np.ndarray:
        return self.base.pair_moments(*self.pairs, np.asarray(theta, dtype=float)).mean(axis=0)

    def evaluate(self, x, y, theta):
        return self.p_hat * self.retainer_moment(theta) + (1 - self.p_hat) * self.base.evaluate(x, y, theta)

    def phi_tensor(self, X, Y, theta):
        return (self.p_hat * self.retainer_moment(theta)[None, None, :]
                + (1 - self.p_hat) * self.base.phi_tensor(X, Y, theta))

    def describe(self):
        return {"name": self.name, "k": self.k, "p_hat": self.p_hat}


class PanelProblem(NamedTuple):
    model: MomentModel
    mu: EmpiricalMeasure
    nu: EmpiricalMeasure
    n: int


def partitioned_problem(data: PanelData) -> PanelProblem:
    """Model and attriter marginals for the distance statistic, scaled by ``n_org``."""
    m = estimate_marginals(data)
    f2_att = recover_attriter_marginal(m.f2, m.f2_ret, m.p_hat)
    return PanelProblem(PartitionedPanelModel.from_data(data), m.f1_att.to_measure(data.n_org),
                        f2_att.to_measure(data.n_org), data.n_org)


def naive_problem(data: PanelData) -> PanelProblem:
    """Wave-1 versus refreshment marginals, ignoring the panel link."""
    f1 = DiscretePMF.from_rows(np.column_stack([data.y1, data.x1]))
    f2 = DiscretePMF.from_rows(np.column_stack([data.y_ref, data.x_ref]))
    return PanelProblem(PanelLogitScoreModel(data.k), f1.to_measure(data.n_org),
                        f2.to_measure(data.n_ref), min(data.n_org, data.n_ref))


def panel_resampler(data: PanelData, design: str = "partitioned"):
    """Bootstrap world generator for :func:`otgmm.inference.bootstrap_test`."""
    build = {"partitioned": partitioned_problem, "naive": naive_problem}[design]

    def draw(rng: np.random.Generator):
        with warnings.catch_warnings():
            # heavy clipping is routine in resampled worlds; the base sample reports it
            warnings.simplefilter("ignore", RuntimeWarning)
            prob = build(data.resample(rng))
        return prob.model, prob.mu, prob.nu

    return draw


@dataclass
class SlopeSetResult:
    grid: ParamGrid
    bounds: list[SlopeBounds]
    members: np.ndarray
    d_values: np.ndarray | None = None
    sharp_members: np.ndarray | None = None
    eta: float | None = None

    @property
    def member_points(self) -> np.ndarray:
        return self.grid.points[self.members]


def slope_identified_set(data: PanelData, grid: ParamGrid, epsilon: float, sharp: bool = False,
                         eta: float | None = None, opts: DistanceOptions | None = None,
                         ) -> SlopeSetResult:
    """Componentwise bound check ``nu_lower <= 0 <= nu_upper`` at every grid point.

    With ``sharp=True`` the distance statistic of the partitioned moment is
    also evaluated and compared with ``eta`` (default ``default_eta(n_org)``);
    that membership is the joint check, the componentwise one is conservative.
    """
    m = estimate_marginals(data)
    f2_att = recover_attriter_marginal(m.f2, m.f2_ret, m.p_hat)
    bounds = [slope_bounds(data, th, epsilon, marginals=m, f2_att=f2_att) for th in grid.points]
    members = np.array([b.member for b in bounds])
    result = SlopeSetResult(grid, bounds, members)
    if sharp:
        model = PartitionedPanelModel.from_data(data)
        mu, nu = m.f1_att.to_measure(data.n_org), f2_att.to_measure(data.n_org)
        d = np.array([distance_statistic(model, th, mu, nu, epsilon, opts).d_hat
                      for th in grid.points])
        result.eta = default_eta(data.n_org) if eta is None else float(eta)
        result.d_values = d
        result.sharp_members = d <= result.eta
    return result


def write_slope_csv(result: SlopeSetResult, path) -> None:
    k = result.grid.k
    header = ([f"theta_{i + 1}" for i in range(k)] + [f"nu_lower_{i + 1}" for i in range(k)]
              + [f"nu_upper_{i + 1}" for i in range(k)] + ["member"])
    if result.d_values is not None:
        header += ["d_hat", "sharp_member"]
    rows = []
    for i, b in enumerate(result.bounds):
        row = [*b.theta, *b.nu_lower, *b.nu_upper, bool(result.members[i])]
        if result.d_values is not None:
            row += [result.d_values[i], bool(result.sharp_members[i])]
        rows.append(row)
    write_table(path, header, rows)


# ------------------------------------------------- switcher accounting ----

def mass_accounting(f1: DiscretePMF, f2: DiscretePMF) -> dict[tuple, dict[str, float]]:
    """Largest non-switcher masses and the remaining switcher mass per covariate cell.

    Assumes the covariate cell masses agree across the two marginals (time-
    invariant covariates); within a cell the largest stay-at-0 and stay-at-1
    masses are the minima of the matching outcome masses.
    """
    out = {}
    cells = np.unique(np.concatenate([f1.support[:, 1:], f2.support[:, 1:]]), axis=0)
    for x in cells:
        a0, a1 = f1.prob_of([[0.0, *x], [1.0, *x]])
        b0, b1 = f2.prob_of([[0.0, *x], [1.0, *x]])
        if abs((a0 + a1) - (b0 + b1)) > 1e-12:
            raise InvalidInputError(f"cell {tuple(x)} has mass {a0 + a1} vs {b0 + b1}; covariates must be time-invariant")
        w00, w11 = min(a0, b0), min(a1, b1)
        out[tuple(x)] = {"w00": w00, "w11": w11, "switcher": a0 + a1 - w00 - w11,
                         "abs_diff": abs(a1 - b1)}
    return out


def switcher_cost(s1: np.ndarray, s2: np.ndarray, cross_cell: float = 10.0) -> np.ndarray:
    """Cost 1 on switcher pairs within a covariate cell, 0 on stayers, ``cross_cell`` across cells."""
    same = np.all(s1[:, None, 1:] == s2[None, :, 1:], axis=2)
    switch = (s1[:, None, 0] + s2[None, :, 0]) == 1
    return np.where(same, switch.astype(float), cross_cell)


def coupling_accounting(P: np.ndarray, s1: np.ndarray, s2: np.ndarray) -> dict[tuple, dict[str, float]]:
    """Read stayer and switcher masses per covariate cell off a coupling of atoms."""
    out = {}
    same = np.all(s1[:, None, 1:] == s2[None, :, 1:], axis=2)
    for x in np.unique(s1[:, 1:], axis=0):
        cell = same & np.all(s1[:, None, 1:] == x, axis=2)
        y1, y2 = s1[:, None, 0], s2[None, :, 0]
        out[tuple(x)] = {
            "w00": float(P[cell & (y1 == 0) & (y2 == 0)].sum()),
            "w11": float(P[cell & (y1 == 1) & (y2 == 1)].sum()),
            "switcher": float(P[cell & ((y1 + y2) == 1)].sum()),
        }
    return out


# ------------------------------------------------------------- AME ----

def _shifted_chebyshev_int(n: int) -> list[int]:
    """Integer power-basis coefficients (ascending) of ``T_n(2u - 1)``."""
    prev, cur = [1], [0, 1]
    if n == 0:
        return prev
    for _ in range(n - 1):
        nxt = [0] * (len(cur) + 1)
        for i, c in enumerate(cur):
            nxt[i + 1] += 2 * c
        for i, c in enumerate(prev):
            nxt[i] -= c
        prev, cur = cur, nxt
    out = [0] * (n + 1)
    for i, c in enumerate(cur):
        # (2u - 1)^i
        for r in range(i + 1):
            out[r] += c * math.comb(i, r) * 2 ** r * (-1) ** (i - r)
    return out


def chebyshev_coeffs(T: int, exact: bool = False):
    """Coefficients of the best degree-T uniform approximation of ``u^{T+1}`` on [0, 1].

    Returns ``(b_star, err_bound)`` with ``b_star[t]`` the coefficient of
    ``u^t`` and ``err_bound = 1 / (2 * 4^T)``. With ``exact=True`` both are
    :class:`fractions.Fraction` values.
    """
    if not (isinstance(T, (int, np.integer)) and 1 <= T <= 6):
        raise InvalidInputError("T must be an integer in 1..6")
    T = int(T)
    cheb = _shifted_chebyshev_int(T + 1)
    lead = 2 ** (2 * T + 1)
    assert cheb[-1] == lead
    b = [Fraction(-c, lead) for c in cheb[:-1]]
    err = Fraction(1, 2 * 4 ** T)
    if exact:
        return b, err
    return [float(v) for v in b], float(err)


def lambda_coeffs(x, theta, tau: int = 1, j: int = 1) -> np.ndarray:
    """Monomial coefficients of ``theta_j u (1-u) prod_{t != tau} (1 + u (e^{(x_t - x_tau)'theta} - 1))``.

    ``x`` is a ``T x k`` matrix; ``tau`` and ``j`` are 1-based.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    theta = np.asarray(theta, dtype=float)
    T = x.shape[0]
    if not 1 <= tau <= T:
        raise InvalidInputError(f"tau must lie in 1..{T}")
    idx = x @ theta
    poly = np.array([0.0, theta[j - 1], -theta[j - 1]])
    for t in range(T):
        if t != tau - 1:
            poly = np.convolve(poly, [1.0, math.expm1(idx[t] - idx[tau - 1])])
    return poly


def _elementary(v: np.ndarray) -> np.ndarray:
    e = np.zeros(len(v) + 1)
    e[0] = 1.0
    for val in v:
        e[1:] = e[1:] + val * e[:-1]
    return e


def elementary_C(x, theta, s: int) -> float:
    """``C_s(x, theta)``: elementary symmetric polynomial of degree s in ``e^{x_t'theta}``."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    T = x.shape[0]
    if not 0 <= s <= T:
        raise InvalidInputError(f"s must lie in 0..{T}")
    idx = x @ np.asarray(theta, dtype=float)
    m = float(idx.max())
    return float(_elementary(np.exp(idx - m))[s] * math.exp(s * m))


def ame_p_a(x, s: int, theta, tau: int = 1, j: int = 1) -> tuple[float, float]:
    """Chebyshev center ``p(x, s, theta)`` and half-width ``a(x, s, theta)`` for the AME."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    theta = np.asarray(theta, dtype=float)
    T = x.shape[0]
    if not 0 <= s <= T:
        raise InvalidInputError(f"s must lie in 0..{T}")
    b, err = chebyshev_coeffs(T)
    lam = lambda_coeffs(x, theta, tau, j)
    idx = x @ theta
    m = float(idx.max())
    # exp(s x_tau'theta) / C_s with the common shift m removed
    ratio = math.exp(s * (idx[tau - 1] - m)) / _elementary(np.exp(idx - m))[s]
    p_val = sum((lam[t] + b[t] * lam[T + 1]) * math.comb(T - t, s - t) for t in range(s + 1)) * ratio
    a_val = err * abs(lam[T + 1]) * math.comb(T, s) * ratio
    return float(p_val), float(a_val)


def _pa_on_pairs(y1, x1, y2, x2, theta, tau, j) -> tuple[np.ndarray, np.ndarray]:
    """p and a for each two-period record, computed once per distinct record."""
    rows = np.column_stack([np.asarray(y1) + np.asarray(y2), x1, x2])
    uniq, inv = np.unique(rows, axis=0, return_inverse=True)
    k = np.atleast_2d(x1).shape[1]
    vals = np.array([ame_p_a(np.vstack([r[1:1 + k], r[1 + k:]]), int(r[0]), theta, tau, j)
                     for r in uniq])
    inv = np.asarray(inv).reshape(-1)
    return vals[inv, 0], vals[inv, 1]


def ame_bounds_no_attrition(y1, x1, y2, x2, theta_hat, tau: int = 1, j: int = 1,
                            ) -> tuple[float, float]:
    """Outer bounds ``mean(p) -/+ mean(a)`` on complete two-period records."""
    p, a = _pa_on_pairs(y1, np.atleast_2d(x1), y2, np.atleast_2d(x2), theta_hat, tau, j)
    center, half = float(p.mean()), float(a.mean())
    return center - half, center + half


@dataclass
class AMEResult:
    theta_grid: np.ndarray
    intervals: list[tuple[float, float]]
    union: list[tuple[float, float]]


def merge_intervals(intervals) -> list[tuple[float, float]]:
    out: list[list[float]] = []
    for lo, hi in sorted((float(a), float(b)) for a, b in intervals):
        if out and lo <= out[-1][1]:
            out[-1][1] = max(out[-1][1], hi)
        else:
            out.append([lo, hi])
    return [(a, b) for a, b in out]


def thin_points(points: np.ndarray, grid_size: int | None) -> np.ndarray:
    points = np.atleast_2d(points)
    if grid_size is None or len(points) <= grid_size:
        return points
    idx = np.unique(np.round(np.linspace(0, len(points) - 1, grid_size)).astype(int))
    return points[idx]


def ame_bounds_attrition(data: PanelData, slope_set, epsilon: float, grid_size: int | None = None,
                         tau: int = 1, j: int = 1, tol: float = 1e-9) -> AMEResult:
    """AME bounds under unrestricted attrition, profiled over accepted slope values.

    At each slope value the attriter marginals are coupled to minimize
    ``E(p - a)`` and to maximize ``E(p + a)``; retainers contribute their
    sample means, and the two parts are weighted by the retention share.
    """
    pts = slope_set.member_points if hasattr(slope_set, "member_points") else np.atleast_2d(slope_set)
    pts = thin_points(np.asarray(pts, dtype=float), grid_size)
    if len(pts) == 0:
        raise InvalidInputError("the slope set is empty")
    m = estimate_marginals(data)
    f2_att = recover_attriter_marginal(m.f2, m.f2_ret, m.p_hat)
    mu, nu = m.f1_att.to_measure(), f2_att.to_measure()
    k = data.k
    y1r, x1r, y2r, x2r = data.retainer_pairs()
    p_hat = m.p_hat
    ii, jj = np.meshgrid(np.arange(mu.n), np.arange(nu.n), indexing="ij")
    intervals = []
    for th in pts:
        a1, a2 = mu.points[ii.ravel()], nu.points[jj.ravel()]
        p_att, a_att = _pa_on_pairs(a1[:, 0], a1[:, 1:], a2[:, 0], a2[:, 1:], th, tau, j)
        lo_cost = (p_att - a_att).reshape(mu.n, nu.n)
        hi_cost = (p_att + a_att).reshape(mu.n, nu.n)
        lo = sinkhorn(CostTensor(lo_cost, [1.0], th), mu, nu, epsilon, tol=tol)
        hi = sinkhorn(CostTensor(-hi_cost, [1.0], th), mu, nu, epsilon, tol=tol)
        if not (lo.converged and hi.converged):
            raise NumericalInputError(f"Sinkhorn did not converge at theta={th.tolist()}")
        p_ret, a_ret = _pa_on_pairs(y1r, x1r.reshape(-1, k), y2r, x2r.reshape(-1, k), th, tau, j)
        lower = p_hat * float((p_ret - a_ret).mean()) + (1 - p_hat) * lo.value
        upper = p_hat * float((p_ret + a_ret).mean()) + (1 - p_hat) * (-hi.value)
        intervals.append((lower, upper))
    return AMEResult(pts, intervals, merge_intervals(intervals))


def write_ame_csv(result: AMEResult, path) -> None:
    k = result.theta_grid.shape[1]
    write_table(path, [f"theta_{i + 1}" for i in range(k)] + ["lower", "upper"],
                [[*th, lo, hi] for th, (lo, hi) in zip(result.theta_grid, result.intervals)])
