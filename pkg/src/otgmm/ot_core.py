"""Entropic optimal transport for directional moment costs.

The inner problem is

    c_theta(u) = min_P  sum_ij P_ij u'phi(x_i, y_j, theta) + eps * KL(P || a x b)

over couplings ``P`` of the weights ``a`` and ``b``. It is solved with
log-domain Sinkhorn iterations on dual potentials ``(f, g)`` measured relative
to the product measure, so that

    P_ij = a_i b_j exp((f_i + g_j - C_ij) / eps).

Two cost representations share one solver: :class:`CostTensor` stores the full
``n x m x p`` moment array, and :class:`ThresholdCostTensor` handles moments
that take one of two values depending on whether ``y_j >= x_i`` (scalar
points), which admits ``O((n + m) log(n + m))`` kernel products.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog
from scipy.special import logsumexp

from .exceptions import (
    InfeasibleSupportError,
    InvalidInputError,
    NumericalInputError,
    SizeLimitError,
)
from .measures import EmpiricalMeasure

DEFAULT_TOL = 1e-9
DEFAULT_MAX_ITER = 10_000
PERMUTATION_LIMIT = 8
LP_LIMIT = 64


def _as_direction(u, p: int) -> np.ndarray:
    u = np.atleast_1d(np.asarray(u, dtype=float))
    if u.shape != (p,):
        raise InvalidInputError(f"direction has shape {u.shape}, expected ({p},)")
    if np.linalg.norm(u) > 1 + 1e-12:
        raise InvalidInputError(f"direction norm {np.linalg.norm(u):.6g} exceeds 1")
    return u


@dataclass(frozen=True)
class CostTensor:
    """Dense moment array ``phi_values[i, j] = phi(x_i, y_j, theta)`` and ``C = phi . u``."""

    phi_values: np.ndarray
    u: np.ndarray
    theta: np.ndarray
    C: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        phi = np.asarray(self.phi_values, dtype=float)
        if phi.ndim == 2:
            phi = phi[:, :, None]
        u = _as_direction(self.u, phi.shape[2])
        object.__setattr__(self, "phi_values", phi)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "theta", np.atleast_1d(np.asarray(self.theta, dtype=float)))
        object.__setattr__(self, "C", phi @ u)

    @property
    def shape(self) -> tuple[int, int]:
        return self.phi_values.shape[:2]

    @property
    def p(self) -> int:
        return self.phi_values.shape[2]

    def with_direction(self, u) -> CostTensor:
        return CostTensor(self.phi_values, u, self.theta)

    def phi_sup_norm(self) -> float:
        return float(np.max(np.abs(self.phi_values), initial=0.0))

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.C)))

    # kernel products in log space: LSE_j (h_j - C_ij / eps)
    def log_row_sums(self, h: np.ndarray, eps: float) -> np.ndarray:
        return logsumexp(h[None, :] - self.C / eps, axis=1)

    def log_col_sums(self, h: np.ndarray, eps: float) -> np.ndarray:
        return logsumexp(h[:, None] - self.C / eps, axis=0)

    def log_coupling(self, lr: np.ndarray, lc: np.ndarray, eps: float) -> np.ndarray:
        return lr[:, None] + lc[None, :] - self.C / eps

    def expected_phi(self, lr, lc, eps) -> np.ndarray:
        P = np.exp(self.log_coupling(lr, lc, eps))
        return np.tensordot(P, self.phi_values, axes=([0, 1], [0, 1]))

    def expected_cost(self, lr, lc, eps) -> float:
        return float(np.sum(np.exp(self.log_coupling(lr, lc, eps)) * self.C))


class _SortedPair:
    """Sort orders and split indices shared by threshold costs on the same data."""

    def __init__(self, x: np.ndarray, y: np.ndarray) -> None:
        self.x_order = np.argsort(x, kind="stable")
        self.y_order = np.argsort(y, kind="stable")
        xs, ys = x[self.x_order], y[self.y_order]
        # row i: columns with y_j >= x_i are ys-sorted positions [row_split[i]:]
        self.row_split = np.searchsorted(ys, x, side="left")
        # column j: rows with x_i <= y_j are xs-sorted positions [:col_split[j]]
        self.col_split = np.searchsorted(xs, y, side="right")


def _prefix_suffix_lse(h_sorted: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """prefix[k] = LSE(h[:k]), suffix[k] = LSE(h[k:]), both of length len(h) + 1."""
    ninf = np.array([-np.inf])
    if len(h_sorted) == 0:
        return ninf, ninf
    prefix = np.concatenate([ninf, np.logaddexp.accumulate(h_sorted)])
    suffix = np.concatenate([np.logaddexp.accumulate(h_sorted[::-1])[::-1], ninf])
    return prefix, suffix


@dataclass(frozen=True)
class ThresholdCostTensor:
    """Moment ``phi(x_i, y_j) = phi_hi if y_j >= x_i else phi_lo`` for scalar points.

    The dense views ``phi_values`` and ``C`` are materialized on access only.
    """

    x: np.ndarray
    y: np.ndarray
    phi_hi: np.ndarray
    phi_lo: np.ndarray
    u: np.ndarray
    theta: np.ndarray
    _order: _SortedPair | None = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        x = np.asarray(self.x, dtype=float).reshape(-1)
        y = np.asarray(self.y, dtype=float).reshape(-1)
        hi = np.atleast_1d(np.asarray(self.phi_hi, dtype=float))
        lo = np.atleast_1d(np.asarray(self.phi_lo, dtype=float))
        if hi.shape != lo.shape:
            raise InvalidInputError("phi_hi and phi_lo must have the same dimension")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "phi_hi", hi)
        object.__setattr__(self, "phi_lo", lo)
        object.__setattr__(self, "u", _as_direction(self.u, len(hi)))
        object.__setattr__(self, "theta", np.atleast_1d(np.asarray(self.theta, dtype=float)))
        if self._order is None:
            object.__setattr__(self, "_order", _SortedPair(x, y))

    @property
    def c_hi(self) -> float:
        return float(self.u @ self.phi_hi)

    @property
    def c_lo(self) -> float:
        return float(self.u @ self.phi_lo)

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.x), len(self.y)

    @property
    def p(self) -> int:
        return len(self.phi_hi)

    @property
    def region(self) -> np.ndarray:
        return self.y[None, :] >= self.x[:, None]

    @property
    def phi_values(self) -> np.ndarray:
        return np.where(self.region[:, :, None], self.phi_hi, self.phi_lo)

    @property
    def C(self) -> np.ndarray:
        return np.where(self.region, self.c_hi, self.c_lo)

    def with_direction(self, u) -> ThresholdCostTensor:
        return ThresholdCostTensor(self.x, self.y, self.phi_hi, self.phi_lo, u, self.theta,
                                   _order=self._order)

    def phi_sup_norm(self) -> float:
        return float(max(np.max(np.abs(self.phi_hi)), np.max(np.abs(self.phi_lo))))

    def is_finite(self) -> bool:
        return math.isfinite(self.c_hi) and math.isfinite(self.c_lo)

    def _row_parts(self, h, eps):
        o = self._order
        prefix, suffix = _prefix_suffix_lse(h[o.y_order])
        k = o.row_split
        return suffix[k] - self.c_hi / eps, prefix[k] - self.c_lo / eps

    def _col_parts(self, h, eps):
        o = self._order
        prefix, suffix = _prefix_suffix_lse(h[o.x_order])
        k = o.col_split
        return prefix[k] - self.c_hi / eps, suffix[k] - self.c_lo / eps

    def log_row_sums(self, h, eps):
        return np.logaddexp(*self._row_parts(h, eps))

    def log_col_sums(self, h, eps):
        return np.logaddexp(*self._col_parts(h, eps))

    def log_coupling(self, lr, lc, eps):
        return lr[:, None] + lc[None, :] - self.C / eps

    def _masses(self, lr, lc, eps) -> tuple[float, float]:
        hi, lo = self._row_parts(lc, eps)
        return float(np.exp(logsumexp(lr + hi))), float(np.exp(logsumexp(lr + lo)))

    def expected_phi(self, lr, lc, eps):
        m_hi, m_lo = self._masses(lr, lc, eps)
        return m_hi * self.phi_hi + m_lo * self.phi_lo

    def expected_cost(self, lr, lc, eps):
        m_hi, m_lo = self._masses(lr, lc, eps)
        return m_hi * self.c_hi + m_lo * self.c_lo


def build_cost_tensor(model, u, theta, mu: EmpiricalMeasure, nu: EmpiricalMeasure,
                      structured: bool = True):
    """Evaluate the moment function on all pairs of support points.

    Returns a :class:`CostTensor`, or the model's structured equivalent when it
    provides one and ``structured`` is true. Re-pointing the result at a new
    direction with ``with_direction`` reuses the cached moment values.
    """
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    if mu.dim != model.d_x:
        raise InvalidInputError(f"mu points have dimension {mu.dim}, model expects d_x={model.d_x} (index 0)")
    if nu.dim != model.d_y:
        raise InvalidInputError(f"nu points have dimension {nu.dim}, model expects d_y={model.d_y} (index 0)")
    if len(theta) != model.k:
        raise InvalidInputError(f"theta has length {len(theta)}, model expects k={model.k}")
    u = _as_direction(u, model.p)
    if structured:
        cost = model.structured_cost(u, theta, mu, nu)
        if cost is not None:
            return cost
    return CostTensor(model.phi_tensor(mu.points, nu.points, theta), u, theta)


@dataclass
class SinkhornResult:
    """Output of :func:`sinkhorn`.

    ``f`` and ``g`` are potentials relative to the product measure, normalized
    so that ``sum a f = sum b g``. ``coupling`` is materialized lazily.
    ``raw_entropy_value`` is ``sum P C + eps sum P (log P - 1)``, kept as a
    diagnostic only; ``value`` uses KL relative to ``a x b``.
    """

    f: np.ndarray
    g: np.ndarray
    value: float
    transport_cost: float
    kl_term: float
    iterations: int
    marginal_error: float
    converged: bool
    epsilon: float
    moment: np.ndarray
    raw_entropy_value: float
    cost: object = field(repr=False)
    log_a: np.ndarray = field(repr=False)
    log_b: np.ndarray = field(repr=False)

    @property
    def coupling(self) -> np.ndarray:
        lr = self.log_a + self.f / self.epsilon
        lc = self.log_b + self.g / self.epsilon
        return np.exp(self.cost.log_coupling(lr, lc, self.epsilon))

    @property
    def P(self) -> np.ndarray:
        return self.coupling


def _log_weights(w: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore"):
        return np.log(w)


def sinkhorn(cost, mu: EmpiricalMeasure, nu: EmpiricalMeasure, epsilon: float,
             tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
             init: tuple[np.ndarray, np.ndarray] | None = None) -> SinkhornResult:
    """Log-domain Sinkhorn iterations for the KL-regularized transport problem.

    Stops when the l1 violation of the row marginals (columns are exact after
    each sweep) is at most ``tol``, or after ``max_iter`` sweeps with
    ``converged=False``. ``init`` warm-starts from previous potentials.
    """
    if not epsilon > 0:
        raise InvalidInputError(f"epsilon must be positive, got {epsilon}")
    n, m = cost.shape
    if (mu.n, nu.n) != (n, m):
        raise InvalidInputError(f"cost is {n}x{m} but marginals have {mu.n} and {nu.n} atoms")
    if not cost.is_finite():
        raise NumericalInputError("cost contains non-finite entries")
    a, b = mu.weights, nu.weights
    la, lb = _log_weights(a), _log_weights(b)
    pos_a = a > 0
    eps = float(epsilon)

    if init is None:
        f, g = np.zeros(n), np.zeros(m)
    else:
        f, g = (np.array(v, dtype=float) for v in init)
    g = -eps * cost.log_col_sums(la + f / eps, eps)

    converged = False
    it = 0
    while True:
        f_new = -eps * cost.log_row_sums(lb + g / eps, eps)
        with np.errstate(over="ignore", invalid="ignore"):
            row_err = float(np.sum(a[pos_a] * np.abs(np.expm1((f - f_new)[pos_a] / eps))))
        if row_err <= tol:
            converged = True
            break
        if it >= max_iter:
            break
        f = f_new
        g = -eps * cost.log_col_sums(la + f / eps, eps)
        it += 1
        if not (np.all(np.isfinite(f)) and np.all(np.isfinite(g))):
            raise NumericalInputError("Sinkhorn potentials became non-finite")

    shift = 0.5 * (a @ f - b @ g)
    f, g = f - shift, g + shift
    lr, lc = la + f / eps, lb + g / eps
    log_r = lr + cost.log_row_sums(lc, eps)
    log_c = lc + cost.log_col_sums(lr, eps)
    r, c = np.exp(log_r), np.exp(log_c)
    marginal_error = max(float(np.abs(r - a).sum()), float(np.abs(c - b).sum()))

    tc = float(cost.expected_cost(lr, lc, eps))
    # sum P log(P / ab) = sum P (f_i + g_j - C_ij) / eps
    kl = max(0.0, (r @ f + c @ g - tc) / eps)
    mass = float(r.sum())
    plogp = kl + float(r[a > 0] @ la[a > 0] + c[b > 0] @ lb[b > 0])
    return SinkhornResult(
        f=f, g=g, value=tc + eps * kl, transport_cost=tc, kl_term=kl, iterations=it,
        marginal_error=marginal_error, converged=converged, epsilon=eps,
        moment=np.asarray(cost.expected_phi(lr, lc, eps), dtype=float),
        raw_entropy_value=tc + eps * (plogp - mass), cost=cost, log_a=la, log_b=lb,
    )


@dataclass
class BatchSinkhornResult:
    """Per-direction summaries of :func:`sinkhorn_batch`; arrays are indexed by direction."""

    value: np.ndarray
    transport_cost: np.ndarray
    kl_term: np.ndarray
    moment: np.ndarray
    marginal_error: np.ndarray
    converged: np.ndarray
    iterations: int


def sinkhorn_batch(cost: CostTensor, U, mu: EmpiricalMeasure, nu: EmpiricalMeasure,
                   epsilon: float, tol: float = DEFAULT_TOL,
                   max_iter: int = DEFAULT_MAX_ITER) -> BatchSinkhornResult:
    """Solve the problems for all rows of ``U`` at once on a dense moment tensor.

    The updates are those of :func:`sinkhorn`, vectorized over directions;
    iterations continue until every problem meets ``tol``.
    """
    if not epsilon > 0:
        raise InvalidInputError(f"epsilon must be positive, got {epsilon}")
    U = np.atleast_2d(np.asarray(U, dtype=float))
    if U.shape[1] != cost.p:
        raise InvalidInputError(f"directions have dimension {U.shape[1]}, expected {cost.p}")
    if np.any(np.linalg.norm(U, axis=1) > 1 + 1e-12):
        raise InvalidInputError("direction norm exceeds 1")
    phi = cost.phi_values
    n, m = phi.shape[:2]
    if (mu.n, nu.n) != (n, m):
        raise InvalidInputError(f"cost is {n}x{m} but marginals have {mu.n} and {nu.n} atoms")
    eps = float(epsilon)
    K = -np.einsum("ijp,bp->bij", phi, U) / eps  # -C / eps, shape (B, n, m)
    if not np.all(np.isfinite(K)):
        raise NumericalInputError("cost contains non-finite entries")
    a, b = mu.weights, nu.weights
    la, lb = _log_weights(a), _log_weights(b)
    pos_a = a > 0
    nb = len(U)
    f = np.zeros((nb, n))
    g = -eps * logsumexp(la[None, :, None] + f[:, :, None] / eps + K, axis=1)
    it = 0
    while True:
        f_new = -eps * logsumexp(lb[None, None, :] + g[:, None, :] / eps + K, axis=2)
        with np.errstate(over="ignore", invalid="ignore"):
            err = np.sum(a[pos_a] * np.abs(np.expm1((f - f_new)[:, pos_a] / eps)), axis=1)
        if np.all(err <= tol) or it >= max_iter:
            break
        f = f_new
        g = -eps * logsumexp(la[None, :, None] + f[:, :, None] / eps + K, axis=1)
        it += 1
    converged = err <= tol
    shift = 0.5 * (f @ a - g @ b)
    f, g = f - shift[:, None], g + shift[:, None]
    logP = (la + f / eps)[:, :, None] + (lb + g / eps)[:, None, :] + K
    P = np.exp(logP)
    r, c = P.sum(axis=2), P.sum(axis=1)
    merr = np.maximum(np.abs(r - a).sum(axis=1), np.abs(c - b).sum(axis=1))
    tc = -eps * np.einsum("bij,bij->b", P, K)
    kl = np.maximum(0.0, (np.einsum("bi,bi->b", r, f) + np.einsum("bj,bj->b", c, g) - tc) / eps)
    moment = np.einsum("bij,ijp->bp", P, phi)
    return BatchSinkhornResult(tc + eps * kl, tc, kl, moment, merr, converged, it)


def entropic_value(P, C, epsilon: float, mu_weights, nu_weights) -> float:
    """``sum P C + eps * KL(P || a x b)`` with the convention ``0 log 0 = 0``."""
    P = np.asarray(P, dtype=float)
    C = np.asarray(C, dtype=float)
    a = np.asarray(mu_weights, dtype=float)
    b = np.asarray(nu_weights, dtype=float)
    if P.shape != C.shape or P.shape != (len(a), len(b)):
        raise InvalidInputError(f"shape mismatch: P {P.shape}, C {C.shape}, weights {len(a)}x{len(b)}")
    if np.any(P < 0):
        raise InvalidInputError("coupling has negative entries")
    if np.abs(P.sum(1) - a).sum() > 1e-6 or np.abs(P.sum(0) - b).sum() > 1e-6:
        raise InvalidInputError("coupling marginals do not match weights within 1e-6")
    ref = np.outer(a, b)
    pos = P > 0
    if np.any(pos & (ref == 0)):
        i, j = np.argwhere(pos & (ref == 0))[0]
        raise InfeasibleSupportError(f"P[{i},{j}] > 0 where a_i b_j = 0")
    kl = float(np.sum(P[pos] * np.log(P[pos] / ref[pos])))
    return float(np.sum(P * C)) + epsilon * kl


def gradient_in_u(result: SinkhornResult, cost=None) -> np.ndarray:
    """Supergradient ``sum_ij P_ij phi(x_i, y_j, theta)`` of ``u -> c_theta(u)``.

    By the envelope theorem the optimal coupling at ``u`` gives the gradient of
    the concave map. ``cost`` defaults to the tensor the result was solved on.
    """
    if not (result.converged or result.marginal_error <= 1e-6):
        raise InvalidInputError("gradient requires a converged Sinkhorn result")
    if cost is None or cost is result.cost:
        return result.moment.copy()
    if cost.shape != result.cost.shape:
        raise InvalidInputError("cost shape does not match the Sinkhorn result")
    lr = result.log_a + result.f / result.epsilon
    lc = result.log_b + result.g / result.epsilon
    P = np.exp(result.cost.log_coupling(lr, lc, result.epsilon))
    return np.tensordot(P, cost.phi_values, axes=([0, 1], [0, 1]))


def _is_uniform(w: np.ndarray) -> bool:
    return bool(np.allclose(w, 1.0 / len(w), rtol=0, atol=1e-14))


def unregularized_ot_oracle(C, mu: EmpiricalMeasure, nu: EmpiricalMeasure,
                            return_plan: bool = False):
    """Exact optimal transport value ``min_P sum P C`` for small instances.

    Square uniform instances with ``n <= 8`` are solved by enumerating
    permutations (Birkhoff); anything up to 64 x 64 goes to the HiGHS LP solver.
    """
    C = np.asarray(C, dtype=float)
    n, m = C.shape
    a, b = mu.weights, nu.weights
    if (len(a), len(b)) != (n, m):
        raise InvalidInputError(f"cost is {n}x{m} but marginals have {len(a)} and {len(b)} atoms")
    if n == m and n <= PERMUTATION_LIMIT and _is_uniform(a) and _is_uniform(b):
        best, best_perm = np.inf, None
        rows = np.arange(n)
        for perm in itertools.permutations(range(n)):
            val = C[rows, perm].mean()
            if val < best:
                best, best_perm = val, perm
        if not return_plan:
            return float(best)
        plan = np.zeros((n, n))
        plan[rows, best_perm] = 1.0 / n
        return float(best), plan
    if n > LP_LIMIT or m > LP_LIMIT:
        raise SizeLimitError(f"{n}x{m} instance exceeds the {LP_LIMIT}x{LP_LIMIT} exact-oracle limit")
    A_eq = np.zeros((n + m, n * m))
    for i in range(n):
        A_eq[i, i * m:(i + 1) * m] = 1.0
    for j in range(m):
        A_eq[n + j, j::m] = 1.0
    res = linprog(C.ravel(), A_eq=A_eq, b_eq=np.concatenate([a, b]), bounds=(0, None),
                  method="highs")
    if res.status != 0:
        raise NumericalInputError(f"LP solver failed: {res.message}")
    plan = res.x.reshape(n, m)
    return (float(res.fun), plan) if return_plan else float(res.fun)


def conservative_adjust(value: float, epsilon: float, n: int, kl_term: float) -> float:
    """``value - eps * (log n - KL)``, the shifted value behind the conservative test."""
    if n < 1:
        raise InvalidInputError("n must be at least 1")
    if kl_term < 0:
        raise InvalidInputError("kl_term must be nonnegative")
    return value - epsilon * (math.log(n) - kl_term)
