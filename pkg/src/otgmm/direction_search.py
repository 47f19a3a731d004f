"""Outer maximization of u -> c_theta(u) over the unit ball."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .exceptions import InvalidInputError, NumericalInputError
from .measures import EmpiricalMeasure
from .ot_core import (
    DEFAULT_MAX_ITER,
    DEFAULT_TOL,
    CostTensor,
    SinkhornResult,
    build_cost_tensor,
    sinkhorn,
    sinkhorn_batch,
)


@dataclass(frozen=True)
class DirectionValue:
    """Entropic OT summary at one direction."""

    u: np.ndarray
    value: float
    gradient: np.ndarray
    transport_cost: float
    kl_term: float
    converged: bool
    marginal_error: float


class SupportFunction:
    """Evaluates ``u -> c_theta(u)`` on fixed data with caching and warm starts.

    For models with ``additive_theta`` the transport problem is solved once at
    ``theta = 0`` and shifted by ``u'theta_offset(theta)``; pass the same
    ``cache`` dict to several instances to share those solves across ``theta``.
    """

    def __init__(self, model, theta, mu: EmpiricalMeasure, nu: EmpiricalMeasure,
                 epsilon: float, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
                 structured: bool = True, warm_start: bool = True,
                 cache: dict | None = None) -> None:
        self.model = model
        self.theta = np.atleast_1d(np.asarray(theta, dtype=float))
        self.mu, self.nu = mu, nu
        self.epsilon = float(epsilon)
        self.tol, self.max_iter = tol, max_iter
        self.warm_start = warm_start
        self.p = model.p
        if model.additive_theta:
            solve_theta = np.zeros(model.k)
            self.offset = model.theta_offset(self.theta) - model.theta_offset(solve_theta)
        else:
            solve_theta = self.theta
            self.offset = None
        self.base_cost = build_cost_tensor(model, np.zeros(self.p), solve_theta, mu, nu,
                                           structured=structured)
        self.cache = {} if cache is None else cache
        self._last: SinkhornResult | None = None
        self.n_solves = 0

    def phi_sup_norm(self) -> float:
        norm = self.base_cost.phi_sup_norm()
        if self.offset is not None:
            norm += float(np.max(np.abs(self.offset)))
        return norm

    def solve(self, u) -> SinkhornResult:
        """Sinkhorn result of the underlying (possibly theta-free) problem at ``u``."""
        u = np.asarray(u, dtype=float).reshape(self.p)
        key = u.tobytes()
        hit = self.cache.get(key)
        if hit is not None:
            return hit
        init = (self._last.f, self._last.g) if (self.warm_start and self._last is not None) else None
        res = sinkhorn(self.base_cost.with_direction(u), self.mu, self.nu, self.epsilon,
                       tol=self.tol, max_iter=self.max_iter, init=init)
        self.n_solves += 1
        self._last = res
        self.cache[key] = res
        return res

    def evaluate(self, u) -> DirectionValue:
        u = np.asarray(u, dtype=float).reshape(self.p)
        res = self.solve(u)
        value, tc, grad = res.value, res.transport_cost, res.moment
        if self.offset is not None:
            shift = float(u @ self.offset)
            value, tc, grad = value + shift, tc + shift, grad + self.offset
        if not math.isfinite(value):
            raise NumericalInputError(f"non-finite entropic value at u={u}")
        return DirectionValue(u, float(value), np.array(grad, dtype=float), float(tc),
                              res.kl_term, res.converged, res.marginal_error)

    def evaluate_many(self, U) -> list[DirectionValue]:
        """Evaluate several directions; dense costs are solved in one vectorized batch."""
        U = np.atleast_2d(np.asarray(U, dtype=float)).reshape(-1, self.p)
        if not isinstance(self.base_cost, CostTensor) or len(U) < 2:
            return [self.evaluate(u) for u in U]
        res = sinkhorn_batch(self.base_cost, U, self.mu, self.nu, self.epsilon,
                             tol=self.tol, max_iter=self.max_iter)
        self.n_solves += len(U)
        out = []
        for i, u in enumerate(U):
            value, tc, grad = float(res.value[i]), float(res.transport_cost[i]), res.moment[i]
            if self.offset is not None:
                shift = float(u @ self.offset)
                value, tc, grad = value + shift, tc + shift, grad + self.offset
            if not math.isfinite(value):
                raise NumericalInputError(f"non-finite entropic value at u={u}")
            out.append(DirectionValue(u.copy(), value, np.array(grad, dtype=float), tc,
                                      float(res.kl_term[i]), bool(res.converged[i]),
                                      float(res.marginal_error[i])))
        return out

    def __call__(self, u) -> tuple[float, np.ndarray]:
        dv = self.evaluate(u)
        return dv.value, dv.gradient


@dataclass
class DirectionResult:
    u_star: np.ndarray
    c_value: float
    gradient_norm: float
    iterations: int
    method: str
    candidates: list[tuple[np.ndarray, float]] = field(default_factory=list, repr=False)


@dataclass
class DistanceResult:
    theta: np.ndarray
    d_hat: float
    direction: DirectionResult
    candidate_directions: list[tuple[np.ndarray, float]]
    enlarged_argmax: list[np.ndarray]
    iota: float
    warnings: list[str] = field(default_factory=list)
    records: list[DirectionValue] = field(default_factory=list, repr=False)

    @property
    def converged(self) -> bool:
        return not self.warnings


def project_to_ball(u: np.ndarray) -> np.ndarray:
    return u / max(1.0, float(np.linalg.norm(u)))


def projected_gradient_ascent(evaluator: Callable, u0, step: float, tol: float = 1e-7,
                              max_iter: int = 500, grow: float = 1.5) -> DirectionResult:
    """Maximize a concave function over the unit ball by projected gradient steps.

    The stopping quantity is the gradient-mapping norm
    ``||proj(u + step*grad) - u|| / step``, which equals ``||grad||`` at interior
    points and also vanishes at maximizers on the sphere. An iterate that lowers
    the objective is discarded and the step halved; an accepted iterate
    multiplies the step by ``grow`` (1 keeps it fixed). The best iterate is
    returned.
    """
    if not step > 0:
        raise InvalidInputError("step must be positive")
    if np.linalg.norm(np.asarray(u0, dtype=float)) > 1 + 1e-12:
        raise InvalidInputError("u0 must lie in the unit ball")
    u = project_to_ball(np.atleast_1d(np.asarray(u0, dtype=float)))
    path: list[tuple[np.ndarray, float]] = []
    best_u, best_val, best_grad = u, -np.inf, None
    gmap = np.inf
    it = 0
    while True:
        val, grad = evaluator(u)
        grad = np.asarray(grad, dtype=float)
        if not (math.isfinite(val) and np.all(np.isfinite(grad))):
            raise NumericalInputError(f"evaluator returned non-finite output at u={u}")
        path.append((u.copy(), float(val)))
        if val < best_val - 1e-15:
            step *= 0.5
        else:
            if best_grad is not None:
                step *= grow
            best_u, best_val, best_grad = u, float(val), grad
        u_next = project_to_ball(best_u + step * best_grad)
        gmap = float(np.linalg.norm(u_next - best_u)) / step
        if gmap <= tol or it >= max_iter:
            break
        u = u_next
        it += 1
    return DirectionResult(best_u.copy(), best_val, gmap, it, "pga", path)


def _sphere_points(p: int, resolution: int, seed: int) -> np.ndarray:
    if p == 1:
        pts = np.union1d(np.linspace(-1.0, 1.0, resolution), [-1.0, 0.0, 1.0])
        return pts[:, None]
    if p == 2:
        ang = 2.0 * np.pi * np.arange(resolution) / resolution
        return np.column_stack([np.cos(ang), np.sin(ang)])
    z = np.random.default_rng(seed).standard_normal((resolution, p))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def grid_directions(p: int, resolution: int, seed: int = 0, radii=(1.0,)) -> np.ndarray:
    """Direction grid used by :func:`sphere_grid_max`, one row per direction."""
    if resolution < 3:
        raise InvalidInputError("resolution must be at least 3")
    pts = _sphere_points(p, resolution, seed)
    if p >= 2:
        pts = np.concatenate([r * pts for r in radii])
    return pts


def sphere_grid_max(evaluator: Callable, p: int, resolution: int, seed: int = 0,
                    radii=(1.0,)) -> DirectionResult:
    """Exhaustive search over a direction grid.

    p = 1 uses ``resolution`` equally spaced points of [-1, 1] together with
    {-1, 0, 1}; p = 2 uses equally spaced angles on the circle; p >= 3 uses a
    seeded sample of normalized Gaussian vectors. Each direction is repeated at
    every radius in ``radii`` (p >= 2 only).
    """
    cands = []
    for u in grid_directions(p, resolution, seed, radii):
        out = evaluator(u)
        val = out[0] if isinstance(out, tuple) else out
        cands.append((u.copy(), float(val)))
    i = int(np.argmax([c for _, c in cands]))
    return DirectionResult(cands[i][0].copy(), cands[i][1], float("nan"), len(cands),
                           "sphere_grid", cands)


def default_iota(n: int, scale: float = 0.05) -> float:
    """Enlarged-argmax slack ``scale * n^{-1/2} log n``."""
    return scale * math.log(n) / math.sqrt(n)


@dataclass
class DistanceOptions:
    """Knobs for :func:`distance_statistic`.

    ``method`` is "grid", "pga" or "grid+pga" (grid, then ascent from the best
    grid point). ``resolution`` defaults to 41 points for p = 1, 64 angles for
    p = 2 and 200 directions otherwise. ``pga_step`` defaults to
    ``0.1 / sup|phi|``. ``iota`` defaults to :func:`default_iota` of the
    smaller sample size.
    """

    method: str = "grid+pga"
    resolution: int | None = None
    radii: tuple[float, ...] = (1.0,)
    pga_step: float | None = None
    pga_tol: float = 1e-7
    pga_max_iter: int = 500
    iota: float | None = None
    tol: float = DEFAULT_TOL
    max_iter: int = DEFAULT_MAX_ITER
    structured: bool = True
    warm_start: bool = True
    seed: int = 0

    def grid_resolution(self, p: int) -> int:
        if self.resolution is not None:
            return self.resolution
        return {1: 41, 2: 64}.get(p, 200)


def make_support_function(model, theta, mu, nu, epsilon, opts: DistanceOptions,
                          cache: dict | None = None) -> SupportFunction:
    return SupportFunction(model, theta, mu, nu, epsilon, tol=opts.tol, max_iter=opts.max_iter,
                           structured=opts.structured, warm_start=opts.warm_start, cache=cache)


def distance_statistic(model, theta, mu: EmpiricalMeasure, nu: EmpiricalMeasure,
                       epsilon: float, opts: DistanceOptions | None = None,
                       evaluator: SupportFunction | None = None,
                       transform: Callable[[DirectionValue], float] | None = None,
                       ) -> DistanceResult:
    """Sample distance ``D(theta) = max_{|u| <= 1} c_theta(u)`` and the enlarged argmax.

    Every direction evaluated along the way (grid points, ascent path and the
    origin) forms the candidate set on which the enlarged argmax is realized.
    ``transform`` maps each evaluation to the objective actually maximized
    over that set (for instance a bias-adjusted value); the search itself
    always follows the plain entropic value.
    """
    opts = opts or DistanceOptions()
    if opts.method not in ("grid", "pga", "grid+pga"):
        raise InvalidInputError(f"unknown method {opts.method!r}")
    sf = evaluator or make_support_function(model, theta, mu, nu, epsilon, opts)
    p = sf.p
    records: dict[bytes, DirectionValue] = {}

    def record(u) -> tuple[float, np.ndarray]:
        u = np.asarray(u, dtype=float).reshape(p)
        dv = records.get(u.tobytes())
        if dv is None:
            dv = sf.evaluate(u)
            records[dv.u.tobytes()] = dv
        return dv.value, dv.gradient

    record(np.zeros(p))
    start = np.zeros(p)
    direction = None
    if opts.method in ("grid", "grid+pga"):
        pts = grid_directions(p, opts.grid_resolution(p), opts.seed, opts.radii)
        for dv in sf.evaluate_many(pts):
            records.setdefault(dv.u.tobytes(), dv)
        direction = sphere_grid_max(record, p, opts.grid_resolution(p), seed=opts.seed,
                                    radii=opts.radii)
        start = direction.u_star
    if opts.method in ("pga", "grid+pga"):
        step = opts.pga_step
        if step is None:
            sup = sf.phi_sup_norm()
            step = 0.1 / sup if sup > 0 else 1.0
        pga = projected_gradient_ascent(record, start, step, tol=opts.pga_tol,
                                        max_iter=opts.pga_max_iter)
        if direction is None or pga.c_value >= direction.c_value:
            pga.method = "pga"
            direction = pga

    recs = list(records.values())
    score = (lambda dv: dv.value) if transform is None else transform
    values = np.array([score(dv) for dv in recs])
    best = int(np.argmax(values))
    d_hat = float(values[best])
    if transform is not None or direction is None or direction.c_value < d_hat:
        direction = DirectionResult(recs[best].u.copy(), d_hat, float("nan"), len(recs),
                                    direction.method if direction else "sphere_grid")
    n_eff = min(mu.sample_size, nu.sample_size)
    iota = default_iota(n_eff) if opts.iota is None else float(opts.iota)
    enlarged = [dv.u.copy() for dv, v in zip(recs, values) if v >= d_hat - iota]
    warnings = [f"Sinkhorn did not converge at u={dv.u.tolist()} (error {dv.marginal_error:.3g})"
                for dv in recs if not dv.converged]
    return DistanceResult(
        theta=np.atleast_1d(np.asarray(theta, dtype=float)), d_hat=d_hat, direction=direction,
        candidate_directions=[(dv.u.copy(), float(v)) for dv, v in zip(recs, values)],
        enlarged_argmax=enlarged, iota=iota, warnings=warnings, records=recs,
    )
