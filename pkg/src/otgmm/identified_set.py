"""Grid estimates of the identified set ``{theta : D(theta) <= eta}``."""

from __future__ import annotations

import csv
import itertools
import math
import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.spatial.distance import cdist

from ._parallel import pmap
from .direction_search import DistanceOptions, DistanceResult, distance_statistic, make_support_function
from .exceptions import EmptySetError, InvalidInputError


@dataclass(frozen=True)
class ParamGrid:
    """Rectangular parameter grid; ``axes`` holds one ``(low, high, count)`` per coordinate."""

    axes: tuple[tuple[float, float, int], ...]

    def __post_init__(self) -> None:
        axes = tuple((float(lo), float(hi), int(cnt)) for lo, hi, cnt in self.axes)
        if not axes:
            raise InvalidInputError("grid needs at least one axis")
        for lo, hi, cnt in axes:
            if cnt < 1:
                raise InvalidInputError("axis counts must be at least 1")
            if hi < lo:
                raise InvalidInputError(f"axis bounds reversed: ({lo}, {hi})")
        object.__setattr__(self, "axes", axes)

    @classmethod
    def from_points(cls, values) -> ParamGrid:
        """A one-point grid (count 1 on every axis) at ``values``."""
        return cls(tuple((v, v, 1) for v in np.atleast_1d(values)))

    @property
    def k(self) -> int:
        return len(self.axes)

    def axis_values(self, i: int) -> np.ndarray:
        lo, hi, cnt = self.axes[i]
        return np.array([lo]) if cnt == 1 else np.linspace(lo, hi, cnt)

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(cnt for _, _, cnt in self.axes)

    @property
    def points(self) -> np.ndarray:
        """All grid points in row-major order (last coordinate varies fastest)."""
        vals = [self.axis_values(i) for i in range(self.k)]
        return np.array(list(itertools.product(*vals)), dtype=float).reshape(-1, self.k)

    def __len__(self) -> int:
        return math.prod(self.shape)


@dataclass
class IdentifiedSetEstimate:
    grid: ParamGrid
    d_values: np.ndarray
    eta: float
    members: np.ndarray
    warnings: list[str] = field(default_factory=list)
    results: list[DistanceResult] = field(default_factory=list, repr=False)

    @property
    def member_points(self) -> np.ndarray:
        return self.grid.points[self.members]

    @property
    def is_empty(self) -> bool:
        return not bool(np.any(self.members))

    def with_eta(self, eta: float) -> IdentifiedSetEstimate:
        if not eta > 0:
            raise InvalidInputError("eta must be positive")
        return replace(self, eta=float(eta), members=self.d_values <= eta)


def default_eta(n: int, c: float = 0.5) -> float:
    """Threshold ``c * n^{-1/2} log n``, which shrinks to zero slower than ``n^{-1/2}``."""
    if n < 2:
        raise InvalidInputError("n must be at least 2")
    if not c > 0:
        raise InvalidInputError("c must be positive")
    return c * math.log(n) / math.sqrt(n)


def distance_profile(model, mu, nu, points, epsilon: float, opts: DistanceOptions | None = None,
                     threads: int | None = None) -> list[DistanceResult]:
    """``distance_statistic`` at every row of ``points``.

    For models with an additive parameter one transport cache is shared by all
    points, so the work is that of a single parameter value; those runs are
    sequential. Other models are mapped over ``threads`` workers.
    """
    opts = opts or DistanceOptions()
    points = np.atleast_2d(np.asarray(points, dtype=float))
    if model.additive_theta:
        cache: dict = {}
        return [distance_statistic(model, th, mu, nu, epsilon, opts,
                                   evaluator=make_support_function(model, th, mu, nu, epsilon,
                                                                   opts, cache=cache))
                for th in points]
    return pmap(lambda th: distance_statistic(model, th, mu, nu, epsilon, opts), points, threads)


def estimate_identified_set(model, mu, nu, grid: ParamGrid, epsilon: float, eta: float,
                            opts: DistanceOptions | None = None,
                            threads: int | None = None) -> IdentifiedSetEstimate:
    """Grid points whose sample distance does not exceed ``eta``."""
    if not eta > 0:
        raise InvalidInputError(f"eta must be positive, got {eta}")
    if grid.k != model.k:
        raise InvalidInputError(f"grid has {grid.k} axes, model has k={model.k}")
    results = distance_profile(model, mu, nu, grid.points, epsilon, opts, threads)
    d = np.array([r.d_hat for r in results])
    members = d <= eta
    notes = [w for r in results for w in r.warnings]
    if not members.any():
        msg = "estimated identified set is empty; the model may be misspecified at this epsilon/eta"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        notes.append(msg)
    return IdentifiedSetEstimate(grid, d, float(eta), members, notes, results)


def refine_boundary(estimate: IdentifiedSetEstimate, model, mu, nu, epsilon: float,
                    opts: DistanceOptions | None = None, tol: float = 1e-3,
                    max_steps: int = 30) -> np.ndarray:
    """Locate ``D(theta) = eta`` crossings by bisection along grid edges.

    Every pair of axis-adjacent grid points with different membership is
    bisected until the bracketing segment is shorter than ``tol``; the member
    end of the final bracket is returned, one row per crossing.
    """
    grid = estimate.grid
    shape = grid.shape
    pts = grid.points.reshape(*shape, grid.k)
    mask = estimate.members.reshape(shape)
    opts = opts or DistanceOptions()
    cache: dict = {}

    def d_at(th):
        ev = make_support_function(model, th, mu, nu, epsilon, opts,
                                   cache=cache if model.additive_theta else None)
        return distance_statistic(model, th, mu, nu, epsilon, opts, evaluator=ev).d_hat

    out = []
    for axis in range(grid.k):
        if shape[axis] < 2:
            continue
        for idx in np.ndindex(*shape):
            if idx[axis] + 1 >= shape[axis]:
                continue
            nxt = list(idx)
            nxt[axis] += 1
            nxt = tuple(nxt)
            if mask[idx] == mask[nxt]:
                continue
            inside, outside = (pts[idx], pts[nxt]) if mask[idx] else (pts[nxt], pts[idx])
            for _ in range(max_steps):
                if np.linalg.norm(outside - inside) <= tol:
                    break
                mid = 0.5 * (inside + outside)
                if d_at(mid) <= estimate.eta:
                    inside = mid
                else:
                    outside = mid
            out.append(inside)
    return np.array(out).reshape(-1, grid.k)


def hausdorff_distance(a, b) -> float:
    """Hausdorff distance between two finite point sets in ``R^k``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    a = a.reshape(len(a), -1) if a.ndim <= 1 else a
    b = b.reshape(len(b), -1) if b.ndim <= 1 else b
    if len(a) == 0 or len(b) == 0:
        raise EmptySetError("Hausdorff distance needs two nonempty sets")
    d = cdist(a, b)
    return float(max(d.min(axis=1).max(), d.min(axis=0).max()))


def write_estimate_csv(estimate: IdentifiedSetEstimate, path) -> None:
    k = estimate.grid.k
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"theta_{i + 1}" for i in range(k)] + ["d_hat", "member"])
        for th, d, m in zip(estimate.grid.points, estimate.d_values, estimate.members):
            w.writerow([f"{v:.17g}" for v in th] + [f"{d:.17g}", int(m)])
