"""Bootstrap test of ``H0: theta = theta0`` and confidence regions by test inversion.

The statistic is ``sqrt(n) * D(theta0)``. Its null distribution is approximated
by the directional-derivative bootstrap: each draw resamples both marginals,
re-solves the transport problem only on the enlarged argmax set ``U_n`` of the
original sample, and records ``max_{u in U_n} sqrt(n) (c*(u) - c(u))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from ._parallel import pmap
from .direction_search import (
    DirectionValue,
    DistanceOptions,
    DistanceResult,
    distance_statistic,
    make_support_function,
)
from .exceptions import InvalidInputError, OTGMMError
from .identified_set import ParamGrid
from .ot_core import conservative_adjust

FAILURE_SHARE = 0.05
# a bootstrap solve that stops at the iteration cap is still used when its
# marginals are this accurate; small-epsilon problems converge sublinearly
DRAW_MARGINAL_TOL = 1e-6

# resampler(rng) -> (model, mu, nu) for one bootstrap world
Resampler = Callable[[np.random.Generator], tuple]


def order_statistic_quantile(draws: np.ndarray, alpha: float) -> float:
    """The ``ceil((1 - alpha) B)``-th smallest draw."""
    draws = np.sort(np.asarray(draws, dtype=float))
    if len(draws) == 0:
        return float("nan")
    r = min(max(math.ceil((1.0 - alpha) * len(draws) - 1e-12), 1), len(draws))
    return float(draws[r - 1])


def mc_p_value(draws: np.ndarray, statistic: float) -> float:
    draws = np.asarray(draws, dtype=float)
    return float((1 + np.sum(draws >= statistic)) / (len(draws) + 1))


@dataclass
class BootstrapTestResult:
    theta0: np.ndarray
    statistic: float
    critical_value: float
    p_value: float
    reject: bool
    draws: np.ndarray
    u_hat_set: list[np.ndarray]
    seed: int | tuple[int, ...]
    alpha: float
    d_hat: float
    n: int
    n_failed: int = 0
    unreliable: bool = False
    warnings: list[str] = field(default_factory=list)
    distance: DistanceResult | None = field(default=None, repr=False)

    @property
    def valid_draws(self) -> np.ndarray:
        return self.draws[np.isfinite(self.draws)]

    def at_alpha(self, alpha: float) -> BootstrapTestResult:
        """The same test at another level, reusing the stored draws."""
        crit = order_statistic_quantile(self.valid_draws, alpha)
        return replace(self, alpha=alpha, critical_value=crit, reject=bool(self.statistic > crit))

    def summary(self) -> dict:
        return {
            "theta0": self.theta0.tolist(), "statistic": self.statistic, "d_hat": self.d_hat,
            "critical_value": self.critical_value, "p_value": self.p_value,
            "reject": self.reject, "alpha": self.alpha, "B": int(len(self.draws)),
            "n": self.n, "n_failed": self.n_failed, "unreliable": self.unreliable,
            "u_hat_set": [u.tolist() for u in self.u_hat_set],
            "seed": list(self.seed) if isinstance(self.seed, tuple) else self.seed,
            "warnings": self.warnings,
        }


def _value_transform(adjust_epsilon: float | None, n: int, basis: str):
    if adjust_epsilon is None:
        return None
    if basis not in ("value", "transport_cost"):
        raise InvalidInputError(f"unknown adjustment basis {basis!r}")

    def transform(dv: DirectionValue) -> float:
        base = dv.value if basis == "value" else dv.transport_cost
        return conservative_adjust(base, adjust_epsilon, n, dv.kl_term)

    return transform


def _seed_entropy(seed) -> list[int]:
    return list(seed) if isinstance(seed, (tuple, list)) else [int(seed)]


def bootstrap_test(model, theta0, mu, nu, epsilon: float, iota: float | None = None,
                   B: int = 200, alpha: float = 0.10, seed: int | Sequence[int] = 0,
                   opts: DistanceOptions | None = None, resampler: Resampler | None = None,
                   n: int | None = None, threads: int | None = None,
                   adjust_epsilon: float | None = None, basis: str = "value",
                   ) -> BootstrapTestResult:
    """Test ``H0: theta = theta0`` at level ``alpha`` with ``B`` bootstrap draws.

    Draw ``b`` uses ``numpy.random.default_rng([*seed, b])`` so results do not
    depend on scheduling. By default both marginals are resampled
    independently at their own sample sizes; ``resampler`` replaces this for
    designs whose marginals are built from richer data, and must then be paired
    with the scaling sample size ``n``. Draws whose transport solves fail or
    end with a marginal error above ``DRAW_MARGINAL_TOL`` are excluded; more
    than 5% failures marks the result unreliable. ``adjust_epsilon`` switches
    to the bias-adjusted statistic.
    """
    if B < 50:
        raise InvalidInputError("B must be at least 50")
    if not 0 < alpha < 1:
        raise InvalidInputError("alpha must lie in (0, 1)")
    if n is None:
        if resampler is not None:
            raise InvalidInputError("a custom resampler needs the scaling sample size n")
        if mu.sample_size != nu.sample_size:
            raise InvalidInputError(
                f"the test needs equal sample sizes, got {mu.sample_size} and {nu.sample_size}")
        n = mu.sample_size
    opts = opts or DistanceOptions()
    if iota is not None:
        opts = replace(opts, iota=float(iota))
    theta0 = np.atleast_1d(np.asarray(theta0, dtype=float))
    transform = _value_transform(adjust_epsilon, n, basis)
    score = (lambda dv: dv.value) if transform is None else transform

    base = distance_statistic(model, theta0, mu, nu, epsilon, opts, transform=transform)
    root_n = math.sqrt(n)
    statistic = root_n * base.d_hat
    u_set = base.enlarged_argmax
    by_key = {dv.u.tobytes(): dv for dv in base.records}
    c_base = np.array([score(by_key[u.tobytes()]) for u in u_set])
    entropy = _seed_entropy(seed)

    def one_draw(b: int) -> float:
        rng = np.random.default_rng(entropy + [b])
        try:
            if resampler is None:
                m_b, mu_b, nu_b = model, mu.resample(rng), nu.resample(rng)
            else:
                m_b, mu_b, nu_b = resampler(rng)
            sf = make_support_function(m_b, theta0, mu_b, nu_b, epsilon, opts)
            vals = []
            for dv in sf.evaluate_many(u_set):
                if not (dv.converged or dv.marginal_error <= DRAW_MARGINAL_TOL):
                    return float("nan")
                vals.append(score(dv))
        except (OTGMMError, FloatingPointError, ValueError):
            return float("nan")
        return float(root_n * np.max(np.asarray(vals) - c_base))

    draws = np.array(pmap(one_draw, range(B), threads))
    ok = np.isfinite(draws)
    n_failed = int(B - ok.sum())
    crit = order_statistic_quantile(draws[ok], alpha)
    notes = list(base.warnings)
    unreliable = n_failed > FAILURE_SHARE * B
    if unreliable:
        notes.append(f"{n_failed} of {B} bootstrap draws failed")
    return BootstrapTestResult(
        theta0=theta0, statistic=float(statistic), critical_value=crit,
        p_value=mc_p_value(draws[ok], statistic), reject=bool(statistic > crit),
        draws=draws, u_hat_set=u_set, seed=tuple(entropy) if len(entropy) > 1 else entropy[0],
        alpha=alpha, d_hat=base.d_hat, n=int(n), n_failed=n_failed, unreliable=unreliable,
        warnings=notes, distance=base,
    )


def adjusted_bootstrap_test(model, theta0, mu, nu, epsilon: float, iota: float | None = None,
                            B: int = 200, alpha: float = 0.10, seed: int | Sequence[int] = 0,
                            opts: DistanceOptions | None = None,
                            adjust_epsilon: float | None = None, basis: str = "value",
                            threads: int | None = None) -> BootstrapTestResult:
    """Bootstrap test on ``c(u) - eps (log n - KL(u))`` in place of ``c(u)``.

    ``adjust_epsilon`` defaults to ``epsilon``; setting it to 0 reproduces
    :func:`bootstrap_test`. ``basis="transport_cost"`` shifts the transport
    cost instead of the entropic value, which gives a lower bound on the
    unregularized value at every direction.
    """
    if mu.n != nu.n or mu.sample_size != nu.sample_size:
        raise InvalidInputError("the adjusted statistic needs n = m")
    eps_adj = epsilon if adjust_epsilon is None else float(adjust_epsilon)
    return bootstrap_test(model, theta0, mu, nu, epsilon, iota=iota, B=B, alpha=alpha,
                          seed=seed, opts=opts, threads=threads, adjust_epsilon=eps_adj,
                          basis=basis)


@dataclass
class ConfidenceRegion:
    grid: ParamGrid
    accepted: np.ndarray
    alpha: float
    per_point: list[BootstrapTestResult] = field(repr=False)

    def accepted_at(self, alpha: float) -> np.ndarray:
        return np.array([not r.at_alpha(alpha).reject for r in self.per_point])

    @property
    def accepted_points(self) -> np.ndarray:
        return self.grid.points[self.accepted]

    @property
    def statistics(self) -> np.ndarray:
        return np.array([r.statistic for r in self.per_point])

    @property
    def d_values(self) -> np.ndarray:
        return np.array([r.d_hat for r in self.per_point])


def confidence_region(model, mu, nu, grid: ParamGrid, epsilon: float, iota: float | None = None,
                      B: int = 200, alpha: float = 0.10, seed: int = 0,
                      opts: DistanceOptions | None = None, resampler: Resampler | None = None,
                      n: int | None = None, threads: int | None = None,
                      adjust_epsilon: float | None = None, basis: str = "value",
                      ) -> ConfidenceRegion:
    """Invert :func:`bootstrap_test` over ``grid``; point ``i`` uses seed ``(seed, i)``."""
    if grid.k != model.k:
        raise InvalidInputError(f"grid has {grid.k} axes, model has k={model.k}")
    results = [
        bootstrap_test(model, th, mu, nu, epsilon, iota=iota, B=B, alpha=alpha,
                       seed=(int(seed), i), opts=opts, resampler=resampler, n=n,
                       threads=threads, adjust_epsilon=adjust_epsilon, basis=basis)
        for i, th in enumerate(grid.points)
    ]
    accepted = np.array([not r.reject for r in results])
    return ConfidenceRegion(grid, accepted, alpha, results)
