"""Moment functions phi(x, y, theta) and their closed-form oracles."""

from __future__ import annotations

import numpy as np
from scipy.stats import norm

from .exceptions import InvalidInputError
from .ot_core import ThresholdCostTensor


class MomentModel:
    """Base class for moment functions ``phi: R^d_x x R^d_y x R^k -> R^p``.

    Subclasses implement :meth:`evaluate`; :meth:`phi_tensor` has a generic
    loop fallback and should be vectorized where it matters.

    A model whose parameter enters as ``phi(x, y, theta) = phi(x, y, 0) +
    theta_offset(theta)`` sets ``additive_theta = True``. The optimal coupling
    then does not depend on ``theta``, and callers may reuse transport solves
    across parameter values.
    """

    name = "abstract"
    d_x: int
    d_y: int
    k: int
    p: int
    additive_theta = False

    def evaluate(self, x, y, theta) -> np.ndarray:
        raise NotImplementedError

    def phi_tensor(self, X, Y, theta) -> np.ndarray:
        X, Y = np.asarray(X, dtype=float), np.asarray(Y, dtype=float)
        out = np.empty((len(X), len(Y), self.p))
        for i, x in enumerate(X):
            for j, y in enumerate(Y):
                out[i, j] = self.evaluate(x, y, theta)
        return out

    def theta_offset(self, theta) -> np.ndarray:
        raise NotImplementedError

    def structured_cost(self, u, theta, mu, nu):
        """Return a structured cost tensor, or None to fall back to the dense one."""
        return None

    def describe(self) -> dict:
        return {"name": self.name}


class ZeroModel(MomentModel):
    """phi identically zero; every parameter value is consistent with the data."""

    name = "zero"

    def __init__(self, p: int = 1, k: int = 1, d_x: int = 1, d_y: int = 1) -> None:
        self.p, self.k, self.d_x, self.d_y = p, k, d_x, d_y

    def evaluate(self, x, y, theta):
        return np.zeros(self.p)

    def phi_tensor(self, X, Y, theta):
        return np.zeros((len(X), len(Y), self.p))

    def describe(self):
        return {"name": self.name, "p": self.p, "k": self.k, "d_x": self.d_x, "d_y": self.d_y}


def benefit_share_phi(y0: float, y1: float, theta: float) -> float:
    """``1{y1 >= y0} - theta``; ties count as benefiting."""
    return float(y1 >= y0) - theta


class BenefitShareModel(MomentModel):
    """Share of units with ``Y(1) >= Y(0)``; x is the control outcome, y the treated one."""

    name = "benefit_share"
    d_x = d_y = k = p = 1
    additive_theta = True

    def evaluate(self, x, y, theta):
        x0 = float(np.ravel(x)[0])
        y1 = float(np.ravel(y)[0])
        return np.array([benefit_share_phi(x0, y1, float(np.ravel(theta)[0]))])

    def phi_tensor(self, X, Y, theta):
        x = np.asarray(X, dtype=float).reshape(-1)
        y = np.asarray(Y, dtype=float).reshape(-1)
        t = float(np.ravel(theta)[0])
        return ((y[None, :] >= x[:, None]).astype(float) - t)[:, :, None]

    def theta_offset(self, theta):
        return -np.atleast_1d(np.asarray(theta, dtype=float))

    def structured_cost(self, u, theta, mu, nu):
        t = float(np.ravel(theta)[0])
        return ThresholdCostTensor(mu.points[:, 0], nu.points[:, 0], [1.0 - t], [-t], u, [t])


def makarov_bounds(mu0: float, mu1: float, sigma: float) -> tuple[float, float]:
    """Sharp bounds on ``P(Y(1) >= Y(0))`` for ``N(mu0, s^2)`` and ``N(mu1, s^2)`` marginals."""
    if not sigma > 0:
        raise InvalidInputError("sigma must be positive")
    if mu1 < mu0:
        raise InvalidInputError("the bound is stated for mu1 >= mu0")
    return float(1.0 - 2.0 * norm.cdf(-(mu1 - mu0) / (2.0 * sigma))), 1.0


def logit_score(y1, y2, x1, x2, theta) -> np.ndarray:
    """Score of the conditional logit likelihood for two periods.

    ``(y1 x1 + y2 x2) - (e^{x1'th} x1 + e^{x2'th} x2) / (e^{x1'th} + e^{x2'th})``.
    The softmax weight is written as a logistic of the index difference, which
    is the max-subtracted form and saturates instead of overflowing.
    """
    x1 = np.asarray(x1, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    theta = np.asarray(theta, dtype=float)
    z1, z2 = x1 @ theta, x2 @ theta
    with np.errstate(over="ignore"):
        w1 = np.asarray(1.0 / (1.0 + np.exp(z2 - z1)))[..., None]
    return y1 * x1 + y2 * x2 - (w1 * x1 + (1.0 - w1) * x2)


def _logit_score_tensor(y1, x1, y2, x2, theta) -> np.ndarray:
    """Score times the switcher indicator on all pairs; shapes (n,), (n,k), (m,), (m,k)."""
    z1, z2 = x1 @ theta, x2 @ theta
    with np.errstate(over="ignore"):
        w1 = 1.0 / (1.0 + np.exp(z2[None, :] - z1[:, None]))  # (n, m)
    X1, X2 = x1[:, None, :], x2[None, :, :]
    s = (y1[:, None, None] * X1 + y2[None, :, None] * X2
         - (w1[:, :, None] * X1 + (1.0 - w1[:, :, None]) * X2))
    switch = (y1[:, None] + y2[None, :]) == 1
    return s * switch[:, :, None]


class PanelLogitScoreModel(MomentModel):
    """Conditional-logit score on switchers; points are ``(y, x_1..x_k)`` rows."""

    name = "panel_logit"

    def __init__(self, k: int = 2) -> None:
        self.k = self.p = int(k)
        self.d_x = self.d_y = 1 + self.k

    def evaluate(self, x, y, theta):
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        y1, y2 = x[0], y[0]
        if y1 + y2 != 1:
            return np.zeros(self.p)
        return logit_score(y1, y2, x[1:], y[1:], theta)

    def phi_tensor(self, X, Y, theta):
        X, Y = np.asarray(X, dtype=float), np.asarray(Y, dtype=float)
        theta = np.asarray(theta, dtype=float)
        return _logit_score_tensor(X[:, 0], X[:, 1:], Y[:, 0], Y[:, 1:], theta)

    def pair_moments(self, y1, x1, y2, x2, theta) -> np.ndarray:
        """phi on matched pairs (row i with row i), shape (n, k)."""
        y1, y2 = np.asarray(y1, dtype=float), np.asarray(y2, dtype=float)
        s = logit_score(y1[:, None], y2[:, None], x1, x2, theta)
        return s * ((y1 + y2) == 1)[:, None]

    def describe(self):
        return {"name": self.name, "k": self.k}


MODELS = {
    "benefit_share": BenefitShareModel,
    "panel_logit": PanelLogitScoreModel,
    "zero": ZeroModel,
}


def get_model(name: str, **kwargs) -> MomentModel:
    try:
        cls = MODELS[name]
    except KeyError:
        raise InvalidInputError(f"unknown model {name!r}; choose from {sorted(MODELS)}") from None
    return cls(**kwargs)
