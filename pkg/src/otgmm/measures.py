"""Weighted point clouds used as empirical marginals."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import InvalidInputError

WEIGHT_TOL = 1e-12


@dataclass(frozen=True)
class EmpiricalMeasure:
    """Discrete probability measure ``sum_i w_i delta_{x_i}``.

    ``sample_size`` is the number of observations the measure was built from.
    It differs from the number of atoms when duplicates were aggregated, and it
    is what the bootstrap redraws and what ``sqrt(n)`` scaling uses.
    """

    points: np.ndarray
    weights: np.ndarray
    sample_size: int | None = None

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2:
            raise InvalidInputError("points must be a list of vectors of identical dimension")
        w = np.asarray(self.weights, dtype=float).reshape(-1)
        if len(w) != len(pts):
            raise InvalidInputError(f"{len(pts)} points but {len(w)} weights")
        if len(w) == 0:
            raise InvalidInputError("empty measure")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise InvalidInputError(f"negative or non-finite weight at index {int(np.argmin(w))}")
        if abs(w.sum() - 1.0) > WEIGHT_TOL:
            raise InvalidInputError(f"weights sum to {w.sum():.15g}, expected 1")
        n_obs = len(w) if self.sample_size is None else int(self.sample_size)
        if n_obs < 1:
            raise InvalidInputError("sample_size must be positive")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "sample_size", n_obs)

    @classmethod
    def from_samples(cls, samples, aggregate: bool = False) -> EmpiricalMeasure:
        """Uniform empirical measure of ``samples``; ``aggregate`` merges duplicate rows."""
        x = np.asarray(samples, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        n = len(x)
        if aggregate:
            atoms, counts = np.unique(x, axis=0, return_counts=True)
            return cls(atoms, counts / n, sample_size=n)
        return cls(x, np.full(n, 1.0 / n), sample_size=n)

    @classmethod
    def from_counts(cls, points, counts) -> EmpiricalMeasure:
        counts = np.asarray(counts, dtype=float)
        keep = counts > 0
        total = counts.sum()
        return cls(np.asarray(points, dtype=float)[keep], counts[keep] / total,
                   sample_size=int(round(total)))

    @property
    def n(self) -> int:
        return len(self.weights)

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    def resample(self, rng: np.random.Generator, size: int | None = None) -> EmpiricalMeasure:
        """Draw ``size`` observations with replacement and return their empirical measure.

        Implemented as a multinomial draw over atoms, which has the same law as
        drawing sample indices; atoms that receive no draws are dropped.
        """
        size = self.sample_size if size is None else size
        counts = rng.multinomial(size, self.weights)
        return EmpiricalMeasure.from_counts(self.points, counts)
