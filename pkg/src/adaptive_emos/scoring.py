"""Proper scoring rules and interval utilities for Gaussian and ensemble forecasts.

All operations are pure and accept scalars or numpy arrays (broadcasting).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import special

from .errors import DomainError

_INV_SQRT_PI = 1.0 / math.sqrt(math.pi)
_SQRT2 = math.sqrt(2.0)


def _norm_cdf(z):
    return special.ndtr(z)


def _norm_pdf(z):
    return np.exp(-0.5 * np.asarray(z, dtype=float) ** 2) / math.sqrt(2.0 * math.pi)


def _norm_quantile(p):
    return special.ndtri(p)


@dataclass(frozen=True)
class Interval:
    """Central prediction interval with its nominal coverage level."""

    lower: float
    upper: float
    nominal: float

    def __post_init__(self):
        if not (self.lower <= self.upper):
            raise DomainError(f"interval bounds out of order: [{self.lower}, {self.upper}]")
        if not (0.0 < self.nominal < 1.0):
            raise DomainError(f"nominal coverage must lie in (0,1), got {self.nominal}")

    @property
    def width(self) -> float:
        return self.upper - self.lower

    def covers(self, y) -> bool:
        """Closed-interval membership; boundary observations count as covered."""
        return bool(self.lower <= y <= self.upper)


def gaussian_crps(mu, sigma, y):
    """CRPS of a Gaussian N(mu, sigma^2) forecast against observation y.

    Uses the closed form sigma * (z*(2*Phi(z)-1) + 2*phi(z) - 1/sqrt(pi))
    with z = (y - mu)/sigma. Nonnegative; units of y.
    """
    mu, sigma, y = np.broadcast_arrays(
        np.asarray(mu, dtype=float), np.asarray(sigma, dtype=float), np.asarray(y, dtype=float)
    )
    if np.any(sigma <= 0.0):
        raise DomainError("gaussian_crps requires sigma > 0")
    z = (y - mu) / sigma
    out = sigma * (z * (2.0 * _norm_cdf(z) - 1.0) + 2.0 * _norm_pdf(z) - _INV_SQRT_PI)
    return float(out) if out.ndim == 0 else out


def gaussian_crps_grad(mu, sigma, y):
    """Gradient of `gaussian_crps` with respect to (mu, sigma).

    Returns (d/dmu, d/dsigma) = (1 - 2*Phi(z), 2*phi(z) - 1/sqrt(pi)).
    """
    mu, sigma, y = np.broadcast_arrays(
        np.asarray(mu, dtype=float), np.asarray(sigma, dtype=float), np.asarray(y, dtype=float)
    )
    if np.any(sigma <= 0.0):
        raise DomainError("gaussian_crps_grad requires sigma > 0")
    z = (y - mu) / sigma
    dmu = 1.0 - 2.0 * _norm_cdf(z)
    dsigma = 2.0 * _norm_pdf(z) - _INV_SQRT_PI
    if dmu.ndim == 0:
        return float(dmu), float(dsigma)
    return dmu, dsigma


def sample_crps(values, y) -> float:
    """CRPS of an empirical (ensemble) forecast against observation y.

    Equals mean|x_i - y| - (1/2m^2) * sum_ij |x_i - x_j|, evaluated in the
    O(m log m) sorted form.
    """
    x = np.sort(np.asarray(values, dtype=float).ravel())
    m = x.size
    if m < 1:
        raise DomainError("sample_crps requires a nonempty ensemble")
    term1 = np.mean(np.abs(x - float(y)))
    # sum_ij |x_i - x_j| = 2 * sum_k x_(k) * (2k - m - 1), k 1-based over sorted values
    k = np.arange(1, m + 1, dtype=float)
    pair_sum = 2.0 * np.sum(x * (2.0 * k - m - 1.0))
    return float(term1 - pair_sum / (2.0 * m * m))


def central_interval(mu, sigma, level) -> Interval:
    """Central Gaussian interval [mu - q*sigma, mu + q*sigma] at the given level.

    q is the standard-normal quantile at (1+level)/2.
    """
    mu = float(mu)
    sigma = float(sigma)
    level = float(level)
    if sigma <= 0.0:
        raise DomainError("central_interval requires sigma > 0")
    if not (0.0 < level < 1.0):
        raise DomainError(f"level must lie in (0,1), got {level}")
    q = float(_norm_quantile(0.5 * (1.0 + level)))
    return Interval(mu - q * sigma, mu + q * sigma, level)


def ensemble_interval(values, rank_drop) -> Interval:
    """Order-statistic interval of an ensemble, optionally dropping extremes.

    rank_drop = 0 spans the full ensemble range, rank_drop = 1 drops the
    lowest and highest member. Nominal coverage (m - 1 - 2*rank_drop)/(m + 1)
    assumes members and observation are exchangeable draws.
    """
    x = np.sort(np.asarray(values, dtype=float).ravel())
    m = x.size
    if rank_drop not in (0, 1):
        raise DomainError(f"rank_drop must be 0 or 1, got {rank_drop}")
    if m < 2 * rank_drop + 2:
        raise DomainError(f"ensemble of size {m} too small for rank_drop={rank_drop}")
    nominal = (m - 1 - 2 * rank_drop) / (m + 1)
    return Interval(float(x[rank_drop]), float(x[m - 1 - rank_drop]), nominal)
