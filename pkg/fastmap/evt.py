"""Extreme-value distributions for maxima of smoothed statistical maps.

The maximum of `n` standard normal sites correlated through a circulant
correlation matrix `R` has CDF `Phi(rho * x) ** n`, where `rho` is the
row-sum of `R ** -1/2`. Normalizing that maximum gives Gumbel limits; after
thresholding at `eta` the surviving sites are right-truncated and their
maximum has a reverse Weibull limit located at `eta`.

All functions are pure and accept numpy arrays where a real is expected.
"""

import math
from dataclasses import dataclass
from typing import Literal

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import log_ndtr, ndtr, ndtri

__all__ = [
    "CorrelationSummary",
    "GumbelConstants",
    "RevWeibullConstants",
    "Sided",
    "gumbel_constants",
    "gumbel_upper_quantile",
    "max_cdf_correlated",
    "normal_pdf",
    "revweibull_constants",
    "revweibull_upper_quantile",
    "threshold",
    "truncated_max_cdf",
    "truncnorm_cdf",
    "truncnorm_quantile",
]

Sided = Literal["one", "two"]

_LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class CorrelationSummary:
    """Site count and correlation scalar of a circulant field.

    Attributes:
        n:      number of in-mask sites taking part in the maximum.
        rho:    row-sum of `R ** -1/2`; 1 for an uncorrelated field.
    """

    n: int
    rho: float

    def __post_init__(self) -> None:
        if self.n < 1:
            raise ValueError(f"site count must be >= 1, got {self.n}")
        if not 0.0 < self.rho <= 1.0 + 1e-12:
            raise ValueError(f"rho must lie in (0, 1], got {self.rho}")


@dataclass(frozen=True)
class GumbelConstants:
    """Scale `a_n` and location `b_n` of the Gumbel normalization."""

    a_n: float
    b_n: float


@dataclass(frozen=True)
class RevWeibullConstants:
    """Scale, location and shape of the truncated-maximum normalization."""

    a_trunc: float
    location: float
    tau: float = 1.0


def normal_pdf(x: ArrayLike) -> NDArray[np.float64]:
    """Return the standard normal density at `x`."""
    x = np.asarray(x, dtype=float)
    return np.exp(-0.5 * x * x - _LOG_SQRT_2PI)


def _check_probability(name: str, value: float) -> None:
    if not 0.0 < value < 1.0:
        raise ValueError(f"{name} must lie in (0, 1), got {value}")


def max_cdf_correlated(x: ArrayLike, s: CorrelationSummary) -> NDArray[np.float64]:
    """Return `P(max <= x) = Phi(rho * x) ** n` for a correlated normal field."""

    # log space keeps n in the thousands from underflowing the product.
    return np.exp(s.n * log_ndtr(s.rho * np.asarray(x, dtype=float)))


def truncated_max_cdf(x: ArrayLike, s: CorrelationSummary, eta: float) -> NDArray[np.float64]:
    """Return `[Phi(rho x) / Phi(rho eta)] ** n` below `eta` and 1 at or above it."""

    x = np.asarray(x, dtype=float)
    below = s.n * (log_ndtr(s.rho * np.minimum(x, eta)) - log_ndtr(s.rho * eta))
    return np.where(x < eta, np.exp(below), 1.0)


def gumbel_constants(s: CorrelationSummary) -> GumbelConstants:
    """Return the Gumbel normalizing constants for the maximum of `s.n` correlated sites.

    `b_n = Phi^-1(1 - 1/n) / rho` and `a_n = 1 / (rho n phi(rho b_n))`, so that
    `Phi(rho (a_n x + b_n)) ** n -> exp(-exp(-x))`.
    """

    if s.n < 2:
        raise ValueError(f"Gumbel constants need n >= 2, got {s.n}")

    quantile = -float(ndtri(1.0 / s.n))  # Phi^-1(1 - 1/n) without cancellation
    a_n = 1.0 / (s.rho * s.n * float(normal_pdf(quantile)))
    return GumbelConstants(a_n=a_n, b_n=quantile / s.rho)


def gumbel_upper_quantile(alpha: float) -> float:
    """Return the Gumbel value exceeded with probability `alpha`."""

    _check_probability("alpha", alpha)
    return -math.log(-math.log1p(-alpha))


def truncnorm_cdf(x: ArrayLike, eta: float) -> NDArray[np.float64]:
    """Return the CDF of a standard normal right-truncated at `eta`."""

    x = np.asarray(x, dtype=float)
    ratio = np.exp(log_ndtr(np.minimum(x, eta)) - log_ndtr(eta))
    return np.where(x < eta, ratio, 1.0)


def truncnorm_quantile(q: ArrayLike, eta: float) -> NDArray[np.float64]:
    """Return `Phi^-1(q Phi(eta))`, the quantile of the normal truncated at `eta`."""

    q = np.asarray(q, dtype=float)
    if np.any((q <= 0.0) | (q >= 1.0)):
        raise ValueError("quantile levels must lie in (0, 1)")
    return ndtri(q * ndtr(eta))


def revweibull_upper_quantile(alpha: float, tau: float = 1.0) -> float:
    """Return the reverse Weibull value exceeded with probability `alpha`.

    The CDF is `exp(-(-x) ** tau)` for `x <= 0`; the result is never positive.
    """

    _check_probability("alpha", alpha)
    if tau <= 0.0:
        raise ValueError(f"tau must be positive, got {tau}")
    return -((-math.log1p(-alpha)) ** (1.0 / tau))


def revweibull_constants(s: CorrelationSummary, eta: float) -> RevWeibullConstants:
    """Return the normalization of the maximum of `s.n` sites truncated at `eta`.

    `a = (rho eta - Phi^-1((1 - 1/n) Phi(rho eta))) / rho`, located at `eta`.
    """

    if not math.isfinite(eta):
        raise ValueError(f"truncation point must be finite, got {eta}")
    if s.n < 2:
        raise ValueError(f"reverse Weibull constants need n >= 2, got {s.n}")

    z = s.rho * eta
    level = 1.0 - 1.0 / s.n
    if z > 0.0:
        # 1 - level Phi(z) = Phi(-z) + Phi(z) / n, exact in the upper tail.
        quantile = -float(ndtri(float(ndtr(-z)) + float(ndtr(z)) / s.n))
    else:
        quantile = float(ndtri(level * float(ndtr(z))))
    return RevWeibullConstants(a_trunc=(z - quantile) / s.rho, location=eta, tau=1.0)


def threshold(
    k: int,
    s: CorrelationSummary,
    alpha: float,
    prev_eta: float | None = None,
    sided: Sided = "one",
) -> float:
    """Return the iteration-`k` activation cutoff.

    The first cutoff is the upper `alpha` point of the Gumbel limit; later
    cutoffs step down from `prev_eta` by the reverse Weibull scale times its
    upper `alpha` point. Two-sided maps use `alpha / 2`.
    """

    if k < 1:
        raise ValueError(f"iteration index must be >= 1, got {k}")
    if sided not in ("one", "two"):
        raise ValueError(f"sided must be 'one' or 'two', got {sided!r}")
    level = alpha / 2.0 if sided == "two" else alpha

    if k == 1:
        gumbel = gumbel_constants(s)
        return gumbel.a_n * gumbel_upper_quantile(level) + gumbel.b_n

    if prev_eta is None:
        raise ValueError(f"iteration {k} needs the previous cutoff")
    weibull = revweibull_constants(s, prev_eta)
    return weibull.location + weibull.a_trunc * revweibull_upper_quantile(level, weibull.tau)
