"""Voxelwise general linear model with autoregressive errors.

Each voxel's series is fit by two-pass generalized least squares: OLS, then
a Yule-Walker AR(p) fit of the residuals, prewhitening of data and design,
a refit, and one more AR/refit pass. Orders 0..p_max are compared by BIC on
a common subsample, and the selected fits' contrast t-statistics form the
statistical parametric map (SPM).
"""

import math
from dataclasses import dataclass, field
from typing import Literal, NamedTuple, Sequence

import numpy as np
from loguru import logger
from numpy.typing import ArrayLike, NDArray
from scipy.signal import lfilter
from scipy.stats import gamma
from statsmodels.tsa.stattools import acovf, levinson_durbin

from fastmap.smoothing import Grid, Volume

__all__ = [
    "Contrast",
    "DesignMatrix",
    "RankDeficientError",
    "VolumeFits",
    "VoxelFit",
    "ar_roots_ok",
    "block_schedule",
    "build_design",
    "build_spm",
    "canonical_hrf",
    "fit_ar_glm",
    "fit_volume",
    "project_stationary",
    "select_order",
    "yule_walker",
]

HRF_PEAK = 6.0
HRF_UNDERSHOOT = 16.0
HRF_RATIO = 1.0 / 6.0
HRF_LENGTH = 32.0
GLS_PASSES = 2
SHRINK = 0.99

FloatArray = NDArray[np.float64]


class RankDeficientError(ValueError):
    """Design (or prewhitened design) lacks full column rank."""


def _double_gamma(t: FloatArray) -> FloatArray:
    # gamma shapes chosen so the modes sit at HRF_PEAK and HRF_UNDERSHOOT seconds.
    response = gamma.pdf(t, HRF_PEAK + 1.0)
    undershoot = gamma.pdf(t, HRF_UNDERSHOOT + 1.0)
    return np.asarray(response - HRF_RATIO * undershoot)


_HRF_MAX = float(np.max(_double_gamma(np.linspace(0.0, HRF_LENGTH, 32001))))


def canonical_hrf(t: ArrayLike) -> FloatArray:
    """Return the double-gamma hemodynamic response at times `t` (seconds), unit peak."""
    return _double_gamma(np.asarray(t, dtype=float)) / _HRF_MAX


def block_schedule(
    n_blocks: int = 16, block_length: int = 6, start_on: bool = False
) -> FloatArray:
    """Return an alternating 0/1 block series; blocks start with rest unless `start_on`."""

    if n_blocks < 1 or block_length < 1:
        raise ValueError("need at least one block of at least one time point")
    states = (np.arange(n_blocks) + int(start_on)) % 2
    return np.repeat(states, block_length).astype(float)


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    """Regressors of the GLM; the first column is the intercept.

    Attributes:
        matrix: `T x d` array.
        roles:  label per column, e.g. `("intercept", "stimulus", "drift1")`.
        tr:     repeat time in seconds.
    """

    matrix: FloatArray = field(repr=False)
    roles: tuple[str, ...]
    tr: float = 1.0

    def __post_init__(self) -> None:
        matrix = np.array(self.matrix, dtype=float)
        if matrix.ndim != 2 or matrix.shape[1] != len(self.roles):
            raise ValueError(f"design of shape {matrix.shape} does not match roles {self.roles}")
        if not np.all(matrix[:, 0] == 1.0):
            raise ValueError("first design column must be the intercept")
        matrix.setflags(write=False)
        object.__setattr__(self, "matrix", matrix)

    @property
    def T(self) -> int:  # noqa: N802
        """Number of time points."""
        return int(self.matrix.shape[0])

    @property
    def d(self) -> int:
        """Number of columns."""
        return int(self.matrix.shape[1])

    @property
    def full_rank(self) -> bool:
        """True when the columns are linearly independent."""
        return int(np.linalg.matrix_rank(self.matrix)) == self.d

    def column(self, role: str) -> FloatArray:
        """Return the column labelled `role`."""
        return self.matrix[:, self.roles.index(role)]


def build_design(
    blocks: ArrayLike,
    T: int,  # noqa: N803
    TR: float,  # noqa: N803
    drift_order: int = 1,
) -> DesignMatrix:
    """Return intercept, HRF-convolved stimulus and polynomial drift columns.

    `blocks` is the 0/1 stimulus series, one value per time point. Drift
    column `j` is `t ** j`, centered and scaled into [-1, 1].
    """

    series = np.asarray(blocks, dtype=float).ravel()
    if series.size == 0:
        raise ValueError("empty stimulus schedule")
    if T < 8 or TR <= 0.0:
        raise ValueError(f"need T >= 8 and TR > 0, got T={T}, TR={TR}")
    if series.size != T:
        raise ValueError(f"schedule has {series.size} points, expected {T}")

    hrf = canonical_hrf(np.arange(0.0, HRF_LENGTH, TR))
    columns = [np.ones(T), np.convolve(series, hrf)[:T]]
    roles = ["intercept", "stimulus"]

    t = np.linspace(-1.0, 1.0, T)
    for j in range(1, drift_order + 1):
        drift = t**j
        drift = drift - drift.mean()
        columns.append(drift / np.abs(drift).max())
        roles.append(f"drift{j}")

    return DesignMatrix(np.column_stack(columns), tuple(roles), TR)


@dataclass(frozen=True)
class Contrast:
    """Linear combination `c'beta` tested by the SPM."""

    weights: tuple[float, ...]
    sided: Literal["one", "two"] = "one"

    def __post_init__(self) -> None:
        object.__setattr__(self, "weights", tuple(float(w) for w in self.weights))
        if not any(self.weights):
            raise ValueError("contrast weights are all zero")
        if self.sided not in ("one", "two"):
            raise ValueError(f"sided must be 'one' or 'two', got {self.sided!r}")

    @classmethod
    def for_role(cls, design: DesignMatrix, role: str = "stimulus") -> "Contrast":
        """Return the contrast selecting one design column."""
        weights = [0.0] * design.d
        weights[design.roles.index(role)] = 1.0
        return cls(tuple(weights))

    @property
    def vector(self) -> FloatArray:
        """Weights as an array."""
        return np.asarray(self.weights)

    def negated(self) -> "Contrast":
        """Return the sign-flipped contrast."""
        return Contrast(tuple(-w for w in self.weights), self.sided)


@dataclass(frozen=True, eq=False)
class VoxelFit:
    """GLS fit of one voxel's series."""

    beta: FloatArray
    phi: FloatArray
    sigma2: float
    p: int
    bic: float
    tstat: float
    loglik: float
    beta_cov: FloatArray = field(repr=False)

    def t_for(self, contrast: Contrast) -> float:
        """Return the t-statistic of `contrast`."""
        c = contrast.vector
        return float(c @ self.beta / math.sqrt(float(c @ self.beta_cov @ c)))


# -------------------------------------------------------------------------------
# AR estimation


def ar_roots_ok(phi: ArrayLike) -> bool:
    """Return True when the AR polynomial has every root outside the unit circle."""

    phi = np.asarray(phi, dtype=float)
    if phi.size == 0:
        return True
    # roots of z^p - phi_1 z^(p-1) - ... are the reciprocals of the AR polynomial's roots.
    return bool(np.all(np.abs(np.roots(np.r_[1.0, -phi])) < 1.0))


def project_stationary(phi: ArrayLike) -> FloatArray:
    """Shrink `phi` toward zero by factors of 0.99 until the model is stationary."""

    phi = np.array(phi, dtype=float)
    if ar_roots_ok(phi):
        return phi
    logger.warning("nonstationary AR estimate {}; shrinking toward zero", np.round(phi, 4))
    while not ar_roots_ok(phi):
        phi *= SHRINK
    return phi


def yule_walker(resid: ArrayLike, p: int) -> FloatArray:
    """Return Yule-Walker AR(p) coefficients by Levinson-Durbin recursion."""

    if p == 0:
        return np.zeros(0)
    acov = acovf(np.asarray(resid, dtype=float), adjusted=False, demean=False, fft=False, nlag=p)
    if acov[0] <= 0.0:
        return np.zeros(p)
    _, phi, _, _, _ = levinson_durbin(acov, nlags=p, isacov=True)
    return project_stationary(phi)


def _prewhiten(values: FloatArray, phi: FloatArray) -> FloatArray:
    """Apply the AR filter `e_t = x_t - sum_j phi_j x_(t-j)` and drop the first p rows."""
    if phi.size == 0:
        return values
    return np.asarray(lfilter(np.r_[1.0, -phi], [1.0], values, axis=0))[phi.size :]


def _lstsq(X: FloatArray, y: FloatArray) -> FloatArray:  # noqa: N803
    beta, _, rank, _ = np.linalg.lstsq(X, y, rcond=None)
    if rank < X.shape[1]:
        raise RankDeficientError(f"design has rank {rank} < {X.shape[1]} columns")
    return np.asarray(beta)


def fit_ar_glm(
    y: ArrayLike,
    design: DesignMatrix,
    p: int,
    contrast: Contrast | None = None,
    p_max: int | None = None,
) -> VoxelFit:
    """Fit the GLM with AR(p) errors by two-pass generalized least squares.

    The likelihood (and so the BIC) is the conditional Gaussian likelihood of
    the innovations at time points `p_max..T-1`, which makes fits of
    different orders comparable; `p_max` defaults to `p`.
    """

    y = np.asarray(y, dtype=float)
    X = design.matrix  # noqa: N806
    T, d = X.shape  # noqa: N806
    m = p if p_max is None else p_max
    if p < 0 or p > m:
        raise ValueError(f"need 0 <= p <= p_max, got p={p}, p_max={m}")
    if y.shape != (T,):
        raise ValueError(f"series has shape {y.shape}, design has {T} rows")
    if T <= d + m + 2:
        raise ValueError(f"{T} time points are too few for {d} regressors and AR({m})")
    if contrast is None:
        contrast = Contrast.for_role(design)

    beta = _lstsq(X, y)
    phi = np.zeros(0)
    for _ in range(GLS_PASSES if p else 0):
        phi = yule_walker(y - X @ beta, p)
        beta = _lstsq(_prewhiten(X, phi), _prewhiten(y, phi))

    Xw = _prewhiten(X, phi)  # noqa: N806
    innovations = _prewhiten(y, phi) - Xw @ beta
    sigma2 = float(innovations @ innovations) / (innovations.size - d)
    if sigma2 <= np.finfo(float).eps * max(float(np.mean(y * y)), np.finfo(float).tiny):
        raise ValueError("residual variance is zero: the series lies in the span of the design")
    beta_cov = sigma2 * np.linalg.inv(Xw.T @ Xw)

    common = innovations[m - p :]
    n_common = T - m
    sigma2_ml = max(float(common @ common) / n_common, np.finfo(float).tiny)
    loglik = -0.5 * n_common * (math.log(2.0 * math.pi * sigma2_ml) + 1.0)
    bic = -2.0 * loglik + (d + p + 1) * math.log(n_common)

    c = contrast.vector
    tstat = float(c @ beta / math.sqrt(float(c @ beta_cov @ c)))
    return VoxelFit(beta, phi, sigma2, p, bic, tstat, loglik, beta_cov)


def select_order(
    y: ArrayLike,
    design: DesignMatrix,
    p_max: int = 5,
    contrast: Contrast | None = None,
) -> VoxelFit:
    """Return the BIC-minimizing fit over AR orders `0..p_max`; ties go to the smaller order."""

    if p_max < 0:
        raise ValueError(f"p_max must be >= 0, got {p_max}")

    best: VoxelFit | None = None
    for p in range(p_max + 1):
        fit = fit_ar_glm(y, design, p, contrast, p_max)
        if best is None or fit.bic < best.bic:
            best = fit
    assert best is not None
    return best


def build_spm(fits: Sequence[VoxelFit | None], contrast: Contrast, grid: Grid) -> Volume:
    """Return the volume of contrast t-statistics; `fits` follow the mask in row-major order."""

    if len(fits) != grid.n_sites or any(fit is None for fit in fits):
        raise ValueError(f"need one fit per in-mask site ({grid.n_sites}), got {len(fits)}")

    values = np.zeros(grid.dims)
    values[grid.mask] = [fit.t_for(contrast) for fit in fits if fit is not None]
    return Volume(grid, values)


class VolumeFits(NamedTuple):
    """Per-site fits of a 4D dataset, with the selected-order map."""

    fits: list[VoxelFit]
    order: NDArray[np.int_]


def fit_volume(
    data: ArrayLike,
    design: DesignMatrix,
    mask: ArrayLike,
    p_max: int = 5,
    contrast: Contrast | None = None,
) -> VolumeFits:
    """Fit every in-mask series of `data` (spatial dims + time) with `select_order`."""

    data = np.asarray(data, dtype=float)
    mask = np.asarray(mask, dtype=bool)
    if data.shape[:-1] != mask.shape or data.shape[-1] != design.T:
        raise ValueError(
            f"data shape {data.shape} does not fit mask {mask.shape} x T={design.T}"
        )
    if not design.full_rank:
        raise RankDeficientError(f"design columns {design.roles} are linearly dependent")

    series = data[mask]
    fits = [select_order(y, design, p_max, contrast) for y in series]
    order = np.full(mask.shape, -1, dtype=int)
    order[mask] = [fit.p for fit in fits]
    logger.debug("fit {} series; order counts {}", len(fits), np.bincount(order[mask]))
    return VolumeFits(fits, order)
