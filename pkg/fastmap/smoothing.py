"""Circulant Gaussian smoothing on 2D/3D grids.

A Gaussian kernel wrapped on the grid's torus defines a circulant operator
that the FFT diagonalizes. Its spectrum gives the correlation matrix `S_h`
of white noise smoothed at bandwidth `h` (FWHM, in voxels), and with it the
whitening map, the log-determinant and the profile loglikelihood used to
estimate `h` from a statistical map.

`robust_smooth` is the alternative smoother: penalized least squares in the
DCT basis with the penalty chosen by generalized cross-validation and
bisquare reweighting against outliers.
"""

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

import numpy as np
from loguru import logger
from numpy.typing import ArrayLike, NDArray
from scipy.fft import dctn, fftn, idctn, ifftn
from scipy.sparse.linalg import LinearOperator, cg

__all__ = [
    "FWHM_TO_SIGMA",
    "Grid",
    "KernelSpectrum",
    "RobustSmoothResult",
    "Volume",
    "color",
    "fit_fwhm_mle",
    "gaussian_field",
    "golden_section_max",
    "kernel_spectrum",
    "periodic_gaussian_kernel",
    "profile_loglik",
    "rho_of",
    "robust_smooth",
    "smooth",
    "whiten",
]

FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))
SPECTRAL_FLOOR = 1e-12
INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0
INV_PHI_SQUARE = (3.0 - math.sqrt(5.0)) / 2.0

FloatArray = NDArray[np.float64]
BoolArray = NDArray[np.bool_]


@dataclass(frozen=True, eq=False)
class Grid:
    """Regular 2D or 3D lattice with an inclusion mask.

    Attributes:
        dims:           extent per axis.
        voxel_sizes:    physical spacing per axis; defaults to 1 on every axis.
        mask:           boolean inclusion per site; defaults to every site.
    """

    dims: tuple[int, ...]
    voxel_sizes: tuple[float, ...] = ()
    mask: BoolArray = field(default=None, repr=False)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        dims = tuple(int(n) for n in self.dims)
        if len(dims) not in (2, 3):
            raise ValueError(f"grids have 2 or 3 axes, got {len(dims)}")
        if min(dims) < 4:
            raise ValueError(f"every extent must be >= 4, got {dims}")
        object.__setattr__(self, "dims", dims)

        sizes = tuple(float(v) for v in self.voxel_sizes) or (1.0,) * len(dims)
        if len(sizes) != len(dims) or min(sizes) <= 0.0:
            raise ValueError(f"voxel sizes {sizes} do not fit dims {dims}")
        object.__setattr__(self, "voxel_sizes", sizes)

        if self.mask is None:
            mask = np.ones(dims, dtype=bool)
        else:
            mask = np.array(self.mask, dtype=bool)
            if mask.shape != dims:
                raise ValueError(f"mask shape {mask.shape} does not match dims {dims}")
        if not mask.any():
            raise ValueError("mask selects no sites")
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)

    @property
    def size(self) -> int:
        """Number of sites on the full grid."""
        return math.prod(self.dims)

    @property
    def n_sites(self) -> int:
        """Number of in-mask sites."""
        return int(self.mask.sum())

    def matches(self, other: "Grid") -> bool:
        """Return True when `other` has the same extents and mask."""
        return self.dims == other.dims and bool(np.array_equal(self.mask, other.mask))


@dataclass(frozen=True, eq=False)
class Volume:
    """Scalar field on a grid; out-of-mask sites hold NaN."""

    grid: Grid
    values: FloatArray = field(repr=False)

    def __post_init__(self) -> None:
        values = np.array(self.values, dtype=float)
        if values.shape != self.grid.dims:
            raise ValueError(f"values shape {values.shape} does not match {self.grid.dims}")
        if not np.all(np.isfinite(values[self.grid.mask])):
            raise ValueError("in-mask values must be finite")
        values[~self.grid.mask] = np.nan
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_array(
        cls,
        values: ArrayLike,
        mask: ArrayLike | None = None,
        voxel_sizes: tuple[float, ...] = (),
    ) -> "Volume":
        """Build a volume and its grid from a plain array."""
        values = np.asarray(values, dtype=float)
        grid = Grid(values.shape, voxel_sizes, None if mask is None else np.asarray(mask))
        return cls(grid, values)

    def filled(self, fill: float = 0.0) -> FloatArray:
        """Return the values with out-of-mask sites set to `fill`."""
        return np.where(self.grid.mask, self.values, fill)

    def in_mask(self) -> FloatArray:
        """Return the in-mask values in row-major order."""
        return self.values[self.grid.mask]

    def with_values(self, values: ArrayLike) -> "Volume":
        """Return a volume on the same grid holding `values`."""
        return Volume(self.grid, np.asarray(values, dtype=float))


@dataclass(frozen=True, eq=False)
class KernelSpectrum:
    """Eigenvalues of the circulant correlation operator `S_h`.

    Attributes:
        h:          FWHM bandwidth in voxels.
        lam:        eigenvalue per grid frequency, mean 1, floored at 1e-12.
        transfer:   DFT of the unit-sum kernel divided by its root energy.
        dims:       grid extents.
    """

    h: float
    lam: FloatArray = field(repr=False)
    transfer: FloatArray = field(repr=False)
    dims: tuple[int, ...]

    @property
    def lambda0(self) -> float:
        """Zero-frequency eigenvalue; the row-sum of `S_h`."""
        return float(self.lam.flat[0])


def periodic_gaussian_kernel(grid: Grid, h: float) -> FloatArray:
    """Return the unit-sum Gaussian kernel wrapped on the grid's torus."""

    if h <= 0.0:
        raise ValueError(f"bandwidth must be positive, got {h}")

    kernel = np.ones(())
    for extent, size in zip(grid.dims, grid.voxel_sizes):
        sigma = h * FWHM_TO_SIGMA / size
        offset = np.minimum(np.arange(extent), extent - np.arange(extent))
        axis = np.exp(-0.5 * (offset / sigma) ** 2)
        kernel = np.multiply.outer(kernel, axis / axis.sum())
    return kernel


def kernel_spectrum(grid: Grid, h: float) -> KernelSpectrum:
    """Return the spectrum of the unit-diagonal circulant operator `S_h`."""

    kernel = periodic_gaussian_kernel(grid, h)
    energy = float(np.sum(kernel * kernel))
    # the wrapped kernel is even, so its DFT is real.
    transfer = fftn(kernel).real / math.sqrt(energy)
    lam = np.maximum(transfer * transfer, SPECTRAL_FLOOR)
    return KernelSpectrum(h=h, lam=lam, transfer=transfer, dims=grid.dims)


def rho_of(spec: KernelSpectrum) -> float:
    """Return the row-sum of `S_h ** -1/2`, which is `lambda0 ** -1/2`."""
    return min(1.0, spec.lambda0**-0.5)


def _check_dims(vol: Volume, spec: KernelSpectrum) -> None:
    if vol.grid.dims != spec.dims:
        raise ValueError(f"volume dims {vol.grid.dims} do not match spectrum {spec.dims}")


def _apply_multiplier(values: FloatArray, multiplier: FloatArray) -> FloatArray:
    return np.asarray(ifftn(fftn(values) * multiplier).real)


def smooth(vol: Volume, h: float) -> Volume:
    """Convolve with the wrapped Gaussian at FWHM `h`, preserving unit white-noise variance."""

    spec = kernel_spectrum(vol.grid, h)
    return vol.with_values(_apply_multiplier(vol.filled(), spec.transfer))


def whiten(vol: Volume, spec: KernelSpectrum) -> Volume:
    """Apply `S_h ** -1/2`."""

    _check_dims(vol, spec)
    return vol.with_values(_apply_multiplier(vol.filled(), spec.lam**-0.5))


def color(vol: Volume, spec: KernelSpectrum) -> Volume:
    """Apply `S_h ** 1/2`; the inverse of `whiten`."""

    _check_dims(vol, spec)
    return vol.with_values(_apply_multiplier(vol.filled(), np.sqrt(spec.lam)))


def gaussian_field(grid: Grid, h: float, rng: np.random.Generator) -> Volume:
    """Return a unit-variance stationary Gaussian field with correlation `S_h`."""

    noise = Volume(Grid(grid.dims, grid.voxel_sizes), rng.standard_normal(grid.dims))
    colored = color(noise, kernel_spectrum(grid, h))
    return Volume(grid, colored.values)


class _ProfileLikelihood:
    """Loglikelihood of `h` for one field; caches the field's power spectrum."""

    def __init__(self, vol: Volume) -> None:
        values = vol.filled()
        self.grid = vol.grid
        self.n = values.size
        # Parseval: ||S^-1/2 x||^2 = sum_j |X_j|^2 / (n lam_j)
        self.power = np.abs(fftn(values)) ** 2 / self.n
        self.constant = -0.5 * self.n * math.log(2.0 * math.pi)

    def __call__(self, h: float) -> float:
        spec = kernel_spectrum(self.grid, h)
        logdet = float(np.sum(np.log(spec.lam)))
        quad = float(np.sum(self.power / spec.lam))
        return self.constant - 0.5 * logdet - 0.5 * quad


def profile_loglik(vol: Volume, h: float) -> float:
    """Return the Gaussian loglikelihood of the field under correlation `S_h`."""
    return _ProfileLikelihood(vol)(h)


def golden_section_max(
    f: Callable[[float], float],
    lo: float,
    hi: float,
    tol: float = 1e-3,
) -> float:
    """Return an approximate maximizer of the unimodal `f` on `[lo, hi]`.

    The bracket shrinks by the golden ratio each step until it is narrower
    than `tol`.
    """

    lo, hi = min(lo, hi), max(lo, hi)
    width = hi - lo
    if width <= tol:
        return 0.5 * (lo + hi)

    steps = int(math.ceil(math.log(tol / width) / math.log(INV_PHI)))

    c = lo + INV_PHI_SQUARE * width
    d = lo + INV_PHI * width
    fc = f(c)
    fd = f(d)

    for _ in range(steps - 1):
        if fc > fd:
            hi, d, fd = d, c, fc
            width *= INV_PHI
            c = lo + INV_PHI_SQUARE * width
            fc = f(c)
        else:
            lo, c, fc = c, d, fd
            width *= INV_PHI
            d = lo + INV_PHI * width
            fd = f(d)
        logger.trace("golden section bracket [{:.5f}, {:.5f}]", lo, hi)

    return c if fc > fd else d


def fit_fwhm_mle(vol: Volume, h_min: float = 0.5, h_max: float = 20.0) -> float:
    """Return the bandwidth in `[h_min, h_max]` maximizing `profile_loglik`.

    The search runs on `log h` to relative tolerance 1e-3; the result is never
    worse than either bracket endpoint.
    """

    if not 0.0 < h_min < h_max:
        raise ValueError(f"need 0 < h_min < h_max, got ({h_min}, {h_max})")

    loglik = _ProfileLikelihood(vol)
    best = math.exp(
        golden_section_max(lambda t: loglik(math.exp(t)), math.log(h_min), math.log(h_max))
    )
    candidates = {h: loglik(h) for h in (h_min, best, h_max)}
    h_hat = max(candidates, key=lambda h: candidates[h])
    logger.debug("fwhm mle {:.4f} (loglik {:.3f})", h_hat, candidates[h_hat])
    return h_hat


# -------------------------------------------------------------------------------
# robust DCT smoothing

ROBUST_STEPS = 3
BISQUARE_C = 4.685
LOG_S_GRID = np.linspace(-6.0, 6.0, 25)
CG_RTOL = 1e-5
CG_MAX_ITER = 200


class RobustSmoothResult(NamedTuple):
    """Output of `robust_smooth`.

    `volume` stays on the input's scale. White noise passed through the DCT
    smoother keeps standard deviation `gain`, so `standardized` (the volume
    divided by `gain`) is on the scale of `smooth`: unit-variance noise and a
    boosted flat signal. `fwhm` is fitted on the standardized map.
    """

    volume: Volume
    fwhm: float
    gain: float = 1.0

    @property
    def standardized(self) -> Volume:
        """Return `volume` rescaled to unit noise variance."""
        return self.volume.with_values(self.volume.filled() / self.gain)


def _dct_eigenvalues(dims: tuple[int, ...]) -> FloatArray:
    """Return `sum_axes (2 - 2 cos(pi i / n))` on the grid."""

    lam = np.zeros(dims)
    for axis, extent in enumerate(dims):
        shape = [1] * len(dims)
        shape[axis] = extent
        lam = lam + (2.0 - 2.0 * np.cos(np.pi * np.arange(extent) / extent)).reshape(shape)
    return lam


class _GCV:
    """Generalized cross-validation score of the DCT smoother, on `log10 s`."""

    def __init__(
        self,
        lam2: FloatArray,
        dct_y: FloatArray,
        y: FloatArray,
        weights: FloatArray,
        observed: BoolArray,
    ) -> None:
        self.lam2 = lam2
        self.dct_y = dct_y
        self.y = y
        self.weights = weights
        self.observed = observed
        self.n_obs = int(observed.sum())
        self.n_total = y.size
        self.weighted = float(weights.sum()) / self.n_total <= 0.9

    def __call__(self, log_s: float) -> float:
        gamma = 1.0 / (1.0 + 10.0**log_s * self.lam2)
        if self.weighted:
            yhat = idctn(gamma * self.dct_y, norm="ortho")
            resid = np.sqrt(self.weights) * (self.y - yhat)
            rss = float(np.sum(resid[self.observed] ** 2))
        else:
            rss = float(np.sum((self.dct_y * (gamma - 1.0)) ** 2))
        tr_h = float(np.sum(gamma))
        return rss / self.n_obs / (1.0 - tr_h / self.n_total) ** 2

    def minimize(self) -> float:
        """Return the `log10 s` minimizing the score over the grid, refined."""
        scores = [self(p) for p in LOG_S_GRID]
        start = float(LOG_S_GRID[int(np.argmin(scores))])
        step = float(LOG_S_GRID[1] - LOG_S_GRID[0])
        lo = max(start - step, float(LOG_S_GRID[0]))
        hi = min(start + step, float(LOG_S_GRID[-1]))
        return golden_section_max(lambda p: -self(p), lo, hi, tol=1e-2)


def _bisquare_weights(residual: FloatArray, mask: BoolArray, s: float, ndim: int) -> FloatArray:
    """Return bisquare weights of the studentized residuals."""

    r = residual[mask]
    mad = float(np.median(np.abs(r - np.median(r))))
    if mad <= 0.0:
        return mask.astype(float)

    leverage = math.sqrt(1.0 + 16.0 * s)
    leverage = (math.sqrt(1.0 + leverage) / math.sqrt(2.0) / leverage) ** ndim
    u = np.abs(residual / (1.4826 * mad) / math.sqrt(1.0 - leverage)) / BISQUARE_C
    weights = np.where(u < 1.0, (1.0 - u * u) ** 2, 0.0)
    return weights * mask




def _penalized_solve(
    y: FloatArray,
    weights: FloatArray,
    lam2: FloatArray,
    s: float,
    start: FloatArray,
) -> FloatArray:
    """Solve `(W + s D) z = W y` by preconditioned conjugate gradients.

    `D` is the squared DCT Laplacian; the preconditioner inverts
    `mean(W) + s D` in the DCT basis.
    """

    shape = y.shape
    size = y.size
    w_mean = max(float(weights.mean()), 1e-3)

    def penalized(v: FloatArray) -> FloatArray:
        z = v.reshape(shape)
        return (weights * z + s * idctn(lam2 * dctn(z, norm="ortho"), norm="ortho")).ravel()

    def precondition(v: FloatArray) -> FloatArray:
        coef = dctn(v.reshape(shape), norm="ortho") / (w_mean + s * lam2)
        return idctn(coef, norm="ortho").ravel()

    z, info = cg(
        LinearOperator((size, size), matvec=penalized, dtype=float),
        (weights * y).ravel(),
        x0=start.ravel(),
        rtol=CG_RTOL,
        maxiter=CG_MAX_ITER,
        M=LinearOperator((size, size), matvec=precondition, dtype=float),
    )
    if info > 0:
        logger.debug("conjugate gradients stopped after {} iterations (s = {:.3g})", info, s)
    return np.asarray(z).reshape(shape)


def _weighted_fit(
    y: FloatArray,
    weights: FloatArray,
    mask: BoolArray,
    lam2: FloatArray,
    start: FloatArray,
    max_iter: int,
    tol: float,
) -> tuple[FloatArray, float]:
    """Return the penalized fit and its GCV penalty for fixed `weights`.

    Unit weights give the closed form. Otherwise each round picks `s` by GCV
    on the pseudo-data `W (y - z) + z` and solves the weighted system exactly
    for it; rounds stop when the fit changes by less than `tol`.
    """

    if bool(np.all(weights == 1.0)):
        dct_y = dctn(y, norm="ortho")
        s = 10.0 ** _GCV(lam2, dct_y, y, weights, mask).minimize()
        return idctn(dct_y / (1.0 + s * lam2), norm="ortho"), s

    z = start
    s = 10.0 ** LOG_S_GRID[0]
    for nit in range(1, max_iter + 1):
        dct_y = dctn(weights * (y - z) + z, norm="ortho")
        s = 10.0 ** _GCV(lam2, dct_y, y, weights, mask).minimize()
        z_new = _penalized_solve(y, weights, lam2, s, z)
        change = float(np.linalg.norm(z_new - z) / max(float(np.linalg.norm(z_new)), 1e-300))
        z = z_new
        if change <= tol:
            logger.trace("weighted fit converged in {} rounds", nit)
            return z, s

    logger.warning("robust smoother weighted fit hit {} rounds", max_iter)
    return z, s


def robust_smooth(
    vol: Volume,
    robust: bool = True,
    h_bounds: tuple[float, float] = (0.5, 20.0),
    max_iter: int = 20,
    tol: float = 1e-3,
) -> RobustSmoothResult:
    """Smooth by DCT penalized least squares with a GCV-chosen penalty.

    Out-of-mask sites carry zero weight. With `robust`, up to three passes
    reweight sites by bisquare weights of their residuals. Also returns the
    noise gain `sqrt(mean(Gamma_s ** 2))` of the final penalty and the FWHM
    that maximizes `profile_loglik` on the standardized output.
    """

    mask = vol.grid.mask
    y = vol.filled()
    inside = y[mask]

    if np.ptp(inside) == 0.0:
        logger.warning("robust smoother given a constant field; returning it unchanged")
        return RobustSmoothResult(vol, fit_fwhm_mle(vol, *h_bounds))

    lam2 = _dct_eigenvalues(vol.grid.dims) ** 2
    weights = mask.astype(float)
    z = y.copy()
    s = 10.0 ** LOG_S_GRID[0]

    for step in range(1, (ROBUST_STEPS if robust else 1) + 1):
        z, s = _weighted_fit(y, weights, mask, lam2, z, max_iter, tol)
        logger.trace("robust pass {}: s = {:.4g}", step, s)
        if robust and step < ROBUST_STEPS:
            weights = _bisquare_weights(y - z, mask, s, len(vol.grid.dims))

    if abs(math.log10(s) - LOG_S_GRID[0]) < 0.1 or abs(math.log10(s) - LOG_S_GRID[-1]) < 0.1:
        logger.debug("robust smoother penalty s = {:.3g} at a search bound", s)

    gain = math.sqrt(float(np.mean((1.0 / (1.0 + s * lam2)) ** 2)))
    smoothed = vol.with_values(z)
    standardized = vol.with_values(z / gain)
    return RobustSmoothResult(smoothed, fit_fwhm_mle(standardized, *h_bounds), gain)
