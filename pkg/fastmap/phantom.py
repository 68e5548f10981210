"""Phantom ground truth and simulated AR-noise time series.

The phantom is a 128 x 128 label image: background, two brain tissue types
with different baselines, and activated pixels (tissue B with a stimulus
response). Each in-brain pixel's series is `X beta(label) + eps` with AR(p)
Gaussian errors.

Phantom text format::

    128 128
    0 0 0 1 1 2 ...     (one row of label codes per line, row-major)

Label codes: 0 background, 1 brain A, 2 brain B, 3 activated.
"""

import math
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Literal

import numpy as np
from loguru import logger
from numpy.typing import NDArray
from scipy import ndimage
from scipy.signal import lfilter

from fastmap.glm import DesignMatrix, ar_roots_ok

__all__ = [
    "ARSpec",
    "Label",
    "PhantomCountError",
    "PhantomFormatError",
    "PhantomSpec",
    "SimConfig",
    "ar_table",
    "bundled_phantom",
    "cnr",
    "load_phantom",
    "nominal_cnr_label",
    "presmooth_dataset",
    "save_phantom",
    "simulate_ar_noise",
    "simulate_dataset",
]

PHANTOM_DIMS = (128, 128)
BRAIN_PIXELS = 3465
ACTIVATED_PIXELS = 138
AR_SUM = 0.9
BURN_IN = 500
ACTIVATION_AMPLITUDE = 600.0

Shape = Literal["equal", "decreasing", "increasing", "dec-inc", "inc-dec"]
SHAPES: tuple[Shape, ...] = ("equal", "decreasing", "increasing", "dec-inc", "inc-dec")


class Label(IntEnum):
    """Pixel label codes of the phantom file format."""

    BACKGROUND = 0
    BRAIN_A = 1
    BRAIN_B = 2
    ACTIVATED = 3


COEFFICIENTS: dict[Label, tuple[float, float, float]] = {
    Label.BACKGROUND: (0.0, 0.0, 0.0),
    Label.BRAIN_A: (4500.0, 0.0, -155.32),
    Label.BRAIN_B: (6000.0, 0.0, -155.32),
    Label.ACTIVATED: (6000.0, ACTIVATION_AMPLITUDE, -155.32),
}


class PhantomFormatError(ValueError):
    """Phantom file cannot be parsed, or holds no brain."""


class PhantomCountError(ValueError):
    """Phantom pixel counts differ from the reference counts."""


@dataclass(frozen=True, eq=False)
class PhantomSpec:
    """Label image plus coefficient table `(beta0, beta1, beta2)` per label."""

    labels: NDArray[np.int_] = field(repr=False)
    coefficients: dict[Label, tuple[float, float, float]] = field(
        default_factory=lambda: dict(COEFFICIENTS)
    )

    def __post_init__(self) -> None:
        labels = np.array(self.labels, dtype=int)
        if labels.ndim != 2:
            raise PhantomFormatError(f"phantoms are 2D, got {labels.ndim} axes")
        if not np.isin(labels, list(Label)).all():
            raise PhantomFormatError("label codes must be 0, 1, 2 or 3")
        if not (labels != Label.BACKGROUND).any():
            raise PhantomFormatError("phantom has an empty brain mask")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    @property
    def dims(self) -> tuple[int, ...]:
        """Image extents."""
        return tuple(self.labels.shape)

    @property
    def brain_mask(self) -> NDArray[np.bool_]:
        """In-brain pixels."""
        return np.asarray(self.labels != Label.BACKGROUND)

    @property
    def truth(self) -> NDArray[np.bool_]:
        """Activated pixels."""
        return np.asarray(self.labels == Label.ACTIVATED)

    def beta_map(self) -> NDArray[np.float64]:
        """Return the coefficient vector of every pixel, shape `dims + (3,)`."""
        table = np.array([self.coefficients[label] for label in Label])
        return table[self.labels]

    def check_counts(self) -> None:
        """Raise `PhantomCountError` unless the reference pixel counts hold."""
        brain, active = int(self.brain_mask.sum()), int(self.truth.sum())
        if (brain, active) != (BRAIN_PIXELS, ACTIVATED_PIXELS):
            raise PhantomCountError(
                f"phantom has {brain} in-brain / {active} activated pixels, "
                f"expected {BRAIN_PIXELS} / {ACTIVATED_PIXELS}"
            )


def _nearest(candidates: NDArray[np.bool_], seed: tuple[float, float], count: int) -> NDArray:
    """Return flat indices of the `count` candidate pixels nearest `seed` (stable ties)."""
    rows, cols = np.indices(candidates.shape)
    dist = (rows - seed[0]) ** 2 + (cols - seed[1]) ** 2
    dist = np.where(candidates, dist, np.inf).ravel()
    return np.argsort(dist, kind="stable")[:count]


def bundled_phantom() -> PhantomSpec:
    """Return the procedurally generated reference phantom.

    An elliptical brain of exactly 3465 pixels: a tissue-B rim around a
    tissue-A core, with two contiguous activated patches of 69 pixels each
    inside the rim on opposite sides.
    """

    rows, cols = np.indices(PHANTOM_DIMS)
    centre = (63.5, 63.5)
    radius = ((rows - centre[0]) / 36.0) ** 2 + ((cols - centre[1]) / 31.0) ** 2
    order = np.argsort(radius.ravel(), kind="stable")

    labels = np.zeros(math.prod(PHANTOM_DIMS), dtype=int)
    labels[order[:BRAIN_PIXELS]] = Label.BRAIN_B
    labels[order[: BRAIN_PIXELS - 1500]] = Label.BRAIN_A
    labels = labels.reshape(PHANTOM_DIMS)

    rim = labels == Label.BRAIN_B
    half = ACTIVATED_PIXELS // 2
    for seed in ((centre[0], centre[1] - 27.5), (centre[0], centre[1] + 27.5)):
        patch = _nearest(rim, seed, half)
        labels.flat[patch] = Label.ACTIVATED
        rim = labels == Label.BRAIN_B

    return PhantomSpec(labels)


def load_phantom(source: str | Path = "bundled", strict: bool = False) -> PhantomSpec:
    """Return the bundled phantom or parse a phantom text file.

    With `strict`, the in-brain and activated counts must be 3465 and 138.
    """

    if str(source) == "bundled":
        phantom = bundled_phantom()
    else:
        phantom = PhantomSpec(_parse_phantom(Path(source).read_text(encoding="utf-8")))
    if strict:
        phantom.check_counts()
    return phantom


def _parse_phantom(text: str) -> NDArray[np.int_]:
    lines = [line.split() for line in text.splitlines() if line.strip()]
    if not lines:
        raise PhantomFormatError("phantom file is empty")
    try:
        dims = tuple(int(v) for v in lines[0])
        codes = [int(v) for line in lines[1:] for v in line]
    except ValueError as err:
        raise PhantomFormatError(f"phantom file holds a non-integer field: {err}") from err
    if len(dims) != 2 or min(dims) < 1:
        raise PhantomFormatError(f"phantom header must give two extents, got {lines[0]}")
    if len(codes) != dims[0] * dims[1]:
        raise PhantomFormatError(f"phantom has {len(codes)} labels, header promises {dims}")
    return np.asarray(codes, dtype=int).reshape(dims)


def save_phantom(path: str | Path, phantom: PhantomSpec) -> None:
    """Write `phantom` in the text format."""

    body = "\n".join(" ".join(str(v) for v in row) for row in phantom.labels)
    header = " ".join(str(n) for n in phantom.dims)
    Path(path).write_text(f"{header}\n{body}\n", encoding="utf-8")


# -------------------------------------------------------------------------------
# AR noise

_AR_TABLE: dict[tuple[int, str], tuple[float, ...]] = {
    (2, "decreasing"): (0.6, 0.3),
    (3, "decreasing"): (0.4, 0.3, 0.2),
    (4, "decreasing"): (0.3, 0.25, 0.20, 0.15),
    (5, "decreasing"): (0.3, 0.25, 0.20, 0.10, 0.05),
    (2, "increasing"): (0.3, 0.6),
    (3, "increasing"): (0.2, 0.3, 0.4),
    (4, "increasing"): (0.15, 0.20, 0.25, 0.3),
    (5, "increasing"): (0.05, 0.10, 0.20, 0.25, 0.30),
    (2, "dec-inc"): (0.6, 0.3),
    (3, "dec-inc"): (0.4, 0.1, 0.4),
    (4, "dec-inc"): (0.4, 0.05, 0.05, 0.4),
    (5, "dec-inc"): (0.25, 0.15, 0.1, 0.15, 0.25),
    (2, "inc-dec"): (0.3, 0.6),
    (3, "inc-dec"): (0.1, 0.7, 0.1),
    (4, "inc-dec"): (0.05, 0.4, 0.4, 0.05),
    (5, "inc-dec"): (0.1, 0.15, 0.4, 0.15, 0.1),
}


@dataclass(frozen=True)
class ARSpec:
    """AR(p) error structure; coefficients sum to 0.9 for p >= 1."""

    p: int
    phi: tuple[float, ...]
    shape: Shape = "equal"

    def __post_init__(self) -> None:
        if len(self.phi) != self.p:
            raise ValueError(f"AR({self.p}) needs {self.p} coefficients, got {self.phi}")
        if not ar_roots_ok(self.phi):
            raise ValueError(f"AR coefficients {self.phi} are not stationary")

    @property
    def cell_id(self) -> str:
        """Short label, e.g. `ar4-decreasing`."""
        return f"ar{self.p}-{self.shape}"

    @property
    def marginal_variance_factor(self) -> float:
        """Stationary variance over innovation variance (exact for p <= 1)."""
        if self.p == 0:
            return 1.0
        if self.p == 1:
            return 1.0 / (1.0 - self.phi[0] ** 2)
        return float("nan")


def ar_table(p: int, shape: Shape = "equal") -> ARSpec:
    """Return the AR coefficients of the simulation study for order `p` and `shape`.

    `p = 0` is the white-noise control; `p = 1` is 0.9 for every shape; the
    equal shape spreads 0.9 evenly over `p <= 4` lags.
    """

    if shape not in SHAPES:
        raise ValueError(f"unknown AR shape {shape!r}")
    if p == 0:
        return ARSpec(0, (), shape)
    if p == 1:
        return ARSpec(1, (AR_SUM,), shape)
    if shape == "equal":
        if p > 4:
            raise ValueError(f"equal AR coefficients are defined for p <= 4, got {p}")
        return ARSpec(p, (AR_SUM / p,) * p, shape)
    try:
        return ARSpec(p, _AR_TABLE[(p, shape)], shape)
    except KeyError:
        raise ValueError(f"no AR({p}) {shape} scenario") from None


def simulate_ar_noise(
    T: int,  # noqa: N803
    spec: ARSpec,
    sigma0: float,
    seed: int | np.random.SeedSequence | np.random.Generator,
) -> NDArray[np.float64]:
    """Return `T` samples of AR noise with innovation sd `sigma0`, after a 500-sample burn-in."""

    if sigma0 <= 0.0:
        raise ValueError(f"sigma0 must be positive, got {sigma0}")
    if not ar_roots_ok(spec.phi):
        raise ValueError(f"AR coefficients {spec.phi} are not stationary")
    rng = np.random.default_rng(seed)
    innovations = rng.normal(0.0, sigma0, T + BURN_IN)
    series = lfilter([1.0], np.r_[1.0, -np.asarray(spec.phi)], innovations)
    return np.asarray(series[BURN_IN:])


def cnr(sigma0: float) -> float:
    """Return the contrast-to-noise ratio `600 / sigma0`."""
    return ACTIVATION_AMPLITUDE / sigma0


_NOMINAL_CNR = {240.0: 1.0, 300.0: 1.5, 400.0: 2.0}


def nominal_cnr_label(sigma0: float) -> float:
    """Return the customary CNR label for `sigma0`, or NaN when it has none."""
    return _NOMINAL_CNR.get(float(sigma0), float("nan"))


@dataclass(frozen=True)
class SimConfig:
    """Settings of one simulated replicate."""

    sigma0: float
    T: int = 96  # noqa: N815
    TR: float = 7.0  # noqa: N815
    seed: int = 0
    replicate: int = 0

    def __post_init__(self) -> None:
        if self.sigma0 <= 0.0:
            raise ValueError(f"sigma0 must be positive, got {self.sigma0}")


def simulate_dataset(
    phantom: PhantomSpec,
    design: DesignMatrix,
    spec: ARSpec,
    cfg: SimConfig,
) -> NDArray[np.float64]:
    """Return a `dims + (T,)` array of simulated series; background pixels are 0.

    Pixel `i`'s noise stream is seeded by `(cfg.seed, i)`, so replicates are
    reproducible regardless of generation order.
    """

    if design.T != cfg.T:
        raise ValueError(f"design has {design.T} time points, config has {cfg.T}")
    if design.d != 3:
        raise ValueError(f"phantom coefficients fit 3 design columns, design has {design.d}")

    data = np.zeros(phantom.dims + (cfg.T,))
    signal = phantom.beta_map() @ design.matrix.T
    for index in np.flatnonzero(phantom.brain_mask):
        pixel = np.unravel_index(index, phantom.dims)
        noise = simulate_ar_noise(
            cfg.T, spec, cfg.sigma0, np.random.SeedSequence([cfg.seed, int(index)])
        )
        data[pixel] = signal[pixel] + noise

    logger.debug(
        "simulated {} sigma0={} replicate={} seed={}",
        spec.cell_id,
        cfg.sigma0,
        cfg.replicate,
        cfg.seed,
    )
    return data


def presmooth_dataset(
    data: NDArray[np.float64],
    mask: NDArray[np.bool_],
    fwhm: float,
) -> NDArray[np.float64]:
    """Blur every scan of `data` with an in-mask Gaussian of width `fwhm` pixels.

    Background pixels are excluded by normalized convolution and stay 0.
    """

    if fwhm < 0.0:
        raise ValueError(f"fwhm must be >= 0, got {fwhm}")
    if fwhm == 0.0:
        return data
    mask = np.asarray(mask, dtype=bool)
    if data.shape[:-1] != mask.shape:
        raise ValueError(f"data of shape {data.shape} does not match mask {mask.shape}")

    sigma = fwhm / (2.0 * math.sqrt(2.0 * math.log(2.0)))
    spatial = (sigma,) * mask.ndim
    weight = ndimage.gaussian_filter(mask.astype(float), spatial, mode="constant")
    blurred = ndimage.gaussian_filter(
        np.where(mask[..., np.newaxis], data, 0.0), spatial + (0.0,), mode="constant"
    )
    out = np.zeros_like(data)
    out[mask] = blurred[mask] / weight[mask][:, np.newaxis]
    return out
