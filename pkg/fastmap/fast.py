"""FAST: adaptive smoothing and thresholding of a statistical map.

Each iteration smooths the previous smoothed map (bandwidth by maximum
likelihood for AM-FAST; DCT robust smoothing for AR-FAST), then activates
inactive sites above a cutoff. The first cutoff comes from the Gumbel limit
of the correlated maximum; later cutoffs step down from the previous one by
the reverse Weibull limit of the truncated maximum. Iteration stops when the
Jaccard index between successive maps stops decreasing.
"""

import dataclasses
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
import pandas as pd
from loguru import logger
from numpy.typing import NDArray

from fastmap.evt import CorrelationSummary, Sided, threshold
from fastmap.smoothing import (
    Volume,
    fit_fwhm_mle,
    kernel_spectrum,
    rho_of,
    robust_smooth,
    smooth,
)

__all__ = [
    "ActivationState",
    "FastConfig",
    "IterationRecord",
    "StopReason",
    "Variant",
    "fast_run",
    "fast_step",
    "jaccard",
    "trace_frame",
]

Variant = Literal["am", "ar"]
StopReason = Literal["running", "jaccard", "max_iter", "all_active", "h_max"]
BoolArray = NDArray[np.bool_]

TRACE_COLUMNS = ["k", "variant", "h", "rho", "eta", "n_inactive", "n_new", "jaccard"]


@dataclass(frozen=True)
class FastConfig:
    """Settings of one FAST run.

    Attributes:
        alpha:          significance level of each cutoff.
        variant:        "am" (likelihood bandwidth) or "ar" (robust smoothing).
        sided:          "two" thresholds absolute values at `alpha / 2`.
        h_bounds:       FWHM search interval in voxels.
        max_iter:       hard iteration limit.
        min_iter:       first iteration at which the Jaccard rule is checked.
        stop_at_h_max:  also stop once the bandwidth reaches `h_bounds[1]`.
    """

    alpha: float = 0.025
    variant: Variant = "am"
    sided: Sided = "one"
    h_bounds: tuple[float, float] = (0.5, 20.0)
    max_iter: int = 20
    min_iter: int = 1
    stop_at_h_max: bool = False

    def __post_init__(self) -> None:
        if not 0.0 < self.alpha < 0.5:
            raise ValueError(f"alpha must lie in (0, 0.5), got {self.alpha}")
        if self.variant not in ("am", "ar"):
            raise ValueError(f"variant must be 'am' or 'ar', got {self.variant!r}")
        if self.sided not in ("one", "two"):
            raise ValueError(f"sided must be 'one' or 'two', got {self.sided!r}")
        h_min, h_max = self.h_bounds
        if not 0.0 < h_min < h_max:
            raise ValueError(f"need 0 < h_min < h_max, got {self.h_bounds}")
        if self.max_iter < 2:
            raise ValueError(f"max_iter must be >= 2, got {self.max_iter}")
        if not 1 <= self.min_iter <= self.max_iter:
            raise ValueError(f"min_iter must lie in [1, max_iter], got {self.min_iter}")


@dataclass(frozen=True)
class IterationRecord:
    """Trace row of one iteration."""

    k: int
    variant: Variant
    h: float
    rho: float
    eta: float
    n_inactive: int
    n_new: int
    jaccard: float


@dataclass(frozen=True, eq=False)
class ActivationState:
    """Activation map and iteration history of a FAST run.

    Attributes:
        zeta:       activation per grid site (always False outside the mask).
        n_inactive: in-mask sites not yet activated.
        history:    one record per completed iteration.
        maps:       `zeta` after each iteration, starting with the empty map.
        stop_reason: why the run ended, or "running".
    """

    zeta: BoolArray = field(repr=False)
    n_inactive: int
    history: tuple[IterationRecord, ...] = ()
    maps: tuple[BoolArray, ...] = field(default=(), repr=False)
    stop_reason: StopReason = "running"

    @classmethod
    def initial(cls, mask: BoolArray) -> "ActivationState":
        """Return the all-inactive state over `mask`."""
        zeta = np.zeros(mask.shape, dtype=bool)
        return cls(zeta, int(mask.sum()), (), (zeta,))

    @property
    def k(self) -> int:
        """Number of completed iterations."""
        return len(self.history)

    @property
    def n_active(self) -> int:
        """Number of active sites."""
        return int(self.zeta.sum())

    @property
    def eta(self) -> float | None:
        """Most recent cutoff, if any."""
        return self.history[-1].eta if self.history else None


def jaccard(a: BoolArray, b: BoolArray) -> float:
    """Return `|a & b| / |a | b|`, defined as 1 when both maps are empty."""

    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"maps cover different sites: {a.shape} vs {b.shape}")
    union = int(np.count_nonzero(a | b))
    if union == 0:
        return 1.0
    return int(np.count_nonzero(a & b)) / union


def _smooth_step(spm: Volume, config: FastConfig) -> tuple[Volume, float]:
    if config.variant == "am":
        h = fit_fwhm_mle(spm, *config.h_bounds)
        return smooth(spm, h), h
    result = robust_smooth(spm, h_bounds=config.h_bounds)
    return result.standardized, result.fwhm


def fast_step(
    spm: Volume,
    state: ActivationState,
    k: int,
    config: FastConfig,
) -> tuple[Volume, ActivationState]:
    """Run iteration `k`: smooth `spm` (the previous smoothed map), threshold, update.

    Returns the newly smoothed map and the updated state.
    """

    if k < 1 or k != state.k + 1:
        raise ValueError(f"iteration {k} does not follow a state with {state.k} iterations")

    mask = spm.grid.mask
    if state.n_inactive == 0:
        logger.warning("every in-mask site is active; nothing left to threshold")
        return spm, dataclasses.replace(state, stop_reason="all_active")

    smoothed, h = _smooth_step(spm, config)
    rho = rho_of(kernel_spectrum(spm.grid, h))

    n = spm.grid.n_sites if k == 1 else state.n_inactive
    summary = CorrelationSummary(max(n, 2), rho)
    eta = threshold(k, summary, config.alpha, state.eta, config.sided)

    values = smoothed.filled()
    statistic = np.abs(values) if config.sided == "two" else values
    new = mask & ~state.zeta & (statistic > eta)

    zeta = state.zeta | new
    n_inactive = spm.grid.n_sites - int(zeta.sum())
    record = IterationRecord(
        k=k,
        variant=config.variant,
        h=h,
        rho=rho,
        eta=eta,
        n_inactive=n_inactive,
        n_new=int(new.sum()),
        jaccard=jaccard(zeta, state.zeta),
    )
    logger.debug(
        "{}-fast k={} h={:.3f} rho={:.4f} eta={:.4f} new={} inactive={}",
        config.variant,
        k,
        h,
        rho,
        eta,
        record.n_new,
        n_inactive,
    )

    stop_reason: StopReason = "all_active" if n_inactive == 0 else "running"
    return smoothed, ActivationState(
        zeta=zeta,
        n_inactive=n_inactive,
        history=state.history + (record,),
        maps=state.maps + (zeta,),
        stop_reason=stop_reason,
    )


def _truncate(state: ActivationState, k: int, reason: StopReason) -> ActivationState:
    """Return `state` rolled back to iteration `k`."""
    return ActivationState(
        zeta=state.maps[k],
        n_inactive=state.history[k - 1].n_inactive,
        history=state.history[:k],
        maps=state.maps[: k + 1],
        stop_reason=reason,
    )


def fast_run(spm: Volume, config: FastConfig | None = None) -> ActivationState:
    """Iterate `fast_step` until the Jaccard stopping rule fires.

    With one iteration of lookahead, the run stops at the first `k >=
    config.min_iter` where `J(zeta_k, zeta_k-1) <= J(zeta_k+1, zeta_k)` and
    returns `zeta_k`; the lookahead iteration is discarded. At `max_iter` the
    last map is returned with `stop_reason == "max_iter"`.
    """

    config = config or FastConfig()
    state = ActivationState.initial(spm.grid.mask)
    current = spm

    current, state = fast_step(current, state, 1, config)
    for k in range(1, config.max_iter):
        if state.stop_reason == "all_active":
            return state
        if config.stop_at_h_max and state.history[-1].h >= config.h_bounds[1]:
            return dataclasses.replace(state, stop_reason="h_max")

        current, state = fast_step(current, state, k + 1, config)
        if k >= config.min_iter:
            if state.history[k - 1].jaccard <= state.history[k].jaccard:
                logger.debug("jaccard rule stops {}-fast at k={}", config.variant, k)
                return _truncate(state, k, "jaccard")

    logger.warning("{}-fast reached max_iter={}", config.variant, config.max_iter)
    return dataclasses.replace(state, stop_reason="max_iter")


def trace_frame(state: ActivationState) -> pd.DataFrame:
    """Return the iteration trace as a table."""
    rows = [dataclasses.astuple(record) for record in state.history]
    return pd.DataFrame(rows, columns=TRACE_COLUMNS)
