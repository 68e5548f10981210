"""Simulation study comparing FAST with cluster-extent thresholding.

Every cell of the grid is a noise level crossed with an AR error structure.
Each replicate simulates the phantom, fits the AR GLM at every brain pixel,
builds the stimulus t-map, runs each method on it and scores the resulting
activation map against the phantom truth with the Jaccard index.
"""

from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, NamedTuple

import numpy as np
import pandas as pd
from joblib import Parallel, delayed
from loguru import logger
from numpy.typing import NDArray
from scipy import ndimage
from scipy.special import ndtri

from fastmap.config import DEFAULTS, parse_ar_cell
from fastmap.evt import Sided
from fastmap.fast import FastConfig, Variant, fast_run, jaccard
from fastmap.glm import (
    Contrast,
    DesignMatrix,
    block_schedule,
    build_design,
    build_spm,
    fit_volume,
)
from fastmap.phantom import ARSpec, PhantomSpec, SimConfig, ar_table, cnr, load_phantom
from fastmap.phantom import nominal_cnr_label, presmooth_dataset, simulate_dataset
from fastmap.smoothing import Grid, Volume, fit_fwhm_mle, gaussian_field

__all__ = [
    "SCORE_COLUMNS",
    "SUMMARY_COLUMNS",
    "Cell",
    "CellResult",
    "ExperimentConfig",
    "ExperimentResult",
    "cluster_size_threshold",
    "cluster_threshold",
    "cluster_threshold_fixed",
    "replicate_seeds",
    "run_experiment",
    "score_maps",
    "summarize",
    "write_csv",
]

BoolArray = NDArray[np.bool_]

MIN_MC_ITERS = 200
FLOAT_FORMAT = "%.6f"

SCORE_COLUMNS = [
    "master_seed",
    "cell",
    "sigma0",
    "cnr",
    "cnr_nominal",
    "ar_p",
    "ar_shape",
    "replicate",
    "seed",
    "method",
    "alpha",
    "jaccard",
]
SUMMARY_COLUMNS = [
    "cell",
    "method",
    "alpha",
    "n",
    "mean",
    "min",
    "q1",
    "median",
    "q3",
    "max",
    "iqr",
    "rank",
]


# -------------------------------------------------------------------------------
# cluster-extent thresholding


def _check_mask(grid: Grid) -> None:
    if grid.n_sites < 2:
        raise ValueError(f"degenerate mask: {grid.n_sites} in-mask site(s)")


def _clusters(supra: BoolArray) -> tuple[NDArray[np.int_], NDArray[np.int_]]:
    """Label second-order-connected clusters; return labels and per-label sizes."""

    structure = ndimage.generate_binary_structure(supra.ndim, 2)
    labels, _ = ndimage.label(supra, structure=structure)
    return labels, np.bincount(labels.ravel())


def cluster_threshold_fixed(spm: Volume, cutoff: float, k_min: int) -> BoolArray:
    """Return in-mask sites above `cutoff` belonging to clusters of at least `k_min` sites."""

    _check_mask(spm.grid)
    supra = spm.grid.mask & (spm.filled(-np.inf) > cutoff)
    labels, sizes = _clusters(supra)
    keep = sizes >= k_min
    keep[0] = False
    return np.asarray(keep[labels])


def cluster_size_threshold(
    grid: Grid,
    cutoff: float,
    fwhm_est: float,
    fw_alpha: float,
    mc_iters: int,
    seed: int | np.random.SeedSequence | np.random.Generator,
) -> int:
    """Return the smallest cluster size `k` with null `P(max cluster >= k) <= fw_alpha`.

    Null fields are white noise smoothed at `fwhm_est` (unsmoothed when it is
    0), standardized over the mask, and thresholded at `cutoff`.
    """

    _check_mask(grid)
    if mc_iters < MIN_MC_ITERS:
        raise ValueError(f"need at least {MIN_MC_ITERS} Monte-Carlo iterations, got {mc_iters}")
    if not 0.0 < fw_alpha < 1.0:
        raise ValueError(f"fw_alpha must lie in (0, 1), got {fw_alpha}")
    if fwhm_est < 0.0:
        raise ValueError(f"fwhm_est must be >= 0, got {fwhm_est}")

    rng = np.random.default_rng(seed)
    maxima = np.zeros(mc_iters, dtype=int)
    for i in range(mc_iters):
        if fwhm_est > 0.0:
            values = gaussian_field(grid, fwhm_est, rng).in_mask()
        else:
            values = rng.standard_normal(grid.n_sites)
        values = (values - values.mean()) / values.std()
        field_ = np.zeros(grid.dims, dtype=bool)
        field_[grid.mask] = values > cutoff
        _, sizes = _clusters(field_)
        maxima[i] = sizes[1:].max(initial=0)

    # survival[k] = P(max >= k)
    counts = np.bincount(maxima, minlength=maxima.max() + 2)
    survival = counts[::-1].cumsum()[::-1] / mc_iters
    k_min = int(np.argmax(survival[1:] <= fw_alpha)) + 1
    logger.debug(
        "cluster size threshold {} (fwhm {:.3f}, cutoff {:.4f}, {} null fields)",
        k_min,
        fwhm_est,
        cutoff,
        mc_iters,
    )
    return k_min


def cluster_threshold(
    spm: Volume,
    alpha_vox: float = 0.001,
    fwhm_est: float = 0.0,
    fw_alpha: float = 0.05,
    mc_iters: int = 1000,
    seed: int | np.random.SeedSequence | np.random.Generator = 0,
) -> BoolArray:
    """Threshold `spm` at the one-sided normal cutoff of `alpha_vox`, then drop small clusters.

    The minimum cluster size is calibrated by `cluster_size_threshold`.
    """

    if not 0.0 < alpha_vox < 0.5:
        raise ValueError(f"alpha_vox must lie in (0, 0.5), got {alpha_vox}")
    cutoff = -float(ndtri(alpha_vox))
    k_min = cluster_size_threshold(spm.grid, cutoff, fwhm_est, fw_alpha, mc_iters, seed)
    return cluster_threshold_fixed(spm, cutoff, k_min)


# -------------------------------------------------------------------------------
# experiment grid


class Cell(NamedTuple):
    """One noise level crossed with one AR structure."""

    index: int
    sigma0: float
    ar: ARSpec

    @property
    def cell_id(self) -> str:
        """Label such as `ar4-decreasing-s240`."""
        return f"{self.ar.cell_id}-s{self.sigma0:g}"


@dataclass(frozen=True)
class ExperimentConfig:
    """Grid, replicate count, method settings and seed of a simulation study."""

    sigma0: tuple[float, ...] = tuple(DEFAULTS["sigma0"])
    ar_cells: tuple[tuple[int, str], ...] = tuple(parse_ar_cell(c) for c in DEFAULTS["ar_cells"])
    replicates: int = DEFAULTS["replicates"]
    alphas: tuple[float, ...] = tuple(DEFAULTS["alphas"])
    variants: tuple[Variant, ...] = tuple(DEFAULTS["variants"])
    sided: Sided = DEFAULTS["sided"]
    h_bounds: tuple[float, float] = (DEFAULTS["h_min"], DEFAULTS["h_max"])
    max_iter: int = DEFAULTS["max_iter"]
    min_iter: int = DEFAULTS["min_iter"]
    stop_at_h_max: bool = DEFAULTS["stop_at_h_max"]
    ct_alpha_vox: float = DEFAULTS["ct_alpha_vox"]
    ct_fw_alpha: float = DEFAULTS["ct_fw_alpha"]
    ct_mc_iters: int = DEFAULTS["ct_mc_iters"]
    ct_fixed_sizes: tuple[int, ...] = tuple(DEFAULTS["ct_fixed_sizes"])
    p_max: int = DEFAULTS["p_max"]
    T: int = DEFAULTS["T"]  # noqa: N815
    TR: float = DEFAULTS["TR"]  # noqa: N815
    n_blocks: int = DEFAULTS["n_blocks"]
    block_length: int = DEFAULTS["block_length"]
    drift_order: int = DEFAULTS["drift_order"]
    presmooth_fwhm: float = DEFAULTS["presmooth_fwhm"]
    master_seed: int = DEFAULTS["master_seed"]
    jobs: int = DEFAULTS["jobs"]
    phantom: str = DEFAULTS["phantom"]
    cells: tuple[Cell, ...] = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.replicates < 1:
            raise ValueError(f"replicates must be >= 1, got {self.replicates}")
        if not self.sigma0 or any(s <= 0.0 for s in self.sigma0):
            raise ValueError(f"sigma0 values must be positive, got {self.sigma0}")
        if self.ct_mc_iters < MIN_MC_ITERS:
            raise ValueError(f"ct_mc_iters must be >= {MIN_MC_ITERS}, got {self.ct_mc_iters}")
        if self.n_blocks * self.block_length != self.T:
            raise ValueError(
                f"{self.n_blocks} blocks of {self.block_length} scans do not make T={self.T}"
            )
        if self.presmooth_fwhm < 0.0:
            raise ValueError(f"presmooth_fwhm must be >= 0, got {self.presmooth_fwhm}")
        if self.p_max < 0:
            raise ValueError(f"p_max must be >= 0, got {self.p_max}")
        if not self.alphas:
            raise ValueError("alphas must not be empty")
        for variant in self.variants:
            for alpha in self.alphas:
                self.fast_config(variant, alpha)

        cells: list[Cell] = []
        for p, shape in self.ar_cells:
            for sigma0 in self.sigma0:
                ar = ar_table(p, shape)  # type: ignore[arg-type]
                cells.append(Cell(len(cells), sigma0, ar))
        object.__setattr__(self, "cells", tuple(cells))

    @classmethod
    def from_config(cls, config: dict[str, Any]) -> "ExperimentConfig":
        """Build from a resolved flat configuration (see `fastmap.config`)."""

        return cls(
            sigma0=tuple(config["sigma0"]),
            ar_cells=tuple(parse_ar_cell(c) for c in config["ar_cells"]),
            replicates=config["replicates"],
            alphas=tuple(config["alphas"]),
            variants=tuple(config["variants"]),
            sided=config["sided"],
            h_bounds=(config["h_min"], config["h_max"]),
            max_iter=config["max_iter"],
            min_iter=config["min_iter"],
            stop_at_h_max=config["stop_at_h_max"],
            ct_alpha_vox=config["ct_alpha_vox"],
            ct_fw_alpha=config["ct_fw_alpha"],
            ct_mc_iters=config["ct_mc_iters"],
            ct_fixed_sizes=tuple(config["ct_fixed_sizes"]),
            p_max=config["p_max"],
            T=config["T"],
            TR=config["TR"],
            n_blocks=config["n_blocks"],
            block_length=config["block_length"],
            drift_order=config["drift_order"],
            presmooth_fwhm=config["presmooth_fwhm"],
            master_seed=config["master_seed"],
            jobs=config["jobs"],
            phantom=config["phantom"],
        )

    def fast_config(self, variant: Variant, alpha: float) -> FastConfig:
        """Return the FAST settings for `variant` at level `alpha`."""
        return FastConfig(
            alpha=alpha,
            variant=variant,
            sided=self.sided,
            h_bounds=self.h_bounds,
            max_iter=self.max_iter,
            min_iter=self.min_iter,
            stop_at_h_max=self.stop_at_h_max,
        )

    def design(self) -> DesignMatrix:
        """Return the block design shared by every replicate."""
        blocks = block_schedule(self.n_blocks, self.block_length)
        return build_design(blocks, self.T, self.TR, self.drift_order)


def replicate_seeds(master_seed: int, cell_index: int, replicate: int) -> tuple[int, int]:
    """Return the (simulation, cluster Monte-Carlo) seeds of one replicate."""

    sequence = np.random.SeedSequence([master_seed, cell_index, replicate])
    sim_seed, ct_seed = sequence.generate_state(2)
    return int(sim_seed), int(ct_seed)


def score_maps(
    maps: dict[str, BoolArray],
    truth: BoolArray,
    mask: BoolArray | None = None,
) -> dict[str, float]:
    """Return the Jaccard index of each named map against `truth`, within `mask`."""

    truth = np.asarray(truth, dtype=bool)
    mask = np.ones(truth.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    return {
        name: jaccard(np.asarray(activation, dtype=bool) & mask, truth & mask)
        for name, activation in maps.items()
    }


def _run_methods(
    spm: Volume,
    cfg: ExperimentConfig,
    ct_seed: int,
) -> list[tuple[str, float, BoolArray]]:
    """Return `(method, alpha, activation)` for every method on one t-map."""

    results = []
    for variant in cfg.variants:
        for alpha in cfg.alphas:
            state = fast_run(spm, cfg.fast_config(variant, alpha))
            results.append((f"{variant}-fast", alpha, state.zeta))

    fwhm = fit_fwhm_mle(spm, *cfg.h_bounds)
    calibrated = cluster_threshold(
        spm, cfg.ct_alpha_vox, fwhm, cfg.ct_fw_alpha, cfg.ct_mc_iters, ct_seed
    )
    results.append(("ct", cfg.ct_alpha_vox, calibrated))
    cutoff = -float(ndtri(cfg.ct_alpha_vox))
    for size in cfg.ct_fixed_sizes:
        results.append(
            (f"ct-k{size}", cfg.ct_alpha_vox, cluster_threshold_fixed(spm, cutoff, size))
        )
    return results


class ReplicateOutcome(NamedTuple):
    """Score rows of one replicate, or the error that stopped it."""

    cell: str
    replicate: int
    rows: list[dict[str, Any]]
    error: str | None = None


def _run_replicate(
    cfg: ExperimentConfig,
    cell: Cell,
    replicate: int,
    phantom: PhantomSpec,
    design: DesignMatrix,
) -> ReplicateOutcome:

    sim_seed, ct_seed = replicate_seeds(cfg.master_seed, cell.index, replicate)
    try:
        sim = SimConfig(cell.sigma0, cfg.T, cfg.TR, seed=sim_seed, replicate=replicate)
        data = simulate_dataset(phantom, design, cell.ar, sim)
        data = presmooth_dataset(data, phantom.brain_mask, cfg.presmooth_fwhm)
        contrast = Contrast.for_role(design, "stimulus")
        fits = fit_volume(data, design, phantom.brain_mask, cfg.p_max, contrast)
        spm = build_spm(fits.fits, contrast, Grid(phantom.dims, mask=phantom.brain_mask))
        methods = _run_methods(spm, cfg, ct_seed)
    except (ValueError, ArithmeticError, np.linalg.LinAlgError) as err:
        logger.error("cell {} replicate {} failed: {}", cell.cell_id, replicate, err)
        return ReplicateOutcome(cell.cell_id, replicate, [], f"{type(err).__name__}: {err}")

    truth = phantom.truth
    rows = [
        {
            "master_seed": cfg.master_seed,
            "cell": cell.cell_id,
            "sigma0": cell.sigma0,
            "cnr": cnr(cell.sigma0),
            "cnr_nominal": nominal_cnr_label(cell.sigma0),
            "ar_p": cell.ar.p,
            "ar_shape": cell.ar.shape,
            "replicate": replicate,
            "seed": sim_seed,
            "method": method,
            "alpha": alpha,
            "jaccard": jaccard(activation, truth),
        }
        for method, alpha, activation in methods
    ]
    logger.info(
        "cell {} replicate {}: {}",
        cell.cell_id,
        replicate,
        ", ".join(f"{r['method']}@{r['alpha']:g}={r['jaccard']:.3f}" for r in rows),
    )
    return ReplicateOutcome(cell.cell_id, replicate, rows)


class CellResult(NamedTuple):
    """Scores of one method in one cell, across replicates."""

    cell: str
    method: str
    alpha: float
    scores: tuple[float, ...]

    @property
    def mean(self) -> float:
        """Mean Jaccard index."""
        return float(np.mean(self.scores))

    @property
    def median(self) -> float:
        """Median Jaccard index."""
        return float(np.median(self.scores))

    @property
    def iqr(self) -> float:
        """Interquartile range of the Jaccard index."""
        q1, q3 = np.percentile(self.scores, [25, 75])
        return float(q3 - q1)


@dataclass
class ExperimentResult:
    """Score table of a study plus the replicates that failed."""

    scores: pd.DataFrame
    failures: list[ReplicateOutcome] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        """True when every replicate completed."""
        return not self.failures

    def cell_results(self) -> list[CellResult]:
        """Group the score table by cell, method and alpha."""
        return [
            CellResult(cell, method, alpha, tuple(group["jaccard"]))
            for (cell, method, alpha), group in self.scores.groupby(
                ["cell", "method", "alpha"], sort=True
            )
        ]


def run_experiment(
    cfg: ExperimentConfig,
    phantom: PhantomSpec | None = None,
) -> ExperimentResult:
    """Run every replicate of every cell; failed replicates are logged and skipped.

    Rows are sorted by cell, replicate, method and alpha, so the table does not
    depend on `cfg.jobs`.
    """

    phantom = phantom or load_phantom(cfg.phantom)
    design = cfg.design()
    jobs = [(cell, replicate) for cell in cfg.cells for replicate in range(cfg.replicates)]
    logger.info(
        "{} cells x {} replicates on {} job(s)", len(cfg.cells), cfg.replicates, cfg.jobs
    )

    if cfg.jobs == 1:
        outcomes = [_run_replicate(cfg, c, r, phantom, design) for c, r in jobs]
    else:
        outcomes = Parallel(n_jobs=cfg.jobs)(
            delayed(_run_replicate)(cfg, c, r, phantom, design) for c, r in jobs
        )

    rows = [row for outcome in outcomes for row in outcome.rows]
    scores = pd.DataFrame(rows, columns=SCORE_COLUMNS)
    scores = scores.sort_values(["cell", "replicate", "method", "alpha"], kind="mergesort")
    failures = [outcome for outcome in outcomes if outcome.error is not None]
    return ExperimentResult(scores.reset_index(drop=True), failures)


def summarize(scores: pd.DataFrame) -> pd.DataFrame:
    """Return box-plot statistics and the within-cell rank of each method.

    Rank 1 has the highest mean Jaccard index in its cell; ties share the lower rank.
    """

    if scores.empty:
        raise ValueError("no scores to summarize")

    grouped = scores.groupby(["cell", "method", "alpha"], sort=True)["jaccard"]
    summary = grouped.agg(
        n="count",
        mean="mean",
        min="min",
        q1=lambda s: s.quantile(0.25),
        median="median",
        q3=lambda s: s.quantile(0.75),
        max="max",
    ).reset_index()
    summary["iqr"] = summary["q3"] - summary["q1"]
    summary["rank"] = (
        summary.groupby("cell")["mean"].rank(method="min", ascending=False).astype(int)
    )
    return summary[SUMMARY_COLUMNS]


def write_csv(frame: pd.DataFrame, path: str | Path) -> Path:
    """Write `frame` as UTF-8 CSV with LF line endings and six-decimal floats."""

    path = Path(path)
    frame.to_csv(
        path,
        index=False,
        float_format=FLOAT_FORMAT,
        lineterminator="\n",
        encoding="utf-8",
    )
    return path

