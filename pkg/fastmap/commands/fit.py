"""Fit command module."""

from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
from numpy.typing import NDArray

from fastmap.cli import BaseCmd
from fastmap.glm import Contrast, DesignMatrix, build_spm, fit_volume
from fastmap.smoothing import Grid
from fastmap.volio import VolumeFile, read_volume, write_volume


def read_design(path: Path, tr: float) -> DesignMatrix:
    """Read a design matrix written by `fastmap simulate`; columns are named by role."""
    frame = pd.read_csv(path, float_precision="round_trip")
    return DesignMatrix(frame.to_numpy(dtype=float), tuple(frame.columns), tr)


def _as_3d(values: NDArray[Any]) -> NDArray[Any]:
    # 2D slices are stored as (x, y, 1).
    return values[:, :, np.newaxis] if values.ndim == 2 else values


class FitCmd(BaseCmd):
    """Fit command class."""

    def init_command(self) -> None:
        """Initialize fit command."""

        parser = self.add_subcommand_parser(
            "fit",
            help="fit the AR GLM and write the t-map",
            description=self.cli.dedent(
                """
    The `%(prog)s` command fits the GLM with AR(p) errors at every in-mask
    voxel of a 4D volume, choosing `p` by BIC, and writes the contrast
    t-map `spm.nii` (NaN outside the mask) and the selected order map
    `order.nii` (-1 outside the mask) into `--out`.

    Without `--mask`, voxels whose series is constant are left out.
                """
            ),
        )

        parser.add_argument(
            "--in", dest="input", type=Path, required=True, help="4D time-series volume"
        )
        parser.add_argument(
            "--design", type=Path, required=True, help="design matrix CSV, one column per role"
        )
        parser.add_argument("--mask", type=Path, help="mask volume; nonzero voxels are fit")
        parser.add_argument("--out", type=Path, required=True, help="output directory")

        arg = parser.add_argument(
            "--pmax",
            type=int,
            default=self.config["p_max"],
            help="largest AR order considered",
        )
        self.cli.add_default_to_help(arg, parser)

        arg = parser.add_argument(
            "--role",
            default="stimulus",
            help="design column tested by the t-map",
        )
        self.cli.add_default_to_help(arg, parser)

    def run(self) -> None:
        """Perform fit command."""

        try:
            volume = read_volume(self.cli.existing_path(self.options.input))
            data = volume.series()
            design_path = self.cli.existing_path(self.options.design)
            design = read_design(design_path, volume.voxel_sizes[3])
            contrast = Contrast.for_role(design, self.options.role)
            if self.options.mask:
                mask = read_volume(self.cli.existing_path(self.options.mask)).spatial() != 0
            else:
                mask = data.std(axis=-1) > 0.0
            grid = Grid(data.shape[:-1], mask=mask)
            fits = fit_volume(data, design, mask, self.options.pmax, contrast)
        except ValueError as err:
            self.cli.parser.error(str(err))

        outdir: Path = self.options.out
        outputs = [outdir / "spm.nii", outdir / "order.nii"]
        self.start_manifest(outdir, outputs, config=dict(self.config, p_max=self.options.pmax))

        spm = build_spm(fits.fits, contrast, grid)
        write_volume(outputs[0], VolumeFile(_as_3d(spm.values).astype(np.float32)))
        write_volume(outputs[1], VolumeFile(_as_3d(fits.order)), dtype="int16")
        self.cli.info(
            f"fit {grid.n_sites} voxels; orders {np.bincount(fits.order[mask]).tolist()}"
        )
