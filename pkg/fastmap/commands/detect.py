"""Detect command module."""

from pathlib import Path

import numpy as np

from fastmap.bench import write_csv
from fastmap.cli import BaseCmd
from fastmap.fast import FastConfig, fast_run, trace_frame
from fastmap.smoothing import Volume
from fastmap.volio import VolumeFile, read_volume, write_volume


class DetectCmd(BaseCmd):
    """Detect command class."""

    def init_command(self) -> None:
        """Initialize detect command."""

        parser = self.add_subcommand_parser(
            "detect",
            help="run FAST on a t-map",
            description=self.cli.dedent(
                """
    The `%(prog)s` command runs AM-FAST (`--variant am`, likelihood
    bandwidth) or AR-FAST (`--variant ar`, robust DCT smoothing) on a
    statistical map and writes the activation volume `activation.nii`
    (int16, 1 = active) and the iteration trace `trace.csv` into `--out`.

    Voxels holding NaN are outside the mask; with `--sided two` the
    absolute value is thresholded at half the level.
                """
            ),
        )

        parser.add_argument(
            "--in", dest="input", type=Path, required=True, help="statistical map volume"
        )
        parser.add_argument("--out", type=Path, required=True, help="output directory")

        arg = parser.add_argument(
            "--alpha",
            type=float,
            default=self.config["alphas"][0],
            help="significance level of each cutoff",
        )
        self.cli.add_default_to_help(arg, parser)

        arg = parser.add_argument(
            "--variant",
            choices=["am", "ar"],
            default=self.config["variants"][0],
            help="bandwidth estimator",
        )
        self.cli.add_default_to_help(arg, parser)

        arg = parser.add_argument(
            "--sided",
            choices=["one", "two"],
            default=self.config["sided"],
            help="one- or two-sided activation",
        )
        self.cli.add_default_to_help(arg, parser)

    def run(self) -> None:
        """Perform detect command."""

        try:
            volume = read_volume(self.cli.existing_path(self.options.input))
            values = volume.spatial()
            mask = np.isfinite(values)
            voxel_sizes = volume.voxel_sizes[: values.ndim]
            spm = Volume.from_array(np.where(mask, values, 0.0), mask, voxel_sizes)
            config = FastConfig(
                alpha=self.options.alpha,
                variant=self.options.variant,
                sided=self.options.sided,
                h_bounds=(self.config["h_min"], self.config["h_max"]),
                max_iter=self.config["max_iter"],
                min_iter=self.config["min_iter"],
                stop_at_h_max=self.config["stop_at_h_max"],
            )
        except ValueError as err:
            self.cli.parser.error(str(err))

        outdir: Path = self.options.out
        outputs = [outdir / "activation.nii", outdir / "trace.csv"]
        self.start_manifest(
            outdir,
            outputs,
            config=dict(
                self.config,
                alphas=[config.alpha],
                variants=[config.variant],
                sided=config.sided,
            ),
        )

        state = fast_run(spm, config)
        shape = volume.data.shape[:3] if volume.data.ndim >= 3 else values.shape
        write_volume(
            outputs[0],
            VolumeFile(state.zeta.reshape(shape).astype(np.int16)),
            dtype="int16",
        )
        write_csv(trace_frame(state), outputs[1])
        self.cli.info(
            f"{config.variant}-fast: {state.n_active} active after {state.k} iteration(s) "
            f"({state.stop_reason})"
        )
