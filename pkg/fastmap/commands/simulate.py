"""Simulate command module."""

from pathlib import Path

import numpy as np
import pandas as pd

from fastmap.bench import ExperimentConfig, replicate_seeds
from fastmap.cli import BaseCmd
from fastmap.config import parse_ar_cell
from fastmap.phantom import SimConfig, ar_table, load_phantom, simulate_dataset
from fastmap.volio import VolumeFile, write_volume


class SimulateCmd(BaseCmd):
    """Simulate command class."""

    def init_command(self) -> None:
        """Initialize simulate command."""

        parser = self.add_subcommand_parser(
            "simulate",
            help="simulate phantom time series",
            description=self.cli.dedent(
                """
    The `%(prog)s` command simulates replicates of the phantom under the
    block design of the configuration, with AR noise of the given order
    and shape, and writes `replicate-NNN.nii` (x, y, 1, T) volumes plus the
    design matrix `design.csv` into `--out`.

    Replicate `r` uses the same seed as replicate `r` of the first
    benchmark cell with the same master seed.
                """
            ),
        )

        parser.add_argument("--out", type=Path, required=True, help="output directory")

        arg = parser.add_argument(
            "--sigma0",
            type=float,
            default=self.config["sigma0"][0],
            help="innovation standard deviation",
        )
        self.cli.add_default_to_help(arg, parser)

        arg = parser.add_argument(
            "--ar",
            metavar="P:SHAPE",
            default=self.config["ar_cells"][0],
            help="AR order and coefficient shape",
        )
        self.cli.add_default_to_help(arg, parser)

        arg = parser.add_argument(
            "--replicates",
            type=int,
            default=1,
            help="number of replicates",
        )
        self.cli.add_default_to_help(arg, parser)

    def run(self) -> None:
        """Perform simulate command."""

        try:
            p, shape = parse_ar_cell(self.options.ar)
            spec = ar_table(p, shape)  # type: ignore[arg-type]
            cfg = ExperimentConfig.from_config(self.config)
            phantom = load_phantom(cfg.phantom)
        except (OSError, ValueError) as err:
            self.cli.parser.error(str(err))

        if self.options.replicates < 1:
            self.cli.parser.error("--replicates must be >= 1")

        design = cfg.design()
        outdir: Path = self.options.out
        names = [f"replicate-{r:03d}.nii" for r in range(self.options.replicates)]
        seeds = {
            name: replicate_seeds(cfg.master_seed, 0, r)[0] for r, name in enumerate(names)
        }
        config = dict(self.config, sigma0=[self.options.sigma0], ar_cells=[self.options.ar])
        self.start_manifest(
            outdir,
            [outdir / "design.csv", *(outdir / name for name in names)],
            seeds={"master_seed": cfg.master_seed, **seeds},
            config=config,
        )

        frame = pd.DataFrame(design.matrix, columns=list(design.roles))
        frame.to_csv(
            outdir / "design.csv", index=False, float_format="%.17g", lineterminator="\n"
        )

        for replicate, name in enumerate(names):
            sim = SimConfig(self.options.sigma0, cfg.T, cfg.TR, seeds[name], replicate)
            data = simulate_dataset(phantom, design, spec, sim)
            volume = VolumeFile(
                np.expand_dims(data, 2).astype(np.float32),
                voxel_sizes=(1.0, 1.0, 1.0, cfg.TR),
                description=f"{spec.cell_id} sigma0={self.options.sigma0:g} seed={seeds[name]}",
            )
            write_volume(outdir / name, volume)
            self.cli.info(f"wrote {outdir / name}")
