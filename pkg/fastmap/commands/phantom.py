"""Phantom command module."""

from pathlib import Path

import numpy as np

from fastmap.cli import BaseCmd
from fastmap.phantom import PhantomFormatError, load_phantom, save_phantom
from fastmap.volio import VolumeFile, write_volume


class PhantomCmd(BaseCmd):
    """Phantom command class."""

    def init_command(self) -> None:
        """Initialize phantom command."""

        parser = self.add_subcommand_parser(
            "phantom",
            help="export the simulation phantom",
            description=self.cli.dedent(
                """
    The `%(prog)s export` command writes the phantom label file
    `phantom.txt` (first line: rows and columns; then one line of
    whitespace-separated label codes per image row, 0 background, 1 and 2
    brain tissue, 3 activated) and the volumes `labels.nii` and `truth.nii`.
                """
            ),
        )

        actions = parser.add_subparsers(dest="action", metavar="ACTION", required=True)
        export = actions.add_parser("export", help="write phantom files into `--out`")
        export.add_argument(
            "--out",
            type=Path,
            required=True,
            help="output directory",
        )
        export.add_argument(
            "--source",
            default=self.config["phantom"],
            help="`bundled` or a phantom label file (default: config `phantom`)",
        )

    def run(self) -> None:
        """Perform phantom command."""

        try:
            phantom = load_phantom(self.options.source)
        except (OSError, PhantomFormatError) as err:
            self.cli.parser.error(str(err))

        outdir: Path = self.options.out
        outputs = [outdir / "phantom.txt", outdir / "labels.nii", outdir / "truth.nii"]
        self.start_manifest(outdir, outputs)

        save_phantom(outputs[0], phantom)
        write_volume(outputs[1], VolumeFile(phantom.labels), dtype="int16")
        write_volume(outputs[2], VolumeFile(phantom.truth.astype(np.int16)), dtype="int16")
        self.cli.info(
            f"phantom: {int(phantom.brain_mask.sum())} brain, "
            f"{int(phantom.truth.sum())} activated pixels -> {outdir}"
        )
