"""Score command module."""

from pathlib import Path

import pandas as pd

from fastmap.bench import score_maps, write_csv
from fastmap.cli import BaseCmd
from fastmap.phantom import load_phantom
from fastmap.volio import read_volume


class ScoreCmd(BaseCmd):
    """Score command class."""

    def init_command(self) -> None:
        """Initialize score command."""

        parser = self.add_subcommand_parser(
            "score",
            help="score activation volumes against the phantom truth",
            description=self.cli.dedent(
                """
    The `%(prog)s` command prints the Jaccard index between each activation
    volume (nonzero = active) and the phantom's activated pixels, counted
    within the phantom brain. Maps from other software can be scored this
    way alongside `fastmap detect` output.
                """
            ),
        )

        parser.add_argument(
            "maps", nargs="+", type=Path, metavar="MAP", help="activation volume"
        )

        arg = parser.add_argument(
            "--phantom",
            default=self.config["phantom"],
            help="`bundled` or a phantom label file",
        )
        self.cli.add_default_to_help(arg, parser)

        parser.add_argument("--csv", type=Path, help="also write the scores to CSV `FILE`")

    def run(self) -> None:
        """Perform score command."""

        try:
            phantom = load_phantom(self.options.phantom)
            maps = {
                str(path): read_volume(self.cli.existing_path(path)).spatial() != 0
                for path in self.options.maps
            }
            for name, activation in maps.items():
                if activation.shape != phantom.dims:
                    raise ValueError(f"{name}: shape {activation.shape} is not {phantom.dims}")
        except (OSError, ValueError) as err:
            self.cli.parser.error(str(err))

        scores = score_maps(maps, phantom.truth, phantom.brain_mask)
        for name, value in scores.items():
            print(f"{value:.6f}  {name}")

        if self.options.csv:
            frame = pd.DataFrame({"map": list(scores), "jaccard": list(scores.values())})
            write_csv(frame, self.options.csv)
