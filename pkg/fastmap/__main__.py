"""Command line interface."""

from fastmap.cli import BaseCLI


class FastmapCLI(BaseCLI):
    """Command line interface."""

    def init_parser(self) -> None:
        """Initialize argument parser."""

        self.ArgumentParser(
            prog="fastmap",
            description=self.dedent(
                """
    Detect activation in statistical parametric maps with FAST, the fully
    automated adaptive smoothing and thresholding procedure, and benchmark it
    on a simulated phantom against cluster-extent thresholding.

    Volumes are single-file NIfTI-1 (`.nii`, float32 or int16). Settings are
    read from a flat TOML file given with `--config`; see `--print-config`.
                """
            ),
        )

    def add_arguments(self) -> None:
        """Add arguments to parser."""
        self.add_subcommand_modules("fastmap.commands", suffix="Cmd")

    def main(self) -> None:
        """Command line interface entry point (method)."""

        if not self.options.cmd:
            self.parser.print_help()
            self.parser.exit(2, "error: Missing COMMAND\n")

        self.options.cmd()


def main(args: list[str] | None = None) -> None:
    """Command line interface entry point (function)."""
    FastmapCLI(args).main()


if __name__ == "__main__":
    main()
