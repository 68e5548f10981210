"""Base command class."""

import argparse
from pathlib import Path
from typing import Any, Callable

from fastmap.cli.basecli import BaseCLI
from fastmap.manifest import RunManifest

__all__ = ["BaseCmd"]


class BaseCmd:
    """Base command class; for commands with subcommands.

    A subclass registers its parser in `init_command` and does its work in
    `run`, reading `self.options` and `self.config`:

        class ScoreCmd(BaseCmd):

            def init_command(self) -> None:
                parser = self.add_subcommand_parser(
                    "score",
                    help="score activation maps against a phantom",
                    description="The `%(prog)s` command ...",
                )
                parser.add_argument("maps", nargs="+", type=Path)

            def run(self) -> None:
                ...
    """

    def __init__(self, cli: BaseCLI) -> None:
        """Initialize base command instance.

        After setting `self.cli`, the constructor calls `init_command`, which
        should call `self.add_subcommand_parser` and `add_argument`.

        Args:
            cli: the CLI.

        Attributes:
            cli: the CLI.
            options: will contain results of `parse_args` when `run` is called.
        """

        self.cli = cli
        self.options: argparse.Namespace
        self.init_command()

    @property
    def config(self) -> dict[str, Any]:
        """Effective configuration."""
        return self.cli.config

    def init_command(self) -> None:
        """Implement in subclass to call `add_subcommand_parser` and `add_argument`."""

    def add_subcommand_parser(self, name: str, **kwargs: Any) -> argparse.ArgumentParser:
        """Add subcommand to main parser and return subcommand's subparser.

        Side Effects:
            `parser.options.cmd` is set to call the subcommand's `run` method.
        """

        assert self.cli.add_parser
        kwargs.setdefault("formatter_class", argparse.RawDescriptionHelpFormatter)
        parser = self.cli.add_parser(name, **kwargs)
        parser.set_defaults(cmd=lambda: self._promote_options(self.run), prog=name)
        return parser

    def _promote_options(self, run: Callable[[], None]) -> None:
        self.options = self.cli.options
        run()

    def run(self) -> None:
        """Perform the command."""

    def start_manifest(
        self,
        outdir: Path,
        outputs: list[Path],
        seeds: dict[str, Any] | None = None,
        config: dict[str, Any] | None = None,
    ) -> RunManifest:
        """Write the run manifest into `outdir` before any of `outputs` exist."""

        manifest = RunManifest(
            command=" ".join(["fastmap", *(self.cli.argv or [])]),
            config=dict(self.config if config is None else config),
            seeds=seeds or {},
            outputs=[str(path) for path in outputs],
        )
        manifest.write(outdir)
        return manifest
