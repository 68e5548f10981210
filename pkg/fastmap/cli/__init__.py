"""Command framework: argparse lifecycle, TOML config, logging and help options.

* Help with `-h`; help for every command with `-H` / `--long-help`.
* Logging levels with `-v` (DEBUG) and `-vv` (TRACE) through loguru.
* Version from package metadata with `-V`.
* Settings from a TOML file with `--config FILE`, loaded before the parser
  is built; `--print-config` shows the effective settings and their hash.
* Help strings normalized to an upper-case first letter and a final period.
"""

from fastmap.cli.basecli import BaseCLI
from fastmap.cli.basecmd import BaseCmd

__all__ = ["BaseCLI", "BaseCmd"]
