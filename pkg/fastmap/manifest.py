"""Provenance record written next to every command's outputs."""

import contextlib
import datetime
import importlib.metadata
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

from loguru import logger

from fastmap.config import config_hash

__all__ = ["MANIFEST_NAME", "RunManifest", "package_versions"]

MANIFEST_NAME = "manifest.json"


def package_versions() -> dict[str, str]:
    """Return installed versions of fastmap and its numerical stack."""

    versions = {}
    for dist in ("fastmap", "numpy", "scipy", "pandas", "statsmodels"):
        versions[dist] = "unknown"
        with contextlib.suppress(importlib.metadata.PackageNotFoundError):
            versions[dist] = importlib.metadata.version(dist)
    return versions


@dataclass
class RunManifest:
    """What ran, with which configuration and seeds, producing which files."""

    command: str
    config: dict[str, Any]
    config_hash: str = ""
    seeds: dict[str, Any] = field(default_factory=dict)
    versions: dict[str, str] = field(default_factory=package_versions)
    timestamp: str = field(
        default_factory=lambda: datetime.datetime.now(datetime.timezone.utc).isoformat(
            timespec="seconds"
        )
    )
    outputs: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.config_hash = config_hash(self.config)

    def write(self, directory: str | Path) -> Path:
        """Write the manifest into `directory` (created if needed); return its path."""

        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / MANIFEST_NAME
        text = json.dumps(asdict(self), indent=2, sort_keys=True)
        path.write_text(text + "\n", encoding="utf-8")
        logger.debug("wrote {}", path)
        return path

    @classmethod
    def read(cls, path: str | Path) -> "RunManifest":
        """Load a manifest written by `write`."""

        data = json.loads(Path(path).read_text(encoding="utf-8"))
        recorded = data.pop("config_hash")
        manifest = cls(**data)
        if manifest.config_hash != recorded:
            raise ValueError(f"{path}: config hash does not match the recorded config")
        return manifest
