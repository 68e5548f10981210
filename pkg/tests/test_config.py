from pathlib import Path

import pytest

from fastmap.__main__ import main
from fastmap.config import (
    DEFAULTS,
    ConfigError,
    config_hash,
    load_config,
    parse_ar_cell,
    resolve_config,
)


@pytest.fixture(name="config_file")
def config_file_(tmp_path: Path) -> Path:
    path = tmp_path / "fastmap.toml"
    path.write_text(
        '[fastmap]\nreplicates = 3\nsigma0 = [300]\nTR = 7\nmaster-seed = 5\nsided = "two"\n',
        encoding="utf-8",
    )
    return path


def test_defaults() -> None:
    config = resolve_config()
    assert config == DEFAULTS
    config["sigma0"].append(1.0)
    assert DEFAULTS["sigma0"] == [240.0, 300.0, 400.0]
    assert config["alphas"] == [0.05, 0.025, 0.01, 0.001]
    assert config["min_iter"] == 1


def test_overrides_are_coerced() -> None:
    config = resolve_config({"tr": 2, "t": 48, "master-seed": 9, "sigma0": 300, "jobs": -1})
    assert config["TR"] == 2.0
    assert isinstance(config["TR"], float)
    assert config["T"] == 48
    assert config["master_seed"] == 9
    assert config["sigma0"] == [300.0]
    assert config["jobs"] == -1


@pytest.mark.parametrize(
    ("overrides", "match"),
    [
        ({"bogus": 1}, "unknown config key 'bogus'"),
        ({"replicates": "ten"}, "expected a number"),
        ({"replicates": 2.5}, "expected an integer"),
        ({"replicates": True}, "expected a number"),
        ({"stop_at_h_max": 1}, "true or false"),
        ({"sided": 1}, "expected a string"),
        ({"alphas": []}, "nonempty list"),
        ({"replicates": 0}, "replicates must be >= 1"),
        ({"jobs": 0}, "jobs must be nonzero"),
        ({"sided": "both"}, "sided must be"),
        ({"variants": ["am", "xx"]}, "variants"),
        ({"ar_cells": ["four:equal"]}, "p:shape"),
    ],
)
def test_bad_overrides(overrides: dict[str, object], match: str) -> None:
    with pytest.raises(ConfigError, match=match):
        resolve_config(overrides)


def test_parse_ar_cell() -> None:
    assert parse_ar_cell("4:dec-inc") == (4, "dec-inc")
    assert parse_ar_cell("2") == (2, "equal")
    assert parse_ar_cell(" 3 : increasing") == (3, "increasing")


def test_load_config_section(config_file: Path) -> None:
    config = load_config(config_file)
    assert config["replicates"] == 3
    assert config["sigma0"] == [300.0]
    assert config["TR"] == 7.0
    assert config["master_seed"] == 5
    assert config["sided"] == "two"
    assert config["p_max"] == DEFAULTS["p_max"]


def test_load_config_flat(tmp_path: Path) -> None:
    path = tmp_path / "flat.toml"
    path.write_text("p-max = 2\nvariants = ['ar']\n", encoding="utf-8")
    config = load_config(path)
    assert config["p_max"] == 2
    assert config["variants"] == ["ar"]


def test_load_config_errors(tmp_path: Path) -> None:
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.toml")

    broken = tmp_path / "broken.toml"
    broken.write_text("replicates = \n", encoding="utf-8")
    with pytest.raises(ConfigError, match="broken.toml"):
        load_config(broken)

    nested = tmp_path / "nested.toml"
    nested.write_text("[other]\nx = 1\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="config is flat"):
        load_config(nested)


def test_config_hash() -> None:
    config = resolve_config()
    digest = config_hash(config)
    assert len(digest) == 64
    assert digest == config_hash(dict(reversed(list(config.items()))))
    assert digest != config_hash(resolve_config({"replicates": 2}))


def test_print_config(config_file: Path, capsys: pytest.CaptureFixture[str]) -> None:
    with pytest.raises(SystemExit) as err:
        main(["--config", str(config_file), "--print-config"])
    assert err.value.code == 0
    out = capsys.readouterr().out
    assert "'replicates': 3" in out
    assert f"# config-hash: {config_hash(load_config(config_file))}" in out


def test_print_config_enoent() -> None:
    with pytest.raises(SystemExit) as err:
        main(["--config", "./cant/find/me", "--print-config"])
    assert err.value.code == 2


def test_config_error_fails_any_command(tmp_path: Path) -> None:
    path = tmp_path / "bad.toml"
    path.write_text("bogus = 1\n", encoding="utf-8")
    with pytest.raises(SystemExit) as err:
        main(["--config", str(path), "score", "x.nii"])
    assert err.value.code == 2
