import json
from pathlib import Path

import numpy as np
import pandas as pd
import pytest

from fastmap.__main__ import main
from fastmap.bench import SCORE_COLUMNS, SUMMARY_COLUMNS
from fastmap.config import config_hash, load_config
from fastmap.fast import TRACE_COLUMNS
from fastmap.glm import block_schedule, build_design
from fastmap.manifest import MANIFEST_NAME, RunManifest
from fastmap.phantom import Label, PhantomSpec, bundled_phantom, save_phantom
from fastmap.volio import VolumeFile, read_volume, write_volume


def _exit_code(args: list[str]) -> int | str | None:
    with pytest.raises(SystemExit) as err:
        main(args)
    return err.value.code


@pytest.fixture(name="small_config")
def small_config_(tmp_path: Path) -> Path:
    labels = np.zeros((16, 16), dtype=int)
    labels[2:14, 2:14] = Label.BRAIN_A
    labels[4:12, 4:12] = Label.BRAIN_B
    labels[6:10, 6:10] = Label.ACTIVATED
    phantom_path = tmp_path / "small-phantom.txt"
    save_phantom(phantom_path, PhantomSpec(labels))

    path = tmp_path / "small.toml"
    path.write_text(
        f"""
phantom = "{phantom_path.as_posix()}"
sigma0 = [50]
ar_cells = ["1:equal"]
replicates = 2
alphas = [0.05]
variants = ["am"]
ct_mc_iters = 200
ct_fixed_sizes = [2]
p_max = 1
""",
        encoding="utf-8",
    )
    return path


def test_version() -> None:
    assert _exit_code(["--version"]) == 0


def test_help() -> None:
    assert _exit_code(["--help"]) == 0


def test_long_help(capsys: pytest.CaptureFixture[str]) -> None:
    assert _exit_code(["--long-help"]) == 0
    out = capsys.readouterr().out
    for command in ("bench", "detect", "fit", "phantom", "score", "simulate"):
        assert f" {command.upper()} " in out


def test_command_help() -> None:
    assert _exit_code(["detect", "--help"]) == 0


def test_bogus_option() -> None:
    assert _exit_code(["--bogus"]) == 2


def test_missing_command(capsys: pytest.CaptureFixture[str]) -> None:
    assert _exit_code([]) == 2
    assert "Missing COMMAND" in capsys.readouterr().err


def test_missing_input(tmp_path: Path) -> None:
    assert _exit_code(["detect", "--in", str(tmp_path / "nope.nii"), "--out", "x"]) == 2


def test_phantom_export(tmp_path: Path) -> None:
    outdir = tmp_path / "phantom"
    main(["phantom", "export", "--out", str(outdir)])

    phantom = bundled_phantom()
    labels = read_volume(outdir / "labels.nii").data
    np.testing.assert_array_equal(labels, phantom.labels)
    assert int(read_volume(outdir / "truth.nii").data.sum()) == 138
    assert (outdir / "phantom.txt").read_text(encoding="utf-8").startswith("128 128\n")

    manifest = RunManifest.read(outdir / MANIFEST_NAME)
    assert manifest.command == f"fastmap phantom export --out {outdir}"
    assert manifest.outputs[0] == str(outdir / "phantom.txt")


def test_score_truth(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    main(["phantom", "export", "--out", str(tmp_path)])
    empty = tmp_path / "empty.nii"
    write_volume(empty, np.zeros((128, 128), dtype=np.int16), dtype="int16")
    scores = tmp_path / "scores.csv"
    main(["score", str(tmp_path / "truth.nii"), str(empty), "--csv", str(scores)])

    lines = capsys.readouterr().out.splitlines()
    assert lines == [f"1.000000  {tmp_path / 'truth.nii'}", f"0.000000  {empty}"]
    assert pd.read_csv(scores)["jaccard"].tolist() == [1.0, 0.0]


def test_score_shape_mismatch(tmp_path: Path) -> None:
    path = tmp_path / "small.nii"
    write_volume(path, np.zeros((8, 8), dtype=np.int16), dtype="int16")
    assert _exit_code(["score", str(path)]) == 2


def test_detect_zero_map(tmp_path: Path) -> None:
    spm = tmp_path / "spm.nii"
    values = np.zeros((16, 16), dtype=np.float32)
    values[0, :] = np.nan
    write_volume(spm, VolumeFile(values))
    outdir = tmp_path / "out"
    main(["detect", "--in", str(spm), "--out", str(outdir)])

    activation = read_volume(outdir / "activation.nii").data
    assert activation.shape == (16, 16)
    assert not activation.any()
    trace = pd.read_csv(outdir / "trace.csv")
    assert list(trace.columns) == TRACE_COLUMNS
    assert trace["n_inactive"].tolist() == [240]

    manifest = json.loads((outdir / MANIFEST_NAME).read_text(encoding="utf-8"))
    assert manifest["config"]["alphas"] == [0.05]
    assert manifest["config"]["variants"] == ["am"]


def test_detect_bad_alpha(tmp_path: Path) -> None:
    spm = tmp_path / "spm.nii"
    write_volume(spm, np.zeros((8, 8)))
    assert _exit_code(["detect", "--in", str(spm), "--out", "x", "--alpha", "0.7"]) == 2


def test_simulate_bad_ar(tmp_path: Path) -> None:
    assert _exit_code(["simulate", "--out", str(tmp_path), "--ar", "9:equal"]) == 2


def test_simulate_small(tmp_path: Path, small_config: Path) -> None:
    outdir = tmp_path / "sim"
    main(["--config", str(small_config), "simulate", "--out", str(outdir), "--replicates", "2"])

    design = pd.read_csv(outdir / "design.csv")
    assert list(design.columns) == ["intercept", "stimulus", "drift1"]
    assert len(design) == 96
    volume = read_volume(outdir / "replicate-001.nii")
    assert volume.shape == (16, 16, 1, 96)
    assert volume.voxel_sizes[3] == 7.0

    manifest = RunManifest.read(outdir / MANIFEST_NAME)
    assert manifest.config["sigma0"] == [50.0]
    assert set(manifest.seeds) == {"master_seed", "replicate-000.nii", "replicate-001.nii"}


def test_simulate_fit_detect(tmp_path: Path, small_config: Path) -> None:
    config = ["--config", str(small_config)]
    main([*config, "simulate", "--out", str(tmp_path / "sim"), "--sigma0", "50"])
    main(
        [
            *config,
            "fit",
            "--in",
            str(tmp_path / "sim" / "replicate-000.nii"),
            "--design",
            str(tmp_path / "sim" / "design.csv"),
            "--out",
            str(tmp_path / "fit"),
        ]
    )
    spm = read_volume(tmp_path / "fit" / "spm.nii").spatial()
    order = read_volume(tmp_path / "fit" / "order.nii").spatial()
    assert spm.shape == (16, 16)
    assert np.isnan(spm[0, 0])
    assert order[0, 0] == -1
    assert set(np.unique(order[2:14, 2:14])) <= {0, 1}
    assert spm[6:10, 6:10].min() > 5.0

    main([*config, "detect", "--in", str(tmp_path / "fit" / "spm.nii"), "--out", str(tmp_path)])
    activation = read_volume(tmp_path / "activation.nii").spatial()
    assert activation[7:9, 7:9].all()
    assert not activation[0].any()


def test_bench_small(tmp_path: Path, small_config: Path) -> None:
    outdir = tmp_path / "bench"
    main(["--config", str(small_config), "bench", "--out", str(outdir)])

    scores = pd.read_csv(outdir / "scores.csv")
    assert list(scores.columns) == SCORE_COLUMNS
    assert len(scores) == 6
    assert scores["method"].tolist() == ["am-fast", "ct", "ct-k2"] * 2

    summary = pd.read_csv(outdir / "summary.csv")
    assert list(summary.columns) == SUMMARY_COLUMNS
    assert summary["n"].tolist() == [2, 2, 2]

    manifest = RunManifest.read(outdir / MANIFEST_NAME)
    assert manifest.config_hash == config_hash(load_config(small_config))
    assert "ar1-equal-s50/1" in manifest.seeds
    assert manifest.seeds["ar1-equal-s50/1"][0] == scores["seed"].iloc[3]


def test_bench_rejects_bad_phantom(tmp_path: Path) -> None:
    path = tmp_path / "bad.toml"
    path.write_text(f'phantom = "{(tmp_path / "missing.txt").as_posix()}"\n', encoding="utf-8")
    assert _exit_code(["--config", str(path), "bench", "--out", str(tmp_path)]) == 2


def test_fit_detect_volumetric(tmp_path: Path) -> None:
    design = build_design(block_schedule(4, 6), T=24, TR=2.0)
    pd.DataFrame(design.matrix, columns=list(design.roles)).to_csv(
        tmp_path / "design.csv", index=False
    )
    rng = np.random.default_rng(3)
    data = 100.0 + rng.standard_normal((6, 6, 5, 24))
    data[2:4, 2:4, 1:3] += 5.0 * design.matrix[:, 1]
    write_volume(
        tmp_path / "series.nii",
        VolumeFile(data.astype(np.float32), voxel_sizes=(1.0, 1.0, 1.0, 2.0)),
    )

    fit = tmp_path / "fit"
    main(
        [
            "fit",
            "--in",
            str(tmp_path / "series.nii"),
            "--design",
            str(tmp_path / "design.csv"),
            "--out",
            str(fit),
            "--pmax",
            "1",
        ]
    )
    assert read_volume(fit / "spm.nii").shape == (6, 6, 5)
    assert read_volume(fit / "order.nii").shape == (6, 6, 5)
    assert np.isfinite(read_volume(fit / "spm.nii").data).all()

    main(["detect", "--in", str(fit / "spm.nii"), "--out", str(tmp_path / "detect")])
    assert read_volume(tmp_path / "detect" / "activation.nii").shape == (6, 6, 5)
