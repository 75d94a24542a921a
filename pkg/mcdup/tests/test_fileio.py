"""Test file input/output and general utilities."""

import argparse
import json
import os

import git
import numpy as np
import numpy.testing as npt
import pytest

from mcdup import __version__, dask_setup, fileio
from mcdup.general_utils import apply_overrides, config_hash, set_nested, store_dict

from .conftest import rtt_series

REPO_ROOT = os.path.join(os.path.dirname(__file__), "..", "..")


def test_resolve_builtin():
    """Builtin references point into the package data."""
    path = fileio.resolve_path("builtin:requirements.yml")
    assert path.endswith("requirements.yml")


def test_resolve_missing(tmp_path):
    """Missing files are reported with their resolved path."""
    with pytest.raises(FileNotFoundError):
        fileio.resolve_path("nothing.csv", str(tmp_path))


def test_output_dir(monkeypatch, tmp_path):
    """Relative output directories live under the output root."""
    monkeypatch.setenv(fileio.OUTPUT_ROOT_ENV, str(tmp_path))
    assert fileio.output_dir("run1") == str(tmp_path / "run1")
    assert fileio.output_dir("/abs/run") == "/abs/run"


def test_quantile_table_file(tmp_path):
    """Quantile tables are written and read as (p, value) pairs."""
    outfile = str(tmp_path / "table.csv")
    fileio.write_quantile_table([(0.0, 1.0), (0.5, 2.0), (1.0, 3.0)], outfile)
    assert fileio.read_quantile_table(outfile) == [(0.0, 1.0), (0.5, 2.0), (1.0, 3.0)]


def test_quantile_table_columns(tmp_path):
    """Quantile tables need a p column and one value column."""
    infile = tmp_path / "bad.csv"
    infile.write_text("q,value\n0,1\n1,2\n")
    with pytest.raises(ValueError):
        fileio.read_quantile_table(str(infile))


def test_series_files(tmp_path):
    """Series are written with a metadata sidecar and read back."""
    series = rtt_series([10.0, np.nan, 12.5])
    series.metadata["seed"] = 3
    fileio.write_series(series, str(tmp_path), "rtt")
    sidecar = json.loads((tmp_path / "rtt.json").read_text())
    assert sidecar["n_samples"] == 3
    assert sidecar["metric"] == "rtt_ms"
    back = fileio.read_series(str(tmp_path / "rtt.csv"))
    npt.assert_array_equal(back.outage, [False, True, False])
    npt.assert_allclose(back.valid_values, [10.0, 12.5])
    assert back.metadata["seed"] == 3


def test_json_deterministic(tmp_path):
    """JSON output has sorted keys and null for NaN."""
    outfile = tmp_path / "out.json"
    fileio.write_json({"b": np.float64(np.nan), "a": np.int64(2), "c": [1.5, float("inf")]}, str(outfile))
    text = outfile.read_text()
    assert text.index('"a"') < text.index('"b"')
    assert json.loads(text) == {"a": 2, "b": None, "c": [1.5, None]}


def test_read_config_not_mapping(tmp_path):
    """Config files must hold a mapping."""
    infile = tmp_path / "list.yml"
    infile.write_text("- 1\n- 2\n")
    with pytest.raises(ValueError):
        fileio.read_config(str(infile))


def test_provenance(tmp_path):
    """The command history is written next to the outputs."""
    outfile = fileio.write_provenance(str(tmp_path))
    assert (tmp_path / "provenance.log").exists()
    assert outfile.endswith("provenance.log")


def test_new_log_outside_repo(tmp_path):
    """Outside a git repository the log names the package version."""
    assert f"mcdup {__version__}" in fileio.get_new_log(repo_dir=str(tmp_path))


def test_new_log_pins_commit(tmp_path):
    """Inside a repository the log points at the remote and the checked-out commit."""
    repo = git.Repo.init(str(tmp_path))
    repo.create_remote("origin", "https://example.org/lab/mcdup.git")
    actor = git.Actor("Lab", "lab@example.org")
    commit = repo.index.commit("Initial commit", author=actor, committer=actor)
    new_log = fileio.get_new_log(repo_dir=str(tmp_path))
    assert f"https://example.org/lab/mcdup/tree/{commit.hexsha[:10]}" in new_log


def test_store_dict():
    """key=value arguments become a dict with YAML-typed values."""
    parser = argparse.ArgumentParser()
    parser.add_argument("--set", nargs="*", action=store_dict, default={})
    args = parser.parse_args(["--set", "seed=7", "probe.interval_ms=50.5", "policy.kind=quality_switch"])
    assert args.set == {"seed": 7, "probe.interval_ms": 50.5, "policy.kind": "quality_switch"}


def test_store_dict_bad_argument():
    """Arguments without '=' are a usage error."""
    parser = argparse.ArgumentParser()
    parser.add_argument("--set", nargs="*", action=store_dict, default={})
    with pytest.raises(SystemExit):
        parser.parse_args(["--set", "seed"])


def test_overrides():
    """Dotted overrides create nested keys without touching the input."""
    config = {"probe": {"interval_ms": 100}}
    updated = apply_overrides(config, {"probe.interval_ms": 50, "load.target_mbps": 20})
    assert updated == {"probe": {"interval_ms": 50}, "load": {"target_mbps": 20}}
    assert config == {"probe": {"interval_ms": 100}}
    with pytest.raises(ValueError):
        set_nested({"seed": 1}, "seed.value", 2)


def test_config_hash():
    """The hash ignores key order."""
    assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": [1, 2], "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})


def test_dask_config_file():
    """The shipped sweep cluster config gives LocalCluster arguments."""
    kwargs = dask_setup.cluster_kwargs(fileio.resolve_path("config/dask_local.yml", REPO_ROOT))
    assert kwargs["n_workers"] == 4


@pytest.mark.parametrize(
    "config, error",
    [({"PBSCluster": {}}, KeyError), ({"temporary_directory": "/tmp"}, ValueError)],
)
def test_dask_config_invalid(config, error):
    """Only local clusters are accepted for sweeps."""
    with pytest.raises(error):
        dask_setup.cluster_kwargs(config)
