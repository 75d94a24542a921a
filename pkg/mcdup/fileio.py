"""Reading and writing scenarios, tables, traces, series and reports."""

import json
import logging
import math
import os

import git
import numpy as np
import pandas as pd
import yaml
import cmdline_provenance as cmdprov

from . import __version__
from . import links
from . import measurement


OUTPUT_ROOT_ENV = "MCDUP_OUTPUT_ROOT"
DEFAULT_OUTPUT_ROOT = "results"
DATA_DIR = os.path.join(os.path.dirname(__file__), "data")
BUILTIN_PREFIX = "builtin:"
FLOAT_FORMAT = "%.6f"


def resolve_path(path, base_dir=None):
    """Resolve a file reference from a config.

    Parameters
    ----------
    path : str
        ``builtin:<relative path>`` for files shipped in mcdup/data, otherwise
        a path (relative paths are taken from base_dir)
    base_dir : str, optional
        Directory of the referring config file

    Returns
    -------
    path : str
    """

    if path.startswith(BUILTIN_PREFIX):
        resolved = os.path.join(DATA_DIR, path[len(BUILTIN_PREFIX):])
    elif base_dir and not os.path.isabs(path):
        resolved = os.path.join(base_dir, path)
    else:
        resolved = path
    if not os.path.exists(resolved):
        raise FileNotFoundError(f"No such file: {path} (resolved to {resolved})")

    return resolved


def read_config(config_file):
    """Read a YAML (or JSON) config file into a dict."""

    with open(config_file, "r") as reader:
        config = yaml.load(reader, Loader=yaml.FullLoader)
    if config is None:
        config = {}
    if not isinstance(config, dict):
        raise ValueError(f"Config file {config_file} does not hold a mapping")

    return config


def output_dir(path):
    """Output directory, with relative paths under $MCDUP_OUTPUT_ROOT."""

    if os.path.isabs(path):
        return path
    root = os.environ.get(OUTPUT_ROOT_ENV, DEFAULT_OUTPUT_ROOT)

    return os.path.join(root, path)


def read_quantile_table(infile):
    """Read a quantile table CSV (p,value_ms or p,value_mbps).

    Returns
    -------
    pairs : list of tuple
        (p, value) pairs in file order
    """

    df = pd.read_csv(infile, comment="#")
    if len(df.columns) != 2 or df.columns[0] != "p":
        raise ValueError(f"Quantile table {infile} must have columns p and one value column")

    return [(float(p), float(v)) for p, v in df.itertuples(index=False)]


def write_quantile_table(pairs, outfile, unit="ms"):
    df = pd.DataFrame(pairs, columns=["p", f"value_{unit}"])
    df.to_csv(outfile, index=False)


def read_rsrp_trace(infile):
    """Read an RSRP trace CSV (time_s,rsrp_dbm,tech[,lat,lon])."""

    df = pd.read_csv(infile, comment="#", keep_default_na=False, na_values=[""])

    return links.RsrpTrace(df)


def write_rsrp_trace(trace, outfile):
    trace.records.to_csv(outfile, index=False, na_rep="", float_format=FLOAT_FORMAT)


def table_resolver(base_dir=None):
    """Resolver for the file references inside link profiles.

    Returns
    -------
    resolve : callable
        Takes a table spec (``file`` key) and returns quantile table pairs, or
        an RsrpTrace when the spec is an rsrp_trace outage
    """

    def resolve(spec):
        if "file" not in spec:
            raise KeyError("Table reference has no file key")
        path = resolve_path(spec["file"], base_dir)
        if spec.get("kind") == "rsrp_trace":
            return read_rsrp_trace(path)
        return read_quantile_table(path)

    return resolve


def _json_default(obj):
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return None if math.isnan(obj) else float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"Object of type {type(obj).__name__} is not JSON serializable")


def _clean_nan(obj):
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {str(k): _clean_nan(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean_nan(v) for v in obj]
    return obj


def write_json(obj, outfile):
    """Deterministic JSON: sorted keys, NaN written as null."""

    with open(outfile, "w") as writer:
        json.dump(_clean_nan(obj), writer, sort_keys=True, indent=2, default=_json_default)
        writer.write("\n")


def read_json(infile):
    with open(infile, "r") as reader:
        return json.load(reader)


def write_table(df, outfile):
    df.to_csv(outfile, index=False, float_format=FLOAT_FORMAT, na_rep="")


def write_series(series, outdir, name):
    """Write a series as <name>.csv plus a <name>.json metadata sidecar.

    Returns
    -------
    csv_file : str
    """

    os.makedirs(outdir, exist_ok=True)
    csv_file = os.path.join(outdir, f"{name}.csv")
    series.to_frame().to_csv(csv_file, index=False, float_format=FLOAT_FORMAT, na_rep="")
    metadata = dict(series.metadata)
    metadata["metric"] = series.metric
    metadata["n_samples"] = len(series)
    write_json(metadata, os.path.join(outdir, f"{name}.json"))

    return csv_file


def read_series(csv_file):
    """Read a series written by write_series."""

    df = pd.read_csv(csv_file)
    sidecar = os.path.splitext(csv_file)[0] + ".json"
    metadata = read_json(sidecar)

    return measurement.SampleSeries.from_frame(df, metadata)


def get_new_log(infile_logs=None, repo_dir=None):
    """Command log for a run directory or output file.

    The code reference is the first git remote of the repository holding
    repo_dir, pinned to its checked-out commit. Outside a repository, or in
    one without a remote or commit, it is the installed mcdup version.

    Parameters
    ----------
    infile_logs : dict, optional
        keys are file names, values are the command log
    repo_dir : str, optional
        Path inside a git repository; defaults to the package directory

    Returns
    -------
    new_log : str
        New command log
    """

    try:
        repo = git.Repo(repo_dir or os.path.dirname(__file__), search_parent_directories=True)
        commit = repo.head.commit.hexsha[:10]
        code_url = f"{repo.remotes[0].url.split('.git')[0]}/tree/{commit}"
    except (git.exc.InvalidGitRepositoryError, git.exc.NoSuchPathError, IndexError, ValueError):
        code_url = f"mcdup {__version__}"

    return cmdprov.new_log(code_url=code_url, infile_logs=infile_logs)


def write_provenance(outdir, infile_logs=None):
    """Write the command history to provenance.log in outdir."""

    outfile = os.path.join(outdir, "provenance.log")
    with open(outfile, "w") as writer:
        writer.write(get_new_log(infile_logs=infile_logs))
        writer.write("\n")
    logging.info(f"Provenance written to {outfile}")

    return outfile
