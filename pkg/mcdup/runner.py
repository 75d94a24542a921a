"""Functions and command line program for multi-connectivity experiments.

Subcommands
-----------
simulate    run a scenario (emulated or loopback tunnel) and write series and report
probe       run only the latency probe of a scenario
load        run only the load procedure of a scenario
analyze     recompute the report of a run from its series files
matrix      classify use cases against requirements (from a table or run reports)
tunnel      run a live tunnel server or probing client
plot-data   write CDF/CCDF curve data of a series
"""

import argparse
import logging
import math
import os
import sys
from dataclasses import dataclass, field, replace

import dask
import numpy as np
import pandas as pd

from . import __version__
from . import confidence
from . import dask_setup
from . import duplication
from . import emulator
from . import feasibility
from . import fileio
from . import general_utils
from . import kpi
from . import links
from . import measurement
from . import tunnel


logging.basicConfig(level=logging.INFO)

SCENARIO_KEYS = [
    "name",
    "seed",
    "duration_s",
    "output_dir",
    "transport",
    "requirements",
    "technology",
    "links",
    "loopback",
    "policy",
    "probe",
    "load",
    "compare_single",
    "confidence",
]
TRANSPORTS = ("emulated", "loopback")


class ScenarioError(ValueError):
    """A scenario has one or more configuration problems.

    Attributes
    ----------
    problems : list of str
    """

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("Invalid scenario:\n  " + "\n  ".join(self.problems))


@dataclass
class Scenario:
    """A resolved experiment definition.

    Parameters
    ----------
    name : str
    seed : int
    duration_s : float
    links : dict
        Link name to DuplexLink (emulated transport)
    policy : duplication policy
    probe : ProbeConfig, optional
    loads : list of LoadConfig
    output_dir : str
    transport : {'emulated', 'loopback'}
    requirements : dict, optional
        Use case name to UseCaseRequirement
    technology : str
        Label in the feasibility matrix
    compare_single : bool
        Also run every link alone with the same seed
    loopback : dict
        Path name to extra delay (ms), loopback transport
    confidence : dict
        alpha and packet_count options
    config : dict
        The resolved config mapping (hashed into provenance)
    """

    name: str
    seed: int
    duration_s: float
    links: dict
    policy: object
    probe: measurement.ProbeConfig = None
    loads: list = field(default_factory=list)
    output_dir: str = None
    transport: str = "emulated"
    requirements: dict = None
    technology: str = None
    compare_single: bool = False
    loopback: dict = field(default_factory=dict)
    confidence: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    @property
    def workloads(self):
        """Emulator workloads equivalent to the probe and load configs."""

        workloads = []
        if self.probe is not None:
            workloads.append(
                emulator.ProbeWorkload(self.probe.interval_ms, self.probe.payload_bytes, self.probe.outage_threshold_ms)
            )
        for load in self.loads:
            workloads.append(emulator.LoadWorkload(load.direction, load.target_mbps, load.payload_bytes))
        return tuple(workloads)

    @property
    def link_names(self):
        return sorted(self.loopback) if self.transport == "loopback" else sorted(self.links)


@dataclass
class RunReport:
    """Everything a run reports, as plain data."""

    scenario: str
    summaries: dict = field(default_factory=dict)
    shares: dict = field(default_factory=dict)
    confidence: dict = field(default_factory=dict)
    availability: list = field(default_factory=list)
    feasibility: dict = None
    comparison: dict = None
    invariant_violations: list = field(default_factory=list)
    series_files: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "scenario": self.scenario,
            "summaries": self.summaries,
            "shares": self.shares,
            "confidence": self.confidence,
            "availability": self.availability,
            "feasibility": self.feasibility,
            "comparison": self.comparison,
            "invariant_violations": self.invariant_violations,
            "series_files": self.series_files,
            "provenance": self.provenance,
        }


def scenario_from_config(config, base_dir=None):
    """Resolve and validate a scenario config mapping.

    Parameters
    ----------
    config : dict
    base_dir : str, optional
        Directory that relative file references are resolved against

    Returns
    -------
    scenario : Scenario

    Raises
    ------
    KeyError
        For an unknown top-level key
    ScenarioError
        Listing every problem found
    """

    for key in config:
        if key not in SCENARIO_KEYS:
            raise KeyError(f"Invalid scenario key: {key}")

    problems = []
    name = config.get("name", "scenario")
    transport = config.get("transport", "emulated")
    if transport not in TRANSPORTS:
        problems.append(f"Unrecognised transport: {transport}")
    seed = config.get("seed")
    if seed is None and transport == "emulated":
        problems.append("Emulated runs need a seed")
    elif seed is not None and (not isinstance(seed, int) or seed < 0):
        problems.append(f"Seed must be a non-negative integer: {seed}")
    duration_s = config.get("duration_s")
    if duration_s is None or not duration_s > 0:
        problems.append(f"duration_s must be positive: {duration_s}")
        duration_s = 0.0

    resolve = fileio.table_resolver(base_dir)
    scenario_links = {}
    if transport == "emulated":
        if not config.get("links"):
            problems.append("Scenario defines no links")
        for link_name, spec in sorted((config.get("links") or {}).items()):
            try:
                scenario_links[link_name] = links.load_duplex_link(link_name, spec or {}, resolve)
            except (KeyError, ValueError, FileNotFoundError) as e:
                problems.append(f"Link {link_name}: {e}")
    loopback = {str(k): float(v or 0.0) for k, v in (config.get("loopback") or {}).items()}
    if transport == "loopback" and not loopback:
        loopback = {link_name: 0.0 for link_name in sorted(config.get("links") or {})}
        if not loopback:
            problems.append("Loopback transport needs at least one path")
    known_links = scenario_links if transport == "emulated" else loopback

    policy = None
    try:
        policy = duplication.policy_from_config(config.get("policy", "full_duplication"))
        for link_name in duplication.policy_links(policy):
            if link_name not in known_links:
                problems.append(f"Policy references unknown link: {link_name}")
    except (TypeError, ValueError) as e:
        problems.append(f"Policy: {e}")

    probe = None
    if config.get("probe") is not None:
        try:
            probe = measurement.ProbeConfig(**{"duration_s": duration_s, **config["probe"]})
        except (TypeError, ValueError) as e:
            problems.append(f"Probe: {e}")

    loads = []
    if config.get("load") is not None:
        load_spec = dict(config["load"])
        directions = load_spec.pop("directions", ["DL", "UL"])
        for direction in directions:
            try:
                loads.append(measurement.LoadConfig(**{"duration_s": duration_s, **load_spec, "direction": direction}))
            except (TypeError, ValueError) as e:
                problems.append(f"Load {direction}: {e}")
    if probe is None and not loads:
        problems.append("Scenario has neither a probe nor a load workload")

    requirements = None
    if config.get("requirements") is not None:
        try:
            requirements = feasibility.load_requirements(config["requirements"], base_dir)
        except (KeyError, ValueError, FileNotFoundError) as e:
            problems.append(f"Requirements: {e}")

    if problems:
        raise ScenarioError(problems)

    return Scenario(
        name=name,
        seed=seed,
        duration_s=float(duration_s),
        links=scenario_links,
        policy=policy,
        probe=probe,
        loads=loads,
        output_dir=config.get("output_dir") or name,
        transport=transport,
        requirements=requirements,
        technology=config.get("technology") or name,
        compare_single=bool(config.get("compare_single", False)),
        loopback=loopback,
        confidence=dict(config.get("confidence") or {}),
        config=config,
    )


def load_scenario(config_file, overrides=None, profiles=None, policy=None, seed=None, duration_s=None):
    """Read a scenario file and apply command line overrides.

    Parameters
    ----------
    config_file : str
    overrides : dict, optional
        Dotted key to value
    profiles : dict, optional
        Link name to a YAML profile file replacing that link
    policy : str, optional
        Policy kind
    seed : int, optional
    duration_s : float, optional

    Returns
    -------
    scenario : Scenario
    """

    config = fileio.read_config(config_file)
    base_dir = os.path.dirname(os.path.abspath(config_file))
    config = general_utils.apply_overrides(config, overrides)
    for link_name, profile_file in (profiles or {}).items():
        config.setdefault("links", {})[link_name] = fileio.read_config(profile_file)
    if policy is not None:
        current = config.get("policy")
        if isinstance(current, str):
            current = {"kind": current}
        if not (isinstance(current, dict) and current.get("kind") == policy):
            config["policy"] = {"kind": policy}
    if seed is not None:
        config["seed"] = seed
    if duration_s is not None:
        config["duration_s"] = duration_s
    scenario = scenario_from_config(config, base_dir)
    logging.info(f"Loaded scenario {scenario.name} from {config_file}")

    return scenario


def make_transport(scenario):
    if scenario.transport == "loopback":
        return tunnel.LoopbackTransport(scenario.loopback, scenario.policy).start()
    return emulator.EmulatedTransport(scenario.links, scenario.policy, scenario.seed)


def _close(transport):
    if hasattr(transport, "close"):
        transport.close()


def _labels(scenario, link_names=None, policy=None):
    return {
        "scenario": scenario.name,
        "links": sorted(link_names or scenario.link_names),
        "policy": (policy or scenario.policy).kind,
        "seed": scenario.seed,
        "transport": scenario.transport,
    }


def _measure(scenario, transport, series, shares):
    """Run the configured procedures, filling series and shares in place."""

    if scenario.probe is not None:
        logging.info(f"Probing {scenario.probe.n_probes} times")
        series["rtt"] = measurement.run_latency_probe(transport, scenario.probe, _labels(scenario))
        if scenario.transport == "emulated":
            log = transport.last_log
            shares["uplink"] = log.uplink_shares.to_dict()
            shares["downlink"] = log.downlink_shares.to_dict()
        else:
            shares["uplink"] = transport.server.shares.to_dict()
            shares["downlink"] = transport.shares.to_dict()
    per_link_load = {}
    for load in scenario.loads:
        logging.info(f"Running {load.direction} load at {load.target_mbps} Mbps")
        per_link = measurement.run_load_per_link(transport, load, _labels(scenario))
        key = load.direction.lower()
        series[key] = measurement.combine_load_series(per_link, load, _labels(scenario))
        per_link_load[key] = per_link

    return per_link_load


def _compare_single(scenario, series, per_link_load):
    """Run every link alone on the same seed and compare with the multi-link series."""

    comparison = {}
    single = duplication.FullDuplication()
    for link_name in sorted(scenario.links):
        if scenario.probe is not None:
            transport = emulator.EmulatedTransport({link_name: scenario.links[link_name]}, single, scenario.seed)
            series[f"rtt_{link_name}"] = measurement.run_latency_probe(
                transport, scenario.probe, _labels(scenario, [link_name], single)
            )
        for key, per_link in per_link_load.items():
            series[f"{key}_{link_name}"] = per_link[link_name]

    for key in ["rtt"] + sorted(per_link_load):
        if key not in series:
            continue
        multi = kpi.summarize(series[key])
        singles = {name: kpi.summarize(series[f"{key}_{name}"]) for name in sorted(scenario.links)}
        comparison[key] = {
            "mc": multi.to_dict(),
            "sc": {name: s.to_dict() for name, s in singles.items()},
            "mc_dominates": _dominates(
                multi, list(singles.values()), scenario.confidence.get("alpha", confidence.DEFAULT_ALPHA)
            ),
        }

    return comparison


def _tail(summary, p):
    value = summary.tails.get(p)
    return math.inf if value is None else value


def _dominates(multi, singles, alpha=confidence.DEFAULT_ALPHA):
    """Multi-connectivity summary at least as good as every single link.

    Outage probabilities are compared within the DKW half-width of the
    multi-connectivity sample. Reply copies leave the server when the first
    request copy arrives, so a downlink outage can catch an early reply that
    a single-link run would have sent after the outage ended.
    """

    slack = confidence.dkw_epsilon(multi.n, alpha) if multi.n else 0.0
    if multi.outage_probability > min(s.outage_probability for s in singles) + slack:
        return False
    if multi.median is None:
        return True
    medians = [s.median for s in singles if s.median is not None]
    if multi.metric == "rtt_ms":
        if medians and multi.median > min(medians) + 1.0:
            return False
        return multi.tails.get(0.99) is None or _tail(multi, 0.99) <= min(_tail(s, 0.99) for s in singles)
    return not medians or multi.median >= max(medians)


def _availability_rows(scenario, series):
    rows = []
    if not scenario.requirements:
        return rows
    for use_case, requirement in scenario.requirements.items():
        measured = kpi.availability_against(
            requirement, latency=series.get("rtt"), downlink=series.get("dl"), uplink=series.get("ul")
        )
        for kpi_name, value in measured.items():
            rows.append({"technology": scenario.technology, "use_case": use_case, "kpi": kpi_name, "measured": value})
    return rows


def verify_probe_table(probes, outage_threshold_ms):
    """Check first-arrival selection against the per-copy record.

    Parameters
    ----------
    probes : pandas.DataFrame
        Columns send_ns, reply_ns and copy_<link>
    outage_threshold_ms : float

    Returns
    -------
    violations : list of str
    """

    violations = []
    if len(probes) == 0:
        return violations
    copy_columns = [c for c in probes.columns if c.startswith("copy_")]
    send = probes["send_ns"].to_numpy(dtype=float)
    reply = probes["reply_ns"].to_numpy(dtype=float)
    copies = probes[copy_columns].to_numpy(dtype=float)
    any_copy = ~np.all(np.isnan(copies), axis=1)
    earliest = np.full(len(probes), np.nan)
    earliest[any_copy] = np.nanmin(copies[any_copy], axis=1)

    mismatched = np.flatnonzero(~((reply == earliest) | (np.isnan(reply) & np.isnan(earliest))))
    if len(mismatched):
        violations.append(f"Accepted RTT differs from the earliest copy for {len(mismatched)} probes")

    limit_ns = outage_threshold_ms * 1e6
    multi_outage = np.isnan(reply) | (reply - send > limit_ns)
    copy_outage = np.isnan(copies) | (copies - send[:, None] > limit_ns)
    if not np.array_equal(multi_outage, np.all(copy_outage, axis=1)):
        violations.append("Outage set differs from the intersection of per-link outage sets")

    return violations


def probe_table_from_events(events):
    """Rebuild the per-probe table from a probe event log."""

    requests = events[(events["event"] == "send") & (events["kind"] == 0)]
    send_ns = requests.groupby("seq")["time_ns"].min()
    replies = events[(events["direction"] == "DL") & (events["event"].isin(["deliver", "duplicate"]))]
    accepted = replies[replies["event"] == "deliver"].groupby("seq")["time_ns"].min()
    probes = pd.DataFrame({"seq": send_ns.index, "send_ns": send_ns.to_numpy()})
    probes["reply_ns"] = probes["seq"].map(accepted)
    for link_name, group in replies.groupby("link"):
        probes[f"copy_{link_name}"] = probes["seq"].map(group.groupby("seq")["time_ns"].min())

    return probes


def verify_series(series):
    """Outage flags consistent with values and thresholds."""

    violations = []
    for key, s in sorted(series.items()):
        if s.metric == "rtt_ms":
            threshold = s.metadata.get("outage_threshold_ms", 2000.0)
            expected = np.isnan(s.values) | (s.values > threshold)
        else:
            threshold = s.metadata.get("outage_threshold_kbps", 500.0) / 1000.0
            expected = s.values < threshold
        if not np.array_equal(expected, s.outage):
            violations.append(f"Series {key}: outage flags inconsistent with threshold {threshold}")
    return violations


def verify_invariants(series, log=None):
    """All post-run checks; every violation is logged as an error.

    Parameters
    ----------
    series : dict
        Name to SampleSeries
    log : mcdup.emulator.EventLog, optional

    Returns
    -------
    violations : list of str
    """

    violations = verify_series(series)
    if log is not None:
        violations += verify_probe_table(log.probes, log.outage_threshold_ms)
        accepted = int(np.sum(~np.isnan(log.probes["reply_ns"].to_numpy(dtype=float))))
        if log.downlink_shares.total != accepted:
            violations.append("Downlink link shares do not add up to the accepted replies")
    for violation in violations:
        logging.error(f"Invariant violated: {violation}")

    return violations


def _confidence(scenario, series):
    alpha = scenario.confidence.get("alpha", confidence.DEFAULT_ALPHA)
    use_packets = scenario.confidence.get("packet_count", False)
    table = {}
    for key, s in sorted(series.items()):
        n = s.metadata.get("packets") if use_packets and s.metric == "throughput_mbps" else None
        table[key] = confidence.confidence_table(s, alpha, n_override=n)
    return table


def build_report(scenario, series, shares=None, comparison=None, violations=None, provenance=None):
    """Assemble a RunReport from measured series."""

    report = RunReport(scenario.name, shares=shares or {}, comparison=comparison)
    report.summaries = {key: kpi.summarize(s).to_dict() for key, s in sorted(series.items()) if len(s)}
    report.confidence = _confidence(scenario, {k: s for k, s in series.items() if len(s)})
    report.availability = _availability_rows(scenario, series)
    if report.availability and {row["kpi"] for row in report.availability} == set(feasibility.KPIS):
        matrix = feasibility.feasibility_matrix(pd.DataFrame(report.availability), scenario.requirements)
        report.feasibility = feasibility.matrix_to_dict(matrix)
    report.invariant_violations = list(violations or [])
    report.provenance = provenance or {}

    return report


def _provenance(scenario, reproducible, salvaged=False):
    return {
        "config_hash": general_utils.config_hash(scenario.config),
        "seed": scenario.seed,
        "version": __version__,
        "reproducible": bool(reproducible),
        "salvaged": salvaged,
        "transport": scenario.transport,
    }


def summary_frame(report, outage_threshold_ms=2000.0):
    """One row per series: outage, statistics and tail quantiles."""

    rows = []
    for key, summary in sorted(report.summaries.items()):
        row = {k: summary[k] for k in ["metric", "n", "outage_probability", "min", "median", "mean", "max", "std"]}
        row = {"series": key, **row}
        for p, value in summary["tails"].items():
            if value is None and summary["metric"] == "rtt_ms" and summary["median"] is not None:
                value = f">{outage_threshold_ms:g}"
            row[f"q{p}"] = value
        rows.append(row)
    return pd.DataFrame(rows)


def accounting_frame(report):
    rows = []
    for direction, shares in sorted(report.shares.items()):
        for link_name, count in shares["counts"].items():
            rows.append(
                {"direction": direction, "link": link_name, "count": count, "fraction": shares["fractions"][link_name]}
            )
    return pd.DataFrame(rows, columns=["direction", "link", "count", "fraction"])


def confidence_frame(report):
    rows = []
    for key, table in sorted(report.confidence.items()):
        dkw = table["dkw"]
        rows.append({"series": key, "kind": "dkw", "n": dkw["n"], "alpha": dkw["alpha"], "epsilon": dkw["epsilon"]})
        for point, bound in table["wilson"].items():
            row = {"series": key, "kind": "wilson", "point": point}
            if bound is not None:
                row.update({k: bound[k] for k in ["n", "alpha", "at", "k", "lower", "upper"]})
            rows.append(row)
    columns = ["series", "kind", "point", "n", "alpha", "at", "k", "lower", "upper", "epsilon"]
    return pd.DataFrame(rows, columns=columns)


def write_run(report, series, outdir, log=None, event_log=False):
    """Persist series, tables and report.json of a run."""

    os.makedirs(outdir, exist_ok=True)
    for key, s in sorted(series.items()):
        fileio.write_series(s, outdir, key)
        report.series_files[key] = f"{key}.csv"
    threshold = series["rtt"].metadata["outage_threshold_ms"] if "rtt" in series else 2000.0
    fileio.write_table(summary_frame(report, threshold), os.path.join(outdir, "summary.csv"))
    fileio.write_table(accounting_frame(report), os.path.join(outdir, "accounting.csv"))
    fileio.write_table(confidence_frame(report), os.path.join(outdir, "confidence.csv"))
    if report.availability:
        fileio.write_table(pd.DataFrame(report.availability), os.path.join(outdir, "feasibility.csv"))
    if log is not None and len(log.probes):
        fileio.write_table(log.probes, os.path.join(outdir, "probes.csv"))
        if event_log:
            fileio.write_table(log.events, os.path.join(outdir, "events.csv"))
    fileio.write_json(report.to_dict(), os.path.join(outdir, "report.json"))
    fileio.write_provenance(outdir)
    logging.info(f"Run written to {outdir}")


def run_experiment(scenario, write=True, outdir=None, event_log=False):
    """Run a scenario and assemble its report.

    Parameters
    ----------
    scenario : Scenario
    write : bool, default True
        Persist series and report
    outdir : str, optional
        Defaults to the scenario output_dir under $MCDUP_OUTPUT_ROOT
    event_log : bool, default False
        Also write the probe event log (emulated runs)

    Returns
    -------
    report : RunReport

    Raises
    ------
    mcdup.measurement.TransportError
        After writing whatever was measured, flagged as salvaged and not reproducible
    """

    outdir = outdir or fileio.output_dir(scenario.output_dir)
    series = {}
    shares = {}
    transport = make_transport(scenario)
    try:
        per_link_load = _measure(scenario, transport, series, shares)
    except measurement.TransportError as e:
        logging.warning(f"Transport failed, salvaging partial results: {e}")
        if e.partial is not None and scenario.probe is not None:
            series["rtt"] = measurement.latency_series(e.partial, scenario.probe, _labels(scenario))
        if write:
            report = build_report(scenario, series, shares, provenance=_provenance(scenario, False, salvaged=True))
            write_run(report, series, outdir)
        raise
    finally:
        _close(transport)

    comparison = None
    if scenario.compare_single:
        if scenario.transport == "emulated" and len(scenario.links) > 1:
            comparison = _compare_single(scenario, series, per_link_load)
        else:
            logging.warning("compare_single needs an emulated scenario with several links")

    log = transport.last_log if scenario.transport == "emulated" and scenario.probe is not None else None
    violations = verify_invariants(series, log)
    report = build_report(
        scenario, series, shares, comparison, violations, _provenance(scenario, transport.reproducible)
    )
    if write:
        write_run(report, series, outdir, log, event_log)

    return report


def run_sweep(scenario, seeds, dask_config=None, event_log=False):
    """Run one scenario for several seeds as dask delayed tasks.

    Each seed writes to <output_dir>/seed<seed>.

    Returns
    -------
    reports : list of RunReport
    """

    outdir = fileio.output_dir(scenario.output_dir)
    tasks = []
    for seed in seeds:
        seeded = replace(scenario, seed=seed, config={**scenario.config, "seed": seed})
        tasks.append(
            dask.delayed(run_experiment)(seeded, outdir=os.path.join(outdir, f"seed{seed}"), event_log=event_log)
        )
    if dask_config:
        client = dask_setup.launch_client(dask_config)
        try:
            reports = dask.compute(*tasks)
        finally:
            client.close()
            client.cluster.close()
    else:
        reports = dask.compute(*tasks, scheduler="threads")
    logging.info(f"Sweep over {len(seeds)} seeds finished")

    return list(reports)


def build_feasibility_report(inputs, requirements, near_miss_pp=feasibility.NEAR_MISS_PP, outdir=None):
    """Feasibility matrix from an availability table or from run reports.

    Parameters
    ----------
    inputs : pandas.DataFrame or list
        Long availability table (table mode) or RunReport objects / report
        dicts with availability rows (simulation mode)
    requirements : dict
        Use case name to UseCaseRequirement
    near_miss_pp : float, default 1
    outdir : str, optional
        Write matrix.csv and matrix.json here

    Returns
    -------
    matrix : xarray.Dataset

    Raises
    ------
    ValueError
        If the grid is incomplete
    """

    if isinstance(inputs, pd.DataFrame):
        table = inputs
    else:
        rows = []
        for report in inputs:
            availability = report.availability if isinstance(report, RunReport) else report["availability"]
            rows.extend(availability)
        table = pd.DataFrame(rows, columns=["technology", "use_case", "kpi", "measured"])
    matrix = feasibility.feasibility_matrix(table, requirements, near_miss_pp)
    if outdir:
        os.makedirs(outdir, exist_ok=True)
        fileio.write_table(feasibility.matrix_to_frame(matrix), os.path.join(outdir, "matrix.csv"))
        fileio.write_json(feasibility.matrix_to_dict(matrix), os.path.join(outdir, "matrix.json"))
        logging.info(f"Feasibility matrix written to {outdir}")

    return matrix


def analyze_run(rundir, requirements=None, alpha=confidence.DEFAULT_ALPHA):
    """Recompute summaries, confidence and availability from persisted series.

    Returns
    -------
    report : dict
    series : dict
    """

    report = fileio.read_json(os.path.join(rundir, "report.json"))
    series = {key: fileio.read_series(os.path.join(rundir, name)) for key, name in report["series_files"].items()}
    analysis = {
        "summaries": {key: kpi.summarize(s).to_dict() for key, s in sorted(series.items())},
        "confidence": {key: confidence.confidence_table(s, alpha) for key, s in sorted(series.items())},
    }
    if requirements:
        rows = []
        for use_case, requirement in requirements.items():
            measured = kpi.availability_against(
                requirement, latency=series.get("rtt"), downlink=series.get("dl"), uplink=series.get("ul")
            )
            rows.extend({"use_case": use_case, "kpi": k, "measured": v} for k, v in measured.items())
        analysis["availability"] = rows

    return analysis, series


def _parse_path_specs(specs, client):
    """Paths from NAME=HOST:PORT arguments."""

    paths = []
    for name, address in sorted((specs or {}).items()):
        host, port = str(address).rsplit(":", 1)
        if client:
            paths.append(tunnel.PathConfig(name, "0.0.0.0", 0, host, int(port)))
        else:
            paths.append(tunnel.PathConfig(name, host, int(port)))
    return paths


def _parse_command_line(argv=None):
    """Parse the command line for input agruments"""

    parser = argparse.ArgumentParser(
        prog="mcdup", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter
    )
    parser.add_argument("--quiet", action="store_true", default=False, help="Only log warnings and errors")
    subparsers = parser.add_subparsers(dest="command", required=True)

    for command in ["simulate", "probe", "load"]:
        sub = subparsers.add_parser(command, help=f"{command} a scenario")
        sub.add_argument("config_file", type=str, help="Scenario file (YAML or JSON)")
        sub.add_argument("--seed", type=int, default=None, help="Override the scenario seed")
        sub.add_argument("--duration", type=float, default=None, help="Override duration_s")
        sub.add_argument(
            "--policy", type=str, choices=sorted(duplication.POLICIES), default=None, help="Override the policy kind"
        )
        sub.add_argument(
            "--profile", type=str, nargs="*", action=general_utils.store_dict, default={},
            help="Replace link profiles: NAME=FILE",
        )
        sub.add_argument(
            "--set", type=str, nargs="*", action=general_utils.store_dict, default={}, dest="overrides",
            help="Override config values: dotted.key=value",
        )
        sub.add_argument("--output_dir", type=str, default=None, help="Output directory")
        if command == "simulate":
            sub.add_argument("--seeds", type=int, nargs="*", default=None, help="Run a multi-seed sweep")
            sub.add_argument("--dask_config", type=str, default=None, help="YAML file for a dask cluster")
            sub.add_argument(
                "--event-log", dest="event_log", action="store_true", default=False, help="Write events.csv"
            )

    analyze = subparsers.add_parser("analyze", help="recompute a report from persisted series")
    analyze.add_argument("rundir", type=str, help="Run output directory")
    analyze.add_argument("--requirements", type=str, default=None, help="'builtin' or requirements file")
    analyze.add_argument("--alpha", type=float, default=confidence.DEFAULT_ALPHA, help="Confidence level alpha")
    analyze.add_argument("--outfile", type=str, default=None, help="Write the analysis as JSON")
    analyze.add_argument("--plot", type=str, default=None, help="Write CDF/CCDF plots to this PNG file")
    analyze.add_argument(
        "--event-log", dest="event_log", type=str, default=None, help="Verify an events.csv or probes.csv file"
    )
    analyze.add_argument("--outage_threshold_ms", type=float, default=2000.0, help="For --event-log")

    matrix = subparsers.add_parser("matrix", help="classify use cases against requirements")
    matrix.add_argument("--requirements", type=str, default="builtin", help="'builtin' or requirements file")
    matrix.add_argument(
        "--availability", type=str, default=None, help="'builtin' or availability CSV (table mode)"
    )
    matrix.add_argument("--reports", type=str, nargs="*", default=None, help="report.json files (simulation mode)")
    matrix.add_argument("--near_miss_pp", type=float, default=feasibility.NEAR_MISS_PP, help="Near-miss margin")
    matrix.add_argument("--output_dir", type=str, default="matrix", help="Output directory")

    tunnel_parser = subparsers.add_parser("tunnel", help="live tunnel endpoint")
    tunnel_parser.add_argument("mode", type=str, choices=("client", "server"), help="Endpoint role")
    tunnel_parser.add_argument(
        "--path", type=str, nargs="+", action=general_utils.store_dict, required=True,
        help="Paths: NAME=HOST:PORT (listen address for the server, server address for the client)",
    )
    tunnel_parser.add_argument(
        "--delay", type=str, nargs="*", action=general_utils.store_dict, default={},
        help="Client-side extra delay: NAME=MS",
    )
    tunnel_parser.add_argument(
        "--policy", type=str, choices=sorted(duplication.POLICIES), default="full_duplication", help="Client policy"
    )
    tunnel_parser.add_argument(
        "--policy_option", type=str, nargs="*", action=general_utils.store_dict, default={},
        help="Policy parameters: KEY=VALUE",
    )
    tunnel_parser.add_argument("--duration", type=float, default=60.0, help="Client probing duration (s)")
    tunnel_parser.add_argument("--interval_ms", type=float, default=100.0, help="Probe interval")
    tunnel_parser.add_argument("--output_dir", type=str, default="tunnel", help="Client output directory")

    plot_data = subparsers.add_parser("plot-data", help="write CDF/CCDF curve data of a series")
    plot_data.add_argument("series_file", type=str, help="Series CSV (with JSON sidecar)")
    plot_data.add_argument("outfile", type=str, help="Output curve CSV")
    plot_data.add_argument("--alpha", type=float, default=None, help="Add DKW band columns")
    kind = plot_data.add_mutually_exclusive_group()
    kind.add_argument("--cdf", dest="complementary", action="store_false", default=None, help="CDF curve")
    kind.add_argument("--ccdf", dest="complementary", action="store_true", help="CCDF curve")

    return parser.parse_args(argv)


def _run_scenario_command(args):
    scenario = load_scenario(
        args.config_file,
        overrides=args.overrides,
        profiles=args.profile,
        policy=args.policy,
        seed=args.seed,
        duration_s=args.duration,
    )
    if args.output_dir:
        scenario.output_dir = args.output_dir
    if args.command == "probe":
        scenario.loads = []
        scenario.compare_single = False
    elif args.command == "load":
        scenario.probe = None
        scenario.compare_single = False
    if scenario.probe is None and not scenario.loads:
        raise ScenarioError([f"Scenario has no workload for the {args.command} command"])

    if getattr(args, "seeds", None):
        reports = run_sweep(scenario, args.seeds, args.dask_config, args.event_log)
    else:
        reports = [run_experiment(scenario, event_log=getattr(args, "event_log", False))]

    return 1 if any(report.invariant_violations for report in reports) else 0


def _run_analyze(args):
    requirements = feasibility.load_requirements(args.requirements) if args.requirements else None
    analysis, series = analyze_run(args.rundir, requirements, args.alpha)
    violations = verify_series(series)
    if args.event_log:
        table = pd.read_csv(args.event_log)
        probes = table if "reply_ns" in table.columns else probe_table_from_events(table)
        violations += verify_probe_table(probes, args.outage_threshold_ms)
    for violation in violations:
        logging.error(f"Invariant violated: {violation}")
    analysis["invariant_violations"] = violations
    if args.outfile:
        fileio.write_json(analysis, args.outfile)
        logging.info(f"Analysis written to {args.outfile}")
    if args.plot:
        rtt = {k: kpi.distribution_curve(s) for k, s in series.items() if s.metric == "rtt_ms" and len(s.valid_values)}
        rate = {
            k: kpi.distribution_curve(s) for k, s in series.items() if s.metric == "throughput_mbps" and len(s.values)
        }
        stem, ext = os.path.splitext(args.plot)
        if rtt:
            kpi.plot_distributions(rtt, f"{stem}_rtt{ext}", True, "RTT (ms)")
        if rate:
            kpi.plot_distributions(rate, f"{stem}_throughput{ext}", False, "Throughput (Mbps)")

    return 1 if violations else 0


def _run_matrix(args):
    requirements = feasibility.load_requirements(args.requirements)
    if args.reports:
        inputs = [fileio.read_json(infile) for infile in args.reports]
    else:
        inputs = feasibility.load_availability_table(args.availability or "builtin")
    matrix = build_feasibility_report(
        inputs, requirements, args.near_miss_pp, outdir=fileio.output_dir(args.output_dir)
    )
    counts = matrix["ready_count"].to_pandas()
    print(counts.to_string())

    return 0


def _run_tunnel(args):
    if args.mode == "server":
        server = tunnel.TunnelServer(_parse_path_specs(args.path, client=False))
        server.serve_forever()
        return 0

    paths = [
        replace(path, delay_ms=float(args.delay.get(path.name, 0.0)))
        for path in _parse_path_specs(args.path, client=True)
    ]
    policy = duplication.policy_from_config({"kind": args.policy, **args.policy_option})
    config = measurement.ProbeConfig(duration_s=args.duration, interval_ms=args.interval_ms)
    with tunnel.tunnel_endpoints("client", paths, policy) as client:
        series = measurement.run_latency_probe(
            client, config, {"links": sorted(p.name for p in paths), "policy": policy.kind, "transport": "tunnel"}
        )
        shares = client.shares.to_dict()
    outdir = fileio.output_dir(args.output_dir)
    fileio.write_series(series, outdir, "rtt")
    summary = kpi.summarize(series).to_dict()
    fileio.write_json(
        {"summaries": {"rtt": summary}, "shares": {"downlink": shares}, "provenance": {"reproducible": False}},
        os.path.join(outdir, "report.json"),
    )
    fileio.write_provenance(outdir)
    logging.info(f"Median RTT {summary['median']} ms, outage {summary['outage_probability']:.3%}")

    return 0


def _run_plot_data(args):
    series = fileio.read_series(args.series_file)
    curve = kpi.distribution_curve(series, args.complementary, args.alpha)
    fileio.write_table(curve, args.outfile)
    logging.info(f"Curve written to {args.outfile}")

    return 0


def _main(argv=None):
    """Run the command line program."""

    args = _parse_command_line(argv)
    if args.quiet:
        logging.getLogger().setLevel(logging.WARNING)

    commands = {
        "simulate": _run_scenario_command,
        "probe": _run_scenario_command,
        "load": _run_scenario_command,
        "analyze": _run_analyze,
        "matrix": _run_matrix,
        "tunnel": _run_tunnel,
        "plot-data": _run_plot_data,
    }
    try:
        status = commands[args.command](args)
    except ScenarioError as e:
        logging.error(str(e))
        status = 2

    return status


if __name__ == "__main__":
    sys.exit(_main())
