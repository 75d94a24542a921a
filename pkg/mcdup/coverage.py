"""Functions and command line program for RSRP coverage statistics."""

import argparse
import logging
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy import stats

from . import fileio
from . import links


logging.basicConfig(level=logging.INFO)

CRITICAL_DBM = -100.0


@dataclass
class CoverageStats:
    """Coverage of one operator's RSRP trace.

    Parameters
    ----------
    epochs : int
        Number of measurement epochs
    technologies : dict
        Technology to a dict with availability_pct, unavailability_pct,
        mean_dbm, std_db, median_dbm, top10_dbm and below_critical_pct
    out_of_coverage_pct : float
        Epochs with no technology visible
    critical_dbm : float
    """

    epochs: int
    technologies: dict = field(default_factory=dict)
    out_of_coverage_pct: float = 0.0
    critical_dbm: float = CRITICAL_DBM

    def to_frame(self, label=None):
        rows = []
        for tech, row in sorted(self.technologies.items()):
            rows.append({"operator": label, "tech": tech, **row})
        rows.append(
            {
                "operator": label,
                "tech": "out_of_coverage",
                "availability_pct": self.out_of_coverage_pct,
            }
        )
        return pd.DataFrame(rows)


def coverage_stats(trace, critical_dbm=CRITICAL_DBM):
    """Table-style coverage statistics of an RSRP trace.

    Parameters
    ----------
    trace : mcdup.links.RsrpTrace
    critical_dbm : float, default -100
        Signal level below which a visible technology is unusable

    Returns
    -------
    stats : CoverageStats
        Availability is the fraction of epochs in which a technology is
        visible; RSRP statistics and the below-critical fraction are over
        that technology's visible records.

    Raises
    ------
    ValueError
        If the trace is empty
    """

    if len(trace) == 0:
        raise ValueError("Cannot compute coverage of an empty RSRP trace")

    records = trace.records
    n_epochs = len(trace.epoch_times)
    visible = records[(records["tech"] != "none") & records["rsrp_dbm"].notna()]
    result = CoverageStats(n_epochs, critical_dbm=critical_dbm)
    for tech in sorted(set(records["tech"]) - {"none"}):
        rsrp = visible.loc[visible["tech"] == tech, "rsrp_dbm"].to_numpy(dtype=float)
        epochs_seen = visible.loc[visible["tech"] == tech, "time_s"].nunique()
        availability = 100.0 * epochs_seen / n_epochs
        row = {"availability_pct": availability, "unavailability_pct": 100.0 - availability}
        if len(rsrp):
            row.update(
                {
                    "mean_dbm": float(np.mean(rsrp)),
                    "std_db": float(np.std(rsrp)),
                    "median_dbm": float(np.median(rsrp)),
                    "top10_dbm": float(np.percentile(rsrp, 90)),
                    "below_critical_pct": 100.0 * float(np.mean(rsrp < critical_dbm)),
                }
            )
        result.technologies[tech] = row

    covered = np.isfinite(trace.epoch_best_rsrp)
    result.out_of_coverage_pct = 100.0 * float(np.mean(~covered))

    return result


def _rsrp_values(rng, count, mean_dbm, std_db, n_below, critical_dbm):
    if std_db == 0:
        return np.full(count, float(mean_dbm))
    a = (critical_dbm - mean_dbm) / std_db
    below = stats.truncnorm.rvs(-np.inf, a, loc=mean_dbm, scale=std_db, size=n_below, random_state=rng)
    above = stats.truncnorm.rvs(a, np.inf, loc=mean_dbm, scale=std_db, size=count - n_below, random_state=rng)
    values = np.concatenate([below, above])
    rng.shuffle(values)
    return values


def synthetic_trace(
    n_epochs, technologies, out_of_coverage=0.0, seed=0, critical_dbm=CRITICAL_DBM, epoch_s=1.0
):
    """Generate an RSRP trace with prescribed coverage fractions.

    Parameters
    ----------
    n_epochs : int
    technologies : dict
        Technology to a dict with availability (fraction of epochs), mean_dbm,
        std_db and optionally below_critical (fraction of visible records)
    out_of_coverage : float, default 0
        Fraction of epochs with no technology visible
    seed : int, default 0
    critical_dbm : float, default -100
    epoch_s : float, default 1

    Returns
    -------
    trace : mcdup.links.RsrpTrace
        Fractions are exact up to rounding to whole epochs

    Raises
    ------
    ValueError
        If the availabilities leave covered epochs without any technology
    """

    rng = np.random.default_rng(seed)
    n_dark = int(round(out_of_coverage * n_epochs))
    order = rng.permutation(n_epochs)
    dark = set(order[:n_dark].tolist())
    covered = order[n_dark:]

    visible = {}
    unclaimed = list(covered)
    by_availability = sorted(technologies.items(), key=lambda item: (-item[1]["availability"], item[0]))
    for tech, spec in by_availability:
        count = int(round(spec["availability"] * n_epochs))
        if count > len(covered):
            raise ValueError(f"{tech} availability exceeds the covered fraction")
        claimed = set(unclaimed[:count])
        rest = [e for e in rng.permutation(covered).tolist() if e not in claimed]
        chosen = list(claimed) + rest[: count - len(claimed)]
        visible[tech] = sorted(chosen)
        unclaimed = unclaimed[count:]
    if unclaimed:
        raise ValueError(f"{len(unclaimed)} covered epochs have no visible technology")

    rows = []
    for tech, epochs in visible.items():
        spec = technologies[tech]
        n_below = int(round(spec.get("below_critical", 0.0) * len(epochs)))
        values = _rsrp_values(rng, len(epochs), spec["mean_dbm"], spec["std_db"], n_below, critical_dbm)
        rows.extend(
            {"time_s": epoch * epoch_s, "rsrp_dbm": value, "tech": tech} for epoch, value in zip(epochs, values)
        )
    rows.extend({"time_s": epoch * epoch_s, "rsrp_dbm": np.nan, "tech": "none"} for epoch in sorted(dark))
    records = pd.DataFrame(rows).sort_values(["time_s", "tech"], kind="mergesort")

    return links.RsrpTrace(records)


def coverage_table(traces, critical_dbm=CRITICAL_DBM):
    """Coverage statistics of several operators as one long table.

    Parameters
    ----------
    traces : dict
        Operator label to RsrpTrace

    Returns
    -------
    table : pandas.DataFrame
    """

    frames = [coverage_stats(trace, critical_dbm).to_frame(label) for label, trace in traces.items()]
    return pd.concat(frames, ignore_index=True)


def _parse_command_line():
    """Parse the command line for input agruments"""

    parser = argparse.ArgumentParser(
        description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter
    )
    parser.add_argument("trace_files", type=str, nargs="+", help="RSRP trace CSV files")
    parser.add_argument("--labels", type=str, nargs="*", default=None, help="Operator labels (default file names)")
    parser.add_argument(
        "--critical_dbm", type=float, default=CRITICAL_DBM, help="Critical RSRP threshold [default=-100]"
    )
    parser.add_argument("--outfile", type=str, default=None, help="Output CSV file name")
    args = parser.parse_args()

    return args


def _main():
    """Run the command line program."""

    args = _parse_command_line()
    labels = args.labels or args.trace_files
    if len(labels) != len(args.trace_files):
        raise ValueError("Give one label per trace file")

    traces = {label: fileio.read_rsrp_trace(infile) for label, infile in zip(labels, args.trace_files)}
    table = coverage_table(traces, args.critical_dbm)
    print(table.to_string(index=False))
    if args.outfile:
        fileio.write_table(table, args.outfile)
        logging.info(f"Coverage table written to {args.outfile}")


if __name__ == "__main__":
    _main()
