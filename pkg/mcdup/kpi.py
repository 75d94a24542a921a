"""Empirical distributions and KPI summaries of sample series."""

import logging
import math
from dataclasses import dataclass, field

import matplotlib.pyplot as plt
import numpy as np
import pandas as pd

from . import confidence
from . import fileio


LATENCY_TAILS = (0.99, 0.999, 0.9999)
THROUGHPUT_TAILS = (0.10, 0.05, 0.01)
DIRECTIONS = ("upper", "lower")


@dataclass(frozen=True)
class EmpiricalDistribution:
    """Empirical CDF of a sample.

    F(x) = |{i : x_i <= x}| / n, a right-continuous step function.

    Parameters
    ----------
    values : numpy.ndarray
        Sorted sample values
    """

    values: np.ndarray

    @property
    def n(self):
        return len(self.values)

    def __call__(self, x):
        counts = np.searchsorted(self.values, x, side="right")
        return counts / self.n

    def ccdf(self, x):
        """Fraction of samples strictly above x."""

        return 1.0 - self(x)

    def count_at_or_below(self, x):
        return int(np.searchsorted(self.values, x, side="right"))


def _sample_values(series):
    if hasattr(series, "valid_values"):
        values = series.valid_values
    else:
        values = np.asarray(series, dtype=float)
    return values[~np.isnan(values)]


def ecdf(series):
    """Empirical CDF of a series.

    Parameters
    ----------
    series : SampleSeries or array-like
        Outage samples of a SampleSeries are excluded, as are NaN values

    Returns
    -------
    dist : EmpiricalDistribution

    Raises
    ------
    ValueError
        If no samples remain
    """

    values = _sample_values(series)
    if len(values) == 0:
        raise ValueError("Cannot build an empirical distribution from an empty series")

    return EmpiricalDistribution(np.sort(values))


def quantile(dist, p):
    """Lower empirical quantile: the smallest sample x with F(x) >= p.

    Parameters
    ----------
    dist : EmpiricalDistribution
    p : float
        Probability in (0, 1)

    Returns
    -------
    value : float
    """

    if not 0 < p < 1:
        raise ValueError(f"Quantile probability must be in (0, 1): {p}")
    idx = math.ceil(p * dist.n - 1e-9) - 1
    idx = min(max(idx, 0), dist.n - 1)

    return float(dist.values[idx])


@dataclass
class DistributionSummary:
    """Table-style statistics of one series.

    Statistics are None when every sample is an outage. Tail quantiles are
    None when they fall in the outage region.
    """

    metric: str
    n: int
    outage_probability: float
    min: float = None
    median: float = None
    mean: float = None
    max: float = None
    std: float = None
    tails: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "metric": self.metric,
            "n": self.n,
            "outage_probability": self.outage_probability,
            "min": self.min,
            "median": self.median,
            "mean": self.mean,
            "max": self.max,
            "std": self.std,
            "tails": {f"{p:g}": v for p, v in self.tails.items()},
        }


def _outage_flags(series, outage_threshold):
    if outage_threshold is None:
        return series.outage
    if series.metric == "rtt_ms":
        return np.isnan(series.values) | (series.values > outage_threshold)
    return series.values < outage_threshold


def summarize(series, outage_threshold=None, direction=None):
    """Summarise a series the way latency and throughput tables report it.

    Parameters
    ----------
    series : SampleSeries
    outage_threshold : float, optional
        Re-flag outages at this threshold (ms for RTT, Mbps for throughput);
        the series' own flags are used when omitted
    direction : {'upper', 'lower'}, optional
        'upper' reports CCDF tails (99/99.9/99.99 %), 'lower' reports CDF
        tails (10/5/1 %). Defaults to upper for RTT, lower for throughput.

    Returns
    -------
    summary : DistributionSummary
        Outage probability is over all samples. RTT statistics exclude
        outages and RTT tails treat outages as infinitely late. Throughput
        statistics and tails cover all bins.
    """

    if len(series) == 0:
        raise ValueError("Cannot summarise an empty series")
    if direction is None:
        direction = "upper" if series.metric == "rtt_ms" else "lower"
    if direction not in DIRECTIONS:
        raise ValueError(f"Unrecognised tail direction: {direction}")

    outage = _outage_flags(series, outage_threshold)
    summary = DistributionSummary(series.metric, len(series), float(outage.mean()))
    if outage.all():
        summary.tails = {p: None for p in (LATENCY_TAILS if direction == "upper" else THROUGHPUT_TAILS)}
        return summary

    if series.metric == "rtt_ms":
        stats_values = series.values[~outage]
        tail_values = np.where(outage, np.inf, series.values)
    else:
        stats_values = series.values
        tail_values = series.values

    stats_dist = ecdf(stats_values)
    summary.min = float(stats_dist.values[0])
    summary.median = quantile(stats_dist, 0.5)
    summary.mean = float(np.mean(stats_values))
    summary.max = float(stats_dist.values[-1])
    summary.std = float(np.std(stats_values))

    tail_dist = EmpiricalDistribution(np.sort(tail_values))
    points = LATENCY_TAILS if direction == "upper" else THROUGHPUT_TAILS
    for p in points:
        value = quantile(tail_dist, p)
        summary.tails[p] = value if math.isfinite(value) else None

    return summary


def availability_against(requirement, latency=None, downlink=None, uplink=None):
    """Percentage of samples meeting a use case's requirement per KPI.

    Parameters
    ----------
    requirement : UseCaseRequirement
    latency : SampleSeries, optional
        RTT series; outage probes count as failures
    downlink, uplink : SampleSeries, optional
        Throughput series

    Returns
    -------
    availability : dict
        KPI name ('latency', 'DL', 'UL') to availability in percent
    """

    availability = {}
    if latency is not None:
        if len(latency) == 0:
            raise ValueError("Empty latency series")
        ok = ~latency.outage & (latency.values <= requirement.max_latency_ms)
        availability["latency"] = 100.0 * float(ok.mean())
    for kpi, series, required in (
        ("DL", downlink, requirement.min_dl_mbps),
        ("UL", uplink, requirement.min_ul_mbps),
    ):
        if series is None:
            continue
        if len(series) == 0:
            raise ValueError(f"Empty {kpi} series")
        availability[kpi] = 100.0 * float((series.values >= required).mean())

    return availability


def distribution_curve(series, complementary=None, alpha=None):
    """CDF or CCDF curve of a series at each distinct sample value.

    Parameters
    ----------
    series : SampleSeries or array-like
    complementary : bool, optional
        CCDF (latency convention) or CDF (throughput convention); defaults
        to CCDF for RTT series
    alpha : float, optional
        Add DKW band columns at this significance level

    Returns
    -------
    curve : pandas.DataFrame
        Columns value, probability and optionally lower, upper
    """

    if complementary is None:
        complementary = getattr(series, "metric", None) == "rtt_ms"
    dist = ecdf(series)
    values = np.unique(dist.values)
    cdf = dist(values)
    curve = pd.DataFrame({"value": values, "probability": 1.0 - cdf if complementary else cdf})
    if alpha is not None:
        eps = confidence.dkw_epsilon(dist.n, alpha)
        curve["lower"] = np.clip(curve["probability"] - eps, 0.0, 1.0)
        curve["upper"] = np.clip(curve["probability"] + eps, 0.0, 1.0)

    return curve


def plot_distributions(curves, outfile, complementary=True, xlabel=None, infile_logs=None):
    """Plot CDF or CCDF curves of several series on one axis.

    Parameters
    ----------
    curves : dict
        Label to curve DataFrame from distribution_curve
    outfile : str
        Output PNG path
    complementary : bool, default True
        Log-scaled probability axis for CCDF tails
    xlabel : str, optional
    infile_logs : dict, optional
        File names (keys) and history (values) of input files for the image metadata
    """

    fig, ax = plt.subplots(figsize=[8, 5])
    for label, curve in curves.items():
        ax.step(curve["value"], curve["probability"], where="post", label=label)
        if "lower" in curve:
            ax.fill_between(
                curve["value"], curve["lower"], curve["upper"], step="post", alpha=0.2
            )
    if complementary:
        ax.set_yscale("log")
        ax.set_ylabel("CCDF")
    else:
        ax.set_ylabel("CDF")
    if xlabel:
        ax.set_xlabel(xlabel)
    ax.grid(True, which="both", linestyle=":")
    ax.legend()

    metadata = {"History": fileio.get_new_log(infile_logs=infile_logs)}
    plt.savefig(outfile, bbox_inches="tight", facecolor="white", dpi=200, metadata=metadata)
    plt.close(fig)
    logging.info(f"Plot written to {outfile}")
