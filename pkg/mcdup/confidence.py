"""Confidence bounds for empirical distributions (DKW band, Wilson score interval)."""

import math
import warnings
from dataclasses import dataclass

import dask
import numpy as np
import pandas as pd
from scipy import stats


DEFAULT_ALPHA = 0.01
WILSON_POINTS = (0.9, 0.99, 0.999)


@dataclass(frozen=True)
class ConfidenceBound:
    """A DKW band half-width or a pointwise Wilson interval.

    Parameters
    ----------
    kind : {'dkw', 'wilson'}
    alpha : float
    n : int
    epsilon : float, optional
        DKW half-width
    lower, upper : float, optional
        Wilson bounds on F(at)
    at : float, optional
        Sample value the Wilson interval is evaluated at
    k : int, optional
        Samples at or below ``at``
    z : float, optional
    """

    kind: str
    alpha: float
    n: int
    epsilon: float = None
    lower: float = None
    upper: float = None
    at: float = None
    k: int = None
    z: float = None

    def to_dict(self):
        return {key: value for key, value in self.__dict__.items() if value is not None}


def z_alpha(alpha):
    """Two-sided standard normal quantile for confidence 1 - alpha."""

    if not 0 < alpha < 1:
        raise ValueError(f"alpha must be in (0, 1): {alpha}")

    return float(stats.norm.ppf(1 - alpha / 2))


def dkw_epsilon(n, alpha=DEFAULT_ALPHA):
    """Half-width of the DKW confidence band.

    Parameters
    ----------
    n : int
        Sample size
    alpha : float, default 0.01
        The band contains the true CDF with probability 1 - alpha; in (0, 1)

    Returns
    -------
    epsilon : float
        sqrt(ln(2 / alpha) / (2 n))
    """

    if n < 1 or int(n) != n:
        raise ValueError(f"Sample size must be a positive integer: {n}")
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must be in (0, 1): {alpha}")

    return math.sqrt(math.log(2 / alpha) / (2 * n))


def _wilson_bounds(k, n, z):
    phat = k / n
    centre = phat + z**2 / (2 * n)
    spread = z * np.sqrt(phat * (1 - phat) / n + z**2 / (4 * n**2))
    denom = 1 + z**2 / n
    lower = np.where(k == 0, 0.0, (centre - spread) / denom)
    upper = np.where(k == n, 1.0, (centre + spread) / denom)

    return np.clip(lower, 0.0, 1.0), np.clip(upper, 0.0, 1.0)


def wilson_interval(k, n, alpha=DEFAULT_ALPHA):
    """Wilson score interval for a binomial proportion.

    Parameters
    ----------
    k : int
        Successes
    n : int
        Trials
    alpha : float, default 0.01

    Returns
    -------
    lower, upper : float
    """

    if n < 1:
        raise ValueError(f"Number of trials must be positive: {n}")
    if not 0 <= k <= n:
        raise ValueError(f"Successes must be in [0, {n}]: {k}")
    lower, upper = _wilson_bounds(k, n, z_alpha(alpha))

    return float(lower), float(upper)


def dkw_band(dist, alpha=DEFAULT_ALPHA):
    """ECDF with its DKW band at every distinct sample value.

    Parameters
    ----------
    dist : EmpiricalDistribution
    alpha : float, default 0.01

    Returns
    -------
    band : pandas.DataFrame
        Columns value, ecdf, lower, upper
    """

    if dist.n < 100:
        warnings.warn(f"DKW band from only {dist.n} samples is very wide")
    eps = dkw_epsilon(dist.n, alpha)
    values = np.unique(dist.values)
    cdf = dist(values)

    return pd.DataFrame(
        {
            "value": values,
            "ecdf": cdf,
            "lower": np.clip(cdf - eps, 0.0, 1.0),
            "upper": np.clip(cdf + eps, 0.0, 1.0),
        }
    )


def dkw_bound(n, alpha=DEFAULT_ALPHA):
    return ConfidenceBound("dkw", alpha, int(n), epsilon=dkw_epsilon(n, alpha))


def wilson_at_quantile(series, p, alpha=DEFAULT_ALPHA):
    """Wilson interval on the CDF at the sample's p-quantile.

    Outage samples count as infinitely large, so n is the full series length.

    Parameters
    ----------
    series : SampleSeries
    p : float
        CDF point, for example 0.99
    alpha : float, default 0.01

    Returns
    -------
    bound : ConfidenceBound or None
        None when the quantile lies in the outage region
    """

    values = np.where(series.outage, np.inf, series.values)
    ordered = np.sort(values)
    n = len(ordered)
    idx = min(max(math.ceil(p * n - 1e-9) - 1, 0), n - 1)
    at = ordered[idx]
    if not math.isfinite(at):
        warnings.warn(f"CDF point {p} lies in the outage region, no interval reported")
        return None
    k = int(np.searchsorted(ordered, at, side="right"))
    lower, upper = wilson_interval(k, n, alpha)

    return ConfidenceBound(
        "wilson", alpha, n, lower=lower, upper=upper, at=float(at), k=k, z=z_alpha(alpha)
    )


def confidence_table(series, alpha=DEFAULT_ALPHA, points=WILSON_POINTS, n_override=None):
    """DKW half-width and Wilson intervals for one series.

    Parameters
    ----------
    series : SampleSeries
    alpha : float, default 0.01
    points : tuple, default (0.9, 0.99, 0.999)
        CDF points for Wilson intervals (RTT series only)
    n_override : int, optional
        Sample size used for the DKW half-width, for example the delivered packet count

    Returns
    -------
    table : dict
    """

    n = n_override or len(series)
    table = {"dkw": dkw_bound(n, alpha).to_dict(), "wilson": {}}
    if series.metric == "rtt_ms":
        for p in points:
            bound = wilson_at_quantile(series, p, alpha)
            table["wilson"][f"{p:g}"] = None if bound is None else bound.to_dict()

    return table


def _sup_distance_uniform(u):
    """Kolmogorov distance between the ECDF of sorted u and the uniform CDF."""

    n = len(u)
    i = np.arange(1, n + 1)
    return max(np.max(i / n - u), np.max(u - (i - 1) / n))


def _dkw_chunk(seed_seq, trials, n, eps):
    rng = np.random.default_rng(seed_seq)
    violations = 0
    for _ in range(trials):
        u = np.sort(rng.random(n))
        if _sup_distance_uniform(u) > eps:
            violations += 1
    return violations


def dkw_violation_rate(n, alpha=DEFAULT_ALPHA, trials=1000, seed=0, chunks=10):
    """Monte-Carlo fraction of samples whose ECDF leaves the DKW band.

    Uniform samples suffice since the sup-distance is distribution free.
    Chunks of trials run as dask delayed tasks.

    Returns
    -------
    rate : float
    """

    eps = dkw_epsilon(n, alpha)
    sizes = [trials // chunks + (1 if i < trials % chunks else 0) for i in range(chunks)]
    seeds = np.random.SeedSequence(seed).spawn(chunks)
    tasks = [dask.delayed(_dkw_chunk)(s, size, n, eps) for s, size in zip(seeds, sizes)]
    violations = dask.compute(*tasks, scheduler="threads")

    return sum(violations) / trials


def _wilson_chunk(seed_seq, trials, p, n, z):
    rng = np.random.default_rng(seed_seq)
    k = rng.binomial(n, p, size=trials)
    lower, upper = _wilson_bounds(k, n, z)
    return int(np.sum((lower <= p) & (p <= upper)))


def wilson_coverage(p, n, alpha=DEFAULT_ALPHA, trials=1000, seed=0, chunks=10):
    """Monte-Carlo fraction of Bernoulli(p) batches whose Wilson interval covers p."""

    z = z_alpha(alpha)
    sizes = [trials // chunks + (1 if i < trials % chunks else 0) for i in range(chunks)]
    seeds = np.random.SeedSequence(seed).spawn(chunks)
    tasks = [dask.delayed(_wilson_chunk)(s, size, p, n, z) for s, size in zip(seeds, sizes)]
    covered = dask.compute(*tasks, scheduler="threads")

    return sum(covered) / trials
