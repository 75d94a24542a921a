"""Test empirical distributions, summaries and availability."""

import numpy as np
import numpy.testing as npt
import pytest

from mcdup.feasibility import UseCaseRequirement
from mcdup.kpi import (
    EmpiricalDistribution,
    availability_against,
    distribution_curve,
    ecdf,
    plot_distributions,
    quantile,
    summarize,
)

from .conftest import rtt_series, throughput_series


def test_ecdf_right_continuous():
    """F(x) counts samples at or below x."""
    dist = ecdf([3.0, 1.0, 2.0, 2.0])
    npt.assert_allclose(dist([0.5, 1.0, 1.5, 2.0, 3.0, 4.0]), [0.0, 0.25, 0.25, 0.75, 1.0, 1.0])
    assert dist.ccdf(2.0) == 0.25
    assert dist.count_at_or_below(2.0) == 3


def test_ecdf_excludes_outages():
    """Outage samples are not part of the empirical distribution."""
    dist = ecdf(rtt_series([10.0, np.nan, 30.0, 2500.0]))
    assert dist.n == 2


def test_ecdf_empty():
    """An empty sample has no distribution."""
    with pytest.raises(ValueError):
        ecdf(np.array([np.nan]))


@pytest.mark.parametrize("p, expected", [(0.5, 30.0), (0.99, 118.0), (0.999, 489.0)])
def test_quantile_fixture(quantile_fixture_series, p, expected):
    """Lower empirical quantiles of the fixture sample."""
    assert quantile(ecdf(quantile_fixture_series), p) == expected


@pytest.mark.parametrize("p", [0.0, -0.1, 1.0, 1.1])
def test_quantile_range(p):
    """Quantile probabilities lie strictly between 0 and 1."""
    with pytest.raises(ValueError):
        quantile(EmpiricalDistribution(np.array([1.0, 2.0])), p)


def test_quantile_is_smallest_sample():
    """The quantile is the smallest sample with F >= p."""
    dist = ecdf(np.arange(1.0, 11.0))
    assert quantile(dist, 0.3) == 3.0
    assert quantile(dist, 0.31) == 4.0


def test_summarize_latency(quantile_fixture_series):
    """RTT summaries report upper tails."""
    summary = summarize(quantile_fixture_series)
    assert summary.n == 10000
    assert summary.outage_probability == 0.0
    assert summary.median == 30.0
    assert summary.max == 851.0
    assert summary.tails == {0.99: 118.0, 0.999: 489.0, 0.9999: 489.0}


def test_summarize_outage_tail():
    """Tails falling in the outage region are not reported."""
    rtts = np.full(1000, 40.0)
    rtts[:5] = np.nan
    summary = summarize(rtt_series(rtts))
    assert summary.outage_probability == 0.005
    assert summary.median == 40.0
    assert summary.tails[0.99] == 40.0
    assert summary.tails[0.999] is None
    assert summary.to_dict()["tails"]["0.999"] is None


def test_summarize_all_outage():
    """A series with only outages has no statistics."""
    summary = summarize(rtt_series([np.nan, np.nan]))
    assert summary.outage_probability == 1.0
    assert summary.median is None
    assert all(value is None for value in summary.tails.values())


def test_summarize_reflag():
    """A custom threshold re-flags outages."""
    series = rtt_series([10.0, 150.0, 300.0, 20.0])
    assert summarize(series, outage_threshold=100.0).outage_probability == 0.5


def test_summarize_throughput():
    """Throughput summaries report lower tails over all bins."""
    rates = np.concatenate([np.zeros(5), np.full(95, 50.0)])
    summary = summarize(throughput_series(rates))
    assert summary.outage_probability == 0.05
    assert summary.median == 50.0
    assert summary.tails[0.05] == 0.0
    assert summary.tails[0.1] == 50.0
    npt.assert_allclose(summary.mean, 47.5)


def test_summarize_empty():
    """Empty series cannot be summarised."""
    with pytest.raises(ValueError):
        summarize(rtt_series([]))


def test_availability_against():
    """Availability is the share of samples meeting each requirement."""
    requirement = UseCaseRequirement("UC", 0.99, 100.0, 10.0, 5.0)
    latency = rtt_series([50.0, 100.0, 150.0, np.nan])
    downlink = throughput_series([20.0, 5.0, 10.0, 0.0])
    uplink = throughput_series([5.0, 5.0, 4.0, 6.0], direction="UL")
    availability = availability_against(requirement, latency, downlink, uplink)
    assert availability == {"latency": 50.0, "DL": 50.0, "UL": 75.0}


def test_availability_partial():
    """Only the KPIs given are reported."""
    requirement = UseCaseRequirement("UC", 0.99, 100.0, 10.0, 5.0)
    assert list(availability_against(requirement, latency=rtt_series([10.0]))) == ["latency"]


def test_distribution_curve():
    """CCDF curves for RTT, CDF curves for throughput."""
    curve = distribution_curve(rtt_series([10.0, 20.0, 20.0, 40.0]))
    npt.assert_allclose(curve["value"], [10.0, 20.0, 40.0])
    npt.assert_allclose(curve["probability"], [0.75, 0.25, 0.0])
    curve = distribution_curve(throughput_series([1.0, 2.0]), alpha=0.05)
    npt.assert_allclose(curve["probability"], [0.5, 1.0])
    assert (curve["lower"] <= curve["probability"]).all()
    assert (curve["upper"] <= 1.0).all()


def test_plot_distributions(tmp_path, quantile_fixture_series):
    """Curves are plotted to an image file."""
    outfile = tmp_path / "ccdf.png"
    curves = {"rtt": distribution_curve(quantile_fixture_series, alpha=0.01)}
    plot_distributions(curves, str(outfile), complementary=True, xlabel="RTT (ms)")
    assert outfile.exists()
