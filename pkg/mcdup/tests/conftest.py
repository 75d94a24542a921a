import numpy as np
import pandas as pd
import pytest


# Import all modules to test that dependencies are installed
import mcdup.confidence
import mcdup.coverage
import mcdup.dask_setup
import mcdup.duplication
import mcdup.emulator
import mcdup.feasibility
import mcdup.fileio
import mcdup.frames
import mcdup.general_utils
import mcdup.kpi
import mcdup.links
import mcdup.measurement
import mcdup.runner
import mcdup.tunnel


# To avoid linting errors need to use all imported modules
mcdup.confidence.__name__
mcdup.coverage.__name__
mcdup.dask_setup.__name__
mcdup.duplication.__name__
mcdup.emulator.__name__
mcdup.feasibility.__name__
mcdup.fileio.__name__
mcdup.frames.__name__
mcdup.general_utils.__name__
mcdup.kpi.__name__
mcdup.links.__name__
mcdup.measurement.__name__
mcdup.runner.__name__
mcdup.tunnel.__name__


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: full-size runs (deselect with -m \"not slow\")")
    pytest.SEED = 42
    pytest.OUTAGE_THRESHOLD_MS = 2000.0


def constant_link(name, one_way_ms, capacity_mbps=100.0, outage=None):
    """A duplex link with constant one-way latency in both directions."""
    profile = mcdup.links.LinkProfile(
        name,
        mcdup.links.LatencyModel.constant(one_way_ms),
        capacity_mbps=capacity_mbps,
        outage=outage or mcdup.links.OutageProcess.none(),
    )
    return mcdup.links.DuplexLink(name, profile, profile)


def rtt_series(rtts, interval_ms=100.0, threshold_ms=2000.0):
    """An RTT SampleSeries from per-probe RTTs (NaN for lost probes)."""
    rtts = np.asarray(rtts, dtype=float)
    config = mcdup.measurement.ProbeConfig(
        duration_s=len(rtts) * interval_ms / 1000.0, interval_ms=interval_ms, outage_threshold_ms=threshold_ms
    )
    return mcdup.measurement.latency_series(rtts, config)


def throughput_series(rates, direction="DL"):
    """A throughput SampleSeries with one-second bins."""
    config = mcdup.measurement.LoadConfig(duration_s=len(rates), direction=direction)
    return mcdup.measurement.throughput_series(rates, config)


@pytest.fixture()
def two_links():
    """Two constant links, 10 ms and 25 ms one way."""
    return {"fast": constant_link("fast", 10.0), "slow": constant_link("slow", 25.0)}


@pytest.fixture()
def quantile_fixture_series():
    """10000 RTT samples with known upper quantiles."""
    values = np.concatenate(
        [np.full(9890, 30.0), np.full(10, 118.0), np.full(89, 300.0), np.full(10, 489.0), np.full(1, 851.0)]
    )
    rng = np.random.default_rng(0)
    return rtt_series(rng.permutation(values))


@pytest.fixture()
def rsrp_records():
    """A small two-technology RSRP trace."""
    return pd.DataFrame(
        {
            "time_s": [0.0, 0.0, 1.0, 1.0, 2.0, 3.0],
            "rsrp_dbm": [-90.0, -80.0, -105.0, np.nan, np.nan, -95.0],
            "tech": ["4G", "5G", "4G", "5G", "none", "4G"],
        }
    )
