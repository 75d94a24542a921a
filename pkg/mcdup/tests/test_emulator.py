"""Test the discrete-event link emulator."""

import numpy as np
import numpy.testing as npt
import pandas as pd
import pytest

from mcdup import fileio
from mcdup.duplication import FullDuplication, PrimaryWithBackup
from mcdup.emulator import EmulatedTransport, LoadWorkload, Network, ProbeWorkload, run_simulation
from mcdup.links import DuplexLink, LatencyModel, LinkProfile, OutageProcess, RsrpTrace, load_duplex_link
from mcdup.measurement import LoadConfig, ProbeConfig, run_latency_probe, run_load
from mcdup.runner import verify_probe_table

from .conftest import constant_link


def lossy_link(name, mu, loss_prob, outage=None):
    """A duplex link with lognormal latency and independent loss."""
    profile = LinkProfile(
        name, LatencyModel.lognormal(mu, 0.8), loss_prob=loss_prob, outage=outage or OutageProcess.none()
    )
    return DuplexLink(name, profile, profile)


def test_constant_links_rtt(two_links):
    """With constant links every probe takes the faster round trip."""
    log = run_simulation(Network(two_links, FullDuplication(), (ProbeWorkload(),)), 10.0, pytest.SEED)
    rtts = log.rtts_ms()
    assert len(rtts) == 100
    npt.assert_allclose(rtts, 20.0)
    assert log.downlink_shares.counts == {"fast": 100, "slow": 0}
    assert log.uplink_shares.total == 100


def test_copy_rtts(two_links):
    """Every link's reply copy is recorded."""
    log = run_simulation(Network(two_links, FullDuplication(), (ProbeWorkload(),)), 1.0, pytest.SEED)
    copies = log.copy_rtts_ms()
    npt.assert_allclose(copies["fast"], 20.0)
    # the reply leaves on both links when the fast request copy arrives
    npt.assert_allclose(copies["slow"], 35.0)


def test_outage_window_failover():
    """During a scheduled outage the other link carries the probes."""
    outage = OutageProcess.scheduled([(2.0, 4.0)])
    network_links = {"fast": constant_link("fast", 10.0, outage=outage), "slow": constant_link("slow", 25.0)}
    log = run_simulation(Network(network_links, FullDuplication(), (ProbeWorkload(),)), 6.0, pytest.SEED)
    rtts = log.rtts_ms()
    send_s = np.arange(len(rtts)) * 0.1
    in_window = (send_s >= 2.0) & (send_s < 3.98)
    npt.assert_allclose(rtts[in_window], 50.0)
    npt.assert_allclose(rtts[send_s < 1.9], 20.0)
    assert not np.isnan(rtts).any()


def rsrp_outage(n_epochs=1000, bad_epochs=(50, 51, 52, 300, 301, 600, 601, 602, 603, 900, 901)):
    """An RSRP-driven outage over one-second epochs, below threshold in bad_epochs."""
    rsrp = np.full(n_epochs, -85.0)
    rsrp[list(bad_epochs)] = -110.0
    records = pd.DataFrame({"time_s": np.arange(float(n_epochs)), "rsrp_dbm": rsrp, "tech": "5G"})
    return OutageProcess.rsrp_trace(RsrpTrace(records), threshold_dbm=-100.0)


@pytest.mark.parametrize(
    "outage",
    [OutageProcess.scheduled([(100.0, 104.0), (500.0, 507.0)]), rsrp_outage()],
    ids=["scheduled", "rsrp_trace"],
)
def test_outage_share_of_probes(outage):
    """A link down for 1.1% of the run loses 1.1% of its probes."""
    transport = EmulatedTransport({"a": constant_link("a", 10.0, outage=outage)}, FullDuplication(), pytest.SEED)
    series = run_latency_probe(transport, ProbeConfig(duration_s=1000.0))
    assert len(series) == 10_000
    npt.assert_allclose(series.outage_probability, 0.011, atol=0.001)


def test_full_outage_is_flagged():
    """Probes sent while every link is down get no reply."""
    outage = OutageProcess.scheduled([(1.0, 2.0)])
    network_links = {
        "a": constant_link("a", 10.0, outage=outage),
        "b": constant_link("b", 25.0, outage=outage),
    }
    log = run_simulation(Network(network_links, FullDuplication(), (ProbeWorkload(),)), 3.0, pytest.SEED)
    rtts = log.rtts_ms()
    assert np.isnan(rtts[10:20]).all()
    assert not np.isnan(rtts[:9]).any()


def test_multi_never_worse_than_single():
    """Per probe, the multi-link RTT is at most each single-link RTT with the same seed."""
    network_links = {"a": lossy_link("a", 3.5, 0.05), "b": lossy_link("b", 3.2, 0.1)}
    config = ProbeConfig(duration_s=60.0)
    multi = EmulatedTransport(network_links, FullDuplication(), pytest.SEED).probe_round_trips(config)
    for name in network_links:
        single = EmulatedTransport({name: network_links[name]}, FullDuplication(), pytest.SEED)
        rtts = single.probe_round_trips(config)
        answered = ~np.isnan(rtts)
        assert np.all(multi[answered] <= rtts[answered])


def test_probe_table_invariants():
    """Accepted replies are the earliest copies and outages intersect."""
    outage = OutageProcess.gilbert_elliott(0.05, 0.3)
    network_links = {"a": lossy_link("a", 4.0, 0.05, outage), "b": lossy_link("b", 5.0, 0.05)}
    log = run_simulation(Network(network_links, FullDuplication(), (ProbeWorkload(),)), 120.0, pytest.SEED)
    assert verify_probe_table(log.probes, log.outage_threshold_ms) == []
    accepted = int((~log.probes["reply_ns"].isna()).sum())
    assert log.downlink_shares.total == accepted


@pytest.mark.slow
def test_two_hour_run_min_selection():
    """Over 72,000 probes on fitted links the accepted RTT is the earliest copy and outages intersect."""
    resolver = fileio.table_resolver()
    network_links = {
        "cell": load_duplex_link(
            "cell",
            {
                "latency": {"kind": "quantile_table", "file": "builtin:profiles/operator_b_rtt.csv"},
                "loss_prob": 0.01,
                "outage": {"kind": "gilbert_elliott", "p_good_bad": 0.01, "p_bad_good": 0.2},
            },
            resolver,
        ),
        "sat": load_duplex_link(
            "sat",
            {"latency": {"kind": "quantile_table", "file": "builtin:profiles/satellite_rtt.csv"}, "loss_prob": 0.005},
            resolver,
        ),
    }
    network = Network(network_links, FullDuplication(), (ProbeWorkload(),))
    log = run_simulation(network, 7200.0, pytest.SEED, record_events=False)
    assert len(log.probes) == 72_000
    assert verify_probe_table(log.probes, log.outage_threshold_ms) == []

    copies = log.copy_rtts_ms().to_numpy()
    copies[copies > log.outage_threshold_ms] = np.inf
    copies[np.isnan(copies)] = np.inf
    earliest = copies.min(axis=1)
    rtts = log.rtts_ms()
    outage = np.isinf(earliest)
    npt.assert_array_equal(np.isnan(rtts), outage)
    npt.assert_array_equal(rtts[~outage], earliest[~outage])


def test_determinism():
    """The same seed gives the same event log."""
    network_links = {"a": lossy_link("a", 3.5, 0.1), "b": lossy_link("b", 3.0, 0.1)}
    first = run_simulation(Network(network_links, FullDuplication(), (ProbeWorkload(),)), 20.0, 5)
    second = run_simulation(Network(network_links, FullDuplication(), (ProbeWorkload(),)), 20.0, 5)
    pd.testing.assert_frame_equal(first.events, second.events)
    pd.testing.assert_frame_equal(first.probes, second.probes)
    third = run_simulation(Network(network_links, FullDuplication(), (ProbeWorkload(),)), 20.0, 6)
    assert not first.probes["reply_ns"].equals(third.probes["reply_ns"])


def test_primary_with_backup_saves_copies(two_links):
    """A healthy primary carries probes alone."""
    policy = PrimaryWithBackup("slow", rtt_threshold_ms=100.0)
    log = run_simulation(Network(two_links, policy, (ProbeWorkload(),)), 5.0, pytest.SEED)
    assert (log.probes["selected"] == "slow").all()
    npt.assert_allclose(log.rtts_ms(), 50.0)


@pytest.mark.parametrize("capacity_mbps, expected, tolerance", [(150.0, 100.0, 1.0), (20.0, 20.0, 0.5)])
def test_load_throughput(capacity_mbps, expected, tolerance):
    """Constant-rate load is delivered at the target or at the capacity limit."""
    network_links = {"a": constant_link("a", 10.0, capacity_mbps=capacity_mbps)}
    transport = EmulatedTransport(network_links, FullDuplication(), pytest.SEED)
    series = run_load(transport, LoadConfig(duration_s=5.0, target_mbps=100.0))
    assert len(series) == 5
    assert abs(np.median(series.values) - expected) < tolerance


def test_load_at_capacity_every_bin():
    """Load at exactly the link capacity fills every bin, the first included."""
    network_links = {"a": constant_link("a", 10.0, capacity_mbps=100.0)}
    transport = EmulatedTransport(network_links, FullDuplication(), 7)
    series = run_load(transport, LoadConfig(duration_s=10.0, target_mbps=100.0))
    assert len(series) == 10
    npt.assert_allclose(series.values, 100.0, atol=1.0)


def test_load_drops_recorded():
    """Frames beyond the capacity are dropped at the queue."""
    network_links = {"a": constant_link("a", 10.0, capacity_mbps=20.0)}
    log = run_simulation(Network(network_links, FullDuplication(), (LoadWorkload("UL", 100.0),)), 2.0, 1)
    assert log.load_drops[("a", "UL")]["queue"] > 0
    assert len(log.load[("a", "UL")]) > 0


def test_unknown_policy_link(two_links):
    """A policy naming an unknown link is rejected."""
    with pytest.raises(ValueError):
        run_simulation(Network(two_links, PrimaryWithBackup("missing"), (ProbeWorkload(),)), 1.0, 0)


def test_emulated_transport_needs_seed(two_links):
    """Emulated runs need a seed."""
    with pytest.raises(ValueError):
        EmulatedTransport(two_links, FullDuplication(), None)
