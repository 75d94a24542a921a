"""Test link models: latency, outage, capacity and determinism."""

import numpy as np
import numpy.testing as npt
import pandas as pd
import pytest

from mcdup import fileio
from mcdup.frames import FrameKind, TunnelFrame
from mcdup.links import (
    BLOCK_SIZE,
    DOWNLINK,
    UPLINK,
    Delivery,
    Dropped,
    LatencyModel,
    LinkChannel,
    LinkProfile,
    OutageProcess,
    RsrpTrace,
    TokenBucket,
    load_duplex_link,
    load_profile,
    named_rng,
    outage_active,
    sample_one_way_delay,
    transmit,
)


def builtin_rtt_model(name):
    """One-way latency model from a shipped RTT quantile table."""
    pairs = fileio.read_quantile_table(fileio.resolve_path(f"builtin:profiles/{name}_rtt.csv"))
    return LatencyModel.quantile_table(pairs, scale=0.5)


@pytest.mark.parametrize("name, median_ms", [("satellite", 90.8), ("operator_b", 28.9), ("operator_a", 44.8)])
def test_quantile_table_median(name, median_ms):
    """Round trips drawn from a fitted table reproduce its median."""
    model = builtin_rtt_model(name)
    rng = np.random.default_rng(0)
    rtt = 2 * sample_one_way_delay(model, rng, 100000)
    assert abs(np.median(rtt) - median_ms) < 2.0


def test_quantile_table_range():
    """Draws stay between the first and last knot."""
    model = builtin_rtt_model("satellite")
    draws = model.sample(np.random.default_rng(1), 10000)
    assert draws.min() >= 68.8 / 2
    assert draws.max() <= 1971.0 / 2


@pytest.mark.parametrize(
    "pairs",
    [
        [(0.0, 1.0)],
        [(0.1, 1.0), (1.0, 2.0)],
        [(0.0, 1.0), (0.5, 0.5), (1.0, 2.0)],
        [(0.0, 1.0), (0.5, 1.5), (0.5, 1.6), (1.0, 2.0)],
    ],
)
def test_quantile_table_invalid(pairs):
    """Malformed quantile tables are rejected."""
    with pytest.raises(ValueError):
        LatencyModel.quantile_table(pairs)


def test_normal_floor():
    """Normal draws never fall below the floor."""
    model = LatencyModel.normal(5.0, 10.0, floor_ms=1.0)
    draws = model.sample(np.random.default_rng(2), 10000)
    assert draws.min() >= 1.0


def test_constant_single_draw():
    """A single draw is returned as a float."""
    assert sample_one_way_delay(LatencyModel.constant(12.5), np.random.default_rng(0)) == 12.5


def test_scheduled_outage():
    """Scheduled windows are half open."""
    process = OutageProcess.scheduled([(1.0, 2.0), (5.0, 6.5)])
    assert not outage_active(process, 0.5)
    assert outage_active(process, 1.0)
    assert outage_active(process, 1.999)
    assert not outage_active(process, 2.0)
    assert outage_active(process, 6.0)
    assert not outage_active(process, 7.0)


def test_scheduled_outage_overlap():
    """Overlapping windows are rejected."""
    with pytest.raises(ValueError):
        OutageProcess.scheduled([(1.0, 3.0), (2.0, 4.0)])


def test_gilbert_elliott_fraction():
    """The chain spends its stationary share of ticks in outage."""
    process = OutageProcess.gilbert_elliott(0.002224, 0.2).seeded(named_rng(3, 1))
    ticks = np.array([process.active(float(t)) for t in range(200000)])
    npt.assert_allclose(ticks.mean(), process.bad_fraction, atol=0.003)
    npt.assert_allclose(process.bad_fraction, 0.011, atol=0.0005)


def test_gilbert_elliott_unseeded():
    """An unseeded chain cannot be queried."""
    with pytest.raises(ValueError):
        OutageProcess.gilbert_elliott(0.1, 0.5).active(0.0)


def test_gilbert_elliott_seeded_copies():
    """Seeding returns independent copies with reproducible timelines."""
    base = OutageProcess.gilbert_elliott(0.05, 0.3)
    first = base.seeded(named_rng(9, 1))
    second = base.seeded(named_rng(9, 1))
    assert base._chain is None
    assert [first.active(t) for t in range(500)] == [second.active(t) for t in range(500)]


def test_rsrp_trace_epochs(rsrp_records):
    """Records at the same time form one epoch with the best RSRP."""
    trace = RsrpTrace(rsrp_records)
    npt.assert_array_equal(trace.epoch_times, [0.0, 1.0, 2.0, 3.0])
    assert trace.rsrp_at(0.5) == -80.0
    assert trace.rsrp_at(1.0) == -105.0
    assert np.isnan(trace.rsrp_at(2.5))
    with pytest.raises(ValueError):
        trace.rsrp_at(-1.0)


def test_rsrp_outage(rsrp_records):
    """An RSRP-driven link is out below the threshold and when nothing is visible."""
    process = OutageProcess.rsrp_trace(RsrpTrace(rsrp_records), threshold_dbm=-100.0)
    assert [process.active(t) for t in [0.0, 1.0, 2.0, 3.0]] == [False, True, True, False]


def test_rsrp_outage_time_share():
    """The share of time an RSRP-driven link is out follows the trace."""
    rsrp = np.full(1000, -85.0)
    rsrp[[50, 51, 52, 300, 301, 600, 601, 602, 603, 900]] = -110.0
    rsrp[901] = np.nan
    records = pd.DataFrame({"time_s": np.arange(1000.0), "rsrp_dbm": rsrp, "tech": "5G"})
    process = OutageProcess.rsrp_trace(RsrpTrace(records), threshold_dbm=-100.0)
    active = [outage_active(process, k / 10) for k in range(10_000)]
    npt.assert_allclose(np.mean(active), 0.011, atol=0.001)


def test_rsrp_trace_unsorted():
    """Records must be sorted by time."""
    records = pd.DataFrame({"time_s": [1.0, 0.0], "rsrp_dbm": [-90.0, -91.0], "tech": ["4G", "4G"]})
    with pytest.raises(ValueError):
        RsrpTrace(records)


def test_token_bucket_bound():
    """Bytes leaving the bucket over any window stay within rate * W + depth."""
    rate_bps = 8e6
    depth = 10000
    bucket = TokenBucket(rate_bps, depth, queue_bytes=10**9)
    departures = np.array([bucket.admit(i * 1e-4, 1000) for i in range(20000)])
    for window in [0.01, 0.1, 1.0]:
        starts = departures[::500]
        counts = np.searchsorted(departures, starts + window, side="left") - np.searchsorted(departures, starts)
        assert np.all(counts * 1000 <= rate_bps / 8 * window + depth + 1000)


def test_token_bucket_queue_drop():
    """Frames beyond the backlog limit are refused."""
    bucket = TokenBucket(8e3, depth_bytes=1000, queue_bytes=2000)
    results = [bucket.admit(0.0, 1000) for _ in range(5)]
    assert results[-1] is None
    assert results[0] is not None


def test_channel_determinism():
    """Same seed, link and direction give identical draws."""
    profile = LinkProfile("a", LatencyModel.lognormal(3.0, 0.5), loss_prob=0.1)
    frame_seqs = range(200)

    def outcomes(seed):
        channel = LinkChannel("a", profile, UPLINK, seed)
        return [channel.transmit(TunnelFrame(1, seq, seq * 1000), seq * 1000) for seq in frame_seqs]

    assert outcomes(5) == outcomes(5)
    assert outcomes(5) != outcomes(6)


def test_channel_draws_random_access():
    """A frame's draws do not depend on which seqs were offered before it."""
    profile = LinkProfile("a", LatencyModel.lognormal(3.0, 0.5), loss_prob=0.1)
    frame_seqs = [0, 5, BLOCK_SIZE + 3, 3 * BLOCK_SIZE - 1, 7]

    def outcome(channel, seq):
        return channel.transmit(TunnelFrame(1, seq, 0), 0)

    forward = LinkChannel("a", profile, UPLINK, 5)
    expected = {seq: outcome(forward, seq) for seq in frame_seqs}
    backward = LinkChannel("a", profile, UPLINK, 5)
    assert {seq: outcome(backward, seq) for seq in reversed(frame_seqs)} == expected


def test_channel_draws_held_per_block():
    """Only one block of draws per flow is held, however long the flow runs."""
    channel = LinkChannel("a", LinkProfile("a", LatencyModel.normal(10.0, 1.0)), UPLINK, 2)
    for seq in range(0, 50 * BLOCK_SIZE, 97):
        channel.transmit(TunnelFrame(1, seq, 0), 0)
    stream = channel._streams[1]
    assert stream.block == (50 * BLOCK_SIZE - 1) // 97 * 97 // BLOCK_SIZE
    assert len(stream.uniforms) == len(stream.delays_ns) == BLOCK_SIZE


def test_channel_directions_independent():
    """Uplink and downlink draw from different streams."""
    profile = LinkProfile("a", LatencyModel.lognormal(3.0, 0.5))
    up = LinkChannel("a", profile, UPLINK, 1)
    down = LinkChannel("a", profile, DOWNLINK, 1)
    frame = TunnelFrame(1, 0, 0)
    assert up.transmit(frame, 0) != down.transmit(frame, 0)


def test_channel_outage_drop():
    """Frames offered during an outage are dropped."""
    profile = LinkProfile("a", LatencyModel.constant(5.0), outage=OutageProcess.scheduled([(1.0, 2.0)]))
    channel = LinkChannel("a", profile, UPLINK, 0)
    assert transmit(channel, TunnelFrame(1, 0, 0), 1_500_000_000) == Dropped("outage")
    assert transmit(channel, TunnelFrame(1, 1, 0), 2_500_000_000) == Delivery(2_505_000_000)


def test_channel_loss_rate():
    """Independent loss matches the configured probability."""
    profile = LinkProfile("a", LatencyModel.constant(1.0), loss_prob=0.2)
    channel = LinkChannel("a", profile, UPLINK, 4)
    lost = [isinstance(channel.transmit(TunnelFrame(1, seq, 0), 0), Dropped) for seq in range(20000)]
    npt.assert_allclose(np.mean(lost), 0.2, atol=0.01)


def test_probe_bypasses_bucket():
    """Probe frames are not shaped by the token bucket."""
    profile = LinkProfile("a", LatencyModel.constant(2.0), capacity_mbps=0.001)
    channel = LinkChannel("a", profile, UPLINK, 0)
    frame = TunnelFrame(1, 0, 0, FrameKind.PROBE_REQUEST, bytes(1200))
    assert channel.transmit(frame, 0) == Delivery(2_000_000)


def test_load_profile_keys():
    """Unknown profile keys are rejected."""
    with pytest.raises(KeyError):
        load_profile("a", {"latency": {"kind": "constant", "value_ms": 1}, "jitter": 3})


def test_load_profile_needs_latency():
    """A profile without a latency model is rejected."""
    with pytest.raises(KeyError):
        load_profile("a", {"loss_prob": 0.1})


def test_load_duplex_link_overrides():
    """Direction sub-mappings override the shared keys."""
    config = {
        "latency": {"kind": "constant", "value_ms": 10},
        "capacity_mbps": 50,
        "uplink": {"capacity_mbps": 5},
    }
    link = load_duplex_link("a", config)
    assert link.uplink.capacity_mbps == 5.0
    assert link.downlink.capacity_mbps == 50.0
    assert link.uplink.latency == link.downlink.latency


def test_load_duplex_link_builtin_table():
    """Quantile tables given by file are resolved and halved."""
    config = {"latency": {"kind": "quantile_table", "file": "builtin:profiles/satellite_rtt.csv"}}
    link = load_duplex_link("sat", config, fileio.table_resolver())
    assert link.uplink.latency.values[0] == pytest.approx(34.4)


@pytest.mark.parametrize("kind", ["gaussian_mixture", "pareto"])
def test_unknown_latency_kind(kind):
    """Unknown latency kinds are rejected."""
    with pytest.raises(ValueError):
        load_profile("a", {"latency": {"kind": kind}})
