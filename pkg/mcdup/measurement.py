"""Latency probing and constant-rate load measurement procedures.

Both procedures work over any transport exposing ``probe_round_trips(config)``
and ``load_deliveries(config)``: the emulator (emulator.EmulatedTransport) or
the live tunnel (tunnel.TunnelClient / tunnel.LoopbackTransport).
"""

import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from . import duplication
from . import frames


METRICS = ("rtt_ms", "throughput_mbps")


class TransportError(RuntimeError):
    """A transport failed to set up or died mid-run.

    Parameters
    ----------
    message : str
    partial : numpy.ndarray, optional
        Samples collected before the failure
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


@dataclass(frozen=True)
class ProbeConfig:
    """Periodic RTT probing.

    Parameters
    ----------
    duration_s : float, default 7200
    interval_ms : float, default 100
    payload_bytes : int, default 64
    outage_threshold_ms : float, default 2000
        Probes unanswered for longer are outages
    """

    duration_s: float = 7200.0
    interval_ms: float = 100.0
    payload_bytes: int = 64
    outage_threshold_ms: float = 2000.0

    def __post_init__(self):
        if self.interval_ms <= 0:
            raise ValueError(f"Probe interval must be positive: {self.interval_ms}")
        if self.outage_threshold_ms <= self.interval_ms:
            raise ValueError("Probe outage threshold must exceed the probe interval")
        if self.duration_s < 0:
            raise ValueError(f"Probe duration must be non-negative: {self.duration_s}")
        if not 0 <= self.payload_bytes <= frames.MAX_PAYLOAD:
            raise ValueError(f"Probe payload size out of range: {self.payload_bytes}")

    @property
    def n_probes(self):
        return int(math.floor(self.duration_s * 1000.0 / self.interval_ms + 1e-9))


@dataclass(frozen=True)
class LoadConfig:
    """Constant-rate UDP-style load.

    Parameters
    ----------
    duration_s : float, default 7200
    target_mbps : float, default 100
    bin_s : float, default 1
    outage_threshold_kbps : float, default 500
        Bins below this rate are outages
    direction : {'DL', 'UL'}
    payload_bytes : int, default 1200
    """

    duration_s: float = 7200.0
    target_mbps: float = 100.0
    bin_s: float = 1.0
    outage_threshold_kbps: float = 500.0
    direction: str = "DL"
    payload_bytes: int = 1200

    def __post_init__(self):
        if self.target_mbps <= 0:
            raise ValueError(f"Load target must be positive: {self.target_mbps}")
        if self.bin_s <= 0:
            raise ValueError(f"Load bin must be positive: {self.bin_s}")
        if self.direction not in ("DL", "UL"):
            raise ValueError(f"Unrecognised load direction: {self.direction}")
        if not 0 < self.payload_bytes <= frames.MAX_PAYLOAD:
            raise ValueError(f"Load payload size out of range: {self.payload_bytes}")

    @property
    def n_bins(self):
        return int(math.floor(self.duration_s / self.bin_s + 1e-9))


@dataclass
class SampleSeries:
    """Ordered KPI samples with outage markers.

    Parameters
    ----------
    metric : {'rtt_ms', 'throughput_mbps'}
    timestamps : numpy.ndarray
        Seconds, strictly increasing
    values : numpy.ndarray
        NaN marks an RTT outage with no usable value; throughput outage bins keep their value
    outage : numpy.ndarray
        Boolean outage flags
    metadata : dict
    """

    metric: str
    timestamps: np.ndarray
    values: np.ndarray
    outage: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ValueError(f"Unrecognised metric: {self.metric}")
        self.timestamps = np.asarray(self.timestamps, dtype=float)
        self.values = np.asarray(self.values, dtype=float)
        self.outage = np.asarray(self.outage, dtype=bool)
        if not len(self.timestamps) == len(self.values) == len(self.outage):
            raise ValueError("Series timestamps, values and outage flags differ in length")
        if np.any(np.diff(self.timestamps) <= 0):
            raise ValueError("Series timestamps must strictly increase")
        present = ~np.isnan(self.values)
        if np.any(~np.isfinite(self.values[present])) or np.any(self.values[present] < 0):
            raise ValueError("Series values must be finite and non-negative")
        if np.any(~present & ~self.outage):
            raise ValueError("Only outage samples may lack a value")

    def __len__(self):
        return len(self.values)

    @property
    def outage_probability(self):
        return float(self.outage.mean()) if len(self) else 0.0

    @property
    def valid_values(self):
        """Values of non-outage samples."""

        return self.values[~self.outage]

    def to_frame(self):
        return pd.DataFrame(
            {
                "timestamp_s": self.timestamps,
                "value": self.values,
                "outage_flag": self.outage.astype(int),
            }
        )

    @classmethod
    def from_frame(cls, df, metadata):
        return cls(
            metadata["metric"],
            df["timestamp_s"].to_numpy(dtype=float),
            df["value"].to_numpy(dtype=float),
            df["outage_flag"].to_numpy(dtype=int).astype(bool),
            metadata,
        )


def latency_series(rtts_ms, config, metadata=None):
    """Series from per-probe RTTs (NaN = no reply); late replies become outages."""

    rtts = np.asarray(rtts_ms, dtype=float)
    timestamps = np.arange(len(rtts)) * (config.interval_ms / 1000.0)
    outage = np.isnan(rtts) | (rtts > config.outage_threshold_ms)
    values = np.where(outage, np.nan, rtts)
    metadata = dict(metadata or {})
    metadata.update(
        {
            "metric": "rtt_ms",
            "interval_ms": config.interval_ms,
            "payload_bytes": config.payload_bytes,
            "outage_threshold_ms": config.outage_threshold_ms,
            "duration_s": config.duration_s,
        }
    )

    return SampleSeries("rtt_ms", timestamps, values, outage, metadata)


def run_latency_probe(transport, config, metadata=None):
    """Probe RTT once per interval.

    Parameters
    ----------
    transport : object
        Provides probe_round_trips(config) returning one RTT (ms) per probe,
        NaN where no reply arrived
    config : ProbeConfig
    metadata : dict, optional
        Labels stored with the series (link, policy, seed, ...)

    Returns
    -------
    series : SampleSeries
        floor(duration / interval) samples; outages are flagged with no value

    Raises
    ------
    TransportError
        If the transport cannot be set up or fails mid-run
    """

    try:
        rtts = transport.probe_round_trips(config)
    except OSError as e:
        raise TransportError(f"Probe transport failed: {e}") from e
    if len(rtts) != config.n_probes:
        raise TransportError(
            f"Transport returned {len(rtts)} probe results, expected {config.n_probes}", partial=rtts
        )

    return latency_series(rtts, config, metadata)


def bin_deliveries(deliver_s, payload_bytes, config, send_s=None):
    """Delivered payload rate (Mbps) per bin.

    Parameters
    ----------
    deliver_s : numpy.ndarray
        Delivery times in seconds
    payload_bytes : numpy.ndarray or int
    config : LoadConfig
    send_s : numpy.ndarray, optional
        Send times of the delivered frames. The receive window then opens at
        the smallest one-way delay, so bin k covers deliveries in
        [k bin_s + d_min, (k + 1) bin_s + d_min).

    Returns
    -------
    rates : numpy.ndarray
        One value per bin; deliveries after the last bin are ignored
    """

    deliver_s = np.asarray(deliver_s, dtype=float)
    bits = np.broadcast_to(np.asarray(payload_bytes, dtype=float) * 8.0, deliver_s.shape)
    n_bins = config.n_bins
    origin = 0.0
    if send_s is not None and len(deliver_s):
        origin = max(float(np.min(deliver_s - np.asarray(send_s, dtype=float))), 0.0)
    idx = np.floor((deliver_s - origin) / config.bin_s + 1e-12).astype(np.int64)
    keep = (idx >= 0) & (idx < n_bins)
    totals = np.bincount(idx[keep], weights=bits[keep], minlength=n_bins)[:n_bins]

    return totals / config.bin_s / 1e6


def throughput_series(rates_mbps, config, metadata=None):
    """Series from per-bin rates, flagging bins below the outage threshold."""

    rates = np.asarray(rates_mbps, dtype=float)
    timestamps = np.arange(len(rates)) * config.bin_s
    outage = rates < config.outage_threshold_kbps / 1000.0
    metadata = dict(metadata or {})
    metadata.update(
        {
            "metric": "throughput_mbps",
            "direction": config.direction,
            "target_mbps": config.target_mbps,
            "bin_s": config.bin_s,
            "outage_threshold_kbps": config.outage_threshold_kbps,
            "payload_bytes": config.payload_bytes,
            "duration_s": config.duration_s,
        }
    )

    return SampleSeries("throughput_mbps", timestamps, rates, outage, metadata)


def run_load_per_link(transport, config, metadata=None):
    """Run the load procedure and bin each link's independent flow.

    Returns
    -------
    series : dict
        Link name to SampleSeries
    """

    try:
        deliveries = transport.load_deliveries(config)
    except OSError as e:
        raise TransportError(f"Load transport failed: {e}") from e

    per_link = {}
    for name, (deliver_s, payload, *sent) in sorted(deliveries.items()):
        labels = dict(metadata or {})
        labels.update({"links": [name], "packets": int(len(deliver_s))})
        rates = bin_deliveries(deliver_s, payload, config, sent[0] if sent else None)
        per_link[name] = throughput_series(rates, config, labels)

    return per_link


def combine_load_series(per_link, config, metadata=None):
    """Multi-connectivity series: per-bin maximum over the links' flows."""

    if len(per_link) == 1:
        (series,) = per_link.values()
        rates = series.values
    else:
        rates = duplication.combine_throughput({name: s.values for name, s in per_link.items()})
    labels = dict(metadata or {})
    labels.update(
        {
            "links": sorted(per_link),
            "packets": int(sum(s.metadata.get("packets", 0) for s in per_link.values())),
        }
    )

    return throughput_series(rates, config, labels)


def run_load(transport, config, metadata=None):
    """Measure throughput with constant-rate load.

    Parameters
    ----------
    transport : object
        Provides load_deliveries(config): link name to (delivery times in s,
        payload bytes[, send times in s]) of the frames that arrived
    config : LoadConfig
    metadata : dict, optional

    Returns
    -------
    series : SampleSeries
        One sample per bin; with several links each bin is the maximum over
        their independent flows. Bins below the outage threshold are flagged
        but keep their value.

    Raises
    ------
    TransportError
    """

    per_link = run_load_per_link(transport, config, metadata)

    return combine_load_series(per_link, config, metadata)
