"""Stochastic one-way link models: latency, loss, capacity and outage.

Times handed to a LinkChannel are integer nanoseconds; model parameters are
in milliseconds, seconds and Mbps as named.
"""

import bisect
import zlib
from collections import namedtuple
from dataclasses import dataclass, field, replace

import numpy as np
import pandas as pd

from . import frames


NS_PER_S = 1_000_000_000
NS_PER_MS = 1_000_000

UPLINK = 0
DOWNLINK = 1
DIRECTIONS = {"UL": UPLINK, "DL": DOWNLINK}

BLOCK_SIZE = 4096
DEFAULT_BUCKET_BYTES = 65536

_OUTAGE_STREAM = 1 << 16
_CAPACITY_STREAM = (1 << 16) + 1

Delivery = namedtuple("Delivery", ["deliver_at"])
Dropped = namedtuple("Dropped", ["reason"])


def stream_key(name):
    """Stable integer key for a link name (CRC-32 of its UTF-8 bytes)."""

    return zlib.crc32(name.encode("utf-8"))


def named_rng(seed, *key):
    """A PCG64 generator for the stream identified by (seed, key)."""

    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


@dataclass(frozen=True)
class LatencyModel:
    """One-way latency distribution in milliseconds.

    Use the constructors ``constant``, ``normal``, ``lognormal`` and
    ``quantile_table`` rather than the raw fields.
    """

    kind: str
    loc: float = 0.0
    scale: float = 0.0
    floor: float = 0.0
    probabilities: tuple = ()
    values: tuple = ()

    def __post_init__(self):
        if self.kind not in ("constant", "normal", "lognormal", "quantile_table"):
            raise ValueError(f"Unrecognised latency model: {self.kind}")
        if self.floor < 0:
            raise ValueError(f"Latency floor must be non-negative: {self.floor}")
        if self.kind == "constant" and self.loc < 0:
            raise ValueError(f"Constant latency must be non-negative: {self.loc}")
        if self.kind in ("normal", "lognormal") and self.scale < 0:
            raise ValueError(f"Latency spread must be non-negative: {self.scale}")
        if self.kind == "quantile_table":
            p = np.asarray(self.probabilities, dtype=float)
            v = np.asarray(self.values, dtype=float)
            if len(p) < 2 or len(p) != len(v):
                raise ValueError("Quantile table needs at least two (p, value) knots")
            if p[0] != 0.0 or p[-1] != 1.0:
                raise ValueError("Quantile table must cover p from 0 to 1")
            if np.any(np.diff(p) <= 0):
                raise ValueError("Quantile table probabilities must be strictly increasing")
            if np.any(np.diff(v) < 0):
                raise ValueError("Quantile table values must be non-decreasing")
            if v[0] < 0:
                raise ValueError("Quantile table values must be non-negative")

    @classmethod
    def constant(cls, value_ms):
        return cls("constant", loc=float(value_ms))

    @classmethod
    def normal(cls, mean_ms, std_ms, floor_ms=0.0):
        return cls("normal", loc=float(mean_ms), scale=float(std_ms), floor=float(floor_ms))

    @classmethod
    def lognormal(cls, mu, sigma, floor_ms=0.0):
        return cls("lognormal", loc=float(mu), scale=float(sigma), floor=float(floor_ms))

    @classmethod
    def quantile_table(cls, pairs, scale=1.0):
        """Inverse-CDF model from (p, value) knots.

        Parameters
        ----------
        pairs : sequence of (float, float)
            Knots sorted by p, covering p = 0 and p = 1
        scale : float, default 1.0
            Multiplier applied to the values (0.5 turns an RTT table into one-way)
        """

        pairs = [(float(p), float(v) * scale) for p, v in pairs]
        return cls(
            "quantile_table",
            probabilities=tuple(p for p, _ in pairs),
            values=tuple(v for _, v in pairs),
        )

    def sample(self, rng, size):
        """Draw an array of delays (ms)."""

        if self.kind == "constant":
            return np.full(size, self.loc)
        if self.kind == "normal":
            draws = rng.normal(self.loc, self.scale, size)
        elif self.kind == "lognormal":
            draws = rng.lognormal(self.loc, self.scale, size)
        else:
            draws = np.interp(rng.random(size), self.probabilities, self.values)
        return np.maximum(draws, self.floor)


def sample_one_way_delay(model, rng, size=None):
    """Sample one-way delay from a latency model.

    Parameters
    ----------
    model : LatencyModel
    rng : numpy.random.Generator
    size : int, optional
        Number of draws; a single float is returned when omitted

    Returns
    -------
    delay : float or numpy.ndarray
        Milliseconds, never below the model floor
    """

    if size is None:
        return float(model.sample(rng, 1)[0])
    return model.sample(rng, size)


class RsrpTrace:
    """Ordered RSRP records for one operator.

    Records sharing a ``time_s`` form one epoch (e.g. a 4G and a 5G reading
    taken together). A record with a missing ``rsrp_dbm`` or tech ``none``
    means the named technology (or any technology) was not visible.

    Parameters
    ----------
    records : pandas.DataFrame
        Columns time_s, rsrp_dbm, tech and optionally lat, lon
    """

    def __init__(self, records):
        for column in ["time_s", "rsrp_dbm", "tech"]:
            if column not in records.columns:
                raise KeyError(f"RSRP trace is missing column: {column}")
        records = records.reset_index(drop=True).copy()
        records["tech"] = records["tech"].fillna("none").astype(str)
        records["rsrp_dbm"] = records["rsrp_dbm"].astype(float)
        for tech, group in records.groupby("tech"):
            if np.any(np.diff(group["time_s"].to_numpy()) <= 0):
                raise ValueError(f"RSRP trace times must strictly increase ({tech} records)")
        if np.any(np.diff(records["time_s"].to_numpy()) < 0):
            raise ValueError("RSRP trace records must be sorted by time")
        self.records = records

        visible = records["rsrp_dbm"].where(records["tech"] != "none")
        best = visible.groupby(records["time_s"]).max()
        self._epoch_times = best.index.to_numpy(dtype=float).tolist()
        self._epoch_best = best.to_numpy(dtype=float).tolist()

    def __len__(self):
        return len(self.records)

    @property
    def epoch_times(self):
        return np.asarray(self._epoch_times)

    @property
    def epoch_best_rsrp(self):
        """Strongest visible RSRP per epoch (NaN when nothing is visible)."""

        return np.asarray(self._epoch_best)

    def rsrp_at(self, time_s):
        """Best RSRP of the most recent epoch at or before time_s."""

        idx = bisect.bisect_right(self._epoch_times, time_s) - 1
        if idx < 0:
            raise ValueError(f"Time {time_s} s precedes the first RSRP record")
        return self._epoch_best[idx]


class _GilbertChain:
    """Two-state Markov chain realised lazily, one state per tick."""

    def __init__(self, p_good_bad, p_bad_good, rng):
        self.p_good_bad = p_good_bad
        self.p_bad_good = p_bad_good
        self.rng = rng
        self.states = []

    def state(self, tick):
        while tick >= len(self.states):
            uniforms = self.rng.random(BLOCK_SIZE).tolist()
            bad = self.states[-1] if self.states else False
            for u in uniforms:
                bad = (u >= self.p_bad_good) if bad else (u < self.p_good_bad)
                self.states.append(bad)
        return self.states[tick]


@dataclass
class OutageProcess:
    """Outage process of a link.

    kind is one of none, scheduled, gilbert_elliott or rsrp_trace. A
    gilbert_elliott process must be seeded (``seeded``) before it is queried.
    """

    kind: str = "none"
    windows: tuple = ()
    p_good_bad: float = 0.0
    p_bad_good: float = 1.0
    tick_s: float = 1.0
    threshold_dbm: float = -100.0
    trace: object = None
    _chain: object = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in ("none", "scheduled", "gilbert_elliott", "rsrp_trace"):
            raise ValueError(f"Unrecognised outage process: {self.kind}")
        windows = tuple((float(start), float(end)) for start, end in self.windows)
        for start, end in windows:
            if not start < end:
                raise ValueError(f"Outage window must have start < end: [{start}, {end})")
        for (_, end), (start, _) in zip(windows[:-1], windows[1:]):
            if start < end:
                raise ValueError("Outage windows must be sorted and disjoint")
        self.windows = windows
        self._starts = [start for start, _ in windows]
        for p in (self.p_good_bad, self.p_bad_good):
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"Transition probability outside [0, 1]: {p}")
        if self.tick_s <= 0:
            raise ValueError(f"Outage tick must be positive: {self.tick_s}")
        if self.kind == "rsrp_trace" and self.trace is None:
            raise ValueError("rsrp_trace outage process needs a trace")

    @classmethod
    def none(cls):
        return cls("none")

    @classmethod
    def scheduled(cls, windows):
        return cls("scheduled", windows=tuple(windows))

    @classmethod
    def gilbert_elliott(cls, p_good_bad, p_bad_good, tick_s=1.0):
        return cls("gilbert_elliott", p_good_bad=p_good_bad, p_bad_good=p_bad_good, tick_s=tick_s)

    @classmethod
    def rsrp_trace(cls, trace, threshold_dbm=-100.0):
        return cls("rsrp_trace", trace=trace, threshold_dbm=threshold_dbm)

    @property
    def bad_fraction(self):
        """Long-run outage fraction of a gilbert_elliott chain."""

        total = self.p_good_bad + self.p_bad_good
        return self.p_good_bad / total if total > 0 else 0.0

    def seeded(self, rng):
        """Copy of the process with its random elements bound to rng."""

        process = replace(self)
        if self.kind == "gilbert_elliott":
            process._chain = _GilbertChain(self.p_good_bad, self.p_bad_good, rng)
        return process

    def active(self, now_s):
        if self.kind == "none":
            return False
        if self.kind == "scheduled":
            idx = bisect.bisect_right(self._starts, now_s) - 1
            return idx >= 0 and now_s < self.windows[idx][1]
        if self.kind == "gilbert_elliott":
            if self._chain is None:
                raise ValueError("gilbert_elliott outage process has not been seeded")
            return self._chain.state(int(now_s // self.tick_s))
        rsrp = self.trace.rsrp_at(now_s)
        return not rsrp >= self.threshold_dbm


def outage_active(process, now_s):
    """Whether a link is in outage at a given time.

    Parameters
    ----------
    process : OutageProcess
    now_s : float
        Time in seconds

    Returns
    -------
    active : bool

    Raises
    ------
    ValueError
        If now_s precedes the first record of an rsrp_trace process
    """

    return process.active(now_s)


@dataclass(frozen=True)
class LinkProfile:
    """Stochastic model of one direction of one interface.

    Parameters
    ----------
    name : str
    latency : LatencyModel
    loss_prob : float, default 0
        Independent per-frame loss probability
    capacity_mbps : float, default 100
        Token-bucket rate in payload Mbps
    bucket_bytes : int, default 65536
        Token-bucket depth
    queue_bytes : int, default 65536
        Backlog allowed in front of the bucket before frames are dropped
    outage : OutageProcess
    capacity_table : LatencyModel, optional
        Quantile table of capacity (Mbps) redrawn every capacity_period_s
    capacity_period_s : float, default 1
    """

    name: str
    latency: LatencyModel
    loss_prob: float = 0.0
    capacity_mbps: float = 100.0
    bucket_bytes: int = DEFAULT_BUCKET_BYTES
    queue_bytes: int = DEFAULT_BUCKET_BYTES
    outage: OutageProcess = field(default_factory=OutageProcess)
    capacity_table: LatencyModel = None
    capacity_period_s: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.loss_prob <= 1.0:
            raise ValueError(f"loss_prob outside [0, 1] for link {self.name}: {self.loss_prob}")
        if self.capacity_mbps <= 0:
            raise ValueError(f"capacity_mbps must be positive for link {self.name}: {self.capacity_mbps}")
        if self.bucket_bytes <= 0 or self.queue_bytes < 0:
            raise ValueError(f"Invalid token bucket sizes for link {self.name}")
        if self.capacity_period_s <= 0:
            raise ValueError(f"capacity_period_s must be positive for link {self.name}")


@dataclass(frozen=True)
class DuplexLink:
    """An interface with independent uplink and downlink profiles."""

    name: str
    uplink: LinkProfile
    downlink: LinkProfile

    def profile(self, direction):
        return self.uplink if direction == UPLINK else self.downlink


class TokenBucket:
    """Token-bucket shaper with a bounded backlog.

    The bucket starts empty at t = 0 and holds at most ``depth_bytes`` tokens,
    so payload leaving it over any window W is at most rate * W + depth.
    """

    def __init__(self, rate_bps, depth_bytes, queue_bytes):
        self.depth = float(depth_bytes)
        self.queue_bytes = float(queue_bytes)
        self.set_rate(rate_bps)
        self._tokens = 0.0
        self._t = 0.0
        self._last = 0.0

    def set_rate(self, rate_bps):
        if rate_bps <= 0:
            raise ValueError(f"Token bucket rate must be positive: {rate_bps}")
        self.rate_bytes = rate_bps / 8.0

    def admit(self, now_s, nbytes):
        """Departure time (s) of a frame offered at now_s, or None if the backlog is full."""

        t = max(now_s, self._last)
        tokens = min(self.depth, self._tokens + (t - self._t) * self.rate_bytes)
        if tokens >= nbytes:
            depart = t
            tokens -= nbytes
        else:
            depart = t + (nbytes - tokens) / self.rate_bytes
            tokens = 0.0
        if (depart - now_s) * self.rate_bytes > self.queue_bytes:
            return None
        self._tokens = tokens
        self._t = depart
        self._last = depart
        return depart


class _DrawStream:
    """Per-flow loss uniforms and delays, indexed by seq.

    Block b of BLOCK_SIZE frames is drawn from its own generator keyed by
    (seed, key..., b). Only the current block is held.
    """

    def __init__(self, model, seed, *key):
        self.model = model
        self.seed = seed
        self.key = key
        self.block = -1
        self.uniforms = None
        self.delays_ns = None

    def get(self, seq):
        block, offset = divmod(seq, BLOCK_SIZE)
        if block != self.block:
            rng = named_rng(self.seed, *self.key, block)
            self.uniforms = rng.random(BLOCK_SIZE)
            self.delays_ns = np.rint(self.model.sample(rng, BLOCK_SIZE) * NS_PER_MS).astype(np.int64)
            self.block = block
        return float(self.uniforms[offset]), int(self.delays_ns[offset])


class LinkChannel:
    """One direction of one link, realised for a seed.

    A frame's loss and delay draws depend only on (seed, link, direction,
    flow, seq); outage timelines depend only on (seed, link), so both
    directions of a link share one.

    Parameters
    ----------
    link_name : str
    profile : LinkProfile
    direction : int
        UPLINK or DOWNLINK
    seed : int
    """

    def __init__(self, link_name, profile, direction, seed):
        self.name = link_name
        self.profile = profile
        self.direction = direction
        self.seed = seed
        self._key = stream_key(link_name)
        self._streams = {}
        self.outage = profile.outage.seeded(named_rng(seed, self._key, _OUTAGE_STREAM))
        self.bucket = TokenBucket(
            profile.capacity_mbps * 1e6, profile.bucket_bytes, profile.queue_bytes
        )
        self._capacity_rng = named_rng(seed, self._key, _CAPACITY_STREAM, direction)
        self._capacity_draws = []
        self._period = -1
        self._rate_ok = True

    def _draws(self, flow_id, seq):
        stream = self._streams.get(flow_id)
        if stream is None:
            stream = _DrawStream(self.profile.latency, self.seed, self._key, self.direction, flow_id)
            self._streams[flow_id] = stream
        return stream.get(seq)

    def capacity_at(self, now_s):
        """Token-bucket rate (Mbps) in force at now_s."""

        table = self.profile.capacity_table
        if table is None:
            return self.profile.capacity_mbps
        period = int(now_s // self.profile.capacity_period_s)
        while period >= len(self._capacity_draws):
            self._capacity_draws.extend(table.sample(self._capacity_rng, BLOCK_SIZE).tolist())
        return self._capacity_draws[period]

    def _update_rate(self, now_s):
        period = int(now_s // self.profile.capacity_period_s)
        if period != self._period:
            self._period = period
            rate_mbps = self.capacity_at(now_s)
            self._rate_ok = rate_mbps >= 1e-3
            if self._rate_ok:
                self.bucket.set_rate(rate_mbps * 1e6)

    def transmit(self, frame, now_ns):
        """Offer a frame to the channel.

        Probe frames bypass the token bucket; load frames are shaped by it.

        Returns
        -------
        outcome : Delivery or Dropped
            Delivery.deliver_at is in integer ns and never earlier than now_ns;
            Dropped.reason is one of outage, loss, capacity or queue
        """

        u_loss, delay_ns = self._draws(frame.flow_id, frame.seq)
        now_s = now_ns / NS_PER_S
        if self.outage.active(now_s):
            return Dropped("outage")
        if u_loss < self.profile.loss_prob:
            return Dropped("loss")
        depart_ns = now_ns
        if frame.kind == frames.FrameKind.LOAD:
            if self.profile.capacity_table is not None:
                self._update_rate(now_s)
                if not self._rate_ok:
                    return Dropped("capacity")
            depart_s = self.bucket.admit(now_s, len(frame.payload))
            if depart_s is None:
                return Dropped("queue")
            depart_ns = max(now_ns, int(round(depart_s * NS_PER_S)))
        return Delivery(depart_ns + delay_ns)


def transmit(link, frame, now_ns):
    """Offer a frame to a link channel at now_ns (see LinkChannel.transmit)."""

    return link.transmit(frame, now_ns)


def load_profile(name, config, base=None, resolve_table=None):
    """Build a LinkProfile from a config mapping.

    Parameters
    ----------
    name : str
        Link name
    config : dict
        Profile keys (latency, loss_prob, capacity_mbps, bucket_bytes,
        queue_bytes, outage, capacity_table, capacity_period_s)
    base : LinkProfile, optional
        Profile whose values are used for keys missing from config
    resolve_table : callable, optional
        Maps a table spec (dict with ``file`` or ``table``) to (p, value) pairs;
        required for quantile tables given by file, and for rsrp_trace outages
        (called with the outage mapping)

    Returns
    -------
    profile : LinkProfile
    """

    valid_keys = [
        "latency",
        "loss_prob",
        "capacity_mbps",
        "bucket_bytes",
        "queue_bytes",
        "outage",
        "capacity_table",
        "capacity_period_s",
        "uplink",
        "downlink",
    ]
    for key in config:
        if key not in valid_keys:
            raise KeyError(f"Invalid link profile key for {name}: {key}")

    kwargs = {}
    if "latency" in config:
        kwargs["latency"] = _latency_from_config(config["latency"], resolve_table)
    elif base is None:
        raise KeyError(f"Link {name} has no latency model")
    if "outage" in config:
        kwargs["outage"] = _outage_from_config(config["outage"], resolve_table)
    if "capacity_table" in config:
        spec = config["capacity_table"]
        kwargs["capacity_table"] = (
            None if spec is None else LatencyModel.quantile_table(_table_pairs(spec, resolve_table))
        )
    for key in ["loss_prob", "capacity_mbps", "capacity_period_s"]:
        if key in config:
            kwargs[key] = float(config[key])
    for key in ["bucket_bytes", "queue_bytes"]:
        if key in config:
            kwargs[key] = int(config[key])

    if base is not None:
        return replace(base, name=name, **kwargs)
    return LinkProfile(name=name, **kwargs)


def load_duplex_link(name, config, resolve_table=None):
    """Build a DuplexLink; ``uplink``/``downlink`` sub-mappings override the shared keys."""

    shared = {k: v for k, v in config.items() if k not in ("uplink", "downlink")}
    base = load_profile(name, shared, resolve_table=resolve_table)
    uplink = load_profile(name, config.get("uplink", {}) or {}, base=base, resolve_table=resolve_table)
    downlink = load_profile(name, config.get("downlink", {}) or {}, base=base, resolve_table=resolve_table)

    return DuplexLink(name, uplink, downlink)


def _table_pairs(spec, resolve_table):
    if "table" in spec:
        return [tuple(pair) for pair in spec["table"]]
    if resolve_table is None:
        raise ValueError(f"Cannot resolve quantile table file: {spec.get('file')}")
    return resolve_table(spec)


def _latency_from_config(spec, resolve_table):
    kind = spec.get("kind")
    if kind == "constant":
        return LatencyModel.constant(spec["value_ms"])
    if kind == "normal":
        return LatencyModel.normal(spec["mean_ms"], spec["std_ms"], spec.get("floor_ms", 0.0))
    if kind == "lognormal":
        return LatencyModel.lognormal(spec["mu"], spec["sigma"], spec.get("floor_ms", 0.0))
    if kind == "quantile_table":
        scale = 0.5 if spec.get("halve", True) else 1.0
        return LatencyModel.quantile_table(_table_pairs(spec, resolve_table), scale=scale)
    raise ValueError(f"Unrecognised latency model: {kind}")


def _outage_from_config(spec, resolve_table):
    kind = spec.get("kind", "none")
    if kind == "none":
        return OutageProcess.none()
    if kind == "scheduled":
        return OutageProcess.scheduled(spec.get("windows", []))
    if kind == "gilbert_elliott":
        return OutageProcess.gilbert_elliott(
            float(spec["p_good_bad"]), float(spec["p_bad_good"]), float(spec.get("tick_s", 1.0))
        )
    if kind == "rsrp_trace":
        if resolve_table is None:
            raise ValueError(f"Cannot resolve RSRP trace: {spec.get('file')}")
        trace = resolve_table(spec)
        if isinstance(trace, pd.DataFrame):
            trace = RsrpTrace(trace)
        return OutageProcess.rsrp_trace(trace, float(spec.get("threshold_dbm", -100.0)))
    raise ValueError(f"Unrecognised outage process: {kind}")
