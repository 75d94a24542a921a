"""Duplication policies, first-arrival selection and link-share accounting."""

import math
from dataclasses import dataclass, field

import numpy as np

from . import frames


DEFAULT_OUTAGE_THRESHOLD_MS = 2000.0


@dataclass
class LinkState:
    """Sender-side view of one link, fed by probe replies.

    Parameters
    ----------
    name : str
    window : int, default 10
        EWMA window in probes (smoothing factor 2 / (window + 1))
    """

    name: str
    window: int = 10
    rtt_ewma_ms: float = math.nan
    samples: int = 0
    oldest_unanswered_s: float = None
    rsrp_dbm: float = math.nan

    @property
    def alpha(self):
        return 2.0 / (self.window + 1)

    def note_sent(self, now_s):
        if self.oldest_unanswered_s is None:
            self.oldest_unanswered_s = now_s

    def observe_rtt(self, rtt_ms, sent_s):
        """Fold a reply received over this link into the estimate."""

        if self.samples == 0:
            self.rtt_ewma_ms = rtt_ms
        else:
            self.rtt_ewma_ms += self.alpha * (rtt_ms - self.rtt_ewma_ms)
        self.samples += 1
        if self.oldest_unanswered_s is not None and self.oldest_unanswered_s <= sent_s:
            self.oldest_unanswered_s = None

    def in_outage(self, now_s, threshold_ms=DEFAULT_OUTAGE_THRESHOLD_MS):
        """True if a probe sent over the link went unanswered for longer than threshold_ms."""

        if self.oldest_unanswered_s is None:
            return False
        return (now_s - self.oldest_unanswered_s) * 1000.0 > threshold_ms


@dataclass
class FullDuplication:
    """Every frame over every link."""

    kind = "full_duplication"


@dataclass
class PrimaryWithBackup:
    """Primary link only while it looks healthy, all links otherwise.

    Parameters
    ----------
    primary : str
    rtt_threshold_ms : float, default 100
        Duplicate once the primary's EWMA RTT exceeds this
    probe_window : int, default 10
    outage_threshold_ms : float, default 2000
        Unanswered time after which the primary is in observed outage
    rsrp_floor_dbm : float, optional
        Also duplicate while the primary's current RSRP is below this
    """

    primary: str
    rtt_threshold_ms: float = 100.0
    probe_window: int = 10
    outage_threshold_ms: float = DEFAULT_OUTAGE_THRESHOLD_MS
    rsrp_floor_dbm: float = None
    kind = "primary_with_backup"

    def __post_init__(self):
        if self.rtt_threshold_ms <= 0:
            raise ValueError(f"rtt_threshold_ms must be positive: {self.rtt_threshold_ms}")
        if self.probe_window < 1:
            raise ValueError(f"probe_window must be at least 1: {self.probe_window}")


@dataclass
class QualitySwitch:
    """A single link, switching to the best EWMA RTT with hysteresis.

    Links without samples are treated as the best candidate so that each is
    tried once.

    Parameters
    ----------
    hysteresis_ms : float, default 10
        Margin by which another link must beat the current one
    probe_window : int, default 10
    outage_threshold_ms : float, default 2000
    initial : str, optional
        Starting link (first by name when omitted)
    """

    hysteresis_ms: float = 10.0
    probe_window: int = 10
    outage_threshold_ms: float = DEFAULT_OUTAGE_THRESHOLD_MS
    initial: str = None
    current: str = field(default=None, init=False)
    kind = "quality_switch"

    def __post_init__(self):
        if self.hysteresis_ms < 0:
            raise ValueError(f"hysteresis_ms must be non-negative: {self.hysteresis_ms}")


POLICIES = {
    "full_duplication": FullDuplication,
    "primary_with_backup": PrimaryWithBackup,
    "quality_switch": QualitySwitch,
}


def policy_from_config(config):
    """Build a policy from a mapping with a ``kind`` key (or a bare kind string)."""

    if isinstance(config, str):
        config = {"kind": config}
    config = dict(config)
    kind = config.pop("kind", "full_duplication")
    try:
        policy_class = POLICIES[kind]
    except KeyError:
        raise ValueError(f"Unrecognised duplication policy: {kind}")

    return policy_class(**config)


def policy_links(policy):
    """Link names a policy refers to."""

    names = []
    if isinstance(policy, PrimaryWithBackup):
        names.append(policy.primary)
    if isinstance(policy, QualitySwitch) and policy.initial is not None:
        names.append(policy.initial)
    return names


def make_link_states(policy, link_names):
    """Fresh LinkState per link, sized to the policy's estimator window."""

    window = getattr(policy, "probe_window", 10)
    return {name: LinkState(name, window=window) for name in sorted(link_names)}


def select_links(policy, frame, link_states):
    """Links that carry a frame.

    Parameters
    ----------
    policy : FullDuplication, PrimaryWithBackup or QualitySwitch
    frame : TunnelFrame
        send_ts_ns is used as the current time
    link_states : dict
        Link name to LinkState

    Returns
    -------
    links : frozenset of str

    Raises
    ------
    ValueError
        If no links are configured or the policy names an unknown link
    """

    if not link_states:
        raise ValueError("No links configured for duplication")
    for name in policy_links(policy):
        if name not in link_states:
            raise ValueError(f"Policy references unknown link: {name}")

    everything = frozenset(link_states)
    if isinstance(policy, FullDuplication):
        return everything

    now_s = frame.send_ts_ns / 1e9
    if isinstance(policy, PrimaryWithBackup):
        state = link_states[policy.primary]
        degraded = (
            state.samples > 0 and state.rtt_ewma_ms > policy.rtt_threshold_ms
        ) or state.in_outage(now_s, policy.outage_threshold_ms)
        if policy.rsrp_floor_dbm is not None and state.rsrp_dbm < policy.rsrp_floor_dbm:
            degraded = True
        return everything if degraded else frozenset([policy.primary])

    if isinstance(policy, QualitySwitch):
        if policy.current is None:
            policy.current = policy.initial or min(link_states)

        def rank(name):
            state = link_states[name]
            return (state.samples > 0, state.rtt_ewma_ms if state.samples else -math.inf, name)

        candidates = [
            name
            for name in sorted(link_states)
            if not link_states[name].in_outage(now_s, policy.outage_threshold_ms)
        ]
        if candidates:
            best = min(candidates, key=rank)
            untried = [name for name in candidates if not link_states[name].samples and name != policy.current]
            if policy.current not in candidates:
                policy.current = best
            elif untried:
                policy.current = untried[0]
            elif best != policy.current and rank(best)[1] < rank(policy.current)[1] - policy.hysteresis_ms:
                policy.current = best
        return frozenset([policy.current])

    raise ValueError(f"Unrecognised duplication policy: {policy}")


class LinkShareAccounting:
    """Per-link count of frames whose accepted (first) copy came over that link.

    Parameters
    ----------
    links : iterable of str, optional
        Links reported even if they never win
    record_times : bool, default True
        Keep the delivery time of every accepted frame
    """

    def __init__(self, links=(), record_times=True):
        self.counts = {name: 0 for name in sorted(links)}
        self.record_times = record_times
        self.delivery_times = {}

    def credit(self, link, flow_id, seq, arrival_ts):
        self.counts[link] = self.counts.get(link, 0) + 1
        if self.record_times:
            self.delivery_times[(flow_id, seq)] = arrival_ts

    @property
    def total(self):
        return sum(self.counts.values())

    def fractions(self):
        total = self.total
        return {name: (count / total if total else 0.0) for name, count in sorted(self.counts.items())}

    def to_dict(self):
        return {"counts": dict(sorted(self.counts.items())), "fractions": self.fractions(), "total": self.total}


def on_copy_arrival(dedup, accounting, link, frame, arrival_ts):
    """Handle one received copy at the receiver.

    Parameters
    ----------
    dedup : DedupState
    accounting : LinkShareAccounting
    link : str
        Link the copy came over
    frame : TunnelFrame
    arrival_ts : int or float
        Receiver time of arrival

    Returns
    -------
    accepted : bool
        True if this copy is the first arrival; False for a duplicate
    """

    accepted = frames.dedup_accept(dedup, frame.flow_id, frame.seq)
    if accepted:
        accounting.credit(link, frame.flow_id, frame.seq, arrival_ts)

    return accepted


@dataclass
class ProbeRecord:
    """Round-trip bookkeeping for one probe.

    Parameters
    ----------
    seq : int
    send_ns : int
        Request send time on the sender clock
    copies : dict
        Link name to reply arrival time (ns) of the reply copy received over
        that link; lost copies are absent or None
    """

    seq: int
    send_ns: int
    copies: dict = field(default_factory=dict)


def end_to_end_rtt(record, outage_threshold_ms=DEFAULT_OUTAGE_THRESHOLD_MS):
    """Round-trip time of a probe under first-arrival selection.

    Parameters
    ----------
    record : ProbeRecord
    outage_threshold_ms : float, default 2000

    Returns
    -------
    rtt_ms : float or None
        Earliest surviving reply minus request send, or None (outage) when no
        reply arrived within outage_threshold_ms
    """

    arrivals = [t for t in record.copies.values() if t is not None]
    if not arrivals:
        return None
    rtt_ms = (min(arrivals) - record.send_ns) / 1e6
    if rtt_ms > outage_threshold_ms:
        return None

    return rtt_ms


def combine_throughput(per_link_rates):
    """Multi-connectivity throughput per bin: the maximum over links.

    Parameters
    ----------
    per_link_rates : dict
        Link name to array of per-bin rates, all the same length

    Returns
    -------
    rates : numpy.ndarray
    """

    if not per_link_rates:
        raise ValueError("No per-link throughput series to combine")
    stacked = np.vstack([np.asarray(v, dtype=float) for _, v in sorted(per_link_rates.items())])

    return stacked.max(axis=0)
