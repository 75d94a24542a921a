"""Deterministic discrete-event emulation of duplicated traffic over modelled links.

The probe workload runs on a simpy event loop with an integer-nanosecond
clock. Copies arriving at one instant are handled in (link name, seq)
order and sends go out over links in name order, so a run is a pure
function of (scenario, duration, seed).

Load workloads are independent constant-rate flows, one per link and
direction, emulated frame by frame outside the event loop.
"""

import logging
import math
from collections import Counter
from dataclasses import dataclass, replace

import numpy as np
import pandas as pd
import simpy

from . import duplication
from . import frames
from . import links


PROBE_FLOW = 1
LOAD_FLOWS = {"UL": 2, "DL": 3}

EVENT_COLUMNS = ["time_ns", "event", "link", "direction", "flow_id", "seq", "kind", "detail"]
_DIRECTION_LABELS = {links.UPLINK: "UL", links.DOWNLINK: "DL"}


@dataclass(frozen=True)
class ProbeWorkload:
    """Periodic probe requests echoed by the far end."""

    interval_ms: float = 100.0
    payload_bytes: int = 64
    outage_threshold_ms: float = 2000.0
    flow_id: int = PROBE_FLOW

    def count(self, duration_s):
        return int(math.floor(duration_s * 1000.0 / self.interval_ms + 1e-9))


@dataclass(frozen=True)
class LoadWorkload:
    """Constant-rate load in one direction, one independent flow per link."""

    direction: str = "DL"
    rate_mbps: float = 100.0
    payload_bytes: int = 1200
    links: tuple = None

    def __post_init__(self):
        if self.direction not in links.DIRECTIONS:
            raise ValueError(f"Unrecognised load direction: {self.direction}")
        if self.rate_mbps <= 0:
            raise ValueError(f"Load rate must be positive: {self.rate_mbps}")

    @property
    def flow_id(self):
        return LOAD_FLOWS[self.direction]

    @property
    def interval_ns(self):
        return self.payload_bytes * 8 / (self.rate_mbps * 1e6) * links.NS_PER_S


@dataclass(frozen=True)
class Network:
    """The minimal scenario run_simulation needs: links, policy and workloads."""

    links: dict
    policy: object
    workloads: tuple = ()


@dataclass
class EventLog:
    """Result of run_simulation.

    Attributes
    ----------
    events : pandas.DataFrame
        One row per send, drop, accepted delivery and duplicate of a probe
        frame (EVENT_COLUMNS), in processing order
    probes : pandas.DataFrame
        One row per probe: seq, send_ns, selected links, reply_ns (accepted
        reply, NaN if none) and copy_<link> reply arrival per link
    load : dict
        (link, direction) to DataFrame of delivered load frames
        (send_ns, deliver_ns, payload_bytes)
    load_drops : dict
        (link, direction) to Counter of drop reasons
    uplink_shares, downlink_shares : LinkShareAccounting
    """

    events: pd.DataFrame
    probes: pd.DataFrame
    load: dict
    load_drops: dict
    uplink_shares: duplication.LinkShareAccounting
    downlink_shares: duplication.LinkShareAccounting
    outage_threshold_ms: float = 2000.0

    def copy_rtts_ms(self):
        """Per-link reply-copy RTT (ms) per probe, NaN where the copy was lost."""

        columns = [c for c in self.probes.columns if c.startswith("copy_")]
        send = self.probes["send_ns"].to_numpy(dtype=float)
        rtts = {c[len("copy_"):]: (self.probes[c].to_numpy(dtype=float) - send) / 1e6 for c in columns}
        return pd.DataFrame(rtts, index=self.probes["seq"])

    def rtts_ms(self):
        """Accepted RTT per probe, NaN for outages (missing or later than the threshold)."""

        rtt = (self.probes["reply_ns"].to_numpy(dtype=float) - self.probes["send_ns"].to_numpy(dtype=float)) / 1e6
        rtt[rtt > self.outage_threshold_ms] = np.nan
        return rtt


class _Receiver:
    """Collects the copies arriving at one instant and hands them on sorted."""

    def __init__(self, env, handler):
        self.env = env
        self.handler = handler
        self.pending = []

    def arrive(self, event):
        link, frame = event.value
        if not self.pending:
            self.env.timeout(0).callbacks.append(self._flush)
        self.pending.append((link, frame.seq, frame))

    def _flush(self, _event):
        batch = sorted(self.pending, key=lambda item: (item[0], item[1]))
        self.pending = []
        for link, _, frame in batch:
            self.handler(link, frame)


class _ProbeSession:
    def __init__(self, env, network, workload, seed, record_events):
        self.env = env
        self.workload = workload
        self.policy = replace(network.policy)
        self.names = sorted(network.links)
        self.up = {
            name: links.LinkChannel(name, network.links[name].uplink, links.UPLINK, seed)
            for name in self.names
        }
        self.down = {
            name: links.LinkChannel(name, network.links[name].downlink, links.DOWNLINK, seed)
            for name in self.names
        }
        self.link_states = duplication.make_link_states(self.policy, self.names)
        self.server_dedup = frames.DedupState()
        self.client_dedup = frames.DedupState()
        self.uplink_shares = duplication.LinkShareAccounting(self.names)
        self.downlink_shares = duplication.LinkShareAccounting(self.names)
        self.server_rx = _Receiver(env, self._server_handle)
        self.client_rx = _Receiver(env, self._client_handle)
        self.payload = bytes(workload.payload_bytes)
        self.record_events = record_events
        self.events = []
        self.selected = {}
        self.copies = {}
        self.accepted = {}
        self._traces = {
            name: self.up[name].outage.trace
            for name in self.names
            if self.up[name].outage.kind == "rsrp_trace"
        }

    def _log(self, event, link, direction, frame, detail=""):
        if self.record_events:
            self.events.append(
                (
                    self.env.now,
                    event,
                    link,
                    _DIRECTION_LABELS[direction],
                    frame.flow_id,
                    frame.seq,
                    int(frame.kind),
                    detail,
                )
            )

    def _send(self, channels, names, frame, receiver, direction):
        now = self.env.now
        for name in sorted(names):
            outcome = channels[name].transmit(frame, now)
            self._log("send", name, direction, frame)
            if isinstance(outcome, links.Dropped):
                self._log("drop", name, direction, frame, outcome.reason)
                continue
            delivery = self.env.timeout(outcome.deliver_at - now, value=(name, frame))
            delivery.callbacks.append(receiver.arrive)

    def run(self, count):
        interval_ns = int(round(self.workload.interval_ms * links.NS_PER_MS))
        for seq in range(count):
            target = seq * interval_ns
            if target > self.env.now:
                yield self.env.timeout(target - self.env.now)
            self._send_request(seq)

    def _send_request(self, seq):
        now = self.env.now
        for name, trace in self._traces.items():
            self.link_states[name].rsrp_dbm = trace.rsrp_at(now / links.NS_PER_S)
        frame = frames.TunnelFrame(self.workload.flow_id, seq, now, frames.FrameKind.PROBE_REQUEST, self.payload)
        selected = duplication.select_links(self.policy, frame, self.link_states)
        self.selected[seq] = selected
        self.copies[seq] = {}
        for name in selected:
            self.link_states[name].note_sent(now / links.NS_PER_S)
        self._send(self.up, selected, frame, self.server_rx, links.UPLINK)

    def _server_handle(self, link, frame):
        accepted = duplication.on_copy_arrival(self.server_dedup, self.uplink_shares, link, frame, self.env.now)
        self._log("deliver" if accepted else "duplicate", link, links.UPLINK, frame)
        if accepted:
            self._send(self.down, self.selected[frame.seq], frame.reply(), self.client_rx, links.DOWNLINK)

    def _client_handle(self, link, frame):
        now = self.env.now
        accepted = duplication.on_copy_arrival(self.client_dedup, self.downlink_shares, link, frame, now)
        self._log("deliver" if accepted else "duplicate", link, links.DOWNLINK, frame)
        if accepted:
            self.accepted[frame.seq] = now
        self.copies[frame.seq][link] = now
        self.link_states[link].observe_rtt((now - frame.send_ts_ns) / 1e6, frame.send_ts_ns / links.NS_PER_S)

    def probe_table(self):
        rows = []
        for seq in sorted(self.copies):
            copies = self.copies[seq]
            row = {
                "seq": seq,
                "send_ns": self._send_time(seq),
                "selected": "+".join(sorted(self.selected[seq])),
                "reply_ns": self.accepted.get(seq, np.nan),
            }
            for name in self.names:
                row[f"copy_{name}"] = copies.get(name, np.nan)
            rows.append(row)
        columns = ["seq", "send_ns", "selected", "reply_ns"] + [f"copy_{name}" for name in self.names]
        return pd.DataFrame(rows, columns=columns)

    def _send_time(self, seq):
        return seq * int(round(self.workload.interval_ms * links.NS_PER_MS))


def _emulate_load(channel, workload, duration_ns):
    """Offer a constant-rate flow to one channel; return deliveries and drop counts."""

    interval_ns = workload.interval_ns
    count = int(math.ceil(duration_ns / interval_ns - 1e-9))
    send_times = np.floor(np.arange(count) * interval_ns).astype(np.int64).tolist()
    payload = bytes(workload.payload_bytes)
    flow_id = workload.flow_id
    sent = []
    deliveries = []
    drops = Counter()
    for seq, now in enumerate(send_times):
        frame = frames.TunnelFrame(flow_id, seq, now, frames.FrameKind.LOAD, payload)
        outcome = channel.transmit(frame, now)
        if isinstance(outcome, links.Dropped):
            drops[outcome.reason] += 1
        else:
            sent.append(now)
            deliveries.append(outcome.deliver_at)
    delivered = pd.DataFrame(
        {
            "send_ns": np.asarray(sent, dtype=np.int64),
            "deliver_ns": np.asarray(deliveries, dtype=np.int64),
            "payload_bytes": np.full(len(deliveries), workload.payload_bytes, dtype=np.int64),
        }
    )

    return delivered, drops


def _check_network(network):
    if not network.links:
        raise ValueError("Scenario defines no links")
    for name, link in network.links.items():
        if not isinstance(link, links.DuplexLink):
            raise ValueError(f"Unresolved link profile: {name}")
    for name in duplication.policy_links(network.policy):
        if name not in network.links:
            raise ValueError(f"Policy references unknown link: {name}")
    for workload in network.workloads:
        if isinstance(workload, LoadWorkload):
            for name in workload.links or ():
                if name not in network.links:
                    raise ValueError(f"Load workload references unknown link: {name}")
        elif not isinstance(workload, ProbeWorkload):
            raise ValueError(f"Unrecognised workload: {workload}")


def run_simulation(scenario, duration_s, seed, record_events=True):
    """Run the workloads of a scenario over its emulated links.

    The server answers the first request copy of a probe at once, sending one
    reply copy over every link the client selected for it.

    Parameters
    ----------
    scenario : object
        Anything with ``links`` (name to DuplexLink), ``policy`` and
        ``workloads`` (ProbeWorkload / LoadWorkload) attributes
    duration_s : float
        Sending period; probe replies are awaited for one outage threshold after it
    seed : int
    record_events : bool, default True
        Keep the per-frame probe event log

    Returns
    -------
    log : EventLog

    Raises
    ------
    ValueError
        If the scenario references unknown links or unresolved profiles
    """

    _check_network(scenario)
    probe_workloads = [w for w in scenario.workloads if isinstance(w, ProbeWorkload)]
    if len(probe_workloads) > 1:
        raise ValueError("At most one probe workload per simulation")

    names = sorted(scenario.links)
    events = pd.DataFrame([], columns=EVENT_COLUMNS)
    probes = pd.DataFrame([], columns=["seq", "send_ns", "selected", "reply_ns"] + [f"copy_{n}" for n in names])
    uplink_shares = duplication.LinkShareAccounting(names)
    downlink_shares = duplication.LinkShareAccounting(names)
    threshold_ms = 2000.0

    if probe_workloads:
        workload = probe_workloads[0]
        threshold_ms = workload.outage_threshold_ms
        count = workload.count(duration_s)
        env = simpy.Environment()
        session = _ProbeSession(env, scenario, workload, seed, record_events)
        env.process(session.run(count))
        last_send = session._send_time(max(count - 1, 0))
        env.run(until=last_send + int(round(threshold_ms * links.NS_PER_MS)) + 1)
        events = pd.DataFrame(session.events, columns=EVENT_COLUMNS)
        probes = session.probe_table()
        uplink_shares = session.uplink_shares
        downlink_shares = session.downlink_shares
        logging.info(f"Emulated {count} probes over {', '.join(names)} (seed {seed})")

    load = {}
    load_drops = {}
    duration_ns = int(round(duration_s * links.NS_PER_S))
    for workload in scenario.workloads:
        if not isinstance(workload, LoadWorkload):
            continue
        direction = links.DIRECTIONS[workload.direction]
        for name in sorted(workload.links or names):
            channel = links.LinkChannel(name, scenario.links[name].profile(direction), direction, seed)
            delivered, drops = _emulate_load(channel, workload, duration_ns)
            load[(name, workload.direction)] = delivered
            load_drops[(name, workload.direction)] = drops
            logging.info(
                f"Emulated {workload.direction} load over {name}: "
                f"{len(delivered)} frames delivered, drops {dict(drops)}"
            )

    return EventLog(events, probes, load, load_drops, uplink_shares, downlink_shares, threshold_ms)


class EmulatedTransport:
    """Measurement transport backed by run_simulation.

    Parameters
    ----------
    links : dict
        Link name to DuplexLink
    policy : duplication policy
    seed : int
    record_events : bool, default True
    """

    reproducible = True

    def __init__(self, links, policy, seed, record_events=True):
        if seed is None:
            raise ValueError("Emulated runs need a seed")
        self.links = dict(links)
        self.policy = policy
        self.seed = seed
        self.record_events = record_events
        self.last_log = None
        self.last_load_log = None

    def probe_round_trips(self, config):
        """RTT (ms) per probe, NaN where no reply arrived within the threshold."""

        workload = ProbeWorkload(config.interval_ms, config.payload_bytes, config.outage_threshold_ms)
        network = Network(self.links, self.policy, (workload,))
        self.last_log = run_simulation(network, config.duration_s, self.seed, self.record_events)
        return self.last_log.rtts_ms()

    def load_deliveries(self, config):
        """Delivered load per link: name to (deliver times in s, payload bytes, send times in s)."""

        workload = LoadWorkload(config.direction, config.target_mbps, config.payload_bytes)
        network = Network(self.links, self.policy, (workload,))
        log = run_simulation(network, config.duration_s, self.seed)
        self.last_load_log = log

        return {
            name: (
                frame["deliver_ns"].to_numpy() / links.NS_PER_S,
                frame["payload_bytes"].to_numpy(),
                frame["send_ns"].to_numpy() / links.NS_PER_S,
            )
            for (name, _), frame in sorted(log.load.items())
        }
