"""Live UDP tunnel: a duplicating client and a deduplicating echo server.

Each path is one UDP socket pair. Receive threads, one per path socket, push
datagrams onto a single queue that one consumer drains, so deduplication
state is only ever touched by one thread.
"""

import collections
import copy
import logging
import math
import queue
import socket
import threading
import time
from dataclasses import dataclass

import numpy as np

from . import duplication
from . import frames
from . import measurement


PROBE_FLOW = 1
LOAD_FLOW = 2
RECV_TIMEOUT_S = 0.1
RECV_BUFFER = frames.MAX_DATAGRAM + 64
LOAD_HISTORY = 1 << 20


class TunnelError(measurement.TransportError):
    """A tunnel socket could not be bound or connected."""


class PeerVersionError(TunnelError):
    """The peer speaks a different frame version."""


@dataclass(frozen=True)
class PathConfig:
    """One UDP path of the tunnel.

    Parameters
    ----------
    name : str
    local_host : str, default '127.0.0.1'
    local_port : int, default 0
        0 picks a free port
    remote_host : str, optional
        Server address (client side only)
    remote_port : int, optional
    delay_ms : float, default 0
        Extra delay added to every datagram the client sends on this path
    """

    name: str
    local_host: str = "127.0.0.1"
    local_port: int = 0
    remote_host: str = None
    remote_port: int = None
    delay_ms: float = 0.0

    def __post_init__(self):
        if self.delay_ms < 0:
            raise ValueError(f"Path delay must be non-negative: {self.delay_ms}")


def paths_from_config(config):
    """PathConfig list from a mapping of path name to PathConfig fields."""

    return [PathConfig(name, **(spec or {})) for name, spec in sorted(config.items())]


def _now_ts():
    return time.monotonic_ns() % frames.TS_MODULUS


def _rtt_ms(arrival_ts, send_ts):
    return ((arrival_ts - send_ts) % frames.TS_MODULUS) / 1e6


def _bind(path):
    sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
    try:
        sock.bind((path.local_host, path.local_port))
    except OSError as e:
        sock.close()
        raise TunnelError(f"Cannot bind path {path.name} to {path.local_host}:{path.local_port}: {e}") from e
    sock.settimeout(RECV_TIMEOUT_S)
    return sock


def _receive_loop(name, sock, inbox, stopping):
    while not stopping.is_set():
        try:
            data, addr = sock.recvfrom(RECV_BUFFER)
        except socket.timeout:
            continue
        except ConnectionRefusedError:
            continue
        except OSError:
            break
        inbox.put((name, data, addr, _now_ts()))


class _DelayLine:
    """Sends datagrams on a socket after a fixed delay, in order."""

    def __init__(self, sock, delay_ms, stopping):
        self.sock = sock
        self.delay_ns = int(round(delay_ms * 1e6))
        self.stopping = stopping
        self.pending = queue.Queue()
        self.thread = threading.Thread(target=self._run, daemon=True)
        self.thread.start()

    def send(self, datagram):
        self.pending.put((time.monotonic_ns() + self.delay_ns, datagram))

    def _run(self):
        while not self.stopping.is_set():
            try:
                release_ns, datagram = self.pending.get(timeout=RECV_TIMEOUT_S)
            except queue.Empty:
                continue
            wait_s = (release_ns - time.monotonic_ns()) / 1e9
            if wait_s > 0:
                time.sleep(wait_s)
            _send_quietly(self.sock, datagram)


def _send_quietly(sock, datagram, addr=None):
    try:
        if addr is None:
            sock.send(datagram)
        else:
            sock.sendto(datagram, addr)
    except (ConnectionRefusedError, BlockingIOError):
        pass
    except OSError as e:
        logging.warning(f"Send failed: {e}")


class TunnelServer:
    """Deduplicating echo server.

    Every probe request copy is echoed over the path it arrived on, so the
    reply path set mirrors the client's selection. Load frames are recorded
    per path as (arrival_ts, payload_bytes, send_ts), keeping only the latest
    load flow and at most ``load_history`` frames per path. A datagram in an
    unknown frame version is answered with a VERSION_ERROR frame.

    Parameters
    ----------
    paths : list of PathConfig
        Local addresses to listen on
    dedup_window : int, default 4096
    load_history : int, default 2**20
    """

    def __init__(self, paths, dedup_window=frames.DEFAULT_WINDOW, load_history=LOAD_HISTORY):
        if not paths:
            raise TunnelError("Tunnel server needs at least one path")
        self.paths = list(paths)
        self.dedup = frames.DedupState(dedup_window)
        self.shares = duplication.LinkShareAccounting([p.name for p in self.paths], record_times=False)
        self.load_history = load_history
        self.load_arrivals = {p.name: collections.deque(maxlen=load_history) for p in self.paths}
        self._load_flow = {}
        self.decode_errors = 0
        self._sockets = {}
        self._inbox = queue.Queue()
        self._stopping = threading.Event()
        self._threads = []

    @property
    def addresses(self):
        """Path name to bound (host, port)."""

        return {name: sock.getsockname() for name, sock in self._sockets.items()}

    def start(self):
        try:
            for path in self.paths:
                self._sockets[path.name] = _bind(path)
        except TunnelError:
            self.stop()
            raise
        for name, sock in self._sockets.items():
            thread = threading.Thread(
                target=_receive_loop, args=(name, sock, self._inbox, self._stopping), daemon=True
            )
            thread.start()
            self._threads.append(thread)
        worker = threading.Thread(target=self._serve, daemon=True)
        worker.start()
        self._threads.append(worker)
        logging.info(f"Tunnel server listening on {self.addresses}")
        return self

    def _serve(self):
        while not self._stopping.is_set():
            try:
                name, data, addr, arrival_ts = self._inbox.get(timeout=RECV_TIMEOUT_S)
            except queue.Empty:
                continue
            self.handle_datagram(name, data, addr, arrival_ts)

    def handle_datagram(self, name, data, addr, arrival_ts):
        """Process one received datagram (single consumer)."""

        try:
            frame = frames.decode_frame(data)
        except frames.UnknownVersionError as e:
            self.decode_errors += 1
            logging.error(f"Peer on {name} speaks another frame version: {e}")
            rejection = frames.TunnelFrame(0, 0, 0, frames.FrameKind.VERSION_ERROR, bytes([frames.VERSION]))
            self._reply(name, rejection, addr)
            return
        except frames.FrameDecodeError as e:
            self.decode_errors += 1
            logging.warning(f"Dropping datagram on {name}: {e}")
            return

        if frame.kind == frames.FrameKind.LOAD:
            if self._load_flow.get(name) != frame.flow_id:
                self._load_flow[name] = frame.flow_id
                self.load_arrivals[name].clear()
            self.load_arrivals[name].append((arrival_ts, len(frame.payload), frame.send_ts_ns))
            return
        if frame.kind != frames.FrameKind.PROBE_REQUEST:
            return
        duplication.on_copy_arrival(self.dedup, self.shares, name, frame, arrival_ts)
        self._reply(name, frame.reply(), addr)

    def _reply(self, name, frame, addr):
        sock = self._sockets.get(name)
        if sock is not None:
            _send_quietly(sock, frames.encode_frame(frame), addr)

    def reset_load(self):
        """Forget recorded load arrivals."""

        for arrivals in self.load_arrivals.values():
            arrivals.clear()
        self._load_flow = {}

    def serve_forever(self):
        self.start()
        try:
            while True:
                time.sleep(1.0)
        except KeyboardInterrupt:
            logging.info("Tunnel server interrupted")
        finally:
            self.stop()

    def stop(self):
        self._stopping.set()
        for sock in self._sockets.values():
            sock.close()
        for thread in self._threads:
            thread.join(timeout=1.0)
        self._threads = []

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.stop()


class TunnelClient:
    """Duplicating client: sends each frame over the paths a policy selects.

    Parameters
    ----------
    paths : list of PathConfig
        Each with remote_host and remote_port set
    policy : duplication policy, optional
        Full duplication by default
    dedup_window : int, default 4096
    """

    reproducible = False

    def __init__(self, paths, policy=None, dedup_window=frames.DEFAULT_WINDOW):
        if not paths:
            raise TunnelError("Tunnel client needs at least one path")
        for path in paths:
            if path.remote_host is None or path.remote_port is None:
                raise TunnelError(f"Path {path.name} has no remote address")
        self.paths = {p.name: p for p in paths}
        self.policy = policy or duplication.FullDuplication()
        self.dedup_window = dedup_window
        self.shares = None
        self.link_states = None
        self.decode_errors = 0
        self._sockets = {}
        self._senders = {}
        self._inbox = queue.Queue()
        self._stopping = threading.Event()
        self._threads = []
        self._next_flow = PROBE_FLOW

    def start(self):
        try:
            for name, path in sorted(self.paths.items()):
                sock = _bind(path)
                self._sockets[name] = sock
                sock.connect((path.remote_host, path.remote_port))
        except TunnelError:
            self.close()
            raise
        except OSError as e:
            self.close()
            raise TunnelError(f"Cannot connect tunnel path: {e}") from e
        for name, sock in self._sockets.items():
            if self.paths[name].delay_ms > 0:
                self._senders[name] = _DelayLine(sock, self.paths[name].delay_ms, self._stopping)
            thread = threading.Thread(
                target=_receive_loop, args=(name, sock, self._inbox, self._stopping), daemon=True
            )
            thread.start()
            self._threads.append(thread)
        return self

    def send(self, name, datagram):
        if name in self._senders:
            self._senders[name].send(datagram)
        else:
            _send_quietly(self._sockets[name], datagram)

    def _handle_reply(self, run, name, data, arrival_ts):
        try:
            frame = frames.decode_frame(data)
        except frames.UnknownVersionError as e:
            raise PeerVersionError(f"Server on {name} speaks another frame version: {e}") from e
        except frames.FrameDecodeError as e:
            self.decode_errors += 1
            logging.warning(f"Dropping datagram on {name}: {e}")
            return
        if frame.kind == frames.FrameKind.VERSION_ERROR:
            raise PeerVersionError(f"Server on {name} rejected frame version {frames.VERSION}")
        if frame.kind != frames.FrameKind.PROBE_REPLY or frame.flow_id != run["flow_id"]:
            return
        rtt_ms = _rtt_ms(arrival_ts, frame.send_ts_ns)
        self.link_states[name].observe_rtt(rtt_ms, run["sent_s"].get(frame.seq, 0.0))
        if duplication.on_copy_arrival(run["dedup"], self.shares, name, frame, arrival_ts):
            run["rtts"][frame.seq] = rtt_ms

    def _drain(self, run, until_ns):
        while True:
            timeout = (until_ns - time.monotonic_ns()) / 1e9
            if timeout <= 0:
                return
            try:
                name, data, _, arrival_ts = self._inbox.get(timeout=timeout)
            except queue.Empty:
                return
            self._handle_reply(run, name, data, arrival_ts)

    def probe_round_trips(self, config):
        """Probe RTT over the tunnel.

        Parameters
        ----------
        config : mcdup.measurement.ProbeConfig

        Returns
        -------
        rtts : numpy.ndarray
            RTT (ms) per probe, NaN where no reply came within the outage threshold
        """

        if not self._sockets:
            raise TunnelError("Tunnel client is not started")
        policy = copy.deepcopy(self.policy)
        self.link_states = duplication.make_link_states(policy, self.paths)
        self.shares = duplication.LinkShareAccounting(self.paths)
        run = {
            "flow_id": self._next_flow,
            "dedup": frames.DedupState(self.dedup_window),
            "rtts": {},
            "sent_s": {},
        }
        self._next_flow += 1
        payload = bytes(config.payload_bytes)
        n_probes = config.n_probes
        interval_ns = int(round(config.interval_ms * 1e6))
        start_ns = time.monotonic_ns()
        for seq in range(n_probes):
            self._drain(run, start_ns + seq * interval_ns)
            send_ts = _now_ts()
            frame = frames.TunnelFrame(run["flow_id"], seq, send_ts, frames.FrameKind.PROBE_REQUEST, payload)
            selected = duplication.select_links(policy, frame, self.link_states)
            datagram = frames.encode_frame(frame)
            now_s = send_ts / 1e9
            run["sent_s"][seq] = now_s
            for name in sorted(selected):
                self.link_states[name].note_sent(now_s)
                self.send(name, datagram)
        self._drain(run, time.monotonic_ns() + int(config.outage_threshold_ms * 1e6))

        rtts = np.full(n_probes, np.nan)
        for seq, rtt_ms in run["rtts"].items():
            if rtt_ms <= config.outage_threshold_ms:
                rtts[seq] = rtt_ms
        logging.info(
            f"Probed {n_probes} times over {', '.join(sorted(self.paths))}: "
            f"{int(np.isnan(rtts).sum())} outages"
        )

        return rtts

    def send_load(self, config, flow_id=LOAD_FLOW):
        """Pace constant-rate load frames over every path, one independent flow per path."""

        payload = bytes(config.payload_bytes)
        bits_per_frame = (frames.HEADER_SIZE + config.payload_bytes) * 8
        rate_bps = config.target_mbps * 1e6

        def pace(name):
            start = time.monotonic()
            sent = 0
            while True:
                next_ts = start + sent * bits_per_frame / rate_bps
                if next_ts - start >= config.duration_s:
                    return
                delay = next_ts - time.monotonic()
                if delay > 0:
                    time.sleep(delay)
                frame = frames.TunnelFrame(flow_id, sent, _now_ts(), frames.FrameKind.LOAD, payload)
                self.send(name, frames.encode_frame(frame))
                sent += 1

        senders = [threading.Thread(target=pace, args=(name,)) for name in sorted(self.paths)]
        for thread in senders:
            thread.start()
        for thread in senders:
            thread.join()

    def close(self):
        self._stopping.set()
        for sock in self._sockets.values():
            sock.close()
        for thread in self._threads:
            thread.join(timeout=1.0)
        self._sockets = {}
        self._threads = []

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.close()


class LoopbackTransport:
    """Client and server over local UDP paths in one process.

    Parameters
    ----------
    delays_ms : dict
        Path name to extra client-side delay (ms)
    policy : duplication policy, optional
    host : str, default '127.0.0.1'
    """

    reproducible = False

    def __init__(self, delays_ms, policy=None, host="127.0.0.1"):
        self.delays_ms = dict(delays_ms)
        self.policy = policy
        self.host = host
        self.server = None
        self.client = None

    def start(self):
        self.server = TunnelServer([PathConfig(name, self.host) for name in sorted(self.delays_ms)]).start()
        addresses = self.server.addresses
        paths = [
            PathConfig(name, self.host, 0, *addresses[name], delay_ms=delay)
            for name, delay in sorted(self.delays_ms.items())
        ]
        try:
            self.client = TunnelClient(paths, self.policy).start()
        except TunnelError:
            self.server.stop()
            raise
        return self

    def close(self):
        if self.client is not None:
            self.client.close()
        if self.server is not None:
            self.server.stop()

    def __enter__(self):
        return self.start()

    def __exit__(self, *exc):
        self.close()

    @property
    def shares(self):
        return self.client.shares

    def probe_round_trips(self, config):
        return self.client.probe_round_trips(config)

    def load_deliveries(self, config):
        """Send load over every path and return the server's per-path arrivals."""

        self.server.reset_load()
        start_ts = _now_ts()
        self.client.send_load(config)
        time.sleep(max(self.delays_ms.values(), default=0.0) / 1000.0 + 2 * RECV_TIMEOUT_S)

        deliveries = {}
        for name, arrivals in sorted(self.server.load_arrivals.items()):
            ts, payload, sent = np.array(arrivals, dtype=float).reshape(-1, 3).T
            deliveries[name] = (
                ((ts - start_ts) % frames.TS_MODULUS) / 1e9,
                payload,
                ((sent - start_ts) % frames.TS_MODULUS) / 1e9,
            )

        return deliveries


def tunnel_endpoints(mode, interfaces, policy=None, dedup_window=frames.DEFAULT_WINDOW):
    """Start a live tunnel endpoint.

    Parameters
    ----------
    mode : {'client', 'server'}
    interfaces : list of PathConfig or dict
        Paths (a dict maps path name to PathConfig fields)
    policy : duplication policy, optional
        Client only; full duplication by default
    dedup_window : int, default 4096

    Returns
    -------
    endpoint : TunnelClient or TunnelServer
        Started; close with close() / stop() or use as a context manager

    Raises
    ------
    TunnelError
        If a path cannot be bound or connected
    """

    if isinstance(interfaces, dict):
        interfaces = paths_from_config(interfaces)
    if mode == "client":
        return TunnelClient(interfaces, policy, dedup_window).start()
    if mode == "server":
        return TunnelServer(interfaces, dedup_window).start()
    raise ValueError(f"Unrecognised tunnel mode: {mode}")


def encapsulation_overhead_ms(n_frames=10000, payload_bytes=64):
    """Mean encode plus decode time per frame, in ms."""

    payload = bytes(payload_bytes)
    start = time.perf_counter()
    for seq in range(n_frames):
        frames.decode_frame(frames.encode_frame(frames.TunnelFrame(PROBE_FLOW, seq, seq, payload=payload)))
    elapsed = time.perf_counter() - start

    return elapsed * 1000.0 / n_frames if n_frames else math.nan
