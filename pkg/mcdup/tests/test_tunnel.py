"""Test the live UDP tunnel over loopback sockets."""

import socket

import numpy as np
import pytest

from mcdup.duplication import PrimaryWithBackup
from mcdup.frames import VERSION, FrameKind, TunnelFrame, decode_frame, encode_frame
from mcdup.measurement import LoadConfig, ProbeConfig, run_latency_probe, run_load
from mcdup.tunnel import (
    RECV_BUFFER,
    LoopbackTransport,
    PathConfig,
    PeerVersionError,
    TunnelClient,
    TunnelError,
    TunnelServer,
    encapsulation_overhead_ms,
    paths_from_config,
    tunnel_endpoints,
)


def test_loopback_probe_first_arrival():
    """The undelayed path wins and every probe is answered."""
    with LoopbackTransport({"fast": 0.0, "slow": 30.0}) as transport:
        series = run_latency_probe(transport, ProbeConfig(duration_s=1.0, interval_ms=50.0))
        shares = transport.shares
        server_shares = transport.server.shares
    assert len(series) == 20
    assert series.outage_probability == 0.0
    assert np.median(series.values) < 30.0
    assert shares.counts["fast"] >= 18
    assert server_shares.total == 20


def test_loopback_delayed_path_matches_solo_fast_path():
    """With one path delayed by 50 ms the median RTT stays within 5 ms of the fast path alone."""
    config = ProbeConfig(duration_s=2.0, interval_ms=20.0)
    with LoopbackTransport({"fast": 0.0, "slow": 50.0}) as transport:
        duplicated = run_latency_probe(transport, config)
    with LoopbackTransport({"fast": 0.0}) as transport:
        solo = run_latency_probe(transport, config)
    assert duplicated.outage_probability == 0.0
    assert abs(np.median(duplicated.valid_values) - np.median(solo.valid_values)) < 5.0


def test_loopback_policy_single_path():
    """A healthy primary is the only path used."""
    with LoopbackTransport({"a": 0.0, "b": 0.0}, PrimaryWithBackup("b")) as transport:
        run_latency_probe(transport, ProbeConfig(duration_s=0.5, interval_ms=50.0))
        shares = transport.shares
    assert shares.counts == {"a": 0, "b": 10}


def test_loopback_load():
    """Load frames arrive at the server over every path."""
    with LoopbackTransport({"a": 0.0, "b": 0.0}) as transport:
        series = run_load(transport, LoadConfig(duration_s=1.0, target_mbps=1.0, payload_bytes=1000))
    assert len(series) == 1
    assert series.values[0] > 0.5
    assert sorted(series.metadata["links"]) == ["a", "b"]


def test_server_drops_garbage():
    """Undecodable datagrams are counted and dropped."""
    server = TunnelServer([PathConfig("a")])
    server.handle_datagram("a", b"not a frame", ("127.0.0.1", 9), 0)
    datagram = bytearray(encode_frame(TunnelFrame(1, 0, 0)))
    datagram[2] = 7
    server.handle_datagram("a", bytes(datagram), ("127.0.0.1", 9), 0)
    assert server.decode_errors == 2
    assert server.shares.total == 0


def test_server_records_load():
    """Load frames are recorded per path, not echoed."""
    server = TunnelServer([PathConfig("a")])
    frame = TunnelFrame(2, 0, 0, kind=2, payload=bytes(100))
    server.handle_datagram("a", encode_frame(frame), ("127.0.0.1", 9), 123)
    assert list(server.load_arrivals["a"]) == [(123, 100, 0)]


def test_server_load_history_bounded():
    """Only the latest load flow is kept, up to the history limit."""
    server = TunnelServer([PathConfig("a")], load_history=5)
    for seq in range(20):
        server.handle_datagram("a", encode_frame(TunnelFrame(2, seq, seq, FrameKind.LOAD, bytes(10))), None, seq)
    assert [send_ts for _, _, send_ts in server.load_arrivals["a"]] == [15, 16, 17, 18, 19]
    server.handle_datagram("a", encode_frame(TunnelFrame(3, 0, 50, FrameKind.LOAD, bytes(10))), None, 60)
    assert list(server.load_arrivals["a"]) == [(60, 10, 50)]
    server.reset_load()
    assert len(server.load_arrivals["a"]) == 0


def _foreign_version(frame):
    datagram = bytearray(encode_frame(frame))
    datagram[2] = VERSION + 1
    return bytes(datagram)


def test_server_answers_foreign_version():
    """A frame in another version gets a version error reply."""
    with TunnelServer([PathConfig("a")]) as server:
        sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        sock.settimeout(2.0)
        try:
            sock.sendto(_foreign_version(TunnelFrame(1, 0, 0)), server.addresses["a"])
            reply = decode_frame(sock.recv(RECV_BUFFER))
        finally:
            sock.close()
    assert reply.kind == FrameKind.VERSION_ERROR
    assert reply.payload == bytes([VERSION])
    assert server.decode_errors == 1


def test_client_raises_on_version_error():
    """A version error reply stops the client with PeerVersionError."""
    client = TunnelClient([PathConfig("a", remote_host="127.0.0.1", remote_port=9)])
    run = {"flow_id": 1}
    rejection = TunnelFrame(0, 0, 0, FrameKind.VERSION_ERROR, bytes([VERSION]))
    with pytest.raises(PeerVersionError):
        client._handle_reply(run, "a", encode_frame(rejection), 0)
    with pytest.raises(PeerVersionError):
        client._handle_reply(run, "a", _foreign_version(TunnelFrame(1, 0, 0, FrameKind.PROBE_REPLY)), 0)


def test_client_needs_remote():
    """Client paths need a remote address."""
    with pytest.raises(TunnelError):
        TunnelClient([PathConfig("a")])


def test_bind_failure():
    """An unbindable address is a tunnel error."""
    with pytest.raises(TunnelError):
        TunnelServer([PathConfig("a", local_host="203.0.113.1")]).start()


def test_tunnel_endpoints_mode():
    """Unknown endpoint modes are rejected."""
    with pytest.raises(ValueError):
        tunnel_endpoints("relay", [PathConfig("a")])


def test_paths_from_config():
    """Paths are built from a mapping."""
    paths = paths_from_config({"b": {"local_port": 5001}, "a": None})
    assert [p.name for p in paths] == ["a", "b"]
    assert paths[1].local_port == 5001


def test_encapsulation_overhead():
    """Encoding plus decoding a frame costs well under a millisecond."""
    assert encapsulation_overhead_ms(2000) < 1.0
