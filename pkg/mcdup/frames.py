"""Tunnel frame wire format and first-arrival deduplication."""

import struct
from dataclasses import dataclass
from enum import IntEnum


MAGIC = 0x4D43
VERSION = 0x01

# magic, version, kind, flow_id, seq, send_ts (48 bit as hi16 + lo32), payload_len
HEADER = struct.Struct(">HBBIQHIH")
HEADER_SIZE = HEADER.size
MAX_DATAGRAM = 65507
MAX_PAYLOAD = MAX_DATAGRAM - HEADER_SIZE
TS_MODULUS = 1 << 48

DEFAULT_WINDOW = 4096


class FrameKind(IntEnum):
    PROBE_REQUEST = 0
    PROBE_REPLY = 1
    LOAD = 2
    VERSION_ERROR = 3


class FrameError(ValueError):
    """Base class for tunnel wire format errors."""


class FrameEncodeError(FrameError):
    """A frame cannot be represented on the wire."""


class FrameDecodeError(FrameError):
    """A datagram is not a valid tunnel frame."""


class ShortBufferError(FrameDecodeError):
    pass


class BadMagicError(FrameDecodeError):
    pass


class UnknownVersionError(FrameDecodeError):
    pass


class UnknownKindError(FrameDecodeError):
    pass


class LengthMismatchError(FrameDecodeError):
    pass


@dataclass(frozen=True)
class TunnelFrame:
    """One sequence-numbered datagram, the unit duplicated over links.

    Parameters
    ----------
    flow_id : int
        Unsigned 32-bit flow identifier
    seq : int
        Unsigned 64-bit sequence number, strictly increasing per flow at the sender
    send_ts_ns : int
        Sender monotonic clock in nanoseconds (carried modulo 2**48 on the wire)
    kind : FrameKind
        Probe request, probe reply, load data or version error
    payload : bytes
        Frame body
    """

    flow_id: int
    seq: int
    send_ts_ns: int
    kind: FrameKind = FrameKind.PROBE_REQUEST
    payload: bytes = b""

    @property
    def wire_size(self):
        return HEADER_SIZE + len(self.payload)

    def reply(self):
        """Echo of a probe request (same flow, seq and timestamp)."""

        return TunnelFrame(
            self.flow_id, self.seq, self.send_ts_ns, FrameKind.PROBE_REPLY, self.payload
        )


def encode_frame(frame):
    """Encode a frame as a datagram.

    Parameters
    ----------
    frame : TunnelFrame

    Returns
    -------
    datagram : bytes
        24-byte big-endian header followed by the payload

    Raises
    ------
    FrameEncodeError
        If the payload is larger than MAX_PAYLOAD or a header field is out of range
    """

    payload = bytes(frame.payload)
    if len(payload) > MAX_PAYLOAD:
        raise FrameEncodeError(
            f"Payload of {len(payload)} bytes exceeds the {MAX_PAYLOAD} byte maximum"
        )
    if not 0 <= frame.flow_id < 1 << 32:
        raise FrameEncodeError(f"flow_id out of range: {frame.flow_id}")
    if not 0 <= frame.seq < 1 << 64:
        raise FrameEncodeError(f"seq out of range: {frame.seq}")
    if not 0 <= frame.send_ts_ns < TS_MODULUS:
        raise FrameEncodeError(f"send_ts_ns out of range: {frame.send_ts_ns}")

    header = HEADER.pack(
        MAGIC,
        VERSION,
        int(frame.kind),
        frame.flow_id,
        frame.seq,
        frame.send_ts_ns >> 32,
        frame.send_ts_ns & 0xFFFFFFFF,
        len(payload),
    )

    return header + payload


def decode_frame(datagram):
    """Decode a datagram produced by encode_frame.

    Parameters
    ----------
    datagram : bytes-like

    Returns
    -------
    frame : TunnelFrame

    Raises
    ------
    ShortBufferError, BadMagicError, UnknownVersionError, UnknownKindError, LengthMismatchError
    """

    if len(datagram) < HEADER_SIZE:
        raise ShortBufferError(
            f"Datagram of {len(datagram)} bytes is shorter than the {HEADER_SIZE} byte header"
        )
    magic, version, kind, flow_id, seq, ts_hi, ts_lo, payload_len = HEADER.unpack_from(
        datagram
    )
    if magic != MAGIC:
        raise BadMagicError(f"Bad magic: {magic:#06x}")
    if version != VERSION:
        raise UnknownVersionError(f"Unknown frame version: {version}")
    try:
        kind = FrameKind(kind)
    except ValueError:
        raise UnknownKindError(f"Unknown frame kind: {kind}")
    if len(datagram) - HEADER_SIZE != payload_len:
        raise LengthMismatchError(
            f"Header claims {payload_len} payload bytes, datagram carries {len(datagram) - HEADER_SIZE}"
        )

    return TunnelFrame(
        flow_id, seq, (ts_hi << 32) | ts_lo, kind, bytes(datagram[HEADER_SIZE:])
    )


class _FlowWindow:
    __slots__ = ("top", "contiguous", "slots")

    def __init__(self, window):
        self.top = -1
        self.contiguous = -1
        self.slots = [-1] * window


class DedupState:
    """Receiver-side first-arrival state.

    Each flow keeps a ring of W slots indexed by seq modulo W, so memory per
    flow is O(W) regardless of stream length. Seqs at or below ``top - W``
    are outside the window and rejected.

    Not thread safe: owned by a single receiver context.

    Parameters
    ----------
    window : int, default 4096
        Number of recent seqs remembered per flow
    """

    def __init__(self, window=DEFAULT_WINDOW):
        if window < 1:
            raise ValueError(f"Dedup window must be positive: {window}")
        self.window = window
        self.evictions = 0
        self._flows = {}

    def highest(self, flow_id):
        """Highest seq accepted for a flow (-1 if none)."""

        flow = self._flows.get(flow_id)
        return -1 if flow is None else flow.top

    def highest_contiguous(self, flow_id):
        """Largest seq s such that every seq up to s is accepted or out of window."""

        flow = self._flows.get(flow_id)
        return -1 if flow is None else flow.contiguous


def dedup_accept(state, flow_id, seq):
    """Decide whether a copy is the first sighting of (flow_id, seq).

    Parameters
    ----------
    state : DedupState
        Mutated in place
    flow_id : int
    seq : int

    Returns
    -------
    accepted : bool
        True on the first sighting inside the window, False for duplicates
        and for stale seqs below the window
    """

    flow = state._flows.get(flow_id)
    if flow is None:
        flow = _FlowWindow(state.window)
        state._flows[flow_id] = flow

    window = state.window
    if flow.top >= 0 and seq <= flow.top - window:
        return False

    slot = seq % window
    occupant = flow.slots[slot]
    if occupant == seq:
        return False
    if occupant >= 0:
        state.evictions += 1
    flow.slots[slot] = seq
    if seq > flow.top:
        flow.top = seq

    floor = flow.top - window
    if flow.contiguous < floor:
        flow.contiguous = floor
    slots = flow.slots
    nxt = flow.contiguous + 1
    while nxt <= flow.top and slots[nxt % window] == nxt:
        flow.contiguous = nxt
        nxt += 1

    return True
