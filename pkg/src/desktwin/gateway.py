"""Client-side SDK: joins a session and drives the GRANT/DONE loop.

A handle hides the control protocol and the frame codec from client
logic.  Each step it decodes the granted frames into typed payloads,
merges camera fragments into whole images, hands the inbox to a compute
function exactly once, and ships the outputs with the client's own MAC
as source (the API cannot spoof another sender).  Corrupt frames are
dropped and counted, never surfaced.

A handle has a single owner: one logical thread calls connect and step.
"""

from __future__ import annotations

import enum
from collections import OrderedDict
from typing import Callable, Optional, Union

from . import protocol
from .errors import (
    ClientTimeout,
    FcsMismatch,
    FragmentMismatch,
    ProtocolError,
    Refused,
    RosterMismatch,
    TransportError,
    Truncated,
    UnknownSchema,
    WireError,
)
from .protocol import Bye, Done, Grant, Hello, HelloAck
from .transport import Connection, tcp_connect
from .wire import (
    CameraFragment,
    CameraFrame,
    MacAddress,
    Payload,
    RawPayload,
    decode_frame,
    decode_payload,
    encode_frame,
    make_frame,
    reassemble_fragments,
)

InboxEntry = tuple[MacAddress, Union[Payload, CameraFrame]]
ComputeFn = Callable[[list], list]

_HANDSHAKE_TIMEOUT = 30.0
_MAX_PENDING_IMAGES = 8


class StepStatus(enum.Enum):
    RUNNING = "running"
    FINISHED = "finished"


class ClientHandle:
    def __init__(self, conn: Connection, name: str, mac: MacAddress, ack: HelloAck):
        self.conn = conn
        self.name = name
        self.mac = mac
        self.port_id = ack.port_id
        self.dt_ns = ack.dt_ns
        self.total_steps = ack.total_steps
        self.step_index = 0
        self.finished = False
        self.fcs_drops = 0
        self.fragment_drops = 0
        self._pending: "OrderedDict" = OrderedDict()  # (src, seq) -> {idx: fragment}
        self._closed = False

    @property
    def dt(self) -> float:
        return self.dt_ns / 1e9

    def close(self) -> None:
        if not self._closed:
            self._closed = True
            self.conn.close()

    def step(self, compute: ComputeFn) -> StepStatus:
        return step(self, compute)


def connect(endpoint: Union[str, Connection], name: str, mac: MacAddress) -> ClientHandle:
    """Join a session; ``endpoint`` is host:port or an open connection."""
    conn = endpoint if isinstance(endpoint, Connection) else tcp_connect(endpoint)
    conn.send_message(protocol.encode_message(Hello(name, mac)))
    body = conn.recv_message(_HANDSHAKE_TIMEOUT)
    if body is None:
        raise TransportError("backplane closed the connection during handshake")
    msg = protocol.decode_message(body)
    if isinstance(msg, HelloAck):
        return ClientHandle(conn, name, mac, msg)
    if isinstance(msg, Bye):
        if msg.reason == protocol.BYE_ROSTER_MISMATCH:
            raise RosterMismatch(f"server does not expect client {name!r} with {mac}")
        if msg.reason == protocol.BYE_DUPLICATE:
            raise Refused(f"client {name!r} is already connected")
        raise Refused(f"server refused the connection (reason {msg.reason})")
    raise ProtocolError(f"expected HELLO_ACK, got {type(msg).__name__}")


def _merge_fragment(handle: ClientHandle, src: MacAddress, frag: CameraFragment):
    """Buffer a fragment; returns the whole image once the set completes."""
    key = (src.octets, frag.frame_seq)
    slot = handle._pending.setdefault(key, {})
    slot[frag.fragment_index] = frag
    while len(handle._pending) > _MAX_PENDING_IMAGES:
        handle._pending.popitem(last=False)
        handle.fragment_drops += 1
    if len(slot) < frag.fragment_count:
        return None
    del handle._pending[key]
    try:
        return reassemble_fragments(list(slot.values()))
    except FragmentMismatch:
        handle.fragment_drops += 1
        return None


def _decode_inbox(handle: ClientHandle, frames) -> list:
    inbox: list = []
    for raw in frames:
        try:
            frame = decode_frame(raw)
        except FcsMismatch:
            handle.fcs_drops += 1
            continue
        except WireError:
            handle.fcs_drops += 1
            continue
        try:
            payload = decode_payload(frame.payload)
        except UnknownSchema:
            payload = RawPayload(frame.payload[0], frame.payload[1:])
        except Truncated:
            sid = frame.payload[0] if frame.payload else 0
            payload = RawPayload(sid, frame.payload[1:])
        if isinstance(payload, CameraFragment):
            image = _merge_fragment(handle, frame.src, payload)
            if image is not None:
                inbox.append((frame.src, image))
            continue
        inbox.append((frame.src, payload))
    return inbox


def step(handle: ClientHandle, compute: ComputeFn) -> StepStatus:
    """Run one step: wait for the grant, compute once, send the done.

    Returns FINISHED after the last step of the session.
    """
    if handle.finished:
        raise ProtocolError("step() called after the session finished")
    body = handle.conn.recv_message(None)
    if body is None:
        raise TransportError("backplane closed the connection")
    msg = protocol.decode_message(body)
    if isinstance(msg, Bye):
        if msg.reason == protocol.BYE_COMPLETE:
            handle.finished = True
            return StepStatus.FINISHED
        if msg.reason == protocol.BYE_TIMEOUT:
            raise ClientTimeout("session aborted: a client missed the barrier")
        raise TransportError(f"session aborted by the backplane (reason {msg.reason})")
    if not isinstance(msg, Grant):
        raise ProtocolError(f"expected GRANT, got {type(msg).__name__}")
    if msg.step != handle.step_index:
        raise ProtocolError(
            f"out-of-order grant: expected step {handle.step_index}, got {msg.step}"
        )

    inbox = _decode_inbox(handle, msg.frames)
    outputs = compute(inbox)
    frames = tuple(
        encode_frame(make_frame(dst, handle.mac, payload)) for dst, payload in outputs
    )
    handle.conn.send_message(protocol.encode_message(Done(msg.step, frames)))
    handle.step_index += 1
    if handle.step_index == handle.total_steps:
        handle.finished = True
        return StepStatus.FINISHED
    return StepStatus.RUNNING


def drive(handle: ClientHandle, compute: ComputeFn) -> int:
    """Step until the session finishes; returns the number of steps run."""
    while step(handle, compute) is StepStatus.RUNNING:
        pass
    return handle.step_index
