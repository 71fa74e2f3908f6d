"""Control-channel messages spoken between the backplane and its clients.

Every message on a control stream is::

    length(4, LE u32) | type(1) | body

where ``length`` counts the type byte plus the body.  All integers in
bodies are little-endian.  Message types:

    0x01  HELLO      name_len(2) | name(utf-8) | mac(6)
    0x02  HELLO_ACK  port_id(2) | dt_ns(8) | total_steps(8)
    0x03  GRANT      step(8) | frame_count(2) | { frame_len(2) | frame }*
    0x04  DONE       step(8) | frame_count(2) | { frame_len(2) | frame }*
    0x05  BYE        reason(1)

Frames inside GRANT/DONE are encoded Ethernet frames, each prefixed with
its own u16 length.  Transports exchange the ``type | body`` section; the
length prefix is the transport's framing and is added/stripped there.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import Union

from .errors import ProtocolError
from .wire import MacAddress

MSG_HELLO = 0x01
MSG_HELLO_ACK = 0x02
MSG_GRANT = 0x03
MSG_DONE = 0x04
MSG_BYE = 0x05

BYE_COMPLETE = 0x00
BYE_ROSTER_MISMATCH = 0x01
BYE_DUPLICATE = 0x02
BYE_PROTOCOL_ERROR = 0x03
BYE_TIMEOUT = 0x04
BYE_INTERNAL = 0x05

# Sanity cap on a single control message; a full camera image plus framing
# fits well below this.
MAX_MESSAGE = 1 << 24

_ACK = struct.Struct("<HQQ")
_STEP_HEAD = struct.Struct("<QH")
_U16 = struct.Struct("<H")


@dataclass(frozen=True)
class Hello:
    name: str
    mac: MacAddress


@dataclass(frozen=True)
class HelloAck:
    port_id: int
    dt_ns: int
    total_steps: int


@dataclass(frozen=True)
class Grant:
    step: int
    frames: tuple = field(default_factory=tuple)  # encoded EthernetFrame bytes


@dataclass(frozen=True)
class Done:
    step: int
    frames: tuple = field(default_factory=tuple)


@dataclass(frozen=True)
class Bye:
    reason: int


Message = Union[Hello, HelloAck, Grant, Done, Bye]


def _pack_frames(step: int, frames) -> bytes:
    if len(frames) > 0xFFFF:
        raise ProtocolError(f"{len(frames)} frames in one step exceeds 65535")
    parts = [_STEP_HEAD.pack(step, len(frames))]
    for f in frames:
        parts.append(_U16.pack(len(f)))
        parts.append(f)
    return b"".join(parts)


def _unpack_frames(body: bytes, kind: str) -> tuple[int, tuple]:
    if len(body) < _STEP_HEAD.size:
        raise ProtocolError(f"truncated {kind}")
    step, count = _STEP_HEAD.unpack_from(body)
    frames = []
    offset = _STEP_HEAD.size
    for _ in range(count):
        if len(body) < offset + 2:
            raise ProtocolError(f"truncated frame table in {kind}")
        (flen,) = _U16.unpack_from(body, offset)
        offset += 2
        if len(body) < offset + flen:
            raise ProtocolError(f"truncated frame in {kind}")
        frames.append(body[offset : offset + flen])
        offset += flen
    if offset != len(body):
        raise ProtocolError(f"{len(body) - offset} trailing bytes in {kind}")
    return step, tuple(frames)


def encode_message(msg: Message) -> bytes:
    """Serialize the ``type | body`` section; transports add the length."""
    if isinstance(msg, Hello):
        name = msg.name.encode("utf-8")
        if len(name) > 0xFFFF:
            raise ProtocolError("client name too long")
        body = bytes([MSG_HELLO]) + _U16.pack(len(name)) + name + msg.mac.octets
    elif isinstance(msg, HelloAck):
        body = bytes([MSG_HELLO_ACK]) + _ACK.pack(msg.port_id, msg.dt_ns, msg.total_steps)
    elif isinstance(msg, Grant):
        body = bytes([MSG_GRANT]) + _pack_frames(msg.step, msg.frames)
    elif isinstance(msg, Done):
        body = bytes([MSG_DONE]) + _pack_frames(msg.step, msg.frames)
    elif isinstance(msg, Bye):
        body = bytes([MSG_BYE, msg.reason])
    else:
        raise TypeError(f"not a control message: {msg!r}")
    return body


def decode_message(body: bytes) -> Message:
    """Parse the ``type | body`` section of a control message."""
    if not body:
        raise ProtocolError("empty control message")
    mtype = body[0]
    rest = body[1:]
    if mtype == MSG_HELLO:
        if len(rest) < 2:
            raise ProtocolError("truncated HELLO")
        (name_len,) = _U16.unpack_from(rest)
        if len(rest) != 2 + name_len + 6:
            raise ProtocolError("HELLO length mismatch")
        name = rest[2 : 2 + name_len].decode("utf-8")
        return Hello(name, MacAddress(rest[2 + name_len :]))
    if mtype == MSG_HELLO_ACK:
        if len(rest) != _ACK.size:
            raise ProtocolError("HELLO_ACK length mismatch")
        return HelloAck(*_ACK.unpack(rest))
    if mtype == MSG_GRANT:
        step, frames = _unpack_frames(rest, "GRANT")
        return Grant(step, frames)
    if mtype == MSG_DONE:
        step, frames = _unpack_frames(rest, "DONE")
        return Done(step, frames)
    if mtype == MSG_BYE:
        if len(rest) != 1:
            raise ProtocolError("BYE length mismatch")
        return Bye(rest[0])
    raise ProtocolError(f"unknown control message type 0x{mtype:02x}")
