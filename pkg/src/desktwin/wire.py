"""Simulated Ethernet framing and the typed payload codecs.

Frame layout (18 + n bytes, n <= 1500)::

    dst(6) | src(6) | ethertype(2, BE) | payload(n) | fcs(4, BE)

The FCS is the CRC-32 used by IEEE 802.3 (polynomial 0x04C11DB7,
bit-reflected, init 0xFFFFFFFF, final xor 0xFFFFFFFF) computed over
everything before it.  Header fields stay in network byte order; scalars
inside payloads are little-endian.

Payload schemas, identified by a one-byte id at payload offset 0::

    0x01  vehicle telemetry   <5f  x, y, heading, speed, accel
    0x02  steering command    <f   steering angle (rad)
    0x03  speed command       <2f  throttle, brake (each in [0, 1])
    0x04  camera fragment     <5H  frame_seq, index, count, width, height + RGB bytes
    0x05  detection report    <H   speed limit (km/h, 0 = none)

Camera images exceed one payload, so they travel as fragments of at most
1400 data bytes; reassembly is the exact inverse of fragmentation.
Everything here is a pure function over immutable values and safe to use
from any thread.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from typing import Iterable, Union

from .errors import (
    FcsMismatch,
    FragmentMismatch,
    OversizedPayload,
    Truncated,
    UnknownSchema,
)

MTU = 1500
HEADER_LEN = 14
FRAME_OVERHEAD = 18  # header + 4-byte FCS
FRAGMENT_DATA_MAX = 1400

# Local experimental EtherType; the fabric carries exactly one protocol.
ETHERTYPE_SIM = 0x88B5

SCHEMA_TELEMETRY = 0x01
SCHEMA_STEERING = 0x02
SCHEMA_SPEED = 0x03
SCHEMA_CAMERA_FRAGMENT = 0x04
SCHEMA_DETECTION = 0x05

_TELEMETRY = struct.Struct("<5f")
_STEERING = struct.Struct("<f")
_SPEED = struct.Struct("<2f")
_FRAGMENT_HEAD = struct.Struct("<5H")
_DETECTION = struct.Struct("<H")
_ETHERTYPE = struct.Struct(">H")
_FCS = struct.Struct(">I")


def crc32(data: bytes) -> int:
    """CRC-32 over ``data`` with the IEEE 802.3 parameterization."""
    return zlib.crc32(data) & 0xFFFFFFFF


def _f32(value: float) -> float:
    """Round to the nearest binary32, so encode/decode is the identity."""
    return struct.unpack("<f", struct.pack("<f", value))[0]


@dataclass(frozen=True)
class MacAddress:
    octets: bytes

    def __post_init__(self):
        if not isinstance(self.octets, bytes) or len(self.octets) != 6:
            raise ValueError(f"MAC address needs exactly 6 octets, got {self.octets!r}")

    @classmethod
    def parse(cls, text: str) -> "MacAddress":
        parts = text.split(":")
        if len(parts) != 6:
            raise ValueError(f"not a MAC address: {text!r}")
        return cls(bytes(int(p, 16) for p in parts))

    @property
    def is_broadcast(self) -> bool:
        return self.octets == b"\xff" * 6

    def __str__(self) -> str:
        return ":".join(f"{b:02x}" for b in self.octets)


BROADCAST = MacAddress(b"\xff" * 6)


@dataclass(frozen=True)
class VehicleTelemetry:
    """Ego pose and motion; all values quantized to binary32."""

    x: float
    y: float
    heading: float
    speed: float
    accel: float

    def __post_init__(self):
        for name in ("x", "y", "heading", "speed", "accel"):
            object.__setattr__(self, name, _f32(getattr(self, name)))


@dataclass(frozen=True)
class SteeringCommand:
    angle: float

    def __post_init__(self):
        object.__setattr__(self, "angle", _f32(self.angle))


@dataclass(frozen=True)
class SpeedCommand:
    throttle: float
    brake: float

    def __post_init__(self):
        object.__setattr__(self, "throttle", _f32(self.throttle))
        object.__setattr__(self, "brake", _f32(self.brake))


@dataclass(frozen=True)
class CameraFragment:
    frame_seq: int
    fragment_index: int
    fragment_count: int
    width: int
    height: int
    data: bytes


@dataclass(frozen=True)
class DetectionReport:
    limit_kmh: int


@dataclass(frozen=True)
class RawPayload:
    """Payload whose schema id this codec does not know; bytes kept as-is."""

    schema_id: int
    data: bytes


@dataclass(frozen=True)
class CameraFrame:
    """Row-major RGB image; ``pixels`` holds width * height * 3 bytes."""

    width: int
    height: int
    pixels: bytes

    def __post_init__(self):
        if not (0 < self.width <= 0xFFFF and 0 < self.height <= 0xFFFF):
            raise ValueError(f"bad camera geometry {self.width}x{self.height}")
        if len(self.pixels) != self.width * self.height * 3:
            raise ValueError(
                f"pixel buffer holds {len(self.pixels)} bytes, "
                f"expected {self.width * self.height * 3}"
            )


Payload = Union[
    VehicleTelemetry,
    SteeringCommand,
    SpeedCommand,
    CameraFragment,
    DetectionReport,
    RawPayload,
]


def encode_payload(payload: Payload) -> bytes:
    if isinstance(payload, VehicleTelemetry):
        return bytes([SCHEMA_TELEMETRY]) + _TELEMETRY.pack(
            payload.x, payload.y, payload.heading, payload.speed, payload.accel
        )
    if isinstance(payload, SteeringCommand):
        return bytes([SCHEMA_STEERING]) + _STEERING.pack(payload.angle)
    if isinstance(payload, SpeedCommand):
        return bytes([SCHEMA_SPEED]) + _SPEED.pack(payload.throttle, payload.brake)
    if isinstance(payload, CameraFragment):
        head = _FRAGMENT_HEAD.pack(
            payload.frame_seq,
            payload.fragment_index,
            payload.fragment_count,
            payload.width,
            payload.height,
        )
        return bytes([SCHEMA_CAMERA_FRAGMENT]) + head + payload.data
    if isinstance(payload, DetectionReport):
        return bytes([SCHEMA_DETECTION]) + _DETECTION.pack(payload.limit_kmh)
    if isinstance(payload, RawPayload):
        return bytes([payload.schema_id]) + payload.data
    raise TypeError(f"not a payload: {payload!r}")


def decode_payload(data: bytes) -> Payload:
    """Parse a typed payload; raises UnknownSchema for ids not listed above."""
    if len(data) < 1:
        raise Truncated("empty payload")
    sid = data[0]
    body = data[1:]
    if sid == SCHEMA_TELEMETRY:
        if len(body) != _TELEMETRY.size:
            raise Truncated(f"telemetry payload has {len(body)} body bytes")
        return VehicleTelemetry(*_TELEMETRY.unpack(body))
    if sid == SCHEMA_STEERING:
        if len(body) != _STEERING.size:
            raise Truncated(f"steering payload has {len(body)} body bytes")
        return SteeringCommand(*_STEERING.unpack(body))
    if sid == SCHEMA_SPEED:
        if len(body) != _SPEED.size:
            raise Truncated(f"speed payload has {len(body)} body bytes")
        return SpeedCommand(*_SPEED.unpack(body))
    if sid == SCHEMA_CAMERA_FRAGMENT:
        if len(body) < _FRAGMENT_HEAD.size:
            raise Truncated(f"camera fragment has {len(body)} body bytes")
        seq, index, count, width, height = _FRAGMENT_HEAD.unpack_from(body)
        return CameraFragment(seq, index, count, width, height, body[_FRAGMENT_HEAD.size:])
    if sid == SCHEMA_DETECTION:
        if len(body) != _DETECTION.size:
            raise Truncated(f"detection payload has {len(body)} body bytes")
        return DetectionReport(_DETECTION.unpack(body)[0])
    raise UnknownSchema(sid)


@dataclass(frozen=True)
class EthernetFrame:
    dst: MacAddress
    src: MacAddress
    ethertype: int
    payload: bytes
    fcs: int


def make_frame(
    dst: MacAddress,
    src: MacAddress,
    payload: Union[bytes, Payload],
    ethertype: int = ETHERTYPE_SIM,
) -> EthernetFrame:
    """Build a frame with a freshly computed FCS; accepts typed payloads."""
    raw = payload if isinstance(payload, bytes) else encode_payload(payload)
    if len(raw) > MTU:
        raise OversizedPayload(f"payload of {len(raw)} bytes exceeds MTU {MTU}")
    head = dst.octets + src.octets + _ETHERTYPE.pack(ethertype) + raw
    return EthernetFrame(dst, src, ethertype, raw, crc32(head))


def encode_frame(frame: EthernetFrame) -> bytes:
    """Serialize; the FCS is recomputed, never trusted from the input."""
    if len(frame.payload) > MTU:
        raise OversizedPayload(
            f"payload of {len(frame.payload)} bytes exceeds MTU {MTU}"
        )
    head = (
        frame.dst.octets
        + frame.src.octets
        + _ETHERTYPE.pack(frame.ethertype)
        + frame.payload
    )
    return head + _FCS.pack(crc32(head))


def decode_frame(data: bytes) -> EthernetFrame:
    """Parse and verify a frame; FcsMismatch means drop it and count it."""
    if len(data) < FRAME_OVERHEAD:
        raise Truncated(f"frame of {len(data)} bytes is below the 18-byte minimum")
    if len(data) - FRAME_OVERHEAD > MTU:
        raise OversizedPayload(f"frame of {len(data)} bytes exceeds MTU {MTU}")
    stored = _FCS.unpack(data[-4:])[0]
    actual = crc32(data[:-4])
    if stored != actual:
        raise FcsMismatch(f"fcs 0x{stored:08x} != computed 0x{actual:08x}")
    return EthernetFrame(
        dst=MacAddress(data[0:6]),
        src=MacAddress(data[6:12]),
        ethertype=_ETHERTYPE.unpack(data[12:14])[0],
        payload=data[14:-4],
        fcs=stored,
    )


def fragment_payload(image: CameraFrame, frame_seq: int) -> list[CameraFragment]:
    """Split an image into fragments of at most FRAGMENT_DATA_MAX data bytes."""
    data = image.pixels
    count = (len(data) + FRAGMENT_DATA_MAX - 1) // FRAGMENT_DATA_MAX
    if count > 0xFFFF:
        raise OversizedPayload(f"image needs {count} fragments, limit is 65535")
    return [
        CameraFragment(
            frame_seq=frame_seq,
            fragment_index=i,
            fragment_count=count,
            width=image.width,
            height=image.height,
            data=data[i * FRAGMENT_DATA_MAX : (i + 1) * FRAGMENT_DATA_MAX],
        )
        for i in range(count)
    ]


def reassemble_fragments(fragments: Iterable[CameraFragment]) -> CameraFrame:
    """Exact inverse of fragment_payload; raises FragmentMismatch otherwise."""
    frags = sorted(fragments, key=lambda f: f.fragment_index)
    if not frags:
        raise FragmentMismatch("no fragments")
    first = frags[0]
    if any(
        f.frame_seq != first.frame_seq
        or f.fragment_count != first.fragment_count
        or f.width != first.width
        or f.height != first.height
        for f in frags
    ):
        raise FragmentMismatch("fragments disagree on sequence, count or geometry")
    if [f.fragment_index for f in frags] != list(range(first.fragment_count)):
        raise FragmentMismatch(
            f"got indices {[f.fragment_index for f in frags]} "
            f"for a count of {first.fragment_count}"
        )
    pixels = b"".join(f.data for f in frags)
    if len(pixels) != first.width * first.height * 3:
        raise FragmentMismatch(
            f"reassembled {len(pixels)} bytes for a "
            f"{first.width}x{first.height} image"
        )
    return CameraFrame(first.width, first.height, pixels)
