"""Sign decoding from camera frames and PI speed regulation.

The detector thresholds red pixels, takes the largest 4-connected
component, fits its bounding circle, and reads the 8 stripe positions
across the middle half of the disc; stripes darker than 50% gray count
as set bits.  Values outside the supported limit set are rejected, as
are components that touch the image border or are far from square.

The PI controller turns the difference between the target speed and the
current speed into one pedal at a time: positive output drives the
throttle, negative output the brake.  The integrator only accumulates
while the output is unsaturated, so it cannot wind up.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import ndimage

from .environment import SUPPORTED_LIMITS, stripe_x_bounds
from .errors import MalformedFrame
from .wire import (
    BROADCAST,
    CameraFrame,
    DetectionReport,
    MacAddress,
    SpeedCommand,
    VehicleTelemetry,
)

RED_R_MIN = 128
RED_GB_MAX = 64
MIN_COMPONENT_PX = 20
MIN_DECODE_RADIUS = 6.0
GRAY_THRESHOLD = 127.5


@dataclass(frozen=True)
class Detection:
    limit_kmh: int
    center: Optional[tuple[float, float]] = None
    radius: float = 0.0


_NO_DETECTION = Detection(0)


def detect_sign(frame: CameraFrame) -> Detection:
    """Decode the stripe glyph in a frame, or report no detection."""
    expected = frame.width * frame.height * 3
    if len(frame.pixels) != expected:
        raise MalformedFrame(
            f"{len(frame.pixels)} pixel bytes for {frame.width}x{frame.height}"
        )
    img = np.frombuffer(frame.pixels, dtype=np.uint8).reshape(
        frame.height, frame.width, 3
    )
    mask = (
        (img[:, :, 0] > RED_R_MIN)
        & (img[:, :, 1] < RED_GB_MAX)
        & (img[:, :, 2] < RED_GB_MAX)
    )
    if int(mask.sum()) < MIN_COMPONENT_PX:
        return _NO_DETECTION

    labels, n = ndimage.label(mask)  # default structure = 4-connectivity
    if n == 0:
        return _NO_DETECTION
    sizes = np.bincount(labels.ravel())
    sizes[0] = 0
    best = int(sizes.argmax())
    if sizes[best] < MIN_COMPONENT_PX:
        return _NO_DETECTION

    ys, xs = np.nonzero(labels == best)
    x0, x1 = int(xs.min()), int(xs.max())
    y0, y1 = int(ys.min()), int(ys.max())
    if x0 == 0 or y0 == 0 or x1 == frame.width - 1 or y1 == frame.height - 1:
        return _NO_DETECTION  # clipped glyph: stripe geometry unrecoverable
    bw, bh = x1 - x0, y1 - y0
    if abs(bw - bh) > max(2, round(0.2 * max(bw, bh))):
        return _NO_DETECTION

    ccx = (x0 + x1) / 2.0
    ccy = (y0 + y1) / 2.0
    cr = (bw + bh) / 4.0
    if cr < MIN_DECODE_RADIUS:
        return _NO_DETECTION

    lum = img.mean(axis=2)
    row_lo = math.ceil(ccy - cr / 4.0)
    row_hi = math.floor(ccy + cr / 4.0)
    value = 0
    for k in range(8):
        lo, hi = stripe_x_bounds(ccx, cr, k)
        col_lo, col_hi = math.ceil(lo), math.ceil(hi)
        if col_hi <= col_lo or row_hi < row_lo:
            return _NO_DETECTION  # too small to resolve all 8 stripes
        sample = lum[row_lo : row_hi + 1, col_lo:col_hi]
        if float(sample.mean()) < GRAY_THRESHOLD:
            value |= 1 << (7 - k)
    if value not in SUPPORTED_LIMITS:
        return _NO_DETECTION
    return Detection(value, (ccx, ccy), cr)


@dataclass
class PiState:
    kp: float = 0.5           # 1/(m/s)
    ki: float = 0.1           # 1/m
    integrator: float = 0.0   # accumulated error, (m/s)*s
    target: float = 30.0 / 3.6
    u_min: float = -1.0
    u_max: float = 1.0


def pi_speed_control(v: float, state: PiState, dt: float) -> tuple[float, float]:
    """One controller step; returns (throttle, brake), never both positive.

    Conditional integration: the error is accumulated only when the
    resulting output would stay inside [u_min, u_max].
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    e = state.target - v
    candidate = state.integrator + e * dt
    u = state.kp * e + state.ki * candidate
    if state.u_min <= u <= state.u_max:
        state.integrator = candidate
    else:
        u = min(max(u, state.u_min), state.u_max)
    if u >= 0.0:
        return u, 0.0
    return 0.0, -u


class PerceptionSpeedBehavior:
    """Decode signs, retarget the controller, and command the pedals.

    Camera frames are handled before telemetry, so a detection takes
    effect in the same step's speed command.  The target persists between
    detections.
    """

    def __init__(self, state: PiState, dt: float, vehicle_mac: MacAddress):
        self.state = state
        self.dt = dt
        self.vehicle_mac = vehicle_mac

    def compute(self, inbox):
        report: Optional[int] = None
        telemetry = None
        for _, payload in inbox:
            if isinstance(payload, CameraFrame):
                detection = detect_sign(payload)
                if detection.limit_kmh:
                    self.state.target = detection.limit_kmh / 3.6
                report = detection.limit_kmh
            elif isinstance(payload, VehicleTelemetry):
                telemetry = payload
        out = []
        if report is not None:
            out.append((BROADCAST, DetectionReport(report)))
        if telemetry is not None:
            throttle, brake = pi_speed_control(telemetry.speed, self.state, self.dt)
            out.append((self.vehicle_mac, SpeedCommand(throttle, brake)))
        return out
