"""Lane keeping by pure pursuit over the known centerline.

The controller projects the ego pose onto the track, picks a goal point a
speed-scaled lookahead distance further along, and steers on the circular
arc through that goal.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .track import Track, wrap_angle
from .vehicle import VehicleState
from .wire import MacAddress, SteeringCommand, VehicleTelemetry


@dataclass
class PurePursuitParams:
    lookahead_gain: float = 0.6   # s; lookahead = gain * speed
    lookahead_min: float = 3.0    # m
    lookahead_max: float = 12.0   # m
    wheelbase: float = 2.5        # m, must match the vehicle
    max_steer: float = 0.5        # rad

    def __post_init__(self):
        if not 0 < self.lookahead_min <= self.lookahead_max:
            raise ValueError("need 0 < lookahead_min <= lookahead_max")
        if self.lookahead_gain < 0:
            raise ValueError("lookahead_gain must be >= 0")


def lookahead_point(s_ego: float, lookahead: float, track: Track) -> tuple[float, float]:
    """Centerline point ``lookahead`` meters further along the track.

    Clamps at the end of an open track; wraps on a circuit.
    """
    return track.point_at(s_ego + lookahead)


def pure_pursuit_steer(
    ego: VehicleState, goal: tuple[float, float], p: PurePursuitParams
) -> float:
    lookahead = min(max(p.lookahead_gain * ego.speed, p.lookahead_min), p.lookahead_max)
    alpha = wrap_angle(math.atan2(goal[1] - ego.y, goal[0] - ego.x) - ego.heading)
    delta = math.atan(2.0 * p.wheelbase * math.sin(alpha) / lookahead)
    return min(max(delta, -p.max_steer), p.max_steer)


class SteeringBehavior:
    """On each telemetry update, emit one steering command to the vehicle."""

    def __init__(self, track: Track, params: PurePursuitParams, vehicle_mac: MacAddress):
        self.track = track
        self.params = params
        self.vehicle_mac = vehicle_mac

    def compute(self, inbox):
        telemetry = None
        for _, payload in inbox:
            if isinstance(payload, VehicleTelemetry):
                telemetry = payload
        if telemetry is None:
            return []
        ego = VehicleState(
            x=telemetry.x,
            y=telemetry.y,
            heading=telemetry.heading,
            speed=telemetry.speed,
            accel=telemetry.accel,
        )
        s_ego, _ = self.track.project(ego.x, ego.y)
        lookahead = min(
            max(self.params.lookahead_gain * ego.speed, self.params.lookahead_min),
            self.params.lookahead_max,
        )
        goal = lookahead_point(s_ego, lookahead, self.track)
        delta = pure_pursuit_steer(ego, goal, self.params)
        return [(self.vehicle_mac, SteeringCommand(delta))]
