"""Ego vehicle dynamics: kinematic bicycle plus point-mass longitudinal model.

The longitudinal channel balances drive force against aerodynamic drag and
rolling resistance; braking and resistance can bring the speed to zero but
never below it.  Integration is semi-implicit Euler at a fixed step: the
new speed is computed first and then used for the pose update, which makes
the zero-force case exact.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

from .track import wrap_angle
from .wire import BROADCAST, SpeedCommand, SteeringCommand, VehicleTelemetry

log = logging.getLogger(__name__)

GRAVITY = 9.81


@dataclass
class VehicleParams:
    mass: float = 1000.0            # kg
    wheelbase: float = 2.5          # m
    max_steer: float = 0.5          # rad
    max_drive_force: float = 4000.0  # N
    max_brake_force: float = 8000.0  # N
    drag_area: float = 0.38         # lumped 0.5*rho*Cd*A, kg/m
    rolling_coeff: float = 0.012

    def __post_init__(self):
        for name in (
            "mass", "wheelbase", "max_steer", "max_drive_force",
            "max_brake_force", "drag_area", "rolling_coeff",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"vehicle parameter {name} must be positive")
        if self.max_steer >= math.pi / 2:
            raise ValueError("max_steer must stay below pi/2")


@dataclass(frozen=True)
class VehicleState:
    x: float = 0.0
    y: float = 0.0
    heading: float = 0.0
    speed: float = 0.0
    accel: float = 0.0


@dataclass
class ActuationCommand:
    steering: float = 0.0
    throttle: float = 0.0
    brake: float = 0.0


def longitudinal_accel(v: float, throttle: float, brake: float, p: VehicleParams) -> float:
    """Net longitudinal acceleration; brake and rolling drag vanish at rest."""
    force = throttle * p.max_drive_force - p.drag_area * v * v
    if v > 0.0:
        force -= brake * p.max_brake_force
        force -= p.rolling_coeff * p.mass * GRAVITY
    return force / p.mass


def integrate_step(
    s: VehicleState, cmd: ActuationCommand, p: VehicleParams, dt: float
) -> VehicleState:
    """One fixed step of the bicycle model; speed is clamped at zero."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    delta = min(max(cmd.steering, -p.max_steer), p.max_steer)
    a = longitudinal_accel(s.speed, cmd.throttle, cmd.brake, p)
    v_new = max(0.0, s.speed + a * dt)
    heading = wrap_angle(s.heading + (v_new * math.tan(delta) / p.wheelbase) * dt)
    return VehicleState(
        x=s.x + v_new * math.cos(heading) * dt,
        y=s.y + v_new * math.sin(heading) * dt,
        heading=heading,
        speed=v_new,
        accel=(v_new - s.speed) / dt,
    )


class VehicleBehavior:
    """Per-step compute function: merge commands, integrate, broadcast pose.

    Missing commands mean hold-last (initially all zero).  When several
    commands of one kind arrive in a step, the last one in delivery order
    wins.
    """

    def __init__(self, params: VehicleParams, initial: VehicleState, dt: float):
        self.params = params
        self.state = initial
        self.dt = dt
        self.held = ActuationCommand()

    def compute(self, inbox):
        steer = [p for _, p in inbox if isinstance(p, SteeringCommand)]
        speed = [p for _, p in inbox if isinstance(p, SpeedCommand)]
        if len(steer) > 1 or len(speed) > 1:
            log.debug(
                "step merged %d steering / %d speed commands; last wins",
                len(steer), len(speed),
            )
        if steer:
            self.held.steering = steer[-1].angle
        if speed:
            self.held.throttle = speed[-1].throttle
            self.held.brake = speed[-1].brake
        self.state = integrate_step(self.state, self.held, self.params, self.dt)
        telemetry = VehicleTelemetry(
            x=self.state.x,
            y=self.state.y,
            heading=self.state.heading,
            speed=self.state.speed,
            accel=self.state.accel,
        )
        return [(BROADCAST, telemetry)]
