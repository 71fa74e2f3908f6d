"""Scenario files: every knob of a session in one YAML document.

A scenario names the roster, the track and its signs, the vehicle,
controller gains, the camera, the step size, and the duration.  Parsing
applies documented defaults for everything optional and validates the
result; the resolved configuration is echoed into every session report
so a run is reproducible from its artifacts alone.

Only ``duration_s`` and ``track.waypoints`` are required::

    duration_s: 120.0
    dt_ns: 10000000
    track:
      closed: true
      lane_half_width: 2.0
      waypoints: [[0.0, 0.0], [2.0, 0.0], ...]
    signs:
      - {s_pos: 100.0, limit_kmh: 40}
    initial: {x: 0.0, y: 0.0, heading: 0.0, speed: 8.0}
    vehicle: {mass: 1000.0, ...}
    steering: {lookahead_gain: 0.6, ...}
    speed_control: {kp: 0.5, ki: 0.1, initial_target_mps: 8.0}
    camera: {width: 64, height: 48, ...}
    roster: {vehicle: "02:44:54:00:00:01", ...}
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import yaml

from .environment import SUPPORTED_LIMITS, CameraParams, Sign
from .errors import ParseError, ValidationError
from .perception import PiState
from .steering import PurePursuitParams
from .track import Track
from .vehicle import VehicleParams, VehicleState
from .wire import MacAddress

ROLE_VEHICLE = "vehicle"
ROLE_ENVIRONMENT = "environment"
ROLE_STEERING = "steering"
ROLE_PERCEPTION = "perception"
ROLES = (ROLE_VEHICLE, ROLE_ENVIRONMENT, ROLE_STEERING, ROLE_PERCEPTION)

DEFAULT_MACS = {
    ROLE_VEHICLE: "02:44:54:00:00:01",
    ROLE_ENVIRONMENT: "02:44:54:00:00:02",
    ROLE_STEERING: "02:44:54:00:00:03",
    ROLE_PERCEPTION: "02:44:54:00:00:04",
}

DEFAULT_DT_NS = 10_000_000  # 10 ms
DEFAULT_TRACE_PATH = "trace.csv"


@dataclass(frozen=True)
class RosterEntry:
    name: str
    mac: MacAddress


@dataclass
class SpeedControlConfig:
    kp: float = 0.5
    ki: float = 0.1
    initial_target_mps: float = 30.0 / 3.6


@dataclass
class InitialState:
    x: float
    y: float
    heading: float
    speed: float = 0.0


@dataclass
class Scenario:
    duration_s: float
    track: Track
    roster: list = field(default_factory=list)
    signs: list = field(default_factory=list)
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    steering: PurePursuitParams = field(default_factory=PurePursuitParams)
    speed_control: SpeedControlConfig = field(default_factory=SpeedControlConfig)
    camera: CameraParams = field(default_factory=CameraParams)
    initial: Optional[InitialState] = None
    dt_ns: int = DEFAULT_DT_NS
    seed: int = 0
    trace_path: str = DEFAULT_TRACE_PATH
    barrier_timeout_s: float = 30.0

    def __post_init__(self):
        if not self.roster:
            self.roster = [
                RosterEntry(role, MacAddress.parse(DEFAULT_MACS[role])) for role in ROLES
            ]
        if self.initial is None:
            x, y = self.track.point_at(0.0)
            self.initial = InitialState(x, y, self.track.heading_at(0.0), 0.0)

    @property
    def dt_s(self) -> float:
        return self.dt_ns / 1e9

    @property
    def total_steps(self) -> int:
        steps = self.duration_s * 1e9 / self.dt_ns
        return int(round(steps))

    def mac_of(self, name: str) -> MacAddress:
        for entry in self.roster:
            if entry.name == name:
                return entry.mac
        raise KeyError(name)

    def initial_vehicle_state(self) -> VehicleState:
        return VehicleState(
            x=self.initial.x,
            y=self.initial.y,
            heading=self.initial.heading,
            speed=self.initial.speed,
            accel=0.0,
        )

    def to_dict(self) -> dict:
        """Fully resolved configuration, defaults included."""
        return {
            "duration_s": self.duration_s,
            "dt_ns": self.dt_ns,
            "seed": self.seed,
            "trace_path": self.trace_path,
            "barrier_timeout_s": self.barrier_timeout_s,
            "roster": {e.name: str(e.mac) for e in self.roster},
            "track": {
                "closed": self.track.closed,
                "lane_half_width": self.track.lane_half_width,
                "waypoints": [[float(x), float(y)] for x, y in self.track.waypoints],
            },
            "signs": [
                {"s_pos": s.s_pos, "limit_kmh": s.limit_kmh} for s in self.signs
            ],
            "vehicle": {
                "mass": self.vehicle.mass,
                "wheelbase": self.vehicle.wheelbase,
                "max_steer": self.vehicle.max_steer,
                "max_drive_force": self.vehicle.max_drive_force,
                "max_brake_force": self.vehicle.max_brake_force,
                "drag_area": self.vehicle.drag_area,
                "rolling_coeff": self.vehicle.rolling_coeff,
            },
            "steering": {
                "lookahead_gain": self.steering.lookahead_gain,
                "lookahead_min": self.steering.lookahead_min,
                "lookahead_max": self.steering.lookahead_max,
                "wheelbase": self.steering.wheelbase,
                "max_steer": self.steering.max_steer,
            },
            "speed_control": {
                "kp": self.speed_control.kp,
                "ki": self.speed_control.ki,
                "initial_target_mps": self.speed_control.initial_target_mps,
            },
            "camera": {
                "width": self.camera.width,
                "height": self.camera.height,
                "fov": self.camera.fov,
                "range_m": self.camera.range_m,
                "height_m": self.camera.height_m,
                "noise_amplitude": self.camera.noise_amplitude,
            },
            "initial": {
                "x": self.initial.x,
                "y": self.initial.y,
                "heading": self.initial.heading,
                "speed": self.initial.speed,
            },
        }

    def pi_state(self) -> PiState:
        return PiState(
            kp=self.speed_control.kp,
            ki=self.speed_control.ki,
            target=self.speed_control.initial_target_mps,
        )


def _section(doc: dict, key: str, allowed: set, problems: list) -> dict:
    raw = doc.get(key) or {}
    if not isinstance(raw, dict):
        problems.append(f"{key}: expected a mapping")
        return {}
    unknown = set(raw) - allowed
    if unknown:
        problems.append(f"{key}: unknown fields {sorted(unknown)}")
    return {k: v for k, v in raw.items() if k in allowed}


def parse_scenario(path) -> Scenario:
    """Load, apply defaults, and validate; raises ParseError/ValidationError."""
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh)
    except OSError as exc:
        raise ParseError(f"cannot read scenario {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ParseError(f"scenario {path} is not valid YAML: {exc}") from exc
    if not isinstance(doc, dict):
        raise ParseError(f"scenario {path} must be a YAML mapping")
    return scenario_from_dict(doc)


def scenario_from_dict(doc: dict) -> Scenario:
    problems: list = []
    top_allowed = {
        "duration_s", "dt_ns", "seed", "trace_path", "barrier_timeout_s",
        "roster", "track", "signs", "vehicle", "steering", "speed_control",
        "camera", "initial",
    }
    unknown = set(doc) - top_allowed
    if unknown:
        raise ParseError(f"unknown top-level fields {sorted(unknown)}")

    if "duration_s" not in doc:
        raise ParseError("duration_s is required")
    track_raw = doc.get("track")
    if not isinstance(track_raw, dict) or "waypoints" not in track_raw:
        raise ParseError("track.waypoints is required")

    try:
        track = Track(
            track_raw["waypoints"],
            lane_half_width=float(track_raw.get("lane_half_width", 1.75)),
            closed=bool(track_raw.get("closed", False)),
        )
    except (ValueError, TypeError) as exc:
        raise ParseError(f"track: {exc}") from exc
    unknown = set(track_raw) - {"waypoints", "lane_half_width", "closed"}
    if unknown:
        raise ParseError(f"track: unknown fields {sorted(unknown)}")

    roster_raw = doc.get("roster")
    roster = []
    if roster_raw is None:
        roster_raw = DEFAULT_MACS
    if not isinstance(roster_raw, dict):
        problems.append("roster: expected a mapping of role name to MAC")
        roster_raw = {}
    for name in ROLES:
        if name in roster_raw:
            try:
                roster.append(RosterEntry(name, MacAddress.parse(str(roster_raw[name]))))
            except ValueError as exc:
                problems.append(f"roster.{name}: {exc}")
    for name in set(roster_raw) - set(ROLES):
        problems.append(f"roster: unknown role {name!r}")

    signs = []
    for i, raw in enumerate(doc.get("signs") or []):
        if not isinstance(raw, dict) or set(raw) != {"s_pos", "limit_kmh"}:
            problems.append(f"signs[{i}]: expected {{s_pos, limit_kmh}}")
            continue
        signs.append(Sign(float(raw["s_pos"]), int(raw["limit_kmh"])))

    vehicle_kw = _section(
        doc, "vehicle",
        {"mass", "wheelbase", "max_steer", "max_drive_force", "max_brake_force",
         "drag_area", "rolling_coeff"},
        problems,
    )
    try:
        vehicle = VehicleParams(**{k: float(v) for k, v in vehicle_kw.items()})
    except ValueError as exc:
        problems.append(f"vehicle: {exc}")
        vehicle = VehicleParams()

    steering_kw = _section(
        doc, "steering",
        {"lookahead_gain", "lookahead_min", "lookahead_max", "wheelbase", "max_steer"},
        problems,
    )
    steering_kw.setdefault("wheelbase", vehicle.wheelbase)
    steering_kw.setdefault("max_steer", vehicle.max_steer)
    try:
        steering = PurePursuitParams(**{k: float(v) for k, v in steering_kw.items()})
    except ValueError as exc:
        problems.append(f"steering: {exc}")
        steering = PurePursuitParams()

    speed_kw = _section(doc, "speed_control", {"kp", "ki", "initial_target_mps"}, problems)
    speed_control = SpeedControlConfig(**{k: float(v) for k, v in speed_kw.items()})

    camera_kw = _section(
        doc, "camera",
        {"width", "height", "fov", "range_m", "height_m", "noise_amplitude"},
        problems,
    )
    try:
        camera = CameraParams(
            **{
                k: (int(v) if k in ("width", "height", "noise_amplitude") else float(v))
                for k, v in camera_kw.items()
            }
        )
    except ValueError as exc:
        problems.append(f"camera: {exc}")
        camera = CameraParams()

    initial = None
    if "initial" in doc:
        init_kw = _section(doc, "initial", {"x", "y", "heading", "speed"}, problems)
        x0, y0 = track.point_at(0.0)
        x = float(init_kw.get("x", x0))
        y = float(init_kw.get("y", y0))
        if "heading" in init_kw:
            heading = float(init_kw["heading"])
        else:
            heading = track.heading_at(track.project(x, y)[0])
        initial = InitialState(x, y, heading, float(init_kw.get("speed", 0.0)))

    if problems:
        raise ValidationError(problems)

    scenario = Scenario(
        duration_s=float(doc["duration_s"]),
        track=track,
        roster=roster,
        signs=signs,
        vehicle=vehicle,
        steering=steering,
        speed_control=speed_control,
        camera=camera,
        initial=initial,
        dt_ns=int(doc.get("dt_ns", DEFAULT_DT_NS)),
        seed=int(doc.get("seed", 0)),
        trace_path=str(doc.get("trace_path", DEFAULT_TRACE_PATH)),
        barrier_timeout_s=float(doc.get("barrier_timeout_s", 30.0)),
    )
    validate_scenario(scenario)
    return scenario


def validate_scenario(scenario: Scenario) -> None:
    """Check every cross-field invariant; raises with the full list."""
    problems = []
    if scenario.dt_ns <= 0:
        problems.append("dt_ns must be positive")
    if scenario.duration_s < 0:
        problems.append("duration_s must be >= 0")
    if scenario.dt_ns > 0:
        steps = scenario.duration_s * 1e9 / scenario.dt_ns
        if abs(steps - round(steps)) > 1e-6 * max(1.0, abs(steps)):
            problems.append(
                f"duration_s / dt must be a whole number of steps, got {steps}"
            )

    names = [e.name for e in scenario.roster]
    if sorted(names) != sorted(ROLES):
        problems.append(f"roster must name exactly {list(ROLES)}, got {names}")
    macs = [e.mac for e in scenario.roster]
    if len(set(macs)) != len(macs):
        problems.append("roster MACs must be distinct")
    if any(m.is_broadcast for m in macs):
        problems.append("roster MACs must be unicast")

    total = scenario.track.total_length
    for i, sign in enumerate(scenario.signs):
        if not 0.0 <= sign.s_pos <= total:
            problems.append(
                f"signs[{i}] at s={sign.s_pos} is outside the track [0, {total:.3f}]"
            )
        if sign.limit_kmh not in SUPPORTED_LIMITS:
            problems.append(
                f"signs[{i}] limit {sign.limit_kmh} not in {list(SUPPORTED_LIMITS)}"
            )

    _, cte = scenario.track.project(scenario.initial.x, scenario.initial.y)
    if abs(cte) > scenario.track.lane_half_width:
        problems.append(
            f"initial pose is {abs(cte):.3f} m off the centerline, "
            f"outside the lane half-width {scenario.track.lane_half_width}"
        )
    if scenario.initial.speed < 0:
        problems.append("initial speed must be >= 0")
    if scenario.speed_control.initial_target_mps <= 0:
        problems.append("speed_control.initial_target_mps must be positive")
    if scenario.steering.wheelbase != scenario.vehicle.wheelbase:
        problems.append(
            "steering.wheelbase must match vehicle.wheelbase "
            f"({scenario.steering.wheelbase} != {scenario.vehicle.wheelbase})"
        )
    if scenario.barrier_timeout_s <= 0:
        problems.append("barrier_timeout_s must be positive")

    if problems:
        raise ValidationError(problems)


def serialize_scenario(scenario: Scenario) -> str:
    """YAML text that parses back to an equal Scenario."""
    return yaml.safe_dump(scenario.to_dict(), sort_keys=False, default_flow_style=None)
