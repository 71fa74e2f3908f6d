"""Deterministic lock-step co-simulation of a desk-scale vehicle twin.

A backplane owns simulated time and a simulated Ethernet switch; four
clients (vehicle dynamics, environment/camera, lane-keeping steering,
perception + speed control) exchange typed payloads in Ethernet frames
under a strict per-step barrier.
"""

from .backplane import Backplane, SessionReport, SimClock, SwitchTable, TraceWriter, run_session, switch_route
from .errors import DesktwinError
from .gateway import ClientHandle, StepStatus, connect, drive, step
from .harness import run_in_process, run_multi_process, summarize
from .scenario import Scenario, parse_scenario, serialize_scenario, validate_scenario
from .track import Track
from .wire import (
    BROADCAST,
    CameraFrame,
    EthernetFrame,
    MacAddress,
    crc32,
    decode_frame,
    encode_frame,
    fragment_payload,
    make_frame,
    reassemble_fragments,
)

__version__ = "0.1.0"
