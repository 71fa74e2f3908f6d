"""Lock-step orchestrator: simulated time, the step barrier, and the switch.

One session runs a fixed number of steps.  At step k the backplane sends
every client a GRANT carrying the frames addressed to it, waits for a
DONE from each client, routes the frames those DONEs carried, writes one
trace row, advances the clock, and only then issues GRANT(k+1).  Frames
sent at step k are therefore observable at step k+1 and never earlier.

All barrier-crossing work happens on the single thread that called
``run``; transport readers only feed an ordered queue.  Frames are
processed sorted by (sending port, send order within the step), so two
sessions with the same scenario produce byte-identical traces no matter
how the transport interleaves arrivals.
"""

from __future__ import annotations

import logging
import queue
import threading
import time
from dataclasses import dataclass, field
from typing import Optional

from . import protocol
from .errors import (
    ClientTimeout,
    FcsMismatch,
    ProtocolError,
    RosterMismatch,
    SinkError,
    TransportError,
    TransportTimeout,
    WireError,
)
from .protocol import (
    BYE_COMPLETE,
    BYE_DUPLICATE,
    BYE_INTERNAL,
    BYE_PROTOCOL_ERROR,
    BYE_ROSTER_MISMATCH,
    BYE_TIMEOUT,
    Bye,
    Done,
    Grant,
    Hello,
    HelloAck,
)
from .scenario import Scenario
from .wire import (
    DetectionReport,
    EthernetFrame,
    SpeedCommand,
    SteeringCommand,
    UnknownSchema,
    VehicleTelemetry,
    decode_frame,
    decode_payload,
    encode_frame,
)

log = logging.getLogger(__name__)

TRACE_HEADER = (
    "step,t_s,x_m,y_m,heading_rad,speed_mps,steering_rad,"
    "throttle,brake,detected_limit_kmh,cte_m"
)


@dataclass
class SimClock:
    """Integer-nanosecond simulated time; never touches floating point."""

    dt_ns: int
    step: int = 0

    def __post_init__(self):
        if self.dt_ns <= 0:
            raise ValueError("dt_ns must be positive")

    @property
    def sim_time_ns(self) -> int:
        return self.step * self.dt_ns

    @property
    def t_s(self) -> float:
        return self.sim_time_ns / 1e9

    def advance(self) -> None:
        self.step += 1


class SwitchTable:
    """MAC learning table plus the port set of the switch."""

    def __init__(self, ports):
        self.ports = tuple(ports)
        self.mac_to_port: dict = {}

    def learn(self, mac, port: int) -> None:
        self.mac_to_port[mac] = port

    def port_of(self, mac) -> Optional[int]:
        return self.mac_to_port.get(mac)


@dataclass
class RouteStats:
    unicast: int = 0
    broadcast: int = 0
    flooded: int = 0
    deliveries: int = 0


def switch_route(tagged_frames, table: SwitchTable):
    """Deliver frames to ports with 802.1D learning-switch semantics.

    ``tagged_frames`` is a sequence of (ingress_port, frame) pairs in the
    deterministic processing order.  Unicast to a learned MAC goes to
    exactly that port; broadcast and unknown unicast go to every port but
    the sender's.  Source MACs are learned as frames pass through.
    Returns (per-port delivery lists, RouteStats).
    """
    deliveries = {p: [] for p in table.ports}
    stats = RouteStats()
    for ingress, frame in tagged_frames:
        table.learn(frame.src, ingress)
        if frame.dst.is_broadcast:
            targets = [p for p in table.ports if p != ingress]
            stats.broadcast += 1
        else:
            port = table.port_of(frame.dst)
            if port is not None:
                targets = [port]
                stats.unicast += 1
            else:
                targets = [p for p in table.ports if p != ingress]
                stats.flooded += 1
        for p in targets:
            deliveries[p].append(frame)
        stats.deliveries += len(targets)
    return deliveries, stats


def _g9(x: float) -> str:
    return format(x, ".9g")


class TraceWriter:
    """CSV trace sink; one row per step, floats at 9 significant digits."""

    def __init__(self, path):
        self.path = path
        self._last_step = -1
        try:
            self._fh = open(path, "w", newline="")
            self._fh.write(TRACE_HEADER + "\n")
        except OSError as exc:
            raise SinkError(f"cannot open trace {path}: {exc}") from exc

    def write_row(
        self,
        step: int,
        t_s: float,
        x: float,
        y: float,
        heading: float,
        speed: float,
        steering: float,
        throttle: float,
        brake: float,
        detected_limit_kmh: Optional[int],
        cte: float,
    ) -> None:
        if step <= self._last_step:
            raise SinkError(f"trace steps must increase, got {step} after {self._last_step}")
        self._last_step = step
        detected = "" if detected_limit_kmh is None else str(int(detected_limit_kmh))
        row = ",".join(
            [
                str(step),
                _g9(t_s),
                _g9(x),
                _g9(y),
                _g9(heading),
                _g9(speed),
                _g9(steering),
                _g9(throttle),
                _g9(brake),
                detected,
                _g9(cte),
            ]
        )
        try:
            self._fh.write(row + "\n")
        except OSError as exc:
            raise SinkError(f"cannot write trace: {exc}") from exc

    def mark_aborted(self, reason: str) -> None:
        try:
            self._fh.write(f"# aborted: {reason}\n")
        except OSError as exc:
            raise SinkError(f"cannot write trace: {exc}") from exc

    def close(self) -> None:
        try:
            self._fh.close()
        except OSError as exc:
            raise SinkError(f"cannot close trace: {exc}") from exc


@dataclass
class SessionReport:
    steps: int
    dt_ns: int
    wall_clock_s: float
    frames_in: int = 0
    deliveries: int = 0
    unicast: int = 0
    broadcast: int = 0
    flooded: int = 0
    fcs_drops: int = 0
    final_step_drops: int = 0
    payload_counts: dict = field(default_factory=dict)
    trace_path: Optional[str] = None
    scenario: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "steps": self.steps,
            "dt_ns": self.dt_ns,
            "sim_duration_s": self.steps * self.dt_ns / 1e9,
            "wall_clock_s": self.wall_clock_s,
            "frames_in": self.frames_in,
            "deliveries": self.deliveries,
            "unicast": self.unicast,
            "broadcast": self.broadcast,
            "flooded": self.flooded,
            "fcs_drops": self.fcs_drops,
            "final_step_drops": self.final_step_drops,
            "payload_counts": dict(self.payload_counts),
            "trace_path": self.trace_path,
            "scenario": self.scenario,
        }


_PAYLOAD_NAMES = {
    0x01: "telemetry",
    0x02: "steering",
    0x03: "speed",
    0x04: "camera_fragment",
    0x05: "detection",
}


class Backplane:
    """One session: join the roster, run the barrier, route, trace."""

    def __init__(self, scenario: Scenario, trace: Optional[TraceWriter] = None):
        self.scenario = scenario
        self.trace = trace
        self.roster = list(scenario.roster)
        self.timeout = scenario.barrier_timeout_s
        self.clock = SimClock(scenario.dt_ns)
        self.table = SwitchTable(range(len(self.roster)))
        self._queue: "queue.Queue" = queue.Queue()
        self._conns: dict = {}
        # trace state: hold-last semantics, all zero before first sight
        self._telemetry = VehicleTelemetry(0.0, 0.0, 0.0, 0.0, 0.0)
        self._steering = 0.0
        self._throttle = 0.0
        self._brake = 0.0

    # -- join ----------------------------------------------------------------

    def _join(self, server) -> None:
        expected = {entry.name: entry.mac for entry in self.roster}
        port_of_name = {entry.name: i for i, entry in enumerate(self.roster)}
        deadline = time.monotonic() + self.timeout
        while len(self._conns) < len(self.roster):
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise ClientTimeout(
                    f"only {len(self._conns)}/{len(self.roster)} clients joined "
                    f"within {self.timeout:.0f}s"
                )
            try:
                conn = server.accept(remaining)
                body = conn.recv_message(max(deadline - time.monotonic(), 0.001))
            except TransportTimeout:
                raise ClientTimeout(
                    f"only {len(self._conns)}/{len(self.roster)} clients joined "
                    f"within {self.timeout:.0f}s"
                ) from None
            if body is None:
                raise TransportError("client closed during handshake")
            msg = protocol.decode_message(body)
            if not isinstance(msg, Hello):
                conn.send_message(protocol.encode_message(Bye(BYE_PROTOCOL_ERROR)))
                raise ProtocolError(f"expected HELLO, got {type(msg).__name__}")
            if msg.name not in expected or msg.mac != expected[msg.name]:
                conn.send_message(protocol.encode_message(Bye(BYE_ROSTER_MISMATCH)))
                raise RosterMismatch(f"unexpected client {msg.name!r} ({msg.mac})")
            port = port_of_name[msg.name]
            if port in self._conns:
                conn.send_message(protocol.encode_message(Bye(BYE_DUPLICATE)))
                raise RosterMismatch(f"client {msg.name!r} joined twice")
            self._conns[port] = conn
            log.info("client %s joined on port %d", msg.name, port)

        total = self.scenario.total_steps
        for port in sorted(self._conns):
            self._conns[port].send_message(
                protocol.encode_message(
                    HelloAck(port, self.scenario.dt_ns, total)
                )
            )

    def _start_readers(self) -> None:
        def reader(port, conn):
            while True:
                try:
                    body = conn.recv_message(None)
                except TransportError:
                    body = None
                self._queue.put((port, body))
                if body is None:
                    return

        for port, conn in self._conns.items():
            threading.Thread(
                target=reader, args=(port, conn), daemon=True,
                name=f"backplane-reader-{port}",
            ).start()

    # -- barrier -------------------------------------------------------------

    def _collect_dones(self, step: int) -> dict:
        pending = set(self._conns)
        batches: dict = {}
        deadline = time.monotonic() + self.timeout
        while pending:
            remaining = deadline - time.monotonic()
            if remaining <= 0:
                raise ClientTimeout(
                    f"clients {sorted(pending)} missed the barrier at step {step}"
                )
            try:
                port, body = self._queue.get(timeout=remaining)
            except queue.Empty:
                raise ClientTimeout(
                    f"clients {sorted(pending)} missed the barrier at step {step}"
                ) from None
            if body is None:
                if port in pending:
                    raise TransportError(f"port {port} disconnected at step {step}")
                continue  # EOF after its final DONE
            msg = protocol.decode_message(body)
            if not isinstance(msg, Done):
                raise ProtocolError(
                    f"expected DONE from port {port}, got {type(msg).__name__}"
                )
            if msg.step != step:
                raise ProtocolError(
                    f"port {port} sent DONE({msg.step}) during step {step}"
                )
            if port not in pending:
                raise ProtocolError(f"port {port} sent DONE({step}) twice")
            pending.discard(port)
            batches[port] = msg.frames
        return batches

    def _snoop(self, payload, detection_holder: list) -> None:
        if isinstance(payload, VehicleTelemetry):
            self._telemetry = payload
        elif isinstance(payload, SteeringCommand):
            self._steering = payload.angle
        elif isinstance(payload, SpeedCommand):
            self._throttle = payload.throttle
            self._brake = payload.brake
        elif isinstance(payload, DetectionReport) and payload.limit_kmh:
            detection_holder[0] = payload.limit_kmh

    def _write_trace_row(self, detection) -> None:
        if self.trace is None:
            return
        s, cte = self.scenario.track.project(self._telemetry.x, self._telemetry.y)
        self.trace.write_row(
            self.clock.step,
            self.clock.t_s,
            self._telemetry.x,
            self._telemetry.y,
            self._telemetry.heading,
            self._telemetry.speed,
            self._steering,
            self._throttle,
            self._brake,
            detection,
            cte,
        )

    def _broadcast_bye(self, reason: int) -> None:
        body = protocol.encode_message(Bye(reason))
        for conn in self._conns.values():
            try:
                conn.send_message(body)
            except TransportError:
                pass

    def run(self, server) -> SessionReport:
        """Execute the whole session; returns the report, trace flushed."""
        t0 = time.perf_counter()
        report = SessionReport(
            steps=0,
            dt_ns=self.scenario.dt_ns,
            wall_clock_s=0.0,
            trace_path=getattr(self.trace, "path", None),
            scenario=self.scenario.to_dict(),
        )
        total = self.scenario.total_steps
        try:
            self._join(server)
            self._start_readers()
            inboxes: dict = {port: [] for port in range(len(self.roster))}
            for step in range(total):
                for port in sorted(self._conns):
                    self._conns[port].send_message(
                        protocol.encode_message(Grant(step, tuple(inboxes[port])))
                    )
                    inboxes[port] = []
                batches = self._collect_dones(step)

                tagged = []
                detection_holder = [None]
                for port in sorted(batches):
                    for raw in batches[port]:
                        try:
                            frame = decode_frame(raw)
                        except FcsMismatch:
                            report.fcs_drops += 1
                            log.warning("dropping corrupt frame from port %d", port)
                            continue
                        except WireError as exc:
                            report.fcs_drops += 1
                            log.warning("dropping malformed frame from port %d: %s", port, exc)
                            continue
                        tagged.append((port, frame))
                        sid = frame.payload[0] if frame.payload else 0
                        name = _PAYLOAD_NAMES.get(sid, f"schema_0x{sid:02x}")
                        report.payload_counts[name] = report.payload_counts.get(name, 0) + 1
                        try:
                            self._snoop(decode_payload(frame.payload), detection_holder)
                        except (UnknownSchema, WireError):
                            pass
                report.frames_in += len(tagged)

                if step == total - 1:
                    report.final_step_drops += len(tagged)
                else:
                    deliveries, stats = switch_route(tagged, self.table)
                    for port, frames in deliveries.items():
                        inboxes[port].extend(encode_frame(f) for f in frames)
                    report.deliveries += stats.deliveries
                    report.unicast += stats.unicast
                    report.broadcast += stats.broadcast
                    report.flooded += stats.flooded

                self._write_trace_row(detection_holder[0])
                self.clock.advance()
                report.steps = self.clock.step

            self._broadcast_bye(BYE_COMPLETE)
            return report
        except ClientTimeout as exc:
            self._abort(BYE_TIMEOUT, str(exc))
            raise
        except (ProtocolError, RosterMismatch) as exc:
            self._abort(BYE_PROTOCOL_ERROR, str(exc))
            raise
        except TransportError as exc:
            self._abort(BYE_INTERNAL, str(exc))
            raise
        finally:
            report.wall_clock_s = time.perf_counter() - t0
            for conn in self._conns.values():
                conn.close()
            if self.trace is not None:
                self.trace.close()

    def _abort(self, reason: int, text: str) -> None:
        log.error("session aborted: %s", text)
        if self.trace is not None:
            self.trace.mark_aborted(text)
        self._broadcast_bye(reason)


def run_session(
    scenario: Scenario, listen_endpoint: str, trace_path: Optional[str] = None
) -> SessionReport:
    """Serve one TCP session on ``listen_endpoint`` and run it to the end."""
    from .transport import TcpServer

    server = TcpServer(listen_endpoint)
    try:
        trace = TraceWriter(trace_path or scenario.trace_path)
        return Backplane(scenario, trace).run(server)
    finally:
        server.close()
