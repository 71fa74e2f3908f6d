"""Run whole sessions and post-process their traces.

``run_in_process`` drives the backplane and all four clients inside one
process over the in-memory transport; ``run_multi_process`` spawns each
client as an OS process speaking TCP.  Both move identical message bytes
through the same barrier, so they produce byte-identical traces for the
same scenario.
"""

from __future__ import annotations

import csv
import json
import os
import subprocess
import sys
import threading
from dataclasses import dataclass, field
from typing import Optional

from . import gateway
from .backplane import TRACE_HEADER, Backplane, SessionReport, TraceWriter
from .environment import EnvironmentBehavior
from .errors import DesktwinError, MalformedTrace, SpawnError, TransportError
from .perception import PerceptionSpeedBehavior
from .scenario import (
    ROLE_ENVIRONMENT,
    ROLE_PERCEPTION,
    ROLE_STEERING,
    ROLE_VEHICLE,
    Scenario,
    parse_scenario,
    validate_scenario,
)
from .steering import SteeringBehavior
from .transport import MemoryHub, TcpServer
from .vehicle import VehicleBehavior

SETTLE_BAND = 0.02  # settled = within 2% of the segment target


def build_behavior(scenario: Scenario, role: str):
    """Client logic for one roster role, configured from the scenario."""
    if role == ROLE_VEHICLE:
        return VehicleBehavior(
            scenario.vehicle, scenario.initial_vehicle_state(), scenario.dt_s
        )
    if role == ROLE_ENVIRONMENT:
        return EnvironmentBehavior(
            scenario.track,
            scenario.signs,
            scenario.camera,
            (scenario.initial.x, scenario.initial.y, scenario.initial.heading),
            perception_mac=scenario.mac_of(ROLE_PERCEPTION),
            noise_seed=scenario.seed,
        )
    if role == ROLE_STEERING:
        return SteeringBehavior(
            scenario.track, scenario.steering, scenario.mac_of(ROLE_VEHICLE)
        )
    if role == ROLE_PERCEPTION:
        return PerceptionSpeedBehavior(
            scenario.pi_state(), scenario.dt_s, scenario.mac_of(ROLE_VEHICLE)
        )
    raise ValueError(f"unknown role {role!r}")


def _client_worker(hub: MemoryHub, scenario: Scenario, role: str, failures: list):
    handle = None
    try:
        behavior = build_behavior(scenario, role)
        handle = gateway.connect(hub.connect(), role, scenario.mac_of(role))
        gateway.drive(handle, behavior.compute)
    except DesktwinError as exc:
        failures.append((role, exc))
    finally:
        if handle is not None:
            handle.close()


def run_in_process(scenario: Scenario, trace_path: Optional[str] = None) -> SessionReport:
    """Backplane plus all four clients in one process; deterministic."""
    validate_scenario(scenario)
    hub = MemoryHub()
    failures: list = []
    threads = [
        threading.Thread(
            target=_client_worker,
            args=(hub, scenario, entry.name, failures),
            daemon=True,
            name=f"client-{entry.name}",
        )
        for entry in scenario.roster
    ]
    for t in threads:
        t.start()
    trace = TraceWriter(trace_path or scenario.trace_path)
    try:
        report = Backplane(scenario, trace).run(hub)
    finally:
        for t in threads:
            t.join(timeout=10.0)
    if failures:
        role, exc = failures[0]
        raise DesktwinError(f"client {role!r} failed: {exc}") from exc
    return report


def run_multi_process(
    scenario_path,
    trace_path: Optional[str] = None,
    listen: str = "127.0.0.1:0",
) -> SessionReport:
    """Backplane here, each client as its own OS process over TCP.

    The trace must be byte-identical to an in-process run of the same
    scenario.
    """
    scenario = parse_scenario(scenario_path)
    server = TcpServer(listen)
    procs = []
    try:
        for entry in scenario.roster:
            cmd = [
                sys.executable,
                "-m",
                "desktwin",
                "client",
                entry.name,
                "--config",
                str(scenario_path),
                "--connect",
                f"127.0.0.1:{server.port}",
            ]
            try:
                procs.append(
                    (entry.name, subprocess.Popen(cmd, stdout=subprocess.DEVNULL))
                )
            except OSError as exc:
                raise SpawnError(f"cannot launch client {entry.name!r}: {exc}") from exc
        trace = TraceWriter(trace_path or scenario.trace_path)
        report = Backplane(scenario, trace).run(server)
    finally:
        server.close()
        for name, proc in procs:
            try:
                proc.wait(timeout=10.0)
            except subprocess.TimeoutExpired:
                proc.kill()
                proc.wait()
    bad = [(name, p.returncode) for name, p in procs if p.returncode != 0]
    if bad:
        raise TransportError(f"client processes exited abnormally: {bad}")
    return report


# -- trace post-processing ----------------------------------------------------


@dataclass
class SpeedSegment:
    limit_kmh: int
    target_mps: float
    detect_step: int
    detect_t_s: float
    end_t_s: float
    settling_time_s: Optional[float]
    mean_abs_err_tail: float
    v_min: float
    v_max: float

    def to_dict(self) -> dict:
        return {
            "limit_kmh": self.limit_kmh,
            "target_mps": self.target_mps,
            "detect_step": self.detect_step,
            "detect_t_s": self.detect_t_s,
            "end_t_s": self.end_t_s,
            "settling_time_s": self.settling_time_s,
            "mean_abs_err_tail": self.mean_abs_err_tail,
            "v_min": self.v_min,
            "v_max": self.v_max,
        }


@dataclass
class TraceSummary:
    rows: int
    duration_s: float
    detections: list = field(default_factory=list)  # (step, t_s, limit)
    segments: list = field(default_factory=list)
    max_abs_cte: float = 0.0
    mean_abs_cte: float = 0.0
    max_speed: float = 0.0
    aborted: Optional[str] = None

    def to_dict(self) -> dict:
        return {
            "rows": self.rows,
            "duration_s": self.duration_s,
            "detections": [
                {"step": s, "t_s": t, "limit_kmh": l} for s, t, l in self.detections
            ],
            "segments": [seg.to_dict() for seg in self.segments],
            "max_abs_cte": self.max_abs_cte,
            "mean_abs_cte": self.mean_abs_cte,
            "max_speed": self.max_speed,
            "aborted": self.aborted,
        }


def read_trace(path) -> tuple[list, Optional[str]]:
    """Rows of the trace as dicts with typed values, plus any abort marker."""
    aborted = None
    rows = []
    try:
        with open(path, newline="") as fh:
            header = fh.readline().rstrip("\n")
            if header != TRACE_HEADER:
                raise MalformedTrace(f"unexpected trace header in {path}")
            for line in fh:
                line = line.rstrip("\n")
                if not line:
                    continue
                if line.startswith("#"):
                    aborted = line.lstrip("# ").strip()
                    continue
                parts = line.split(",")
                if len(parts) != 11:
                    raise MalformedTrace(f"bad row in {path}: {line!r}")
                rows.append(
                    {
                        "step": int(parts[0]),
                        "t_s": float(parts[1]),
                        "x": float(parts[2]),
                        "y": float(parts[3]),
                        "heading": float(parts[4]),
                        "speed": float(parts[5]),
                        "steering": float(parts[6]),
                        "throttle": float(parts[7]),
                        "brake": float(parts[8]),
                        "detected": int(parts[9]) if parts[9] else None,
                        "cte": float(parts[10]),
                    }
                )
    except OSError as exc:
        raise MalformedTrace(f"cannot read trace {path}: {exc}") from exc
    if not rows:
        raise MalformedTrace(f"trace {path} has no data rows")
    return rows, aborted


def _segment_stats(rows, start: int, end: int, limit: int) -> SpeedSegment:
    target = limit / 3.6
    span = rows[start:end]
    band = SETTLE_BAND * target
    # first index from which the speed stays inside the band to segment end
    settled_idx = 0
    for i in range(len(span) - 1, -1, -1):
        if abs(span[i]["speed"] - target) > band:
            settled_idx = i + 1
            break
    if settled_idx >= len(span):
        settled_idx = None
    tail = span[-max(1, len(span) // 4) :]
    return SpeedSegment(
        limit_kmh=limit,
        target_mps=target,
        detect_step=span[0]["step"],
        detect_t_s=span[0]["t_s"],
        end_t_s=span[-1]["t_s"],
        settling_time_s=(
            span[settled_idx]["t_s"] - span[0]["t_s"] if settled_idx is not None else None
        ),
        mean_abs_err_tail=sum(abs(r["speed"] - target) for r in tail) / len(tail),
        v_min=min(r["speed"] for r in span),
        v_max=max(r["speed"] for r in span),
    )


def summarize(trace_path, out_dir=None) -> TraceSummary:
    """Digest a trace: detections, per-limit speed segments, cte extremes.

    With ``out_dir`` set, also writes speed/cte time-series data and SVG
    plots plus the summary as JSON.
    """
    rows, aborted = read_trace(trace_path)

    detections = []
    prev = None
    for i, r in enumerate(rows):
        if r["detected"] is not None and r["detected"] != prev:
            detections.append((r["step"], r["t_s"], r["detected"]))
        prev = r["detected"]

    # segment boundaries: steps where the detected limit changes the target
    changes = []
    current_limit = None
    for i, r in enumerate(rows):
        if r["detected"] is not None and r["detected"] != current_limit:
            changes.append((i, r["detected"]))
            current_limit = r["detected"]
    segments = []
    for j, (i, limit) in enumerate(changes):
        end = changes[j + 1][0] if j + 1 < len(changes) else len(rows)
        segments.append(_segment_stats(rows, i, end, limit))

    n = len(rows)
    summary = TraceSummary(
        rows=n,
        duration_s=rows[-1]["t_s"],
        detections=detections,
        segments=segments,
        max_abs_cte=max(abs(r["cte"]) for r in rows),
        mean_abs_cte=sum(abs(r["cte"]) for r in rows) / n,
        max_speed=max(r["speed"] for r in rows),
        aborted=aborted,
    )

    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        _write_series(os.path.join(out_dir, "speed_vs_time.csv"), rows, "speed")
        _write_series(os.path.join(out_dir, "cte_vs_time.csv"), rows, "cte")
        _plot_series(
            os.path.join(out_dir, "speed_vs_time.svg"), rows, "speed", "speed [m/s]",
            targets=[(seg.detect_t_s, seg.end_t_s, seg.target_mps) for seg in segments],
        )
        _plot_series(os.path.join(out_dir, "cte_vs_time.svg"), rows, "cte", "cte [m]")
        with open(os.path.join(out_dir, "summary.json"), "w") as fh:
            json.dump(summary.to_dict(), fh, indent=2)
    return summary


def _write_series(path, rows, key) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t_s", key])
        for r in rows:
            writer.writerow([format(r["t_s"], ".9g"), format(r[key], ".9g")])


def _plot_series(path, rows, key, ylabel, targets=None) -> None:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    t = [r["t_s"] for r in rows]
    v = [r[key] for r in rows]
    fig, ax = plt.subplots(figsize=(8, 3))
    ax.plot(t, v, linewidth=0.8)
    for t0, t1, target in targets or []:
        ax.hlines(target, t0, t1, colors="tab:red", linestyles="dashed", linewidth=0.8)
    ax.set_xlabel("t [s]")
    ax.set_ylabel(ylabel)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
