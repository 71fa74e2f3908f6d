"""Piecewise-linear centerline geometry.

A track is an ordered list of waypoints with precomputed cumulative arc
length.  Open tracks clamp arc positions at their ends; closed tracks
(circuits) wrap them, so a vehicle can lap indefinitely.  Projection of a
point onto the centerline returns the arc position of the nearest
centerline point and the signed lateral offset (positive = left of the
travel direction).
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np


def wrap_angle(theta: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    w = math.remainder(theta, math.tau)
    if w <= -math.pi:
        w += math.tau
    return w


class Track:
    def __init__(
        self,
        waypoints: Sequence[Sequence[float]],
        lane_half_width: float = 1.75,
        closed: bool = False,
    ):
        pts = np.asarray(waypoints, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 2:
            raise ValueError("track needs at least two (x, y) waypoints")
        if closed and np.allclose(pts[0], pts[-1]):
            pts = pts[:-1]  # the closing segment is implicit
        self.waypoints = pts
        self.lane_half_width = float(lane_half_width)
        self.closed = bool(closed)

        ends = np.vstack([pts[1:], pts[:1]]) if closed else pts[1:]
        starts = pts[:-1] if not closed else pts
        self._seg_start = starts
        self._seg_vec = ends - starts
        self._seg_len = np.hypot(self._seg_vec[:, 0], self._seg_vec[:, 1])
        if np.any(self._seg_len <= 0.0):
            raise ValueError("consecutive waypoints must be strictly apart")
        self._cum = np.concatenate([[0.0], np.cumsum(self._seg_len)])

    @property
    def total_length(self) -> float:
        return float(self._cum[-1])

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Track)
            and self.closed == other.closed
            and self.lane_half_width == other.lane_half_width
            and self.waypoints.shape == other.waypoints.shape
            and bool(np.all(self.waypoints == other.waypoints))
        )

    def _locate(self, s: float) -> tuple[int, float]:
        """Segment index and distance into it for an arc position."""
        if self.closed:
            s = s % self.total_length
        else:
            s = min(max(s, 0.0), self.total_length)
        i = int(np.searchsorted(self._cum, s, side="right")) - 1
        i = min(max(i, 0), len(self._seg_len) - 1)
        return i, s - self._cum[i]

    def point_at(self, s: float) -> tuple[float, float]:
        """Centerline point at arc position s (clamped, or wrapped if closed)."""
        i, into = self._locate(s)
        t = into / self._seg_len[i]
        p = self._seg_start[i] + t * self._seg_vec[i]
        return float(p[0]), float(p[1])

    def heading_at(self, s: float) -> float:
        i, _ = self._locate(s)
        v = self._seg_vec[i]
        return math.atan2(v[1], v[0])

    def project(self, x: float, y: float) -> tuple[float, float]:
        """Arc position of the nearest centerline point and signed offset.

        The offset is positive to the left of the local travel direction.
        Ties between segments resolve to the lowest segment index, so the
        result is deterministic.
        """
        p = np.array([x, y])
        rel = p - self._seg_start
        t = np.einsum("ij,ij->i", rel, self._seg_vec) / (self._seg_len**2)
        np.clip(t, 0.0, 1.0, out=t)
        q = self._seg_start + t[:, None] * self._seg_vec
        d = p - q
        dist2 = np.einsum("ij,ij->i", d, d)
        i = int(np.argmin(dist2))
        s = float(self._cum[i] + t[i] * self._seg_len[i])
        cross = (self._seg_vec[i, 0] * d[i, 1] - self._seg_vec[i, 1] * d[i, 0]) / self._seg_len[i]
        return s, float(cross)

    def arc_ahead(self, s_from: float, s_to: float) -> float:
        """Forward arc distance from s_from to s_to (wraps on circuits)."""
        if self.closed:
            return (s_to - s_from) % self.total_length
        return s_to - s_from

    def window_indices(self, s_lo: float, s_hi: float) -> np.ndarray:
        """Segment indices overlapping the arc interval [s_lo, s_hi]."""
        total = self.total_length
        if self.closed and s_hi - s_lo >= total:
            return np.arange(len(self._seg_len))
        if self.closed:
            s_lo %= total
            s_hi %= total
        starts = self._cum[:-1]
        ends = self._cum[1:]
        if not self.closed:
            mask = (ends >= max(s_lo, 0.0)) & (starts <= min(s_hi, total))
            return np.nonzero(mask)[0]
        if s_lo <= s_hi:
            mask = (ends >= s_lo) & (starts <= s_hi)
        else:  # interval wraps the seam
            mask = (ends >= s_lo) | (starts <= s_hi)
        return np.nonzero(mask)[0]

    def min_distance(self, points: np.ndarray, indices: np.ndarray) -> np.ndarray:
        """Unsigned distance from each point to the selected segments.

        ``points`` is (M, 2); the result is (M,).  Used by the renderer,
        which restricts the segment set to a window around the camera.
        """
        a = self._seg_start[indices]  # (K, 2)
        v = self._seg_vec[indices]
        ll = self._seg_len[indices] ** 2
        rel = points[:, None, :] - a[None, :, :]  # (M, K, 2)
        t = (rel[:, :, 0] * v[None, :, 0] + rel[:, :, 1] * v[None, :, 1]) / ll[None, :]
        np.clip(t, 0.0, 1.0, out=t)
        qx = a[None, :, 0] + t * v[None, :, 0]
        qy = a[None, :, 1] + t * v[None, :, 1]
        dx = points[:, None, 0] - qx
        dy = points[:, None, 1] - qy
        return np.sqrt((dx * dx + dy * dy).min(axis=1))


def _march(segments, spacing: float, start=(0.0, 0.0), heading: float = 0.0):
    """Walk straight/arc segments, dropping a waypoint every ``spacing`` m."""
    x, y = start
    th = heading
    pts = [(x, y)]
    for length, curvature in segments:
        n = max(1, int(round(length / spacing)))
        ds = length / n
        for _ in range(n):
            th_mid = th + curvature * ds / 2.0
            x += ds * math.cos(th_mid)
            y += ds * math.sin(th_mid)
            th += curvature * ds
            pts.append((x, y))
    return pts


def stadium_track(
    straight_len: float = 180.0,
    radius: float = 38.0,
    spacing: float = 2.0,
    lane_half_width: float = 2.0,
) -> Track:
    """Closed circuit: two straights joined by two half-circles."""
    segs = [
        (straight_len, 0.0),
        (math.pi * radius, 1.0 / radius),
        (straight_len, 0.0),
        (math.pi * radius, 1.0 / radius),
    ]
    pts = _march(segs, spacing)
    return Track(pts, lane_half_width=lane_half_width, closed=True)


def snake_track(
    lead_in: float = 60.0,
    arc_radius: float = 30.0,
    arc_angle: float = math.pi / 3.0,
    link_len: float = 20.0,
    pairs: int = 4,
    tail: float = 120.0,
    spacing: float = 2.0,
    lane_half_width: float = 1.75,
) -> Track:
    """Open S-curve road: alternating left/right arcs with short links."""
    segs = [(lead_in, 0.0)]
    k = 1.0 / arc_radius
    for i in range(pairs):
        segs.append((arc_angle * arc_radius, k))
        segs.append((link_len, 0.0))
        segs.append((arc_angle * arc_radius, -k))
        if i < pairs - 1:
            segs.append((link_len, 0.0))
    segs.append((tail, 0.0))
    pts = _march(segs, spacing)
    return Track(pts, lane_half_width=lane_half_width, closed=False)
