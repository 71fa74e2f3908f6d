"""World model and synthetic RGB camera.

The camera is a pinhole at a fixed height above the ego position, looking
along the heading.  Pixels below the horizon are ray-cast onto the ground
plane and classified by their distance to the track centerline: road
surface inside the lane, a white band at the lane edges, grass outside.
Rows at or above the horizon are sky.

Speed-limit signs are drawn as stripe-coded glyphs: a red ring with a
white face carrying 8 vertical stripes across the middle half of the
disc, encoding the limit as an 8-bit value, most significant stripe on
the left.  The glyph is a billboard anchored on the centerline at the
sign's arc position; its on-screen radius is clamp(round(320 / d), 4, 20)
pixels for a sign d meters ahead.  Rendering is pure: identical inputs
give identical bytes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .track import Track, wrap_angle
from .wire import CameraFrame, MacAddress, fragment_payload, VehicleTelemetry

SUPPORTED_LIMITS = (30, 40, 50, 60, 70, 80)

COLOR_SKY = (118, 156, 214)
COLOR_GRASS = (58, 122, 48)
COLOR_ROAD = (88, 88, 88)
COLOR_EDGE = (245, 245, 245)
COLOR_RING = (200, 24, 24)
COLOR_FACE = (255, 255, 255)
COLOR_STRIPE = (0, 0, 0)

EDGE_BAND = 0.25          # m of white at each lane edge
RING_RATIO = 0.8          # face radius as a fraction of the glyph radius
GLYPH_SCALE = 320.0       # glyph radius = clamp(round(scale / distance), 4, 20)
GLYPH_R_MIN = 4
GLYPH_R_MAX = 20


@dataclass
class Sign:
    s_pos: float
    limit_kmh: int


@dataclass
class CameraParams:
    width: int = 64
    height: int = 48
    fov: float = 1.0          # rad, horizontal
    range_m: float = 40.0     # signs beyond this are not drawn
    height_m: float = 1.5     # camera height above the ground plane
    noise_amplitude: int = 0  # uniform per-channel pixel noise, 0 = off

    def __post_init__(self):
        if self.width < 8 or self.height < 8:
            raise ValueError("camera must be at least 8x8")
        if not 0 < self.fov < math.pi:
            raise ValueError("fov must be in (0, pi)")
        if self.range_m <= 0 or self.height_m <= 0:
            raise ValueError("range_m and height_m must be positive")
        if not 0 <= self.noise_amplitude <= 255:
            raise ValueError("noise_amplitude must be in [0, 255]")


def stripe_bit(limit_kmh: int, k: int) -> int:
    """Stripe k of 8 (left to right), most significant bit first."""
    return (limit_kmh >> (7 - k)) & 1


def stripe_x_bounds(cx: float, r: float, k: int) -> tuple[float, float]:
    """Column interval [lo, hi) of stripe k for a glyph at (cx, r).

    The renderer fills integer columns in this interval and the decoder
    averages the same interval, so the two sides of the codec share this
    one definition.
    """
    lo = cx - r / 2.0 + k * r / 8.0
    return lo, lo + r / 8.0


class Camera:
    """Precomputes the ground-plane ray grid for one set of parameters."""

    def __init__(self, params: CameraParams):
        self.params = params
        w, h = params.width, params.height
        self.focal = (w / 2.0) / math.tan(params.fov / 2.0)
        self.cx = (w - 1) / 2.0
        self.cy = (h - 1) / 2.0
        self.far_clip = 3.0 * params.range_m

        rows = np.arange(h)
        dy = rows - self.cy
        ground = dy > 0
        depth = np.full(h, np.inf)
        depth[ground] = self.focal * params.height_m / dy[ground]
        self.ground_rows = np.nonzero(ground & (depth <= self.far_clip))[0]
        self.row_depth = depth[self.ground_rows]                      # (G,)
        cols = np.arange(w) - self.cx
        # lateral ground offset (camera-right positive) per ground pixel
        self.lateral = self.row_depth[:, None] * cols[None, :] / self.focal

    def render(
        self,
        pose: tuple[float, float, float],
        track: Track,
        signs: list[Sign],
        noise_seed: int = 0,
        frame_seq: int = 0,
    ) -> CameraFrame:
        p = self.params
        w, h = p.width, p.height
        ex, ey, heading = pose
        img = np.empty((h, w, 3), dtype=np.uint8)
        img[:, :] = COLOR_SKY
        if len(self.ground_rows):
            img[self.ground_rows[0] :, :] = COLOR_GRASS

        fwd = np.array([math.cos(heading), math.sin(heading)])
        right = np.array([math.sin(heading), -math.cos(heading)])
        gx = ex + self.row_depth[:, None] * fwd[0] + self.lateral * right[0]
        gy = ey + self.row_depth[:, None] * fwd[1] + self.lateral * right[1]
        points = np.stack([gx.ravel(), gy.ravel()], axis=1)

        s_ego, _ = track.project(ex, ey)
        idx = track.window_indices(s_ego - 25.0, s_ego + self.far_clip + 25.0)
        dist = track.min_distance(points, idx).reshape(gx.shape)

        half = track.lane_half_width
        ground = img[self.ground_rows[0] :, :] if len(self.ground_rows) else img[:0]
        road = dist <= half - EDGE_BAND
        edge = (dist <= half) & ~road
        ground[road] = COLOR_ROAD
        ground[edge] = COLOR_EDGE

        sign = self._next_sign(s_ego, track, signs)
        if sign is not None:
            self._draw_sign(img, sign, (ex, ey, heading), track)

        if p.noise_amplitude > 0:
            rng = np.random.Generator(
                np.random.PCG64((noise_seed << 17) ^ frame_seq)
            )
            noise = rng.integers(
                -p.noise_amplitude, p.noise_amplitude + 1, size=img.shape, dtype=np.int16
            )
            img = np.clip(img.astype(np.int16) + noise, 0, 255).astype(np.uint8)

        return CameraFrame(w, h, img.tobytes())

    def _next_sign(self, s_ego: float, track: Track, signs: list[Sign]):
        """Nearest sign ahead within sensing range, or None."""
        best = None
        for sign in signs:
            d = track.arc_ahead(s_ego, sign.s_pos)
            if 0.0 < d <= self.params.range_m and (best is None or d < best[0]):
                best = (d, sign)
        return best

    def _draw_sign(self, img, best, pose, track: Track):
        d, sign = best
        ex, ey, heading = pose
        sx, sy = track.point_at(sign.s_pos)
        alpha = wrap_angle(math.atan2(sy - ey, sx - ex) - heading)
        if abs(alpha) > self.params.fov / 2.0:
            return
        r = int(min(max(round(GLYPH_SCALE / d), GLYPH_R_MIN), GLYPH_R_MAX))
        u_c = round(self.cx - alpha * self.params.width / self.params.fov)
        v_c = round(self.cy)
        draw_glyph(img, u_c, v_c, r, sign.limit_kmh)


def draw_glyph(img: np.ndarray, u_c: int, v_c: int, r: int, limit_kmh: int) -> None:
    """Stamp a stripe-coded speed-limit glyph onto an RGB image, clipped."""
    h, w = img.shape[:2]
    x0, x1 = max(0, u_c - r), min(w - 1, u_c + r)
    y0, y1 = max(0, v_c - r), min(h - 1, v_c + r)
    if x0 > x1 or y0 > y1:
        return
    X, Y = np.meshgrid(np.arange(x0, x1 + 1), np.arange(y0, y1 + 1))
    d2 = (X - u_c) ** 2 + (Y - v_c) ** 2
    r_in2 = (RING_RATIO * r) ** 2
    patch = img[y0 : y1 + 1, x0 : x1 + 1]
    patch[d2 <= r * r] = COLOR_RING
    face = d2 <= r_in2
    patch[face] = COLOR_FACE
    in_band = np.abs(Y - v_c) <= r / 2.0
    for k in range(8):
        if not stripe_bit(limit_kmh, k):
            continue
        lo, hi = stripe_x_bounds(u_c, float(r), k)
        patch[face & in_band & (X >= lo) & (X < hi)] = COLOR_STRIPE


def render_camera(
    ego: tuple[float, float, float],
    track: Track,
    signs: list[Sign],
    cam: CameraParams,
    noise_seed: int = 0,
    frame_seq: int = 0,
) -> CameraFrame:
    """One-shot rendering; behaviors hold a Camera to reuse the ray grid."""
    return Camera(cam).render(ego, track, signs, noise_seed, frame_seq)


class EnvironmentBehavior:
    """Render a camera frame per step and ship it as fragments.

    The pose follows the latest telemetry; until any arrives, frames are
    rendered from the scenario's initial pose.
    """

    def __init__(
        self,
        track: Track,
        signs: list[Sign],
        cam: CameraParams,
        initial_pose: tuple[float, float, float],
        perception_mac: MacAddress,
        noise_seed: int = 0,
    ):
        self.track = track
        self.signs = list(signs)
        self.camera = Camera(cam)
        self.pose = initial_pose
        self.perception_mac = perception_mac
        self.noise_seed = noise_seed
        self.step_index = 0

    def compute(self, inbox):
        for _, payload in inbox:
            if isinstance(payload, VehicleTelemetry):
                self.pose = (payload.x, payload.y, payload.heading)
        seq = self.step_index & 0xFFFF
        frame = self.camera.render(
            self.pose, self.track, self.signs, self.noise_seed, seq
        )
        self.step_index += 1
        return [(self.perception_mac, frag) for frag in fragment_payload(frame, seq)]
