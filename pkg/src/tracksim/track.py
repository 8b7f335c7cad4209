"""Track geometry: piecewise straight/arc centerlines and the Frenet frame.

A track is an ordered list of segments, each a straight or a constant-radius
arc with its own width and friction.  The centerline starts at the world
origin heading along +x.  All track-relative quantities use the conventions:

* ``s`` is arc length along the centerline from the start line, in meters.
* ``lateral`` is the signed offset from the centerline, positive to the
  LEFT of the direction of travel.
* ``track_pos`` is ``lateral / (width / 2)``: 0 on the centerline, +1 on the
  left edge, -1 on the right edge, beyond +/-1 when off track.
* ``angle`` is vehicle heading minus centerline tangent, wrapped to
  [-pi, pi]; +pi/2 means the car points perpendicular-left to the track.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass, field
from typing import IO, Union

import numpy as np
import yaml

from .errors import TrackError

TWO_PI = 2.0 * math.pi

# geometric closure tolerances for closed tracks
CLOSURE_TOL_POS = 1e-6   # meters
CLOSURE_TOL_ANGLE = 1e-6  # radians


def wrap_pi(a: float) -> float:
    """Wrap an angle to [-pi, pi]."""
    a = math.fmod(a + math.pi, TWO_PI)
    if a < 0.0:
        a += TWO_PI
    return a - math.pi


def wrap_2pi(a: float) -> float:
    """Wrap an angle to [0, 2*pi)."""
    a = math.fmod(a, TWO_PI)
    if a < 0.0:
        a += TWO_PI
    return a


@dataclass(frozen=True)
class TrackSegment:
    """One centerline piece: a straight (``length``) or arc (``radius``, ``sweep``).

    ``sweep`` is signed: positive turns left (counterclockwise).
    """

    kind: str
    width: float
    friction: float
    length: float = 0.0
    radius: float = 0.0
    sweep: float = 0.0

    def validate(self, index: int) -> None:
        where = f"segment {index}"
        if self.kind not in ("straight", "arc"):
            raise TrackError(f"{where}: unknown kind {self.kind!r}")
        if not self.width > 0.0:
            raise TrackError(f"{where}: width must be > 0, got {self.width}")
        if not 0.0 < self.friction <= 2.0:
            raise TrackError(f"{where}: friction must be in (0, 2], got {self.friction}")
        if self.kind == "straight":
            if not self.length > 0.0:
                raise TrackError(f"{where}: straight length must be > 0, got {self.length}")
        else:
            if not self.radius > self.width / 2.0:
                raise TrackError(
                    f"{where}: arc radius {self.radius} must exceed half-width "
                    f"{self.width / 2.0} (inner edge would self-intersect)"
                )
            if not 0.0 < abs(self.sweep) < TWO_PI:
                raise TrackError(f"{where}: |sweep| must be in (0, 2*pi), got {self.sweep}")

    @property
    def centerline_length(self) -> float:
        if self.kind == "straight":
            return self.length
        return self.radius * abs(self.sweep)


@dataclass(frozen=True)
class FrenetPose:
    """Track-relative pose of a point (and optionally a heading)."""

    s: float
    lateral: float
    track_pos: float
    angle: float
    segment: int = 0


@dataclass
class _SegmentFrame:
    """Precomputed world-frame placement of one segment."""

    seg: TrackSegment
    s0: float            # cumulative arc length at segment start
    x: float             # start point
    y: float
    heading: float       # tangent heading at start
    # arcs only:
    cx: float = 0.0
    cy: float = 0.0
    theta0: float = 0.0  # angle of the start point as seen from the center
    sign: float = 1.0    # +1 left turn, -1 right turn


class Track:
    """Validated track geometry with Frenet projection and edge ray casting.

    Immutable after construction; safe for concurrent reads.
    """

    def __init__(self, name: str, segments: list[TrackSegment], closed: bool):
        if not segments:
            raise TrackError("track has no segments")
        for i, seg in enumerate(segments):
            seg.validate(i)
        self.name = name
        self.segments = tuple(segments)
        self.closed = closed
        self._frames: list[_SegmentFrame] = []
        self._cum_s: list[float] = []
        self._build_frames()
        self.total_length = self._cum_s[-1]
        if closed:
            self._check_closure()
        self._build_edges()

    # -- construction ---------------------------------------------------

    def _build_frames(self) -> None:
        x, y, h = 0.0, 0.0, 0.0
        s0 = 0.0
        self._cum_s = [0.0]
        for seg in self.segments:
            fr = _SegmentFrame(seg=seg, s0=s0, x=x, y=y, heading=h)
            if seg.kind == "arc":
                sgn = 1.0 if seg.sweep > 0 else -1.0
                fr.sign = sgn
                # center sits perpendicular-left (sgn=+1) or -right of heading
                fr.cx = x + seg.radius * math.cos(h + sgn * math.pi / 2.0)
                fr.cy = y + seg.radius * math.sin(h + sgn * math.pi / 2.0)
                fr.theta0 = math.atan2(y - fr.cy, x - fr.cx)
                theta1 = fr.theta0 + seg.sweep
                x = fr.cx + seg.radius * math.cos(theta1)
                y = fr.cy + seg.radius * math.sin(theta1)
                h = h + seg.sweep
            else:
                x += seg.length * math.cos(h)
                y += seg.length * math.sin(h)
            self._frames.append(fr)
            s0 += seg.centerline_length
            self._cum_s.append(s0)
        self._end_pose = (x, y, h)

    def _check_closure(self) -> None:
        x, y, h = self._end_pose
        dpos = math.hypot(x, y)
        dang = abs(wrap_pi(h))
        if dpos > CLOSURE_TOL_POS or dang > CLOSURE_TOL_ANGLE:
            raise TrackError(
                f"closed track does not close: end pose offset {dpos:.3e} m, "
                f"{dang:.3e} rad (last segment {len(self.segments) - 1})"
            )

    def _build_edges(self) -> None:
        """Precompute edge primitives (offset lines and circles) for ray casting."""
        line_p0, line_d, line_len = [], [], []
        arc_c, arc_r, arc_t0, arc_sgn, arc_sweep = [], [], [], [], []
        for fr in self._frames:
            seg = fr.seg
            half = seg.width / 2.0
            if seg.kind == "straight":
                nx = math.cos(fr.heading + math.pi / 2.0)
                ny = math.sin(fr.heading + math.pi / 2.0)
                dx, dy = math.cos(fr.heading), math.sin(fr.heading)
                for side in (half, -half):
                    line_p0.append((fr.x + side * nx, fr.y + side * ny))
                    line_d.append((dx, dy))
                    line_len.append(seg.length)
            else:
                for side in (half, -half):
                    # lateral offset `side` sits at radius R - sign*side
                    arc_c.append((fr.cx, fr.cy))
                    arc_r.append(seg.radius - fr.sign * side)
                    arc_t0.append(fr.theta0)
                    arc_sgn.append(fr.sign)
                    arc_sweep.append(abs(seg.sweep))
        self._edge_line_p0 = np.asarray(line_p0, dtype=float).reshape(-1, 2)
        self._edge_line_d = np.asarray(line_d, dtype=float).reshape(-1, 2)
        self._edge_line_len = np.asarray(line_len, dtype=float)
        self._edge_arc_c = np.asarray(arc_c, dtype=float).reshape(-1, 2)
        self._edge_arc_r = np.asarray(arc_r, dtype=float)
        self._edge_arc_t0 = np.asarray(arc_t0, dtype=float)
        self._edge_arc_sgn = np.asarray(arc_sgn, dtype=float)
        self._edge_arc_sweep = np.asarray(arc_sweep, dtype=float)

    # -- queries ---------------------------------------------------------

    def segment_at(self, s: float) -> tuple[int, float]:
        """Return (segment index, local arc length) containing ``s``.

        Closed tracks wrap; open tracks clamp to [0, total_length].
        """
        if self.closed:
            s = s % self.total_length
        else:
            s = min(max(s, 0.0), self.total_length)
        idx = bisect_right(self._cum_s, s) - 1
        if idx >= len(self.segments):
            idx = len(self.segments) - 1
        return idx, s - self._cum_s[idx]

    def width_at(self, s: float) -> float:
        idx, _ = self.segment_at(s)
        return self.segments[idx].width

    def friction_at(self, s: float) -> float:
        idx, _ = self.segment_at(s)
        return self.segments[idx].friction

    def frenet_to_world(self, s: float, lateral: float = 0.0) -> tuple[float, float, float]:
        """Map (s, lateral) to (x, y, tangent heading).

        Closed tracks wrap ``s``; open tracks reject s outside [0, total_length].
        """
        if not self.closed and not 0.0 <= s <= self.total_length:
            raise TrackError(f"s={s} outside [0, {self.total_length}] on open track")
        idx, s_loc = self.segment_at(s)
        fr = self._frames[idx]
        seg = fr.seg
        if seg.kind == "straight":
            dx, dy = math.cos(fr.heading), math.sin(fr.heading)
            nx, ny = -dy, dx
            return (fr.x + s_loc * dx + lateral * nx,
                    fr.y + s_loc * dy + lateral * ny,
                    fr.heading)
        phi = fr.theta0 + fr.sign * (s_loc / seg.radius)
        r_pt = seg.radius - fr.sign * lateral
        return (fr.cx + r_pt * math.cos(phi),
                fr.cy + r_pt * math.sin(phi),
                wrap_pi(phi + fr.sign * math.pi / 2.0))

    def _project_segment(self, idx: int, x: float, y: float):
        """Project a point onto segment ``idx``; returns (dist, s, lateral, tangent)."""
        fr = self._frames[idx]
        seg = fr.seg
        if seg.kind == "straight":
            dx, dy = math.cos(fr.heading), math.sin(fr.heading)
            rx, ry = x - fr.x, y - fr.y
            t = rx * dx + ry * dy
            t_cl = min(max(t, 0.0), seg.length)
            cx, cy = fr.x + t_cl * dx, fr.y + t_cl * dy
            lateral = -(x - cx) * dy + (y - cy) * dx
            dist = math.hypot(x - cx, y - cy)
            return dist, fr.s0 + t_cl, lateral, fr.heading
        mx, my = x - fr.cx, y - fr.cy
        r_p = math.hypot(mx, my)
        phi = math.atan2(my, mx)
        u = wrap_2pi((phi - fr.theta0) * fr.sign)
        sweep_abs = abs(seg.sweep)
        if u <= sweep_abs:
            s_loc = u * seg.radius
            lateral = fr.sign * (seg.radius - r_p)
            dist = abs(seg.radius - r_p)
            tangent = wrap_pi(phi + fr.sign * math.pi / 2.0)
            return dist, fr.s0 + s_loc, lateral, tangent
        # clamp to the nearer arc endpoint (angular distance on the wrap circle)
        if u - sweep_abs <= (TWO_PI - u):
            s_loc = seg.centerline_length
            phi_e = fr.theta0 + seg.sweep
        else:
            s_loc = 0.0
            phi_e = fr.theta0
        ex = fr.cx + seg.radius * math.cos(phi_e)
        ey = fr.cy + seg.radius * math.sin(phi_e)
        tangent = wrap_pi(phi_e + fr.sign * math.pi / 2.0)
        tx, ty = math.cos(tangent), math.sin(tangent)
        lateral = -(x - ex) * ty + (y - ey) * tx
        dist = math.hypot(x - ex, y - ey)
        return dist, fr.s0 + s_loc, lateral, tangent

    def project(self, x: float, y: float, heading: float = 0.0,
                hint: int | None = None) -> FrenetPose:
        """Project a world point (and heading) to the nearest centerline point.

        Equidistant candidates resolve to the smallest ``s``.  ``hint`` is a
        segment index from a previous projection; when the point is still
        clearly inside the hinted segment the search is O(1) instead of
        O(segments).
        """
        n = len(self.segments)
        best = None
        best_idx = 0
        if hint is not None and 0 <= hint < n:
            cand = self._project_segment(hint, x, y)
            fr = self._frames[hint]
            s_loc = cand[1] - fr.s0
            # interior hit close to this centerline piece is unambiguous:
            # built tracks keep distinct sections farther apart than a width
            if cand[0] <= 0.6 * fr.seg.width and \
                    1e-9 < s_loc < fr.seg.centerline_length - 1e-9:
                return self._finish_pose(cand, hint, heading)
            best = cand
            best_idx = hint
            for off in (1, -1, 2, -2):
                idx = (hint + off) % n if self.closed else hint + off
                if not 0 <= idx < n or idx == hint:
                    continue
                cand = self._project_segment(idx, x, y)
                if (cand[0], cand[1]) < (best[0], best[1]):
                    best = cand
                    best_idx = idx
            if best[0] <= self.segments[best_idx].width:
                return self._finish_pose(best, best_idx, heading)
            best = None
        for idx in range(n):
            cand = self._project_segment(idx, x, y)
            if best is None or (cand[0], cand[1]) < (best[0], best[1]):
                best = cand
                best_idx = idx
        return self._finish_pose(best, best_idx, heading)

    def _finish_pose(self, cand, idx: int, heading: float) -> FrenetPose:
        _, s, lateral, tangent = cand
        if self.closed and s >= self.total_length:
            s -= self.total_length
        width = self.segments[idx].width
        return FrenetPose(
            s=s,
            lateral=lateral,
            track_pos=lateral / (width / 2.0),
            angle=wrap_pi(heading - tangent),
            segment=idx,
        )

    def raycast_edges(self, x: float, y: float, world_angles: np.ndarray) -> np.ndarray:
        """Distance from (x, y) to the first track edge along each world-frame angle.

        Returns one distance per angle, clipped to [0, RANGE_MAX]; rays that
        escape the track (open ends, > 200 m) saturate at the ceiling.
        """
        from .constants import RANGE_MAX

        ux = np.cos(world_angles)
        uy = np.sin(world_angles)
        n_rays = len(world_angles)
        dist = np.full(n_rays, RANGE_MAX)

        if len(self._edge_line_len):
            p0 = self._edge_line_p0
            d = self._edge_line_d
            # solve o + t*u = p0 + w*d for each (ray, line)
            denom = ux[:, None] * (-d[None, :, 1]) + uy[:, None] * d[None, :, 0]
            rx = p0[None, :, 0] - x
            ry = p0[None, :, 1] - y
            with np.errstate(divide="ignore", invalid="ignore"):
                t = (rx * (-d[None, :, 1]) + ry * d[None, :, 0]) / denom
                w = (ux[:, None] * ry - uy[:, None] * rx) / denom
            ok = (np.abs(denom) > 1e-12) & (t > 1e-9)
            ok &= (w >= -1e-9) & (w <= self._edge_line_len[None, :] + 1e-9)
            t = np.where(ok, t, np.inf)
            dist = np.minimum(dist, t.min(axis=1))

        if len(self._edge_arc_r):
            mx = x - self._edge_arc_c[None, :, 0]
            my = y - self._edge_arc_c[None, :, 1]
            b = 2.0 * (ux[:, None] * mx + uy[:, None] * my)
            c = mx * mx + my * my - self._edge_arc_r[None, :] ** 2
            disc = b * b - 4.0 * c
            sq = np.sqrt(np.maximum(disc, 0.0))
            for root_sign in (-1.0, 1.0):
                t = (-b + root_sign * sq) / 2.0
                px = x + t * ux[:, None]
                py = y + t * uy[:, None]
                phi = np.arctan2(py - self._edge_arc_c[None, :, 1],
                                 px - self._edge_arc_c[None, :, 0])
                rel = (phi - self._edge_arc_t0[None, :]) * self._edge_arc_sgn[None, :]
                rel = np.mod(rel, TWO_PI)
                ok = (disc >= 0.0) & (t > 1e-9)
                ok &= (rel <= self._edge_arc_sweep[None, :] + 1e-9) | (rel >= TWO_PI - 1e-9)
                t = np.where(ok, t, np.inf)
                dist = np.minimum(dist, t.min(axis=1))

        return np.clip(dist, 0.0, RANGE_MAX)


# -- loading -----------------------------------------------------------------

_TRACK_KEYS = {"name", "closed", "segments"}
_SEGMENT_KEYS = {"kind", "length", "radius", "sweep", "width", "friction"}


def load_track(source: Union[bytes, str, IO]) -> Track:
    """Parse and validate a track description document.

    The document is YAML with header keys ``name``/``closed`` and a
    ``segments`` list; each record carries ``kind`` plus ``length`` (straight)
    or ``radius``/``sweep`` (arc) and ``width``/``friction``.  Unknown keys are
    rejected.
    """
    if hasattr(source, "read"):
        source = source.read()
    if isinstance(source, bytes):
        source = source.decode("utf-8")
    try:
        doc = yaml.safe_load(source)
    except yaml.YAMLError as exc:
        raise TrackError(f"malformed track document: {exc}") from exc
    if not isinstance(doc, dict):
        raise TrackError("track document must be a mapping")
    unknown = set(doc) - _TRACK_KEYS
    if unknown:
        raise TrackError(f"unknown track keys: {sorted(unknown)}")
    name = doc.get("name")
    if not isinstance(name, str) or not name:
        raise TrackError("track name must be a non-empty string")
    closed = doc.get("closed", False)
    if not isinstance(closed, bool):
        raise TrackError("closed must be a boolean")
    records = doc.get("segments")
    if not isinstance(records, list) or not records:
        raise TrackError("segments must be a non-empty list")
    segments = []
    for i, rec in enumerate(records):
        if not isinstance(rec, dict):
            raise TrackError(f"segment {i}: must be a mapping")
        unknown = set(rec) - _SEGMENT_KEYS
        if unknown:
            raise TrackError(f"segment {i}: unknown keys {sorted(unknown)}")
        kind = rec.get("kind")
        if kind not in ("straight", "arc"):
            raise TrackError(f"segment {i}: kind must be 'straight' or 'arc', got {kind!r}")
        if kind == "straight" and ("radius" in rec or "sweep" in rec):
            raise TrackError(f"segment {i}: straight segments take no radius/sweep")
        if kind == "arc" and "length" in rec:
            raise TrackError(f"segment {i}: arc segments take no length")
        try:
            seg = TrackSegment(
                kind=kind,
                width=float(rec["width"]),
                friction=float(rec.get("friction", 1.0)),
                length=float(rec.get("length", 0.0)),
                radius=float(rec.get("radius", 0.0)),
                sweep=float(rec.get("sweep", 0.0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise TrackError(f"segment {i}: bad or missing field ({exc})") from exc
        segments.append(seg)
    return Track(name=name, segments=segments, closed=closed)


def lap_fraction(track: Track, distance_raced: float) -> float:
    """Fraction of a lap covered; uncapped, so 2.0 means two full laps."""
    if distance_raced < 0.0:
        raise ValueError("distance_raced must be >= 0")
    return distance_raced / track.total_length


_DATA_DIR = None


def _data_dir():
    global _DATA_DIR
    if _DATA_DIR is None:
        from pathlib import Path

        _DATA_DIR = Path(__file__).parent / "data" / "tracks"
    return _DATA_DIR


def builtin_track_names() -> list[str]:
    return sorted(p.stem for p in _data_dir().glob("*.yaml"))


def builtin_track(name: str) -> Track:
    """Load one of the shipped tracks by name (oval, serpent, hairpin, narrow)."""
    path = _data_dir() / f"{name}.yaml"
    if not path.exists():
        raise TrackError(f"unknown builtin track {name!r}; have {builtin_track_names()}")
    return load_track(path.read_text())
