# world.py
# obstacles, the signed distance field and waypoint geometry

import logging
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.ndimage import map_coordinates

from .dynamics import QuadState, quat_to_rotation
from .errors import ConfigError

logger = logging.getLogger(__name__)

IDENTITY_QUAT = (1.0, 0.0, 0.0, 0.0)
PRIMITIVE_SIZES = {"sphere": 1, "box": 3, "cylinder": 2}


@dataclass
class Bounds:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        self.lo = np.asarray(self.lo, dtype=float)
        self.hi = np.asarray(self.hi, dtype=float)
        if np.any(self.hi <= self.lo):
            raise ValueError(f"empty world bounds {self.lo} .. {self.hi}")

    def contains(self, p):
        p = np.asarray(p, dtype=float)
        return np.all((p >= self.lo) & (p <= self.hi), axis=-1)

    def clip(self, p):
        return np.clip(p, self.lo, self.hi)

    def distance_to_faces(self, points):
        """Positive inside the box, negative outside."""
        points = np.asarray(points, dtype=float)
        return np.minimum(points - self.lo, self.hi - points).min(axis=-1)


@dataclass
class ObstaclePrimitive:
    """A sphere (radius), box (side lengths) or capped cylinder (radius, height).

    Box and cylinder extents are given in the local frame of `orientation`;
    the cylinder axis is local z.
    """

    kind: str
    center: np.ndarray
    size: tuple
    orientation: np.ndarray = field(default_factory=lambda: np.array(IDENTITY_QUAT))

    def __post_init__(self):
        if self.kind not in PRIMITIVE_SIZES:
            raise ValueError(f"unknown obstacle kind {self.kind!r}")
        if len(self.size) != PRIMITIVE_SIZES[self.kind]:
            raise ValueError(
                f"{self.kind} needs {PRIMITIVE_SIZES[self.kind]} extents, "
                f"got {self.size}"
            )
        if min(self.size) <= 0:
            raise ValueError(f"obstacle extents must be > 0, got {self.size}")
        self.center = np.asarray(self.center, dtype=float)
        q = np.asarray(self.orientation, dtype=float)
        self.orientation = q / np.linalg.norm(q)
        self._rotation = quat_to_rotation(self.orientation)

    def signed_distance(self, points):
        points = np.asarray(points, dtype=float)
        if self.kind == "sphere":
            return np.linalg.norm(points - self.center, axis=-1) - self.size[0]
        # R^T (x - c) expressed as row vectors
        local = (points - self.center) @ self._rotation
        if self.kind == "box":
            q = np.abs(local) - 0.5 * np.asarray(self.size)
            outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
            return outside + np.minimum(q.max(axis=-1), 0.0)
        radius, height = self.size
        d = np.stack(
            [
                np.linalg.norm(local[..., :2], axis=-1) - radius,
                np.abs(local[..., 2]) - 0.5 * height,
            ],
            axis=-1,
        )
        return np.minimum(d.max(axis=-1), 0.0) + np.linalg.norm(
            np.maximum(d, 0.0), axis=-1
        )


def analytic_distance(obstacles, bounds, points):
    """Exact signed distance to the nearest obstacle or world face."""
    dist = bounds.distance_to_faces(points)
    for obstacle in obstacles:
        dist = np.minimum(dist, obstacle.signed_distance(points))
    return dist


@dataclass
class Esdf:
    origin: np.ndarray
    resolution: float
    values: np.ndarray

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=float)
        if self.resolution <= 0:
            raise ValueError(f"resolution must be > 0, got {self.resolution}")
        self.values = np.asarray(self.values, dtype=np.float32)
        self._upper = self.origin + (np.asarray(self.dims) - 1) * self.resolution

    @property
    def dims(self):
        return tuple(int(n) for n in self.values.shape)

    def node_position(self, index):
        return self.origin + np.asarray(index, dtype=float) * self.resolution

    def in_bounds(self, points):
        points = np.asarray(points, dtype=float)
        eps = 1e-9
        return np.all(
            (points >= self.origin - eps) & (points <= self._upper + eps), axis=-1
        )

    def query(self, points):
        """Trilinear distance lookup; returns (distance, inside grid).

        Points outside the grid read 0.
        """
        points = np.asarray(points, dtype=float)
        flat = points.reshape(-1, 3)
        coords = ((flat - self.origin) / self.resolution).T
        dist = map_coordinates(
            self.values, coords, order=1, mode="nearest", output=np.float64
        )
        inside = self.in_bounds(flat)
        dist = np.where(inside, dist, 0.0)
        shape = points.shape[:-1]
        return dist.reshape(shape), inside.reshape(shape)

    def distance(self, p):
        dist, inside = self.query(p)
        if np.ndim(dist) == 0:
            if not inside:
                logger.debug("distance query outside the grid at %s", p)
            return float(dist)
        return dist

    def is_collision(self, p, d_c):
        return self.distance(p) <= d_c

    def _segment_points(self, starts, ends):
        """Samples at most half a voxel apart on every segment, endpoints included.

        Returns the stacked samples and the index of each segment's first one.
        """
        starts = np.asarray(starts, dtype=float).reshape(-1, 3)
        ends = np.asarray(ends, dtype=float).reshape(-1, 3)
        starts, ends = np.broadcast_arrays(starts, ends)
        # fixed endpoint order so the check is symmetric bit for bit
        diff = ends - starts
        rows = np.arange(len(diff))
        swap = diff[rows, np.argmax(diff != 0.0, axis=1)] < 0.0
        lo = np.where(swap[:, None], ends, starts)
        hi = np.where(swap[:, None], starts, ends)
        lengths = np.linalg.norm(hi - lo, axis=1)
        n = np.maximum(1, np.ceil(lengths / (0.5 * self.resolution))).astype(int)
        offsets = np.concatenate([[0], np.cumsum(n + 1)[:-1]])
        owner = np.repeat(rows, n + 1)
        t = (np.arange(len(owner)) - offsets[owner]) / n[owner]
        return lo[owner] + t[:, None] * (hi - lo)[owner], offsets

    def segment_free(self, a, b, d_c):
        return bool(self.pairs_free([a], [b], d_c)[0])

    def pairs_free(self, starts, ends, d_c):
        """segment_free(starts[i], ends[i]) for every i, with a single grid lookup.

        A single start is shared by all ends.
        """
        ends = np.asarray(ends, dtype=float).reshape(-1, 3)
        if not len(ends):
            return np.zeros(0, dtype=bool)
        points, offsets = self._segment_points(starts, ends)
        return np.minimum.reduceat(self.distance(points), offsets) > d_c


def build_esdf(obstacles, bounds, resolution=0.05):
    """Sample the analytic signed distance on a regular grid over bounds."""
    if resolution <= 0:
        raise ValueError(f"resolution must be > 0, got {resolution}")
    extent = bounds.hi - bounds.lo
    dims = (np.ceil(extent / resolution - 1e-9).astype(int) + 1).tolist()
    ys = bounds.lo[1] + np.arange(dims[1]) * resolution
    zs = bounds.lo[2] + np.arange(dims[2]) * resolution
    yy, zz = np.meshgrid(ys, zs, indexing="ij")
    values = np.empty(dims, dtype=np.float32)
    for i in range(dims[0]):
        x = bounds.lo[0] + i * resolution
        plane = np.stack([np.full_like(yy, x), yy, zz], axis=-1)
        values[i] = analytic_distance(obstacles, bounds, plane)
    logger.info(
        "built ESDF %s voxels at %.3f m from %d obstacles",
        "x".join(str(n) for n in dims),
        resolution,
        len(obstacles),
    )
    return Esdf(origin=bounds.lo.copy(), resolution=resolution, values=values)


@dataclass
class Waypoint:
    """Gate centre, orientation (gate normal is local x) and pass tolerance."""

    center: np.ndarray
    orientation: np.ndarray = field(default_factory=lambda: np.array(IDENTITY_QUAT))
    r_tol: float = 0.3

    def __post_init__(self):
        if self.r_tol <= 0:
            raise ValueError(f"r_tol must be > 0, got {self.r_tol}")
        self.center = np.asarray(self.center, dtype=float)
        q = np.asarray(self.orientation, dtype=float)
        self.orientation = q / np.linalg.norm(q)
        self.rotation = quat_to_rotation(self.orientation)
        self.corners = waypoint_corners(self)

    @property
    def normal(self):
        return self.rotation[:, 0]


def waypoint_corners(wp):
    """The gate square of edge 2 r_tol, ordered (++, +-, --, -+) in local y-z."""
    r = wp.r_tol
    local = np.array(
        [[0.0, r, r], [0.0, r, -r], [0.0, -r, -r], [0.0, -r, r]],
    )
    rotation = quat_to_rotation(np.asarray(wp.orientation, dtype=float))
    return wp.center + local @ rotation.T


def waypoint_passed(p_prev, p, wp):
    """Miss distance if the step p_prev -> p went through the gate, else None."""
    p_prev = np.asarray(p_prev, dtype=float)
    p = np.asarray(p, dtype=float)
    n = wp.normal
    s0 = float(np.dot(p_prev - wp.center, n))
    s1 = float(np.dot(p - wp.center, n))
    if s0 != s1 and min(s0, s1) <= 0.0 <= max(s0, s1):
        t = s0 / (s0 - s1)
        crossing = p_prev + t * (p - p_prev)
        d_wp = float(np.linalg.norm(crossing - wp.center))
        if d_wp <= wp.r_tol:
            return d_wp
    d_wp = float(np.linalg.norm(p - wp.center))
    if d_wp <= wp.r_tol:
        return d_wp
    return None


@dataclass
class Scenario:
    start: QuadState
    waypoints: List[Waypoint]
    obstacles: List[ObstaclePrimitive]
    bounds: Bounds
    d_c: float = 0.15
    end: Optional[Waypoint] = None
    name: str = "scenario"

    @property
    def targets(self):
        """Waypoints the vehicle must pass, in order, including the end."""
        if self.end is None:
            return list(self.waypoints)
        return list(self.waypoints) + [self.end]

    @property
    def anchor_points(self):
        """Start position followed by every target centre."""
        start = np.asarray(self.start.p, dtype=float)
        return [start] + [t.center for t in self.targets]

    def validate(self):
        for i, wp in enumerate(self.targets):
            if not bool(self.bounds.contains(wp.center)):
                raise ConfigError(f"waypoint {i} at {wp.center} is outside the bounds")
        clearance = float(analytic_distance(self.obstacles, self.bounds, self.start.p))
        if clearance <= self.d_c:
            raise ConfigError(
                f"start position {self.start.p} is in collision "
                f"(clearance {clearance:.3f} m <= d_c {self.d_c} m)"
            )
        return self
