# progress.py
# path projection, reached distance, progress reward and curriculum scaling

import logging
import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

logger = logging.getLogger(__name__)

TIE_TOLERANCE = 1e-9
VISIBILITY_SPACING = 0.1
VISIBILITY_CHUNK = 32


class Stage(str, Enum):
    SLOW = "slow"
    FAST = "fast"


class CurriculumConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    stage: Stage = Stage.SLOW
    v_min: float = Field(1.0, ge=0)
    v_max: float = Field(2.0, gt=0)
    d_max: float = Field(0.3, gt=0)

    @model_validator(mode="after")
    def speed_window(self):
        if self.v_min >= self.v_max:
            raise ValueError(f"v_min ({self.v_min}) must be < v_max ({self.v_max})")
        return self


class RewardWeights(BaseModel):
    """Gains of the total reward. k_s is derived from the track when unset."""

    model_config = ConfigDict(extra="forbid")

    k_p: float = 5.0
    k_s: Optional[float] = None
    k_wp: float = 5.0
    k_omega: float = 0.01
    r_T: float = -10.0


@dataclass
class PathProjection:
    l: int
    t: float
    psi: np.ndarray
    dist: float
    s: float


@dataclass
class RewardTerms:
    progress: float = 0.0
    reached: float = 0.0
    waypoint: float = 0.0
    terminal: float = 0.0
    rate: float = 0.0

    @property
    def total(self):
        return self.progress + self.reached + self.waypoint + self.terminal + self.rate

    def as_row(self):
        return [self.progress, self.reached, self.waypoint, self.terminal, self.rate]


def project(path, p, window=None):
    """Closest point of the polyline to p.

    `window` is an optional (first, last) range of 1-based segment indices
    to search; ties within TIE_TOLERANCE go to the larger reached distance.
    """
    p = np.asarray(p, dtype=float)
    starts = path.points[:-1]
    deltas = np.diff(path.points, axis=0)
    n_segments = len(deltas)
    first, last = 1, n_segments
    if window is not None:
        first = max(1, int(window[0]))
        last = min(n_segments, int(window[1]))
    index = np.arange(first - 1, last)

    d = deltas[index]
    sq = np.einsum("ij,ij->i", d, d)
    valid = sq > 0.0
    if not np.any(valid):
        return PathProjection(l=first, t=0.0, psi=starts[index[0]].copy(),
                              dist=float(np.linalg.norm(p - starts[index[0]])),
                              s=float(path.cumulative[index[0]]))
    index, d, sq = index[valid], d[valid], sq[valid]
    t = np.clip(np.einsum("ij,ij->i", p - starts[index], d) / sq, 0.0, 1.0)
    psi = starts[index] + t[:, None] * d
    dist = np.linalg.norm(p - psi, axis=1)
    s = path.cumulative[index] + t * np.sqrt(sq)

    candidates = np.flatnonzero(dist <= dist.min() + TIE_TOLERANCE)
    best = candidates[np.argmax(s[candidates])]
    return PathProjection(
        l=int(index[best]) + 1,
        t=float(t[best]),
        psi=psi[best],
        dist=float(dist[best]),
        s=float(s[best]),
    )


def reached_distance(path, proj):
    l = proj.l - 1
    return float(path.cumulative[l] + np.linalg.norm(proj.psi - path.points[l]))


def progress_reward(s_t, s_prev):
    return s_t - s_prev


def farthest_visible(path, p, esdf, d_c, proj=None, spacing=VISIBILITY_SPACING):
    """Farthest path point reachable from p by a contiguous run of free segments."""
    projections = None if proj is None else [proj]
    return farthest_visible_many([path], [p], esdf, d_c, projections, spacing)[0]


def farthest_visible_many(
    paths, points, esdf, d_c, projections=None, spacing=VISIBILITY_SPACING
):
    """farthest_visible for a batch of agents.

    Every round checks the next VISIBILITY_CHUNK samples of all agents that are
    still unblocked in one distance field lookup.
    """
    points = np.asarray(points, dtype=float).reshape(-1, 3)
    if projections is None:
        projections = [project(path, p) for path, p in zip(paths, points)]
    gammas = np.array([proj.psi for proj in projections], dtype=float).reshape(-1, 3)
    active = list(np.flatnonzero(esdf.pairs_free(points, gammas, d_c)))

    samples = {}
    for i in active:
        path, proj = paths[i], projections[i]
        arclengths = np.arange(proj.s + spacing, path.length, spacing)
        samples[i] = path.point_at(np.append(arclengths, path.length))

    start = 0
    while active:
        chunks = [samples[i][start:start + VISIBILITY_CHUNK] for i in active]
        sizes = [len(chunk) for chunk in chunks]
        origins = np.repeat(points[active], sizes, axis=0)
        free = esdf.pairs_free(origins, np.concatenate(chunks), d_c)
        still_active = []
        splits = np.split(free, np.cumsum(sizes)[:-1])
        for i, chunk, flags in zip(active, chunks, splits):
            # first blocked sample, or len(chunk) when the whole chunk is free
            first = int(np.argmin(flags)) if not flags.all() else len(flags)
            if first > 0:
                gammas[i] = chunk[first - 1]
            if first == len(flags) and start + VISIBILITY_CHUNK < len(samples[i]):
                still_active.append(i)
        active = still_active
        start += VISIBILITY_CHUNK
    return gammas


def curriculum_scale(speed, dist, cfg):
    if cfg.stage == Stage.FAST:
        return 1.0
    s_vmax = 10.0 ** (cfg.v_max - speed) if speed > cfg.v_max else 1.0
    s_vmin = 10.0 ** (speed - cfg.v_min) if speed < cfg.v_min else 1.0
    s_gd = math.exp(-dist + cfg.d_max) if dist > cfg.d_max else 1.0
    return s_vmax * s_vmin * s_gd


def k_s_init(v_max, dt, length):
    if length <= 0:
        raise ValueError(f"path length must be > 0, got {length}")
    return 2.0 * v_max * dt / length


def total_reward(proj_t, proj_prev, wp_event, collided, w, v, weights, cfg, k_s, r_tol):
    """Per-step reward and its breakdown.

    wp_event is the miss distance of a waypoint pass this step, or None.
    """
    speed = float(np.linalg.norm(v))
    scale = curriculum_scale(speed, proj_t.dist, cfg)
    terms = RewardTerms(
        progress=scale * weights.k_p * progress_reward(proj_t.s, proj_prev.s),
        reached=scale * k_s * proj_t.s,
        rate=-weights.k_omega * float(np.linalg.norm(w)),
    )
    if wp_event is not None:
        terms.waypoint = weights.k_wp * math.exp(-wp_event / r_tol)
    if collided:
        terms.terminal = weights.r_T
    return terms.total, terms
