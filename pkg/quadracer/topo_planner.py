# topo_planner.py
# topological guiding paths between consecutive waypoints:
# ellipsoid-sampled roadmap, Dijkstra, distinct paths, shortcutting and
# homotopy deduplication

import heapq
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional

import networkx as nx
import numpy as np
from pydantic import BaseModel, ConfigDict, Field
from scipy.spatial import cKDTree

from .errors import PlanningError

logger = logging.getLogger(__name__)

EDGE_CHUNK = 2048


class PlannerConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    n_samples: int = Field(256, ge=1)
    max_rounds: int = Field(6, ge=1)
    sample_growth: float = Field(2.0, ge=1.0)
    axis_growth: float = Field(1.5, ge=1.0)
    k_neighbors: int = Field(10, ge=1)
    k_paths: int = Field(4, ge=1)
    resample_spacing: float = Field(0.5, gt=0)
    homotopy_points: int = Field(64, ge=2)
    n_combinations: int = Field(4, ge=1)
    clearance_margin: Optional[float] = Field(None, ge=0)

    def margin_for(self, esdf):
        """Extra clearance for roadmap checks; defaults to one voxel."""
        if self.clearance_margin is None:
            return esdf.resolution
        return self.clearance_margin


@dataclass
class GuidingPath:
    """Polyline g_1..g_n with its cumulative arclength table."""

    points: np.ndarray
    cumulative: np.ndarray = field(init=False)

    def __post_init__(self):
        points = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if len(points) < 2:
            raise ValueError("a guiding path needs at least two points")
        keep = np.ones(len(points), dtype=bool)
        keep[1:] = np.linalg.norm(np.diff(points, axis=0), axis=1) > 0.0
        self.points = points[keep]
        if len(self.points) < 2:
            self.points = points[[0, -1]]
        self.cumulative = np.concatenate([[0.0], np.cumsum(self.segment_lengths)])

    @property
    def segment_lengths(self):
        return np.linalg.norm(np.diff(self.points, axis=0), axis=1)

    @property
    def length(self):
        return float(self.cumulative[-1])

    def point_at(self, s):
        """Position at arclength s (scalar or array), clamped to [0, L]."""
        s = np.clip(np.asarray(s, dtype=float), 0.0, self.length)
        return np.stack(
            [np.interp(s, self.cumulative, self.points[:, k]) for k in range(3)],
            axis=-1,
        )

    def resampled(self, n):
        """n points at equal arclength spacing."""
        return self.point_at(np.linspace(0.0, self.length, n))


@dataclass
class Roadmap:
    graph: nx.Graph
    start: int = 0
    goal: int = 1

    def position(self, node):
        return self.graph.nodes[node]["pos"]

    def path_points(self, nodes):
        return np.array([self.position(n) for n in nodes])

    def path_cost(self, nodes):
        return float(sum(self.graph[u][v]["weight"] for u, v in zip(nodes, nodes[1:])))


@dataclass
class TrackCombination:
    """One choice of guiding path per pair, concatenated into a full track."""

    choice: tuple
    path: GuidingPath
    waypoint_vertices: List[int]

    @property
    def waypoint_s(self):
        return self.path.cumulative[self.waypoint_vertices]


@dataclass
class PlanResult:
    pair_paths: List[List[GuidingPath]]
    combinations: List[TrackCombination]


def _rotation_to_world(a, b):
    """Rotation taking the local x axis onto the a -> b direction."""
    axis = b - a
    norm = np.linalg.norm(axis)
    if norm == 0.0:
        return np.eye(3)
    M = np.outer(axis / norm, np.array([1.0, 0.0, 0.0]))
    U, _, Vt = np.linalg.svd(M)
    D = np.diag([1.0, 1.0, np.linalg.det(U) * np.linalg.det(Vt)])
    return U @ D @ Vt


def sample_ellipsoid(focus_a, focus_b, c_max, rng, n=None, bounds=None):
    """Uniform samples inside the prolate spheroid with the given foci."""
    a = np.asarray(focus_a, dtype=float)
    b = np.asarray(focus_b, dtype=float)
    c_min = float(np.linalg.norm(b - a))
    if c_max < c_min - 1e-12:
        raise ValueError(f"major axis {c_max} is shorter than focal distance {c_min}")
    count = 1 if n is None else n
    minor = math.sqrt(max(c_max**2 - c_min**2, 0.0)) / 2.0
    radii = np.array([c_max / 2.0, minor, minor])
    C = _rotation_to_world(a, b)

    direction = rng.standard_normal((count, 3))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    ball = direction * rng.random((count, 1)) ** (1.0 / 3.0)
    samples = (ball * radii) @ C.T + 0.5 * (a + b)
    if bounds is not None:
        samples = bounds.clip(samples)
    return samples[0] if n is None else samples


def _connect(graph, positions, esdf, d_plan, k_neighbors):
    tree = cKDTree(positions)
    k = min(k_neighbors + 1, len(positions))
    _, neighbors = tree.query(positions, k=k)
    neighbors = np.atleast_2d(neighbors)
    pairs = sorted(
        {
            (min(i, int(j)), max(i, int(j)))
            for i, row in enumerate(neighbors)
            for j in row
            if int(j) != i
        }
    )
    for start in range(0, len(pairs), EDGE_CHUNK):
        chunk = np.array(pairs[start:start + EDGE_CHUNK])
        free = esdf.pairs_free(positions[chunk[:, 0]], positions[chunk[:, 1]], d_plan)
        for (i, j) in chunk[free]:
            length = float(np.linalg.norm(positions[i] - positions[j]))
            graph.add_edge(int(i), int(j), weight=length)


def build_roadmap(wp_a, wp_b, esdf, config, rng, d_c, bounds=None, pair=(0, 1)):
    """Grow an ellipsoid roadmap until wp_a and wp_b are connected."""
    a = np.asarray(wp_a, dtype=float)
    b = np.asarray(wp_b, dtype=float)
    margin = config.margin_for(esdf)
    d_plan = d_c + margin
    for label, point in (("start", a), ("end", b)):
        if esdf.distance(point) <= d_plan:
            raise PlanningError(pair, f"{label} point {point} lacks clearance")

    focal = float(np.linalg.norm(b - a))
    c_max = max(1.2 * focal, focal + 1.0)
    n_samples = config.n_samples
    for round_index in range(config.max_rounds):
        samples = sample_ellipsoid(a, b, c_max, rng, n=n_samples, bounds=bounds)
        clearance = esdf.distance(samples)
        samples = samples[clearance > d_plan]
        clearance = clearance[clearance > d_plan]
        positions = np.vstack([a, b, samples])
        node_clearance = np.concatenate(
            [[esdf.distance(a), esdf.distance(b)], clearance]
        )

        graph = nx.Graph()
        for i, (pos, clear) in enumerate(zip(positions, node_clearance)):
            graph.add_node(i, pos=pos, clearance=float(clear))
        _connect(graph, positions, esdf, d_plan, config.k_neighbors)
        if nx.has_path(graph, 0, 1):
            logger.info(
                "pair %s connected in round %d with %d nodes",
                pair,
                round_index + 1,
                graph.number_of_nodes(),
            )
            return Roadmap(graph=graph)
        logger.warning(
            "pair %s not connected after round %d, growing ellipsoid",
            pair,
            round_index + 1,
        )
        n_samples = int(n_samples * config.sample_growth)
        c_max *= config.axis_growth
    raise PlanningError(pair, f"no connection after {config.max_rounds} rounds")


def shortest_path(roadmap, graph=None):
    """Dijkstra from start to goal; equal costs resolve to the lower node index."""
    graph = roadmap.graph if graph is None else graph
    start, goal = roadmap.start, roadmap.goal
    if start not in graph or goal not in graph:
        return None
    dist = {start: 0.0}
    parent = {start: None}
    done = set()
    heap = [(0.0, start)]
    while heap:
        cost, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        if u == goal:
            break
        for v in sorted(graph.adj[u]):
            if v in done:
                continue
            new_cost = cost + graph[u][v]["weight"]
            old = dist.get(v)
            if old is None or new_cost < old or (new_cost == old and u < parent[v]):
                dist[v] = new_cost
                parent[v] = u
                heapq.heappush(heap, (new_cost, v))
    if goal not in done:
        return None
    nodes = [goal]
    while parent[nodes[-1]] is not None:
        nodes.append(parent[nodes[-1]])
    return nodes[::-1]


def distinct_paths(roadmap, k_paths):
    """Repeatedly take the shortest path and drop its tightest interior node."""
    if k_paths < 1:
        raise ValueError("k_paths must be >= 1")
    graph = roadmap.graph.copy()
    found = []
    while len(found) < k_paths:
        nodes = shortest_path(roadmap, graph)
        if nodes is None:
            break
        found.append(nodes)
        interior = nodes[1:-1]
        if not interior:
            break
        tightest = min(interior, key=lambda n: (graph.nodes[n]["clearance"], n))
        graph.remove_node(tightest)
    return found


def shorten(points, esdf, d_c, spacing=0.5):
    """Shortcut the polyline to a fixpoint, then resample at <= spacing."""
    pts = [np.asarray(p, dtype=float) for p in points]
    changed = True
    while changed:
        changed = False
        i = 0
        while i < len(pts) - 2:
            farthest = None
            for j in range(i + 2, len(pts)):
                if esdf.segment_free(pts[i], pts[j], d_c):
                    farthest = j
            if farthest is not None:
                del pts[i + 1:farthest]
                changed = True
            i += 1

    if spacing is None:
        return GuidingPath(np.array(pts))
    out = [pts[0]]
    for a, b in zip(pts, pts[1:]):
        pieces = max(1, int(math.ceil(np.linalg.norm(b - a) / spacing)))
        for k in range(1, pieces + 1):
            out.append(a + (b - a) * (k / pieces))
        out[-1] = b
    return GuidingPath(np.array(out))


def same_homotopy(path_a, path_b, esdf, d_c, n_points=64):
    pa = path_a.resampled(n_points)
    pb = path_b.resampled(n_points)
    return bool(np.all(esdf.pairs_free(pa, pb, d_c)))


def dedup_homotopy(paths, esdf, d_c, n_points=64):
    """Keep the shortest path of every sweep-equivalence class."""
    kept = []
    for path in sorted(paths, key=lambda p: p.length):
        if not any(same_homotopy(path, other, esdf, d_c, n_points) for other in kept):
            kept.append(path)
    return kept


def plan_pair(a, b, esdf, config, rng, d_c, bounds=None, pair=(0, 1)):
    roadmap = build_roadmap(a, b, esdf, config, rng, d_c, bounds=bounds, pair=pair)
    margin = config.margin_for(esdf)
    candidates = [
        shorten(roadmap.path_points(nodes), esdf, d_c + margin, config.resample_spacing)
        for nodes in distinct_paths(roadmap, config.k_paths)
    ]
    paths = dedup_homotopy(candidates, esdf, d_c, config.homotopy_points)
    logger.info(
        "pair %s: %d distinct paths, lengths %s",
        pair,
        len(paths),
        ", ".join(f"{p.length:.2f}" for p in paths),
    )
    return paths


def concatenate(paths):
    """Join per-pair paths that share their junction vertex."""
    points = [paths[0].points]
    vertices = [len(paths[0].points) - 1]
    for path in paths[1:]:
        points.append(path.points[1:])
        vertices.append(vertices[-1] + len(path.points) - 1)
    return np.vstack(points), vertices


def build_combinations(pair_paths, n_combinations):
    """The n shortest full tracks, one path choice per pair (best-first)."""
    lengths = [[p.length for p in paths] for paths in pair_paths]
    first = tuple(0 for _ in pair_paths)
    heap = [(sum(ls[0] for ls in lengths), first)]
    seen = {first}
    combos = []
    while heap and len(combos) < n_combinations:
        total, choice = heapq.heappop(heap)
        chosen = [pair_paths[i][c] for i, c in enumerate(choice)]
        points, vertices = concatenate(chosen)
        combos.append(
            TrackCombination(
                choice=choice, path=GuidingPath(points), waypoint_vertices=vertices
            )
        )
        for i in range(len(choice)):
            if choice[i] + 1 < len(pair_paths[i]):
                nxt = choice[:i] + (choice[i] + 1,) + choice[i + 1:]
                if nxt not in seen:
                    seen.add(nxt)
                    step = lengths[i][choice[i] + 1] - lengths[i][choice[i]]
                    heapq.heappush(heap, (total + step, nxt))
    return combos


def plan_guiding_paths(scenario, esdf, config, rng):
    """Plan every consecutive pair start -> wp_1 -> ... -> end."""
    anchors = scenario.anchor_points
    seeds = rng.integers(0, 2**32, size=len(anchors) - 1)
    pair_paths = []
    for i, (a, b) in enumerate(zip(anchors, anchors[1:])):
        pair_rng = np.random.default_rng(int(seeds[i]))
        pair_paths.append(
            plan_pair(
                a, b, esdf, config, pair_rng, scenario.d_c, scenario.bounds,
                pair=(i, i + 1),
            )
        )
    combos = build_combinations(pair_paths, config.n_combinations)
    return PlanResult(pair_paths=pair_paths, combinations=combos)
