# test_progress.py

import math

import numpy as np
import pytest

from quadracer import progress
from quadracer.progress import (
    CurriculumConfig,
    PathProjection,
    RewardWeights,
    Stage,
)
from quadracer.topo_planner import GuidingPath
from quadracer.world import Bounds, ObstaclePrimitive, build_esdf

d_c = 0.15


@pytest.fixture
def corner_path():
    return GuidingPath([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0]])


@pytest.fixture
def slow():
    return CurriculumConfig(stage=Stage.SLOW, v_min=1.0, v_max=2.0, d_max=0.3)


@pytest.fixture
def fast():
    return CurriculumConfig(stage=Stage.FAST)


def at(s, dist=0.0):
    return PathProjection(l=1, t=0.0, psi=np.zeros(3), dist=dist, s=s)


def dense_arclength(path, p, per_segment=10_000):
    """Arclength of the closest of many samples along every segment."""
    best_dist, best_s = np.inf, 0.0
    for k, (a, b) in enumerate(zip(path.points, path.points[1:])):
        t = np.linspace(0.0, 1.0, per_segment)
        samples = a + t[:, None] * (b - a)
        dist = np.linalg.norm(samples - p, axis=1)
        i = int(np.argmin(dist))
        if dist[i] < best_dist:
            best_dist = dist[i]
            best_s = path.cumulative[k] + t[i] * np.linalg.norm(b - a)
    return best_s


def test_projection_onto_first_segment(corner_path):
    results = progress.project(corner_path, (0.5, 0.2, 0.0))
    assert results.l == 1
    assert results.t == pytest.approx(0.5)
    assert results.psi == pytest.approx([0.5, 0.0, 0.0])
    assert results.s == pytest.approx(0.5)
    assert results.dist == pytest.approx(0.2)


def test_projection_onto_second_segment(corner_path):
    results = progress.project(corner_path, (1.2, 0.5, 0.0))
    assert results.l == 2
    assert results.psi == pytest.approx([1.0, 0.5, 0.0])
    assert results.s == pytest.approx(1.5)


def test_projection_on_a_vertex_gives_its_cumulative_length(corner_path):
    results = progress.project(corner_path, (1.0, 0.0, 0.0))
    assert results.s == 1.0


def test_equidistant_segments_resolve_to_the_larger_arclength():
    u_turn = GuidingPath([[0, 0, 0], [2, 0, 0], [2, 1, 0], [0, 1, 0]])
    results = progress.project(u_turn, (1.0, 0.5, 0.0))
    assert results.l == 3
    assert results.s == pytest.approx(4.0)


def test_window_limits_the_searched_segments(corner_path):
    results = progress.project(corner_path, (1.2, 0.5, 0.0), window=(1, 1))
    assert results.l == 1
    assert results.s == pytest.approx(1.0)


def test_reached_distance_at_both_ends(corner_path):
    start = progress.project(corner_path, (-1.0, 0.0, 0.0))
    end = progress.project(corner_path, (1.0, 3.0, 0.0))
    assert progress.reached_distance(corner_path, start) == 0.0
    assert progress.reached_distance(corner_path, end) == pytest.approx(2.0)


def test_projection_matches_dense_oracle():
    rng = np.random.default_rng(21)
    for _ in range(20):
        path = GuidingPath(np.cumsum(rng.uniform(-2, 2, (5, 3)), axis=0))
        for p in rng.uniform(-4, 4, (50, 3)):
            proj = progress.project(path, p)
            expected = dense_arclength(path, p)
            results = progress.reached_distance(path, proj)
            assert results == pytest.approx(proj.s, abs=1e-9)
            assert abs(results - expected) <= path.length * 1e-3


def test_progress_is_zero_without_motion():
    assert progress.progress_reward(3.5, 3.5) == 0.0


def test_progress_telescopes_along_random_trajectories():
    rng = np.random.default_rng(8)
    for _ in range(100):
        path = GuidingPath(np.cumsum(rng.uniform(-2, 2, (4, 3)), axis=0))
        trajectory = path.points[0] + np.cumsum(rng.normal(0, 0.3, (40, 3)), axis=0)
        s = [progress.project(path, p).s for p in trajectory]
        results = sum(progress.progress_reward(b, a) for a, b in zip(s, s[1:]))
        assert results == pytest.approx(s[-1] - s[0], abs=1e-9)


def test_monotone_traversal_collects_the_whole_length(corner_path):
    samples = corner_path.point_at(np.linspace(0.0, corner_path.length, 37))
    s = [progress.project(corner_path, p).s for p in samples]
    results = sum(progress.progress_reward(b, a) for a, b in zip(s, s[1:]))
    assert results == pytest.approx(corner_path.length, abs=1e-9)


def test_backward_motion_is_negative_progress(corner_path):
    s_prev = progress.project(corner_path, (0.8, 0.0, 0.0)).s
    s_t = progress.project(corner_path, (0.6, 0.0, 0.0)).s
    assert progress.progress_reward(s_t, s_prev) < 0


@pytest.fixture
def open_world():
    bounds = Bounds((-1.0, -1.0, 0.0), (11.0, 5.0, 4.0))
    return build_esdf([], bounds, 0.1)


@pytest.fixture
def straight_path():
    return GuidingPath([[0.0, 2.0, 2.0], [5.0, 2.0, 2.0], [10.0, 2.0, 2.0]])


def test_empty_world_sees_the_end_of_the_path(open_world, straight_path):
    results = progress.farthest_visible(straight_path, (3.0, 2.5, 2.0), open_world, d_c)
    assert results == pytest.approx([10.0, 2.0, 2.0])


def test_point_behind_the_path_still_sees_the_end(open_world):
    path = GuidingPath([[2.0, 2.0, 2.0], [8.0, 2.0, 2.0]])
    results = progress.farthest_visible(path, (-0.5, 2.0, 2.0), open_world, d_c)
    assert results == pytest.approx([8.0, 2.0, 2.0])


def test_wall_stops_the_visibility_scan(straight_path):
    bounds = Bounds((-1.0, -1.0, 0.0), (11.0, 5.0, 4.0))
    wall = ObstaclePrimitive("box", (6.0, 2.0, 2.0), (0.2, 8.0, 6.0))
    esdf = build_esdf([wall], bounds, 0.1)
    results = progress.farthest_visible(straight_path, (1.0, 2.0, 2.0), esdf, d_c)
    assert 5.75 - 0.15 <= results[0] <= 5.75 + 1e-6


def test_occluded_projection_is_returned_as_is(straight_path):
    bounds = Bounds((-1.0, -1.0, 0.0), (11.0, 5.0, 4.0))
    wall = ObstaclePrimitive("box", (3.0, 1.0, 2.0), (2.0, 0.2, 6.0))
    esdf = build_esdf([wall], bounds, 0.1)
    proj = progress.project(straight_path, (3.0, 0.0, 2.0))
    results = progress.farthest_visible(straight_path, (3.0, 0.0, 2.0), esdf, d_c)
    assert results == pytest.approx(proj.psi)


def test_batched_visibility_matches_one_agent_at_a_time(straight_path):
    bounds = Bounds((-1.0, -1.0, 0.0), (11.0, 5.0, 4.0))
    walls = [
        ObstaclePrimitive("box", (6.0, 2.0, 2.0), (0.2, 8.0, 6.0)),
        ObstaclePrimitive("box", (3.0, 1.0, 2.0), (2.0, 0.2, 6.0)),
    ]
    esdf = build_esdf(walls, bounds, 0.1)
    points = np.array(
        [[1.0, 2.0, 2.0], [3.0, 0.0, 2.0], [8.0, 2.5, 2.0], [0.5, 3.0, 2.0]]
    )
    expected = np.array(
        [progress.farthest_visible(straight_path, p, esdf, d_c) for p in points]
    )
    results = progress.farthest_visible_many([straight_path] * 4, points, esdf, d_c)
    assert np.array_equal(results, expected)
    assert results[2] == pytest.approx([10.0, 2.0, 2.0])


def test_scale_is_one_inside_the_window(slow):
    for speed in (1.0, 1.5, 2.0):
        for dist in (0.0, 0.3):
            assert progress.curriculum_scale(speed, dist, slow) == 1.0


def test_speed_above_window_is_scaled_by_powers_of_ten(slow):
    results = progress.curriculum_scale(3.0, 0.0, slow)
    assert results == pytest.approx(0.1, abs=1e-12)


def test_speed_below_window_is_scaled_by_powers_of_ten(slow):
    results = progress.curriculum_scale(0.0, 0.0, slow)
    assert results == pytest.approx(0.1, abs=1e-12)


def test_distance_beyond_limit_decays_exponentially(slow):
    results = progress.curriculum_scale(1.5, 0.4, slow)
    assert results == pytest.approx(math.exp(-0.1), abs=1e-12)


def test_scale_is_continuous_at_every_boundary(slow):
    eps = 1e-9
    boundaries = [
        ((2.0, 0.0), (2.0 + eps, 0.0)),
        ((1.0, 0.0), (1.0 - eps, 0.0)),
        ((1.5, 0.3), (1.5, 0.3 + eps)),
    ]
    for edge, beyond in boundaries:
        inside = progress.curriculum_scale(*edge, slow)
        outside = progress.curriculum_scale(*beyond, slow)
        assert outside == pytest.approx(inside, abs=1e-6)


def test_fast_stage_never_scales(fast):
    assert progress.curriculum_scale(30.0, 5.0, fast) == 1.0


def test_speed_window_must_be_ordered():
    with pytest.raises(ValueError):
        CurriculumConfig(v_min=2.0, v_max=2.0)


def test_k_s_from_track_length():
    assert progress.k_s_init(2.0, 0.02, 10.0) == pytest.approx(0.008)
    assert progress.k_s_init(2.0, 0.02, 20.0) == pytest.approx(0.004)


def test_k_s_needs_a_positive_length():
    with pytest.raises(ValueError):
        progress.k_s_init(2.0, 0.02, 0.0)


def test_total_reward_in_the_fast_stage(fast):
    weights = RewardWeights()
    total, terms = progress.total_reward(
        at(1.2, 0.1), at(1.0), 0.15, True, np.array([1.0, 0.0, 0.0]),
        np.array([5.0, 0.0, 0.0]), weights, fast, 0.008, 0.3,
    )
    expected = 5 * 0.2 + 0.008 * 1.2 + 5 * math.exp(-0.5) - 10 - 0.01
    assert total == pytest.approx(expected)
    assert terms.terminal == -10
    assert terms.waypoint == pytest.approx(5 * math.exp(-0.5))
    assert terms.as_row()[-1] == pytest.approx(-0.01)


def test_slow_stage_scales_only_progress_and_reached_distance(slow):
    weights = RewardWeights()
    _, terms = progress.total_reward(
        at(1.2, 0.1), at(1.0), None, False, np.array([0.0, 2.0, 0.0]),
        np.array([3.0, 0.0, 0.0]), weights, slow, 0.008, 0.3,
    )
    assert terms.progress == pytest.approx(0.1 * 5 * 0.2)
    assert terms.reached == pytest.approx(0.1 * 0.008 * 1.2)
    assert terms.rate == pytest.approx(-0.02)
    assert terms.waypoint == 0.0
    assert terms.terminal == 0.0
