# test_world.py

import math

import numpy as np
import pytest

from quadracer.dynamics import QuadParams, QuadState
from quadracer.errors import ConfigError
from quadracer.world import (
    Bounds,
    Esdf,
    ObstaclePrimitive,
    Scenario,
    Waypoint,
    analytic_distance,
    build_esdf,
    waypoint_passed,
)

yaw_90 = (math.cos(math.pi / 4), 0.0, 0.0, math.sin(math.pi / 4))
resolution = 0.1


@pytest.fixture
def bounds():
    return Bounds((-3.0, -3.0, -3.0), (3.0, 3.0, 3.0))


@pytest.fixture
def sphere():
    return ObstaclePrimitive("sphere", (0.0, 0.0, 0.0), (1.0,))


@pytest.fixture
def esdf(sphere, bounds):
    return build_esdf([sphere], bounds, resolution)


def test_sphere_signed_distance(sphere):
    points = np.array([[2.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, -1.5]])
    expected = [1.0, -1.0, 0.5]
    results = sphere.signed_distance(points)
    assert results == pytest.approx(expected)


def test_box_signed_distance():
    box = ObstaclePrimitive("box", (0.0, 0.0, 0.0), (2.0, 2.0, 2.0))
    points = np.array([[3.0, 0.0, 0.0], [2.0, 2.0, 0.0], [0.5, 0.0, 0.0]])
    expected = [2.0, math.sqrt(2.0), -0.5]
    results = box.signed_distance(points)
    assert results == pytest.approx(expected)


def test_cylinder_signed_distance():
    cylinder = ObstaclePrimitive("cylinder", (0.0, 0.0, 0.0), (0.5, 2.0))
    points = np.array([[1.5, 0.0, 0.0], [0.0, 0.0, 2.0], [0.0, 0.25, 0.0]])
    expected = [1.0, 1.0, -0.25]
    results = cylinder.signed_distance(points)
    assert results == pytest.approx(expected)


def test_rotated_box_uses_its_local_frame():
    box = ObstaclePrimitive("box", (0.0, 0.0, 0.0), (4.0, 1.0, 1.0), yaw_90)
    points = np.array([[0.0, 3.0, 0.0], [3.0, 0.0, 0.0]])
    expected = [1.0, 2.5]
    results = box.signed_distance(points)
    assert results == pytest.approx(expected)


def test_obstacle_with_wrong_extent_count_is_rejected():
    with pytest.raises(ValueError):
        ObstaclePrimitive("box", (0.0, 0.0, 0.0), (1.0, 1.0))


def test_empty_bounds_are_rejected():
    with pytest.raises(ValueError):
        Bounds((0.0, 0.0, 0.0), (1.0, 0.0, 1.0))


def test_world_faces_count_as_obstacles(bounds):
    results = analytic_distance([], bounds, np.array([2.5, 0.0, 0.0]))
    assert results == pytest.approx(0.5)


def test_grid_dimensions_cover_bounds():
    box = Bounds((0.0, 0.0, 0.0), (1.0, 2.0, 0.5))
    results = build_esdf([], box, resolution).dims
    assert results == (11, 21, 6)


def test_grid_reaches_the_upper_bound_when_resolution_does_not_divide():
    cube = Bounds((0.0, 0.0, 0.0), (4.0, 4.0, 4.0))
    esdf = build_esdf([], cube, 0.3)
    assert esdf.dims == (15, 15, 15)
    dist, inside = esdf.query(np.array([2.0, 2.0, 3.95]))
    assert inside
    assert dist == pytest.approx(0.05, abs=1e-6)


def test_nonpositive_resolution_is_rejected(bounds):
    with pytest.raises(ValueError):
        build_esdf([], bounds, 0.0)


def test_grid_nodes_store_the_analytic_distance(esdf, sphere, bounds):
    index = (35, 30, 30)
    node = esdf.node_position(index)
    expected = analytic_distance([sphere], bounds, node)
    results = esdf.values[index]
    assert results == pytest.approx(expected, abs=1e-6)


def test_trilinear_lookup_tracks_the_analytic_distance(esdf, sphere, bounds):
    rng = np.random.default_rng(11)
    direction = rng.normal(size=(200, 3))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    points = direction * rng.uniform(1.0, 1.8, (200, 1))
    expected = analytic_distance([sphere], bounds, points)
    results = esdf.distance(points)
    assert np.max(np.abs(results - expected)) < 0.02


def test_query_outside_grid_reads_zero(esdf):
    dist, inside = esdf.query(np.array([10.0, 0.0, 0.0]))
    assert dist == 0.0
    assert not inside


def test_collision_inside_clearance(esdf):
    assert esdf.is_collision(np.array([1.1, 0.0, 0.0]), 0.15)
    assert not esdf.is_collision(np.array([1.5, 0.0, 0.0]), 0.15)


def test_segment_through_obstacle_is_blocked(esdf):
    a = np.array([-2.0, 0.0, 0.0])
    b = np.array([2.0, 0.0, 0.0])
    assert not esdf.segment_free(a, b, 0.15)
    assert not esdf.segment_free(b, a, 0.15)


def test_segment_beside_obstacle_is_free(esdf):
    a = np.array([-2.0, 1.8, 0.0])
    b = np.array([2.0, 1.8, 0.0])
    assert esdf.segment_free(a, b, 0.15)
    assert esdf.segment_free(b, a, 0.15)


def test_batched_segment_check_matches_single_checks(esdf):
    a = np.array([-2.0, 0.0, 0.0])
    ends = [np.array([2.0, 0.0, 0.0]), np.array([-2.0, 2.0, 0.0])]
    expected = [esdf.segment_free(a, b, 0.15) for b in ends]
    results = list(esdf.pairs_free([a], ends, 0.15))
    assert results == expected


def test_pairwise_segment_check_matches_single_checks(esdf):
    starts = [(-2.0, 0.0, 0.0), (-2.0, 1.8, 0.0), (0.5, 0.5, 2.5), (1.0, 1.0, 1.0)]
    ends = [(2.0, 0.0, 0.0), (2.0, 1.8, 0.0), (0.5, 0.5, -2.5), (1.0, 1.0, 1.0)]
    expected = [esdf.segment_free(a, b, 0.15) for a, b in zip(starts, ends)]
    results = list(esdf.pairs_free(starts, ends, 0.15))
    assert results == expected
    assert expected == [False, True, False, True]


@pytest.mark.parametrize("offset, expected", [(0.2, True), (-0.2, False)])
def test_grazing_segment_agrees_with_dense_sampling(esdf, sphere, offset, expected):
    d_c = 0.15
    y = 1.0 + d_c + offset
    a, b = np.array([-2.0, y, 0.0]), np.array([2.0, y, 0.0])
    t = np.linspace(0.0, 1.0, 10_001)[:, None]
    dense = sphere.signed_distance(a + t * (b - a))
    assert bool(np.all(dense > d_c)) == expected
    assert esdf.segment_free(a, b, d_c) == expected
    assert esdf.segment_free(b, a, d_c) == expected


def test_esdf_rejects_nonpositive_resolution():
    with pytest.raises(ValueError):
        Esdf(origin=np.zeros(3), resolution=0.0, values=np.zeros((2, 2, 2)))


def test_identity_waypoint_corners():
    wp = Waypoint((1.0, 2.0, 3.0), r_tol=0.3)
    expected = np.array(
        [[1.0, 2.3, 3.3], [1.0, 2.3, 2.7], [1.0, 1.7, 2.7], [1.0, 1.7, 3.3]]
    )
    assert np.allclose(wp.corners, expected)


def test_yawed_waypoint_normal_points_along_y():
    wp = Waypoint((0.0, 0.0, 0.0), yaw_90)
    assert np.allclose(wp.normal, [0.0, 1.0, 0.0])


def test_crossing_inside_tolerance_reports_miss_distance():
    wp = Waypoint((0.0, 0.0, 0.0), r_tol=0.3)
    results = waypoint_passed((-1.0, 0.1, 0.0), (1.0, 0.1, 0.0), wp)
    assert results == pytest.approx(0.1)


def test_crossing_outside_tolerance_is_not_a_pass():
    wp = Waypoint((0.0, 0.0, 0.0), r_tol=0.3)
    assert waypoint_passed((-1.0, 1.0, 0.0), (1.0, 1.0, 0.0), wp) is None


def test_ending_near_the_centre_counts_as_a_pass():
    wp = Waypoint((0.0, 0.0, 0.0), r_tol=0.3)
    results = waypoint_passed((-1.0, 0.0, 0.0), (-0.2, 0.0, 0.0), wp)
    assert results == pytest.approx(0.2)


def test_nonpositive_tolerance_is_rejected():
    with pytest.raises(ValueError):
        Waypoint((0.0, 0.0, 0.0), r_tol=0.0)


def make_scenario(start, waypoints, end=None, obstacles=()):
    return Scenario(
        start=QuadState.hover(QuadParams(), p=start),
        waypoints=[Waypoint(w) for w in waypoints],
        obstacles=list(obstacles),
        bounds=Bounds((-3.0, -3.0, -3.0), (3.0, 3.0, 3.0)),
        end=None if end is None else Waypoint(end),
    )


def test_targets_include_the_end_gate():
    scenario = make_scenario((0.0, 0.0, 0.0), [(1.0, 0.0, 0.0)], end=(2.0, 0.0, 0.0))
    assert len(scenario.targets) == 2
    results = np.array(scenario.anchor_points)
    expected = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0]])
    assert np.allclose(results, expected)


def test_waypoint_outside_bounds_is_a_config_error():
    scenario = make_scenario((0.0, 0.0, 0.0), [(5.0, 0.0, 0.0)])
    with pytest.raises(ConfigError):
        scenario.validate()


def test_start_in_collision_is_a_config_error(sphere):
    scenario = make_scenario(
        (1.1, 0.0, 0.0), [(2.0, 2.0, 2.0)], obstacles=[sphere]
    )
    with pytest.raises(ConfigError, match="collision"):
        scenario.validate()


def test_two_spheres_give_the_pointwise_minimum(bounds, sphere):
    other = ObstaclePrimitive("sphere", (1.5, 1.5, 0.0), (0.5,))
    expected = np.minimum(
        build_esdf([sphere], bounds, 0.2).values,
        build_esdf([other], bounds, 0.2).values,
    )
    results = build_esdf([sphere, other], bounds, 0.2).values
    assert np.array_equal(results, expected)


def test_midpoint_between_nodes_is_interpolated():
    values = np.zeros((2, 2, 2), dtype=np.float32)
    values[0] = 0.4
    values[1] = 0.6
    grid = Esdf(origin=np.zeros(3), resolution=1.0, values=values)
    results = grid.distance(np.array([0.5, 0.0, 0.0]))
    assert results == pytest.approx(0.5, abs=1e-6)


def test_distance_equal_to_clearance_is_a_collision():
    values = np.full((2, 2, 2), 0.25, dtype=np.float32)
    grid = Esdf(origin=np.zeros(3), resolution=1.0, values=values)
    assert grid.is_collision(np.array([0.5, 0.5, 0.5]), 0.25)


def test_degenerate_segment_in_free_space_is_free(esdf):
    a = np.array([2.0, 2.0, 0.0])
    assert esdf.segment_free(a, a, 0.15)
