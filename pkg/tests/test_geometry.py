import math

import numpy as np
import pytest

from errors import CoveringError, DimensionMismatchError, EmptyCloudError
from geometry import (
    Ball,
    Box,
    Grid,
    covering_test,
    density_radius,
    directed_distance,
    enclosing_ball,
    hausdorff_distance,
    lebesgue_number,
    lebesgue_radius,
    radius_below,
    region_from_dict,
)


def _halves(cut=0.55):
    left = lambda pts: pts[:, 0] <= cut
    right = lambda pts: pts[:, 0] >= -cut
    return [left, right]


def test_ball_contains_closed_and_open():
    ball = Ball([0.0, 0.0], 1.0)
    pts = np.array([[0.0, 0.0], [1.0, 0.0], [1.5, 0.0]])
    assert ball.contains(pts).tolist() == [True, True, False]
    assert ball.contains(pts, closed=False).tolist() == [True, False, False]


def test_box_corners_and_diameter():
    box = Box([1.0, 2.0], [1.0, 0.0])
    corners = box.corners()
    assert corners.shape == (4, 2)
    assert np.all(box.contains(corners))
    assert box.diameter == pytest.approx(2.0 * math.sqrt(5.0))


def test_nonpositive_radius_rejected():
    with pytest.raises(DimensionMismatchError):
        Ball([0.0], 0.0)
    with pytest.raises(DimensionMismatchError):
        Box([1.0, -1.0])


def test_region_from_dict_kinds():
    assert isinstance(region_from_dict(Ball([0.0, 1.0], 2.0).to_dict()), Ball)
    box = region_from_dict({"kind": "box", "halfwidths": [1.0, 0.5]})
    assert np.allclose(box.center, [0.0, 0.0])
    with pytest.raises(DimensionMismatchError):
        region_from_dict({"kind": "simplex"})


def test_box_grid_size():
    grid = Grid(Box([1.0, 1.0]), 0.5)
    assert grid.points().shape == (25, 2)
    assert grid.resolution == pytest.approx(0.5 * math.sqrt(2.0) / 2.0)


def test_ball_grid_reaches_the_sphere():
    ball = Ball([0.0, 0.0], 1.0)
    pts = Grid(ball, 0.1).points()
    assert np.all(ball.contains(pts, margin=-1e-12))
    assert np.max(np.linalg.norm(pts, axis=1)) == pytest.approx(1.0)


def test_small_chunks_give_the_same_points():
    box = Box([1.0, 1.0])
    whole = Grid(box, 0.1).points()
    chunked = Grid(box, 0.1, max_chunk=30).points()
    assert np.array_equal(whole, chunked)


def test_covering_by_two_halves():
    result = covering_test(Box([1.0]), _halves(), 0.1)
    assert result.covered
    assert result.n_uncovered == 0
    assert result.n_points == 21


def test_covering_gap_reports_sorted_witnesses():
    left = lambda pts: pts[:, 0] <= -0.25
    right = lambda pts: pts[:, 0] >= 0.25
    result = covering_test(Box([1.0, 1.0]), [left, right], 0.1)
    assert not result.covered
    assert not bool(result)
    xs = result.witnesses[:, 0]
    assert np.all(np.abs(xs) < 0.25)
    assert np.array_equal(result.witnesses, result.witnesses[np.lexsort(result.witnesses.T[::-1])])


def test_lebesgue_number_of_overlapping_halves():
    assert lebesgue_number(Box([1.0]), _halves(), 0.1) == pytest.approx(0.6, abs=1e-9)


def test_lebesgue_number_whole_piece_is_infinite():
    everything = lambda pts: np.ones(pts.shape[0], dtype=bool)
    assert math.isinf(lebesgue_number(Box([1.0]), [everything], 0.1))


def test_radius_below_schedule():
    assert radius_below(math.inf, 2.0) == 2.0
    assert radius_below(0.3, 2.0) == 0.25
    assert radius_below(0.0, 2.0) == 0.0


def test_extra_piece_never_lowers_the_lebesgue_number():
    middle = lambda pts: np.abs(pts[:, 0]) <= 0.3
    pieces = _halves(0.2)
    more = pieces + [middle]
    assert lebesgue_number(Box([1.0]), more, 0.1) >= lebesgue_number(Box([1.0]), pieces, 0.1)
    assert lebesgue_radius(Box([1.0]), more, 0.1) >= lebesgue_radius(Box([1.0]), pieces, 0.1)


def test_lebesgue_radius_raises_on_gap():
    left = lambda pts: pts[:, 0] <= -0.25
    with pytest.raises(CoveringError) as info:
        lebesgue_radius(Box([1.0]), [left], 0.1)
    assert info.value.detail["n_uncovered"] > 0


def test_hausdorff_distance_is_symmetric_max():
    A = np.array([[0.0, 0.0]])
    B = np.array([[0.0, 0.0], [10.0, 0.0]])
    assert directed_distance(A, B) == 0.0
    assert directed_distance(B, A) == 10.0
    assert hausdorff_distance(A, B) == 10.0
    assert hausdorff_distance([[0.0, 0.0]], [[3.0, 4.0]]) == 5.0


def test_hausdorff_triangle_inequality():
    rng = np.random.default_rng(5)
    for _ in range(20):
        A, B, C = (rng.uniform(-1.0, 1.0, (rng.integers(1, 40), 2)) for _ in range(3))
        assert hausdorff_distance(A, C) <= hausdorff_distance(A, B) + hausdorff_distance(B, C) + 1e-12


def test_distance_of_empty_cloud_raises():
    with pytest.raises(EmptyCloudError):
        hausdorff_distance(np.empty((0, 2)), [[0.0, 0.0]])


def test_density_radius_of_the_grid_itself_is_zero():
    box = Box([1.0, 1.0])
    grid = Grid(box, 0.25)
    assert density_radius(grid.points(), box, grid) == 0.0


def test_density_radius_of_center_point():
    box = Box([1.0, 1.0])
    assert density_radius([[0.0, 0.0]], box, 0.5) == pytest.approx(math.sqrt(2.0))


def test_enclosing_ball_holds_the_cloud():
    pts = np.array([[0.0, 0.0], [2.0, 0.0], [1.0, 1.0]])
    ball = enclosing_ball(pts)
    assert np.all(ball.contains(pts, margin=-1e-12))
    with pytest.raises(EmptyCloudError):
        enclosing_ball(np.empty((0, 2)))
