import numpy as np
import pytest

from affine_construction import (
    box_B,
    build_S,
    build_ST,
    build_T,
    check_conditions,
    closed_form_ST,
    cover_unit_ball,
    covering_test_B,
    find_parameters,
    fixed_point_T,
    rescale,
    rotation_R,
    rotation_matrix,
    translated_domain,
    translated_family,
)
from errors import DomainError, ParameterSearchError
from geometry import covering_test
from schemas import AffineParams


def test_rotation_sign_depends_on_parity():
    assert np.array_equal(rotation_matrix(2), [[0.0, -1.0], [1.0, 0.0]])
    R3 = rotation_matrix(3)
    assert R3[0, 2] == 1.0
    assert np.allclose(np.linalg.matrix_power(R3, 3), np.eye(3))


@pytest.mark.parametrize("m", [2, 3, 4, 5])
def test_rotation_R_is_a_rotation_fixing_the_origin(m):
    R = rotation_R(m)
    assert np.allclose(R.linear @ R.linear.T, np.eye(m))
    assert np.linalg.det(R.linear) == pytest.approx(1.0)
    assert np.allclose(R(np.zeros(m)), 0.0)


def test_rotation_needs_two_dimensions():
    with pytest.raises(DomainError):
        rotation_R(1)


def test_search_finds_the_planar_parameters(params):
    assert params.m == 2
    assert params.r == pytest.approx(0.84)
    assert params.a == pytest.approx(1.01)
    assert params.v == pytest.approx([0.756])
    assert params.s == pytest.approx(0.428464)
    assert params.a * params.r < 0.85


def test_composition_matches_closed_form(params):
    assert build_ST(params).allclose(closed_form_ST(params), atol=1e-12)


@pytest.mark.parametrize("m", [3, 4, 5])
def test_closed_form_in_higher_dimensions(m):
    p = AffineParams(m=m, r=0.9, s=0.3, a=1.05, v=[0.8] * (m - 1))
    assert build_ST(p).allclose(closed_form_ST(p), atol=1e-12)


@pytest.mark.slow
@pytest.mark.parametrize("m, spacing", [(3, 0.01), (4, 0.05), (5, 0.05)])
def test_search_succeeds_in_higher_dimensions(m, spacing):
    p = find_parameters(m)
    assert p.m == m
    assert check_conditions(p).passed
    assert build_ST(p).allclose(closed_form_ST(p), atol=1e-12)
    assert covering_test_B(p, spacing).covered
    x = fixed_point_T(p)
    assert np.linalg.norm(build_T(p)(x) - x) <= 1e-12
    assert box_B(p).contains(x, margin=spacing)[0]


def test_T_fixes_its_repeller(params):
    x = fixed_point_T(params)
    assert np.allclose(build_T(params)(x), x)
    assert box_B(params).contains(x)[0]


def test_T_translation_sign_in_the_plane():
    # even m: last shift is +2s/r
    p = AffineParams(m=2, r=0.95, s=0.19, a=1.05, v=[0.5])
    assert np.allclose(build_T(p)(np.zeros(2)), [0.0, 0.4], rtol=0, atol=1e-14)
    x = fixed_point_T(p)
    assert x[0] == 0.0
    assert x[1] == pytest.approx(0.19512195121951220, abs=1e-15)
    assert np.allclose(build_T(p)(x), x, rtol=0, atol=1e-12)
    assert build_ST(p).allclose(closed_form_ST(p), atol=1e-12)


def test_T_translation_sign_in_odd_dimension():
    p = AffineParams(m=3, r=0.9, s=0.3, a=1.05, v=[0.8, 0.8])
    assert np.allclose(build_T(p)(np.zeros(3)), [0.0, 0.0, -2.0 * 0.3 / 0.9], rtol=0, atol=1e-14)


def test_conditions_pass_with_positive_slack(params):
    report = check_conditions(params, spacing=0.02, covering=True)
    assert report.passed
    assert report.failures == []
    assert all(c.slack > 0 for c in report.checks)
    assert report.covering.covered


def test_expansion_too_strong_is_reported(params):
    bad = params.model_copy(update={"a": 1.5})
    report = check_conditions(bad)
    assert not report.passed
    assert "ar<1" in report.failures


def test_images_cover_the_box(params):
    result = covering_test_B(params, 0.02)
    assert result.covered
    assert result.n_points > 0


def test_S_overhangs_the_box_along_the_first_axis(params):
    B = box_B(params)
    tip = build_S(params)(np.array([[0.0, -params.v[-1]]]))
    assert tip[0, 0] > 1.0
    assert not B.contains(tip)[0]


def test_search_rejects_dimension_one():
    with pytest.raises(ParameterSearchError):
        find_parameters(1)


def test_rescale_moves_only_the_translation(params):
    small = rescale(params, 0.1)
    assert small.s == pytest.approx(0.1 * params.s)
    assert small.r == params.r
    assert np.allclose(box_B(small).halfwidths, 0.1 * box_B(params).halfwidths)
    assert check_conditions(small).passed
    with pytest.raises(DomainError):
        rescale(params, 0.0)


def test_unit_ball_cover_is_verified():
    plan = cover_unit_ball(0.3, 2)
    assert plan.verified
    assert plan.k == len(plan.centers)
    assert np.all(np.linalg.norm(plan.centers, axis=1) <= 1.0 + 1e-9)


def test_unit_ball_cover_with_large_radius_is_one_ball():
    plan = cover_unit_ball(1.5, 3)
    assert plan.k == 1
    assert plan.centers == [[0.0, 0.0, 0.0]]


def test_translated_family_covers_its_ball():
    plan = cover_unit_ball(0.3, 2, delta=2.0)
    family = translated_family(plan, 0.5 * np.eye(2))
    domain = translated_domain(plan)
    assert domain.radius == 2.0
    assert covering_test(domain, family.images(domain), 0.05).covered


def test_translated_family_needs_phi_above_the_cover_radius():
    plan = cover_unit_ball(0.3, 2)
    with pytest.raises(DomainError):
        translated_family(plan, 0.2 * np.eye(2))
