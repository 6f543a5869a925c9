import csv

import numpy as np
import pytest

from errors import DimensionMismatchError, DomainError, NotContractingError, WindowExhaustedError
from geometry import Ball, Box
from hutchinson import apply_letters
from maps import AffineMap, MapFamily
from symbolic import (
    Cylinder,
    SkewProduct,
    StripSet,
    SymbolWord,
    blender_verify,
    check_domination,
    deepest_cover,
    initial_strips,
    mixing_probe,
    perturbed_product,
    skew_product_from_certificate,
    skew_step,
    strip_refine,
    window_code,
    write_strips_csv,
)


@pytest.fixture(scope="module")
def product(cert):
    return skew_product_from_certificate(cert)


def test_symbol_word_parsing():
    word = SymbolWord.parse("1|21", 2)
    assert word.letters == (1, 2, 1)
    assert word.origin == 1
    assert word.future() == (2, 1)
    assert str(word) == "1|21"
    wide = SymbolWord.parse("1.2.11", 12)
    assert wide.letters == (1, 2, 11)
    assert str(wide) == "1.2.11"
    assert SymbolWord.parse("", 2).letters == ()


@pytest.mark.parametrize("text", ["13", "x1", "0"])
def test_bad_symbol_words(text):
    with pytest.raises(DomainError):
        SymbolWord.parse(text, 2)


def test_shift_moves_the_origin():
    word = SymbolWord.two_sided(2, [1], [2, 1])
    assert word.shifted().origin == 2
    assert SymbolWord(2, (1, 2)).shifted().letters == (2,)


def test_window_code_is_lexicographic():
    assert window_code((1, 1), 2) == 0
    assert window_code((2, 1), 2) == 2
    assert window_code((3,), 3) == 2


def test_product_of_the_certified_pair(params, cert, product):
    assert product.k == 2
    assert product.window == 1
    assert product.dim == 2
    assert product.kappa_max == pytest.approx(params.a * params.r)
    assert isinstance(product.e_in, Box)
    restored = SkewProduct.from_dict(product.to_dict())
    assert restored.fiber_map((2,)).allclose(product.fiber_map((2,)))


def test_skew_step_applies_the_symbol_at_the_origin(params, product):
    omega = SymbolWord.two_sided(2, [1], [2, 1])
    shifted, y = skew_step(product, omega, [0.0, 0.0])
    assert shifted.origin == 2
    assert np.allclose(y, [-params.s, 0.0])


def test_window_one_steps_replay_the_plain_word(family, product):
    future = [1, 2, 2, 1, 2, 1, 1, 2]
    omega = SymbolWord.two_sided(2, [2], future)
    y0 = np.array([0.3, -0.2])
    y = y0
    for _ in future:
        omega, y = skew_step(product, omega, y)
    letters = np.array([future]) - 1
    expected = apply_letters([family] * len(future), letters, y0[None, :])[0]
    assert np.allclose(y, expected, rtol=0.0, atol=1e-12)
    with pytest.raises(WindowExhaustedError):
        skew_step(product, omega, y)


def test_skew_step_errors(product):
    with pytest.raises(WindowExhaustedError):
        skew_step(product, SymbolWord(2, (1, 2), 2), [0.0, 0.0])
    with pytest.raises(DomainError):
        skew_step(product, SymbolWord(2, (1, 2)), [0.0, 0.0])


def test_product_validation():
    f = AffineMap.scaling(0.5, 2)
    box = Box([1.0, 1.0])
    with pytest.raises(DomainError):
        SkewProduct(2, 1, {(1,): f}, box, Ball([0.0, 0.0], 3.0))
    with pytest.raises(DomainError):
        SkewProduct(2, 1, {(1,): f, (2,): f}, Box([2.0, 2.0]), Ball([0.0, 0.0], 1.0))
    with pytest.raises(DomainError):
        SkewProduct(2, 6, {}, box, Ball([0.0, 0.0], 3.0))
    with pytest.raises(DimensionMismatchError):
        SkewProduct(2, 1, {(1,): f, (2,): f}, Box([1.0]), Ball([0.0], 3.0))


def test_refinement_appends_symbols(product):
    first = strip_refine(product, initial_strips(product))
    assert len(first) == 2
    assert first.prefixes.tolist() == [[0], [1]]
    second = strip_refine(product, first)
    assert second.generation == 2
    assert second.prefixes.tolist() == [[0, 0], [0, 1], [1, 0], [1, 1]]
    assert np.all(second.radii <= np.repeat(first.radii, 2) + 1e-12)


def test_refining_a_list_matches_the_array_path(product):
    start = initial_strips(product)
    from_arrays = strip_refine(product, start)
    from_list = strip_refine(product, start.strips())
    assert [str(s.prefix) for s in from_list] == ["1", "2"]
    for strip, center, radius in zip(from_list, from_arrays.centers, from_arrays.radii):
        assert np.allclose(strip.bound.center, center)
        assert strip.bound.radius == pytest.approx(radius)
        assert strip.generation == 1


def test_domination_on_the_pair(product):
    assert check_domination(product, 2.0)
    assert not check_domination(product, 1.1)
    with pytest.raises(DomainError):
        check_domination(product, 1.0)


def test_blender_check_passes_with_pruning(product):
    kept = []
    report = blender_verify(product, 20, 0.25, strip_budget=2 ** 12, keep=kept)
    assert report.passed
    assert report.inclusion_precheck
    assert report.domination
    assert report.inflation == pytest.approx(1.0)
    assert all(g.covered for g in report.generations)
    assert any(g.n_pruned > 0 for g in report.generations)
    diameter = product.outer_ball.diameter
    for g in report.generations:
        assert g.max_diameter <= product.kappa_max ** g.generation * diameter * 1.01
    assert isinstance(kept[0], StripSet)
    assert len(kept[0]) <= 2 ** 12


def test_blender_check_needs_domination(product):
    report = blender_verify(product, 20, 0.25, base_rate=1.1, strip_budget=2 ** 12)
    assert report.generations[-1].covered
    assert report.generations[-1].max_diameter <= 0.5
    assert not report.domination
    assert not report.passed


def test_wide_strip_with_a_far_center_still_covers():
    offsets = np.linspace(-0.05, 0.05, 20)
    tiny = np.stack([0.5 + offsets, offsets], axis=1)
    centers = np.vstack([tiny, [[3.0, 0.0]]])
    radii = np.append(np.full(20, 1e-3), 3.2)
    chosen, hit = deepest_cover(centers, radii, np.array([[0.0, 0.0], [0.5, 0.0], [9.0, 9.0]]))
    assert hit.tolist() == [True, True, False]
    assert chosen[0] == 20


def test_blender_check_fails_before_the_strips_are_thin(product):
    report = blender_verify(product, 3, 0.25)
    assert not report.passed
    assert report.generations[-1].covered
    assert report.generations[-1].max_diameter > 0.5


def test_blender_rejects_expanding_fibers():
    expanding = AffineMap.scaling(1.5, 2)
    product = SkewProduct(2, 1, {(1,): expanding, (2,): expanding}, Box([1.0, 1.0]), Ball([0.0, 0.0], 2.0))
    with pytest.raises(NotContractingError) as info:
        blender_verify(product, 2, 0.5)
    assert info.value.detail["window"] == [1]


def test_perturbed_product_has_one_map_per_window(product):
    wide = perturbed_product(product, 2, 1e-3, seed=4)
    assert wide.window == 2
    assert len(wide.windows()) == 4
    assert wide.is_affine
    a, b = wide.fiber_map((1, 1)), wide.fiber_map((1, 2))
    assert not a.affine.allclose(b.affine, atol=0.0)
    assert np.max(np.abs(a.affine.shift - product.fiber_map((1,)).shift)) <= 5e-4
    again = perturbed_product(product, 2, 1e-3, seed=4)
    assert again.fiber_map((2, 1)).affine.allclose(wide.fiber_map((2, 1)).affine, atol=0.0)


def test_perturbed_product_strips_respect_the_decay_bound(product):
    wide = perturbed_product(product, 2, 1e-3, seed=4)
    report = blender_verify(wide, 8, 0.25)
    assert report.window == 2
    assert report.generations[0].max_diameter == pytest.approx(product.outer_ball.diameter)
    for g in report.generations:
        assert g.max_diameter <= g.diameter_bound * (1.0 + 1e-9)


def test_strip_dump(tmp_path, product):
    kept = []
    blender_verify(product, 2, 0.5, keep=kept)
    path = tmp_path / "strips.csv"
    write_strips_csv(str(path), kept[0])
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["prefix", "c1", "c2", "radius", "generation"]
    assert [r[0] for r in rows[1:]] == ["11", "12", "21", "22"]
    assert all(r[-1] == "2" for r in rows[1:])


def test_cylinder_parsing():
    cyl = Cylinder.parse("12:0.1,0.2,0.3", 2)
    assert cyl.prefix.letters == (1, 2)
    assert np.allclose(cyl.ball.center, [0.1, 0.2])
    assert cyl.ball.radius == 0.3
    with pytest.raises(DomainError):
        Cylinder.parse("12", 2)
    with pytest.raises(DomainError):
        Cylinder.parse("1:0.3", 2)


def test_mixing_probe_hits_every_time(product):
    u = Cylinder.parse("1:0,0,0.3", 2)
    v = Cylinder.parse("2:0.2,0.1,0.3", 2)
    report = mixing_probe(product, u, v, n_min=20, horizon=30, seed=0)
    assert report.passed
    assert len(report.hits) == 11
    assert all(h > 0 for h in report.hits)
    assert report.first_miss is None


def test_mixing_probe_does_not_depend_on_threads(product):
    u = Cylinder.parse("1:0,0,0.3", 2)
    v = Cylinder.parse("21:0.2,0.1,0.3", 2)
    one = mixing_probe(product, u, v, 10, 15, seed=3, threads=1)
    two = mixing_probe(product, u, v, 10, 15, seed=3, threads=2)
    assert one.hits == two.hits
    assert one.samples == two.samples


def test_mixing_probe_reports_an_unreachable_cylinder(product):
    u = Cylinder.parse("1:0,0,0.3", 2)
    v = Cylinder.parse("2:4,0,0.1", 2)
    report = mixing_probe(product, u, v, 5, 8, max_samples=8192)
    assert not report.passed
    assert report.samples == [2048, 4096, 8192]
    assert report.first_miss == 5
    assert report.message == "sample budget exhausted before any hit"


def test_mixing_probe_checks_its_inputs(product):
    u = Cylinder.parse("1:0,0,0.3", 2)
    with pytest.raises(DomainError):
        mixing_probe(product, u, Cylinder.parse("2:9,9,0.1", 2), 5, 8)
    with pytest.raises(DomainError):
        mixing_probe(product, u, u, 8, 5)
    with pytest.raises(DomainError):
        mixing_probe(product, Cylinder.parse("1:0,0,0.3", 3), u, 5, 8)


@pytest.mark.slow
def test_blender_check_at_full_resolution(product):
    report = blender_verify(product, 40, 0.02)
    assert report.passed


@pytest.mark.slow
def test_mixing_probe_between_longer_cylinders(product):
    u = Cylinder.parse("121:0,0,0.1", 2)
    v = Cylinder.parse("212:0.3,-0.2,0.1", 2)
    assert mixing_probe(product, u, v, 30, 60, seed=1).passed
