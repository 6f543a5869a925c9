import numpy as np
import pytest

from affine_construction import box_B, cover_unit_ball, translated_domain, translated_family
from errors import BranchError, DomainError
from geometry import Ball, Box
from maps import AffineMap, FamilySequence, MapFamily
from minimality import (
    block_floor,
    ball_base,
    certify,
    claim_steps,
    dense_branch,
    dense_orbit,
    random_targets,
    replay,
    shortest_word_into,
    strong_precheck,
    strong_trial,
)


@pytest.fixture(scope="module")
def failed_cert():
    family = MapFamily([("H", AffineMap.scaling(0.5, 2))])
    return certify(family, Box([1.0, 1.0]), spacing=0.1)


def _sequence(cert, epsilon=0.0, seed=0):
    return FamilySequence(cert.load_family(), epsilon, "affine", seed, cert.domain_region())


def test_certificate_of_the_planar_pair(params, cert):
    assert cert.passed
    assert [h.name for h in cert.hypotheses] == ["contraction", "covering", "absorbing", "lebesgue", "density"]
    assert cert.lam == pytest.approx(params.r)
    assert cert.kappa == pytest.approx(params.a * params.r)
    assert cert.delta == pytest.approx(cert.rho / 4.0)
    assert cert.density_radius <= cert.delta / 2.0
    assert cert.n0 >= block_floor(cert.kappa)
    assert cert.block_contraction == pytest.approx(cert.kappa ** cert.n0)
    assert cert.working_region().radius == pytest.approx(4.0 * box_B(params).circumscribed_ball().radius)


def test_planar_pair_needs_blocks_longer_than_twelve(params, family, cert):
    assert cert.n0 == 16
    assert cert.k == 26
    short = certify(family, box_B(params), spacing=0.02, max_word_length=12)
    assert short.failed_hypotheses() == ["density"]
    history = short.hypotheses[-1].detail["history"]
    assert history[-1]["n"] == 12
    assert history[-1]["density_radius"] > short.delta / 2.0


def test_density_radius_shrinks_with_block_length(cert):
    radii = [row["density_radius"] for row in cert.hypotheses[-1].detail["history"]]
    assert len(radii) >= 2
    for shorter, longer in zip(radii, radii[1:]):
        assert longer <= shorter + 1e-9


def test_translated_family_is_certified():
    plan = cover_unit_ball(0.3, 2, delta=2.0)
    family = translated_family(plan, 0.5 * np.eye(2))
    translated = certify(family, translated_domain(plan), spacing=0.05)
    assert translated.passed
    assert translated.kappa == pytest.approx(0.5)
    assert translated.density_radius <= translated.delta / 2.0


def test_failing_hypothesis_stops_the_rest(failed_cert):
    assert not failed_cert.passed
    assert failed_cert.failed_hypotheses() == ["covering"]
    names = [h.name for h in failed_cert.hypotheses]
    assert "lebesgue" not in names
    assert failed_cert.n0 is None
    witnesses = failed_cert.hypotheses[1].detail["witnesses"]
    assert len(witnesses) > 0


def test_block_floor():
    assert block_floor(0.5) == 2
    assert 0.8484 ** block_floor(0.8484) < 1.0 / 3.0


def test_claim_steps(cert):
    assert claim_steps(cert, 2.0 * cert.delta) == (0, 0)
    k_r, k_kappa = claim_steps(cert, cert.delta / 4.0)
    assert k_r > 0
    assert k_kappa >= k_r


def test_branch_into_a_large_target(cert):
    target = Ball([0.3, 0.2], 0.1)
    plan = dense_branch([0.0, 0.0], target, _sequence(cert), cert)
    assert plan.verified
    assert plan.length % cert.n0 == 0
    assert plan.length <= plan.bound + plan.slack
    assert all(p.case == "a" for p in plan.phases)
    assert plan.pull_backs == 0 and plan.slack == 0
    assert target.contains(plan.endpoints[-1])[0]
    assert len(plan.endpoints) == plan.length + 1


def test_branch_into_a_small_target_pulls_back(cert):
    target = Ball([0.1, 0.05], 0.02)
    plan = dense_branch([0.5, -0.5], target, _sequence(cert), cert, start_step=3)
    assert plan.verified
    assert plan.start_step == 3
    assert plan.end_step == 3 + plan.length
    assert plan.k_kappa > 0
    assert any(p.case == "b" for p in plan.phases)
    assert plan.length <= plan.bound + plan.slack
    assert plan.pull_backs == sum(p.case == "b" for p in plan.phases)
    assert plan.slack == max(0, plan.pull_backs - plan.k_kappa)


def test_replay_sends_the_domain_into_the_target(cert):
    target = Ball([-0.4, 0.3], 0.08)
    seq = _sequence(cert)
    plan = dense_branch([0.0, 0.0], target, seq, cert)
    corners = cert.domain_region().corners()
    final, sound = replay(seq, plan.indices, plan.start_step, corners, cert.working_region())
    assert sound
    assert np.all(target.contains(final, margin=-1e-9))


def test_branch_rejects_bad_inputs(cert, failed_cert):
    seq = _sequence(cert)
    with pytest.raises(DomainError):
        dense_branch([3.0, 0.0], Ball([0.0, 0.0], 0.1), seq, cert)
    with pytest.raises(DomainError):
        dense_branch([0.0, 0.0], Ball([5.0, 5.0], 0.1), seq, cert)
    with pytest.raises(BranchError):
        dense_branch([0.0, 0.0], Ball([0.0, 0.0], 0.1), seq, failed_cert)


def test_dense_orbit_chains_the_step_cursor(cert):
    balls = ball_base(cert.domain_region(), 0.1, 4)
    plans = dense_orbit([0.0, 0.0], _sequence(cert), balls, cert)
    assert len(plans) == 4
    for previous, plan in zip(plans, plans[1:]):
        assert plan.start_step == previous.end_step
        assert plan.start == previous.endpoints[-1]
    for ball, plan in zip(balls, plans):
        assert plan.verified
        assert ball.contains(plan.endpoints[-1])[0]


def test_ball_base_stays_inside_the_domain(cert):
    domain = cert.domain_region()
    balls = ball_base(domain, 0.05, 9)
    assert len(balls) == 9
    for ball in balls:
        assert np.all(np.abs(ball.center) + ball.radius <= domain.halfwidths + 1e-12)
    with pytest.raises(DomainError):
        ball_base(domain, 2.0, 4)


def test_random_targets_are_seeded(cert):
    domain = cert.domain_region()
    a = random_targets(domain, 0.05, 3, np.random.default_rng(1))
    b = random_targets(domain, 0.05, 3, np.random.default_rng(1))
    assert [t.center.tolist() for t in a] == [t.center.tolist() for t in b]


def test_precheck_rejects_large_epsilon(cert):
    assert strong_precheck(cert, 1e-3)["passed"]
    report = strong_trial(cert, 0.5, n_trials=3)
    assert not report.precheck_passed
    assert report.n_success == 0
    assert report.trials == []
    assert report.message == "epsilon too large for this certificate"


def test_unperturbed_trials_all_succeed(cert):
    report = strong_trial(cert, 0.0, n_trials=2, n_targets=2, target_radius=0.1)
    assert report.precheck_passed
    assert report.success_rate == 1.0
    assert report.max_plan_length <= report.bound + 1


def test_perturbed_trial_succeeds(cert):
    report = strong_trial(cert, 1e-3, n_trials=1, n_targets=1, target_radius=0.1, seed=2)
    assert report.precheck_passed
    assert report.n_success == 1


def test_trials_do_not_depend_on_thread_count(cert):
    one = strong_trial(cert, 0.0, n_trials=2, n_targets=1, target_radius=0.1, threads=1)
    two = strong_trial(cert, 0.0, n_trials=2, n_targets=1, target_radius=0.1, threads=2)
    assert [t.model_dump() for t in one.trials] == [t.model_dump() for t in two.trials]


def test_shortest_word_into_an_image(params, cert):
    family, domain = cert.load_family(), cert.domain_region()
    S = family.maps[0]
    target = Ball(S(domain.center), 1.001 * params.r * domain.circumscribed_ball().radius)
    assert shortest_word_into(family, domain, target) == ["S"]
    assert shortest_word_into(family, domain, Ball([0.1, 0.05], 1e-6), max_length=3) is None


@pytest.mark.parametrize("center", [[0.2, 0.1], [-0.3, 0.0], [0.0, -0.15], [0.35, 0.1]])
def test_branch_is_never_shorter_than_the_shortest_word(cert, center):
    target = Ball(center, 0.6)
    plan = dense_branch([0.0, 0.0], target, _sequence(cert), cert)
    assert plan.verified
    word = shortest_word_into(cert.load_family(), cert.domain_region(), target, max_length=12)
    if word is None:
        assert plan.length > 12
    else:
        assert len(word) <= plan.length


@pytest.mark.slow
def test_orbit_through_a_fine_base(cert):
    balls = ball_base(cert.domain_region(), 0.05, 9)
    plans = dense_orbit([0.0, 0.0], _sequence(cert, 1e-3, seed=11), balls, cert)
    assert all(p.verified for p in plans)
