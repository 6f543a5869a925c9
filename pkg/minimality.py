"""
Minimality certificates, constructive dense branches and strong-robustness trials.

A certificate records, for a finite family F on a bounded domain D: bi-Lipschitz
constants lam <= kappa < 1 on D, the covering closure(D) ⊂ F(D), a Lebesgue radius
rho of that cover with delta = rho/4, and a block length n0 whose fixed points are
delta/2-dense in D.

Branches are built per the two cases of the constructive argument: for a target of
radius at least 2*delta, blocks of n0 letters pull the image of D toward a fixed point
near the target center; smaller targets are first pulled back through single maps
until their radius reaches 2*delta.
"""

import logging
import math
from collections import OrderedDict
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from errors import BranchError, DomainError, IFSError
from geometry import (
    Ball,
    Box,
    Grid,
    Region,
    as_vector,
    covering_test,
    default_spacing,
    density_radius,
    lebesgue_number,
    radius_below,
    sample_region,
)
from hutchinson import WORD_BUDGET, FixedPointSet, absorbing_ball, affine_word_table, block_fixed_points, check_budget
from maps import AffineMap, FamilySequence, MapFamily, exact_affine, family_lipschitz, lipschitz_bounds
from schemas import (
    BranchPlan,
    DomainSpec,
    HypothesisCheck,
    MinimalityCertificate,
    PhaseEntry,
    TrialOutcome,
    TrialReport,
)

logger = logging.getLogger(__name__)

BLOCK_CONTRACTION = 1.0 / 3.0
MAX_WORD_LENGTH = 20
SAMPLE_SIZE = 100
CONTAINMENT_TOL = 1e-9


def steps_larger_than(value: float) -> int:
    """Smallest integer strictly larger than ``value`` (and at least 0)"""
    return max(0, int(math.floor(value)) + 1)


def block_floor(kappa: float) -> int:
    n = 1
    while kappa ** n >= BLOCK_CONTRACTION:
        n += 1
    return n


def certify(
    family: MapFamily,
    domain: Region,
    spacing: Optional[float] = None,
    max_word_length: int = MAX_WORD_LENGTH,
    budget: int = WORD_BUDGET,
    n_samples: int = 256,
) -> MinimalityCertificate:
    """
    Check the sufficient conditions for strong robust minimality of ``family`` on
    ``domain``. A failing hypothesis stops the later ones and is reported with its
    witnesses.
    """
    spacing = spacing if spacing is not None else default_spacing(domain.dim)
    grid = Grid(domain, spacing)
    hypotheses: List[HypothesisCheck] = []
    values: Dict = {}

    bounds = family_lipschitz(family, domain, n_samples)
    lam, kappa = bounds.lower, bounds.upper
    contraction_ok = 0.0 < lam and kappa < 1.0
    detail = {
        "members": {
            label: lipschitz_bounds(f, domain, n_samples).to_dict()["upper"] for label, f in family
        }
    }
    if bounds.witness is not None:
        detail["singular_at"] = bounds.witness
    hypotheses.append(HypothesisCheck(name="contraction", passed=contraction_ok, detail=detail))

    cover = covering_test(domain, family.images(domain), grid, max_witnesses=100)
    hypotheses.append(HypothesisCheck(name="covering", passed=cover.covered, detail=cover.summary()))

    working = None
    try:
        working = absorbing_ball(family, domain.circumscribed_ball())
        hypotheses.append(HypothesisCheck(name="absorbing", passed=True, detail=working.to_dict()))
    except IFSError as e:
        hypotheses.append(HypothesisCheck(name="absorbing", passed=False, detail=e.to_diagnostic()))

    if all(h.passed for h in hypotheses):
        raw = lebesgue_number(domain, family.images(domain), grid)
        rho = radius_below(raw, domain.diameter)
        delta = rho / 4.0
        values.update(lebesgue_number=None if math.isinf(raw) else raw, rho=rho, delta=delta)
        hypotheses.append(
            HypothesisCheck(name="lebesgue", passed=rho > 0, detail={"raw": values["lebesgue_number"], "rho": rho})
        )
        if rho > 0:
            values.update(_search_block_length(family, domain, grid, kappa, delta, max_word_length, budget, hypotheses))

    status = "passed" if all(h.passed for h in hypotheses) else "failed"
    cert = MinimalityCertificate(
        domain=DomainSpec.from_region(domain),
        working_domain=DomainSpec.from_region(working) if working is not None else None,
        family=family.to_dict(),
        lam=lam,
        kappa=kappa,
        spacing=spacing,
        hypotheses=hypotheses,
        status=status,
        **values,
    )
    logger.info(
        "Certificate %s: lam=%.6g kappa=%.6g rho=%s delta=%s n0=%s",
        status, lam, kappa, cert.rho, cert.delta, cert.n0,
    )
    return cert


def _search_block_length(family, domain, grid, kappa, delta, max_word_length, budget, hypotheses) -> dict:
    start = block_floor(kappa)
    history = []
    for n in range(start, max_word_length + 1):
        if len(family) ** n > budget:
            break
        fps = block_fixed_points([family] * n, budget, domain)
        radius = density_radius(fps.points, domain, grid)
        history.append({"n": n, "density_radius": radius})
        logger.info("Y_%d: %d fixed points, density radius %.6g (need %.6g)", n, len(fps), radius, delta / 2.0)
        if radius <= delta / 2.0:
            k = steps_larger_than(math.log(delta / domain.diameter) / math.log(kappa))
            hypotheses.append(HypothesisCheck(name="density", passed=True, detail={"history": history}))
            return {"n0": n, "k": k, "density_radius": radius, "block_contraction": kappa ** n}
    hypotheses.append(
        HypothesisCheck(
            name="density",
            passed=False,
            detail={"history": history, "target": delta / 2.0, "reason": "no block length within budget"},
        )
    )
    return {}


def certify_sequence_base(cert: MinimalityCertificate) -> Tuple[MapFamily, Region, Ball]:
    if not cert.passed:
        raise BranchError("certificate did not pass", failed=cert.failed_hypotheses())
    return cert.load_family(), cert.domain_region(), cert.working_region()


class BlockCache:
    """Fixed point sets of n0-blocks keyed by their starting step"""

    def __init__(self, maxsize: int = 32):
        self.maxsize = maxsize
        self._sets: "OrderedDict[object, FixedPointSet]" = OrderedDict()

    def get(self, seq: FamilySequence, cursor: int, n0: int, budget: int, domain: Region) -> FixedPointSet:
        key = ("constant", n0) if seq.is_constant else (cursor, n0)
        found = self._sets.get(key)
        if found is not None:
            self._sets.move_to_end(key)
            return found
        families = [seq.family(cursor + i) for i in range(n0)]
        found = block_fixed_points(families, budget, domain)
        self._sets[key] = found
        if len(self._sets) > self.maxsize:
            self._sets.popitem(last=False)
        return found


class ImageTracker:
    """
    Bound on the image of the domain under the word applied so far: the exact
    composed affine map when every letter is affine, else a ball pushed forward with
    Lipschitz bounds.
    """

    def __init__(self, domain: Region, working: Optional[Ball], exact: bool):
        self.domain = domain
        self.working = working
        self.exact = exact
        self.map = AffineMap.identity(domain.dim) if exact else None
        self.center = domain.center.copy()
        self.radius = domain.circumscribed_ball().radius
        self._lipschitz: Dict[int, float] = {}

    def copy(self) -> "ImageTracker":
        other = ImageTracker.__new__(ImageTracker)
        other.__dict__.update(self.__dict__)
        other.center = self.center.copy()
        return other

    def _lip(self, f) -> float:
        key = id(f)
        if key not in self._lipschitz:
            self._lipschitz[key] = lipschitz_bounds(f, self.working or self.domain, n_samples=64).upper
        return self._lipschitz[key]

    def push_affine(self, f: AffineMap) -> None:
        if self.exact:
            self.map = f.compose(self.map)
        else:
            self.center = f(self.center)
            self.radius *= float(np.max(f.singular_values()))

    def push(self, f) -> None:
        fa = exact_affine(f)
        if fa is not None:
            self.push_affine(fa)
            return
        self.center = f(self.center)
        self.radius *= self._lip(f)

    @property
    def radius_bound(self) -> float:
        if self.exact:
            return self.domain.circumscribed_ball().radius * float(np.max(self.map.singular_values()))
        return self.radius

    def inside(self, ball: Ball) -> bool:
        if self.exact:
            if isinstance(self.domain, Box):
                corners = self.map(self.domain.corners())
                return bool(np.all(np.linalg.norm(corners - ball.center, axis=1) <= ball.radius))
            center = self.map(self.domain.center)
        else:
            center = self.center
        return bool(np.linalg.norm(center - ball.center) + self.radius_bound <= ball.radius)


def _clip_into(region: Region, point: np.ndarray) -> np.ndarray:
    if isinstance(region, Box):
        return np.clip(point, region.center - region.halfwidths, region.center + region.halfwidths)
    offset = point - region.center
    norm = np.linalg.norm(offset)
    if norm <= region.radius:
        return point
    return region.center + offset * (region.radius / norm)


def _inside_domain(region: Region, point: np.ndarray) -> bool:
    return bool(region.contains(point, margin=-CONTAINMENT_TOL)[0])


def _effective_target(domain: Region, target: Ball) -> Ball:
    """A ball inside the target whose center lies in the domain"""
    center = _clip_into(domain, target.center)
    shrink = float(np.linalg.norm(center - target.center))
    if shrink >= target.radius:
        raise DomainError("target does not meet the domain", target=target.to_dict(), domain=domain.to_dict())
    if shrink == 0.0:
        return target
    return Ball(center, target.radius - shrink)


def _pullback_margin(domain: Region, center: np.ndarray, inverse: np.ndarray, radius: float) -> float:
    """How deep the ellipsoid inverse·B(0, radius) + center sits inside the domain"""
    if isinstance(domain, Box):
        reach = radius * np.linalg.norm(inverse, axis=1)
        return float(np.min(domain.halfwidths - np.abs(center - domain.center) - reach))
    return float(domain.radius - np.linalg.norm(center - domain.center) - radius * np.linalg.norm(inverse, 2))


def _pull_back_once(family: MapFamily, domain: Region, working, ball: Ball) -> Tuple[int, Ball, float]:
    """Choose the member whose preimage of ``ball`` sits deepest in the domain"""
    best = None
    for idx, f in enumerate(family.maps):
        fa = exact_affine(f)
        if fa is not None:
            inverse = np.linalg.inv(fa.linear)
            center = fa.inverse_apply(ball.center)
            lip = float(np.max(fa.singular_values()))
        else:
            center = f.inverse_apply(ball.center)
            bounds = lipschitz_bounds(f, working or domain, n_samples=64)
            lip = bounds.upper
            inverse = np.eye(domain.dim) / bounds.lower
        margin = _pullback_margin(domain, center, inverse, ball.radius)
        if best is None or margin > best[2]:
            best = (idx, Ball(center, ball.radius / lip), margin)
    return best


def claim_steps(cert: MinimalityCertificate, radius: float) -> Tuple[int, int]:
    """(k(r) with lam, k(r) with kappa) for a target radius; both 0 when r >= 2*delta"""
    two_delta = 2.0 * cert.delta
    if radius >= two_delta:
        return 0, 0
    ratio = math.log(radius / two_delta)
    return steps_larger_than(ratio / math.log(cert.lam)), steps_larger_than(ratio / math.log(cert.kappa))


def _nearest_word(fps: FixedPointSet, center: np.ndarray) -> int:
    dist = np.sum((fps.points - center) ** 2, axis=1)
    return int(np.argmin(dist))


def _block_maps(seq: FamilySequence, cursor: int, fps: FixedPointSet, index: int) -> List:
    return [seq.family(cursor + j).maps[int(c)] for j, c in enumerate(fps.letters[index])]


def _advance_block(tracker: ImageTracker, seq: FamilySequence, cursor: int, fps: FixedPointSet, index: int) -> None:
    if fps.linear is not None:
        tracker.push_affine(AffineMap(fps.linear[index], fps.shift[index]))
    else:
        for f in _block_maps(seq, cursor, fps, index):
            tracker.push(f)


def dense_branch(
    x,
    target: Ball,
    seq: FamilySequence,
    cert: MinimalityCertificate,
    start_step: int = 0,
    sample_size: int = SAMPLE_SIZE,
    seed: int = 0,
    budget: int = WORD_BUDGET,
    cache: Optional[BlockCache] = None,
) -> BranchPlan:
    """
    Word of per-step map choices, starting at sequence step ``start_step``, whose
    composition sends the whole domain into ``target``.
    """
    family, domain, working = certify_sequence_base(cert)
    x = as_vector(x, domain.dim)
    if not _inside_domain(domain, x):
        raise DomainError("start point is outside the certified domain", x=x.tolist())
    cache = cache or BlockCache()
    n0, k, delta = cert.n0, cert.k, cert.delta
    k_r, k_kappa = claim_steps(cert, target.radius)
    goal = _effective_target(domain, target)
    exact = seq.base.is_affine and (seq.is_constant or seq.model == "affine")

    tracker = ImageTracker(domain, working, exact)
    if tracker.inside(target):
        return _finish(x, target, seq, cert, start_step, [], [], [], domain, working, sample_size, seed, k_r, k_kappa, 0)

    pulls = 0
    if goal.radius < 2.0 * delta:
        pulls = _count_pull_backs(family, domain, working, goal, delta, k_kappa)
    for count in (pulls, pulls + 1) if pulls else (0,):
        found = _search_blocks(seq, cert, domain, working, goal, count, start_step, exact, cache, budget)
        if found is not None:
            letters, indices, phases = found
            return _finish(
                x, target, seq, cert, start_step, letters, indices, phases,
                domain, working, sample_size, seed, k_r, k_kappa, count,
            )
    raise BranchError(
        "no branch found within the block budget",
        target=target.to_dict(),
        k=k,
        n0=n0,
        pull_backs=pulls,
    )


def _count_pull_backs(family, domain, working, goal: Ball, delta: float, k_kappa: int) -> int:
    ball = goal
    count = 0
    while ball.radius < 2.0 * delta:
        if count > k_kappa + 2:
            raise BranchError("pull-back did not reach radius 2*delta", radius=ball.radius, steps=count)
        _, ball, margin = _pull_back_once(family, domain, working, ball)
        if not _inside_domain(domain, ball.center):
            raise BranchError("no member covers the target", step=count, margin=margin)
        count += 1
    return count


def _search_blocks(seq, cert, domain, working, goal: Ball, pulls: int, start: int, exact: bool, cache, budget):
    n0, k = cert.n0, cert.k
    base_tracker = ImageTracker(domain, working, exact)
    for blocks in range(0, k + 1):
        tail = start + blocks * n0
        ball = goal
        pulled: List[Tuple[int, int, Ball]] = []
        for step in range(tail + pulls - 1, tail - 1, -1):
            idx, ball, _ = _pull_back_once(seq.family(step), domain, working, ball)
            pulled.append((step, idx, ball))
        if pulls and not _inside_domain(domain, ball.center):
            continue
        tracker = base_tracker.copy()
        letters: List[str] = []
        indices: List[int] = []
        phases: List[PhaseEntry] = []
        for b in range(blocks):
            cursor = start + b * n0
            fps = cache.get(seq, cursor, n0, budget, domain)
            choice = _nearest_word(fps, ball.center)
            _advance_block(tracker, seq, cursor, fps, choice)
            chosen = [int(c) for c in fps.letters[choice]]
            indices += chosen
            letters += fps.word(choice)
            phases.append(
                PhaseEntry(step=cursor, case="a", family_index=cursor, letters=fps.word(choice), radius_bound=tracker.radius_bound)
            )
        if not tracker.inside(ball):
            continue
        for step, idx, pulled_ball in reversed(pulled):
            f = seq.family(step).maps[idx]
            tracker.push(f)
            label = seq.family(step).labels[idx]
            indices.append(idx)
            letters.append(label)
            phases.append(PhaseEntry(step=step, case="b", family_index=step, letters=[label], radius_bound=pulled_ball.radius))
        if tracker.inside(goal):
            return letters, indices, phases
    return None


def replay(seq: FamilySequence, indices: Sequence[int], start_step: int, points: np.ndarray, working: Optional[Ball] = None):
    """Apply the word to a cloud; returns the final cloud and whether every step stayed in ``working``"""
    pts = np.array(points, dtype=float)
    sound = True
    for i, idx in enumerate(indices):
        pts = seq.family(start_step + i).maps[idx](pts)
        if working is not None and not np.all(working.contains(pts, margin=-CONTAINMENT_TOL)):
            sound = False
    return pts, sound


def _finish(x, target, seq, cert, start, letters, indices, phases, domain, working, sample_size, seed, k_r, k_kappa, pulls) -> BranchPlan:
    sample = sample_region(domain, sample_size, np.random.default_rng(seed))
    final, sound = replay(seq, indices, start, sample, working)
    landed = bool(np.all(target.contains(final, margin=-CONTAINMENT_TOL)))
    if not landed:
        raise BranchError("replayed word leaves the target", word=letters)
    if not sound:
        logger.warning("Replay left the working ball for word of length %d", len(letters))
    endpoints = [x.tolist()]
    point = x.copy()
    for i, idx in enumerate(indices):
        point = seq.family(start + i).maps[idx](point)
        endpoints.append(point.tolist())
    return BranchPlan(
        start=x.tolist(),
        target_center=target.center.tolist(),
        target_radius=target.radius,
        word=letters,
        indices=indices,
        start_step=start,
        end_step=start + len(indices),
        phases=phases,
        endpoints=endpoints,
        k=cert.k,
        n0=cert.n0,
        k_r=k_r,
        k_kappa=k_kappa,
        bound=cert.k * cert.n0 + k_kappa,
        pull_backs=pulls,
        slack=max(0, pulls - k_kappa),
        verified=landed and sound,
    )


def dense_orbit(
    x,
    seq: FamilySequence,
    base_list: Sequence[Ball],
    cert: MinimalityCertificate,
    start_step: int = 0,
    seed: int = 0,
    budget: int = WORD_BUDGET,
) -> List[BranchPlan]:
    """Chain branches through every ball in order, continuing the sequence's step cursor"""
    plans = []
    cache = BlockCache()
    point = as_vector(x)
    cursor = start_step
    for i, ball in enumerate(base_list):
        plan = dense_branch(point, ball, seq, cert, cursor, seed=seed + i, budget=budget, cache=cache)
        plans.append(plan)
        cursor = plan.end_step
        point = np.array(plan.endpoints[-1])
    return plans


def _inner_region(domain: Region, radius: float) -> Region:
    """Centers of the balls of the given radius contained in the domain"""
    if isinstance(domain, Box):
        hw = domain.halfwidths - radius
        if np.any(hw <= 0):
            raise DomainError("target radius too large for the domain", radius=radius)
        return Box(hw, domain.center)
    if radius >= domain.radius:
        raise DomainError("target radius too large for the domain", radius=radius)
    return Ball(domain.center, domain.radius - radius)


def ball_base(domain: Region, radius: float, count: int) -> List[Ball]:
    """``count`` balls of the given radius inside the domain, centers on a regular grid"""
    inner = _inner_region(domain, radius)
    per_axis = max(1, int(math.ceil(count ** (1.0 / domain.dim))))
    hw = inner.bounding_halfwidths
    axes = [np.linspace(c - w, c + w, per_axis + 2)[1:-1] for c, w in zip(inner.center, hw)]
    centers = np.stack([g.reshape(-1) for g in np.meshgrid(*axes, indexing="ij")], axis=1)
    centers = centers[inner.contains(centers)]
    return [Ball(c, radius) for c in centers[:count]]


def random_targets(domain: Region, radius: float, count: int, rng: np.random.Generator) -> List[Ball]:
    return [Ball(c, radius) for c in _inner_region(domain, radius).sample(count, rng)]


def strong_precheck(cert: MinimalityCertificate, epsilon: float, spacing: Optional[float] = None) -> Dict:
    family, domain, _ = certify_sequence_base(cert)
    slack = epsilon / (1.0 - cert.kappa)
    contraction_ok = cert.kappa + slack < 1.0
    cover = covering_test(domain, family.images(domain, erosion=epsilon), spacing or cert.spacing, max_witnesses=20)
    return {
        "kappa": cert.kappa,
        "slack": slack,
        "contraction": contraction_ok,
        "covering": cover.summary(),
        "passed": bool(contraction_ok and cover.covered),
    }


def strong_trial(
    cert: MinimalityCertificate,
    epsilon: float,
    n_trials: int,
    targets: Optional[Sequence[Ball]] = None,
    seed: int = 0,
    model: str = "affine",
    n_targets: int = 5,
    target_radius: float = 0.05,
    threads: int = 1,
    budget: int = WORD_BUDGET,
) -> TrialReport:
    """
    Dense orbits under seeded per-step perturbed sequences within ``epsilon``.
    Nothing runs when the margin precheck rejects ``epsilon``.
    """
    precheck = strong_precheck(cert, epsilon)
    slack = precheck["slack"]
    if not precheck["passed"]:
        logger.info("Strong trial rejected: epsilon %.3g too large (slack %.3g)", epsilon, slack)
        return TrialReport(
            epsilon=epsilon, model=model, n_trials=n_trials, n_success=0, success_rate=0.0,
            precheck_passed=False, precheck=precheck, bound=0, slack=slack, max_plan_length=0,
            message="epsilon too large for this certificate",
        )
    family, domain, _ = certify_sequence_base(cert)

    def run(trial: int) -> TrialOutcome:
        trial_seed = int(np.random.SeedSequence([seed, trial]).generate_state(1)[0])
        rng = np.random.default_rng(trial_seed)
        seq = FamilySequence(family, epsilon, model, trial_seed, domain)
        start = domain.sample(1, rng)[0]
        balls = list(targets) if targets is not None else random_targets(domain, target_radius, n_targets, rng)
        try:
            plans = dense_orbit(start, seq, balls, cert, seed=trial_seed % 1000, budget=budget)
        except IFSError as e:
            logger.info("Trial %d failed: %s", trial, e.message)
            return TrialOutcome(trial=trial, seed=trial_seed, success=False, steps=0, max_plan_length=0, message=e.message)
        ok = all(p.verified for p in plans)
        return TrialOutcome(
            trial=trial,
            seed=trial_seed,
            success=ok,
            steps=sum(p.length for p in plans),
            max_plan_length=max((p.length for p in plans), default=0),
        )

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        outcomes = list(pool.map(run, range(n_trials)))
    n_success = sum(o.success for o in outcomes)
    radius = target_radius if targets is None else min(b.radius for b in targets)
    _, k_kappa = claim_steps(cert, radius)
    report = TrialReport(
        epsilon=epsilon,
        model=model,
        n_trials=n_trials,
        n_success=n_success,
        success_rate=n_success / n_trials if n_trials else 1.0,
        precheck_passed=True,
        precheck=precheck,
        bound=cert.k * cert.n0 + k_kappa,
        slack=slack,
        max_plan_length=max((o.max_plan_length for o in outcomes), default=0),
        trials=outcomes,
    )
    logger.info("Strong trial epsilon=%.3g: %d/%d succeeded", epsilon, n_success, n_trials)
    return report


def shortest_word_into(family: MapFamily, domain: Region, target: Ball, max_length: int = 12, budget: int = WORD_BUDGET) -> Optional[List[str]]:
    """Exhaustive search, shortest then lexicographic, for a word mapping the domain into the target"""
    if isinstance(domain, Box):
        corners = domain.corners()
    else:
        corners = None
    for n in range(0, max_length + 1):
        if n == 0:
            tracker = ImageTracker(domain, None, True)
            if tracker.inside(target):
                return []
            continue
        check_budget([len(family)] * n, budget)
        linear, shift = affine_word_table([family] * n, budget)
        if corners is not None:
            images = np.einsum("wij,pj->wpi", linear, corners) + shift[:, None, :]
            ok = np.all(np.linalg.norm(images - target.center, axis=2) <= target.radius, axis=1)
        else:
            centers = np.einsum("wij,j->wi", linear, domain.center) + shift
            norms = np.linalg.norm(linear, ord=2, axis=(1, 2))
            ok = np.linalg.norm(centers - target.center, axis=1) + norms * domain.radius <= target.radius
        hits = np.flatnonzero(ok)
        if hits.size:
            i = int(hits[0])
            letters = []
            for j in range(n - 1, -1, -1):
                letters.append(family.labels[i % len(family)])
                i //= len(family)
            return letters[::-1]
    return None
