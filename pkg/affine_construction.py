"""
Explicit affine pair in dimension m >= 2.

    R(x) = (σ x_m, x_1, ..., x_{m-1}),  σ = -1 for even m, +1 for odd m
    S(x) = (σ r x_m + s, r x_1, ..., r x_{m-1})
    T(x) = (-a x_1, a x_2, ..., a x_{m-1}, -a x_m - σ 2s/r)
    S∘T(x) = (-σ a r x_m - s, -a r x_1, a r x_2, ..., a r x_{m-1})

The images S(B) and S∘T(B) of the box B(1, v_2, ..., v_m) cover B when the
inequalities checked in ``check_conditions`` hold.
"""

import logging
import math
from typing import List, Optional

import numpy as np
from scipy.spatial import KDTree

from errors import DomainError, ParameterSearchError
from geometry import Ball, Box, Grid, covering_test, default_spacing
from maps import AffineMap, MapFamily
from schemas import AffineParams, ConditionReport, CoverPlan, CoveringSummary, InequalityCheck

logger = logging.getLogger(__name__)

CONTRACTION_CAPS = (0.85, 0.90, 0.95, 0.99, 1.0)
R_SCHEDULE = tuple(round(0.99 - 0.01 * i, 2) for i in range(30))
A_GRID = tuple(round(i / 100.0, 2) for i in range(101, 151))


def rotation_sign(m: int) -> float:
    return -1.0 if m % 2 == 0 else 1.0


def rotation_matrix(m: int) -> np.ndarray:
    if m < 2:
        raise DomainError("rotation needs m >= 2", m=m)
    R = np.zeros((m, m))
    R[0, m - 1] = rotation_sign(m)
    for i in range(1, m):
        R[i, i - 1] = 1.0
    return R


def rotation_R(m: int) -> AffineMap:
    return AffineMap(rotation_matrix(m), np.zeros(m))


def build_S(p: AffineParams) -> AffineMap:
    shift = np.zeros(p.m)
    shift[0] = p.s
    return AffineMap(p.r * rotation_matrix(p.m), shift)


def build_T(p: AffineParams) -> AffineMap:
    diag = np.full(p.m, p.a)
    diag[0] = -p.a
    diag[-1] = -p.a
    shift = np.zeros(p.m)
    shift[-1] = -rotation_sign(p.m) * 2.0 * p.s / p.r
    return AffineMap(np.diag(diag), shift)


def build_ST(p: AffineParams) -> AffineMap:
    return build_S(p).compose(build_T(p))


def closed_form_ST(p: AffineParams) -> AffineMap:
    m = p.m
    ar = p.a * p.r
    linear = np.zeros((m, m))
    linear[0, m - 1] = -rotation_sign(m) * ar
    linear[1, 0] = -ar
    for i in range(2, m):
        linear[i, i - 1] = ar
    shift = np.zeros(m)
    shift[0] = -p.s
    return AffineMap(linear, shift)


def construction_family(p: AffineParams) -> MapFamily:
    return MapFamily([("S", build_S(p)), ("ST", build_ST(p))])


def fixed_point_T(p: AffineParams) -> np.ndarray:
    point = np.zeros(p.m)
    point[-1] = -rotation_sign(p.m) * 2.0 * p.s / (p.r * (p.a + 1.0))
    return point


def box_B(p: AffineParams) -> Box:
    return Box([p.scale] + [p.scale * v for v in p.v])


def _check(name: str, lhs: float, relation: str, rhs: float) -> InequalityCheck:
    slack = rhs - lhs if relation == "<" else lhs - rhs
    return InequalityCheck(name=name, lhs=lhs, relation=relation, rhs=rhs, slack=slack, passed=slack > 0)


def _box_inequalities(prefix: str, rate: float, s: float, v: List[float]) -> List[InequalityCheck]:
    widths = [1.0] + list(v)
    checks = [
        _check(f"{prefix}v_m+s>1", rate * widths[-1] + s, ">", 1.0),
        _check(f"-{prefix}v_m+s<0", -rate * widths[-1] + s, "<", 0.0),
    ]
    for i in range(1, len(widths)):
        checks.append(_check(f"{prefix}v_{i}>v_{i + 1}", rate * widths[i - 1], ">", widths[i]))
    return checks


def check_conditions(p: AffineParams, spacing: Optional[float] = None, covering: bool = False) -> ConditionReport:
    """
    Evaluate every inequality of the construction with its slack.

    Covering of the box by S(B) and S∘T(B) follows from the "r" and "ar" groups; the
    "2s<v_m r(a+1)" check places the repelling fixed point of T inside B. With
    ``covering`` the grid oracle is run as well.
    """
    s = p.s / p.scale
    vm = p.v[-1]
    checks = [
        _check("0<r", p.r, ">", 0.0),
        _check("r<1", p.r, "<", 1.0),
        _check("s>0", s, ">", 0.0),
        _check("a>1", p.a, ">", 1.0),
        _check("ar<1", p.a * p.r, "<", 1.0),
    ]
    checks += _box_inequalities("r", p.r, s, p.v)
    checks += _box_inequalities("ar", p.a * p.r, s, p.v)
    checks.append(_check("2s<v_m r(a+1)", 2.0 * s, "<", vm * p.r * (p.a + 1.0)))
    passed = all(c.passed for c in checks)
    summary = None
    if covering:
        result = covering_test_B(p, spacing)
        summary = CoveringSummary(**result.summary())
        passed = passed and result.covered
    report = ConditionReport(params=p, checks=checks, covering=summary, passed=passed)
    if not passed:
        logger.info("Conditions failing for %s: %s", p, report.failures)
    return report


def covering_test_B(p: AffineParams, spacing: Optional[float] = None):
    B = box_B(p)
    spacing = spacing if spacing is not None else default_spacing(p.m)
    pieces = construction_family(p).images(B)
    return covering_test(B, pieces, Grid(B, spacing), max_witnesses=100)


def candidate_params(m: int, r: float, cap: float) -> Optional[AffineParams]:
    vm = 0.9 * r
    if m == 2:
        v = [vm]
    else:
        q = (0.9 / 0.99) ** (1.0 / (m - 2))
        v = [0.99 * r * q ** (i - 2) for i in range(2, m + 1)]
        v[-1] = vm
    allowed = [a for a in A_GRID if a * r < cap]
    if not allowed:
        return None
    return AffineParams(m=m, r=r, s=1.0 - vm ** 2, a=allowed[-1], v=v)


def find_parameters(m: int, max_contraction: Optional[float] = None, spacing: Optional[float] = None) -> AffineParams:
    """
    Deterministic search: contraction caps in order, r descending from 0.99, v
    geometric between 0.99r and 0.9r, s = 1 - v_m^2, a the largest grid value with
    a·r below the cap. The first set passing every inequality and the grid covering
    test is returned.
    """
    if m < 2:
        raise ParameterSearchError("the construction needs m >= 2", m=m)
    caps = (max_contraction,) if max_contraction is not None else CONTRACTION_CAPS
    tried = 0
    for cap in caps:
        for r in R_SCHEDULE:
            p = candidate_params(m, r, cap)
            if p is None:
                continue
            tried += 1
            if not check_conditions(p).passed:
                continue
            if not covering_test_B(p, spacing).covered:
                logger.info("Candidate r=%s a=%s passes inequalities but fails grid covering", p.r, p.a)
                continue
            logger.info("Found parameters for m=%d: r=%s a=%s s=%.6g (cap %s)", m, p.r, p.a, p.s, cap)
            return p
    raise ParameterSearchError("parameter schedule exhausted", m=m, candidates=tried)


def rescale(p: AffineParams, delta: float) -> AffineParams:
    """Conjugate by x -> delta x: only the translation (and the box) change"""
    if not delta > 0:
        raise DomainError("rescale factor must be positive", delta=delta)
    return p.model_copy(update={"s": p.s * delta, "scale": p.scale * delta})


def _unit_ball_grid(m: int, spacing: float) -> np.ndarray:
    return Grid(Ball(np.zeros(m), 1.0), spacing).points()


def cover_unit_ball(lam: float, m: int, spacing: Optional[float] = None, delta: float = 1.0) -> CoverPlan:
    """
    Centers b_1..b_k in the closed unit ball whose open lam-balls cover it.

    Candidates are the lattice of spacing lam/sqrt(m) within reach of the ball,
    projected radially onto it; a greedy set cover over a verification grid picks
    centers, then a pass removes any center the others make redundant.
    """
    if not 0 < lam:
        raise DomainError("covering radius must be positive", lam=lam)
    spacing = spacing if spacing is not None else (0.005 if m <= 2 else default_spacing(m))
    if lam >= 1.0:
        return CoverPlan(lam=lam, dim=m, k=1, centers=[[0.0] * m], delta=delta, spacing=spacing, verified=True)
    step = lam / math.sqrt(m)
    reach = 1.0 + lam / 2.0
    n = int(math.ceil(reach / step))
    axis = step * np.arange(-n, n + 1)
    lattice = np.stack([g.reshape(-1) for g in np.meshgrid(*[axis] * m, indexing="ij")], axis=1)
    norms = np.linalg.norm(lattice, axis=1)
    lattice = lattice[norms <= reach]
    norms = norms[norms <= reach]
    outside = norms > 1.0
    lattice[outside] = lattice[outside] / norms[outside][:, None]
    candidates = np.unique(np.round(lattice, 12), axis=0)

    grid = _unit_ball_grid(m, spacing)
    tree = KDTree(grid)
    members = [np.array(tree.query_ball_point(c, lam * (1.0 - 1e-12)), dtype=int) for c in candidates]
    uncovered = np.ones(grid.shape[0], dtype=bool)
    chosen: List[int] = []
    while uncovered.any():
        gains = [int(uncovered[idx].sum()) if idx.size else 0 for idx in members]
        best = int(np.argmax(gains))
        if gains[best] == 0:
            break
        chosen.append(best)
        uncovered[members[best]] = False

    counts = np.zeros(grid.shape[0], dtype=int)
    for i in chosen:
        counts[members[i]] += 1
    for i in list(chosen):
        if np.all(counts[members[i]] >= 2):
            counts[members[i]] -= 1
            chosen.remove(i)

    centers = candidates[chosen]
    verified = bool(np.all(counts > 0))
    logger.info("Unit ball in R^%d covered by %d balls of radius %s (verified=%s)", m, len(chosen), lam, verified)
    return CoverPlan(
        lam=lam,
        dim=m,
        k=len(chosen),
        centers=centers.tolist(),
        delta=delta,
        spacing=spacing,
        verified=verified,
    )


def translated_family(plan: CoverPlan, phi) -> MapFamily:
    """
    Maps x -> phi(x) + delta b_i for a linear contraction ``phi`` (matrix or AffineMap
    fixing the origin). The ball of radius delta is covered by the images as soon as
    the covering radius is below the smallest singular value of phi.
    """
    linear = phi.linear if isinstance(phi, AffineMap) else np.asarray(phi, dtype=float)
    sv = np.linalg.svd(linear, compute_uv=False)
    if not plan.lam < sv.min():
        raise DomainError(
            "covering radius must be below the smallest singular value of phi",
            lam=plan.lam,
            sigma_min=float(sv.min()),
        )
    if not sv.max() < 1.0:
        raise DomainError("phi must be a contraction", sigma_max=float(sv.max()))
    return MapFamily(
        [(f"b{i + 1}", AffineMap(linear, shift)) for i, shift in enumerate(plan.translations)]
    )


def translated_domain(plan: CoverPlan) -> Ball:
    return Ball(np.zeros(plan.dim), plan.delta)
