"""
Attractors of contracting families and fixed points of words.

A word is a sequence of member indices (or labels); the first letter is applied
first and is the most significant digit in the lexicographic enumeration.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Union

import numpy as np

from errors import BudgetExceededError, DomainError, NotAbsorbingError, NotContractingError
from geometry import Ball, Box, CoveringResult, Grid, Region, as_points, as_vector, covering_test, hausdorff_distance
from maps import MapFamily, compose_sequence, exact_affine, lipschitz_bounds

logger = logging.getLogger(__name__)

WORD_BUDGET = 2 ** 20
ABSORBING_DOUBLINGS = 10
FIXED_POINT_TOL = 1e-12
RESIDUAL_TOL = 1e-10
MAX_CHAINS = 1024

Word = Sequence[Union[int, str]]


def resolve_word(family: MapFamily, word: Word) -> List[int]:
    labels = family.labels
    out = []
    for letter in word:
        if isinstance(letter, str):
            if letter not in labels:
                raise DomainError(f"unknown letter {letter!r}", labels=labels)
            out.append(labels.index(letter))
        else:
            if not 0 <= int(letter) < len(family):
                raise DomainError("letter index out of range", letter=int(letter), size=len(family))
            out.append(int(letter))
    return out


def apply_family(family: MapFamily, points: np.ndarray) -> np.ndarray:
    """Hutchinson operator on a finite cloud: the images stacked in family order"""
    pts = as_points(points, family.dim)
    return np.vstack([f(pts) for f in family.maps])


def apply_letters(families: Sequence[MapFamily], letters: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Apply, row by row, the word ``letters[i]`` (one letter per family) to ``points[i]``"""
    pts = np.array(points, dtype=float)
    for j, family in enumerate(families):
        column = letters[:, j]
        for idx, f in enumerate(family.maps):
            mask = column == idx
            if mask.any():
                pts[mask] = f(pts[mask])
    return pts


def _member_norm(f, region: Optional[Region]) -> float:
    fa = exact_affine(f)
    if fa is not None:
        return float(np.max(fa.singular_values()))
    return lipschitz_bounds(f, region).upper


def family_contraction(family: MapFamily, region: Optional[Region] = None) -> float:
    return max(_member_norm(f, region) for f in family.maps)


def absorbing_ball(family: MapFamily, seed: Ball, max_doublings: int = ABSORBING_DOUBLINGS) -> Ball:
    """
    Smallest ball B(c, 2^j R), j <= max_doublings, mapped into itself by every member:
    |f(c) - c| + Lip(f) * radius <= radius.
    """
    center = seed.center
    radius = seed.radius
    for _ in range(max_doublings + 1):
        ball = Ball(center, radius)
        ok = True
        for f in family.maps:
            lip = _member_norm(f, ball)
            if np.linalg.norm(f(center) - center) + lip * radius > radius:
                ok = False
                break
        if ok:
            return ball
        radius *= 2.0
    raise NotAbsorbingError(
        "family not eventually absorbing",
        center=center.tolist(),
        max_radius=radius / 2.0,
    )


def decimate(points: np.ndarray, resolution: float) -> np.ndarray:
    """Keep the first point of every cell of a spatial hash of the given resolution"""
    if points.shape[0] == 0:
        return points
    keys = np.floor(points / resolution).astype(np.int64)
    _, first = np.unique(keys, axis=0, return_index=True)
    return points[np.sort(first)]


def attractor_bound(kappa: float, tol: float, dim: int) -> float:
    """
    Distance within which every attractor point has a point of the cloud returned by
    ``attractor``: the iteration floor leaves tol/2, and each decimation moves a point
    by at most one cell diagonal, damped by kappa on later steps.
    """
    if not 0.0 <= kappa < 1.0:
        raise NotContractingError("bound needs a contracting family", kappa=kappa)
    return tol / 2.0 + (tol / 2.0) * math.sqrt(dim) / (1.0 - kappa)


def attractor(
    family: MapFamily,
    seed: Union[Ball, Box],
    tol: float = 0.01,
    max_iter: int = 10000,
) -> np.ndarray:
    """
    Deterministic Hutchinson iteration on a decimated cloud.

    The iteration count is at least the contraction estimate kappa^p * diam(O) <= tol/2
    for the absorbing ball O, and stops once consecutive clouds are within ``tol``.
    """
    seed_ball = seed.circumscribed_ball()
    O = absorbing_ball(family, seed_ball)
    kappa = family_contraction(family, O)
    if not kappa < 1.0:
        raise NotContractingError("family is not contracting on the absorbing ball", kappa=kappa)
    p_min = max(1, int(math.ceil(math.log(tol / (2.0 * O.diameter)) / math.log(kappa))))
    resolution = tol / 2.0
    cloud = decimate(Grid(seed, seed.diameter / 16.0).points(), resolution)
    for p in range(1, max_iter + 1):
        nxt = decimate(apply_family(family, cloud), resolution)
        step = hausdorff_distance(nxt, cloud)
        cloud = nxt
        if p >= p_min and step <= tol:
            logger.info(
                "Attractor after %d iterations: %d points, last step %.3g, covers within %.3g",
                p, cloud.shape[0], step, attractor_bound(kappa, tol, family.dim),
            )
            return cloud
    logger.warning("Attractor iteration hit max_iter=%d", max_iter)
    return cloud


def chaos_game(
    family: MapFamily,
    x0,
    n_points: int,
    burn_in: int = 100,
    seed: int = 0,
    chains: int = MAX_CHAINS,
) -> np.ndarray:
    """Random-word orbits of parallel chains started at x0, burn-in discarded"""
    x0 = as_vector(x0, family.dim)
    if n_points <= 0:
        return np.empty((0, family.dim))
    absorbing_ball(family, Ball(x0, 1.0))
    rng = np.random.default_rng(seed)
    chains = max(1, min(chains, n_points))
    k = len(family)
    pts = np.tile(x0, (chains, 1))
    single = [family]
    for _ in range(burn_in):
        pts = apply_letters(single, rng.integers(0, k, (chains, 1)), pts)
    rounds = int(math.ceil(n_points / chains))
    out = np.empty((rounds * chains, family.dim))
    for i in range(rounds):
        pts = apply_letters(single, rng.integers(0, k, (chains, 1)), pts)
        out[i * chains:(i + 1) * chains] = pts
    return out[:n_points]


def word_fixed_point(family: MapFamily, word: Word, domain: Optional[Region] = None, tol: float = FIXED_POINT_TOL) -> np.ndarray:
    """
    Fixed point of the composed word. Affine words are solved exactly and
    cross-checked by Banach iteration; other words are iterated from the domain
    center until the step drops below ``tol``.
    """
    letters = resolve_word(family, word)
    if not letters:
        raise DomainError("the empty word has no isolated fixed point")
    maps = [family.maps[i] for i in letters]
    composed = compose_sequence(maps)
    fa = exact_affine(composed)
    if fa is not None:
        kappa = float(np.max(fa.singular_values()))
    else:
        kappa = float(np.prod([_member_norm(f, domain) for f in maps]))
    if not kappa < 1.0:
        raise NotContractingError("word is not a contraction", word=[family.labels[i] for i in letters], kappa=kappa)
    x = domain.center.copy() if domain is not None else np.zeros(family.dim)
    for _ in range(100000):
        nxt = composed(x)
        step = float(np.max(np.abs(nxt - x)))
        x = nxt
        if step <= tol:
            break
    if fa is None:
        return x
    exact = fa.fixed_point()
    gap = float(np.max(np.abs(x - exact)))
    if gap > 1e-8:
        logger.warning("Banach iterate disagrees with the linear solve by %.3g", gap)
    return exact


@dataclass
class FixedPointSet:
    """Fixed points of every word over a block of families, lexicographic order"""

    n: int
    points: np.ndarray
    letters: np.ndarray
    labels: List[List[str]]
    linear: Optional[np.ndarray] = field(default=None, repr=False)
    shift: Optional[np.ndarray] = field(default=None, repr=False)

    def __len__(self) -> int:
        return self.points.shape[0]

    def word(self, i: int) -> List[str]:
        return [self.labels[j][int(c)] for j, c in enumerate(self.letters[i])]

    @property
    def words(self) -> List[List[str]]:
        return [self.word(i) for i in range(len(self))]


def _enumerate_letters(sizes: Sequence[int]) -> np.ndarray:
    total = int(np.prod(sizes)) if sizes else 0
    idx = np.arange(total, dtype=np.int64)
    letters = np.empty((total, len(sizes)), dtype=np.int64)
    for j in range(len(sizes) - 1, -1, -1):
        letters[:, j] = idx % sizes[j]
        idx //= sizes[j]
    return letters


def check_budget(sizes: Sequence[int], budget: int) -> int:
    total = 1
    for k in sizes:
        total *= k
    if total > budget:
        raise BudgetExceededError(
            f"{total} words exceed the budget of {budget}; use a smaller word length",
            words=total,
            budget=budget,
        )
    return total


def affine_word_table(families: Sequence[MapFamily], budget: int = WORD_BUDGET):
    """Composed linear parts and shifts of all words, first letter most significant"""
    check_budget([len(F) for F in families], budget)
    dim = families[0].dim
    linear = np.eye(dim)[None, :, :]
    shift = np.zeros((1, dim))
    for F in families:
        maps = F.affine_maps()
        A = np.stack([f.linear for f in maps])
        b = np.stack([f.shift for f in maps])
        linear = np.einsum("lij,wjk->wlik", A, linear).reshape(-1, dim, dim)
        shift = (np.einsum("lij,wj->wli", A, shift) + b[None, :, :]).reshape(-1, dim)
    return linear, shift


def block_fixed_points(
    families: Sequence[MapFamily],
    budget: int = WORD_BUDGET,
    domain: Optional[Region] = None,
    tol: float = FIXED_POINT_TOL,
) -> FixedPointSet:
    n = len(families)
    labels = [F.labels for F in families]
    if n == 0:
        dim = domain.dim if domain is not None else 0
        return FixedPointSet(0, np.empty((0, dim)), np.empty((0, 0), dtype=np.int64), [])
    sizes = [len(F) for F in families]
    check_budget(sizes, budget)
    letters = _enumerate_letters(sizes)
    dim = families[0].dim
    if all(F.is_affine for F in families):
        linear, shift = affine_word_table(families, budget)
        norms = np.linalg.norm(linear, ord=2, axis=(1, 2))
        bad = np.flatnonzero(norms >= 1.0)
        if bad.size:
            i = int(bad[0])
            raise NotContractingError(
                "word is not a contraction",
                word=[labels[j][int(c)] for j, c in enumerate(letters[i])],
                kappa=float(norms[i]),
            )
        points = np.linalg.solve(np.eye(dim)[None, :, :] - linear, shift[:, :, None])[:, :, 0]
        residual = np.max(np.abs(np.einsum("wij,wj->wi", linear, points) + shift - points))
        if residual > RESIDUAL_TOL:
            logger.warning("Fixed point residual %.3g above %.1g", residual, RESIDUAL_TOL)
        return FixedPointSet(n, points, letters, labels, linear, shift)
    kappa = float(np.prod([family_contraction(F, domain) for F in families]))
    if not kappa < 1.0:
        raise NotContractingError("block is not contracting", kappa=kappa)
    start = domain.center if domain is not None else np.zeros(dim)
    points = np.tile(start, (letters.shape[0], 1))
    for _ in range(100000):
        nxt = apply_letters(families, letters, points)
        step = float(np.max(np.abs(nxt - points)))
        points = nxt
        if step <= tol:
            break
    return FixedPointSet(n, points, letters, labels)


def fixed_point_set(family: MapFamily, n: int, budget: int = WORD_BUDGET, domain: Optional[Region] = None) -> FixedPointSet:
    """All k^n fixed points of words of length n; n = 0 gives the empty set"""
    if n < 0:
        raise DomainError("word length must be nonnegative", n=n)
    return block_fixed_points([family] * n, budget, domain)


def interior_witness(family: MapFamily, box: Box, spacing: Optional[float] = None) -> CoveringResult:
    """
    Grid check of box ⊂ ∪ f(box). For a contracting family this puts the box inside
    the attractor, and the check survives any perturbation keeping the covering.
    """
    result = covering_test(box, family.images(box), spacing, max_witnesses=100)
    logger.info("Interior witness on %r: covered=%s", box, result.covered)
    return result
