"""
Skew products over the full shift on k symbols, strip refinement and the
desk-scale blender and mixing checks.

A skew product reads the symbols ω_0 .. ω_{w-1} at the origin of a two-sided
sequence and applies the fiber map selected by that window:

    H(ω, y) = (σω, h_{ω_0 .. ω_{w-1}}(y))

Symbols are 1..k in words and on the command line; arrays use 0..k-1.
"""

import csv
import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.spatial import KDTree

from errors import CoveringError, DimensionMismatchError, DomainError, NotContractingError, UsageError, WindowExhaustedError
from geometry import Ball, Box, Grid, Region, as_vector, covering_test, region_from_dict
from maps import Map, MapFamily, MapImage, exact_affine, lipschitz_bounds, map_from_dict, perturb
from schemas import BlenderReport, DomainSpec, GenerationStats, MinimalityCertificate, MixingReport

logger = logging.getLogger(__name__)

STRIP_BUDGET = 2 ** 20
MAX_WINDOW = 5
NEIGHBORS = 16
COVER_TOL = 1e-12
MIXING_CHUNK = 2048
MIXING_SAMPLES = 65536


@dataclass(frozen=True)
class SymbolWord:
    """
    Finite word over {1..k}. A one-sided prefix has ``origin`` None; a two-sided
    window marks position 0 with ``origin`` (an index into ``letters``).
    """

    k: int
    letters: Tuple[int, ...]
    origin: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "letters", tuple(int(c) for c in self.letters))
        if self.k < 2:
            raise DomainError("alphabet needs at least two symbols", k=self.k)
        bad = [c for c in self.letters if not 1 <= c <= self.k]
        if bad:
            raise DomainError("symbol out of range", symbols=bad, k=self.k)
        if self.origin is not None:
            if not self.letters:
                raise DomainError("a two-sided window cannot be empty")
            if not 0 <= self.origin <= len(self.letters):
                raise DomainError("window origin out of range", origin=self.origin, length=len(self.letters))

    @classmethod
    def parse(cls, text: str, k: int) -> "SymbolWord":
        """``"121"`` (one digit per symbol) or ``"1.2.11"``; a ``|`` marks the origin"""
        text = text.strip()
        try:
            if "|" in text:
                past, future = (_split_symbols(part) for part in text.split("|", 1))
                return cls(k, tuple(past + future), len(past))
            return cls(k, tuple(_split_symbols(text)))
        except ValueError:
            raise DomainError(f"cannot parse symbol word {text!r}")

    @classmethod
    def two_sided(cls, k: int, past: Sequence[int], future: Sequence[int]) -> "SymbolWord":
        return cls(k, tuple(past) + tuple(future), len(past))

    @property
    def two_sided_window(self) -> bool:
        return self.origin is not None

    def __len__(self) -> int:
        return len(self.letters)

    def future(self) -> Tuple[int, ...]:
        return self.letters[self.origin or 0:]

    def shifted(self) -> "SymbolWord":
        if self.origin is None:
            return SymbolWord(self.k, self.letters[1:])
        return SymbolWord(self.k, self.letters, self.origin + 1)

    def zero_based(self) -> np.ndarray:
        return np.array(self.letters, dtype=np.int64) - 1

    def __str__(self):
        sep = "" if self.k <= 9 else "."
        body = [str(c) for c in self.letters]
        if self.origin is None:
            return sep.join(body)
        return sep.join(body[:self.origin]) + "|" + sep.join(body[self.origin:])


def _split_symbols(text: str) -> List[int]:
    if not text:
        return []
    if "." in text:
        return [int(part) for part in text.split(".") if part]
    return [int(c) for c in text]


def _region_inside(inner: Region, outer: Region) -> bool:
    if isinstance(inner, Box):
        return bool(np.all(outer.contains(inner.corners())))
    if isinstance(outer, Ball):
        return bool(outer.contains(inner.center, margin=inner.radius)[0])
    return bool(np.all(np.abs(inner.center - outer.center) + inner.radius <= outer.halfwidths))


def window_code(window: Sequence[int], k: int) -> int:
    """Index of a 1-based window in the lexicographic enumeration"""
    code = 0
    for c in window:
        code = code * k + (int(c) - 1)
    return code


class SkewProduct:
    """
    Fiber maps over the full shift on ``k`` symbols, selected by windows of length
    ``window``. E_in ⊂ E_out are the inner and outer fiber regions.
    """

    def __init__(
        self,
        k: int,
        window: int,
        table: Dict[Tuple[int, ...], Map],
        e_in: Region,
        e_out: Region,
        epsilon: float = 0.0,
    ):
        if k < 2:
            raise DomainError("alphabet needs at least two symbols", k=k)
        if not 1 <= window <= MAX_WINDOW:
            raise DomainError(f"window length must lie in 1..{MAX_WINDOW}", window=window)
        self.k = k
        self.window = window
        self.e_in = e_in
        self.e_out = e_out
        self.epsilon = float(epsilon)
        self.table = {tuple(int(c) for c in key): f for key, f in table.items()}
        missing = [list(w) for w in self.windows() if w not in self.table]
        if missing:
            raise DomainError("fiber table is missing windows", missing=missing[:10])
        dims = {f.dim for f in self.table.values()}
        if dims != {e_in.dim} or e_out.dim != e_in.dim:
            raise DimensionMismatchError("fiber maps and regions disagree on dimension", dims=sorted(dims))
        if not _region_inside(e_in, e_out):
            raise DomainError("E_in must lie inside E_out", e_in=e_in.to_dict(), e_out=e_out.to_dict())
        self._maps = [self.table[w] for w in self.windows()]
        self._lipschitz: Optional[List] = None

    @classmethod
    def from_family(cls, family: MapFamily, e_in: Region, e_out: Region) -> "SkewProduct":
        """Window-1 product: symbol i selects the i-th member"""
        return cls(len(family), 1, {(i + 1,): f for i, f in enumerate(family.maps)}, e_in, e_out)

    @property
    def dim(self) -> int:
        return self.e_in.dim

    def windows(self) -> List[Tuple[int, ...]]:
        return list(itertools.product(range(1, self.k + 1), repeat=self.window))

    def fiber_map(self, window: Sequence[int]) -> Map:
        key = tuple(int(c) for c in window)
        if key not in self.table:
            raise DomainError("no fiber map for window", window=list(key))
        return self.table[key]

    def map_by_code(self, code: int) -> Map:
        return self._maps[code]

    @property
    def is_affine(self) -> bool:
        return all(exact_affine(f) is not None for f in self._maps)

    def affine_stack(self) -> Tuple[np.ndarray, np.ndarray]:
        maps = [exact_affine(f) for f in self._maps]
        return np.stack([f.linear for f in maps]), np.stack([f.shift for f in maps])

    @property
    def outer_ball(self) -> Ball:
        return self.e_out.circumscribed_ball()

    def lipschitz(self):
        """Bounds of every fiber map on E_out, in window order"""
        if self._lipschitz is None:
            self._lipschitz = [lipschitz_bounds(f, self.e_out) for f in self._maps]
        return self._lipschitz

    @property
    def kappa_max(self) -> float:
        return max(b.upper for b in self.lipschitz())

    def to_dict(self) -> dict:
        maps = []
        for w in self.windows():
            entry = {"window": list(w)}
            entry.update(self.table[w].to_dict())
            maps.append(entry)
        return {
            "k": self.k,
            "window": self.window,
            "epsilon": self.epsilon,
            "e_in": self.e_in.to_dict(),
            "e_out": self.e_out.to_dict(),
            "maps": maps,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SkewProduct":
        try:
            table = {tuple(entry["window"]): map_from_dict(entry) for entry in data["maps"]}
            fields = (data["k"], data["window"], region_from_dict(data["e_in"]), region_from_dict(data["e_out"]))
        except KeyError as e:
            raise UsageError(f"skew product is missing {e.args[0]!r}", field=str(e.args[0]))
        except (TypeError, ValueError, DimensionMismatchError) as e:
            raise UsageError(f"malformed skew product: {e}")
        k, window, e_in, e_out = fields
        return cls(k, window, table, e_in, e_out, data.get("epsilon", 0.0))

    def __repr__(self):
        return f"<SkewProduct(k={self.k}, window={self.window}, dim={self.dim}, epsilon={self.epsilon})>"


def skew_product_from_certificate(cert: MinimalityCertificate) -> SkewProduct:
    """Window-1 product of a certified family: E_in the certified domain, E_out its working ball"""
    if cert.working_domain is None:
        raise DomainError("certificate has no working ball", status=cert.status)
    return SkewProduct.from_family(cert.load_family(), cert.domain_region(), cert.working_region())


def perturbed_product(base: SkewProduct, window: int, epsilon: float, seed: int = 0, model: str = "affine") -> SkewProduct:
    """
    Window-``window`` product whose fiber map for ω_0 .. ω_{w-1} is a seeded
    perturbation of the base map of ω_0.
    """
    if base.window != 1:
        raise DomainError("perturbations start from a window-1 product", window=base.window)
    table = {}
    for w in itertools.product(range(1, base.k + 1), repeat=window):
        code = window_code(w, base.k)
        table[w] = perturb(
            base.fiber_map(w[:1]), epsilon, model, np.random.SeedSequence([seed, window, code]), base.e_out
        )
    return SkewProduct(base.k, window, table, base.e_in, base.e_out, epsilon)


def skew_step(product: SkewProduct, omega: SymbolWord, y) -> Tuple[SymbolWord, np.ndarray]:
    if not omega.two_sided_window:
        raise DomainError("skew_step needs a two-sided window")
    if omega.k != product.k:
        raise DomainError("alphabet mismatch", word=omega.k, product=product.k)
    start = omega.origin
    if start + product.window > len(omega):
        raise WindowExhaustedError(
            "window exhausted",
            origin=start,
            length=len(omega),
            window=product.window,
        )
    y = as_vector(y, product.dim)
    f = product.fiber_map(omega.letters[start:start + product.window])
    return omega.shifted(), f(y)


@dataclass
class Strip:
    prefix: SymbolWord
    bound: Ball
    generation: int


@dataclass
class StripSet:
    """
    One generation of strips stored as arrays: row i has prefix ``prefixes[i]``
    (0-based symbols) and fiber bound B(centers[i], radii[i]). ``linear``/``shift``
    hold the composed fiber map when every map is affine.
    """

    k: int
    generation: int
    prefixes: np.ndarray
    centers: np.ndarray
    radii: np.ndarray
    linear: Optional[np.ndarray] = None
    shift: Optional[np.ndarray] = None

    def __len__(self) -> int:
        return self.centers.shape[0]

    @property
    def max_diameter(self) -> float:
        return float(2.0 * self.radii.max()) if len(self) else 0.0

    def strips(self) -> List[Strip]:
        return [
            Strip(SymbolWord(self.k, tuple(self.prefixes[i] + 1)), Ball(self.centers[i], self.radii[i]), self.generation)
            for i in range(len(self))
        ]

    @classmethod
    def from_strips(cls, k: int, strips: Sequence[Strip]) -> "StripSet":
        if not strips:
            raise DomainError("no strips to refine")
        generation = strips[0].generation
        if any(s.generation != generation or len(s.prefix) != generation for s in strips):
            raise DomainError("strips must share one generation matching their prefix length")
        return cls(
            k,
            generation,
            np.array([s.prefix.zero_based() for s in strips], dtype=np.int64).reshape(len(strips), generation),
            np.stack([s.bound.center for s in strips]),
            np.array([s.bound.radius for s in strips]),
        )

    def select(self, rows: np.ndarray) -> "StripSet":
        return StripSet(
            self.k,
            self.generation,
            self.prefixes[rows],
            self.centers[rows],
            self.radii[rows],
            None if self.linear is None else self.linear[rows],
            None if self.shift is None else self.shift[rows],
        )


def initial_strips(product: SkewProduct) -> StripSet:
    """Generation 0: the empty prefix with E_out's enclosing ball"""
    ball = product.outer_ball
    m = product.dim
    return StripSet(
        product.k,
        0,
        np.empty((1, 0), dtype=np.int64),
        ball.center[None, :].copy(),
        np.array([ball.radius]),
        np.eye(m)[None, :, :] if product.is_affine else None,
        np.zeros((1, m)) if product.is_affine else None,
    )


def strip_refine(product: SkewProduct, strips: Union[StripSet, Sequence[Strip]]) -> Union[StripSet, List[Strip]]:
    """
    Append every symbol to every prefix. Once a prefix fixes a whole window the
    child bound is the image of the parent under that window's map: exact for
    affine products, the parent radius times the map's Lipschitz bound otherwise.
    Child i*k + j comes from parent i and symbol j.
    """
    as_list = not isinstance(strips, StripSet)
    current = StripSet.from_strips(product.k, strips) if as_list else strips
    k, w = product.k, product.window
    n = current.generation
    parents = len(current)
    child_symbol = np.tile(np.arange(k), parents)
    prefixes = np.hstack([np.repeat(current.prefixes, k, axis=0), child_symbol[:, None]])
    centers = np.repeat(current.centers, k, axis=0)
    radii = np.repeat(current.radii, k)
    linear = None if current.linear is None else np.repeat(current.linear, k, axis=0)
    shift = None if current.shift is None else np.repeat(current.shift, k, axis=0)
    if n + 1 >= w:
        codes = np.zeros(prefixes.shape[0], dtype=np.int64)
        for c in prefixes[:, n + 1 - w:].T:
            codes = codes * k + c
        if linear is not None:
            A, b = product.affine_stack()
            linear = np.einsum("nij,njk->nik", A[codes], linear)
            shift = np.einsum("nij,nj->ni", A[codes], shift) + b[codes]
            ball = product.outer_ball
            centers = np.einsum("nij,j->ni", linear, ball.center) + shift
            radii = ball.radius * np.linalg.norm(linear, ord=2, axis=(1, 2))
        else:
            lips = np.array([bounds.upper for bounds in product.lipschitz()])
            for code in np.unique(codes):
                rows = codes == code
                centers[rows] = product.map_by_code(int(code))(centers[rows])
            radii = radii * lips[codes]
    refined = StripSet(k, n + 1, prefixes, centers, radii, linear, shift)
    return refined.strips() if as_list else refined


def _distance_to_region(region: Region, points: np.ndarray) -> np.ndarray:
    if isinstance(region, Box):
        excess = np.maximum(np.abs(points - region.center) - region.halfwidths, 0.0)
        return np.linalg.norm(excess, axis=1)
    return np.maximum(np.linalg.norm(points - region.center, axis=1) - region.radius, 0.0)


def deepest_cover(centers: np.ndarray, radii: np.ndarray, grid: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    For each grid point a strip containing it (the deepest among the nearest
    centers), and whether any strip does. Points missed by the nearest centers are
    searched again within the largest strip radius, so far-centered wide strips count.
    """
    tree = KDTree(centers)
    K = min(centers.shape[0], NEIGHBORS)
    dist, idx = tree.query(grid, k=K)
    if K == 1:
        dist, idx = dist[:, None], idx[:, None]
    depth = radii[idx] - dist
    best = np.argmax(depth, axis=1)
    rows = np.arange(grid.shape[0])
    chosen = idx[rows, best]
    hit = depth[rows, best] >= -COVER_TOL
    missed = np.flatnonzero(~hit)
    if missed.size and centers.shape[0] > K:
        reach = float(radii.max()) + COVER_TOL
        for i, near in zip(missed, tree.query_ball_point(grid[missed], reach)):
            if not near:
                continue
            near = np.asarray(near, dtype=np.int64)
            d = radii[near] - np.linalg.norm(centers[near] - grid[i], axis=1)
            j = int(np.argmax(d))
            if d[j] >= -COVER_TOL:
                chosen[i] = near[j]
                hit[i] = True
    return chosen, hit


def _prune(product: SkewProduct, strips: StripSet, grid: np.ndarray, budget: int) -> Tuple[StripSet, int]:
    """
    Keep a covering witness set of at most ``budget`` strips: strips meeting E_in,
    the deepest cover of every grid point (per window suffix class), then an even
    stride of the rest.
    """
    total = len(strips)
    if total <= budget:
        return strips, 0
    relevant = np.flatnonzero(_distance_to_region(product.e_in, strips.centers) <= strips.radii)
    if relevant.size > budget:
        w = product.window
        suffix = np.zeros(total, dtype=np.int64)
        if w > 1:
            for c in strips.prefixes[:, -(w - 1):].T:
                suffix = suffix * product.k + c
        chosen = []
        for code in np.unique(suffix[relevant]):
            rows = relevant[suffix[relevant] == code]
            best, ok = deepest_cover(strips.centers[rows], strips.radii[rows], grid)
            chosen.append(rows[best[ok]])
        chosen = np.unique(np.concatenate(chosen)) if chosen else np.empty(0, dtype=np.int64)
        rest = np.setdiff1d(relevant, chosen)
        slots = budget - chosen.size
        if slots > 0 and rest.size:
            picks = np.unique(np.linspace(0, rest.size - 1, min(slots, rest.size)).astype(np.int64))
            chosen = np.union1d(chosen, rest[picks])
        elif slots < 0:
            logger.warning("Covering witness set of %d strips exceeds the budget %d", chosen.size, budget)
        relevant = chosen
    kept = strips.select(np.sort(relevant))
    pruned = total - len(kept)
    logger.info("Generation %d: pruned %d of %d strips", strips.generation, pruned, total)
    return kept, pruned


def _inclusion_precheck(product: SkewProduct, spacing: float):
    """E_in inside the union of its images under every window's map"""
    pieces = [MapImage(product.fiber_map(w), product.e_in) for w in product.windows()]
    return covering_test(product.e_in, pieces, spacing, max_witnesses=20)


def check_domination(product: SkewProduct, base_rate: float = 2.0) -> bool:
    """Every fiber map satisfies 1/ρ < λ <= κ < ρ on E_out, ρ the nominal base rate"""
    if not base_rate > 1.0:
        raise DomainError("base rate must exceed 1", base_rate=base_rate)
    return all(1.0 / base_rate < b.lower and b.upper < base_rate for b in product.lipschitz())


def blender_verify(
    product: SkewProduct,
    n_max: int,
    spacing: float,
    base_rate: float = 2.0,
    strip_budget: int = STRIP_BUDGET,
    keep: Optional[List[StripSet]] = None,
) -> BlenderReport:
    """
    Refine strips up to generation ``n_max`` and check, per generation, that the
    strip bounds cover the E_in grid and respect the diameter decay bound. Passes
    when generation ``n_max`` covers, its strips are at most 2*spacing across, E_in
    lies in the union of its images and the fibers are dominated by the base rate.
    ``keep`` collects the final generation for strip dumps.
    """
    for w, bounds in zip(product.windows(), product.lipschitz()):
        if not bounds.upper < 1.0:
            raise NotContractingError(
                "fiber map is not a contraction on E_out",
                window=list(w),
                kappa=bounds.upper,
            )
    kappa = product.kappa_max
    inclusion = _inclusion_precheck(product, spacing)
    domination = check_domination(product, base_rate)
    inflation = max(b.upper / b.lower for b in product.lipschitz())
    grid = Grid(product.e_in, spacing).points()
    if grid.shape[0] == 0:
        raise CoveringError("E_in grid is empty", spacing=spacing)
    outer_diameter = product.outer_ball.diameter

    strips = initial_strips(product)
    generations: List[GenerationStats] = []
    previous = strips.max_diameter
    bounded = True
    for n in range(1, n_max + 1):
        strips = strip_refine(product, strips)
        diameter = strips.max_diameter
        bound = kappa ** max(0, n - product.window + 1) * outer_diameter
        if diameter > bound * (1.0 + 1e-9):
            bounded = False
            logger.error("Generation %d diameter %.6g above decay bound %.6g", n, diameter, bound)
        _, hit = deepest_cover(strips.centers, strips.radii, grid)
        n_strips = len(strips)
        strips, pruned = _prune(product, strips, grid, strip_budget)
        generations.append(
            GenerationStats(
                generation=n,
                n_strips=n_strips,
                n_pruned=pruned,
                max_diameter=diameter,
                diameter_bound=bound,
                decay_ratio=diameter / previous if previous > 0 else None,
                covered=bool(hit.all()),
                n_uncovered=int((~hit).sum()),
                witnesses=grid[~hit][:20].tolist(),
            )
        )
        previous = diameter
        logger.debug("Generation %d: %d strips, max diameter %.4g, covered=%s", n, n_strips, diameter, hit.all())
    if keep is not None:
        keep.append(strips)

    final = generations[-1] if generations else None
    passed = bool(
        final is not None
        and final.covered
        and final.max_diameter <= 2.0 * spacing
        and bounded
        and inclusion.covered
        and domination
    )
    logger.info(
        "Blender check window=%d n_max=%d: passed=%s (inclusion=%s, domination=%s)",
        product.window, n_max, passed, inclusion.covered, domination,
    )
    return BlenderReport(
        window=product.window,
        epsilon=product.epsilon,
        n_max=n_max,
        spacing=spacing,
        base_rate=base_rate,
        e_in=DomainSpec.from_region(product.e_in),
        e_out=DomainSpec.from_region(product.e_out),
        kappa_max=kappa,
        inclusion_precheck=inclusion.covered,
        inclusion_witnesses=inclusion.witnesses.tolist(),
        domination=domination,
        inflation=inflation,
        generations=generations,
        passed=passed,
        product=product.to_dict(),
    )


def write_strips_csv(path: str, strips: StripSet) -> None:
    """One row per strip: prefix word, center coordinates, radius, generation"""
    sep = "" if strips.k <= 9 else "."
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["prefix"] + [f"c{i + 1}" for i in range(strips.centers.shape[1])] + ["radius", "generation"])
        for prefix, center, radius in zip(strips.prefixes, strips.centers, strips.radii):
            writer.writerow(
                [sep.join(str(int(c) + 1) for c in prefix)]
                + [format(float(x), ".17g") for x in center]
                + [format(float(radius), ".17g"), strips.generation]
            )


@dataclass
class Cylinder:
    """Cylinder of a one-sided prefix times a fiber ball"""

    prefix: SymbolWord
    ball: Ball

    @classmethod
    def parse(cls, text: str, k: int) -> "Cylinder":
        """``"121:x1,...,xm,radius"``; an empty prefix is the whole symbol space"""
        if ":" not in text:
            raise DomainError(f"cylinder {text!r} needs the form prefix:center...,radius")
        word, numbers = text.split(":", 1)
        try:
            values = [float(v) for v in numbers.split(",")]
        except ValueError:
            raise DomainError(f"cannot parse fiber ball {numbers!r}")
        if len(values) < 2:
            raise DomainError("fiber ball needs a center and a radius", values=values)
        return cls(SymbolWord.parse(word, k), Ball(values[:-1], values[-1]))


def _mixing_chunk(product: SkewProduct, u: Cylinder, v: Cylinder, n_min: int, horizon: int, seed: int, chunk: int):
    rng = np.random.default_rng(np.random.SeedSequence([seed, chunk]))
    k, w = product.k, product.window
    q = len(v.prefix)
    length = horizon + max(q, w) + 1
    symbols = rng.integers(0, k, (MIXING_CHUNK, length))
    p = len(u.prefix)
    if p:
        symbols[:, :p] = u.prefix.zero_based()
    y = u.ball.sample(MIXING_CHUNK, rng)
    target = v.prefix.zero_based()
    hits = np.zeros(horizon - n_min + 1, dtype=np.int64)
    affine = product.affine_stack() if product.is_affine else None
    for n in range(horizon + 1):
        if n >= n_min:
            match = np.all(symbols[:, n:n + q] == target, axis=1) if q else np.ones(MIXING_CHUNK, dtype=bool)
            hits[n - n_min] = int(np.count_nonzero(match & v.ball.contains(y)))
        if n == horizon:
            break
        codes = np.zeros(MIXING_CHUNK, dtype=np.int64)
        for c in symbols[:, n:n + w].T:
            codes = codes * k + c
        if affine is not None:
            A, b = affine
            y = np.einsum("nij,nj->ni", A[codes], y) + b[codes]
        else:
            for code in np.unique(codes):
                rows = codes == code
                y[rows] = product.map_by_code(int(code))(y[rows])
    return hits


def mixing_probe(
    product: SkewProduct,
    u: Cylinder,
    v: Cylinder,
    n_min: int,
    horizon: int,
    seed: int = 0,
    max_samples: int = MIXING_SAMPLES,
    threads: int = 1,
) -> MixingReport:
    """
    Sample orbits starting in the cylinder ``u`` and check that for every n in
    [n_min, horizon] some orbit is in ``v`` at time n. Samples are drawn in seeded
    chunks; the sample count doubles until every time is hit or ``max_samples``
    is reached.
    """
    if not 0 <= n_min <= horizon:
        raise DomainError("need 0 <= n_min <= horizon", n_min=n_min, horizon=horizon)
    for name, cyl in (("u", u), ("v", v)):
        if cyl.prefix.k != product.k:
            raise DomainError(f"alphabet of {name} does not match the product", k=cyl.prefix.k)
        if cyl.ball.dim != product.dim:
            raise DimensionMismatchError(f"fiber ball of {name} has the wrong dimension", dim=cyl.ball.dim)
        if not product.e_out.contains(cyl.ball.center)[0]:
            raise DomainError(f"fiber ball of {name} is outside E_out", center=cyl.ball.center.tolist())

    hits = np.zeros(horizon - n_min + 1, dtype=np.int64)
    samples: List[int] = []
    done = 0
    target = MIXING_CHUNK
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        while True:
            chunks = range(done // MIXING_CHUNK, target // MIXING_CHUNK)
            for part in pool.map(lambda c: _mixing_chunk(product, u, v, n_min, horizon, seed, c), chunks):
                hits += part
            done = target
            samples.append(done)
            if np.all(hits > 0) or done >= max_samples:
                break
            target = min(2 * done, max_samples)

    missing = np.flatnonzero(hits == 0)
    passed = missing.size == 0
    message = None
    if hits.sum() == 0:
        message = "sample budget exhausted before any hit"
    elif not passed:
        message = f"{missing.size} of {hits.size} times without a hit"
    logger.info("Mixing probe %s -> %s: passed=%s after %d samples", u.prefix, v.prefix, passed, done)
    return MixingReport(
        u_prefix=list(u.prefix.letters),
        v_prefix=list(v.prefix.letters),
        n_min=n_min,
        horizon=horizon,
        passed=passed,
        hits=hits.tolist(),
        samples=samples,
        first_miss=int(n_min + missing[0]) if missing.size else None,
        message=message,
    )
