"""
Map representations and family algebra.

AffineMap is exact (linear part plus shift). BlackBoxMap wraps an evaluator with an
optional inverse and a finite-difference Jacobian. MapFamily is an ordered, labelled
list of maps of one dimension; FamilySequence realizes per-step perturbed copies of a
base family lazily from (seed, step).
"""

import json
import logging
import math
import threading
from dataclasses import dataclass
from functools import reduce
from typing import Callable, Dict, Iterator, List, Optional, Sequence, Tuple, Union

import numpy as np

from errors import DimensionMismatchError, DomainError, SingularMapError, UsageError, check_dimension
from geometry import Ball, Box, Region, as_points, as_vector, region_from_dict, sample_region

logger = logging.getLogger(__name__)

FD_STEP = 1e-6
SINGULAR_TOL = 1e-12


def _apply_points(fn: Callable[[np.ndarray], np.ndarray], x) -> np.ndarray:
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        return fn(arr.reshape(1, -1))[0]
    return fn(arr)


class AffineMap:
    """x -> linear @ x + shift"""

    kind = "affine"

    def __init__(self, linear, shift):
        linear = np.array(linear, dtype=float)
        shift = np.array(shift, dtype=float).reshape(-1)
        if linear.ndim != 2 or linear.shape[0] != linear.shape[1]:
            raise DimensionMismatchError("linear part must be square", shape=list(linear.shape))
        check_dimension(linear.shape[0], shift.size, "shift")
        sv = np.linalg.svd(linear, compute_uv=False) if np.all(np.isfinite(linear)) else np.zeros(1)
        if sv.min() <= SINGULAR_TOL * max(sv.max(), 1.0):
            raise SingularMapError("linear part is singular", matrix=linear.tolist())
        linear.setflags(write=False)
        shift.setflags(write=False)
        self.linear = linear
        self.shift = shift

    @classmethod
    def identity(cls, dim: int) -> "AffineMap":
        return cls(np.eye(dim), np.zeros(dim))

    @classmethod
    def translation(cls, vector) -> "AffineMap":
        v = as_vector(vector)
        return cls(np.eye(v.size), v)

    @classmethod
    def scaling(cls, factor: float, dim: int) -> "AffineMap":
        return cls(factor * np.eye(dim), np.zeros(dim))

    @property
    def dim(self) -> int:
        return self.shift.size

    @property
    def affine(self) -> "AffineMap":
        return self

    def __call__(self, x) -> np.ndarray:
        return _apply_points(lambda p: p @ self.linear.T + self.shift, x)

    def compose(self, other: "AffineMap") -> "AffineMap":
        """self ∘ other"""
        check_dimension(self.dim, other.dim, "map")
        return AffineMap(self.linear @ other.linear, self.linear @ other.shift + self.shift)

    def inverse(self) -> "AffineMap":
        inv = np.linalg.inv(self.linear)
        return AffineMap(inv, -inv @ self.shift)

    def inverse_apply(self, y) -> np.ndarray:
        def solve(p):
            return np.linalg.solve(self.linear, (p - self.shift).T).T

        return _apply_points(solve, y)

    def jacobian(self, x=None) -> np.ndarray:
        return np.array(self.linear)

    def singular_values(self) -> np.ndarray:
        return np.linalg.svd(self.linear, compute_uv=False)

    def fixed_point(self) -> np.ndarray:
        return np.linalg.solve(np.eye(self.dim) - self.linear, self.shift)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "matrix": self.linear.tolist(),
            "shift": self.shift.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "AffineMap":
        return cls(data["matrix"], data["shift"])

    def allclose(self, other: "AffineMap", atol: float = 1e-14) -> bool:
        return np.allclose(self.linear, other.linear, rtol=0, atol=atol) and np.allclose(
            self.shift, other.shift, rtol=0, atol=atol
        )

    def __repr__(self):
        return f"<AffineMap(linear={self.linear.tolist()}, shift={self.shift.tolist()})>"


class BlackBoxMap:
    """
    Differentiable map given by an evaluator on (N, m) arrays.

    ``affine`` is set when the map is known to be exactly affine (perturbations of
    affine maps), which lets image membership and fixed points stay exact.
    """

    kind = "black-box"

    def __init__(
        self,
        evaluator: Callable[[np.ndarray], np.ndarray],
        dim: int,
        jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None,
        inverse: Optional[Callable[[np.ndarray], np.ndarray]] = None,
        affine: Optional[AffineMap] = None,
        description: Optional[dict] = None,
    ):
        self._evaluator = evaluator
        self._jacobian = jacobian
        self._inverse = inverse
        self.dim = dim
        self.affine = affine
        self.description = description

    @classmethod
    def from_affine(cls, f: AffineMap) -> "BlackBoxMap":
        return cls(
            lambda p: p @ f.linear.T + f.shift,
            f.dim,
            jacobian=lambda x: np.array(f.linear),
            inverse=lambda p: np.linalg.solve(f.linear, (p - f.shift).T).T,
            affine=f,
            description=f.to_dict(),
        )

    def __call__(self, x) -> np.ndarray:
        return _apply_points(self._evaluator, x)

    def jacobian(self, x) -> np.ndarray:
        x = as_vector(x, self.dim)
        if self._jacobian is not None:
            return np.asarray(self._jacobian(x), dtype=float)
        return finite_difference_jacobian(self, x)

    @property
    def has_inverse(self) -> bool:
        return self._inverse is not None

    def inverse_apply(self, y) -> np.ndarray:
        if self._inverse is None:
            raise DomainError("map has no inverse evaluator")
        return _apply_points(self._inverse, y)

    def compose(self, other) -> "BlackBoxMap":
        return compose_maps(self, other)

    def to_dict(self) -> dict:
        if self.description is None:
            raise DomainError("map has no serializable description")
        return dict(self.description)

    def __repr__(self):
        return f"<BlackBoxMap(dim={self.dim}, affine={self.affine is not None})>"


def finite_difference_jacobian(f, x: np.ndarray, step: float = FD_STEP) -> np.ndarray:
    """Central differences, one column per coordinate"""
    m = x.size
    offsets = np.eye(m) * step
    forward = f(x + offsets)
    backward = f(x - offsets)
    return ((forward - backward) / (2.0 * step)).T


def _bump_profile(t):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    inside = t < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - t[inside] ** 2))
    return out


def _bump_slope(t):
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    inside = t < 1.0
    ti = t[inside]
    out[inside] = np.exp(-1.0 / (1.0 - ti ** 2)) * (-2.0 * ti / (1.0 - ti ** 2) ** 2)
    return out


_PROFILE_GRID = np.linspace(0.0, 1.0, 200001)[:-1]
BUMP_MAX = float(math.exp(-1.0))
BUMP_SLOPE_MAX = float(np.max(np.abs(_bump_slope(_PROFILE_GRID))))


class BumpPerturbedMap(BlackBoxMap):
    """
    Affine map plus one smooth compactly supported bump:
    x -> f(x) + c * g(|x - x0| / rho) * u, with g(t) = exp(-1 / (1 - t^2)) on t < 1.
    """

    kind = "bump-perturbed"

    def __init__(self, base: AffineMap, center, radius: float, amplitude: float, direction):
        self.base = base
        self.center = as_vector(center, base.dim)
        self.radius = float(radius)
        self.amplitude = float(amplitude)
        u = as_vector(direction, base.dim)
        self.direction = u / np.linalg.norm(u)
        super().__init__(self._evaluate, base.dim, jacobian=self._exact_jacobian, inverse=self._invert)
        self.affine = None

    def _offset(self, pts: np.ndarray) -> np.ndarray:
        t = np.linalg.norm(pts - self.center, axis=1) / self.radius
        return self.amplitude * _bump_profile(t)[:, None] * self.direction

    def _evaluate(self, pts: np.ndarray) -> np.ndarray:
        return self.base(pts) + self._offset(pts)

    def _exact_jacobian(self, x: np.ndarray) -> np.ndarray:
        diff = x - self.center
        norm = np.linalg.norm(diff)
        jac = np.array(self.base.linear)
        if 0.0 < norm < self.radius:
            slope = _bump_slope(np.array([norm / self.radius]))[0]
            jac += self.amplitude * slope / self.radius * np.outer(self.direction, diff / norm)
        return jac

    def _invert(self, y: np.ndarray, tol: float = 1e-14, max_iter: int = 200) -> np.ndarray:
        x = self.base.inverse_apply(y)
        for _ in range(max_iter):
            nxt = self.base.inverse_apply(y - self._offset(x))
            if np.max(np.abs(nxt - x)) <= tol:
                return nxt
            x = nxt
        return x

    @property
    def c1_size(self) -> float:
        return self.amplitude * max(BUMP_MAX, BUMP_SLOPE_MAX / self.radius)

    def to_dict(self) -> dict:
        data = self.base.to_dict()
        data["kind"] = self.kind
        data["bump"] = {
            "center": self.center.tolist(),
            "radius": self.radius,
            "amplitude": self.amplitude,
            "direction": self.direction.tolist(),
        }
        return data


Map = Union[AffineMap, BlackBoxMap]


def map_from_dict(data: dict) -> Map:
    kind = data.get("kind", "affine")
    if kind == "affine":
        return AffineMap.from_dict(data)
    if kind == "bump-perturbed":
        bump = data["bump"]
        return BumpPerturbedMap(
            AffineMap.from_dict(data), bump["center"], bump["radius"], bump["amplitude"], bump["direction"]
        )
    raise DomainError(f"unknown map kind {kind!r}", kind=kind)


def exact_affine(f: Map) -> Optional[AffineMap]:
    return getattr(f, "affine", None)


def compose_maps(f: Map, g: Map) -> Map:
    """f ∘ g, exact when both are affine"""
    check_dimension(f.dim, g.dim, "map")
    fa, ga = exact_affine(f), exact_affine(g)
    if fa is not None and ga is not None:
        composed = fa.compose(ga)
        if isinstance(f, AffineMap) and isinstance(g, AffineMap):
            return composed
        return BlackBoxMap.from_affine(composed)

    def evaluate(p):
        return f(g(p))

    def jacobian(x):
        return f.jacobian(g(x)) @ g.jacobian(x)

    inverse = None
    if _invertible(f) and _invertible(g):

        def inverse(p):
            return g.inverse_apply(f.inverse_apply(p))

    return BlackBoxMap(evaluate, f.dim, jacobian=jacobian, inverse=inverse)


def _invertible(f: Map) -> bool:
    return isinstance(f, AffineMap) or getattr(f, "has_inverse", False)


def compose_sequence(maps: Sequence[Map]) -> Map:
    """Composition of a word, first map applied first"""
    if not maps:
        raise DomainError("cannot compose an empty word without a dimension")
    return reduce(lambda acc, f: compose_maps(f, acc), maps[1:], maps[0])


class MapFamily:
    """Ordered labelled maps sharing one dimension"""

    def __init__(self, maps: Sequence[Tuple[str, Map]]):
        maps = list(maps)
        if not maps:
            raise DomainError("a map family needs at least one member")
        dim = maps[0][1].dim
        for label, f in maps:
            check_dimension(dim, f.dim, f"map {label!r}")
        self._maps = maps
        self.dim = dim

    @property
    def labels(self) -> List[str]:
        return [label for label, _ in self._maps]

    @property
    def maps(self) -> List[Map]:
        return [f for _, f in self._maps]

    def __len__(self) -> int:
        return len(self._maps)

    def __iter__(self) -> Iterator[Tuple[str, Map]]:
        return iter(self._maps)

    def __getitem__(self, index: int) -> Tuple[str, Map]:
        return self._maps[index]

    @property
    def is_affine(self) -> bool:
        return all(exact_affine(f) is not None for f in self.maps)

    def affine_maps(self) -> List[AffineMap]:
        out = []
        for label, f in self._maps:
            fa = exact_affine(f)
            if fa is None:
                raise DomainError(f"map {label!r} is not affine", label=label)
            out.append(fa)
        return out

    def images(self, region: Region, erosion: float = 0.0) -> List["MapImage"]:
        return [MapImage(f, region, erosion=erosion) for f in self.maps]

    def to_dict(self) -> dict:
        entries = []
        for label, f in self._maps:
            entry = {"label": label}
            entry.update(f.to_dict())
            entries.append(entry)
        return {"dim": self.dim, "maps": entries}

    @classmethod
    def from_dict(cls, data: dict) -> "MapFamily":
        if not isinstance(data, dict) or not isinstance(data.get("maps"), list) or not data["maps"]:
            raise UsageError("a family needs a list of maps", field="maps")
        entries = []
        for i, entry in enumerate(data["maps"]):
            where = f"maps[{i}]"
            try:
                entries.append((entry["label"], map_from_dict(entry)))
            except KeyError as e:
                raise UsageError(f"{where} is missing {e.args[0]!r}", field=f"{where}.{e.args[0]}")
            except (TypeError, ValueError, DimensionMismatchError) as e:
                raise UsageError(f"{where} is malformed: {e}", field=where)
        family = cls(entries)
        check_dimension(int(data.get("dim", family.dim)), family.dim, "family")
        return family

    def save(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)

    @classmethod
    def load(cls, path: str) -> "MapFamily":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))

    def __repr__(self):
        return f"<MapFamily(labels={self.labels}, dim={self.dim})>"


def identity_family(dim: int) -> MapFamily:
    return MapFamily([("Id", AffineMap.identity(dim))])


def compose_families(F: MapFamily, G: MapFamily) -> MapFamily:
    """All f ∘ g, F outermost in the ordering; identity labels are dropped"""
    check_dimension(F.dim, G.dim, "family")
    out = []
    for lf, f in F:
        for lg, g in G:
            label = "·".join(part for part in (lf, lg) if part and part != "Id") or "Id"
            out.append((label, compose_maps(f, g)))
    return MapFamily(out)


class MapImage:
    """
    Membership in f(region), decided through f's inverse.

    ``erosion`` shrinks the image by a uniform distance: a point passes only when the
    whole erosion-ball around it lies in the image.
    """

    def __init__(self, f: Map, region: Region, erosion: float = 0.0):
        self.f = f
        self.region = region
        self.erosion = float(erosion)
        self._affine = exact_affine(f)
        self._inverse_lipschitz = None
        if self._affine is not None:
            inv = np.linalg.inv(self._affine.linear)
            self._row_norms = np.linalg.norm(inv, axis=1)
            self._inverse_norm = float(np.linalg.norm(inv, 2))
        elif not _invertible(f):
            raise DomainError("image membership needs an inverse evaluator")

    def _margin(self):
        if self.erosion == 0.0:
            return 0.0
        if self._affine is not None:
            if isinstance(self.region, Box):
                return self.erosion * self._row_norms
            return self.erosion * self._inverse_norm
        if self._inverse_lipschitz is None:
            bounds = lipschitz_bounds(self.f, self.region)
            self._inverse_lipschitz = 1.0 / bounds.lower if bounds.lower > 0 else math.inf
        return self.erosion * self._inverse_lipschitz

    def __call__(self, points) -> np.ndarray:
        pts = as_points(points, self.f.dim)
        pre = self._affine.inverse_apply(pts) if self._affine is not None else self.f.inverse_apply(pts)
        margin = self._margin()
        if isinstance(self.region, Box):
            return np.all(np.abs(pre - self.region.center) + margin < self.region.halfwidths, axis=1)
        return np.linalg.norm(pre - self.region.center, axis=1) + margin < self.region.radius


def image_ball(f: Map, ball: Ball) -> Ball:
    """A ball containing f(ball): exact enclosing ball of the ellipsoid for affine f"""
    fa = exact_affine(f)
    if fa is not None:
        return Ball(fa(ball.center), float(np.max(fa.singular_values())) * ball.radius)
    bounds = lipschitz_bounds(f, ball)
    return Ball(f(ball.center), bounds.upper * ball.radius)


@dataclass
class LipschitzBounds:
    lower: float
    upper: float
    n_samples: int
    domain: Optional[Region] = None
    witness: Optional[List[float]] = None

    def to_dict(self) -> dict:
        return {
            "lower": self.lower,
            "upper": self.upper,
            "n_samples": self.n_samples,
            "domain": self.domain.to_dict() if self.domain is not None else None,
            "witness": self.witness,
        }


def lipschitz_bounds(f: Map, domain: Optional[Region] = None, n_samples: int = 256, seed: int = 0) -> LipschitzBounds:
    """Extreme singular values of the Jacobian over samples of the domain"""
    fa = exact_affine(f)
    if fa is not None:
        sv = fa.singular_values()
        return LipschitzBounds(float(sv.min()), float(sv.max()), 1, domain)
    if domain is None:
        raise DomainError("black-box Lipschitz bounds need a domain")
    pts = sample_region(domain, n_samples, np.random.default_rng(seed))
    sv = np.array([np.linalg.svd(f.jacobian(x), compute_uv=False) for x in pts])
    lower = sv.min(axis=1)
    worst = int(np.argmin(lower))
    if lower[worst] <= SINGULAR_TOL:
        return LipschitzBounds(0.0, float(sv.max()), len(pts), domain, pts[worst].tolist())
    return LipschitzBounds(float(lower.min()), float(sv.max()), len(pts), domain)


def family_lipschitz(family: MapFamily, domain: Optional[Region] = None, n_samples: int = 256) -> LipschitzBounds:
    bounds = [lipschitz_bounds(f, domain, n_samples) for f in family.maps]
    witness = next((b.witness for b in bounds if b.witness is not None), None)
    return LipschitzBounds(
        min(b.lower for b in bounds),
        max(b.upper for b in bounds),
        sum(b.n_samples for b in bounds),
        domain,
        witness,
    )


def weak_hyperbolicity(A, split: Tuple[int, int], delta: float) -> bool:
    """
    Check 1-δ < m(A_s) <= |A_s| < 1 < m(A_u) <= |A_u| < 1/(1-δ) for a block-diagonal A.
    """
    A = np.asarray(A, dtype=float)
    dim_s, dim_u = split
    if A.shape != (dim_s + dim_u, dim_s + dim_u):
        raise DimensionMismatchError("matrix does not match the split", shape=list(A.shape), split=list(split))
    if not 0.0 < delta < 1.0:
        raise DomainError("delta must lie in (0, 1)", delta=delta)
    if np.any(A[:dim_s, dim_s:] != 0.0) or np.any(A[dim_s:, :dim_s] != 0.0):
        raise DomainError("matrix is not block diagonal for the given split", split=list(split))
    ok = True
    if dim_s:
        sv = np.linalg.svd(A[:dim_s, :dim_s], compute_uv=False)
        ok &= bool(1.0 - delta < sv.min() and sv.max() < 1.0)
    if dim_u:
        sv = np.linalg.svd(A[dim_s:, dim_s:], compute_uv=False)
        ok &= bool(1.0 < sv.min() and sv.max() < 1.0 / (1.0 - delta))
    return ok


def sup_radius(domain: Optional[Region]) -> float:
    """Largest max-coordinate norm of a point of the domain (1 when unspecified)"""
    if domain is None:
        return 1.0
    return float(np.max(np.abs(domain.center) + domain.bounding_halfwidths))


def perturb(
    f: Map,
    epsilon: float,
    model: str = "affine",
    seed=0,
    domain: Optional[Region] = None,
    max_resample: int = 100,
) -> BlackBoxMap:
    """
    Seeded C^1-small perturbation of ``f`` on ``domain``, deviations measured in the
    max-coordinate norm.

    "affine" adds uniform noise in ±ε/(2m·R) to the linear part (R the domain's
    max-coordinate radius) and ±ε/2 to the shift. "bump" adds one smooth bump of C^1
    size ε centered at a random domain point.
    """
    if epsilon < 0:
        raise DomainError("epsilon must be nonnegative", epsilon=epsilon)
    base = exact_affine(f)
    if base is None:
        raise DomainError("only affine maps can be perturbed")
    if epsilon == 0:
        return BlackBoxMap.from_affine(base)
    rng = np.random.default_rng(seed)
    m = base.dim
    if model == "affine":
        scale = epsilon / (2.0 * m * sup_radius(domain))
        for _ in range(max_resample):
            linear = base.linear + rng.uniform(-scale, scale, (m, m))
            shift = base.shift + rng.uniform(-epsilon / 2.0, epsilon / 2.0, m)
            try:
                return BlackBoxMap.from_affine(AffineMap(linear, shift))
            except SingularMapError:
                continue
        raise SingularMapError("perturbation stayed singular", epsilon=epsilon, attempts=max_resample)
    if model == "bump":
        region = domain if domain is not None else Box(np.ones(m))
        center = region.sample(1, rng)[0]
        radius = 0.5 * float(np.min(region.bounding_halfwidths))
        direction = rng.standard_normal(m)
        amplitude = epsilon / max(BUMP_MAX, BUMP_SLOPE_MAX / radius)
        return BumpPerturbedMap(base, center, radius, amplitude, direction)
    raise DomainError(f"unknown perturbation model {model!r}", model=model)


def perturb_family(family: MapFamily, epsilon: float, model: str, seed, domain: Optional[Region] = None) -> MapFamily:
    seeds = np.random.SeedSequence(seed).spawn(len(family)) if not isinstance(seed, list) else seed
    return MapFamily(
        [(label, perturb(f, epsilon, model, s, domain)) for (label, f), s in zip(family, seeds)]
    )


class FamilySequence:
    """
    Per-step families F_1, F_2, ... realized lazily and memoized.

    Family ``step`` is a pure function of (base, epsilon, model, seed, step): member i
    is perturbed with ``SeedSequence([seed, step, i])``. With epsilon 0 every step is
    the base family itself.
    """

    def __init__(
        self,
        base: MapFamily,
        epsilon: float = 0.0,
        model: str = "affine",
        seed: int = 0,
        domain: Optional[Region] = None,
    ):
        self.base = base
        self.epsilon = float(epsilon)
        self.model = model
        self.seed = int(seed)
        self.domain = domain
        self._realized: Dict[int, MapFamily] = {}
        self._lock = threading.Lock()

    @property
    def is_constant(self) -> bool:
        return self.epsilon == 0.0

    @property
    def dim(self) -> int:
        return self.base.dim

    def family(self, step: int) -> MapFamily:
        if self.is_constant:
            return self.base
        with self._lock:
            found = self._realized.get(step)
            if found is None:
                seeds = [np.random.SeedSequence([self.seed, step, i]) for i in range(len(self.base))]
                found = perturb_family(self.base, self.epsilon, self.model, seeds, self.domain)
                self._realized[step] = found
            return found

    def realized_steps(self) -> List[int]:
        return sorted(self._realized)

    def to_dict(self) -> dict:
        return {
            "base": self.base.to_dict(),
            "epsilon": self.epsilon,
            "model": self.model,
            "seed": self.seed,
            "domain": self.domain.to_dict() if self.domain is not None else None,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FamilySequence":
        domain = region_from_dict(data["domain"]) if data.get("domain") else None
        return cls(MapFamily.from_dict(data["base"]), data["epsilon"], data["model"], data["seed"], domain)

    def __repr__(self):
        return f"<FamilySequence(labels={self.base.labels}, epsilon={self.epsilon}, seed={self.seed})>"
