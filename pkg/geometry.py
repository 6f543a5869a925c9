"""
Euclidean primitives: balls, boxes, grids, point clouds and the grid oracles
(covering, Lebesgue radius, density) that the certificates are built on.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, List, Optional, Sequence, Union

import numpy as np
from scipy.spatial import KDTree

from errors import CoveringError, DimensionMismatchError, EmptyCloudError, check_dimension

logger = logging.getLogger(__name__)

# A piece of a cover answers membership for a batch of points: (N, m) -> bool (N,)
Piece = Callable[[np.ndarray], np.ndarray]

MAX_CHUNK = 2 ** 20
RADIUS_SCHEDULE = 40


def as_points(points, dim: Optional[int] = None) -> np.ndarray:
    """Coerce a point or a sequence of points into an (N, m) float array"""
    arr = np.asarray(points, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1) if arr.size else arr.reshape(0, dim or 0)
    if arr.ndim != 2:
        raise DimensionMismatchError("points must be a vector or an (N, m) array", shape=list(arr.shape))
    if dim is not None and arr.shape[0] > 0:
        check_dimension(dim, arr.shape[1], "point cloud")
    return arr


def as_vector(x, dim: Optional[int] = None) -> np.ndarray:
    vec = np.asarray(x, dtype=float).reshape(-1)
    if dim is not None:
        check_dimension(dim, vec.size, "vector")
    if vec.size < 1 or not np.all(np.isfinite(vec)):
        raise DimensionMismatchError("vector must be nonempty and finite", value=vec.tolist())
    return vec


@dataclass(frozen=True, eq=False)
class Ball:
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", as_vector(self.center))
        object.__setattr__(self, "radius", float(self.radius))
        if not self.radius > 0:
            raise DimensionMismatchError("ball radius must be positive", radius=self.radius)

    @property
    def dim(self) -> int:
        return self.center.size

    @property
    def diameter(self) -> float:
        return 2.0 * self.radius

    @property
    def bounding_halfwidths(self) -> np.ndarray:
        return np.full(self.dim, self.radius)

    def contains(self, points, margin: float = 0.0, closed: bool = True) -> np.ndarray:
        pts = as_points(points, self.dim)
        dist = np.linalg.norm(pts - self.center, axis=1)
        if closed:
            return dist <= self.radius - margin
        return dist < self.radius - margin

    def circumscribed_ball(self) -> "Ball":
        return self

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        direction = rng.standard_normal((n, self.dim))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        radii = self.radius * rng.random(n) ** (1.0 / self.dim)
        return self.center + direction * radii[:, None]

    def boundary_sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        direction = rng.standard_normal((n, self.dim))
        direction /= np.linalg.norm(direction, axis=1, keepdims=True)
        return self.center + self.radius * direction

    def scaled(self, factor: float) -> "Ball":
        return Ball(self.center * factor, self.radius * abs(factor))

    def to_dict(self) -> dict:
        return {"kind": "ball", "center": self.center.tolist(), "radius": self.radius}

    def __repr__(self):
        return f"<Ball(center={self.center.tolist()}, radius={self.radius})>"


@dataclass(frozen=True, eq=False)
class Box:
    halfwidths: np.ndarray
    center: Optional[np.ndarray] = None

    def __post_init__(self):
        hw = as_vector(self.halfwidths)
        if np.any(hw <= 0):
            raise DimensionMismatchError("box halfwidths must be positive", halfwidths=hw.tolist())
        object.__setattr__(self, "halfwidths", hw)
        center = np.zeros_like(hw) if self.center is None else as_vector(self.center, hw.size)
        object.__setattr__(self, "center", center)

    @property
    def dim(self) -> int:
        return self.halfwidths.size

    @property
    def diameter(self) -> float:
        return 2.0 * float(np.linalg.norm(self.halfwidths))

    @property
    def bounding_halfwidths(self) -> np.ndarray:
        return self.halfwidths

    def contains(self, points, margin: float = 0.0, closed: bool = True) -> np.ndarray:
        pts = as_points(points, self.dim)
        offset = np.abs(pts - self.center)
        if closed:
            return np.all(offset <= self.halfwidths - margin, axis=1)
        return np.all(offset < self.halfwidths - margin, axis=1)

    def corners(self) -> np.ndarray:
        signs = np.array(np.meshgrid(*[[-1.0, 1.0]] * self.dim, indexing="ij")).reshape(self.dim, -1).T
        return self.center + signs * self.halfwidths

    def circumscribed_ball(self) -> Ball:
        return Ball(self.center, float(np.linalg.norm(self.halfwidths)))

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.center + self.halfwidths * rng.uniform(-1.0, 1.0, (n, self.dim))

    def boundary_sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        pts = self.sample(n, rng)
        axis = rng.integers(0, self.dim, n)
        side = rng.choice([-1.0, 1.0], n)
        pts[np.arange(n), axis] = self.center[axis] + side * self.halfwidths[axis]
        return pts

    def scaled(self, factor: float) -> "Box":
        return Box(self.halfwidths * abs(factor), self.center * factor)

    def to_dict(self) -> dict:
        return {"kind": "box", "center": self.center.tolist(), "halfwidths": self.halfwidths.tolist()}

    def __repr__(self):
        return f"<Box(center={self.center.tolist()}, halfwidths={self.halfwidths.tolist()})>"


Region = Union[Box, Ball]


def region_from_dict(data: dict) -> Region:
    kind = data.get("kind")
    if kind == "box":
        return Box(data["halfwidths"], data.get("center"))
    if kind == "ball":
        return Ball(data["center"], data["radius"])
    raise DimensionMismatchError(f"unknown region kind {kind!r}", kind=kind)


def sample_region(region: Region, n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform interior sample, with the box corners (or boundary points) appended"""
    pts = region.sample(n, rng)
    if isinstance(region, Box):
        extra = region.corners()
    else:
        extra = region.boundary_sample(2 * region.dim, rng)
    return np.vstack([pts, extra])


def enclosing_ball(points) -> Ball:
    """Ball centered at the mean of the cloud with the largest distance as radius"""
    pts = as_points(points)
    if pts.shape[0] == 0:
        raise EmptyCloudError("cannot enclose an empty cloud")
    center = pts.mean(axis=0)
    radius = float(np.max(np.linalg.norm(pts - center, axis=1)))
    return Ball(center, max(radius, np.finfo(float).tiny))


def default_spacing(dim: int) -> float:
    return 0.01 if dim <= 3 else 0.05


class Grid:
    """
    Lattice of spacing ``h`` restricted to a box or a ball.

    Every point of the domain lies within ``h*sqrt(m)/2`` of a grid point. Ball grids
    add the radial projections of lattice points just outside the sphere so that the
    boundary is represented too. Points are produced in chunks along the first axis.
    """

    def __init__(self, domain: Region, spacing: float, max_chunk: int = MAX_CHUNK):
        if not spacing > 0:
            raise DimensionMismatchError("grid spacing must be positive", spacing=spacing)
        self.domain = domain
        self.spacing = float(spacing)
        self.max_chunk = max_chunk
        hw = domain.bounding_halfwidths
        self.axes = [
            np.linspace(c - w, c + w, int(math.ceil(2.0 * w / self.spacing - 1e-9)) + 1)
            for c, w in zip(domain.center, hw)
        ]

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def resolution(self) -> float:
        return self.spacing * math.sqrt(self.dim) / 2.0

    def _lattice_chunks(self) -> Iterator[np.ndarray]:
        rest = int(np.prod([len(a) for a in self.axes[1:]])) if self.dim > 1 else 1
        rows = max(1, self.max_chunk // max(rest, 1))
        first = self.axes[0]
        for start in range(0, len(first), rows):
            mesh = np.meshgrid(first[start:start + rows], *self.axes[1:], indexing="ij")
            yield np.stack([m.reshape(-1) for m in mesh], axis=1)

    def chunks(self) -> Iterator[np.ndarray]:
        if isinstance(self.domain, Box):
            yield from self._lattice_chunks()
            return
        center, radius = self.domain.center, self.domain.radius
        shell = self.spacing * math.sqrt(self.dim)
        for pts in self._lattice_chunks():
            dist = np.linalg.norm(pts - center, axis=1)
            inside = pts[dist <= radius]
            near = (dist > radius) & (dist <= radius + shell)
            projected = center + (pts[near] - center) * (radius / dist[near])[:, None]
            chunk = np.vstack([inside, projected])
            if chunk.shape[0]:
                yield chunk

    def points(self) -> np.ndarray:
        parts = list(self.chunks())
        if not parts:
            return np.empty((0, self.dim))
        return np.vstack(parts)

    def __repr__(self):
        return f"<Grid(domain={self.domain!r}, spacing={self.spacing})>"


def as_grid(region: Region, grid: Union["Grid", float, None]) -> Grid:
    if isinstance(grid, Grid):
        return grid
    return Grid(region, grid if grid is not None else default_spacing(region.dim))


def _region_chunks(region: Region, grid: Grid) -> Iterator[np.ndarray]:
    for chunk in grid.chunks():
        if grid.domain is not region:
            chunk = chunk[region.contains(chunk)]
        if chunk.shape[0]:
            yield chunk


def sort_lexicographic(points: np.ndarray) -> np.ndarray:
    if points.shape[0] == 0:
        return points
    return points[np.lexsort(points.T[::-1])]


def directed_distance(A, B) -> float:
    """sup over a in A of the distance from a to B"""
    A = as_points(A)
    B = as_points(B)
    if A.shape[0] == 0 or B.shape[0] == 0:
        raise EmptyCloudError("directed distance needs two nonempty clouds", sizes=[A.shape[0], B.shape[0]])
    check_dimension(A.shape[1], B.shape[1], "point cloud")
    dist, _ = KDTree(B).query(A)
    return float(np.max(dist))


def hausdorff_distance(A, B) -> float:
    return max(directed_distance(A, B), directed_distance(B, A))


@dataclass
class CoveringResult:
    covered: bool
    spacing: float
    n_points: int
    n_uncovered: int
    witnesses: np.ndarray = field(repr=False)

    def __bool__(self):
        return self.covered

    def summary(self, max_witnesses: int = 20) -> dict:
        return {
            "covered": self.covered,
            "spacing": self.spacing,
            "n_points": self.n_points,
            "n_uncovered": self.n_uncovered,
            "witnesses": self.witnesses[:max_witnesses].tolist(),
        }


def covering_test(
    region: Region,
    pieces: Sequence[Piece],
    grid: Union[Grid, float, None] = None,
    max_witnesses: Optional[int] = None,
) -> CoveringResult:
    """Check that every grid point of ``region`` lies in at least one piece"""
    grid = as_grid(region, grid)
    total = 0
    uncovered: List[np.ndarray] = []
    n_uncovered = 0
    for chunk in _region_chunks(region, grid):
        total += chunk.shape[0]
        hit = np.zeros(chunk.shape[0], dtype=bool)
        for piece in pieces:
            todo = ~hit
            if not todo.any():
                break
            hit[todo] = piece(chunk[todo])
        missed = chunk[~hit]
        n_uncovered += missed.shape[0]
        if missed.shape[0] and (max_witnesses is None or sum(len(u) for u in uncovered) < max_witnesses):
            uncovered.append(missed)
    witnesses = sort_lexicographic(np.vstack(uncovered)) if uncovered else np.empty((0, region.dim))
    if max_witnesses is not None:
        witnesses = witnesses[:max_witnesses]
    logger.debug("Covering test on %r: %d/%d grid points uncovered", region, n_uncovered, total)
    return CoveringResult(
        covered=n_uncovered == 0,
        spacing=grid.spacing,
        n_points=total,
        n_uncovered=n_uncovered,
        witnesses=witnesses,
    )


def lebesgue_number(region: Region, pieces: Sequence[Piece], grid: Union[Grid, float, None] = None) -> float:
    """
    Grid estimate of the Lebesgue number of the cover restricted to ``region``.

    For each grid point x and piece P the distance from x to the nearest region grid
    point outside P is measured; the point's value is the best piece and the result is
    the worst point. A piece containing the whole region gives ``inf``.
    """
    parts = list(_region_chunks(region, as_grid(region, grid)))
    if not parts:
        return math.inf
    pts = np.vstack(parts)
    best = np.zeros(pts.shape[0])
    for piece in pieces:
        inside = np.asarray(piece(pts), dtype=bool)
        outside = pts[~inside]
        if outside.shape[0] == 0:
            return math.inf
        dist, _ = KDTree(outside).query(pts)
        np.maximum(best, dist, out=best)
    return float(best.min())


def radius_below(raw: float, diameter: float) -> float:
    """Largest diameter*2^-j (j = 0..40) strictly below ``raw``, capped at ``diameter``"""
    if math.isinf(raw):
        return diameter
    for j in range(RADIUS_SCHEDULE + 1):
        rho = diameter * 2.0 ** -j
        if rho < raw:
            return rho
    return 0.0


def lebesgue_radius(region: Region, pieces: Sequence[Piece], grid: Union[Grid, float, None] = None) -> float:
    grid = as_grid(region, grid)
    cover = covering_test(region, pieces, grid, max_witnesses=100)
    if not cover.covered:
        raise CoveringError(
            "pieces do not cover the region",
            n_uncovered=cover.n_uncovered,
            witnesses=cover.witnesses.tolist(),
            spacing=grid.spacing,
        )
    raw = lebesgue_number(region, pieces, grid)
    rho = radius_below(raw, region.diameter)
    logger.info("Lebesgue number %.6g on %r, scheduled radius %.6g", raw, region, rho)
    return rho


def density_radius(points, region: Region, grid: Union[Grid, float, None] = None) -> float:
    """Largest distance from a grid point of ``region`` to the cloud"""
    cloud = as_points(points)
    if cloud.shape[0] == 0:
        raise EmptyCloudError("density of an empty cloud is undefined")
    check_dimension(region.dim, cloud.shape[1], "point cloud")
    tree = KDTree(cloud)
    worst = 0.0
    for chunk in _region_chunks(region, as_grid(region, grid)):
        dist, _ = tree.query(chunk)
        worst = max(worst, float(dist.max()))
    return worst


def write_cloud_csv(path: str, points) -> None:
    pts = as_points(points)
    header = ",".join(f"x{i + 1}" for i in range(pts.shape[1]))
    np.savetxt(path, pts, delimiter=",", fmt="%.17g", header=header, comments="")


def read_cloud_csv(path: str) -> np.ndarray:
    with open(path) as fh:
        header = fh.readline().strip()
    dim = len(header.split(","))
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return data.reshape(-1, dim)
