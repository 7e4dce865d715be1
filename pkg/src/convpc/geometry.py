"""Point-cloud and mesh utilities."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree


class GeometryError(ValueError):
    pass


@dataclass
class Mesh:
    vertices: np.ndarray  # (V, 3)
    triangles: np.ndarray  # (T, 3) int

    def __post_init__(self):
        self.vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.triangles = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        if len(self.triangles) and (self.triangles.min() < 0 or self.triangles.max() >= len(self.vertices)):
            raise GeometryError("triangle index out of range")

    def triangle_areas(self) -> np.ndarray:
        a, b, c = (self.vertices[self.triangles[:, i]] for i in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)


@dataclass
class Denorm:
    """Maps unit-cube coordinates back to raw ones: ``raw = p * scale + offset``."""

    scale: float
    offset: np.ndarray

    def apply(self, points: np.ndarray) -> np.ndarray:
        return points * self.scale + self.offset


@dataclass
class PointCloud:
    points: np.ndarray
    frame: str = "raw"
    denorm: Denorm | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if self.frame not in ("raw", "unit_cube"):
            raise GeometryError(f"unknown frame {self.frame!r}")
        if (self.denorm is not None) != (self.frame == "unit_cube"):
            raise GeometryError("denorm must be present exactly for unit_cube clouds")

    def __len__(self) -> int:
        return len(self.points)

    def raw_points(self) -> np.ndarray:
        return self.denorm.apply(self.points) if self.denorm is not None else self.points


@dataclass
class UVSampleSet:
    samples: np.ndarray  # (m, 2) in [0, 1]^2
    mode: str = "random"


def load_mesh(path) -> Mesh:
    """Read an ASCII OBJ file. Polygons are fan-triangulated."""
    vertices, faces = [], []
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise GeometryError(f"cannot read {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        try:
            if parts[0] == "v":
                vertices.append([float(v) for v in parts[1:4]])
            elif parts[0] == "f":
                # "f 1/2/3 4//5 -1": keep the vertex index, resolve negatives
                idx = []
                for token in parts[1:]:
                    i = int(token.split("/")[0])
                    idx.append(i - 1 if i > 0 else len(vertices) + i)
                for k in range(1, len(idx) - 1):
                    faces.append([idx[0], idx[k], idx[k + 1]])
        except (ValueError, IndexError) as exc:
            raise GeometryError(f"{path}:{lineno}: cannot parse {line!r}") from exc
    if not vertices or not faces:
        raise GeometryError(f"{path}: no triangle geometry")
    return Mesh(np.array(vertices), np.array(faces))


def sample_surface_uniform(mesh: Mesh, count: int, seed: int = 0) -> PointCloud:
    """Area-weighted uniform sampling of the mesh surface."""
    if count < 1:
        raise GeometryError("count must be >= 1")
    areas = mesh.triangle_areas()
    total = areas.sum()
    if not total > 0:
        raise GeometryError("mesh has zero surface area")
    rng = np.random.default_rng(seed)
    tri = rng.choice(len(areas), size=count, p=areas / total)
    u, v = rng.random(count), rng.random(count)
    flip = u + v > 1.0
    u[flip], v[flip] = 1.0 - u[flip], 1.0 - v[flip]
    a, b, c = (mesh.vertices[mesh.triangles[tri, i]] for i in range(3))
    pts = a + u[:, None] * (b - a) + v[:, None] * (c - a)
    return PointCloud(pts, meta={"triangle": tri})


def farthest_point_indices(points: np.ndarray, k: int, seed: int = 0, start: int | None = None) -> np.ndarray:
    """Greedy farthest point sampling; returns indices in selection order.

    The first index is drawn from ``seed`` unless ``start`` is given. Ties
    in the max-min distance go to the lowest index.
    """
    n = len(points)
    if k > n:
        raise GeometryError(f"cannot pick {k} points out of {n}")
    if k <= 0:
        return np.zeros(0, dtype=np.int64)
    if start is None:
        start = int(np.random.default_rng(seed).integers(n))
    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = start
    mind = np.sum((points - points[start]) ** 2, axis=1)
    for i in range(1, k):
        nxt = int(np.argmax(mind))
        chosen[i] = nxt
        np.minimum(mind, np.sum((points - points[nxt]) ** 2, axis=1), out=mind)
    return chosen


def farthest_point_sample(pc: PointCloud, k: int, seed: int = 0) -> PointCloud:
    idx = farthest_point_indices(pc.points, k, seed)
    return PointCloud(pc.points[idx], pc.frame, pc.denorm, meta={"source_index": idx})


def normalize_unit_cube(pc: PointCloud) -> PointCloud:
    """Center the bounding box at the origin and scale its longest edge to 1."""
    pts = pc.raw_points()
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    longest = float((hi - lo).max())
    if not longest > 0:
        raise GeometryError("degenerate bounding box: all points coincide")
    center = 0.5 * (lo + hi)
    normed = (pts - center) / longest
    np.clip(normed, -0.5, 0.5, out=normed)
    return PointCloud(normed, "unit_cube", Denorm(longest, center), dict(pc.meta))


class NearestNeighborIndex:
    """Exact nearest-neighbor queries backed by a KD-tree.

    Distance ties resolve to the lowest point index.
    """

    def __init__(self, points: np.ndarray):
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if len(points) == 0:
            raise GeometryError("cannot index an empty cloud")
        self.points = points
        self.tree = cKDTree(points)

    def query(self, queries: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        q = np.asarray(queries, dtype=np.float64).reshape(-1, 3)
        n = len(self.points)
        k = min(4, n)
        _, idx = self.tree.query(q, k=k)
        idx = idx.reshape(len(q), k)
        # exact recomputation so ties are decided on identical arithmetic
        cand = np.sqrt(np.sum((self.points[idx] - q[:, None, :]) ** 2, axis=2))
        best_d = cand.min(axis=1)
        tied = cand == best_d[:, None]
        best_i = np.where(tied, idx, n).min(axis=1)
        # every candidate tied: more equidistant points may lie beyond k
        full = tied.all(axis=1) & (k < n)
        for r in np.flatnonzero(full):
            ball = np.array(self.tree.query_ball_point(q[r], best_d[r] * (1 + 1e-12) + 1e-300))
            d = np.sqrt(np.sum((self.points[ball] - q[r]) ** 2, axis=1))
            best_d[r] = d.min()
            best_i[r] = ball[d == d.min()].min()
        return best_i.astype(np.int64), best_d


def nn_index_build(pc: PointCloud | np.ndarray) -> NearestNeighborIndex:
    return NearestNeighborIndex(pc.points if isinstance(pc, PointCloud) else pc)


def nn_query(index: NearestNeighborIndex, q) -> tuple[int, float]:
    i, d = index.query(np.asarray(q).reshape(1, 3))
    return int(i[0]), float(d[0])


def probe_raster(resolution: int) -> np.ndarray:
    ticks = (np.arange(resolution) + 0.5) / resolution
    gx, gy = np.meshgrid(ticks, ticks, indexing="ij")
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def quantization_energy(samples: np.ndarray, resolution: int = 128) -> float:
    probes = probe_raster(resolution)
    d, _ = cKDTree(samples).query(probes)
    return float(np.mean(d**2))


def lloyd_relax_2d(uv: UVSampleSet, iterations: int = 10, resolution: int = 128) -> UVSampleSet:
    """Discrete Lloyd relaxation on a fixed raster of probe points."""
    samples = np.array(uv.samples, dtype=np.float64).reshape(-1, 2)
    if len(samples) == 0:
        raise GeometryError("Lloyd relaxation needs at least one sample")
    probes = probe_raster(resolution)
    m = len(samples)
    for _ in range(iterations):
        _, owner = cKDTree(samples).query(probes)
        counts = np.bincount(owner, minlength=m)
        sums = np.zeros((m, 2))
        np.add.at(sums, owner, probes)
        filled = counts > 0
        samples[filled] = sums[filled] / counts[filled, None]
    return UVSampleSet(samples, "lloyd")


def random_uv(count: int, rng: np.random.Generator) -> UVSampleSet:
    return UVSampleSet(rng.random((count, 2)), "random")
