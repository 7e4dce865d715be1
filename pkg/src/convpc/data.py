"""Synthetic shapes for desk-scale experiments and dataset files on disk."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import (
    PointCloud,
    farthest_point_indices,
    load_mesh,
    normalize_unit_cube,
    sample_surface_uniform,
)
from .io import read_cloud, write_ply

KINDS = ("sphere", "cube", "torus", "cylinder")
TORUS_MAJOR = 0.35
TORUS_MINOR = 0.15


def sample_sphere(n: int, rng: np.random.Generator, radius: float = 0.5) -> np.ndarray:
    v = rng.standard_normal((n, 3))
    return radius * v / np.linalg.norm(v, axis=1, keepdims=True)


def sample_cube(n: int, rng: np.random.Generator, half: float = 0.5) -> np.ndarray:
    face = rng.integers(6, size=n)
    uv = rng.uniform(-half, half, size=(n, 2))
    pts = np.empty((n, 3))
    axis = face // 2
    sign = np.where(face % 2 == 0, -half, half)
    for a in range(3):
        rows = axis == a
        others = [i for i in range(3) if i != a]
        pts[rows, a] = sign[rows]
        pts[np.ix_(rows, others)] = uv[rows]
    return pts


def sample_torus(n: int, rng: np.random.Generator, major: float = TORUS_MAJOR, minor: float = TORUS_MINOR) -> np.ndarray:
    """Area-uniform torus samples; the minor angle is drawn by rejection."""
    u = rng.uniform(0, 2 * np.pi, size=n)
    v = np.empty(n)
    filled = 0
    while filled < n:
        cand = rng.uniform(0, 2 * np.pi, size=2 * (n - filled))
        accept = rng.random(len(cand)) < (major + minor * np.cos(cand)) / (major + minor)
        take = cand[accept][: n - filled]
        v[filled : filled + len(take)] = take
        filled += len(take)
    ring = major + minor * np.cos(v)
    return np.stack([ring * np.cos(u), ring * np.sin(u), minor * np.sin(v)], axis=1)


def sample_cylinder(n: int, rng: np.random.Generator, radius: float = 0.5, height: float = 1.0) -> np.ndarray:
    """Closed cylinder along z; side and caps chosen in proportion to their areas."""
    side = 2 * np.pi * radius * height
    cap = np.pi * radius**2
    part = rng.choice(3, size=n, p=np.array([side, cap, cap]) / (side + 2 * cap))
    theta = rng.uniform(0, 2 * np.pi, size=n)
    r = np.where(part == 0, radius, radius * np.sqrt(rng.random(n)))
    z = np.where(part == 0, rng.uniform(-height / 2, height / 2, size=n),
                 np.where(part == 1, -height / 2, height / 2))
    return np.stack([r * np.cos(theta), r * np.sin(theta), z], axis=1)


SAMPLERS = {"sphere": sample_sphere, "cube": sample_cube, "torus": sample_torus, "cylinder": sample_cylinder}


@dataclass
class Shape:
    """One training shape: raw dense reference, raw target and the unit-cube target."""

    name: str
    reference: np.ndarray
    target: PointCloud  # unit-cube frame, denorm recovers raw coordinates

    @property
    def points(self) -> np.ndarray:
        return self.target.points

    @property
    def reference_normalized(self) -> np.ndarray:
        d = self.target.denorm
        return (self.reference - d.offset) / d.scale


def subsample(reference: np.ndarray, n: int, mode: str, seed: int) -> np.ndarray:
    if mode == "fps":
        return reference[farthest_point_indices(reference, n, seed=seed)]
    if mode == "random":
        return reference[np.random.default_rng(seed).choice(len(reference), n, replace=False)]
    raise ValueError(f"unknown sampling mode {mode!r}")


def make_shape(name: str, reference: np.ndarray, n: int, mode: str, seed: int) -> Shape:
    target = subsample(reference, n, mode, seed)
    return Shape(name, reference, normalize_unit_cube(PointCloud(target)))


def make_synthetic_dataset(
    kind: str,
    count: int,
    points: int,
    seed: int = 0,
    reference_points: int = 16000,
    sampling: str = "fps",
) -> list[Shape]:
    """Analytic shapes with a random per-axis scale in [0.5, 1]."""
    if kind != "mixed" and kind not in SAMPLERS:
        raise ValueError(f"unknown synthetic kind {kind!r}")
    rng = np.random.default_rng(seed)
    shapes = []
    for i in range(count):
        k = KINDS[i % len(KINDS)] if kind == "mixed" else kind
        scale = rng.uniform(0.5, 1.0, size=3)
        raw = SAMPLERS[k](reference_points, rng) * scale
        shapes.append(make_shape(f"{k}_{i:03d}", raw, points, sampling, int(rng.integers(2**31))))
    return shapes


def mesh_reference(path, oversample: int = 80000, keep: int = 16000, seed: int = 0) -> np.ndarray:
    """Uniformly oversample a mesh, then keep a farthest-point subset."""
    dense = sample_surface_uniform(load_mesh(path), oversample, seed).points
    return dense[farthest_point_indices(dense, min(keep, len(dense)), seed=seed)]


def save_dataset(shapes: list[Shape], directory) -> None:
    """One ``<name>.ply`` (raw target) and ``<name>_ref.ply`` (raw reference) per shape."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    lines = []
    for s in shapes:
        write_ply(s.target.raw_points(), out / f"{s.name}.ply")
        write_ply(s.reference, out / f"{s.name}_ref.ply")
        lines.append(s.name)
    (out / "manifest.txt").write_text("\n".join(lines) + "\n")


def load_dataset(directory, points: int | None = None, sampling: str = "fps", seed: int = 0) -> list[Shape]:
    """Read shapes from a directory.

    With a ``manifest.txt`` the stored targets and references are used
    directly. Otherwise every ``.obj`` mesh and every point cloud file is
    treated as a dense reference and subsampled to ``points``.
    """
    root = Path(directory)
    if not root.is_dir():
        raise FileNotFoundError(f"{root} is not a directory")
    manifest = root / "manifest.txt"
    shapes = []
    if manifest.exists():
        for name in manifest.read_text().split():
            target = read_cloud(root / f"{name}.ply")
            ref_path = root / f"{name}_ref.ply"
            reference = read_cloud(ref_path) if ref_path.exists() else target
            shapes.append(Shape(name, reference, normalize_unit_cube(PointCloud(target))))
        return shapes
    files = sorted(p for p in root.iterdir() if p.suffix.lower() in (".obj", ".ply", ".xyz"))
    for i, path in enumerate(files):
        ref = mesh_reference(path, seed=seed + i) if path.suffix.lower() == ".obj" else read_cloud(path)
        n = points if points is not None else len(ref)
        shapes.append(make_shape(path.stem, ref, min(n, len(ref)), sampling, seed + i))
    if not shapes:
        raise FileNotFoundError(f"no shapes found in {root}")
    return shapes
