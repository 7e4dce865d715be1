"""Grid-based point-cloud encoder: per-cell PointNet followed by a 3-D CNN."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import ops
from .config import ArchPreset
from .geometry import farthest_point_indices
from .layers import MLP, BatchNorm, Conv3d, Module
from .tensor import Tensor


def cell_centers(resolution: int) -> np.ndarray:
    """Centers of all cells in linear order (x slowest, z fastest), shape ``(G^3, 3)``."""
    h = 1.0 / resolution
    ticks = -0.5 + (np.arange(resolution) + 0.5) * h
    g = np.stack(np.meshgrid(ticks, ticks, ticks, indexing="ij"), axis=-1)
    return g.reshape(-1, 3)


@dataclass
class CellNeighborhoods:
    """Point/cell incidence of one cloud.

    ``cell[k]`` and ``point[k]`` name the k-th (cell, point) pair and
    ``local[k]`` is the point's offset from the cell center divided by the
    gather radius.
    """

    resolution: int
    cell: np.ndarray
    point: np.ndarray
    local: np.ndarray

    def cell_points(self, linear_index: int) -> np.ndarray:
        return self.local[self.cell == linear_index]


def gather_cell_neighborhoods(
    points: np.ndarray,
    resolution: int,
    radius_cells: float = math.sqrt(3.0) / 2.0,
    cap: int | None = 64,
    seed: int = 0,
) -> CellNeighborhoods:
    """Collect, for every cell, the points within ``radius_cells`` cell widths of its center.

    The boundary is inclusive (up to a 1e-9 relative slack). Cells holding
    more than ``cap`` points keep a farthest-point subset of ``cap``.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    g = resolution
    h = 1.0 / g
    radius = radius_cells * h
    span = int(math.floor(radius_cells + 0.5))
    home = np.clip(np.floor((pts + 0.5) * g).astype(np.int64), 0, g - 1)
    rng = np.arange(-span, span + 1)
    shifts = np.stack(np.meshgrid(rng, rng, rng, indexing="ij"), axis=-1).reshape(-1, 3)

    cand = home[:, None, :] + shifts[None, :, :]  # (N, S, 3)
    inside = np.all((cand >= 0) & (cand < g), axis=2)
    centers = -0.5 + (cand + 0.5) * h
    offset = pts[:, None, :] - centers
    dist = np.sqrt(np.sum(offset**2, axis=2))
    keep = inside & (dist <= radius * (1.0 + 1e-9))
    pi, si = np.nonzero(keep)
    lin = np.ravel_multi_index(cand[pi, si].T, (g, g, g))
    local = offset[pi, si] / radius

    order = np.lexsort((pi, lin))
    lin, pi, local = lin[order], pi[order], local[order]

    if cap is not None:
        counts = np.bincount(lin, minlength=g**3)
        if counts.max(initial=0) > cap:
            keep_mask = np.ones(len(lin), dtype=bool)
            starts = np.concatenate([[0], np.cumsum(counts)])
            for c in np.flatnonzero(counts > cap):
                a, b = starts[c], starts[c + 1]
                chosen = farthest_point_indices(local[a:b], cap, seed=seed + int(c))
                mask = np.zeros(b - a, dtype=bool)
                mask[chosen] = True
                keep_mask[a:b] = mask
            lin, pi, local = lin[keep_mask], pi[keep_mask], local[keep_mask]

    return CellNeighborhoods(g, lin, pi, local)


class PointNet(Module):
    """Shared per-point MLP (bias-free dense + batchnorm, ELU between) with mean pooling per cell."""

    def __init__(self, widths, rng: np.random.Generator):
        self.mlp = MLP(3, list(widths), rng, norm=True, norm_last=True, bias=False)
        self.width = widths[-1]

    def forward(self, local: Tensor, segments: np.ndarray, num_segments: int) -> Tensor:
        if local.shape[0] == 0:
            return Tensor(np.zeros((num_segments, self.width)))
        feats = self.mlp(local)
        return ops.segment_mean(feats, segments, num_segments)


def pointnet_cell(points: np.ndarray, net: PointNet) -> Tensor:
    """Feature of a single cell from its local offsets; an empty cell gives zeros."""
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    if len(pts) == 0:
        return Tensor(np.zeros(net.width))
    out = net(Tensor(pts), np.zeros(len(pts), dtype=np.int64), 1)
    return out.reshape(net.width)


def parse_encoder(arch: str) -> list[tuple[str, int]]:
    tokens = arch.split("-")
    layers = []
    for i, tok in enumerate(tokens):
        if tok == "MP":
            layers.append(("pool", 0))
        elif tok.startswith("C"):
            kind = "conv2" if i == len(tokens) - 1 else "conv3"
            layers.append((kind, int(tok[1:])))
        else:
            raise ValueError(f"unknown encoder token {tok!r}")
    return layers


class VoxelCNN(Module):
    """3-D CNN reducing a G^3 feature grid to a latent vector; batchnorm and ELU follow every convolution."""

    def __init__(self, arch: str, in_channels: int, grid: int, rng: np.random.Generator):
        self.layout = parse_encoder(arch)
        pools = sum(1 for kind, _ in self.layout if kind == "pool")
        if grid < 4 or grid & (grid - 1) or pools != int(math.log2(grid)) - 1:
            raise ValueError(
                f"grid {grid} needs log2(G) - 1 = {int(math.log2(max(grid, 1))) - 1} pooling stages, arch has {pools}"
            )
        self.convs = []
        self.norms = []
        prev = in_channels
        for kind, width in self.layout:
            if kind == "pool":
                continue
            self.convs.append(Conv3d(prev, width, rng, kernel=2 if kind == "conv2" else 3))
            self.norms.append(BatchNorm(width))
            prev = width
        self.latent = prev

    def forward(self, grid: Tensor) -> Tensor:
        x = grid
        k = 0
        for kind, _ in self.layout:
            if kind == "pool":
                x = ops.maxpool3d(x)
                continue
            x = ops.elu(self.norms[k](self.convs[k](x)))
            k += 1
        return x.reshape(x.shape[0], self.latent)


class Encoder(Module):
    def __init__(self, arch: ArchPreset, rng: np.random.Generator):
        self.arch = arch
        self.pointnet = PointNet(arch.pointnet, rng)
        if arch.pointnet[-1] != arch.eta:
            raise ValueError("last PointNet width must equal the cell feature width eta")
        self.cnn = VoxelCNN(arch.encoder, arch.eta, arch.grid, rng)

    def embed(self, clouds: list[np.ndarray], seed: int = 0) -> Tensor:
        """Voxel feature grid ``[B, eta, G, G, G]`` for a batch of unit-cube clouds."""
        g = self.arch.grid
        cells = g**3
        locals_, segs = [], []
        for b, pts in enumerate(clouds):
            nb = gather_cell_neighborhoods(pts, g, self.arch.gather_radius, self.arch.cell_cap, seed)
            locals_.append(nb.local)
            segs.append(nb.cell + b * cells)
        local = Tensor(np.concatenate(locals_))
        feats = self.pointnet(local, np.concatenate(segs), len(clouds) * cells)
        return feats.reshape(len(clouds), g, g, g, self.arch.eta).transpose(0, 4, 1, 2, 3)

    def forward(self, clouds: list[np.ndarray], seed: int = 0) -> Tensor:
        return self.cnn(self.embed(clouds, seed))
