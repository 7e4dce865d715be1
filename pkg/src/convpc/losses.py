"""Reconstruction and cell-supervision losses.

Every loss has a numpy form returning ``(value, gradient)`` and a `Tensor`
form (``*_t``) that plugs the same gradient into the reverse-mode graph.
Nearest-neighbor assignments are held fixed during differentiation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import NearestNeighborIndex
from .ops import sigmoid
from .tensor import Tensor, make_op

SQRT3 = float(np.sqrt(3.0))


@dataclass
class LossWeights:
    chamfer: float = 1e3
    pnorm: float = 1e1
    density: float = 1e10
    occupancy: float = 1e2
    offset: float = 1.0
    p: float = 5.0

    def as_dict(self) -> dict[str, float]:
        return {
            "chamfer": self.chamfer,
            "pnorm": self.pnorm,
            "density": self.density,
            "occupancy": self.occupancy,
            "offset": self.offset,
        }


@dataclass
class CellGroundTruth:
    occupancy: np.ndarray  # (G, G, G) in {0, 1}
    density: np.ndarray  # (G, G, G), sums to 1


def _as_points(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64).reshape(-1, 3)
    if len(a) == 0:
        raise ValueError("point cloud is empty")
    return a


def _nearest(src: np.ndarray, dst: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """For every point of ``src`` the index of (and distance to) its nearest ``dst`` point."""
    return NearestNeighborIndex(dst).query(src)


def chamfer(x, y) -> tuple[float, np.ndarray]:
    """Squared Chamfer distance and its gradient with respect to ``y``."""
    x, y = _as_points(x), _as_points(y)
    n, m = len(x), len(y)
    nn_xy, d_xy = _nearest(x, y)
    nn_yx, d_yx = _nearest(y, x)
    value = float(np.sum(d_xy**2) / n + np.sum(d_yx**2) / m)
    grad = 2.0 / m * (y - x[nn_yx])
    np.add.at(grad, nn_xy, 2.0 / n * (y[nn_xy] - x))
    return value, grad


def _pnorm_term(vec: np.ndarray, p: float, count: int) -> tuple[float, np.ndarray]:
    """``(1/count) * (sum |v|^p)^(1/p)`` and its gradient with respect to each ``v``."""
    d = np.sqrt(np.sum(vec**2, axis=1))
    total = float(np.sum(d**p))
    if total == 0.0:
        return 0.0, np.zeros_like(vec)
    root = total ** (1.0 / p)
    with np.errstate(divide="ignore", invalid="ignore"):
        w = np.where(d > 0, d ** (p - 2.0), 0.0)
    coef = root / total / count
    return root / count, coef * w[:, None] * vec


def p_chamfer(x, y, p: float = 5.0) -> tuple[float, np.ndarray]:
    """Sharpened Chamfer distance; the 1/n and 1/m factors sit outside the p-th roots."""
    if p < 1:
        raise ValueError("p must be >= 1")
    x, y = _as_points(x), _as_points(y)
    n, m = len(x), len(y)
    nn_xy, _ = _nearest(x, y)
    nn_yx, _ = _nearest(y, x)
    v1, g1 = _pnorm_term(y[nn_xy] - x, p, n)
    v2, g2 = _pnorm_term(y - x[nn_yx], p, m)
    grad = g2
    np.add.at(grad, nn_xy, g1)
    return v1 + v2, grad


def offset_penalty(points, centers, margin: float = SQRT3, cell_width: float = 1.0) -> tuple[float, np.ndarray]:
    """Hinge on each point's distance to its generating cell center, in cell widths."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    centers = np.asarray(centers, dtype=np.float64).reshape(-1, 3)
    rel = (points - centers) / cell_width
    dist = np.sqrt(np.sum(rel**2, axis=1))
    active = dist > margin
    value = float(np.sum(dist[active] - margin))
    grad = np.zeros_like(points)
    grad[active] = rel[active] / dist[active, None] / cell_width
    return value, grad


def density_mse(pred, target) -> tuple[float, np.ndarray]:
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"density grids differ: {pred.shape} vs {target.shape}")
    diff = pred - target
    return float(np.mean(diff**2)), 2.0 * diff / diff.size


def occupancy_bce_logits(logits, target) -> tuple[float, np.ndarray]:
    """Binary cross entropy averaged over cells, evaluated from logits."""
    logits = np.asarray(logits, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    softplus = np.maximum(logits, 0.0) + np.log1p(np.exp(-np.abs(logits)))
    value = float(np.mean(softplus - target * logits))
    return value, (sigmoid(logits) - target) / logits.size


def occupancy_bce(prob, target) -> tuple[float, np.ndarray]:
    """Binary cross entropy from probabilities (clamped to [1e-7, 1 - 1e-7])."""
    p = np.clip(np.asarray(prob, dtype=np.float64), 1e-7, 1.0 - 1e-7)
    t = np.asarray(target, dtype=np.float64)
    value = float(-np.mean(t * np.log(p) + (1.0 - t) * np.log(1.0 - p)))
    return value, (p - t) / (p * (1.0 - p)) / p.size


def ground_truth_cells(points, resolution: int) -> CellGroundTruth:
    """Histogram a unit-cube cloud into ``resolution``^3 cells.

    Cells are half-open except that the upper boundary of the last cell is
    closed, so a coordinate of exactly +0.5 lands in the last cell.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    idx = cell_index(pts, resolution)
    counts = np.bincount(
        np.ravel_multi_index(idx.T, (resolution,) * 3), minlength=resolution**3
    ).reshape((resolution,) * 3)
    density = counts / len(pts)
    return CellGroundTruth((counts > 0).astype(np.float64), density)


def cell_index(points: np.ndarray, resolution: int) -> np.ndarray:
    idx = np.floor((points + 0.5) * resolution).astype(np.int64)
    return np.clip(idx, 0, resolution - 1)


def total_loss(components: dict, weights: LossWeights, enabled: dict | None = None):
    """Weighted sum of ``{name: (value, grad)}`` components.

    Returns the total value and ``{name: weight * grad}``. Components marked
    disabled in ``enabled`` are left out.
    """
    lam = weights.as_dict()
    value = 0.0
    grads = {}
    for name, (v, g) in components.items():
        if enabled is not None and not enabled.get(name, True):
            continue
        value += lam[name] * v
        grads[name] = lam[name] * np.asarray(g)
    return value, grads


# -- Tensor forms -----------------------------------------------------------

def _scalar_op(value: float, grad: np.ndarray, parent: Tensor) -> Tensor:
    return make_op(np.asarray(value, dtype=parent.data.dtype), (parent,), lambda g: (g * grad,))


def chamfer_t(x: np.ndarray, y: Tensor) -> Tensor:
    return _scalar_op(*chamfer(x, y.data), y)


def p_chamfer_t(x: np.ndarray, y: Tensor, p: float = 5.0) -> Tensor:
    return _scalar_op(*p_chamfer(x, y.data, p), y)


def offset_penalty_t(y: Tensor, centers: np.ndarray, margin: float = SQRT3, cell_width: float = 1.0) -> Tensor:
    return _scalar_op(*offset_penalty(y.data, centers, margin, cell_width), y)


def density_mse_t(pred: Tensor, target: np.ndarray) -> Tensor:
    return _scalar_op(*density_mse(pred.data, target), pred)


def occupancy_bce_logits_t(logits: Tensor, target: np.ndarray) -> Tensor:
    return _scalar_op(*occupancy_bce_logits(logits.data, target), logits)
