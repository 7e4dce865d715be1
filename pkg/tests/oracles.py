"""Slow, obviously-correct reference implementations used only by the tests."""

from __future__ import annotations

import itertools

import numpy as np


def conv3d_loops(x, w, padding):
    """Direct cross-correlation with explicit loops; x [C_in, D, H, W], w [C_out, C_in, k, k, k]."""
    c_in, d, h, wd = x.shape
    c_out, _, k, _, _ = w.shape
    xp = np.pad(x, ((0, 0),) + ((padding, padding),) * 3)
    od, oh, ow = d + 2 * padding - k + 1, h + 2 * padding - k + 1, wd + 2 * padding - k + 1
    out = np.zeros((c_out, od, oh, ow))
    for o, i, j, l in itertools.product(range(c_out), range(od), range(oh), range(ow)):
        out[o, i, j, l] = np.sum(xp[:, i : i + k, j : j + k, l : l + k] * w[o])
    return out


def maxpool_loops(x):
    c, d, h, w = x.shape
    out = np.zeros((c, d // 2, h // 2, w // 2))
    for ch, i, j, l in itertools.product(range(c), range(d // 2), range(h // 2), range(w // 2)):
        out[ch, i, j, l] = x[ch, 2 * i : 2 * i + 2, 2 * j : 2 * j + 2, 2 * l : 2 * l + 2].max()
    return out


def upsample_1d_formula(v):
    """Half-pixel linear x2 resampling of a 1-D signal, evaluated sample by sample."""
    n = len(v)
    out = np.zeros(2 * n)
    for i in range(2 * n):
        src = min(max((i + 0.5) / 2 - 0.5, 0.0), n - 1)
        lo = int(np.floor(src))
        hi = min(lo + 1, n - 1)
        f = src - lo
        out[i] = (1 - f) * v[lo] + f * v[hi]
    return out


def upsample_trilinear_loops(x):
    """Trilinear as three successive 1-D passes along D, H, W."""
    out = x
    for axis in (1, 2, 3):
        out = np.apply_along_axis(upsample_1d_formula, axis, out)
    return out


def nn_brute(points, queries):
    """Nearest point index (lowest index on ties) and distance by full scan."""
    idx = np.empty(len(queries), dtype=np.int64)
    dist = np.empty(len(queries))
    for i, q in enumerate(queries):
        d = np.sqrt(np.sum((points - q) ** 2, axis=1))
        j = int(np.flatnonzero(d == d.min())[0])
        idx[i], dist[i] = j, d[j]
    return idx, dist


def chamfer_brute(x, y):
    value = 0.0
    for a in x:
        value += min(float(np.sum((a - b) ** 2)) for b in y) / len(x)
    for b in y:
        value += min(float(np.sum((a - b) ** 2)) for a in x) / len(y)
    return value


def chamfer_grad_brute(x, y):
    grad = np.zeros_like(y)
    for a in x:
        j = int(np.argmin([np.sum((a - b) ** 2) for b in y]))
        grad[j] += 2 * (y[j] - a) / len(x)
    for j, b in enumerate(y):
        i = int(np.argmin([np.sum((a - b) ** 2) for a in x]))
        grad[j] += 2 * (b - x[i]) / len(y)
    return grad


def p_chamfer_brute(x, y, p):
    dxy = [min(np.linalg.norm(a - b) for b in y) for a in x]
    dyx = [min(np.linalg.norm(a - b) for a in x) for b in y]
    return sum(d**p for d in dxy) ** (1 / p) / len(x) + sum(d**p for d in dyx) ** (1 / p) / len(y)


def largest_remainder(weights, n):
    """Reference apportionment using exact fractions."""
    from fractions import Fraction

    w = [Fraction(float(v)) for v in weights]
    total = sum(w)
    quotas = [n * v / total for v in w]
    counts = [int(q) for q in quotas]
    left = n - sum(counts)
    order = sorted(range(len(w)), key=lambda i: (-(quotas[i] - counts[i]), i))
    for i in order[:left]:
        counts[i] += 1
    return np.array(counts)


def min_pairwise(points):
    d = np.sqrt(np.sum((points[:, None] - points[None]) ** 2, axis=2))
    d[np.diag_indices(len(points))] = np.inf
    return d.min()


def pairwise_distances(x, y):
    """Full O(nm) distance matrix from explicit coordinate differences."""
    diff = x[:, None, :] - y[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=2))


def chamfer_matrix(x, y):
    d = pairwise_distances(x, y)
    return float(np.mean(d.min(axis=1) ** 2) + np.mean(d.min(axis=0) ** 2))


def p_chamfer_matrix(x, y, p):
    d = pairwise_distances(x, y)
    a, b = d.min(axis=1), d.min(axis=0)
    return float(np.sum(a**p) ** (1 / p) / len(x) + np.sum(b**p) ** (1 / p) / len(y))
