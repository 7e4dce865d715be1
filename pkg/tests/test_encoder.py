import dataclasses
import math

import numpy as np
import pytest

from convpc.config import DESK, PAPER
from convpc.encoder import (
    Encoder,
    PointNet,
    VoxelCNN,
    cell_centers,
    gather_cell_neighborhoods,
    parse_encoder,
    pointnet_cell,
)
from convpc.gradcheck import grad_check
from convpc.layers import Module
from convpc.suite import module_fn
from convpc.tensor import Tensor, no_grad

TINY = dataclasses.replace(DESK, name="tiny", grid=4, eta=4, pointnet=(4, 4), encoder="C4-MP-C6")


def test_cell_centers_layout():
    c = cell_centers(2)
    assert c.shape == (8, 3)
    assert np.allclose(c[0], [-0.25, -0.25, -0.25]) and np.allclose(c[1], [-0.25, -0.25, 0.25])
    assert np.allclose(c[4], [0.25, -0.25, -0.25])


# -- neighborhoods --------------------------------------------------------------

def test_point_at_center_has_zero_local_coordinate():
    g = 4
    center = cell_centers(g)[37]
    nb = gather_cell_neighborhoods(center[None], g)
    assert np.allclose(nb.cell_points(37), [[0, 0, 0]])


def test_corner_point_gathered_by_all_adjacent_cells():
    g = 4
    nb = gather_cell_neighborhoods(np.zeros((1, 3)), g)
    # the origin is the shared corner of the eight central cells
    assert len(nb.cell) == 8
    assert np.allclose(np.linalg.norm(nb.local, axis=1), 1.0)


def test_every_point_seen_by_its_own_cell():
    rng = np.random.default_rng(0)
    pts = rng.uniform(-0.5, 0.5, (1000, 3))
    g = 8
    nb = gather_cell_neighborhoods(pts, g, cap=None)
    pairs = set(zip(nb.cell.tolist(), nb.point.tolist()))
    home = np.clip(np.floor((pts + 0.5) * g).astype(int), 0, g - 1)
    for i, h in enumerate(home):
        assert (int(np.ravel_multi_index(h, (g, g, g))), i) in pairs


def test_neighborhoods_match_brute_force():
    rng = np.random.default_rng(1)
    pts = rng.uniform(-0.5, 0.5, (300, 3))
    g = 4
    radius = math.sqrt(3) / 2 / g
    nb = gather_cell_neighborhoods(pts, g, cap=None)
    got = set(zip(nb.cell.tolist(), nb.point.tolist()))
    want = set()
    for c, center in enumerate(cell_centers(g)):
        for i in np.flatnonzero(np.linalg.norm(pts - center, axis=1) <= radius):
            want.add((c, int(i)))
    assert got == want
    assert np.all(np.linalg.norm(nb.local, axis=1) <= 1 + 1e-9)


def test_cap_limits_cell_population():
    pts = np.random.default_rng(2).uniform(0.01, 0.1, (500, 3))
    nb = gather_cell_neighborhoods(pts, 4, cap=64)
    assert np.bincount(nb.cell).max() == 64


# -- PointNet ---------------------------------------------------------------------

def _pointnet(seed=0):
    net = PointNet(DESK.pointnet, np.random.default_rng(seed))
    # give the batchnorm layers non-trivial inference statistics
    with no_grad():
        for _ in range(3):
            net(Tensor(np.random.default_rng(seed + 1).normal(size=(64, 3))), np.zeros(64, dtype=int), 1)
    return net.eval()


def test_pointnet_empty_cell_is_zero():
    out = pointnet_cell(np.zeros((0, 3)), _pointnet())
    assert out.shape == (16,) and np.all(out.data == 0)


def test_pointnet_permutation_and_duplication_invariance():
    net = _pointnet()
    pts = np.random.default_rng(3).uniform(-1, 1, (20, 3)) / 2
    base = pointnet_cell(pts, net).data
    perm = pointnet_cell(pts[np.random.default_rng(4).permutation(20)], net).data
    dup = pointnet_cell(np.concatenate([pts, pts]), net).data
    assert np.allclose(base, perm, atol=1e-14) and np.allclose(base, dup, atol=1e-14)


def test_pointnet_architecture_is_bias_free_with_norms():
    net = PointNet(PAPER.pointnet, np.random.default_rng(0))
    assert [l.weight.shape for l in net.mlp.layers] == [(8, 3), (16, 8), (32, 16), (32, 32)]
    assert all(l.bias is None for l in net.mlp.layers)
    assert all(n is not None for n in net.mlp.norms)


# -- CNN -----------------------------------------------------------------------------

def test_parse_encoder():
    assert parse_encoder("C4-MP-C6") == [("conv3", 4), ("pool", 0), ("conv2", 6)]
    with pytest.raises(ValueError):
        parse_encoder("C4-X-C6")


def test_stage_count_must_match_grid():
    with pytest.raises(ValueError):
        VoxelCNN("C4-MP-C6", 4, 8, np.random.default_rng(0))
    with pytest.raises(ValueError):
        VoxelCNN("C4-C6", 4, 6, np.random.default_rng(0))


def test_desk_cnn_shape_and_zero_grid():
    cnn = VoxelCNN(DESK.encoder, DESK.eta, DESK.grid, np.random.default_rng(0))
    out = cnn(Tensor(np.zeros((2, 16, 8, 8, 8))))
    assert out.shape == (2, 128) and np.all(np.isfinite(out.data))


def test_cnn_gradients_on_small_grid():
    cnn = VoxelCNN(TINY.encoder, TINY.eta, TINY.grid, np.random.default_rng(1))
    fn, params = module_fn(cnn)
    rng = np.random.default_rng(2)
    # random shifts keep ELU in its curved region; at beta = 0 the first shift
    # reaches the final batchnorm as a per-batch constant and has zero gradient
    params = [p + rng.normal(scale=0.5, size=p.shape) for p in params]
    x = rng.normal(size=(3, 4, 4, 4, 4))
    report = grad_check(fn, [x] + params, tolerance=1e-5, seed=3, name="cnn")
    assert report.passed, report.line()


class _FixedSegments(Module):
    def __init__(self, net, segments, count):
        self.net, self.segments, self.count = net, segments, count

    def forward(self, local):
        return self.net(local, self.segments, self.count)


def test_pointnet_gradients():
    net = PointNet((4, 4), np.random.default_rng(4))
    wrapped = _FixedSegments(net, np.array([0, 0, 1, 1, 1, 2, 2, 2, 2, 2]), 3)
    fn, params = module_fn(wrapped)
    x = np.random.default_rng(5).normal(size=(10, 3))
    report = grad_check(fn, [x] + params, seed=6, name="pointnet")
    assert report.passed, report.line()


# -- full encoder ------------------------------------------------------------------------

def _desk_encoder(seed=0):
    enc = Encoder(DESK, np.random.default_rng(seed))
    clouds = [np.random.default_rng(s).uniform(-0.5, 0.5, (200, 3)) for s in range(3)]
    with no_grad():
        enc(clouds)  # populate batchnorm running statistics
    return enc.eval()


def test_encoder_permutation_invariant_in_inference():
    enc = _desk_encoder()
    pts = np.random.default_rng(10).uniform(-0.5, 0.5, (300, 3))
    with no_grad():
        a = enc([pts]).data
        b = enc([pts[np.random.default_rng(11).permutation(300)]]).data
    assert a.shape == (1, 128) and np.all(np.isfinite(a))
    assert np.allclose(a, b, rtol=1e-10, atol=1e-12)


def test_encoder_accepts_any_point_count():
    enc = _desk_encoder()
    with no_grad():
        for n in (1, 7, 2000):
            z = enc([np.random.default_rng(n).uniform(-0.5, 0.5, (n, 3))]).data
            assert z.shape == (1, 128) and np.all(np.isfinite(z))


def test_encoder_distinguishes_octant_change():
    enc = _desk_encoder()
    rng = np.random.default_rng(12)
    a = rng.uniform(-0.5, 0.0, (300, 3))
    b = a.copy()
    b[:100] += 0.5  # move a third of the points into another octant
    with no_grad():
        za, zb = enc([a]).data, enc([b]).data
    assert np.abs(za - zb).max() > 1e-6


def test_encoder_parameters_receive_gradients():
    enc = Encoder(DESK, np.random.default_rng(0))
    clouds = [np.random.default_rng(s).uniform(-0.5, 0.5, (100, 3)) for s in range(2)]
    z = enc(clouds)
    (z * Tensor(np.random.default_rng(1).normal(size=z.shape))).sum().backward()
    for name, p in enc.named_parameters():
        assert p.grad is not None and np.abs(p.grad).max() > 0, name


@pytest.mark.slow
def test_paper_encoder_latent_width():
    enc = Encoder(PAPER, np.random.default_rng(0))
    with no_grad():
        z = enc([np.random.default_rng(1).uniform(-0.5, 0.5, (500, 3))] * 2)
    assert z.shape == (2, 1024)
