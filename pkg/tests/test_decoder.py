import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from convpc.config import DESK, PAPER
from convpc.decoder import Decoder, StyleVector, allocate_points, inference_uv, parse_decoder
from convpc.gradcheck import grad_check
from convpc import ops
from convpc.tensor import Tensor, no_grad

from oracles import largest_remainder


def _decoder(arch=DESK, seed=0, **kw):
    return Decoder(arch, np.random.default_rng(seed), **kw)


# -- style vector and mapping ---------------------------------------------------------

def test_style_vector_slicing():
    w = Tensor(np.arange(2 * (3 + 2), dtype=float)[None])
    sv = StyleVector(w, [3, 2])
    s0, t0 = sv.site(0)
    s1, t1 = sv.site(1)
    assert s0.data.tolist() == [[0, 1, 2]] and t0.data.tolist() == [[3, 4, 5]]
    assert s1.data.tolist() == [[6, 7]] and t1.data.tolist() == [[8, 9]]
    with pytest.raises(ValueError):
        StyleVector(w, [3, 3])


def test_paper_style_width():
    dec = _decoder(PAPER)
    assert dec.mapping.weight.shape == (3072, 1024)
    w = dec.style(Tensor(np.zeros((1, 1024))))
    assert w.w.shape == (1, 3072) and w.site_dims == [512, 512, 512]


def test_zero_mapping_weights_give_bias():
    dec = _decoder()
    dec.mapping.weight.data[:] = 0
    dec.mapping.bias.data[:] = np.random.default_rng(1).normal(size=dec.mapping.bias.shape)
    z = np.random.default_rng(2).normal(size=(3, 128))
    w = dec.style(Tensor(z)).w.data
    assert np.array_equal(w, np.tile(dec.mapping.bias.data, (3, 1)))


def test_mapping_starts_as_identity_normalization():
    dec = _decoder()
    s, t = dec.style(Tensor(np.zeros((1, 128)))).site(1)
    assert np.all(s.data == 1) and np.all(t.data == 0)


def test_gradient_through_mapping_into_adain_site():
    dec = _decoder(dataclasses.replace(DESK, p_channels=4, decoder="P-C4-U-C4-C30"), seed=3)
    rng = np.random.default_rng(4)
    x = rng.normal(size=(2, 4, 2, 2, 2))

    def fn(z, w, b):
        style = StyleVector(ops.dense(z, w, b), dec.style(Tensor(np.zeros((1, 128)))).site_dims)
        s, t = style.site(0)
        return ops.instance_norm_adain(Tensor(x), s, t)

    z = rng.normal(size=(2, 128))
    w = rng.normal(size=dec.mapping.weight.shape) * 0.1
    b = rng.normal(size=dec.mapping.bias.shape)
    report = grad_check(fn, [z, w, b], tolerance=1e-5, seed=5, name="mapping")
    assert report.passed, report.line()


# -- feature grid ------------------------------------------------------------------------

def test_parse_decoder():
    assert parse_decoder("P-C4-U-C2") == [("P", 0), ("C", 4), ("U", 0), ("C", 2)]
    with pytest.raises(ValueError):
        parse_decoder("C4-P")


def test_desk_grid_shape():
    dec = _decoder().eval()
    with no_grad():
        grid = dec.decode_grid(Tensor(np.random.default_rng(0).normal(size=(2, 128))))
    assert grid.shape == (2, 30, 8, 8, 8)


@pytest.mark.slow
def test_paper_grid_shape():
    dec = _decoder(PAPER).eval()
    with no_grad():
        grid = dec.decode_grid(Tensor(np.random.default_rng(0).normal(size=(1, 1024))))
    assert grid.shape == (1, 62, 32, 32, 32)


def test_z_enters_only_through_style():
    dec = _decoder().eval()
    dec.mapping.weight.data[:] = 0
    z1, z2 = (np.random.default_rng(s).normal(size=(1, 128)) for s in (1, 2))
    with no_grad():
        a = dec.decode_grid(Tensor(z1)).data
        b = dec.decode_grid(Tensor(z2)).data
    assert np.array_equal(a, b)


def test_no_affine_sites_grid_independent_of_z():
    dec = _decoder(dataclasses.replace(DESK, affine_sites=0)).eval()
    assert dec.mapping is None
    with no_grad():
        a = dec.decode_grid(Tensor(np.random.default_rng(1).normal(size=(1, 128)))).data
        b = dec.decode_grid(Tensor(np.random.default_rng(2).normal(size=(1, 128)))).data
    assert np.array_equal(a, b)


def test_without_adain_latent_replaces_block():
    dec = _decoder(adain=False).eval()
    assert not hasattr(dec, "block") and dec.seed_layer.weight.shape == (64 * 8, 128)
    with no_grad():
        a = dec.decode_grid(Tensor(np.random.default_rng(1).normal(size=(1, 128)))).data
        b = dec.decode_grid(Tensor(np.random.default_rng(2).normal(size=(1, 128)))).data
    assert a.shape == (1, 30, 8, 8, 8) and not np.array_equal(a, b)


def test_information_path_gradients_nonzero():
    dec = _decoder()
    z = Tensor(np.random.default_rng(0).normal(size=(2, 128)), requires_grad=True)
    grid = dec.decode_grid(z, np.random.default_rng(1))
    (grid * Tensor(np.random.default_rng(2).normal(size=grid.shape))).sum().backward()
    for p in (z, dec.block, dec.mapping.weight, dec.mapping.bias):
        assert np.abs(p.grad).max() > 0


# -- heads -------------------------------------------------------------------------------

def test_heads_layout():
    dec = _decoder(PAPER)
    assert [l.weight.shape for l in dec.heads.layers] == [(16, 62), (8, 16), (4, 8), (2, 4)]
    assert [n is not None for n in dec.heads.norms] == [True, True, True, False]
    assert [l.weight.shape for l in dec.generator.layers][0] == (64, 64)


def test_sigmoid_limits():
    p = ops.sigmoid(np.array([0.0, 40.0, -40.0, 800.0, -800.0]))
    assert p[0] == 0.5 and p[1] > 1 - 1e-15 and p[2] < 1e-15 and p[3] == 1.0 and p[4] == 0.0


# -- allocation --------------------------------------------------------------------------

def test_allocation_examples():
    prob = np.array([0.1, 0.9, 0.2])
    assert allocate_points(prob, [1.0, 0.5, 2.0], 7).tolist() == [0, 7, 0]
    assert allocate_points([0.9, 0.9], [1.0, 3.0], 8).tolist() == [2, 6]


def test_allocation_fallbacks():
    assert allocate_points([0.1, 0.2, 0.3], [0.5, 2.0, 1.0], 9).tolist() == [0, 9, 0]
    assert allocate_points([0.9, 0.9], [-1.0, -2.0], 4).tolist() == [4, 0]
    with pytest.raises(ValueError):
        allocate_points([0.9], [1.0], 0)


def test_allocation_ties_go_to_lower_index():
    assert allocate_points([0.9] * 3, [1.0, 1.0, 1.0], 4).tolist() == [2, 1, 1]


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 5000), st.integers(1, 200))
def test_allocation_matches_exact_apportionment(seed, n, cells):
    rng = np.random.default_rng(seed)
    prob = rng.random(cells)
    density = rng.normal(size=cells)
    counts = allocate_points(prob, density, n)
    assert counts.sum() == n and np.all(counts >= 0)
    weights = np.where(prob > 0.5, np.maximum(density, 0), 0)
    if weights.sum() > 0:
        assert np.array_equal(counts, largest_remainder(weights, n))


# -- generation --------------------------------------------------------------------------

def _feats(rows, width=30, seed=0):
    return Tensor(np.random.default_rng(seed).normal(size=(rows, width)))


def test_generation_empty_and_repeated():
    dec = _decoder().eval()
    with no_grad():
        assert dec.generate(_feats(0), np.zeros((0, 2)), np.zeros((0, 3)), 0.125).shape == (0, 3)
        f = Tensor(np.tile(_feats(1).data, (5, 1)))
        pts = dec.generate(f, np.tile([[0.3, 0.7]], (5, 1)), np.zeros((5, 3)), 0.125).data
    assert np.all(pts == pts[0])
    with pytest.raises(ValueError):
        dec.generate(_feats(3), np.zeros((2, 2)), np.zeros((3, 3)), 0.125)


def test_generation_continuity():
    dec = _decoder(seed=7).eval()
    rng = np.random.default_rng(8)
    uv = rng.random((50, 2))
    f = _feats(50, seed=9)
    with no_grad():
        a = dec.generate(f, uv, np.zeros((50, 3)), 1.0).data
        b = dec.generate(f, uv + 1e-6, np.zeros((50, 3)), 1.0).data
    assert np.abs(a - b).max() < 1e-3


def test_points_are_offsets_from_centers_in_cell_units():
    dec = _decoder().eval()
    uv, f = np.full((1, 2), 0.5), _feats(1)
    c = np.array([[0.1, -0.2, 0.3]])
    with no_grad():
        a = dec.generate(f, uv, c, 0.125).data
        b = dec.generate(f, uv, np.zeros((1, 3)), 1.0).data
    assert np.allclose(a, c + 0.125 * b)


def test_inference_uv_cached_and_relaxed():
    a, b = inference_uv(7), inference_uv(7)
    assert a.samples is b.samples and a.mode == "lloyd"
    assert np.allclose(inference_uv(1).samples, [[0.5, 0.5]])


# -- end-to-end decoding -------------------------------------------------------------------

@pytest.fixture(scope="module")
def desk_decoder():
    return _decoder(seed=11).eval()


@pytest.mark.parametrize("n", [1, 100, 500, 2500, 15000])
def test_decode_exact_point_counts(desk_decoder, n):
    z = Tensor(np.random.default_rng(12).normal(size=(1, 128)))
    with no_grad():
        res = desk_decoder(z, n, uv_mode="lloyd")
    assert res.points.shape == (n, 3) and res.counts.sum() == n
    assert np.all(np.isfinite(res.points.data))


def test_decode_deterministic(desk_decoder):
    z = Tensor(np.random.default_rng(13).normal(size=(2, 128)))
    with no_grad():
        a = desk_decoder(z, 300, np.random.default_rng(5), uv_mode="random")
        b = desk_decoder(z, 300, np.random.default_rng(5), uv_mode="random")
    assert np.array_equal(a.points.data, b.points.data)
    assert list(a.splits) == [0, 300, 600]


def test_decode_bookkeeping(desk_decoder):
    z = Tensor(np.random.default_rng(14).normal(size=(2, 128)))
    with no_grad():
        res = desk_decoder(z, 64, uv_mode="lloyd")
    assert res.logits.shape == (2, 8, 8, 8) and res.density.shape == (2, 8, 8, 8)
    for b in range(2):
        rows = res.rows[res.splits[b] : res.splits[b + 1]]
        assert np.all(rows // 512 == b)
        assert np.array_equal(np.bincount(rows % 512, minlength=512), res.counts[b])


def test_unknown_uv_mode(desk_decoder):
    with pytest.raises(ValueError):
        desk_decoder(Tensor(np.zeros((1, 128))), 10, uv_mode="grid")
