"""Convolutional AdaIN decoder and per-cell point generation."""

from __future__ import annotations

import functools
from dataclasses import dataclass

import numpy as np

from . import ops
from .config import ArchPreset
from .encoder import cell_centers
from .geometry import UVSampleSet, lloyd_relax_2d
from .layers import MLP, BatchNorm, Conv3d, Dense, Module, param
from .tensor import Tensor, concat

HEAD_INIT_SCALE = 1e-2
GENERATOR_INIT_SCALE = 0.1


@dataclass
class StyleVector:
    """Concatenated ``(s_i, t_i)`` pairs, one pair per affine normalization site."""

    w: Tensor  # [B, sum(2 * d_i)]
    site_dims: list[int]

    def __post_init__(self):
        if self.w.shape[-1] != 2 * sum(self.site_dims):
            raise ValueError(f"style vector width {self.w.shape[-1]} != {2 * sum(self.site_dims)}")

    def site(self, k: int) -> tuple[Tensor, Tensor]:
        start = 2 * sum(self.site_dims[:k])
        d = self.site_dims[k]
        return self.w[:, start : start + d], self.w[:, start + d : start + 2 * d]

    def __len__(self) -> int:
        return len(self.site_dims)


def parse_decoder(arch: str) -> list[tuple[str, int]]:
    layout = []
    for i, tok in enumerate(arch.split("-")):
        if tok == "P":
            if i != 0:
                raise ValueError("P must open the decoder string")
            layout.append(("P", 0))
        elif tok == "U":
            layout.append(("U", 0))
        elif tok.startswith("C"):
            layout.append(("C", int(tok[1:])))
        else:
            raise ValueError(f"unknown decoder token {tok!r}")
    return layout


def allocate_points(prob, density, n: int, threshold: float = 0.5) -> np.ndarray:
    """Split ``n`` points over cells in proportion to the clamped density of filled cells.

    Filled cells have ``prob > threshold``. Integer counts come from
    largest-remainder rounding (ties to the lower cell index). With no filled
    cell or zero total weight everything goes to the argmax-density cell.
    """
    prob = np.asarray(prob, dtype=np.float64).ravel()
    density = np.asarray(density, dtype=np.float64).ravel()
    if n < 1:
        raise ValueError("need at least one point")
    counts = np.zeros(len(density), dtype=np.int64)
    weights = np.where(prob > threshold, np.maximum(density, 0.0), 0.0)
    total = weights.sum()
    if not total > 0:
        counts[int(np.argmax(density))] = n
        return counts
    quota = n * weights / total
    counts[:] = np.floor(quota).astype(np.int64)
    left = n - int(counts.sum())
    if left > 0:
        frac = quota - counts
        order = np.argsort(-frac, kind="stable")
        counts[order[:left]] += 1
    return counts


@functools.lru_cache(maxsize=4096)
def _lloyd_samples(m: int, iterations: int, resolution: int, seed: int) -> np.ndarray:
    rng = np.random.default_rng([seed, m])
    uv = lloyd_relax_2d(UVSampleSet(rng.random((m, 2))), iterations, resolution).samples
    uv.setflags(write=False)
    return uv


def inference_uv(m: int, iterations: int = 10, resolution: int = 128, seed: int = 0) -> UVSampleSet:
    """Fixed, Lloyd-relaxed UV set for ``m`` samples (cached per ``m``)."""
    return UVSampleSet(_lloyd_samples(m, iterations, resolution, seed), "lloyd")


@dataclass
class DecodeResult:
    points: Tensor  # [N_total, 3], shapes stacked
    splits: np.ndarray  # shape b owns points[splits[b]:splits[b+1]]
    rows: np.ndarray  # generating cell (batch-major linear index) of every point
    centers: np.ndarray  # [N_total, 3] generating cell centers
    logits: Tensor  # [B, G, G, G]
    density: Tensor  # [B, G, G, G]
    counts: np.ndarray  # [B, G^3]
    cell_width: float

    def shape_points(self, b: int) -> Tensor:
        return self.points[self.splits[b] : self.splits[b + 1]]

    def shape_centers(self, b: int) -> np.ndarray:
        return self.centers[self.splits[b] : self.splits[b + 1]]


class Decoder(Module):
    def __init__(self, arch: ArchPreset, rng: np.random.Generator, adain: bool = True):
        self.arch = arch
        self.adain = adain
        self.layout = parse_decoder(arch.decoder)
        site_dims = arch.site_dims
        p = arch.p_channels

        if adain:
            self.block = param(0.02 * rng.standard_normal((p, 2, 2, 2)))
            affine = site_dims[: arch.affine_sites]
            if affine:
                self.mapping = Dense(arch.latent, 2 * sum(affine), rng, bias=True)
                bias = np.zeros(2 * sum(affine))
                start = 0
                for d in affine:
                    bias[start : start + d] = 1.0  # scales start at one
                    start += 2 * d
                self.mapping.bias.data[:] = bias
            else:
                self.mapping = None
            self.site_norms = []
        else:
            # baseline: z is reshaped into the seed block, normalization is plain batchnorm
            self.seed_layer = Dense(arch.latent, p * 8, rng, bias=True)
            self.site_norms = [BatchNorm(d) for d in site_dims]

        self.convs = []
        prev = p
        for kind, width in self.layout:
            if kind == "C":
                self.convs.append(Conv3d(prev, width, rng, kernel=3))
                prev = width
        width = arch.feature_width
        self.heads = MLP(width, list(arch.heads), rng, norm=True)
        self.generator = MLP(2 + width, list(arch.generator), rng)
        # Small output layers: densities start at uniform and points start inside
        # their cells. Large initial errors would otherwise pin AMSGrad's running
        # maximum of squared gradients and stall the shared trunk for good.
        last = self.heads.layers[-1]
        last.weight.data *= HEAD_INIT_SCALE
        last.bias.data[:] = [0.0, 1.0]
        self.generator.layers[-1].weight.data *= GENERATOR_INIT_SCALE

    # -- latent to feature grid -------------------------------------------
    def style(self, z: Tensor) -> StyleVector | None:
        if not self.adain or self.mapping is None:
            return None
        dims = self.arch.site_dims[: self.arch.affine_sites]
        return StyleVector(self.mapping(z), dims)

    def _site(self, x: Tensor, k: int, style: StyleVector | None) -> Tensor:
        if not self.adain:
            return self.site_norms[k](x)
        if style is not None and k < len(style):
            s, t = style.site(k)
            return ops.instance_norm_adain(x, s, t)
        return ops.instance_norm_adain(x, batched=True)

    def _dropout(self, x: Tensor, rng) -> Tensor:
        return ops.dropout(x, self.arch.dropout, self.training, rng)

    def decode_grid(self, z: Tensor, rng: np.random.Generator | None = None, style: StyleVector | None = None) -> Tensor:
        """Feature grid ``[B, C_final, G, G, G]`` for latents ``z`` of shape ``[B, latent]``."""
        batch = z.shape[0]
        if self.training and rng is None:
            rng = np.random.default_rng(0)
        if self.adain:
            if style is None:
                style = self.style(z)
            block = self.block.reshape((1,) + self.block.shape)
            x = block * Tensor(np.ones((batch, 1, 1, 1, 1)))
        else:
            x = self.seed_layer(z).reshape(batch, self.arch.p_channels, 2, 2, 2)
        x = ops.elu(self._site(self._dropout(x, rng), 0, style))
        site = 1
        conv = 0
        for kind, _ in self.layout[1:]:
            if kind == "U":
                x = ops.upsample_trilinear(x)
                continue
            x = self.convs[conv](x)
            conv += 1
            x = ops.elu(self._site(self._dropout(x, rng), site, style))
            site += 1
        return x

    # -- grid to points ---------------------------------------------------
    def cell_heads(self, feats: Tensor) -> tuple[Tensor, Tensor]:
        """Occupancy logits and raw densities for rows of cell features ``[N, C]``.

        The density output is read in units of the uniform density ``1/G^3``;
        a fixed linear rescale that keeps optimizer steps commensurate with
        the size of the targets.
        """
        out = self.heads(feats)
        return out[:, 0], out[:, 1] * (1.0 / self.arch.grid**3)

    def generate(self, feats: Tensor, uv: np.ndarray, centers: np.ndarray, cell_width: float) -> Tensor:
        """Map ``[uv; f_c]`` rows to points ``c_o + h * MLP([uv; f_c])``."""
        if feats.shape[0] != len(uv):
            raise ValueError(f"{len(uv)} uv samples for {feats.shape[0]} feature rows")
        offsets = self.generator(concat([Tensor(uv), feats], axis=1))
        return Tensor(centers) + offsets * cell_width

    def decode_points(
        self,
        grid: Tensor,
        n: int,
        rng: np.random.Generator | None = None,
        uv_mode: str = "random",
        threshold: float = 0.5,
        lloyd_iterations: int = 10,
        lloyd_resolution: int = 128,
        uv_seed: int = 0,
    ) -> DecodeResult:
        batch, channels, g = grid.shape[0], grid.shape[1], grid.shape[2]
        cells = g**3
        h = 1.0 / g
        centers_all = cell_centers(g)
        feats = grid.transpose(0, 2, 3, 4, 1).reshape(batch * cells, channels)
        logits, density = self.cell_heads(feats)
        prob = ops.sigmoid(logits.data)

        counts = np.stack([
            allocate_points(prob[b * cells : (b + 1) * cells], density.data[b * cells : (b + 1) * cells], n, threshold)
            for b in range(batch)
        ])
        rows = np.repeat(np.arange(batch * cells), counts.ravel())
        if uv_mode == "random":
            if rng is None:
                rng = np.random.default_rng(uv_seed)
            uv = rng.random((len(rows), 2))
        elif uv_mode == "lloyd":
            flat = counts.ravel()
            uv = np.concatenate(
                [inference_uv(int(m), lloyd_iterations, lloyd_resolution, uv_seed).samples for m in flat[flat > 0]]
            )
        else:
            raise ValueError(f"unknown uv mode {uv_mode!r}")

        centers = centers_all[rows % cells]
        points = self.generate(feats[rows], uv, centers, h)
        splits = np.concatenate([[0], np.cumsum(counts.sum(axis=1))])
        return DecodeResult(
            points, splits, rows, centers,
            logits.reshape(batch, g, g, g), density.reshape(batch, g, g, g),
            counts, h,
        )

    def forward(self, z: Tensor, n: int, rng=None, **kwargs) -> DecodeResult:
        return self.decode_points(self.decode_grid(z, rng), n, rng, **kwargs)
