"""Encoder and decoder assembled into the autoencoder, plus the training objective."""

from __future__ import annotations

import numpy as np

from . import losses
from .config import ArchPreset
from .decoder import DecodeResult, Decoder
from .encoder import Encoder
from .layers import Module
from .tensor import Tensor, no_grad

TERMS = ("chamfer", "pnorm", "density", "occupancy", "offset")


class AutoEncoder(Module):
    def __init__(self, arch: ArchPreset, seed: int = 0, adain: bool = True):
        rng = np.random.default_rng(seed)
        self.arch = arch
        self.encoder = Encoder(arch, rng)
        self.decoder = Decoder(arch, rng, adain=adain)

    def encode(self, clouds: list[np.ndarray]) -> Tensor:
        return self.encoder(clouds)

    def forward(self, clouds: list[np.ndarray], n: int, rng=None, **kwargs) -> DecodeResult:
        return self.decoder(self.encode(clouds), n, rng, **kwargs)

    def reconstruct(
        self,
        clouds: list[np.ndarray],
        n: int,
        uv_mode: str = "lloyd",
        seed: int = 0,
        threshold: float = 0.5,
        lloyd_iterations: int = 10,
        lloyd_resolution: int = 128,
    ) -> list[np.ndarray]:
        """Inference-mode decoding of unit-cube clouds to ``n`` points each."""
        was_training = self.training
        self.eval()
        try:
            with no_grad():
                res = self.decoder(
                    self.encode(clouds), n, np.random.default_rng(seed),
                    uv_mode=uv_mode, threshold=threshold, uv_seed=seed,
                    lloyd_iterations=lloyd_iterations, lloyd_resolution=lloyd_resolution,
                )
        finally:
            self.train(was_training)
        return [res.shape_points(b).data.copy() for b in range(len(clouds))]


def batch_losses(
    result: DecodeResult,
    targets: list[np.ndarray],
    weights: losses.LossWeights,
    enabled: dict[str, bool] | None = None,
    offset_margin: float = losses.SQRT3,
) -> tuple[Tensor, dict[str, float]]:
    """Weighted training objective averaged over the batch.

    Returns the differentiable total and the unweighted value of every term.
    Disabled terms are still evaluated for logging but carry no gradient.
    """
    enabled = enabled or {}
    g = result.logits.shape[1]
    batch = len(targets)
    per_term: dict[str, list[Tensor]] = {t: [] for t in TERMS}
    for b, x in enumerate(targets):
        y = result.shape_points(b)
        gt = losses.ground_truth_cells(x, g)
        per_term["chamfer"].append(losses.chamfer_t(x, y))
        per_term["pnorm"].append(losses.p_chamfer_t(x, y, weights.p))
        per_term["offset"].append(
            losses.offset_penalty_t(y, result.shape_centers(b), offset_margin, result.cell_width)
        )
        per_term["density"].append(losses.density_mse_t(result.density[b], gt.density))
        per_term["occupancy"].append(losses.occupancy_bce_logits_t(result.logits[b], gt.occupancy))

    lam = weights.as_dict()
    total = None
    values = {}
    for name in TERMS:
        term = per_term[name][0]
        for t in per_term[name][1:]:
            term = term + t
        term = term * (1.0 / batch)
        values[name] = float(term.data)
        if enabled.get(name, True):
            total = term * lam[name] if total is None else total + term * lam[name]
    if total is None:
        total = Tensor(0.0)
    values["total"] = float(total.data)
    return total, values
