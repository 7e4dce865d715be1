"""Finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import NonFiniteError, Tensor


@dataclass
class GradCheckReport:
    name: str
    max_abs_error: float
    max_rel_error: float
    tolerance: float
    passed: bool

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (
            f"{status}\t{self.name}\tabs={self.max_abs_error:.3e}\t"
            f"rel={self.max_rel_error:.3e}\ttol={self.tolerance:.0e}"
        )


def grad_check(
    fn: Callable[..., Tensor],
    inputs: Sequence[np.ndarray],
    tolerance: float = 1e-5,
    seed: int = 0,
    name: str = "op",
    step: float = 1e-4,
) -> GradCheckReport:
    """Compare reverse-mode gradients of ``fn`` against central differences.

    The scalar under test is ``sum(R * fn(*inputs))`` for a fixed random
    weighting ``R``. Each coordinate is perturbed by ``step * max(1, |x|)``.
    The relative error of an input is the largest absolute deviation divided
    by the largest gradient magnitude of that input (analytic or numeric).
    """
    # separate stream so the weighting never coincides with inputs drawn from ``seed``
    rng = np.random.default_rng((seed, 0x5EED))
    arrays = [np.array(a, dtype=np.float64) for a in inputs]
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = fn(*tensors)
    weights = rng.standard_normal(out.shape)
    (out * Tensor(weights)).sum().backward()
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]

    def scalar(vals):
        y = fn(*[Tensor(v) for v in vals]).data
        if not np.all(np.isfinite(y)):
            raise NonFiniteError(f"{name}: non-finite output during finite differences")
        return float(np.sum(weights * y))

    max_abs = 0.0
    max_rel = 0.0
    for k, base in enumerate(arrays):
        numeric = np.zeros_like(base)
        flat = numeric.reshape(-1)
        for i in range(base.size):
            h = step * max(1.0, abs(base.flat[i]))
            plus = [a.copy() for a in arrays]
            minus = [a.copy() for a in arrays]
            plus[k].flat[i] += h
            minus[k].flat[i] -= h
            flat[i] = (scalar(plus) - scalar(minus)) / (2.0 * h)
        err = np.abs(numeric - analytic[k])
        scale = max(np.abs(numeric).max(initial=0.0), np.abs(analytic[k]).max(initial=0.0), 1e-12)
        max_abs = max(max_abs, float(err.max(initial=0.0)))
        max_rel = max(max_rel, float(err.max(initial=0.0) / scale))
    return GradCheckReport(name, max_abs, max_rel, tolerance, max_rel <= tolerance)
