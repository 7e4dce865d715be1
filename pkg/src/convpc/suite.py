"""Named finite-difference checks covering every differentiable operator."""

from __future__ import annotations

import time
from typing import Callable

import numpy as np

from . import losses, ops
from .gradcheck import GradCheckReport, grad_check
from .layers import MLP, Module
from .tensor import Tensor

LINEAR_TOL = 1e-6
NONLINEAR_TOL = 1e-5
SEEDS = (0, 1, 2, 3, 4)

# builder(rng) -> (fn, inputs, tolerance)
Case = Callable[[np.random.Generator], tuple[Callable[..., Tensor], list[np.ndarray], float]]


def _spaced(rng, shape, gap=0.01):
    """Distinct values at least ``gap`` apart so a max never switches under perturbation."""
    n = int(np.prod(shape))
    return (rng.permutation(n) * gap + rng.uniform(0, 0.2 * gap, n)).reshape(shape) - 0.5 * n * gap


def _away_from_zero(rng, shape, gap=0.05):
    x = rng.standard_normal(shape)
    return np.where(np.abs(x) < gap, np.sign(x + 1e-12) * gap, x)


def _attr_path(module: Module, dotted: str):
    owner = module
    parts = dotted.split(".")
    for p in parts[:-1]:
        owner = owner[int(p)] if isinstance(owner, list) else getattr(owner, p)
    return owner, parts[-1]


def module_fn(module: Module) -> tuple[Callable[..., Tensor], list[np.ndarray]]:
    """Wrap ``module`` as ``fn(x, *params)`` so parameters become checked inputs."""
    named = list(module.named_parameters())
    slots = [_attr_path(module, name) for name, _ in named]

    def fn(x, *params):
        saved = [getattr(o, a) for o, a in slots]
        try:
            for (o, a), p in zip(slots, params):
                setattr(o, a, p)
            return module(x)
        finally:
            for (o, a), p in zip(slots, saved):
                setattr(o, a, p)

    return fn, [p.data.copy() for _, p in named]


def _dense(rng):
    return (lambda x, w, b: ops.dense(x, w, b),
            [rng.standard_normal((4, 5)), rng.standard_normal((3, 5)), rng.standard_normal(3)], LINEAR_TOL)


def _conv_k3(rng):
    return (lambda x, w: ops.conv3d(x, w, 1),
            [rng.standard_normal((2, 2, 4, 4, 4)), rng.standard_normal((3, 2, 3, 3, 3))], LINEAR_TOL)


def _conv_k2(rng):
    return (lambda x, w: ops.conv3d(x, w, 0),
            [rng.standard_normal((1, 3, 2, 2, 2)), rng.standard_normal((4, 3, 2, 2, 2))], LINEAR_TOL)


def _maxpool(rng):
    return ops.maxpool3d, [_spaced(rng, (2, 2, 4, 4, 4))], LINEAR_TOL


def _upsample(rng):
    return ops.upsample_trilinear, [rng.standard_normal((2, 2, 2, 3, 2))], LINEAR_TOL


def _batchnorm(rng):
    c = 3
    rm, rv = np.zeros(c), np.ones(c)

    def fn(x, g, b):
        return ops.batch_norm(x, g, b, rm, rv, training=True)

    return fn, [rng.standard_normal((3, c, 2, 2, 2)), rng.uniform(0.5, 1.5, c), rng.standard_normal(c)], NONLINEAR_TOL


def _instance_norm(rng):
    def fn(x, s, t):
        return ops.instance_norm_adain(x, s, t)

    return fn, [rng.standard_normal((2, 3, 2, 2, 2)), rng.uniform(0.5, 1.5, (2, 3)), rng.standard_normal((2, 3))], NONLINEAR_TOL


def _elu(rng):
    return ops.elu, [_away_from_zero(rng, (6, 7))], NONLINEAR_TOL


def _heads(rng):
    net = MLP(12, [16, 8, 4, 2], rng, norm=True)
    fn, params = module_fn(net)
    return fn, [rng.standard_normal((6, 12))] + params, NONLINEAR_TOL


def _generator(rng):
    net = MLP(10, [64, 64, 32, 32, 16, 16, 8, 3], rng)
    fn, params = module_fn(net)
    return fn, [rng.uniform(0, 1, (5, 10))] + params, NONLINEAR_TOL


def _matched_clouds(rng, extra=8):
    """Jittered lattice X, a close partner in Y for every X, plus extra Y points offset from X.

    Every nearest-neighbor choice wins by a margin of at least 0.03, so
    finite-difference steps never switch an assignment.
    """
    g = np.stack(np.meshgrid(*[np.arange(3)] * 3, indexing="ij"), -1).reshape(-1, 3) * 0.3
    x = g + rng.uniform(-0.02, 0.02, g.shape)
    partners = x + rng.uniform(-0.03, 0.03, x.shape)
    hosts = rng.choice(len(x), extra, replace=False)
    extras = x[hosts] + np.array([0.1, 0.0, 0.0]) + rng.uniform(-0.01, 0.01, (extra, 3))
    y = np.concatenate([partners, extras])
    return x, y[rng.permutation(len(y))]


def _chamfer(rng):
    x, y = _matched_clouds(rng)
    return (lambda t: losses.chamfer_t(x, t)), [y], NONLINEAR_TOL


def _pchamfer(rng):
    x, y = _matched_clouds(rng)
    return (lambda t: losses.p_chamfer_t(x, t, 5.0)), [y], NONLINEAR_TOL


def _offset(rng):
    centers = rng.uniform(-1, 1, (12, 3))
    direction = rng.standard_normal((12, 3))
    direction /= np.linalg.norm(direction, axis=1, keepdims=True)
    radius = np.where(np.arange(12) % 2 == 0, rng.uniform(0.2, 1.5, 12), rng.uniform(2.0, 3.0, 12))
    pts = centers + direction * radius[:, None]
    return (lambda t: losses.offset_penalty_t(t, centers)), [pts], NONLINEAR_TOL


def _density(rng):
    target = rng.dirichlet(np.ones(27)).reshape(3, 3, 3)
    return (lambda t: losses.density_mse_t(t, target)), [rng.dirichlet(np.ones(27)).reshape(3, 3, 3)], NONLINEAR_TOL


def _occupancy(rng):
    target = (rng.random((3, 3, 3)) < 0.5).astype(float)
    return (lambda t: losses.occupancy_bce_logits_t(t, target)), [rng.standard_normal((3, 3, 3)) * 2], NONLINEAR_TOL


CASES: dict[str, Case] = {
    "dense": _dense,
    "conv3d_k3": _conv_k3,
    "conv3d_k2": _conv_k2,
    "maxpool3d": _maxpool,
    "upsample_trilinear": _upsample,
    "batchnorm": _batchnorm,
    "instance_norm_adain": _instance_norm,
    "elu": _elu,
    "heads_mlp": _heads,
    "generator_mlp": _generator,
    "loss_chamfer": _chamfer,
    "loss_p_chamfer": _pchamfer,
    "loss_offset": _offset,
    "loss_density": _density,
    "loss_occupancy": _occupancy,
}

# p = 5 gives large third derivatives at distances ~0.05, so central
# differences need a finer step to keep truncation error out of the way
STEPS = {"loss_p_chamfer": 1e-5}


def run_case(name: str, seeds=SEEDS) -> GradCheckReport:
    """Combined report of ``name`` over ``seeds``: worst errors, passing only if every seed passes."""
    reps = []
    for seed in seeds:
        fn, inputs, tol = CASES[name](np.random.default_rng(seed))
        reps.append(grad_check(fn, inputs, tolerance=tol, seed=seed, name=name, step=STEPS.get(name, 1e-4)))
    return GradCheckReport(
        name,
        max(r.max_abs_error for r in reps),
        max(r.max_rel_error for r in reps),
        reps[0].tolerance,
        all(r.passed for r in reps),
    )


def run_suite(names=None, seeds=SEEDS) -> tuple[list[GradCheckReport], float]:
    t0 = time.perf_counter()
    reports = [run_case(n, seeds) for n in (names or CASES)]
    return reports, time.perf_counter() - t0
