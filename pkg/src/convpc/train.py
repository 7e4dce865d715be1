"""Training loop, evaluation and checkpoint plumbing."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt_io
from . import tensor as _tensor
from .config import RunConfig
from .data import Shape, load_dataset, make_synthetic_dataset
from .geometry import PointCloud, normalize_unit_cube
from .losses import chamfer
from .model import TERMS, AutoEncoder, batch_losses
from .optim import AMSGrad
from .tensor import NonFiniteError

log = logging.getLogger(__name__)

LOG_COLUMNS = ("iteration",) + TERMS + ("total", "val_chamfer")


class TrainingError(RuntimeError):
    pass


def build_model(config: RunConfig) -> AutoEncoder:
    _tensor.set_default_dtype(config.dtype)
    return AutoEncoder(config.arch, seed=config.seed, adain=config.adain)


def build_optimizer(model: AutoEncoder, config: RunConfig) -> AMSGrad:
    return AMSGrad(dict(model.named_parameters()), config.lr, config.beta1, config.beta2, config.adam_eps)


# -- datasets ---------------------------------------------------------------

def load_shapes(config: RunConfig) -> tuple[list[Shape], list[Shape]]:
    """Training and validation shapes; an empty validation split falls back to the training set."""
    if config.data == "synthetic":
        train = make_synthetic_dataset(
            config.synthetic_kind, config.shape_count, config.n_in, config.seed,
            config.reference_points, config.input_sampling,
        )
        val = make_synthetic_dataset(
            config.synthetic_kind, config.val_count, config.n_in, config.seed + 7919,
            config.reference_points, config.input_sampling,
        ) if config.val_count > 0 else []
    else:
        shapes = load_dataset(config.data, config.n_in, config.input_sampling, config.seed)
        k = config.val_count if len(shapes) > config.val_count else 0
        train, val = (shapes[:-k], shapes[-k:]) if k else (shapes, [])
    return train, val or train


# -- evaluation -------------------------------------------------------------

@dataclass
class EvalReport:
    """Per-shape Chamfer distances (x1000) measured in raw coordinates."""

    names: list[str]
    values: list[float]
    points: int
    target_points: list[int] = field(default_factory=list)

    @property
    def mean(self) -> float:
        return float(np.mean(self.values)) if self.values else float("nan")

    def lines(self) -> list[str]:
        out = ["shape\tchamfer_x1000\toutput_points\ttarget_points"]
        for i, (name, v) in enumerate(zip(self.names, self.values)):
            tp = self.target_points[i] if i < len(self.target_points) else ""
            out.append(f"{name}\t{v:.6f}\t{self.points}\t{tp}")
        out.append(f"mean\t{self.mean:.6f}\t{self.points}\t")
        return out


def evaluate_clouds(
    model: AutoEncoder,
    clouds: list[np.ndarray],
    names: list[str],
    points: int,
    uv_mode: str = "lloyd",
    seed: int = 0,
    threshold: float = 0.5,
) -> EvalReport:
    values = []
    for raw in clouds:
        normed = normalize_unit_cube(PointCloud(raw))
        y = model.reconstruct([normed.points], points, uv_mode, seed, threshold)[0]
        values.append(1000.0 * chamfer(raw, normed.denorm.apply(y))[0])
    return EvalReport(list(names), values, points, [len(c) for c in clouds])


def evaluate_shapes(model: AutoEncoder, shapes: list[Shape], config: RunConfig, points: int | None = None) -> EvalReport:
    return evaluate_clouds(
        model, [s.target.raw_points() for s in shapes], [s.name for s in shapes],
        points or config.eval_points, config.uv_mode, 0, config.occupancy_threshold,
    )


def fit_chamfer(model: AutoEncoder, shapes: list[Shape], points: int, uv_mode: str = "lloyd",
                threshold: float = 0.5) -> float:
    """Mean Chamfer (x1000) between each shape's unit-cube target and its reconstruction."""
    vals = []
    for s in shapes:
        y = model.reconstruct([s.points], points, uv_mode, 0, threshold)[0]
        vals.append(1000.0 * chamfer(s.points, y)[0])
    return float(np.mean(vals))


# -- checkpoints ------------------------------------------------------------

def state_tensors(model: AutoEncoder, optimizer: AMSGrad) -> dict[str, np.ndarray]:
    out = {}
    for name, p in model.named_parameters():
        out[f"param.{name}"] = p.data
    for name, b in model.named_buffers():
        out[f"buffer.{name}"] = b
    for name, arr in optimizer.state().items():
        out[f"opt.{name}"] = arr
    return out


def make_checkpoint(config, model, optimizer, rng, iteration: int, extra: dict | None = None) -> ckpt_io.Checkpoint:
    meta = {"iteration": iteration, "rng": rng.bit_generator.state}
    meta.update(extra or {})
    return ckpt_io.Checkpoint(config, state_tensors(model, optimizer), meta)


def restore(ckpt: ckpt_io.Checkpoint) -> tuple[AutoEncoder, AMSGrad, np.random.Generator]:
    """Rebuild model, optimizer and rng; every stored shape is checked against the preset."""
    model = build_model(ckpt.config)
    optimizer = build_optimizer(model, ckpt.config)
    expected = state_tensors(model, optimizer)
    missing = set(expected) - set(ckpt.tensors)
    extra = set(ckpt.tensors) - set(expected)
    if missing or extra:
        raise ckpt_io.CheckpointError(
            f"checkpoint does not match preset {ckpt.config.preset}: "
            f"missing {sorted(missing)[:5]}, unexpected {sorted(extra)[:5]}"
        )
    for name, target in expected.items():
        arr = ckpt.tensors[name]
        if arr.shape != target.shape:
            raise ckpt_io.CheckpointError(f"{name}: stored shape {arr.shape} != expected {target.shape}")
        target[...] = arr
    rng = np.random.default_rng()
    if "rng" in ckpt.meta:
        rng.bit_generator.state = ckpt.meta["rng"]
    return model, optimizer, rng


def load_model(path) -> tuple[AutoEncoder, RunConfig]:
    ckpt = ckpt_io.load(path)
    model, _, _ = restore(ckpt)
    model.eval()
    return model, ckpt.config


# -- training ---------------------------------------------------------------

def train_step(model: AutoEncoder, optimizer: AMSGrad, shapes: list[Shape], config: RunConfig,
               rng: np.random.Generator, apply: bool = True) -> dict[str, float]:
    """One optimization step on a random batch; returns the unweighted loss terms."""
    model.train()
    idx = rng.choice(len(shapes), size=min(config.batch_size, len(shapes)), replace=False)
    targets = [shapes[i].points for i in idx]
    result = model(targets, config.n_out, rng, uv_mode="random", threshold=config.occupancy_threshold)
    total, values = batch_losses(
        result, targets, config.loss_weights(), config.enabled_terms(), config.offset_margin
    )
    if apply:
        optimizer.zero_grad()
        total.backward()
        optimizer.step()
    return values


# Row ``i`` holds the loss terms evaluated before update ``i``; ``val_chamfer``
# is measured after that update on the validation shapes (nan when skipped).
def _format_row(iteration: int, values: dict[str, float], val: float | None) -> str:
    cells = [str(iteration)] + [repr(float(values[k])) for k in TERMS + ("total",)]
    cells.append(repr(float(val)) if val is not None else "nan")
    return "\t".join(cells)


def read_loss_log(path) -> list[dict[str, float]]:
    rows = []
    for line in Path(path).read_text().splitlines():
        if not line or line.startswith("#"):
            continue
        rows.append({k: float(v) for k, v in zip(LOG_COLUMNS, line.split("\t"))})
    return rows


@dataclass
class TrainResult:
    out_dir: Path
    iterations: int
    final: dict[str, float]
    best_metric: float
    final_metric: float
    seconds: float


def train(
    config: RunConfig,
    out_dir,
    resume=None,
    save_init: bool = False,
    shapes: tuple[list[Shape], list[Shape]] | None = None,
) -> TrainResult:
    """Run (or resume) training, writing ``loss.tsv``, ``latest.ckpt`` and ``best.ckpt`` to ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    train_shapes, val_shapes = shapes if shapes is not None else load_shapes(config)
    log_path = out / "loss.tsv"

    if resume is not None:
        ckpt = ckpt_io.load(resume) if not isinstance(resume, ckpt_io.Checkpoint) else resume
        model, optimizer, rng = restore(ckpt)
        start = ckpt.iteration
        best = float(ckpt.meta.get("best_metric", float("inf")))
        kept = []
        if log_path.exists():
            for line in log_path.read_text().splitlines():
                if line.startswith("#") or int(line.split("\t", 1)[0]) < start:
                    kept.append(line)
        log_path.write_text("\n".join(kept) + ("\n" if kept else ""))
    else:
        model = build_model(config)
        optimizer = build_optimizer(model, config)
        rng = np.random.default_rng([config.seed, 1])
        start = 0
        best = float("inf")
        log_path.write_text("#" + "\t".join(LOG_COLUMNS) + "\n")
        if save_init:
            ckpt_io.save(make_checkpoint(config, model, optimizer, rng, 0, {"best_metric": best}), out / "init.ckpt")

    t0 = time.perf_counter()
    values: dict[str, float] = {}
    metric = float("nan")
    with open(log_path, "a") as fh:
        for it in range(start, config.iterations):
            try:
                values = train_step(model, optimizer, train_shapes, config, rng)
            except NonFiniteError as exc:
                bad = out / "last_good.ckpt"
                # parameters are untouched when the step aborts
                ckpt_io.save(make_checkpoint(config, model, optimizer, rng, it, {"best_metric": best}), bad)
                raise TrainingError(f"iteration {it}: {exc}; last good state saved to {bad}") from exc
            val = None
            done = it + 1
            if done % config.val_every == 0 or done == config.iterations:
                val = evaluate_shapes(model, val_shapes, config).mean
                metric = val
                if val <= best:
                    best = val
                    ckpt_io.save(make_checkpoint(config, model, optimizer, rng, done, {"best_metric": best}), out / "best.ckpt")
            fh.write(_format_row(it, values, val) + "\n")
            fh.flush()
            if done % 50 == 0 or done == config.iterations:
                log.info("iter %d total %.6g chamfer %.6g", done, values["total"], values["chamfer"])

    ckpt_io.save(
        make_checkpoint(config, model, optimizer, rng, max(config.iterations, start), {"best_metric": best}),
        out / "latest.ckpt",
    )
    return TrainResult(out, config.iterations, values, best, metric, time.perf_counter() - t0)
