# nopkit/training.py
"""Relative L²/H¹ losses, Adam with decoupled weight decay and step decay,
and the training/evaluation loops."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from nopkit import tensor_core
from nopkit.autodiff import Tape, Variable, merge_gradients
from nopkit.errors import ConfigError, DivergenceError, OptimizerError, ShapeError
from nopkit.multigrid import (
    MultiGridPlan,
    decompose,
    extract_regions,
    mg_inference,
    parallel_map,
)
from nopkit.neural_operator import FnoModel, forward, model_forward
from nopkit.pde_data import Dataset, integer_wavenumbers

logger = logging.getLogger(__name__)

LOSSES = ("rel-l2", "rel-h1")
METRIC_COLUMNS = ["epoch", "train_loss", "test_l2", "test_h1", "lr", "seconds"]


# ---------------------- DATA CLASSES ----------------------

@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 1e-4
    epochs: int = 500
    lr_step: int = 100
    lr_factor: float = 0.5
    batch_size: int = 20
    loss: str = "rel-l2"
    seed: int = 0
    test_fraction: float = 0.2
    shards: int = 1
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.lr <= 0 or self.batch_size <= 0:
            raise ConfigError("train.lr and train.batch_size must be positive")
        if not 0 < self.lr_factor <= 1:
            raise ConfigError("train.lr_factor must be in (0, 1]")
        if self.lr_step <= 0 or self.epochs < 0 or self.weight_decay < 0:
            raise ConfigError("train.lr_step must be positive, epochs and weight_decay non-negative")
        if self.loss not in LOSSES:
            raise ConfigError(f"train.loss must be one of {LOSSES}, got '{self.loss}'")
        if not 0 <= self.test_fraction < 1:
            raise ConfigError("train.test_fraction must be in [0, 1)")
        if self.shards < 1 or self.checkpoint_every < 0:
            raise ConfigError("train.shards must be >= 1 and train.checkpoint_every >= 0")


@dataclass
class AdamState:
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    train_loss: float
    test_l2: float
    test_h1: float
    lr: float
    seconds: float


@dataclass
class MetricsLog:
    rows: List[EpochMetrics] = field(default_factory=list)

    def append(self, row: EpochMetrics) -> None:
        if self.rows and row.epoch <= self.rows[-1].epoch:
            raise ValueError(f"epoch {row.epoch} logged after epoch {self.rows[-1].epoch}")
        self.rows.append(row)

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def last(self) -> Optional[EpochMetrics]:
        return self.rows[-1] if self.rows else None

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(r) for r in self.rows], columns=METRIC_COLUMNS)

    def to_csv(self, path) -> None:
        self.to_frame().to_csv(path, index=False)


# ---------------------- LOSSES ----------------------

def _sample_axes(ndim: int) -> Tuple[int, ...]:
    return tuple(range(1, ndim))


def h1_weights(extents: Sequence[int]) -> np.ndarray:
    """(1 + |k|²) times the half-spectrum multiplicity, shaped ``(1, s…, h, 1)``."""
    ks = integer_wavenumbers(extents)
    weights = 1.0 + sum(k * k for k in ks)
    weights = weights * tensor_core.half_spectrum_multiplicity(extents[-1])
    return weights[None, ..., None]


def _squared_norms(tape: Tape, x: Variable, kind: str) -> Variable:
    axes = _sample_axes(x.ndim)
    if kind == "rel-l2":
        return tape.record("sum", tape.record("abs2", x), axis=axes)
    extents = x.shape[1:-1]
    X = tape.record("fft_forward", x, axes=tuple(range(1, x.ndim - 1)))
    weighted = tape.record("abs2", X) * h1_weights(extents)
    return tape.record("sum", weighted, axis=axes)


def relative_errors(tape: Tape, pred: Variable, true: np.ndarray, kind: str = "rel-l2") -> Variable:
    """Per-sample ‖pred − true‖ / ‖true‖ in the L² or H¹ norm, shape ``(B,)``."""
    true = np.asarray(true, dtype=np.float64)
    if pred.shape != true.shape:
        raise ShapeError(f"prediction {pred.shape} and target {true.shape} differ")
    ref = tape.constant(true)
    plain = Tape(enabled=False)
    denominators = np.sqrt(_squared_norms(plain, plain.constant(true), kind).value)
    if np.any(denominators == 0):
        raise ShapeError("relative error of a zero-norm target")
    numerators = tape.record("sqrt", _squared_norms(tape, pred - ref, kind))
    return numerators * (1.0 / denominators)


def batch_loss(tape: Tape, pred: Variable, true: np.ndarray, kind: str = "rel-l2") -> Variable:
    errors = relative_errors(tape, pred, true, kind)
    return tape.record("sum", errors) * (1.0 / errors.shape[0])


def _evaluate_loss(pred: np.ndarray, true: np.ndarray, kind: str) -> float:
    tape = Tape(enabled=False)
    return float(batch_loss(tape, tape.constant(np.asarray(pred, dtype=np.float64)), true, kind).value)


def rel_l2(pred: np.ndarray, true: np.ndarray) -> float:
    return _evaluate_loss(pred, true, "rel-l2")


def rel_h1(pred: np.ndarray, true: np.ndarray) -> float:
    return _evaluate_loss(pred, true, "rel-h1")


# ---------------------- OPTIMIZER ----------------------

def _real_view(a: np.ndarray) -> np.ndarray:
    return a.view(np.float64) if np.iscomplexobj(a) else a


def adam_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray],
    state: AdamState,
    lr: float,
    weight_decay: float = 0.0,
) -> Tuple[Mapping[str, np.ndarray], AdamState]:
    """One in-place Adam update with bias correction and decoupled weight decay.

    Complex parameters are updated as (re, im) pairs.
    """
    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            raise OptimizerError(name)
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for name, param in params.items():
        grad = grads.get(name)
        if grad is None:
            continue
        if grad.shape != param.shape:
            raise ShapeError(f"gradient of '{name}' has shape {grad.shape}, parameter {param.shape}")
        p = _real_view(param)
        g = _real_view(np.ascontiguousarray(grad, dtype=param.dtype))
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p *= 1.0 - lr * weight_decay
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


def lr_at(cfg: TrainConfig, epoch: int) -> float:
    return cfg.lr * cfg.lr_factor ** (epoch // cfg.lr_step)


# ---------------------- DATA HANDLING ----------------------

def split_dataset(dataset: Dataset, test_fraction: float) -> Tuple[Dataset, Dataset]:
    """First ⌈(1 − f)·N⌉ samples train, the rest test.

    A positive fraction must leave at least one sample on each side.
    """
    n_train = math.ceil((1.0 - test_fraction) * len(dataset))
    if n_train == 0 or (test_fraction > 0 and n_train == len(dataset)):
        raise ShapeError(
            f"test fraction {test_fraction} splits {len(dataset)} samples into "
            f"{n_train} train and {len(dataset) - n_train} test"
        )
    return dataset.subset(0, n_train), dataset.subset(n_train, len(dataset))


def region_pairs(dataset: Dataset, plan: MultiGridPlan) -> Tuple[np.ndarray, np.ndarray]:
    """Decomposed inputs and level-0 region targets of every sample."""
    inputs = np.concatenate([decompose(a, plan).inputs for a in dataset.inputs])
    targets = np.concatenate([extract_regions(u, plan) for u in dataset.outputs])
    return inputs, targets


def predict(
    model: FnoModel,
    inputs: np.ndarray,
    plan: Optional[MultiGridPlan] = None,
    batch_size: int = 32,
    threads: int = 1,
) -> np.ndarray:
    if len(inputs) == 0:
        raise ShapeError("no samples to predict")
    if plan is not None:
        return np.stack([mg_inference(model, a, plan, threads) for a in inputs])
    chunks = [inputs[i : i + batch_size] for i in range(0, len(inputs), batch_size)]
    return np.concatenate([model_forward(model, chunk) for chunk in chunks])


def dataset_metrics(
    model: FnoModel,
    dataset: Dataset,
    plan: Optional[MultiGridPlan] = None,
    batch_size: int = 32,
    threads: int = 1,
) -> Tuple[float, float]:
    pred = predict(model, dataset.inputs, plan, batch_size, threads)
    return rel_l2(pred, dataset.outputs), rel_h1(pred, dataset.outputs)


# ---------------------- TRAINING ----------------------

def _shard_gradients(
    model: FnoModel,
    x: np.ndarray,
    y: np.ndarray,
    kind: str,
    crop: int,
    weight: float,
) -> Tuple[float, Dict[str, np.ndarray]]:
    tape = Tape()
    p = model.bind(tape, requires_grad=True)
    pred = forward(model, tape, p, tape.constant(x))
    if crop:
        d = model.config.d
        index = (slice(None),) + (slice(crop, -crop),) * d + (slice(None),)
        pred = tape.record("crop", pred, index=index)
    loss = batch_loss(tape, pred, y, kind) * weight
    return float(loss.value), tape.gradients(loss, p)


def batch_gradients(
    model: FnoModel,
    x: np.ndarray,
    y: np.ndarray,
    kind: str = "rel-l2",
    crop: int = 0,
    shards: int = 1,
    threads: int = 1,
) -> Tuple[float, Dict[str, np.ndarray]]:
    """Loss and gradients of one batch, optionally split over independent tapes."""
    bounds = np.linspace(0, len(x), min(shards, len(x)) + 1).astype(int)
    parts = [(lo, hi) for lo, hi in zip(bounds[:-1], bounds[1:]) if hi > lo]
    results = parallel_map(
        lambda part: _shard_gradients(
            model, x[part[0] : part[1]], y[part[0] : part[1]], kind, crop, (part[1] - part[0]) / len(x)
        ),
        parts,
        threads,
    )
    loss = sum(value for value, _ in results)
    return loss, merge_gradients([grads for _, grads in results])


EpochCallback = Callable[[int, FnoModel, MetricsLog], None]


def train(
    model: FnoModel,
    dataset: Dataset,
    cfg: TrainConfig,
    plan: Optional[MultiGridPlan] = None,
    threads: int = 1,
    on_epoch: Optional[EpochCallback] = None,
) -> Tuple[FnoModel, MetricsLog]:
    """Seeded mini-batch Adam on the training split; test metrics every epoch."""
    if plan is None and dataset.inputs.shape[-1] != model.config.in_channels:
        raise ShapeError(
            f"dataset has {dataset.inputs.shape[-1]} input channels, model expects {model.config.in_channels}"
        )
    train_set, test_set = split_dataset(dataset, cfg.test_fraction)
    if plan is not None:
        if plan.channels(dataset.inputs.shape[-1]) != model.config.in_channels:
            raise ShapeError("multi-grid channels do not match the model input channels")
        x_all, y_all = region_pairs(train_set, plan)
        crop = plan.padding
    else:
        x_all, y_all = train_set.inputs, train_set.outputs
        crop = 0

    rng = np.random.default_rng(cfg.seed)
    state = AdamState()
    log = MetricsLog()
    params = model.parameters()
    logger.info(
        "training %d samples (%d test) for %d epochs, loss %s",
        len(train_set), len(test_set), cfg.epochs, cfg.loss,
    )
    for epoch in range(cfg.epochs):
        start = time.perf_counter()
        lr = lr_at(cfg, epoch)
        order = rng.permutation(len(x_all))
        losses, sizes = [], []
        for lo in range(0, len(order), cfg.batch_size):
            idx = order[lo : lo + cfg.batch_size]
            loss, grads = batch_gradients(
                model, x_all[idx], y_all[idx], cfg.loss, crop, cfg.shards, threads
            )
            if not math.isfinite(loss):
                raise DivergenceError("training loss is not finite", epoch=epoch)
            adam_step(params, grads, state, lr, cfg.weight_decay)
            losses.append(loss)
            sizes.append(len(idx))
        train_loss = float(np.average(losses, weights=sizes)) if losses else float("nan")
        if len(test_set):
            test_l2, test_h1 = dataset_metrics(model, test_set, plan, cfg.batch_size, threads)
        else:
            test_l2 = test_h1 = float("nan")
        log.append(EpochMetrics(epoch, train_loss, test_l2, test_h1, lr, time.perf_counter() - start))
        logger.info(
            "epoch %d: train %.4e, test L2 %.4e, test H1 %.4e, lr %.2e",
            epoch, train_loss, test_l2, test_h1, lr,
        )
        if on_epoch is not None:
            on_epoch(epoch, model, log)
    return model, log


# ---------------------- EVALUATION ----------------------

def resample_dataset(dataset: Dataset, extent: int) -> Dataset:
    """Band-limited resampling of inputs and outputs onto an ``extent``-per-dim grid."""
    d = dataset.inputs.ndim - 2
    native = dataset.inputs.shape[1]
    if extent == native:
        return dataset
    axes = list(range(1, d + 1))
    new = [extent] * d
    return Dataset(
        tensor_core.resample_spectral(dataset.inputs, new, axes),
        tensor_core.resample_spectral(dataset.outputs, new, axes),
        dict(dataset.metadata),
    )


def evaluate(
    model: FnoModel,
    dataset: Dataset,
    resolutions: Optional[Sequence[int]] = None,
    plan: Optional[MultiGridPlan] = None,
    batch_size: int = 32,
    threads: int = 1,
) -> pd.DataFrame:
    """rel-L² and rel-H¹ per resolution (zero-shot by spectral resampling)."""
    native = dataset.inputs.shape[1]
    rows = []
    for extent in resolutions or [native]:
        data = resample_dataset(dataset, int(extent))
        plan_r = None
        if plan is not None:
            exponent = int(round(math.log2(extent)))
            if 2**exponent != extent:
                raise ShapeError(f"multi-grid evaluation needs a power-of-two grid, got {extent}")
            plan_r = plan.rescaled(exponent)
        l2, h1 = dataset_metrics(model, data, plan_r, batch_size, threads)
        logger.info("resolution %d: rel L2 %.4e, rel H1 %.4e", extent, l2, h1)
        rows.append({"resolution": int(extent), "rel_l2": l2, "rel_h1": h1, "samples": len(data)})
    return pd.DataFrame(rows, columns=["resolution", "rel_l2", "rel_h1", "samples"])
