# nopkit/neural_operator.py
"""Fourier neural operator: spectral convolution, operator blocks with their
architectural variants, and the lifting/blocks/projection model."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from nopkit import tensor_core
from nopkit.autodiff import Tape, Variable
from nopkit.errors import ConfigError, ShapeError
from nopkit.factorized_weights import (
    FORMS,
    SpectralWeights,
    WeightLayout,
    init_weights,
    spectral_param_count,
)

logger = logging.getLogger(__name__)

SKIP_KINDS = ("linear", "identity", "soft-gate")
NORM_KINDS = ("none", "instance", "layer")
ACTIVATIONS = ("gelu", "identity")


# ---------------------- DATA CLASSES ----------------------

@dataclass(frozen=True)
class SpectralConvConfig:
    alpha: Tuple[int, ...]
    in_channels: int
    out_channels: int
    separable: bool = False

    def __post_init__(self):
        if self.separable and self.in_channels != self.out_channels:
            raise ConfigError("separable spectral convolution needs in_channels == out_channels")

    def check_grid(self, extents: Sequence[int]) -> None:
        tensor_core.check_modes(extents, self.alpha)


@dataclass(frozen=True)
class BlockConfig:
    skip_kind: str = "linear"
    norm_kind: str = "none"
    preactivation: bool = False
    mlp_expansion: float = 0.0
    activation: str = "gelu"
    double_skip: bool = False

    def __post_init__(self):
        if self.skip_kind not in SKIP_KINDS:
            raise ConfigError(f"skip_kind must be one of {SKIP_KINDS}, got '{self.skip_kind}'")
        if self.norm_kind not in NORM_KINDS:
            raise ConfigError(f"norm_kind must be one of {NORM_KINDS}, got '{self.norm_kind}'")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"activation must be one of {ACTIVATIONS}, got '{self.activation}'")
        if self.mlp_expansion < 0:
            raise ConfigError("mlp_expansion must be >= 0")
        if self.double_skip and self.mlp_expansion == 0:
            raise ConfigError("double_skip needs an MLP (mlp_expansion > 0)")

    def mlp_hidden(self, width: int) -> int:
        return math.ceil(self.mlp_expansion * width)


@dataclass(frozen=True)
class ModelConfig:
    d: int = 2
    in_channels: int = 1
    out_channels: int = 1
    width: int = 32
    n_layers: int = 4
    modes: Tuple[int, ...] = (12, 12)
    projection_width: int = 256
    separable: bool = False
    form: str = "dense"
    rank: float = 1.0
    ranks: Tuple[int, ...] = ()
    skip_kind: str = "linear"
    norm_kind: str = "none"
    preactivation: bool = False
    mlp_expansion: float = 0.0
    activation: str = "gelu"
    double_skip: bool = False
    domain_padding: float = 0.0
    positional_encoding: bool = False

    def __post_init__(self):
        if self.d not in (1, 2):
            raise ConfigError(f"model.d must be 1 or 2, got {self.d}")
        if len(self.modes) != self.d:
            raise ConfigError(f"model.modes needs {self.d} entries, got {self.modes}")
        if min(self.modes) < 1 or self.width < 1 or self.n_layers < 0:
            raise ConfigError("model extents must be positive")
        if self.form not in FORMS:
            raise ConfigError(f"model.form must be one of {FORMS}, got '{self.form}'")
        if self.domain_padding < 0:
            raise ConfigError("model.domain_padding must be >= 0")
        # validates the block fields
        self.block

    @property
    def block(self) -> BlockConfig:
        return BlockConfig(
            skip_kind=self.skip_kind,
            norm_kind=self.norm_kind,
            preactivation=self.preactivation,
            mlp_expansion=self.mlp_expansion,
            activation=self.activation,
            double_skip=self.double_skip,
        )

    @property
    def spectral(self) -> SpectralConvConfig:
        return SpectralConvConfig(tuple(self.modes), self.width, self.width, self.separable)

    @property
    def layout(self) -> Optional[WeightLayout]:
        if self.n_layers == 0:
            return None
        return WeightLayout(tuple(self.modes), self.width, self.n_layers, self.separable)

    @property
    def lifting_in(self) -> int:
        return self.in_channels + (self.d if self.positional_encoding else 0)


@dataclass
class FnoModel:
    config: ModelConfig
    params: Dict[str, np.ndarray] = field(default_factory=dict)
    weights: Optional[SpectralWeights] = None

    def parameters(self) -> Dict[str, np.ndarray]:
        out = dict(self.params)
        if self.weights is not None:
            out.update(self.weights.parameters())
        return out

    def bind(self, tape: Tape, requires_grad: bool = False) -> Dict[str, Variable]:
        return {
            name: tape.variable(value, requires_grad=requires_grad, name=name)
            for name, value in self.parameters().items()
        }


# ---------------------- INITIALIZATION ----------------------

def pointwise_shapes(cfg: ModelConfig) -> Dict[str, Tuple[int, ...]]:
    """Shapes of every non-spectral parameter, in a fixed order."""
    shapes: Dict[str, Tuple[int, ...]] = {
        "lift.W": (cfg.lifting_in, cfg.width),
        "lift.b": (cfg.width,),
    }
    block = cfg.block
    hidden = block.mlp_hidden(cfg.width)
    for layer in range(cfg.n_layers):
        prefix = f"block{layer}"
        if block.skip_kind == "linear":
            shapes[f"{prefix}.Q"] = (cfg.width, cfg.width)
        elif block.skip_kind == "soft-gate":
            shapes[f"{prefix}.gate"] = (cfg.width,)
        shapes[f"{prefix}.b"] = (cfg.width,)
        if hidden > 0:
            shapes[f"{prefix}.mlp.W1"] = (cfg.width, hidden)
            shapes[f"{prefix}.mlp.b1"] = (hidden,)
            shapes[f"{prefix}.mlp.W2"] = (hidden, cfg.width)
            shapes[f"{prefix}.mlp.b2"] = (cfg.width,)
    shapes["proj.W1"] = (cfg.width, cfg.projection_width)
    shapes["proj.b1"] = (cfg.projection_width,)
    shapes["proj.W2"] = (cfg.projection_width, cfg.out_channels)
    shapes["proj.b2"] = (cfg.out_channels,)
    return shapes


def count_parameters(cfg: ModelConfig, form: Optional[str] = None) -> int:
    """Parameter count of a model built from ``cfg`` (optionally as another
    form), without allocating it."""
    total = sum(math.prod(shape) for shape in pointwise_shapes(cfg).values())
    if cfg.layout is not None:
        total += spectral_param_count(cfg.layout, form or cfg.form, cfg.rank, cfg.ranks)
    return total


def init_model(cfg: ModelConfig, seed: int = 0) -> FnoModel:
    """Linear weights ~ U(±1/√fan_in), biases zero, gates one, spectral
    weights per their form."""
    rng = np.random.default_rng(seed)
    params: Dict[str, np.ndarray] = {}
    for name, shape in pointwise_shapes(cfg).items():
        leaf = name.rsplit(".", 1)[-1]
        if leaf.startswith("b"):
            params[name] = np.zeros(shape)
        elif leaf == "gate":
            params[name] = np.ones(shape)
        else:
            bound = 1.0 / math.sqrt(shape[0])
            params[name] = rng.uniform(-bound, bound, shape)
    weights = None
    if cfg.layout is not None:
        weights = init_weights(cfg.layout, cfg.form, cfg.rank, cfg.ranks or None, rng)
    model = FnoModel(cfg, params, weights)
    logger.debug("initialised %s model with %d layers", cfg.form, cfg.n_layers)
    return model


# ---------------------- PADDING ----------------------

def padding_widths(extents: Sequence[int], fraction: float) -> Tuple[int, ...]:
    if fraction < 0:
        raise ShapeError(f"padding fraction must be >= 0, got {fraction}")
    return tuple(math.ceil(fraction * s) for s in extents)


def domain_pad(tape: Tape, v: Variable, fraction: float) -> Tuple[Variable, Tuple[int, ...]]:
    """Zero-pad every spatial axis of a batched field ``(B, s…, c)`` by ⌈fraction·s⌉ per side."""
    widths = padding_widths(v.shape[1:-1], fraction)
    if not any(widths):
        return v, widths
    return tape.record("pad", v, widths=[(0, 0)] + [(w, w) for w in widths] + [(0, 0)]), widths


def domain_unpad(tape: Tape, v: Variable, widths: Sequence[int]) -> Variable:
    if not any(widths):
        return v
    index = (slice(None),) + tuple(slice(w, s - w) for w, s in zip(widths, v.shape[1:-1])) + (slice(None),)
    return tape.record("crop", v, index=index)


# ---------------------- FORWARD ----------------------

def _spatial_axes(v: Variable) -> Tuple[int, ...]:
    return tuple(range(1, v.ndim - 1))


def _normalize(tape: Tape, v: Variable, kind: str) -> Variable:
    if kind == "instance":
        return tape.record("instance_normalize", v)
    if kind == "layer":
        return tape.record("layer_normalize", v)
    return v


def _linear(tape: Tape, v: Variable, W: Variable, b: Variable) -> Variable:
    return tape.record("matmul", v, W) + b


def spectral_conv(model: FnoModel, tape: Tape, p: Mapping[str, Variable], v: Variable, layer: int) -> Variable:
    """FFT, keep the stored corners, contract each with its weight block,
    zero-embed into the half-spectrum and invert."""
    cfg = model.config
    axes = _spatial_axes(v)
    extents = v.shape[1:-1]
    cfg.spectral.check_grid(extents)
    if v.shape[-1] != cfg.width:
        raise ShapeError(f"spectral conv expects {cfg.width} channels, got {v.shape[-1]}")

    V = tape.record("fft_forward", v, axes=axes)
    blocks, indices = [], []
    for corner in range(tensor_core.corner_count(cfg.d)):
        index = (slice(None),) + tensor_core.corner_slices(extents, cfg.modes, corner) + (slice(None),)
        X = tape.record("truncate", V, index=index)
        block = model.weights.layout.block(layer, corner)
        blocks.append(model.weights.contract_on(tape, p, block, X))
        indices.append(index)
    full = tape.record("embed", *blocks, shape=V.shape[:-1] + (cfg.width,), indices=indices)
    return tape.record("fft_inverse", full, axes=axes, extents=extents)


def block_forward(model: FnoModel, tape: Tape, p: Mapping[str, Variable], v: Variable, layer: int) -> Variable:
    """One operator block.

    original:  σ(Norm(K v) + b + Skip v)
    preact:    h = σ(Norm v);  K h + b + Skip h
    MLP:       v + MLP(out), or out + MLP(out) with double_skip
    """
    block = model.config.block
    prefix = f"block{layer}"
    act = lambda x: tape.record("activation", x, kind=block.activation)  # noqa: E731

    def skip(h: Variable) -> Variable:
        if block.skip_kind == "linear":
            return tape.record("matmul", h, p[f"{prefix}.Q"])
        if block.skip_kind == "soft-gate":
            return h * p[f"{prefix}.gate"]
        return h

    if block.preactivation:
        h = act(_normalize(tape, v, block.norm_kind))
        out = spectral_conv(model, tape, p, h, layer) + p[f"{prefix}.b"] + skip(h)
    else:
        conv = _normalize(tape, spectral_conv(model, tape, p, v, layer), block.norm_kind)
        out = act(conv + p[f"{prefix}.b"] + skip(v))

    if block.mlp_expansion > 0:
        hidden = act(_linear(tape, out, p[f"{prefix}.mlp.W1"], p[f"{prefix}.mlp.b1"]))
        mlp = _linear(tape, hidden, p[f"{prefix}.mlp.W2"], p[f"{prefix}.mlp.b2"])
        return (out if block.double_skip else v) + mlp
    return out


def grid_coordinates(extents: Sequence[int]) -> np.ndarray:
    """Grid points x ∈ [0,1)^d as channels, shape ``(s…, d)``."""
    axes = [np.arange(s) / s for s in extents]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


def forward(model: FnoModel, tape: Tape, p: Mapping[str, Variable], a: Variable) -> Variable:
    """Differentiable forward of a batched input ``(B, s…, d_A)``."""
    cfg = model.config
    if a.ndim != cfg.d + 2:
        raise ShapeError(f"expected a batched {cfg.d}-d field, got shape {a.shape}")
    if a.shape[-1] != cfg.in_channels:
        raise ShapeError(f"input has {a.shape[-1]} channels, model expects {cfg.in_channels}")

    extents = a.shape[1:-1]
    v = a
    if cfg.positional_encoding:
        coords = np.broadcast_to(grid_coordinates(extents), (a.shape[0],) + tuple(extents) + (cfg.d,))
        v = tape.record("concat", v, coords, axis=-1)

    v, widths = domain_pad(tape, v, cfg.domain_padding)

    v = _linear(tape, v, p["lift.W"], p["lift.b"])
    for layer in range(cfg.n_layers):
        v = block_forward(model, tape, p, v, layer)

    v = domain_unpad(tape, v, widths)

    h = tape.record("activation", _linear(tape, v, p["proj.W1"], p["proj.b1"]), kind=cfg.activation)
    return _linear(tape, h, p["proj.W2"], p["proj.b2"])


def model_forward(model: FnoModel, a: np.ndarray) -> np.ndarray:
    """Inference on one field ``(s…, d_A)`` or a batch ``(B, s…, d_A)``."""
    a = np.asarray(a, dtype=np.float64)
    single = a.ndim == model.config.d + 1
    if single:
        a = a[None]
    tape = Tape(enabled=False)
    out = forward(model, tape, model.bind(tape), tape.constant(a)).value
    return out[0] if single else out
