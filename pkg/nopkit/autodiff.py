# nopkit/autodiff.py
"""Tape-based reverse-mode differentiation over numpy arrays.

Every primitive is registered with a forward rule and a vector-Jacobian
product. Complex values are differentiated as independent (re, im) pairs: the
cotangent of a complex array is ``∂L/∂Re + i·∂L/∂Im`` and the cotangent of a
real array is real.
"""

from __future__ import annotations

import string
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from nopkit import tensor_core
from nopkit.errors import ContractViolation

VJP = Callable[..., Tuple[Optional[np.ndarray], ...]]


@dataclass(frozen=True)
class Primitive:
    name: str
    forward: Callable[..., np.ndarray]
    vjp: VJP


PRIMITIVES: Dict[str, Primitive] = {}


def _register(name: str, forward: Callable[..., np.ndarray], vjp: VJP) -> None:
    PRIMITIVES[name] = Primitive(name, forward, vjp)


# ---------------------- TAPE ----------------------

@dataclass
class Node:
    node_id: int
    primitive: Optional[Primitive]
    inputs: Tuple[int, ...] = ()
    input_values: Tuple[np.ndarray, ...] = ()
    input_requires_grad: Tuple[bool, ...] = ()
    output: Optional[np.ndarray] = None
    params: Dict[str, Any] = field(default_factory=dict)
    name: Optional[str] = None


class Variable:
    __slots__ = ("value", "node_id", "requires_grad", "tape")

    def __init__(self, value: np.ndarray, node_id: int, requires_grad: bool, tape: "Tape"):
        self.value = value
        self.node_id = node_id
        self.requires_grad = requires_grad
        self.tape = tape

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    @property
    def ndim(self) -> int:
        return self.value.ndim

    def __add__(self, other):
        return self.tape.record("add", self, other)

    def __radd__(self, other):
        return self.tape.record("add", other, self)

    def __sub__(self, other):
        return self.tape.record("sub", self, other)

    def __rsub__(self, other):
        return self.tape.record("sub", other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return self.tape.record("scale", self, factor=other)
        return self.tape.record("multiply", self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return self.tape.record("scale", self, factor=-1.0)

    def __repr__(self) -> str:
        return f"Variable(id={self.node_id}, shape={self.value.shape}, dtype={self.value.dtype})"


class Tape:
    """Records primitive applications of one forward pass.

    With ``enabled=False`` nothing is recorded and every variable is a
    constant, which is how inference runs through the same code path.
    """

    def __init__(self, enabled: bool = True):
        self.enabled = enabled
        self.nodes: List[Node] = []
        self._next_id = 0

    def _new_id(self) -> int:
        self._next_id += 1
        return self._next_id

    def variable(self, value, requires_grad: bool = True, name: Optional[str] = None) -> Variable:
        value = np.asarray(value)
        requires_grad = requires_grad and self.enabled
        var = Variable(value, self._new_id(), requires_grad, self)
        if requires_grad:
            self.nodes.append(Node(var.node_id, None, output=value, name=name))
        return var

    def constant(self, value) -> Variable:
        return Variable(np.asarray(value), self._new_id(), False, self)

    def record(self, primitive: str, *inputs, **params) -> Variable:
        prim = PRIMITIVES.get(primitive)
        if prim is None:
            raise ContractViolation(f"unsupported primitive '{primitive}'")

        variables = []
        for item in inputs:
            if isinstance(item, Variable):
                if item.tape is not self:
                    raise ContractViolation("variable belongs to a different tape")
                variables.append(item)
            else:
                variables.append(self.constant(item))

        values = tuple(v.value for v in variables)
        output = prim.forward(*values, **params)
        requires_grad = self.enabled and any(v.requires_grad for v in variables)
        var = Variable(output, self._new_id(), requires_grad, self)
        if requires_grad:
            self.nodes.append(
                Node(
                    node_id=var.node_id,
                    primitive=prim,
                    inputs=tuple(v.node_id for v in variables),
                    input_values=values,
                    input_requires_grad=tuple(v.requires_grad for v in variables),
                    output=output,
                    params=params,
                )
            )
        return var

    def backward(self, output: Variable, seed: Optional[np.ndarray] = None) -> Dict[int, np.ndarray]:
        """Gradients of ``output`` for every requires-grad leaf, keyed by node id."""
        if output.tape is not self:
            raise ContractViolation("output was not produced on this tape")
        if seed is None:
            if output.value.size != 1:
                raise ContractViolation(f"backward needs a scalar output, got shape {output.value.shape}")
            seed = np.ones_like(output.value)
        else:
            seed = np.asarray(seed)
            if seed.shape != output.value.shape:
                raise ContractViolation(f"seed shape {seed.shape} != output shape {output.value.shape}")

        cotangents: Dict[int, np.ndarray] = {}
        if output.requires_grad:
            cotangents[output.node_id] = seed

        leaves: Dict[int, np.ndarray] = {}
        for node in reversed(self.nodes):
            g = cotangents.pop(node.node_id, None)
            if node.primitive is None:
                leaves[node.node_id] = g if g is not None else np.zeros_like(node.output)
                continue
            if g is None:
                continue
            parts = node.primitive.vjp(g, node.input_values, node.output, **node.params)
            for input_id, value, needed, part in zip(
                node.inputs, node.input_values, node.input_requires_grad, parts
            ):
                if not needed or part is None:
                    continue
                part = _fit_cotangent(part, value)
                if input_id in cotangents:
                    cotangents[input_id] = cotangents[input_id] + part
                else:
                    cotangents[input_id] = part
        return leaves

    def gradients(self, output: Variable, variables: Mapping[str, Variable]) -> Dict[str, np.ndarray]:
        by_id = self.backward(output)
        return {
            name: by_id.get(var.node_id, np.zeros_like(var.value))
            for name, var in variables.items()
        }


def merge_gradients(parts: Sequence[Mapping[str, np.ndarray]]) -> Dict[str, np.ndarray]:
    """Ordered summation of gradient maps from independent tapes."""
    merged: Dict[str, np.ndarray] = {}
    for part in parts:
        for name, grad in part.items():
            merged[name] = merged[name] + grad if name in merged else grad.copy()
    return merged


def _fit_cotangent(g: np.ndarray, value: np.ndarray) -> np.ndarray:
    g = np.asarray(g)
    if g.shape != value.shape:
        extra = g.ndim - value.ndim
        if extra > 0:
            g = g.sum(axis=tuple(range(extra)))
        axes = tuple(i for i, (gs, vs) in enumerate(zip(g.shape, value.shape)) if vs == 1 and gs != 1)
        if axes:
            g = g.sum(axis=axes, keepdims=True)
        if g.shape != value.shape:
            raise ContractViolation(f"cotangent shape {g.shape} does not fit input {value.shape}")
    if not np.iscomplexobj(value) and np.iscomplexobj(g):
        g = g.real
    return g


# ---------------------- ELEMENTWISE ----------------------

_register("add", lambda a, b: a + b, lambda g, ins, out: (g, g))
_register("sub", lambda a, b: a - b, lambda g, ins, out: (g, -g))
_register(
    "scale",
    lambda a, *, factor: a * factor,
    lambda g, ins, out, *, factor: (g * np.conj(factor),),
)
_register(
    "multiply",
    lambda a, b: a * b,
    lambda g, ins, out: (g * np.conj(ins[1]), g * np.conj(ins[0])),
)
_register(
    "abs2",
    lambda z: (z * np.conj(z)).real,
    lambda g, ins, out: (2.0 * g * ins[0],),
)
_register("sqrt", np.sqrt, lambda g, ins, out: (g / (2.0 * out),))

_GELU_C = np.sqrt(2.0 / np.pi)
_GELU_K = 0.044715


def gelu(x: np.ndarray) -> np.ndarray:
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + _GELU_K * x**3)))


def gelu_derivative(x: np.ndarray) -> np.ndarray:
    t = np.tanh(_GELU_C * (x + _GELU_K * x**3))
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 3.0 * _GELU_K * x * x)


def _activation_fwd(x, *, kind):
    if kind == "gelu":
        return gelu(x)
    if kind == "identity":
        return x
    raise ContractViolation(f"unknown activation '{kind}'")


def _activation_vjp(g, ins, out, *, kind):
    if kind == "identity":
        return (g,)
    return (g * gelu_derivative(ins[0]),)


_register("activation", _activation_fwd, _activation_vjp)


# ---------------------- NORMALIZATION ----------------------

NORM_EPS = 1e-5


def _normalize(x, axes, eps):
    mean = x.mean(axis=axes, keepdims=True)
    centered = x - mean
    sigma = np.sqrt((centered**2).mean(axis=axes, keepdims=True) + eps)
    return centered / sigma, sigma


def _instance_axes(x):
    return tuple(range(1, x.ndim - 1))


def _layer_axes(x):
    return tuple(range(1, x.ndim))


def _make_norm(axes_of):
    def fwd(x, *, eps=NORM_EPS):
        return _normalize(x, axes_of(x), eps)[0]

    def vjp(g, ins, out, *, eps=NORM_EPS):
        axes = axes_of(ins[0])
        _, sigma = _normalize(ins[0], axes, eps)
        mean_g = g.mean(axis=axes, keepdims=True)
        mean_gy = (g * out).mean(axis=axes, keepdims=True)
        return ((g - mean_g - out * mean_gy) / sigma,)

    return fwd, vjp


_register("instance_normalize", *_make_norm(_instance_axes))
_register("layer_normalize", *_make_norm(_layer_axes))


# ---------------------- SHAPE OPS ----------------------

def _place(shape, dtype, index, block):
    out = np.zeros(shape, dtype=dtype)
    out[index] = block
    return out


_register(
    "pad",
    lambda x, *, widths: np.pad(x, widths),
    lambda g, ins, out, *, widths: (
        g[tuple(slice(lo, g.shape[i] - hi) for i, (lo, hi) in enumerate(widths))],
    ),
)

_crop_vjp = lambda g, ins, out, *, index: (_place(ins[0].shape, g.dtype, index, g),)  # noqa: E731
_register("crop", lambda x, *, index: x[index].copy(), _crop_vjp)
# spectral truncation is a crop of the half-spectrum onto one stored corner
_register("truncate", lambda x, *, index: x[index].copy(), _crop_vjp)


def _embed_fwd(*blocks, shape, indices):
    dtype = np.result_type(*blocks)
    out = np.zeros(shape, dtype=dtype)
    for block, index in zip(blocks, indices):
        out[index] += block
    return out


_register(
    "embed",
    _embed_fwd,
    lambda g, ins, out, *, shape, indices: tuple(g[index] for index in indices),
)


def _sum_vjp(g, ins, out, *, axis=None, keepdims=False):
    x = ins[0]
    if axis is not None and not keepdims:
        axes = (axis,) if np.isscalar(axis) else tuple(axis)
        g = np.expand_dims(g, tuple(a % x.ndim for a in axes))
    return (np.broadcast_to(g, x.shape),)


_register("sum", lambda x, *, axis=None, keepdims=False: np.sum(x, axis=axis, keepdims=keepdims), _sum_vjp)


def _take_vjp(g, ins, out, *, index, axis):
    x = ins[0]
    grad = np.zeros(x.shape, dtype=np.result_type(x, g))
    if np.ndim(index) == 0:
        np.moveaxis(grad, axis, 0)[index] = g
    else:
        np.add.at(np.moveaxis(grad, axis, 0), np.asarray(index), np.moveaxis(g, axis, 0))
    return (grad,)


_register("take", lambda x, *, index, axis: np.take(x, index, axis=axis), _take_vjp)
_register(
    "transpose",
    lambda x, *, axes: np.transpose(x, axes),
    lambda g, ins, out, *, axes: (np.transpose(g, np.argsort(axes)),),
)


def _concat_vjp(g, ins, out, *, axis):
    bounds = np.cumsum([x.shape[axis] for x in ins])[:-1]
    return tuple(np.split(g, bounds, axis=axis))


_register("concat", lambda *xs, axis: np.concatenate(xs, axis=axis), _concat_vjp)


# ---------------------- LINEAR ALGEBRA ----------------------

def _matmul_vjp(g, ins, out):
    x, w = ins
    gx = g @ np.conj(w).T
    gw = np.conj(x).reshape(-1, x.shape[-1]).T @ g.reshape(-1, g.shape[-1])
    return gx, gw


_register("matmul", lambda x, w: x @ w, _matmul_vjp)


def _check_einsum_spec(spec: str) -> Tuple[List[str], str]:
    if "->" not in spec or "." in spec:
        raise ContractViolation(f"einsum spec must be explicit without ellipsis: '{spec}'")
    lhs, rhs = spec.split("->")
    operands = lhs.split(",")
    for sub in operands:
        if len(set(sub)) != len(sub):
            raise ContractViolation(f"repeated index inside operand '{sub}'")
    return operands, rhs


def _einsum_fwd(*operands, spec):
    _check_einsum_spec(spec)
    return np.einsum(spec, *operands, optimize=True)


def _einsum_vjp(g, ins, out, *, spec):
    subs, rhs = _check_einsum_spec(spec)
    grads = []
    for k, target in enumerate(subs):
        other_subs = [s for j, s in enumerate(subs) if j != k]
        other_vals = [np.conj(v) for j, v in enumerate(ins) if j != k]
        available = set(rhs).union(*[set(s) for s in other_subs])
        kept = "".join(c for c in target if c in available)
        sub_spec = ",".join([rhs] + other_subs) + "->" + kept
        gk = np.einsum(sub_spec, g, *other_vals, optimize=True)
        if kept != target:
            # indices summed within this operand alone broadcast back
            shape = [n if c in available else 1 for c, n in zip(target, ins[k].shape)]
            gk = np.broadcast_to(gk.reshape(shape), ins[k].shape)
        grads.append(gk)
    return tuple(grads)


_register("einsum", _einsum_fwd, _einsum_vjp)


def _contract_vjp(g, ins, out):
    T, X = ins
    d = T.ndim - 2
    modes = string.ascii_lowercase[:d]
    Xb = X.reshape((-1,) + X.shape[-(d + 1):])
    gb = g.reshape((-1,) + g.shape[-(d + 1):])
    gT = np.einsum(f"B{modes}y,B{modes}z->{modes}yz", gb, np.conj(Xb), optimize=True)
    gX = np.einsum(f"{modes}yz,B{modes}y->B{modes}z", np.conj(T), gb, optimize=True)
    return gT, gX.reshape(X.shape)


_register("contract_channels", tensor_core.contract_channels, _contract_vjp)


def _unfold(x, mode):
    return np.moveaxis(x, mode, 0).reshape(x.shape[mode], -1)


def _mode_product_vjp(g, ins, out, *, mode):
    X, M = ins
    gX = tensor_core.mode_product(g, np.conj(M).T, mode)
    gM = _unfold(g, mode) @ np.conj(_unfold(X, mode)).T
    return gX, gM


_register(
    "mode_product",
    lambda X, M, *, mode: tensor_core.mode_product(X, M, mode),
    _mode_product_vjp,
)


# ---------------------- FFT ----------------------

def _last_axis_weights(ndim, axes, multiplicity):
    shape = [1] * ndim
    shape[axes[-1]] = multiplicity.size
    return multiplicity.reshape(shape)


def _fft_forward_vjp(g, ins, out, *, axes):
    x = ins[0]
    axes = tensor_core.normalize_axes(x.ndim, axes)
    extents = [x.shape[a] for a in axes]
    n_total = float(np.prod(extents))
    weights = _last_axis_weights(g.ndim, axes, 1.0 / tensor_core.half_spectrum_multiplicity(extents[-1]))
    return (n_total * np.fft.irfftn(g * weights, s=extents, axes=axes),)


def _fft_inverse_vjp(g, ins, out, *, axes, extents):
    axes = tensor_core.normalize_axes(g.ndim, axes)
    n_total = float(np.prod(extents))
    weights = _last_axis_weights(g.ndim, axes, tensor_core.half_spectrum_multiplicity(extents[-1]))
    return (np.fft.rfftn(g, axes=axes) * weights / n_total,)


_register("fft_forward", lambda x, *, axes: tensor_core.fft_forward(x, axes), _fft_forward_vjp)
_register(
    "fft_inverse",
    lambda X, *, axes, extents: tensor_core.fft_inverse(X, axes, extents),
    _fft_inverse_vjp,
)
