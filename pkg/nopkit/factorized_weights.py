# nopkit/factorized_weights.py
"""The joint spectral weight tensor W of all operator layers, stored dense or
in Tucker, CP or tensor-train form.

W has logical axes ``(α_1, …, α_d, in, out, layer)``; a separable operator
replaces ``in, out`` by a single ``channel`` axis. The layer axis stacks the
C = 2^{d−1} stored corners of every layer, block ``C·layer + corner`` (0-based).
"""

from __future__ import annotations

import math
import string
from dataclasses import dataclass
from typing import ClassVar, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from nopkit import tensor_core
from nopkit.autodiff import Tape, Variable
from nopkit.errors import ShapeError

FORMS = ("dense", "tucker", "cp", "tt")
_SPATIAL_LETTERS = "xyz"
_RANK_LETTERS = string.ascii_uppercase


# ---------------------- LAYOUT ----------------------

@dataclass(frozen=True)
class WeightLayout:
    alpha: Tuple[int, ...]
    width: int
    n_layers: int
    separable: bool = False

    def __post_init__(self):
        if not 1 <= len(self.alpha) <= len(_SPATIAL_LETTERS):
            raise ShapeError(f"unsupported spatial dimension {len(self.alpha)}")
        if min(self.alpha) < 1 or self.width < 1 or self.n_layers < 1:
            raise ShapeError(f"non-positive extents in {self}")

    @property
    def d(self) -> int:
        return len(self.alpha)

    @property
    def corners(self) -> int:
        return tensor_core.corner_count(self.d)

    @property
    def blocks(self) -> int:
        return self.corners * self.n_layers

    @property
    def labels(self) -> Tuple[str, ...]:
        spatial = tuple(f"mode{i}" for i in range(self.d))
        channels = ("channel",) if self.separable else ("in", "out")
        return spatial + channels + ("layer",)

    @property
    def letters(self) -> str:
        channels = "c" if self.separable else "io"
        return _SPATIAL_LETTERS[: self.d] + channels + "l"

    @property
    def extents(self) -> Tuple[int, ...]:
        channels = (self.width,) if self.separable else (self.width, self.width)
        return tuple(self.alpha) + channels + (self.blocks,)

    def block(self, layer: int, corner: int) -> int:
        if not 0 <= layer < self.n_layers:
            raise ShapeError(f"layer {layer} out of range [0, {self.n_layers})")
        if not 0 <= corner < self.corners:
            raise ShapeError(f"corner {corner} out of range [0, {self.corners})")
        return self.corners * layer + corner


Operands = List[Tuple[str, Variable]]


def _check_shape(name: str, array: np.ndarray, expected: Sequence[int]) -> None:
    if tuple(array.shape) != tuple(expected):
        raise ShapeError(f"{name} has shape {array.shape}, expected {tuple(expected)}")


# ---------------------- FORMS ----------------------

class SpectralWeights:
    """Common interface; forms only say how to build W (or one block of it)
    as a list of einsum operands."""

    form: ClassVar[str] = ""
    layout: WeightLayout

    def parameters(self) -> Dict[str, np.ndarray]:
        raise NotImplementedError

    def constants(self) -> Dict[str, np.ndarray]:
        return {}

    def operands(self, tape: Tape, p: Mapping[str, Variable], block: Optional[int]) -> Operands:
        raise NotImplementedError

    def manifest(self) -> Dict[str, str]:
        return {"form": self.form}

    # -- graph builders, shared by inference and training --

    def reconstruct_on(self, tape: Tape, p: Mapping[str, Variable]) -> Variable:
        ops = self.operands(tape, p, None)
        spec = ",".join(sub for sub, _ in ops) + "->" + self.layout.letters
        return tape.record("einsum", *[v for _, v in ops], spec=spec)

    def slice_on(self, tape: Tape, p: Mapping[str, Variable], block: int) -> Variable:
        ops = self.operands(tape, p, block)
        spec = ",".join(sub for sub, _ in ops) + "->" + self.layout.letters[:-1]
        return tape.record("einsum", *[v for _, v in ops], spec=spec)

    def contract_on(self, tape: Tape, p: Mapping[str, Variable], block: int, X: Variable) -> Variable:
        lay = self.layout
        spatial = _SPATIAL_LETTERS[: lay.d]
        x_sub = "n" + spatial + ("c" if lay.separable else "i")
        out_sub = "n" + spatial + ("c" if lay.separable else "o")
        ops = self.operands(tape, p, block) + [(x_sub, X)]
        spec = ",".join(sub for sub, _ in ops) + "->" + out_sub
        return tape.record("einsum", *[v for _, v in ops], spec=spec)

    def bind(self, tape: Tape, requires_grad: bool = False) -> Dict[str, Variable]:
        return {
            name: tape.variable(value, requires_grad=requires_grad, name=name)
            for name, value in self.parameters().items()
        }


@dataclass
class DenseWeights(SpectralWeights):
    layout: WeightLayout
    W: np.ndarray
    form: ClassVar[str] = "dense"

    def __post_init__(self):
        _check_shape("W", self.W, self.layout.extents)

    def parameters(self) -> Dict[str, np.ndarray]:
        return {"spectral.W": self.W}

    def operands(self, tape, p, block):
        W = p["spectral.W"]
        if block is None:
            return [(self.layout.letters, W)]
        return [(self.layout.letters[:-1], tape.record("take", W, index=block, axis=W.ndim - 1))]

    def contract_on(self, tape, p, block, X):
        T = self.slice_on(tape, p, block)
        if self.layout.separable:
            return X * T
        d = self.layout.d
        # (modes, in, out) -> (modes, out, in)
        T = tape.record("transpose", T, axes=tuple(range(d)) + (d + 1, d))
        return tape.record("contract_channels", T, X)


@dataclass
class TuckerWeights(SpectralWeights):
    """Core G with one factor per axis; a ``None`` factor is the identity
    (used for layer-wise compression along the layer axis)."""

    layout: WeightLayout
    core: np.ndarray
    factors: List[Optional[np.ndarray]]
    form: ClassVar[str] = "tucker"

    def __post_init__(self):
        if len(self.factors) != len(self.layout.extents):
            raise ShapeError(f"{len(self.factors)} factors for {len(self.layout.extents)} axes")
        ranks = []
        for label, extent, factor in zip(self.layout.labels, self.layout.extents, self.factors):
            if factor is None:
                ranks.append(extent)
                continue
            if factor.ndim != 2 or factor.shape[0] != extent or not 1 <= factor.shape[1] <= extent:
                raise ShapeError(f"factor '{label}' has shape {factor.shape} for extent {extent}")
            ranks.append(factor.shape[1])
        _check_shape("core", self.core, ranks)

    @property
    def ranks(self) -> Tuple[int, ...]:
        return tuple(self.core.shape)

    def parameters(self) -> Dict[str, np.ndarray]:
        params = {"spectral.core": self.core}
        for label, factor in zip(self.layout.labels, self.factors):
            if factor is not None:
                params[f"spectral.U.{label}"] = factor
        return params

    def manifest(self) -> Dict[str, str]:
        ranks = [0 if f is None else r for f, r in zip(self.factors, self.ranks)]
        return {"form": self.form, "ranks": ",".join(str(r) for r in ranks)}

    def reconstruct_on(self, tape, p):
        # G ×_1 U^(1) ⋯ ×_N U^(N)
        W = p["spectral.core"]
        for mode, (label, factor) in enumerate(zip(self.layout.labels, self.factors)):
            if factor is not None:
                W = tape.record("mode_product", W, p[f"spectral.U.{label}"], mode=mode)
        return W

    def operands(self, tape, p, block):
        letters = self.layout.letters
        core_sub = "".join(
            axis if factor is None else _RANK_LETTERS[k]
            for k, (axis, factor) in enumerate(zip(letters, self.factors))
        )
        core = p["spectral.core"]
        ops: Operands = []
        last = len(letters) - 1
        for k, (label, axis, factor) in enumerate(zip(self.layout.labels, letters, self.factors)):
            if factor is None:
                continue
            U = p[f"spectral.U.{label}"]
            if k == last and block is not None:
                ops.append((_RANK_LETTERS[k], tape.record("take", U, index=block, axis=0)))
            else:
                ops.append((axis + _RANK_LETTERS[k], U))
        if block is not None and self.factors[last] is None:
            core = tape.record("take", core, index=block, axis=last)
            core_sub = core_sub[:-1]
        return [(core_sub, core)] + ops


@dataclass
class CpWeights(SpectralWeights):
    """Weighted sum of R rank-1 terms; λ is held fixed and is not a parameter."""

    layout: WeightLayout
    weights: np.ndarray
    factors: List[np.ndarray]
    form: ClassVar[str] = "cp"

    def __post_init__(self):
        if self.weights.ndim != 1:
            raise ShapeError("CP weights λ must be a vector")
        rank = self.weights.shape[0]
        if len(self.factors) != len(self.layout.extents):
            raise ShapeError(f"{len(self.factors)} factors for {len(self.layout.extents)} axes")
        for label, extent, factor in zip(self.layout.labels, self.layout.extents, self.factors):
            _check_shape(f"factor '{label}'", factor, (extent, rank))

    @property
    def rank(self) -> int:
        return int(self.weights.shape[0])

    def parameters(self) -> Dict[str, np.ndarray]:
        return {f"spectral.U.{label}": f for label, f in zip(self.layout.labels, self.factors)}

    def constants(self) -> Dict[str, np.ndarray]:
        return {"spectral.lambda": self.weights}

    def manifest(self) -> Dict[str, str]:
        return {"form": self.form, "ranks": str(self.rank)}

    def operands(self, tape, p, block):
        letters = self.layout.letters
        ops: Operands = [("R", tape.constant(self.weights))]
        for k, (label, axis) in enumerate(zip(self.layout.labels, letters)):
            U = p[f"spectral.U.{label}"]
            if k == len(letters) - 1 and block is not None:
                ops.append(("R", tape.record("take", U, index=block, axis=0)))
            else:
                ops.append((axis + "R", U))
        return ops


@dataclass
class TtWeights(SpectralWeights):
    """Chain of third-order cores G_k of shape R_k × extent_k × R_{k+1}."""

    layout: WeightLayout
    cores: List[np.ndarray]
    form: ClassVar[str] = "tt"

    def __post_init__(self):
        if len(self.cores) != len(self.layout.extents):
            raise ShapeError(f"{len(self.cores)} cores for {len(self.layout.extents)} axes")
        left = 1
        for k, (extent, core) in enumerate(zip(self.layout.extents, self.cores)):
            if core.ndim != 3 or core.shape[0] != left or core.shape[1] != extent:
                raise ShapeError(f"core {k} has shape {core.shape}, expected ({left}, {extent}, ·)")
            left = core.shape[2]
        if left != 1:
            raise ShapeError("last TT rank must be 1")

    @property
    def ranks(self) -> Tuple[int, ...]:
        return tuple(core.shape[2] for core in self.cores[:-1])

    def parameters(self) -> Dict[str, np.ndarray]:
        return {f"spectral.G.{k}": core for k, core in enumerate(self.cores)}

    def manifest(self) -> Dict[str, str]:
        return {"form": self.form, "ranks": ",".join(str(r) for r in self.ranks)}

    def operands(self, tape, p, block):
        letters = self.layout.letters
        last = len(letters) - 1
        ops: Operands = []
        for k, axis in enumerate(letters):
            G = p[f"spectral.G.{k}"]
            left, right = _RANK_LETTERS[k], _RANK_LETTERS[k + 1]
            if k == last and block is not None:
                ops.append((left + right, tape.record("take", G, index=block, axis=1)))
            else:
                ops.append((left + axis + right, G))
        return ops


# ---------------------- INITIALIZATION ----------------------

def _uniform(rng: np.random.Generator, shape: Sequence[int], scale: float) -> np.ndarray:
    shape = tuple(shape)
    return scale * (rng.uniform(-1.0, 1.0, shape) + 1j * rng.uniform(-1.0, 1.0, shape))


def tucker_ranks(layout: WeightLayout, rank: float, ranks: Optional[Sequence[int]] = None) -> List[int]:
    if ranks:
        if len(ranks) != len(layout.extents):
            raise ShapeError(f"{len(ranks)} Tucker ranks for {len(layout.extents)} axes")
        return [int(r) for r in ranks]
    return [max(1, math.ceil(rank * extent)) for extent in layout.extents]


def cp_rank(layout: WeightLayout, rank: float, ranks: Optional[Sequence[int]] = None) -> int:
    if ranks:
        return int(ranks[0])
    full = math.prod(layout.extents)
    return max(1, int(rank * full / sum(layout.extents)))


def tt_ranks(layout: WeightLayout, rank: float, ranks: Optional[Sequence[int]] = None) -> List[int]:
    ext = layout.extents
    if ranks:
        if len(ranks) != len(ext) - 1:
            raise ShapeError(f"{len(ranks)} TT ranks for {len(ext)} cores")
        return [int(r) for r in ranks]
    out = []
    for k in range(1, len(ext)):
        bound = min(math.prod(ext[:k]), math.prod(ext[k:]))
        out.append(max(1, math.ceil(rank * bound)))
    return out


def init_weights(
    layout: WeightLayout,
    form: str = "dense",
    rank: float = 1.0,
    ranks: Optional[Sequence[int]] = None,
    rng: Optional[np.random.Generator] = None,
) -> SpectralWeights:
    """Draw weights i.i.d. from a centred uniform law, scale-matched across forms."""
    rng = rng if rng is not None else np.random.default_rng()
    if not 0.0 < rank <= 1.0:
        raise ShapeError(f"rank fraction must be in (0, 1], got {rank}")
    base = 1.0 / (layout.width * layout.width)

    if form == "dense":
        return DenseWeights(layout, _uniform(rng, layout.extents, base))

    if form == "tucker":
        rs = tucker_ranks(layout, rank, ranks)
        last = len(rs) - 1
        factor_shapes = [
            None if (k == last and r == 0) else (extent, r)
            for k, (extent, r) in enumerate(zip(layout.extents, rs))
        ]
        core_shape = [layout.extents[k] if s is None else s[1] for k, s in enumerate(factor_shapes)]
        n_arrays = 1 + sum(s is not None for s in factor_shapes)
        scale = base ** (1.0 / n_arrays)
        core = _uniform(rng, core_shape, scale)
        factors = [None if s is None else _uniform(rng, s, scale) for s in factor_shapes]
        return TuckerWeights(layout, core, factors)

    if form == "cp":
        r = cp_rank(layout, rank, ranks)
        scale = base ** (1.0 / len(layout.extents))
        factors = [_uniform(rng, (extent, r), scale) for extent in layout.extents]
        return CpWeights(layout, np.ones(r), factors)

    if form == "tt":
        inner = tt_ranks(layout, rank, ranks)
        bounds = [1] + inner + [1]
        scale = base ** (1.0 / len(layout.extents))
        cores = [
            _uniform(rng, (bounds[k], extent, bounds[k + 1]), scale)
            for k, extent in enumerate(layout.extents)
        ]
        return TtWeights(layout, cores)

    raise ShapeError(f"unknown factorization form '{form}', expected one of {FORMS}")


def weights_from_arrays(
    layout: WeightLayout, form: str, arrays: Mapping[str, np.ndarray]
) -> SpectralWeights:
    """Rebuild a weight object from its named arrays (checkpoint loading).

    Non-finite entries raise :class:`ShapeError`.
    """
    def get(name: str) -> np.ndarray:
        return tensor_core.as_ctensor(arrays[name])

    if form == "dense":
        return DenseWeights(layout, get("spectral.W"))
    if form == "tucker":
        factors = [
            get(f"spectral.U.{label}") if f"spectral.U.{label}" in arrays else None
            for label in layout.labels
        ]
        return TuckerWeights(layout, get("spectral.core"), factors)
    if form == "cp":
        factors = [get(f"spectral.U.{label}") for label in layout.labels]
        return CpWeights(layout, tensor_core.as_rtensor(arrays["spectral.lambda"]), factors)
    if form == "tt":
        return TtWeights(layout, [get(f"spectral.G.{k}") for k in range(len(layout.extents))])
    raise ShapeError(f"unknown factorization form '{form}'")


# ---------------------- OPERATIONS ----------------------

def _constants_of(weights: SpectralWeights) -> Tuple[Tape, Dict[str, Variable]]:
    tape = Tape(enabled=False)
    return tape, weights.bind(tape)


def reconstruct(weights: SpectralWeights) -> DenseWeights:
    if isinstance(weights, DenseWeights):
        return weights
    tape, p = _constants_of(weights)
    return DenseWeights(weights.layout, np.asarray(weights.reconstruct_on(tape, p).value))


def slice_layer(weights: SpectralWeights, layer: int, corner: int) -> np.ndarray:
    """One corner block of one layer, shape ``(α_1, …, α_d, in, out)``
    (``(α_1, …, α_d, channel)`` when separable), without materialising W."""
    block = weights.layout.block(layer, corner)
    tape, p = _constants_of(weights)
    return np.asarray(weights.slice_on(tape, p, block).value)


def factorized_contract(weights: SpectralWeights, layer: int, corner: int, Xhat: np.ndarray) -> np.ndarray:
    """Contract spectra ``(…, α_1, …, α_d, n)`` with one block of W.

    Leading axes of ``Xhat`` are batch axes.
    """
    lay = weights.layout
    Xhat = np.asarray(Xhat, dtype=np.complex128)
    if Xhat.ndim < lay.d + 1 or Xhat.shape[-(lay.d + 1):-1] != tuple(lay.alpha):
        raise ShapeError(f"spectrum modes {Xhat.shape} do not match α = {lay.alpha}")
    if Xhat.shape[-1] != lay.width:
        raise ShapeError(f"spectrum has {Xhat.shape[-1]} channels, weights expect {lay.width}")
    lead = Xhat.shape[: -(lay.d + 1)]
    batched = Xhat.reshape((-1,) + Xhat.shape[-(lay.d + 1):])
    block = lay.block(layer, corner)
    tape, p = _constants_of(weights)
    out = weights.contract_on(tape, p, block, tape.constant(batched)).value
    return np.asarray(out).reshape(lead + out.shape[1:])


def kernel_at_point(weights: SpectralWeights, layer: int, x: Sequence[float], j1: int, j2: int) -> complex:
    """Σ over retained modes of m(k)·W(k, j1, j2)·exp(2πi k·x), both stored corners.

    m(k) is 2 for interior half-spectrum columns (their conjugate partner is
    implied) and 1 for column 0; the real part is the physical kernel value.
    """
    lay = weights.layout
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (lay.d,):
        raise ShapeError(f"point must have {lay.d} coordinates")
    if not (0 <= j1 < lay.width and 0 <= j2 < lay.width):
        raise ShapeError(f"channel indices ({j1}, {j2}) out of range")
    total = 0.0 + 0.0j
    for corner in range(lay.corners):
        block = slice_layer(weights, layer, corner)
        if lay.separable:
            if j1 != j2:
                continue
            values = block[..., j1]
        else:
            values = block[..., j1, j2]
        freqs = tensor_core.corner_frequencies(lay.alpha, corner)
        grids = np.meshgrid(*freqs, indexing="ij")
        phase = sum(g * xi for g, xi in zip(grids, x))
        multiplicity = np.where(grids[-1] == 0, 1.0, 2.0)
        total += complex(np.sum(multiplicity * values * np.exp(2j * np.pi * phase)))
    return total


def param_count(obj) -> int:
    """Learnable values of weights or a whole model; a complex value counts once."""
    return int(sum(np.asarray(a).size for a in obj.parameters().values()))


def dense_param_count(layout: WeightLayout) -> int:
    return math.prod(layout.extents)


def spectral_param_count(
    layout: WeightLayout, form: str, rank: float = 1.0, ranks: Optional[Sequence[int]] = None
) -> int:
    """Stored values of a form, computed from the rank rule without allocating."""
    ext = layout.extents
    if form == "dense":
        return dense_param_count(layout)
    if form == "tucker":
        rs = tucker_ranks(layout, rank, ranks)
        last = len(rs) - 1
        core = math.prod(ext[k] if (k == last and r == 0) else r for k, r in enumerate(rs))
        return core + sum(e * r for k, (e, r) in enumerate(zip(ext, rs)) if not (k == last and r == 0))
    if form == "cp":
        return cp_rank(layout, rank, ranks) * sum(ext)
    if form == "tt":
        bounds = [1] + tt_ranks(layout, rank, ranks) + [1]
        return sum(bounds[k] * e * bounds[k + 1] for k, e in enumerate(ext))
    raise ShapeError(f"unknown factorization form '{form}'")


def compression_ratio(factorized, dense_reference) -> float:
    return param_count(dense_reference) / param_count(factorized)


def closed_form_param_count(d: int, alpha: int, m: int, n: int) -> int:
    """Closed form (2^d α^d + 1)·m·n + n of one operator layer with Q and b."""
    return (2**d * alpha**d + 1) * m * n + n
