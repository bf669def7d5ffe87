# nopkit/tensor_core.py
"""Dense tensor kernel: real/complex arrays, half-spectrum FFTs, channel
contraction, n-mode products and band-limited resampling.

Real tensors are ``float64`` arrays and complex tensors ``complex128`` arrays,
both row-major. Fields are channels-last, ``(s_1, ..., s_d, c)``, optionally with
a leading batch axis.
"""

from __future__ import annotations

import string
from typing import List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import NDArray

from nopkit.errors import ShapeError

Shape = Tuple[int, ...]
RTensor = NDArray[np.float64]
CTensor = NDArray[np.complex128]


# ---------------------- VALIDATION ----------------------

def element_count(shape: Sequence[int]) -> int:
    count = 1
    for extent in shape:
        if int(extent) < 1:
            raise ShapeError(f"extent must be >= 1, got {tuple(shape)}")
        count *= int(extent)
    return count


def as_rtensor(x) -> RTensor:
    arr = np.ascontiguousarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ShapeError("real tensor holds non-finite values")
    return arr


def as_ctensor(x) -> CTensor:
    arr = np.ascontiguousarray(x, dtype=np.complex128)
    if not np.all(np.isfinite(arr)):
        raise ShapeError("complex tensor holds non-finite values")
    return arr


def normalize_axes(ndim: int, axes: Sequence[int]) -> Tuple[int, ...]:
    out = []
    for axis in axes:
        axis = int(axis)
        if not -ndim <= axis < ndim:
            raise ShapeError(f"axis {axis} out of range for a {ndim}-d tensor")
        out.append(axis % ndim)
    if len(set(out)) != len(out):
        raise ShapeError(f"repeated axes {tuple(axes)}")
    if not out:
        raise ShapeError("at least one spatial axis is required")
    return tuple(out)


# ---------------------- FFT ----------------------

def half_spectrum_multiplicity(n: int) -> RTensor:
    """How many full-spectrum coefficients each half-spectrum column stands for.

    Column 0 and (for even n) the Nyquist column are their own conjugates;
    every interior column represents a conjugate pair.
    """
    weights = np.full(n // 2 + 1, 2.0)
    weights[0] = 1.0
    if n % 2 == 0:
        weights[-1] = 1.0
    return weights


def fft_forward(x: RTensor, spatial_dims: Sequence[int]) -> CTensor:
    """Unnormalised real-to-complex FFT; the last listed axis keeps ⌊s/2⌋+1 columns."""
    x = np.asarray(x, dtype=np.float64)
    axes = normalize_axes(x.ndim, spatial_dims)
    for axis in axes:
        if x.shape[axis] < 2:
            raise ShapeError(f"spatial extent along axis {axis} must be >= 2")
    return np.fft.rfftn(x, axes=axes)


def fft_inverse(X: CTensor, spatial_dims: Sequence[int], out_extents: Sequence[int]) -> RTensor:
    """Inverse of :func:`fft_forward` with 1/N normalisation."""
    X = np.asarray(X, dtype=np.complex128)
    axes = normalize_axes(X.ndim, spatial_dims)
    out_extents = tuple(int(s) for s in out_extents)
    if len(out_extents) != len(axes):
        raise ShapeError(f"{len(out_extents)} output extents for {len(axes)} spatial axes")
    for axis, extent in zip(axes[:-1], out_extents[:-1]):
        if X.shape[axis] != extent:
            raise ShapeError(f"axis {axis}: spectrum extent {X.shape[axis]} != {extent}")
    if X.shape[axes[-1]] != out_extents[-1] // 2 + 1:
        raise ShapeError(
            f"half-spectrum extent {X.shape[axes[-1]]} inconsistent with output extent {out_extents[-1]}"
        )
    return np.fft.irfftn(X, s=out_extents, axes=axes)


def expand_half_spectrum(X: CTensor, spatial_dims: Sequence[int], last_extent: int) -> CTensor:
    """Rebuild the full spectrum from a half-spectrum by conjugate symmetry."""
    X = np.asarray(X, dtype=np.complex128)
    axes = normalize_axes(X.ndim, spatial_dims)
    last = axes[-1]
    h = X.shape[last]
    if h != last_extent // 2 + 1:
        raise ShapeError(f"half-spectrum extent {h} inconsistent with extent {last_extent}")

    mirrored = np.conj(X)
    for axis in axes[:-1]:
        mirrored = np.roll(np.flip(mirrored, axis=axis), 1, axis=axis)
    source = last_extent - np.arange(h, last_extent)
    full_shape = list(X.shape)
    full_shape[last] = last_extent
    full = np.empty(full_shape, dtype=np.complex128)
    lead = (slice(None),) * last
    full[lead + (slice(0, h),)] = X
    full[lead + (slice(h, last_extent),)] = np.take(mirrored, source, axis=last)
    return full


# ---------------------- CORNER BLOCKS ----------------------

def corner_count(d: int) -> int:
    return 2 ** (d - 1)


def check_modes(extents: Sequence[int], alpha: Sequence[int]) -> None:
    if len(extents) != len(alpha):
        raise ShapeError(f"{len(alpha)} mode counts for a {len(extents)}-d grid")
    for s, a in zip(extents, alpha):
        if a < 1 or a > s // 2:
            raise ShapeError(f"retained modes {a} exceed Nyquist for extent {s}")


def corner_slices(extents: Sequence[int], alpha: Sequence[int], corner: int) -> Tuple[slice, ...]:
    """Index of one stored corner inside the half-spectrum layout.

    Bit i of ``corner`` selects the low band [0, α_i) or the high band
    (s_i − α_i, s_i) along the i-th full-spectrum axis; the half-spectrum axis
    always keeps [0, α_d).
    """
    d = len(extents)
    if not 0 <= corner < corner_count(d):
        raise ShapeError(f"corner {corner} out of range for d={d}")
    out = []
    for i in range(d - 1):
        s, a = extents[i], alpha[i]
        out.append(slice(s - a, s) if (corner >> i) & 1 else slice(0, a))
    out.append(slice(0, alpha[-1]))
    return tuple(out)


def corner_frequencies(alpha: Sequence[int], corner: int) -> List[NDArray[np.int64]]:
    """Signed integer frequencies of a corner, axis by axis."""
    d = len(alpha)
    freqs = []
    for i in range(d - 1):
        a = alpha[i]
        freqs.append(np.arange(-a, 0) if (corner >> i) & 1 else np.arange(a))
    freqs.append(np.arange(alpha[-1]))
    return freqs


# ---------------------- CONTRACTIONS ----------------------

def contract_channels(T: CTensor, Xhat: CTensor) -> CTensor:
    """out(l, j) = Σ_i T(l, j, i) · Xhat(l, i), with optional batch axes on Xhat."""
    T = np.asarray(T)
    Xhat = np.asarray(Xhat)
    d = T.ndim - 2
    if d < 1:
        raise ShapeError("weight tensor needs at least one mode axis")
    if Xhat.ndim < d + 1 or Xhat.shape[-(d + 1):-1] != T.shape[:d]:
        raise ShapeError(f"mode extents {Xhat.shape} do not match weights {T.shape}")
    if Xhat.shape[-1] != T.shape[-1]:
        raise ShapeError(f"channel mismatch: input has {Xhat.shape[-1]}, weights expect {T.shape[-1]}")
    return np.einsum(contract_channels_spec(d), T, Xhat)


def contract_channels_spec(d: int) -> str:
    modes = string.ascii_lowercase[:d]
    return f"{modes}yz,...{modes}z->...{modes}y"


def mode_product(X: CTensor, M: CTensor, mode: int) -> CTensor:
    """Standard n-mode product ``X ×_mode M``."""
    X = np.asarray(X)
    M = np.asarray(M)
    (mode,) = normalize_axes(X.ndim, [mode])
    if M.ndim != 2 or M.shape[1] != X.shape[mode]:
        raise ShapeError(f"matrix {M.shape} cannot multiply mode {mode} of extent {X.shape[mode]}")
    return np.moveaxis(np.tensordot(M, X, axes=(1, mode)), 0, mode)


# ---------------------- RESAMPLING ----------------------

def _resample_axis(x: RTensor, m: int, axis: int) -> RTensor:
    n = x.shape[axis]
    if m == n:
        return x
    X = np.fft.fft(x, axis=axis)
    Y_shape = list(x.shape)
    Y_shape[axis] = m
    Y = np.zeros(Y_shape, dtype=np.complex128)

    keep = min(n, m)
    half = (keep - 1) // 2

    def at(arr, idx):
        index = [slice(None)] * arr.ndim
        index[axis] = idx
        return tuple(index)

    Y[at(Y, slice(0, half + 1))] = X[at(X, slice(0, half + 1))]
    if half > 0:
        Y[at(Y, slice(m - half, m))] = X[at(X, slice(n - half, n))]
    if keep % 2 == 0:
        nyq = keep // 2
        if n < m:
            # the source Nyquist coefficient is split across ±n/2
            Y[at(Y, nyq)] = 0.5 * X[at(X, nyq)]
            Y[at(Y, m - nyq)] = 0.5 * X[at(X, nyq)]
        else:
            Y[at(Y, nyq)] = X[at(X, nyq)] + X[at(X, n - nyq)]
    return np.fft.ifft(Y, axis=axis).real * (m / n)


def resample_spectral(x: RTensor, new_extents: Sequence[int], axes: Optional[Sequence[int]] = None) -> RTensor:
    """Band-limited up/down-sampling by zero-padding or truncating the spectrum.

    Point values of band-limited fields are preserved.
    """
    x = np.asarray(x, dtype=np.float64)
    if axes is None:
        axes = range(len(new_extents))
    axes = normalize_axes(x.ndim, axes)
    if len(axes) != len(new_extents):
        raise ShapeError(f"{len(new_extents)} extents for {len(axes)} axes")
    for axis, m in zip(axes, new_extents):
        if int(m) < 2:
            raise ShapeError(f"resampled extent must be >= 2, got {m}")
        x = _resample_axis(x, int(m), axis)
    return np.ascontiguousarray(x)
