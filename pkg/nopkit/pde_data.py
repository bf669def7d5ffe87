# nopkit/pde_data.py
"""Benchmark data: Gaussian random fields on the torus and pseudo-spectral
solvers for viscous Burgers (1-d) and Navier–Stokes in vorticity form (2-d)."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, Sequence, Tuple, Union

import numpy as np

from nopkit.errors import ConfigError, ShapeError, SolverError
from nopkit.multigrid import parallel_map
from nopkit.tensor_core import as_rtensor

logger = logging.getLogger(__name__)

SeedLike = Union[int, np.random.SeedSequence]
PDE_KINDS = ("burgers", "ns")


# ---------------------- DATA CLASSES ----------------------

@dataclass(frozen=True)
class GrfSpec:
    """Covariance scale·(−Δ + shift·I)^(−power) on the 2π-torus."""

    scale: float = 27.0
    shift: float = 9.0
    power: float = 4.0
    d: int = 2
    exclude_zero_mode: bool = True

    def __post_init__(self):
        if self.scale < 0 or self.power <= 0:
            raise ConfigError("grf.scale must be >= 0 and grf.power > 0")
        if self.d not in (1, 2):
            raise ConfigError(f"grf.d must be 1 or 2, got {self.d}")

    @classmethod
    def navier_stokes(cls) -> "GrfSpec":
        return cls(scale=27.0, shift=9.0, power=4.0, d=2)

    @classmethod
    def burgers(cls) -> "GrfSpec":
        return cls(scale=3.0**2.5, shift=9.0, power=3.0, d=1)

    def eigenvalues(self, k2: np.ndarray) -> np.ndarray:
        """λ_k for squared integer wavenumbers |k|²."""
        base = k2 + self.shift
        with np.errstate(divide="ignore"):
            lam = np.where(base > 0, self.scale * np.abs(base) ** (-self.power), 0.0)
        if self.exclude_zero_mode:
            lam = np.where(k2 == 0, 0.0, lam)
        return lam


@dataclass(frozen=True)
class BurgersConfig:
    nu: float = 0.01
    T: float = 0.5
    grid: int = 256
    dt: float = 1e-3
    length: float = 2 * math.pi

    def __post_init__(self):
        if self.nu <= 0 or self.T <= 0 or self.dt <= 0 or self.length <= 0:
            raise ConfigError("burgers.nu, T, dt and length must be positive")
        if self.grid < 4:
            raise ConfigError("burgers.grid must be >= 4")


@dataclass(frozen=True)
class NsConfig:
    Re: float = 500.0
    T: float = 5.0
    grid: int = 64
    dt: float = 0.01
    dealias: bool = True
    scheme: str = "imex"
    length: float = 2 * math.pi

    def __post_init__(self):
        if self.Re <= 0 or self.T <= 0 or self.dt <= 0 or self.length <= 0:
            raise ConfigError("ns.Re, T, dt and length must be positive")
        if self.scheme not in ("imex", "heun"):
            raise ConfigError(f"ns.scheme must be 'imex' or 'heun', got '{self.scheme}'")
        if self.grid < 4:
            raise ConfigError("ns.grid must be >= 4")


@dataclass
class Dataset:
    inputs: np.ndarray
    outputs: np.ndarray
    metadata: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.inputs.shape[0] != self.outputs.shape[0]:
            raise ShapeError(f"{self.inputs.shape[0]} inputs but {self.outputs.shape[0]} outputs")
        if self.inputs.shape[1:-1] != self.outputs.shape[1:-1]:
            raise ShapeError(f"input grid {self.inputs.shape} and output grid {self.outputs.shape} differ")

    def __len__(self) -> int:
        return int(self.inputs.shape[0])

    def subset(self, start: int, stop: int) -> "Dataset":
        return Dataset(self.inputs[start:stop], self.outputs[start:stop], dict(self.metadata))


# ---------------------- WAVENUMBERS ----------------------

def integer_wavenumbers(extents: Sequence[int]) -> Tuple[np.ndarray, ...]:
    """Signed integer wavenumbers on the rfftn layout (last axis halved)."""
    freqs = [np.fft.fftfreq(n, 1.0 / n) for n in extents[:-1]]
    freqs.append(np.fft.rfftfreq(extents[-1], 1.0 / extents[-1]))
    return tuple(np.meshgrid(*freqs, indexing="ij"))


def dealias_mask(ks: Sequence[np.ndarray], extents: Sequence[int]) -> np.ndarray:
    """2/3 rule on integer wavenumbers."""
    mask = np.ones(ks[0].shape, dtype=bool)
    for k, n in zip(ks, extents):
        mask &= np.abs(k) <= math.floor((2.0 / 3.0) * (n / 2))
    return mask


def _nyquist_mask(ks: Sequence[np.ndarray], extents: Sequence[int]) -> np.ndarray:
    mask = np.ones(ks[0].shape, dtype=bool)
    for k, n in zip(ks, extents):
        if n % 2 == 0:
            mask &= np.abs(k) != n // 2
    return mask


# ---------------------- GAUSSIAN RANDOM FIELDS ----------------------

def sample_grf(spec: GrfSpec, extents: Sequence[int], seed: SeedLike) -> np.ndarray:
    """One GRF sample on a uniform grid.

    White noise is filtered in Fourier space so that the normalised coefficient
    û_k = rfftn(u)_k / N has E|û_k|² = λ_k; Nyquist modes are removed.
    """
    extents = tuple(int(n) for n in extents)
    if len(extents) != spec.d:
        raise ShapeError(f"{len(extents)} extents for a {spec.d}-d field")
    if min(extents) < 2:
        raise ShapeError("GRF extents must be >= 2")
    n_total = math.prod(extents)
    rng = np.random.default_rng(seed)
    noise = rng.standard_normal(extents)
    ks = integer_wavenumbers(extents)
    k2 = sum(k * k for k in ks)
    filt = np.sqrt(spec.eigenvalues(k2) * n_total) * _nyquist_mask(ks, extents)
    return np.fft.irfftn(filt * np.fft.rfftn(noise), s=extents, axes=tuple(range(len(extents))))


def sample_grf_batch(spec: GrfSpec, extents: Sequence[int], seed: int, count: int) -> np.ndarray:
    """``count`` samples from independent child streams of ``seed``."""
    children = np.random.SeedSequence(seed).spawn(count)
    return np.stack([sample_grf(spec, extents, child) for child in children])


# ---------------------- SOLVERS ----------------------

def _steps(T: float, dt: float) -> Tuple[int, float]:
    n = max(1, math.ceil(T / dt - 1e-9))
    return n, T / n


def _check_finite(state: np.ndarray, step: int) -> None:
    if not np.all(np.isfinite(state)):
        raise SolverError(f"non-finite state after step {step}; reduce dt")


def _warn_if_unstable(u0: np.ndarray, cfg: BurgersConfig, k_max: float, dt: float) -> None:
    dx = cfg.length / u0.shape[0]
    courant = dt * float(np.max(np.abs(u0))) / dx
    diffusion = cfg.nu * k_max * k_max * dt
    if courant > 1.0 or diffusion > 2.0:
        logger.warning(
            "Burgers step dt=%.3g looks unstable: Courant number %.3g, diffusion number %.3g",
            dt, courant, diffusion,
        )


def solve_burgers(u0: np.ndarray, cfg: BurgersConfig) -> np.ndarray:
    """u(T) of u_t + (u²/2)_x = ν u_xx, Heun in time, 2/3-rule dealiased flux."""
    u0 = as_rtensor(u0)
    if u0.ndim != 1 or u0.shape[0] < 4:
        raise ShapeError(f"Burgers initial condition must be 1-d with >= 4 points, got shape {u0.shape}")
    n = u0.shape[0]
    (k_int,) = integer_wavenumbers((n,))
    k = k_int * (2 * math.pi / cfg.length)
    mask = dealias_mask((k_int,), (n,))
    visc = -cfg.nu * k * k
    half_ik = -0.5j * k * mask

    def rhs(u_hat: np.ndarray) -> np.ndarray:
        u = np.fft.irfft(u_hat * mask, n)
        return half_ik * np.fft.rfft(u * u) + visc * u_hat

    steps, dt = _steps(cfg.T, cfg.dt)
    _warn_if_unstable(u0, cfg, float(np.max(np.abs(k))), dt)
    u_hat = np.fft.rfft(u0)
    for step in range(steps):
        f0 = rhs(u_hat)
        f1 = rhs(u_hat + dt * f0)
        u_hat = u_hat + 0.5 * dt * (f0 + f1)
        if step % 100 == 0 or step == steps - 1:
            _check_finite(u_hat, step)
    return np.fft.irfft(u_hat, n)


def solve_ns(f: np.ndarray, cfg: NsConfig) -> np.ndarray:
    """ω(T) of ω_t + u·∇ω = Δω/Re + f with ω(0) = 0 and u = ∇^⊥ψ, −Δψ = ω."""
    f = as_rtensor(f)
    if f.ndim != 2 or f.shape[0] != f.shape[1]:
        raise ShapeError(f"forcing must be a square 2-d field, got shape {f.shape}")
    if abs(f.mean()) > 1e-10 * max(1.0, float(np.abs(f).max())):
        raise SolverError(f"forcing must be mean-zero, mean is {f.mean():.3e}")
    n = f.shape[0]
    extents = (n, n)
    kx_int, ky_int = integer_wavenumbers(extents)
    scale = 2 * math.pi / cfg.length
    kx, ky = kx_int * scale, ky_int * scale
    k2 = kx * kx + ky * ky
    inv_k2 = np.where(k2 > 0, 1.0 / np.where(k2 > 0, k2, 1.0), 0.0)
    mask = dealias_mask((kx_int, ky_int), extents) if cfg.dealias else np.ones(k2.shape, dtype=bool)
    nu = 1.0 / cfg.Re
    f_hat = np.fft.rfft2(f)

    def nonlinear(w_hat: np.ndarray) -> np.ndarray:
        psi_hat = w_hat * inv_k2
        u = np.fft.irfft2(1j * ky * psi_hat, extents)
        v = np.fft.irfft2(-1j * kx * psi_hat, extents)
        w_x = np.fft.irfft2(1j * kx * w_hat, extents)
        w_y = np.fft.irfft2(1j * ky * w_hat, extents)
        out = f_hat - mask * np.fft.rfft2(u * w_x + v * w_y)
        out[0, 0] = 0.0
        return out

    steps, dt = _steps(cfg.T, cfg.dt)
    w_hat = np.zeros_like(f_hat)
    decay = np.exp(-nu * k2 * dt)
    for step in range(steps):
        n0 = nonlinear(w_hat)
        if cfg.scheme == "imex":
            # integrating factor for diffusion, Heun for the rest
            w_star = decay * (w_hat + dt * n0)
            w_hat = decay * w_hat + 0.5 * dt * (decay * n0 + nonlinear(w_star))
        else:
            f0 = n0 - nu * k2 * w_hat
            w_star = w_hat + dt * f0
            f1 = nonlinear(w_star) - nu * k2 * w_star
            w_hat = w_hat + 0.5 * dt * (f0 + f1)
        if step % 50 == 0 or step == steps - 1:
            _check_finite(w_hat, step)
    return np.fft.irfft2(w_hat, extents)


# ---------------------- DATASETS ----------------------

def _config_metadata(prefix: str, cfg) -> Dict[str, str]:
    return {f"{prefix}.{key}": str(value) for key, value in asdict(cfg).items()}


def make_dataset(
    kind: str,
    grf: GrfSpec,
    solver_cfg: Union[BurgersConfig, NsConfig],
    n: int,
    seed: int,
    threads: int = 1,
) -> Dataset:
    """N pairs (a_j, u_j); sample j draws from child stream j of ``seed``."""
    if kind not in PDE_KINDS:
        raise ConfigError(f"unknown pde '{kind}', expected one of {PDE_KINDS}")
    if n < 1:
        raise ConfigError("dataset size must be >= 1")
    if kind == "burgers":
        extents: Tuple[int, ...] = (solver_cfg.grid,)
        solve = solve_burgers
    else:
        extents = (solver_cfg.grid, solver_cfg.grid)
        solve = solve_ns
    if grf.d != len(extents):
        raise ConfigError(f"grf.d = {grf.d} does not match the {kind} grid")

    children = np.random.SeedSequence(seed).spawn(n)

    def one(j: int) -> Tuple[np.ndarray, np.ndarray]:
        a = sample_grf(grf, extents, children[j])
        try:
            u = solve(a, solver_cfg)
        except SolverError as exc:
            raise SolverError(str(exc), sample_index=j) from exc
        if j % 100 == 0:
            logger.info("%s sample %d/%d solved", kind, j + 1, n)
        return a, u

    pairs = parallel_map(one, range(n), threads)
    metadata = {"pde": kind, "n": str(n), "grid": "x".join(str(s) for s in extents), "seed": str(seed)}
    metadata.update(_config_metadata("grf", grf))
    metadata.update(_config_metadata(kind, solver_cfg))
    return Dataset(
        inputs=np.stack([a for a, _ in pairs])[..., None],
        outputs=np.stack([u for _, u in pairs])[..., None],
        metadata=metadata,
    )
