from __future__ import annotations

from typing import Callable, Dict

import numpy as np
import pytest

from nopkit.autodiff import Tape, Variable


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


def random_complex(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


LossFn = Callable[[Tape, Dict[str, Variable]], Variable]


def check_gradients(
    loss_fn: LossFn,
    params: Dict[str, np.ndarray],
    rng: np.random.Generator,
    entries: int = 3,
    h: float = 1e-5,
    rtol: float = 1e-4,
    atol: float = 1e-9,
) -> None:
    """Reverse-mode gradients against central differences on sampled entries.

    ``params`` arrays are perturbed in place and restored; complex entries are
    checked along the real and the imaginary direction.
    """
    tape = Tape()
    variables = {name: tape.variable(array, name=name) for name, array in params.items()}
    grads = tape.gradients(loss_fn(tape, variables), variables)

    def value() -> float:
        plain = Tape(enabled=False)
        return float(np.real(loss_fn(plain, {n: plain.constant(a) for n, a in params.items()}).value))

    for name, array in params.items():
        picks = rng.choice(array.size, size=min(entries, array.size), replace=False)
        directions = [(1.0, "re"), (1j, "im")] if np.iscomplexobj(array) else [(1.0, "re")]
        for idx in picks:
            for step, part in directions:
                original = array.flat[idx]
                array.flat[idx] = original + step * h
                plus = value()
                array.flat[idx] = original - step * h
                minus = value()
                array.flat[idx] = original
                fd = (plus - minus) / (2 * h)
                g = grads[name].flat[idx]
                g = g.real if part == "re" else g.imag
                assert abs(g - fd) <= rtol * max(abs(g), abs(fd)) + atol, (
                    f"{name}[{idx}].{part}: reverse {g:.10e} vs finite difference {fd:.10e}"
                )


@pytest.fixture
def gradcheck():
    return check_gradients
