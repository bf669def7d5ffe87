import numpy as np
import pytest

from nopkit.autodiff import PRIMITIVES, Tape, merge_gradients
from nopkit.errors import ContractViolation
from tests.conftest import random_complex


def _readout(tape, out, weights):
    """Scalar Σ w·out (real) or Σ w·|out|² (complex)."""
    if np.iscomplexobj(out.value):
        out = tape.record("abs2", out)
    return tape.record("sum", out * weights)


def _case(rng, name):
    """(build(tape, v) -> Variable, params) for one primitive."""
    r = rng.standard_normal
    c = lambda shape: random_complex(rng, shape)  # noqa: E731

    if name == "add":
        return lambda t, v: v["a"] + v["b"], {"a": r((3, 4)), "b": r((4,))}
    if name == "sub":
        return lambda t, v: v["a"] - v["b"], {"a": c((3, 4)), "b": c((3, 4))}
    if name == "multiply":
        return lambda t, v: v["a"] * v["b"], {"a": c((3, 4)), "b": r((3, 4))}
    if name == "scale":
        return lambda t, v: v["a"] * (0.5 - 2j), {"a": c((5,))}
    if name == "sqrt":
        return lambda t, v: t.record("sqrt", v["a"]), {"a": rng.uniform(0.5, 2.0, (6,))}
    if name == "activation":
        return lambda t, v: t.record("activation", v["a"], kind="gelu"), {"a": r((4, 3))}
    if name == "instance_normalize":
        return lambda t, v: t.record("instance_normalize", v["a"]), {"a": r((2, 5, 4, 3))}
    if name == "layer_normalize":
        return lambda t, v: t.record("layer_normalize", v["a"]), {"a": r((2, 6, 3))}
    if name == "pad":
        return lambda t, v: t.record("pad", v["a"], widths=[(0, 0), (2, 1), (0, 0)]), {"a": r((2, 5, 3))}
    if name == "crop":
        index = (slice(None), slice(1, 4), slice(None))
        return lambda t, v: t.record("crop", v["a"], index=index), {"a": r((2, 6, 3))}
    if name == "truncate":
        index = (slice(None), slice(5, 8), slice(0, 2))
        return lambda t, v: t.record("truncate", v["a"], index=index), {"a": c((2, 8, 5))}
    if name == "embed":
        i0, i1 = (slice(0, 2), slice(None)), (slice(4, 6), slice(None))
        return (
            lambda t, v: t.record("embed", v["a"], v["b"], shape=(6, 3), indices=[i0, i1]),
            {"a": c((2, 3)), "b": c((2, 3))},
        )
    if name == "sum":
        return lambda t, v: t.record("sum", v["a"], axis=(1, 2)), {"a": r((3, 4, 5))}
    if name == "take":
        return lambda t, v: t.record("take", v["a"], index=2, axis=1), {"a": c((3, 4, 2))}
    if name == "take_array":
        index = np.array([0, 2, 2])
        return lambda t, v: t.record("take", v["a"], index=index, axis=1), {"a": r((3, 4, 2))}
    if name == "transpose":
        return lambda t, v: t.record("transpose", v["a"], axes=(2, 0, 1)), {"a": r((2, 3, 4))}
    if name == "concat":
        return (
            lambda t, v: t.record("concat", v["a"], v["b"], axis=-1),
            {"a": r((2, 3, 1)), "b": r((2, 3, 2))},
        )
    if name == "matmul":
        return lambda t, v: t.record("matmul", v["x"], v["w"]), {"x": r((2, 5, 3)), "w": r((3, 4))}
    if name == "matmul_complex":
        return lambda t, v: t.record("matmul", v["x"], v["w"]), {"x": c((5, 3)), "w": c((3, 2))}
    if name == "einsum":
        return (
            lambda t, v: t.record("einsum", v["a"], v["b"], v["c"], spec="xab,bc,cR->xaR"),
            {"a": c((2, 3, 4)), "b": c((4, 5)), "c": c((5, 2))},
        )
    if name == "einsum_inner_sum":
        return (
            lambda t, v: t.record("einsum", v["a"], v["b"], spec="abc,cd->ad"),
            {"a": r((2, 3, 4)), "b": c((4, 3))},
        )
    if name == "contract_channels":
        return (
            lambda t, v: t.record("contract_channels", v["T"], v["X"]),
            {"T": c((3, 2, 4, 5)), "X": c((2, 3, 2, 5))},
        )
    if name == "mode_product":
        return (
            lambda t, v: t.record("mode_product", v["X"], v["M"], mode=1),
            {"X": c((3, 4, 2)), "M": c((5, 4))},
        )
    if name == "fft_forward":
        return lambda t, v: t.record("fft_forward", v["x"], axes=(1, 2)), {"x": r((2, 6, 5, 2))}
    if name == "fft_forward_even":
        return lambda t, v: t.record("fft_forward", v["x"], axes=(1, 2)), {"x": r((1, 4, 8, 2))}
    if name == "fft_inverse":
        return (
            lambda t, v: t.record("fft_inverse", v["X"], axes=(1, 2), extents=(6, 8)),
            {"X": c((2, 6, 5, 2))},
        )
    if name == "fft_inverse_odd":
        return (
            lambda t, v: t.record("fft_inverse", v["X"], axes=(0,), extents=(7,)),
            {"X": c((4, 3))},
        )
    raise KeyError(name)


CASES = [
    "add", "sub", "multiply", "scale", "sqrt", "activation",
    "instance_normalize", "layer_normalize",
    "pad", "crop", "truncate", "embed", "sum", "take", "take_array", "transpose", "concat",
    "matmul", "matmul_complex", "einsum", "einsum_inner_sum", "contract_channels", "mode_product",
    "fft_forward", "fft_forward_even", "fft_inverse", "fft_inverse_odd",
]


@pytest.mark.parametrize("name", CASES)
def test_vjp_matches_finite_differences(rng, gradcheck, name):
    build, params = _case(rng, name)
    plain = Tape(enabled=False)
    reference = build(plain, {k: plain.constant(a) for k, a in params.items()})
    weights = rng.standard_normal(reference.shape)

    def loss(tape, v):
        return _readout(tape, build(tape, v), weights)

    gradcheck(loss, params, rng, entries=4)


VARIANTS = {
    "take_array": "take",
    "matmul_complex": "matmul",
    "einsum_inner_sum": "einsum",
    "fft_forward_even": "fft_forward",
    "fft_inverse_odd": "fft_inverse",
}


def test_every_primitive_is_exercised():
    # abs2 is part of every complex readout
    covered = {VARIANTS.get(name, name) for name in CASES} | {"abs2"}
    assert set(PRIMITIVES) == covered


def test_complex_cotangent_convention():
    tape = Tape()
    z = tape.variable(np.array([1.0 + 2.0j, -0.5j]))
    loss = tape.record("sum", tape.record("abs2", z))
    (grad,) = tape.gradients(loss, {"z": z}).values()
    np.testing.assert_allclose(grad, 2 * z.value)


def test_reused_variable_accumulates():
    tape = Tape()
    x = tape.variable(np.array([1.0, -3.0]))
    loss = tape.record("sum", x * x + x)
    np.testing.assert_allclose(tape.gradients(loss, {"x": x})["x"], [3.0, -5.0])


def test_unused_variable_has_zero_gradient():
    tape = Tape()
    x = tape.variable(np.ones(3))
    y = tape.variable(np.ones(2))
    grads = tape.gradients(tape.record("sum", x), {"x": x, "y": y})
    np.testing.assert_array_equal(grads["y"], np.zeros(2))


def test_disabled_tape_records_nothing():
    tape = Tape(enabled=False)
    x = tape.variable(np.ones(4))
    y = tape.record("sum", x * x)
    assert float(y.value) == 4.0
    assert tape.nodes == []
    assert not y.requires_grad


def test_unknown_primitive_is_rejected():
    tape = Tape()
    with pytest.raises(ContractViolation):
        tape.record("svd", tape.variable(np.eye(2)))


def test_foreign_tape_is_rejected():
    a, b = Tape(), Tape()
    x = a.variable(np.ones(2))
    with pytest.raises(ContractViolation):
        b.record("sum", x)


def test_backward_needs_scalar_or_seed():
    tape = Tape()
    x = tape.variable(np.ones(3))
    y = x * 2.0
    with pytest.raises(ContractViolation):
        tape.backward(y)
    grads = tape.backward(y, seed=np.array([1.0, 0.0, 2.0]))
    np.testing.assert_allclose(grads[x.node_id], [2.0, 0.0, 4.0])


def test_einsum_spec_restrictions():
    tape = Tape()
    x = tape.variable(np.ones((2, 2)))
    with pytest.raises(ContractViolation):
        tape.record("einsum", x, spec="...a->a")
    with pytest.raises(ContractViolation):
        tape.record("einsum", x, spec="aa->a")


def test_merge_gradients_sums_in_order():
    parts = [{"w": np.array([1.0, 2.0])}, {"w": np.array([0.5, 0.5]), "b": np.array([1.0])}]
    merged = merge_gradients(parts)
    np.testing.assert_allclose(merged["w"], [1.5, 2.5])
    np.testing.assert_allclose(merged["b"], [1.0])
    np.testing.assert_allclose(parts[0]["w"], [1.0, 2.0])
