from dataclasses import replace

import numpy as np
import pytest

from nopkit.errors import PlanError, ShapeError
from nopkit.multigrid import (
    MultiGridPlan,
    crop_padding,
    decompose,
    domain_compression_ratio,
    extract_regions,
    mg_inference,
    padding_for_ratio,
    parallel_map,
    stitch,
)
from nopkit.neural_operator import ModelConfig, init_model, model_forward


def test_plan_geometry():
    plan = MultiGridPlan(grid_exponent=6, levels=1, padding=8)
    assert plan.regions == 2
    assert plan.region_extent == 32
    assert plan.window_extent == 48
    assert plan.region_count == 4
    assert plan.channels(1) == 2
    assert plan.offsets() == [(0, 0), (0, 32), (32, 0), (32, 32)]


def test_level_indices_on_an_eight_point_grid():
    plan = MultiGridPlan(grid_exponent=3, levels=1, padding=1)
    np.testing.assert_array_equal(plan.level_index(0, 0), [7, 0, 1, 2, 3, 4])
    np.testing.assert_array_equal(plan.level_index(4, 0), [3, 4, 5, 6, 7, 0])
    np.testing.assert_array_equal(plan.level_index(0, 1), [4, 6, 0, 2, 4, 6])
    np.testing.assert_array_equal(plan.level_index(4, 1), [0, 2, 4, 6, 0, 2])


def test_decompose_hand_checked_region():
    plan = MultiGridPlan(grid_exponent=3, levels=1, padding=1)
    a = np.arange(64, dtype=float).reshape(8, 8, 1)
    batch = decompose(a, plan)
    assert batch.inputs.shape == (4, 6, 6, 2)
    assert len(batch) == 4
    rows0 = [7, 0, 1, 2, 3, 4]
    coarse = [4, 6, 0, 2, 4, 6]
    np.testing.assert_array_equal(batch.inputs[0, ..., 0], a[np.ix_(rows0, rows0)][..., 0])
    np.testing.assert_array_equal(batch.inputs[0, ..., 1], a[np.ix_(coarse, coarse)][..., 0])
    # region (0, 4): rows from offset 0, columns from offset 4
    np.testing.assert_array_equal(batch.inputs[1, 1, 1, 0], a[0, 4, 0])


@pytest.mark.parametrize(
    "plan",
    [
        MultiGridPlan(grid_exponent=4, levels=0, padding=0),
        MultiGridPlan(grid_exponent=4, levels=0, padding=3, regions_per_dim=4),
        MultiGridPlan(grid_exponent=5, levels=2, padding=4),
        MultiGridPlan(grid_exponent=5, levels=0, padding=2, d=1, regions_per_dim=4),
    ],
)
def test_decompose_crop_stitch_round_trip(rng, plan):
    a = rng.standard_normal((plan.global_extent,) * plan.d + (2,))
    batch = decompose(a, plan)
    raw = batch.inputs[..., :2]
    blocks = crop_padding(raw, plan.padding, plan.d)
    np.testing.assert_array_equal(stitch(blocks, plan), a)
    np.testing.assert_array_equal(extract_regions(a, plan), blocks)


def test_stitch_accepts_a_mapping(rng):
    plan = MultiGridPlan(grid_exponent=3, levels=1, padding=0)
    u = rng.standard_normal((8, 8, 1))
    blocks = extract_regions(u, plan)
    np.testing.assert_array_equal(stitch({j: b for j, b in enumerate(blocks)}, plan), u)


def test_stitch_rejects_region_mismatch(rng):
    plan = MultiGridPlan(grid_exponent=3, levels=1, padding=0)
    blocks = list(extract_regions(rng.standard_normal((8, 8, 1)), plan))
    with pytest.raises(PlanError):
        stitch(blocks[:3], plan)
    with pytest.raises(PlanError, match="missing"):
        stitch({0: blocks[0], 1: blocks[1], 2: blocks[2], 5: blocks[3]}, plan)
    with pytest.raises(PlanError):
        stitch([b[:3] for b in blocks], plan)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"grid_exponent": 3, "levels": 1, "padding": 4},
        {"grid_exponent": 3, "levels": 4},
        {"grid_exponent": 4, "levels": 1, "d": 1},
        {"grid_exponent": 4, "levels": 1, "regions_per_dim": 4},
        {"grid_exponent": 4, "regions_per_dim": 3},
        {"grid_exponent": 4, "padding": -1},
        {"grid_exponent": 0},
    ],
)
def test_invalid_plans(kwargs):
    with pytest.raises(PlanError):
        MultiGridPlan(**kwargs)


def test_decompose_rejects_wrong_grid(rng):
    plan = MultiGridPlan(grid_exponent=3, levels=1)
    with pytest.raises(PlanError):
        decompose(rng.standard_normal((16, 16, 1)), plan)


def test_compression_ratio_and_padding_search():
    plan = MultiGridPlan(grid_exponent=7, levels=2, padding=8)
    assert domain_compression_ratio(plan) == pytest.approx(7.11, abs=5e-3)
    assert padding_for_ratio(7, 2, 7.11) == 8
    assert domain_compression_ratio(MultiGridPlan(grid_exponent=7)) == 1.0


def test_rescaled_plan_scales_padding():
    plan = MultiGridPlan(grid_exponent=6, levels=1, padding=8)
    assert plan.rescaled(7) == MultiGridPlan(grid_exponent=7, levels=1, padding=16)
    assert plan.rescaled(5).padding == 4


def test_parallel_map_keeps_order():
    assert parallel_map(lambda x: x * x, range(20), threads=4) == [x * x for x in range(20)]
    assert parallel_map(str, [], threads=4) == []


def _selector_model():
    """Affine model that returns its first input channel."""
    cfg = ModelConfig(d=2, in_channels=2, width=1, n_layers=0, modes=(2, 2), projection_width=1,
                      activation="identity")
    model = init_model(cfg)
    model.params["lift.W"] = np.array([[1.0], [0.0]])
    model.params["proj.W1"] = np.ones((1, 1))
    model.params["proj.W2"] = np.ones((1, 1))
    return model


def test_mg_inference_of_a_channel_selector_is_identity(rng):
    plan = MultiGridPlan(grid_exponent=4, levels=1, padding=2)
    a = rng.standard_normal((16, 16, 1))
    np.testing.assert_allclose(mg_inference(_selector_model(), a, plan), a, atol=1e-15)


def test_mg_inference_is_thread_count_invariant(rng):
    plan = MultiGridPlan(grid_exponent=4, levels=1, padding=2)
    cfg = ModelConfig(d=2, in_channels=2, width=4, n_layers=2, modes=(3, 3), projection_width=8,
                      form="tucker", rank=0.5, norm_kind="instance")
    model = init_model(cfg, seed=3)
    a = rng.standard_normal((16, 16, 1))
    serial = mg_inference(model, a, plan, threads=1)
    assert serial.shape == (16, 16, 1)
    np.testing.assert_array_equal(mg_inference(model, a, plan, threads=4), serial)


def test_mg_inference_checks_channels(rng):
    plan = MultiGridPlan(grid_exponent=4, levels=1, padding=2)
    model = init_model(ModelConfig(d=2, in_channels=1, width=2, n_layers=1, modes=(2, 2), projection_width=2))
    with pytest.raises(ShapeError):
        mg_inference(model, rng.standard_normal((16, 16, 1)), plan)


@pytest.mark.parametrize(
    "plan",
    [
        MultiGridPlan(grid_exponent=4, levels=1, padding=2),
        MultiGridPlan(grid_exponent=5, levels=2, padding=2),
        MultiGridPlan(grid_exponent=4, levels=0, padding=1, regions_per_dim=4),
    ],
)
def test_periodic_shift_permutes_the_regions(rng, plan):
    a = rng.standard_normal((plan.global_extent,) * 2 + (1,))
    e, n = plan.region_extent, plan.global_extent
    base = decompose(a, plan)
    shifted = decompose(np.roll(a, (e, -e), axis=(0, 1)), plan)
    position = {offset: j for j, offset in enumerate(shifted.offsets)}
    for j, (o0, o1) in enumerate(base.offsets):
        moved = position[((o0 + e) % n, (o1 - e) % n)]
        np.testing.assert_array_equal(shifted.inputs[moved], base.inputs[j])


@pytest.mark.parametrize(
    "plan",
    [
        MultiGridPlan(grid_exponent=4, levels=0, padding=2, regions_per_dim=2),
        MultiGridPlan(grid_exponent=4, levels=0, padding=2, regions_per_dim=4),
        MultiGridPlan(grid_exponent=5, levels=1, padding=2),
        MultiGridPlan(grid_exponent=5, levels=2, padding=2),
    ],
)
def test_pointwise_linear_model_matches_the_full_field(rng, plan):
    cfg = ModelConfig(d=2, in_channels=plan.channels(1), width=3, n_layers=0, modes=(2, 2),
                      projection_width=4, activation="identity")
    model = init_model(cfg, seed=5)
    for name in ("lift.b", "proj.b1", "proj.b2"):
        model.params[name] = rng.standard_normal(model.params[name].shape)
    # coarse context channels do not contribute
    model.params["lift.W"][1:] = 0.0
    a = rng.standard_normal((plan.global_extent,) * 2 + (1,))

    full_cfg = replace(cfg, in_channels=1)
    full = init_model(full_cfg)
    full.params.update({name: value.copy() for name, value in model.params.items()})
    full.params["lift.W"] = model.params["lift.W"][:1].copy()
    np.testing.assert_allclose(mg_inference(model, a, plan), model_forward(full, a), atol=1e-12)
