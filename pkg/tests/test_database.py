import numpy as np
import pytest

from db.database import (
    checkpoint_manifest,
    decode_record,
    encode_record,
    load_checkpoint,
    load_dataset,
    read_manifest,
    read_record,
    save_checkpoint,
    save_dataset,
    write_record,
)
from db.models import MANIFEST_FILE, RECORD_MAGIC
from nopkit.errors import CheckpointError
from nopkit.multigrid import MultiGridPlan
from nopkit.neural_operator import ModelConfig, init_model, model_forward
from nopkit.pde_data import Dataset
from tests.conftest import random_complex


def test_record_round_trip(rng, tmp_path):
    real = rng.standard_normal((3, 4, 2))
    cplx = np.asfortranarray(random_complex(rng, (2, 5)))
    write_record(tmp_path / "a.ntns", real)
    write_record(tmp_path / "b.ntns", cplx)
    np.testing.assert_array_equal(read_record(tmp_path / "a.ntns"), real)
    loaded = read_record(tmp_path / "b.ntns")
    np.testing.assert_array_equal(loaded, cplx)
    assert loaded.dtype == np.complex128
    assert loaded.flags.writeable


def test_record_layout():
    blob = encode_record(np.arange(6, dtype=float).reshape(2, 3))
    assert blob[:4] == RECORD_MAGIC
    assert len(blob) == 4 + 4 + 1 + 1 + 2 * 8 + 6 * 8
    assert decode_record(blob).shape == (2, 3)


@pytest.mark.parametrize(
    "mutate",
    [
        lambda b: b"XXXX" + b[4:],
        lambda b: b[:-8],
        lambda b: b[:6],
        lambda b: b[:4] + (9).to_bytes(4, "little") + b[8:],
        lambda b: b[:8] + bytes([7]) + b[9:],
    ],
)
def test_corrupt_records_are_rejected(mutate):
    blob = encode_record(np.ones((2, 2)))
    with pytest.raises(CheckpointError):
        decode_record(mutate(blob))


def test_unsupported_dtype():
    with pytest.raises(CheckpointError):
        encode_record(np.ones(3, dtype=np.int32))


def test_dataset_round_trip(rng, tmp_path):
    data = Dataset(rng.standard_normal((4, 8, 8, 1)), rng.standard_normal((4, 8, 8, 1)),
                   {"pde": "ns", "grid": "8x8", "seed": "3"})
    save_dataset(tmp_path / "data", data)
    loaded = load_dataset(tmp_path / "data")
    np.testing.assert_array_equal(loaded.inputs, data.inputs)
    np.testing.assert_array_equal(loaded.outputs, data.outputs)
    assert loaded.metadata == data.metadata


def test_missing_dataset(tmp_path):
    with pytest.raises(CheckpointError):
        load_dataset(tmp_path / "nothing")


@pytest.mark.parametrize(
    "overrides",
    [
        {"form": "dense"},
        {"form": "tucker", "rank": 0.5, "separable": True},
        {"form": "tucker", "ranks": (2, 2, 2, 2, 0)},
        {"form": "cp", "rank": 0.3, "skip_kind": "soft-gate"},
        {"form": "tt", "rank": 0.5, "mlp_expansion": 0.5, "norm_kind": "layer"},
    ],
)
def test_checkpoint_round_trip(rng, tmp_path, overrides):
    cfg = ModelConfig(d=2, width=3, n_layers=2, modes=(3, 2), projection_width=4, **overrides)
    model = init_model(cfg, seed=1)
    save_checkpoint(tmp_path / "ckpt", model, extra={"train.batch_size": "4"})
    loaded, plan = load_checkpoint(tmp_path / "ckpt")
    assert plan is None
    assert loaded.config == cfg
    a = rng.standard_normal((2, 8, 8, 1))
    np.testing.assert_array_equal(model_forward(loaded, a), model_forward(model, a))
    assert read_manifest(tmp_path / "ckpt" / MANIFEST_FILE)["train.batch_size"] == "4"


def test_checkpoint_keeps_the_plan(tmp_path):
    cfg = ModelConfig(d=2, in_channels=2, width=2, n_layers=1, modes=(2, 2), projection_width=2)
    plan = MultiGridPlan(grid_exponent=5, levels=1, padding=4)
    save_checkpoint(tmp_path / "ckpt", init_model(cfg), plan)
    _, loaded = load_checkpoint(tmp_path / "ckpt")
    assert loaded == MultiGridPlan(grid_exponent=5, levels=1, padding=4, regions_per_dim=2)
    assert loaded.window_extent == plan.window_extent


def test_manifest_describes_the_weights():
    cfg = ModelConfig(d=2, width=3, n_layers=2, modes=(3, 2), form="tucker", ranks=(2, 2, 2, 2, 0))
    manifest = checkpoint_manifest(init_model(cfg))
    assert manifest["form"] == "tucker"
    assert manifest["ranks"] == "2,2,2,2,0"
    assert manifest["alpha"] == "3,2"
    assert manifest["L"] == "2" and manifest["C"] == "2" and manifest["n"] == "3"
    assert manifest["model.width"] == "3"


def test_broken_checkpoints(tmp_path):
    cfg = ModelConfig(d=2, width=2, n_layers=1, modes=(2, 2), projection_width=2)
    directory = save_checkpoint(tmp_path / "ckpt", init_model(cfg))
    (directory / "lift.W.ntns").unlink()
    with pytest.raises(CheckpointError):
        load_checkpoint(directory)
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "absent")


def test_checkpoint_shape_mismatch(tmp_path):
    cfg = ModelConfig(d=2, width=2, n_layers=1, modes=(2, 2), projection_width=2)
    directory = save_checkpoint(tmp_path / "ckpt", init_model(cfg))
    write_record(directory / "proj.W2.ntns", np.ones((3, 1)))
    with pytest.raises(CheckpointError, match="proj.W2"):
        load_checkpoint(directory)


def test_record_with_an_empty_extent_is_rejected():
    with pytest.raises(CheckpointError, match="extent"):
        decode_record(encode_record(np.ones((2, 0))))


@pytest.mark.parametrize("name", ["lift.W", "spectral.W"])
def test_non_finite_weights_are_rejected(tmp_path, name):
    cfg = ModelConfig(d=2, width=2, n_layers=1, modes=(2, 2), projection_width=2)
    directory = save_checkpoint(tmp_path / "ckpt", init_model(cfg))
    array = read_record(directory / f"{name}.ntns")
    array.flat[0] = np.nan
    write_record(directory / f"{name}.ntns", array)
    with pytest.raises(CheckpointError, match="non-finite"):
        load_checkpoint(directory)
