# db/database.py

from __future__ import annotations

import logging
import struct
from pathlib import Path
from typing import Dict, Mapping, Optional, Tuple, Union

import numpy as np

from db.models import (
    DTYPE_CODES,
    INPUTS_FILE,
    MANIFEST_FILE,
    OUTPUTS_FILE,
    RECORD_MAGIC,
    RECORD_SUFFIX,
    RECORD_VERSION,
)
from nopkit.config import build_section, format_value, section_strings
from nopkit.errors import CheckpointError, NopkitError, ShapeError
from nopkit.factorized_weights import weights_from_arrays
from nopkit.multigrid import MultiGridPlan
from nopkit.neural_operator import FnoModel, ModelConfig, pointwise_shapes
from nopkit.pde_data import Dataset
from nopkit.tensor_core import as_rtensor, element_count

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
_HEADER = struct.Struct("<4sIBB")
_DTYPES = {0: np.dtype("<f8"), 1: np.dtype("<c16")}


# --- TENSOR RECORDS ---------------------------------------------------------

def encode_record(array: np.ndarray) -> bytes:
    array = np.asarray(array)
    if array.dtype.name not in DTYPE_CODES:
        raise CheckpointError(f"cannot store dtype {array.dtype}")
    code = DTYPE_CODES[array.dtype.name]
    header = _HEADER.pack(RECORD_MAGIC, RECORD_VERSION, code, array.ndim)
    extents = struct.pack(f"<{array.ndim}Q", *array.shape)
    payload = np.ascontiguousarray(array, dtype=_DTYPES[code]).tobytes(order="C")
    return header + extents + payload


def decode_record(blob: bytes, source: str = "record") -> np.ndarray:
    if len(blob) < _HEADER.size:
        raise CheckpointError(f"{source}: truncated header")
    magic, version, code, ndim = _HEADER.unpack_from(blob)
    if magic != RECORD_MAGIC:
        raise CheckpointError(f"{source}: bad magic {magic!r}")
    if version != RECORD_VERSION:
        raise CheckpointError(f"{source}: unsupported version {version}")
    if code not in _DTYPES:
        raise CheckpointError(f"{source}: unknown dtype code {code}")
    offset = _HEADER.size + 8 * ndim
    if len(blob) < offset:
        raise CheckpointError(f"{source}: truncated extents")
    shape = struct.unpack_from(f"<{ndim}Q", blob, _HEADER.size)
    dtype = _DTYPES[code]
    try:
        expected = element_count(shape) * dtype.itemsize
    except ShapeError as exc:
        raise CheckpointError(f"{source}: {exc}") from exc
    if len(blob) - offset != expected:
        raise CheckpointError(f"{source}: payload has {len(blob) - offset} bytes, expected {expected}")
    data = np.frombuffer(blob, dtype=dtype, offset=offset).reshape(shape)
    return data.astype(dtype.newbyteorder("="), copy=True)


def write_record(path: PathLike, array: np.ndarray) -> None:
    Path(path).write_bytes(encode_record(array))


def read_record(path: PathLike) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"missing record {path}")
    return decode_record(path.read_bytes(), str(path))


# --- MANIFESTS --------------------------------------------------------------

def write_manifest(path: PathLike, entries: Mapping[str, str]) -> None:
    lines = [f"{key}={value}" for key, value in entries.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def read_manifest(path: PathLike) -> Dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise CheckpointError(f"missing manifest {path}")
    entries: Dict[str, str] = {}
    for number, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        if "=" not in line:
            raise CheckpointError(f"{path}:{number}: expected key=value")
        key, value = line.split("=", 1)
        entries[key.strip()] = value.strip()
    return entries


# --- DATASETS ---------------------------------------------------------------

def save_dataset(directory: PathLike, dataset: Dataset) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_record(directory / INPUTS_FILE, dataset.inputs)
    write_record(directory / OUTPUTS_FILE, dataset.outputs)
    write_manifest(directory / MANIFEST_FILE, dataset.metadata)
    logger.info("wrote %d samples to %s", len(dataset), directory)
    return directory


def load_dataset(directory: PathLike) -> Dataset:
    directory = Path(directory)
    if not directory.is_dir():
        raise CheckpointError(f"dataset directory not found: {directory}")
    return Dataset(
        inputs=read_record(directory / INPUTS_FILE),
        outputs=read_record(directory / OUTPUTS_FILE),
        metadata=read_manifest(directory / MANIFEST_FILE),
    )


# --- CHECKPOINTS ------------------------------------------------------------

def checkpoint_manifest(model: FnoModel, plan: Optional[MultiGridPlan] = None) -> Dict[str, str]:
    cfg = model.config
    entries: Dict[str, str] = {}
    if model.weights is not None:
        entries.update(model.weights.manifest())
        layout = model.weights.layout
        entries.update(
            alpha=format_value(layout.alpha),
            n=str(layout.width),
            L=str(layout.n_layers),
            C=str(layout.corners),
        )
    else:
        entries.update(form=cfg.form, L="0")
    entries.update({f"model.{key}": value for key, value in section_strings(cfg).items()})
    if plan is not None:
        entries.update(
            grid_exponent=str(plan.grid_exponent),
            mg_levels=str(plan.levels),
            mg_padding=str(plan.padding),
            mg_regions=str(plan.regions),
            mg_d=str(plan.d),
        )
    return entries


def save_checkpoint(
    directory: PathLike,
    model: FnoModel,
    plan: Optional[MultiGridPlan] = None,
    extra: Optional[Mapping[str, str]] = None,
) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    arrays = dict(model.parameters())
    if model.weights is not None:
        arrays.update(model.weights.constants())
    for name, array in arrays.items():
        write_record(directory / f"{name}{RECORD_SUFFIX}", array)
    manifest = checkpoint_manifest(model, plan)
    manifest.update(extra or {})
    write_manifest(directory / MANIFEST_FILE, manifest)
    logger.info("checkpoint with %d arrays written to %s", len(arrays), directory)
    return directory


def load_checkpoint(directory: PathLike) -> Tuple[FnoModel, Optional[MultiGridPlan]]:
    directory = Path(directory)
    if not directory.is_dir():
        raise CheckpointError(f"checkpoint directory not found: {directory}")
    manifest = read_manifest(directory / MANIFEST_FILE)
    model_fields = {k[len("model."):]: v for k, v in manifest.items() if k.startswith("model.")}
    try:
        cfg = build_section(ModelConfig, model_fields, section="model")
    except NopkitError as exc:
        raise CheckpointError(f"{directory}: bad model manifest: {exc}") from exc

    params = {}
    for name, shape in pointwise_shapes(cfg).items():
        array = read_record(directory / f"{name}{RECORD_SUFFIX}")
        if array.shape != shape:
            raise CheckpointError(f"{name}: stored shape {array.shape}, expected {shape}")
        try:
            params[name] = as_rtensor(array)
        except ShapeError as exc:
            raise CheckpointError(f"{directory}: {name}: {exc}") from exc

    weights = None
    if cfg.layout is not None:
        spectral = {
            path.name[: -len(RECORD_SUFFIX)]: read_record(path)
            for path in sorted(directory.glob(f"spectral.*{RECORD_SUFFIX}"))
        }
        try:
            weights = weights_from_arrays(cfg.layout, manifest.get("form", cfg.form), spectral)
        except KeyError as exc:
            raise CheckpointError(f"{directory}: missing spectral array {exc}") from exc
        except NopkitError as exc:
            raise CheckpointError(f"{directory}: {exc}") from exc

    plan = None
    if "mg_levels" in manifest:
        plan = MultiGridPlan(
            grid_exponent=int(manifest["grid_exponent"]),
            levels=int(manifest["mg_levels"]),
            padding=int(manifest["mg_padding"]),
            d=int(manifest.get("mg_d", cfg.d)),
            regions_per_dim=int(manifest["mg_regions"]),
        )
    return FnoModel(cfg, params, weights), plan
