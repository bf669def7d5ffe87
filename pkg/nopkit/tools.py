# nopkit/tools.py
"""Command bodies behind the CLI. Each returns a small result dict; failures
surface as :class:`nopkit.errors.NopkitError` subclasses."""

from __future__ import annotations

import logging
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, Optional, Sequence

import pandas as pd

from db.database import load_checkpoint, load_dataset, read_manifest, save_checkpoint, save_dataset
from db.models import MANIFEST_FILE
from nopkit.config import RunConfig, dump_config
from nopkit.errors import ShapeError
from nopkit.factorized_weights import param_count
from nopkit.multigrid import domain_compression_ratio
from nopkit.neural_operator import count_parameters, init_model
from nopkit.pde_data import make_dataset
from nopkit.training import evaluate, split_dataset, train

logger = logging.getLogger(__name__)

CONFIG_SNAPSHOT = "config.ini"


def _write_snapshot(out: Path, cfg: RunConfig) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / CONFIG_SNAPSHOT).write_text(dump_config(cfg))


# --- GEN-DATA ---------------------------------------------------------------

def cmd_gen_data(cfg: RunConfig, out: Path) -> Dict[str, Any]:
    out = Path(out)
    logger.info("generating %d %s samples (seed %d)", cfg.data.n, cfg.data.pde, cfg.data.seed)
    dataset = make_dataset(cfg.data.pde, cfg.grf, cfg.solver, cfg.data.n, cfg.data.seed, cfg.run.threads)
    save_dataset(out, dataset)
    _write_snapshot(out, cfg)
    return {"out": str(out), "samples": len(dataset), "shape": dataset.inputs.shape}


# --- TRAIN ------------------------------------------------------------------

def cmd_train(cfg: RunConfig, data: Path, out: Path) -> Dict[str, Any]:
    out = Path(out)
    dataset = load_dataset(data)
    d = cfg.model.d
    if dataset.inputs.ndim != d + 2:
        raise ShapeError(f"dataset fields are {dataset.inputs.ndim - 2}-d, model is {d}-d")
    plan = cfg.multigrid.plan(dataset.inputs.shape[1], d)
    model = init_model(cfg.model, seed=cfg.train.seed)
    _write_snapshot(out, cfg)

    def checkpoint_every(epoch, model, log):
        every = cfg.train.checkpoint_every
        if every and (epoch + 1) % every == 0:
            save_checkpoint(out / "checkpoints" / f"epoch_{epoch + 1:04d}", model, plan, _eval_hints(cfg))

    model, log = train(model, dataset, cfg.train, plan, cfg.run.threads, on_epoch=checkpoint_every)
    save_checkpoint(out / "checkpoint", model, plan, _eval_hints(cfg))
    log.to_csv(out / "metrics.csv")
    last = log.last
    return {
        "out": str(out),
        "epochs": len(log),
        "test_l2": None if last is None else last.test_l2,
        "test_h1": None if last is None else last.test_h1,
    }


def _eval_hints(cfg: RunConfig) -> Dict[str, str]:
    return {
        "train.test_fraction": repr(cfg.train.test_fraction),
        "train.batch_size": str(cfg.train.batch_size),
    }


# --- EVAL -------------------------------------------------------------------

def cmd_eval(
    checkpoint: Path,
    data: Path,
    resolutions: Optional[Sequence[int]] = None,
    out: Optional[Path] = None,
    threads: int = 1,
) -> pd.DataFrame:
    model, plan = load_checkpoint(checkpoint)
    manifest = read_manifest(Path(checkpoint) / MANIFEST_FILE)
    dataset = load_dataset(data)
    fraction = float(manifest.get("train.test_fraction", "0"))
    batch_size = int(manifest.get("train.batch_size", "32"))
    if fraction > 0:
        _, dataset = split_dataset(dataset, fraction)
    if dataset.inputs.ndim != model.config.d + 2:
        raise ShapeError(f"dataset fields are {dataset.inputs.ndim - 2}-d, model is {model.config.d}-d")
    if plan is None and dataset.inputs.shape[-1] != model.config.in_channels:
        raise ShapeError(
            f"dataset has {dataset.inputs.shape[-1]} channels, model expects {model.config.in_channels}"
        )
    table = evaluate(model, dataset, resolutions, plan, batch_size, threads)
    if out is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
        table.to_csv(Path(out) / "eval.csv", index=False)
    return table


# --- INFO -------------------------------------------------------------------

def cmd_info(checkpoint: Optional[Path] = None, cfg: Optional[RunConfig] = None) -> pd.DataFrame:
    """Architecture and compression report for a checkpoint (or a config alone)."""
    if checkpoint is not None:
        model, plan = load_checkpoint(checkpoint)
        model_cfg = model.config
        params = param_count(model)
    elif cfg is not None:
        model_cfg, plan = cfg.model, cfg.plan
        params = count_parameters(model_cfg)
    else:
        raise ShapeError("info needs a checkpoint or a config")
    dense = count_parameters(replace(model_cfg, ranks=()), form="dense")
    rows = [
        ("form", model_cfg.form),
        ("d", model_cfg.d),
        ("width", model_cfg.width),
        ("layers", model_cfg.n_layers),
        ("modes", ",".join(str(a) for a in model_cfg.modes)),
        ("separable", model_cfg.separable),
        ("block", f"skip={model_cfg.skip_kind} norm={model_cfg.norm_kind} "
                  f"preact={model_cfg.preactivation} mlp={model_cfg.mlp_expansion}"),
        ("parameters", params),
        ("dense_parameters", dense),
        ("model_compression", dense / params),
    ]
    if plan is not None:
        rows += [
            ("mg_levels", plan.levels),
            ("mg_padding", plan.padding),
            ("mg_regions", plan.region_count),
            ("domain_compression", domain_compression_ratio(plan)),
        ]
    return pd.DataFrame(rows, columns=["key", "value"])
