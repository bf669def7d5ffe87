# nopkit/errors.py

from __future__ import annotations

from typing import Optional


class NopkitError(Exception):
    """Base error; `exit_code` is what the CLI returns for it."""

    exit_code = 1


class ContractViolation(NopkitError):
    exit_code = 1


class ConfigError(NopkitError):
    exit_code = 2


class SolverError(NopkitError):
    exit_code = 3

    def __init__(self, message: str, sample_index: Optional[int] = None):
        if sample_index is not None:
            message = f"sample {sample_index}: {message}"
        super().__init__(message)
        self.sample_index = sample_index


class DivergenceError(NopkitError):
    exit_code = 4

    def __init__(self, message: str, epoch: Optional[int] = None):
        if epoch is not None:
            message = f"epoch {epoch}: {message}"
        super().__init__(message)
        self.epoch = epoch


class OptimizerError(DivergenceError):
    def __init__(self, param_name: str, message: str = "non-finite gradient"):
        super().__init__(f"{message} for parameter '{param_name}'")
        self.param_name = param_name


class ShapeError(NopkitError, ValueError):
    exit_code = 5


class PlanError(ShapeError):
    pass


class CheckpointError(NopkitError):
    exit_code = 5
