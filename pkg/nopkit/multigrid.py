# nopkit/multigrid.py
"""Domain decomposition into padded regions with a multi-grid hierarchy of
coarser, wider context windows stacked as channels."""

from __future__ import annotations

import itertools
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, List, Mapping, Optional, Sequence, Tuple, TypeVar, Union

import numpy as np

from nopkit.errors import PlanError, ShapeError
from nopkit.neural_operator import model_forward

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


# ---------------------- DATA CLASSES ----------------------

@dataclass(frozen=True)
class MultiGridPlan:
    """Global grid 2^s per dim cut into regions of extent e, each seen through
    L+1 windows of raw extent e·2^ℓ subsampled back to e, plus p halo points.

    ``regions_per_dim`` defaults to 2^L; a different count is only allowed for
    plain decomposition (L = 0).
    """

    grid_exponent: int
    levels: int = 0
    padding: int = 0
    d: int = 2
    regions_per_dim: Optional[int] = None

    def __post_init__(self):
        if self.d not in (1, 2):
            raise PlanError(f"spatial dimension must be 1 or 2, got {self.d}")
        if self.grid_exponent < 1:
            raise PlanError("grid exponent must be >= 1")
        if not 0 <= self.levels <= self.grid_exponent:
            raise PlanError(f"levels must be in [0, {self.grid_exponent}], got {self.levels}")
        if self.levels > 0 and self.d != 2:
            raise PlanError("the multi-grid hierarchy needs d = 2")
        if self.padding < 0:
            raise PlanError("padding must be >= 0")
        rpd = self.regions
        if self.levels > 0 and rpd != 2**self.levels:
            raise PlanError(f"{rpd} regions per dim do not match {self.levels} levels")
        if rpd < 1 or self.global_extent % rpd:
            raise PlanError(f"{rpd} regions per dim do not divide extent {self.global_extent}")
        if self.padding >= self.region_extent:
            raise PlanError(
                f"padding {self.padding} must be smaller than the region extent {self.region_extent}"
            )

    @property
    def regions(self) -> int:
        return self.regions_per_dim or 2**self.levels

    @property
    def global_extent(self) -> int:
        return 2**self.grid_exponent

    @property
    def region_extent(self) -> int:
        return self.global_extent // self.regions

    @property
    def window_extent(self) -> int:
        return self.region_extent + 2 * self.padding

    @property
    def region_count(self) -> int:
        return self.regions**self.d

    def channels(self, d_a: int) -> int:
        return (self.levels + 1) * d_a

    def offsets(self) -> List[Tuple[int, ...]]:
        """Global start of every region, row-major region order."""
        starts = [self.region_extent * j for j in range(self.regions)]
        return list(itertools.product(starts, repeat=self.d))

    def level_index(self, offset: int, level: int) -> np.ndarray:
        """Periodic 1-d gather index of one region's level-ℓ padded window."""
        e, p, stride = self.region_extent, self.padding, 2**level
        start = offset - (e * stride - e) // 2 - p * stride
        return (start + stride * np.arange(e + 2 * p)) % self.global_extent

    def rescaled(self, grid_exponent: int) -> "MultiGridPlan":
        """Same region layout on a 2^s' grid, padding scaled with the grid."""
        shift = grid_exponent - self.grid_exponent
        padding = self.padding * 2**shift if shift >= 0 else self.padding // 2 ** (-shift)
        return MultiGridPlan(grid_exponent, self.levels, padding, self.d, self.regions_per_dim)


@dataclass
class RegionBatch:
    inputs: np.ndarray
    offsets: List[Tuple[int, ...]]
    plan: MultiGridPlan

    def __len__(self) -> int:
        return len(self.offsets)


# ---------------------- PARALLEL MAP ----------------------

def parallel_map(fn: Callable[[T], R], items: Iterable[T], threads: int = 1) -> List[R]:
    """Ordered map; results are gathered by position whatever the thread count."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


# ---------------------- OPERATIONS ----------------------

def _check_field(a: np.ndarray, plan: MultiGridPlan) -> None:
    expected = (plan.global_extent,) * plan.d
    if a.ndim != plan.d + 1 or a.shape[:-1] != expected:
        raise PlanError(f"field of shape {a.shape} does not fit a plan over {expected} with channels")


def decompose(a: np.ndarray, plan: MultiGridPlan) -> RegionBatch:
    """Cut a channels-last field ``(N…, d_A)`` into ``(regions, e+2p…, (L+1)·d_A)``.

    Channels are level-major: level 0 first, so channel 0 is the raw field.
    """
    a = np.asarray(a, dtype=np.float64)
    _check_field(a, plan)
    offsets = plan.offsets()
    regions = []
    for offset in offsets:
        levels = []
        for level in range(plan.levels + 1):
            index = [plan.level_index(o, level) for o in offset]
            levels.append(a[np.ix_(*index)])
        regions.append(np.concatenate(levels, axis=-1))
    return RegionBatch(np.stack(regions), offsets, plan)


def extract_regions(u: np.ndarray, plan: MultiGridPlan) -> np.ndarray:
    """Unpadded level-0 blocks ``(regions, e…, c)``; the inverse of :func:`stitch`."""
    u = np.asarray(u, dtype=np.float64)
    _check_field(u, plan)
    e = plan.region_extent
    return np.stack([u[tuple(slice(o, o + e) for o in offset)] for offset in plan.offsets()])


def crop_padding(x: np.ndarray, padding: int, d: int) -> np.ndarray:
    """Centre crop of ``padding`` points per side on the d axes before channels."""
    if padding == 0:
        return x
    lead = x.ndim - d - 1
    index = (slice(None),) * lead + (slice(padding, -padding),) * d + (slice(None),)
    return x[index]


def stitch(
    predictions: Union[Sequence[np.ndarray], Mapping[int, np.ndarray], np.ndarray],
    plan: MultiGridPlan,
) -> np.ndarray:
    """Place per-region ``(e…, c)`` predictions back on the global grid."""
    count = plan.region_count
    if isinstance(predictions, Mapping):
        keys = set(predictions)
        if keys != set(range(count)):
            missing = sorted(set(range(count)) - keys)
            extra = sorted(keys - set(range(count)))
            raise PlanError(f"region set mismatch: missing {missing}, unexpected {extra}")
        items = [predictions[j] for j in range(count)]
    else:
        items = list(predictions)
        if len(items) != count:
            raise PlanError(f"expected {count} region predictions, got {len(items)}")

    e = plan.region_extent
    channels = np.asarray(items[0]).shape[-1]
    out = np.empty((plan.global_extent,) * plan.d + (channels,), dtype=np.float64)
    for offset, block in zip(plan.offsets(), items):
        block = np.asarray(block)
        if block.shape != (e,) * plan.d + (channels,):
            raise PlanError(f"region prediction of shape {block.shape}, expected {(e,) * plan.d + (channels,)}")
        out[tuple(slice(o, o + e) for o in offset)] = block
    return out


def domain_compression_ratio(plan: MultiGridPlan) -> float:
    return plan.global_extent**plan.d / plan.window_extent**plan.d


def mg_inference(model, a: np.ndarray, plan: MultiGridPlan, threads: int = 1) -> np.ndarray:
    """Decompose, evaluate every region on its own, crop the halo and stitch."""
    batch = decompose(a, plan)
    if batch.inputs.shape[-1] != model.config.in_channels:
        raise ShapeError(
            f"plan produces {batch.inputs.shape[-1]} channels, model expects {model.config.in_channels}"
        )
    logger.debug("multi-grid inference over %d regions on %d threads", len(batch), threads)
    outputs = parallel_map(lambda region: model_forward(model, region), batch.inputs, threads)
    crops = [crop_padding(out, plan.padding, plan.d) for out in outputs]
    return stitch(crops, plan)


def padding_for_ratio(grid_exponent: int, levels: int, ratio: float, d: int = 2) -> int:
    """Halo p giving roughly the requested domain compression ratio."""
    window = 2**grid_exponent / ratio ** (1.0 / d)
    return max(0, round((window - 2 ** (grid_exponent - levels)) / 2))
