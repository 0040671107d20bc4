"""End-to-end disparity estimation for each supported method."""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .census import build_cost_volume, census_transform
from .core import COST_DTYPE, DisparityMap, FusionParams, GrayImage, SeedSet, validate_params
from .fusion import (
    anisotropic_baseline,
    diffusion_update,
    interpolate_seeds,
    naive_update,
    neighborhood_update,
)
from .sgm import AGG_DTYPE, aggregate_and_select


class Method(str, Enum):
    SGM = "sgm"
    NAIVE = "naive"
    NEIGHBORHOOD = "neighborhood"
    DIFFUSION = "diffusion"
    ANISO = "aniso-baseline"

    def __str__(self) -> str:
        return self.value

    @property
    def uses_seeds(self) -> bool:
        return self is not Method.SGM

    @property
    def uses_stereo(self) -> bool:
        return self is not Method.ANISO


METHODS = tuple(m.value for m in Method)


@dataclass
class StageTimings:
    census: float = 0.0
    aggregation: float = 0.0
    fusion: float = 0.0
    total: float = 0.0

    def as_ms(self) -> dict[str, float]:
        return {k: 1000.0 * v for k, v in self.__dict__.items()}


_workspace = threading.local()


def _buffer(name: str, shape: tuple[int, ...], dtype) -> np.ndarray:
    # Reused per thread: fresh 100+ MB volumes cost more in page faults than
    # the kernels that fill them.
    buf = getattr(_workspace, name, None)
    if buf is None or buf.shape != shape or buf.dtype != dtype:
        buf = np.empty(shape, dtype=dtype)
        setattr(_workspace, name, buf)
    return buf


def release_workspace() -> None:
    """Drop the cached scratch volumes of the calling thread."""
    _workspace.__dict__.clear()


@dataclass
class MethodResult:
    disparity: DisparityMap
    timings: StageTimings


def run_method(method: Method | str, left: GrayImage, right: GrayImage | None, seeds: SeedSet | None,
               params: FusionParams) -> MethodResult:
    """Compute a disparity map for ``left`` with the chosen method.

    ``right`` may be None only for the monocular baseline; ``seeds`` may be
    None (or empty) for plain SGM.
    """
    method = Method(method)
    validate_params(params)
    if seeds is None:
        seeds = SeedSet.empty(left.width, left.height)
    timings = StageTimings()
    start = time.perf_counter()

    if method is Method.ANISO:
        if len(seeds) == 0:
            disp = DisparityMap.invalid(left.height, left.width)
        else:
            disp = anisotropic_baseline(left, seeds, params.aniso_iterations, params.aniso_kappa,
                                        params.aniso_lambda)
        timings.fusion = timings.total = time.perf_counter() - start
        return MethodResult(disp, timings)

    if right is None:
        raise ValueError(f"method {method} needs a right image")
    if right.shape != left.shape:
        raise ValueError(f"left {left.shape} and right {right.shape} images differ in size")

    t0 = time.perf_counter()
    shape = (left.height, left.width, params.d_max + 1)
    volume = build_cost_volume(census_transform(left, params.census_radius),
                               census_transform(right, params.census_radius), params.d_max,
                               out=_buffer("costs", shape, COST_DTYPE))
    t1 = time.perf_counter()
    timings.census = t1 - t0

    if method is Method.NAIVE:
        naive_update(volume, seeds, inplace=True)
    elif method is Method.NEIGHBORHOOD:
        neighborhood_update(volume, seeds, left, params, inplace=True)
    elif method is Method.DIFFUSION and len(seeds):
        field = interpolate_seeds(seeds, left, params)
        diffusion_update(volume, field, params, inplace=True)
    t2 = time.perf_counter()
    timings.fusion = t2 - t1

    disp = aggregate_and_select(volume, params, scratch=_buffer("sums", shape, AGG_DTYPE))
    t3 = time.perf_counter()
    timings.aggregation = t3 - t2
    timings.total = t3 - start
    return MethodResult(disp, timings)
