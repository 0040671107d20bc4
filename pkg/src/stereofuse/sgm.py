"""Semi-global cost aggregation and winner-take-all disparity selection.

Each path keeps the usual per-step normalisation (subtracting the previous
pixel's minimum) so path costs stay bounded by ``C + p2``. Paths with a
vertical component are swept row by row; the pixels of one row depend only
on the previous row, so they are processed in parallel. Horizontal paths are
parallel over rows. :func:`aggregate_all` sweeps all downward paths together,
then all upward ones, so the wide sum is touched three times rather than once
per path. Everything is integer arithmetic, so the result does not
depend on the thread count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import int32, njit, prange

from .core import DISP_DTYPE, CostVolume, DisparityMap, FusionParams, validate_params

AGG_DTYPE = np.int32


@dataclass(frozen=True)
class PathDirection:
    """Step ``(dx, dy)`` from a pixel's predecessor to the pixel itself."""

    dx: int
    dy: int

    def __post_init__(self):
        if self.dx not in (-1, 0, 1) or self.dy not in (-1, 0, 1) or (self.dx == 0 and self.dy == 0):
            raise ValueError(f"invalid path direction ({self.dx}, {self.dy})")


FOUR_PATHS = (PathDirection(1, 0), PathDirection(-1, 0), PathDirection(0, 1), PathDirection(0, -1))
EIGHT_PATHS = FOUR_PATHS + (
    PathDirection(1, 1), PathDirection(-1, -1), PathDirection(1, -1), PathDirection(-1, 1),
)


def path_set(num_paths: int) -> tuple[PathDirection, ...]:
    if num_paths == 4:
        return FOUR_PATHS
    if num_paths == 8:
        return EIGHT_PATHS
    raise ValueError(f"num_paths must be 4 or 8, got {num_paths}")


@dataclass(frozen=True)
class AggregatedVolume:
    """Path-summed costs ``S[y, x, d]`` (int32)."""

    sums: np.ndarray

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.sums.shape


@njit(cache=True, inline="always")
def _step(c, prev, prev_min, cur, p1, p2):
    # one recurrence step; writes the new path costs into cur, returns their minimum.
    # int32 casts keep numba from widening to int64, which halves the vector width.
    n = c.shape[0]
    jump = int32(prev_min + p2)
    base = int32(prev_min)
    if n == 1:
        cur[0] = int32(int32(c[0]) - base + min(prev[0], jump))
        return cur[0]
    cur[0] = int32(int32(c[0]) - base + min(min(prev[0], int32(prev[1] + p1)), jump))
    for d in range(1, n - 1):
        t = int32(min(prev[d - 1], prev[d + 1]) + p1)
        cur[d] = int32(int32(c[d]) - base + min(min(prev[d], t), jump))
    cur[n - 1] = int32(int32(c[n - 1]) - base + min(min(prev[n - 1], int32(prev[n - 2] + p1)), jump))
    m = cur[0]
    for d in range(1, n):
        v = cur[d]
        m = v if v < m else m
    return m


@njit(cache=True, parallel=True)
def _aggregate_horizontal(costs, dx, p1, p2, out):
    h, w, n = costs.shape
    for y in prange(h):
        a = np.empty(n, dtype=np.int32)
        b = np.empty(n, dtype=np.int32)
        x = 0 if dx > 0 else w - 1
        prev_min = int32(0x7FFFFFFF)
        for d in range(n):
            a[d] = np.int32(costs[y, x, d])
            prev_min = min(prev_min, a[d])
            out[y, x, d] += a[d]
        prev, cur = a, b
        for step in range(1, w):
            x = step if dx > 0 else w - 1 - step
            prev_min = _step(costs[y, x], prev, prev_min, cur, p1, p2)
            for d in range(n):
                out[y, x, d] += cur[d]
            prev, cur = cur, prev


@njit(cache=True, parallel=True)
def _aggregate_rowsweep(costs, dx, dy, p1, p2, out):
    h, w, n = costs.shape
    prev = np.empty((w, n), dtype=np.int32)
    cur = np.empty((w, n), dtype=np.int32)
    prev_min = np.empty(w, dtype=np.int32)
    cur_min = np.empty(w, dtype=np.int32)
    for step in range(h):
        y = step if dy > 0 else h - 1 - step
        for x in prange(w):
            px = x - dx
            if step == 0 or px < 0 or px >= w:
                m = np.int32(0x7FFFFFFF)
                for d in range(n):
                    v = np.int32(costs[y, x, d])
                    cur[x, d] = v
                    m = min(m, v)
                cur_min[x] = m
            else:
                cur_min[x] = _step(costs[y, x], prev[px], prev_min[px], cur[x], p1, p2)
            for d in range(n):
                out[y, x, d] += cur[x, d]
        prev, cur = cur, prev
        prev_min, cur_min = cur_min, prev_min


@njit(cache=True, parallel=True)
def _horizontal_pair(costs, p1, p2, out):
    # out[y] = right-to-left + left-to-right paths; overwrites out
    h, w, n = costs.shape
    for y in prange(h):
        a = np.empty(n, dtype=np.int32)
        b = np.empty(n, dtype=np.int32)
        for direction in range(2):
            prev, cur = a, b
            prev_min = int32(0x7FFFFFFF)
            for step in range(w):
                x = w - 1 - step if direction == 0 else step
                if step == 0:
                    for d in range(n):
                        cur[d] = np.int32(costs[y, x, d])
                        prev_min = min(prev_min, cur[d])
                else:
                    prev_min = _step(costs[y, x], prev, prev_min, cur, p1, p2)
                if direction == 0:
                    for d in range(n):
                        out[y, x, d] = cur[d]
                else:
                    for d in range(n):
                        out[y, x, d] += cur[d]
                prev, cur = cur, prev


@njit(cache=True, parallel=True)
def _vertical_sweep(costs, dxs, dy, p1, p2, out, select, disp):
    # All paths with vertical step dy, swept together, added into out. With
    # select=True the finished sums are not stored; their arg-min goes to disp.
    h, w, n = costs.shape
    k = dxs.shape[0]
    prev = np.empty((k, w, n), dtype=np.int32)
    cur = np.empty((k, w, n), dtype=np.int32)
    prev_min = np.empty((k, w), dtype=np.int32)
    cur_min = np.empty((k, w), dtype=np.int32)
    for step in range(h):
        y = step if dy > 0 else h - 1 - step
        for x in prange(w):
            for j in range(k):
                px = x - dxs[j]
                if step == 0 or px < 0 or px >= w:
                    m = int32(0x7FFFFFFF)
                    for d in range(n):
                        v = int32(costs[y, x, d])
                        cur[j, x, d] = v
                        m = v if v < m else m
                    cur_min[j, x] = m
                else:
                    cur_min[j, x] = _step(costs[y, x], prev[j, px], prev_min[j, px], cur[j, x], p1, p2)
            if select:
                best = int32(0x7FFFFFFF)
                arg = 0
                for d in range(n):
                    v = out[y, x, d]
                    for j in range(k):
                        v += cur[j, x, d]
                    if v < best:
                        best = v
                        arg = d
                disp[y, x] = arg
            elif k == 3:
                for d in range(n):
                    out[y, x, d] += cur[0, x, d] + cur[1, x, d] + cur[2, x, d]
            else:
                for j in range(k):
                    for d in range(n):
                        out[y, x, d] += cur[j, x, d]
        prev, cur = cur, prev
        prev_min, cur_min = cur_min, prev_min


def _accumulate_path(costs: np.ndarray, direction: PathDirection, p1: int, p2: int, out: np.ndarray) -> None:
    p1 = np.int32(p1)
    p2 = np.int32(p2)
    if direction.dy == 0:
        _aggregate_horizontal(costs, direction.dx, p1, p2, out)
    else:
        _aggregate_rowsweep(costs, direction.dx, direction.dy, p1, p2, out)


def aggregate_path(volume: CostVolume, direction: PathDirection, p1: int, p2: int) -> np.ndarray:
    """Aggregated costs ``C_r'`` along a single direction, as an int32 ``(h, w, levels)`` array."""
    if p1 > p2:
        raise ValueError(f"p1 must not exceed p2 (p1={p1}, p2={p2})")
    out = np.zeros(volume.shape, dtype=AGG_DTYPE)
    _accumulate_path(volume.costs, direction, p1, p2, out)
    return out


def _sweep_all(volume: CostVolume, params: FusionParams, select: bool, out: np.ndarray | None = None):
    validate_params(params)
    p1, p2 = int32(params.p1), int32(params.p2)
    dxs = np.array([0, 1, -1] if params.num_paths == 8 else [0], dtype=np.int64)
    if out is None:
        out = np.empty(volume.shape, dtype=AGG_DTYPE)
    elif out.shape != volume.shape or out.dtype != AGG_DTYPE or not out.flags.c_contiguous:
        raise ValueError(f"scratch buffer must be a contiguous int32 array of shape {volume.shape}")
    disp = np.zeros(volume.shape[:2], dtype=DISP_DTYPE)
    _horizontal_pair(volume.costs, p1, p2, out)
    _vertical_sweep(volume.costs, dxs, 1, p1, p2, out, False, disp)
    _vertical_sweep(volume.costs, dxs, -1, p1, p2, out, select, disp)
    return out, disp


def aggregate_all(volume: CostVolume, params: FusionParams) -> AggregatedVolume:
    """Sum of :func:`aggregate_path` over the 4- or 8-direction set."""
    out, _ = _sweep_all(volume, params, select=False)
    return AggregatedVolume(out)


def aggregate_and_select(volume: CostVolume, params: FusionParams,
                         scratch: np.ndarray | None = None) -> DisparityMap:
    """``select_disparity(aggregate_all(volume, params))`` without storing the final sums.

    ``scratch`` may supply a reusable int32 buffer shaped like the volume.
    """
    _, disp = _sweep_all(volume, params, select=True, out=scratch)
    return DisparityMap(disp)


def select_disparity(agg: AggregatedVolume | np.ndarray) -> DisparityMap:
    """Per-pixel arg-min over disparity; ties go to the lowest level."""
    sums = agg.sums if isinstance(agg, AggregatedVolume) else np.asarray(agg)
    return DisparityMap(np.argmin(sums, axis=2).astype(DISP_DTYPE))
