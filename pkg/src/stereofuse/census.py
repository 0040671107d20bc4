"""Census transform and the Hamming-distance cost volume."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from .core import COST_CAP, COST_DTYPE, CostVolume, GrayImage

MAX_CENSUS_RADIUS = 3


@dataclass(frozen=True)
class CensusImage:
    """Per-pixel census codes; bit ``k`` belongs to the k-th window neighbour
    in row-major order with the centre skipped."""

    codes: np.ndarray  # (height, width) uint64
    window_radius: int

    @property
    def height(self) -> int:
        return self.codes.shape[0]

    @property
    def width(self) -> int:
        return self.codes.shape[1]

    @property
    def nbits(self) -> int:
        return (2 * self.window_radius + 1) ** 2 - 1

    def bits_at(self, x: int, y: int) -> tuple[int, ...]:
        code = int(self.codes[y, x])
        return tuple((code >> k) & 1 for k in range(self.nbits))


@njit(cache=True, parallel=True)
def _census_kernel(padded, radius):
    h = padded.shape[0] - 2 * radius
    w = padded.shape[1] - 2 * radius
    out = np.zeros((h, w), dtype=np.uint64)
    for y in prange(h):
        for x in range(w):
            center = padded[y + radius, x + radius]
            code = np.uint64(0)
            k = 0
            for dy in range(2 * radius + 1):
                for dx in range(2 * radius + 1):
                    if dy == radius and dx == radius:
                        continue
                    if padded[y + dy, x + dx] < center:
                        code |= np.uint64(1) << np.uint64(k)
                    k += 1
            out[y, x] = code
    return out


def census_transform(image: GrayImage, window_radius: int = 2) -> CensusImage:
    """Census codes over a ``(2r+1)^2`` window with edge-replicated borders."""
    if not 1 <= window_radius <= MAX_CENSUS_RADIUS:
        raise ValueError(f"census window radius must be in [1, {MAX_CENSUS_RADIUS}], got {window_radius}")
    padded = np.pad(image.data.astype(np.int16), window_radius, mode="edge")
    codes = _census_kernel(padded, window_radius)
    codes.setflags(write=False)
    return CensusImage(codes, window_radius)


def hamming(a, b) -> int:
    """Number of differing positions between two bit-vectors.

    Accepts equal-length 0/1 sequences, or a pair of integers (compared bitwise).
    """
    if isinstance(a, (int, np.integer)) and isinstance(b, (int, np.integer)):
        return (int(a) ^ int(b)).bit_count()
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"bit-vector length mismatch: {a.shape} vs {b.shape}")
    return int(np.count_nonzero(a != b))


@njit(cache=True, inline="always")
def _popcount64(v):
    v = v - ((v >> np.uint64(1)) & np.uint64(0x5555555555555555))
    v = (v & np.uint64(0x3333333333333333)) + ((v >> np.uint64(2)) & np.uint64(0x3333333333333333))
    v = (v + (v >> np.uint64(4))) & np.uint64(0x0F0F0F0F0F0F0F0F)
    return (v * np.uint64(0x0101010101010101)) >> np.uint64(56)


@njit(cache=True, parallel=True)
def _cost_kernel(left, right, d_max, cap, out):
    h, w = left.shape
    for y in prange(h):
        for x in range(w):
            lc = left[y, x]
            top = min(d_max, x)
            for d in range(top + 1):
                out[y, x, d] = np.uint16(_popcount64(lc ^ right[y, x - d]))
            for d in range(top + 1, d_max + 1):
                out[y, x, d] = cap


def build_cost_volume(left: CensusImage, right: CensusImage, d_max: int,
                      out: np.ndarray | None = None) -> CostVolume:
    """``C[y, x, d] = hamming(left[y, x], right[y, x - d])``; COST_CAP where ``x - d < 0``.

    ``out`` may supply a preallocated uint16 ``(h, w, d_max + 1)`` buffer.
    """
    if left.codes.shape != right.codes.shape:
        raise ValueError(f"census image dimensions differ: {left.codes.shape} vs {right.codes.shape}")
    if left.window_radius != right.window_radius:
        raise ValueError("census images use different window radii")
    if d_max < 0:
        raise ValueError("d_max must be non-negative")
    shape = (left.height, left.width, int(d_max) + 1)
    if out is None:
        out = np.empty(shape, dtype=COST_DTYPE)
    elif out.shape != shape or out.dtype != COST_DTYPE or not out.flags.c_contiguous:
        raise ValueError(f"cost buffer must be a contiguous uint16 array of shape {shape}")
    _cost_kernel(left.codes, right.codes, int(d_max), COST_DTYPE(COST_CAP), out)
    return CostVolume(out)
