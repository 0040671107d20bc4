"""Shared domain types, the parameter bundle and its config-file format."""

from __future__ import annotations

import dataclasses
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

COST_CAP = 65535
INVALID = np.float32(np.inf)

COST_DTYPE = np.uint16
DISP_DTYPE = np.float32


class ParamError(ValueError):
    """Raised when a parameter bundle or an operation argument is out of range."""


@dataclass(frozen=True)
class GrayImage:
    """8-bit grayscale image, row-major ``(height, width)``."""

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"gray image must be a non-empty 2-D array, got shape {arr.shape}")
        if arr.dtype != np.uint8:
            if arr.size and (arr.min() < 0 or arr.max() > 255):
                raise ValueError("gray image intensities must lie in [0, 255]")
            if np.issubdtype(arr.dtype, np.floating) and not np.all(arr == np.round(arr)):
                raise ValueError("gray image intensities must be integers")
            arr = arr.astype(np.uint8)
        arr = np.ascontiguousarray(arr)
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape


@dataclass(frozen=True)
class DisparityMap:
    """Dense disparity estimate; :data:`INVALID` (+inf) marks missing pixels.

    Any non-finite input value is normalised to INVALID.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.array(self.data, dtype=DISP_DTYPE, copy=True)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"disparity map must be a non-empty 2-D array, got shape {arr.shape}")
        arr[~np.isfinite(arr)] = INVALID
        if np.any(arr < 0):
            raise ValueError("disparities must be non-negative")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @classmethod
    def invalid(cls, height: int, width: int) -> DisparityMap:
        return cls(np.full((height, width), INVALID, dtype=DISP_DTYPE))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def valid(self) -> np.ndarray:
        return self.data != INVALID

    def count_valid(self) -> int:
        return int(np.count_nonzero(self.valid))

    def clipped(self, d_max: float) -> DisparityMap:
        """Copy with every valid value above ``d_max`` marked INVALID."""
        arr = self.data.copy()
        arr[(arr > d_max) & (arr != INVALID)] = INVALID
        return DisparityMap(arr)


def round_level(d) -> np.ndarray | int:
    """Nearest integer disparity level, ties toward the lower level."""
    if np.ndim(d) == 0:
        return int(math.ceil(float(d) - 0.5))
    return np.ceil(np.asarray(d, dtype=np.float64) - 0.5).astype(np.int64)


class SeedSet:
    """Sparse measured disparities ``(x, y, d)`` inside a ``width x height`` image.

    Entries are deduplicated on ``(x, y)`` (the last occurrence wins) and kept
    sorted row-major so every consumer sees the same order.
    """

    __slots__ = ("width", "height", "xs", "ys", "ds")

    def __init__(self, xs, ys, ds, width: int, height: int, d_max: float | None = None):
        xs = np.asarray(xs, dtype=np.int64).ravel()
        ys = np.asarray(ys, dtype=np.int64).ravel()
        ds = np.asarray(ds, dtype=np.float64).ravel()
        if not (xs.size == ys.size == ds.size):
            raise ValueError("seed coordinate and disparity arrays differ in length")
        if width < 1 or height < 1:
            raise ValueError("seed set needs positive image dimensions")
        if xs.size:
            if xs.min() < 0 or xs.max() >= width or ys.min() < 0 or ys.max() >= height:
                raise ValueError("seed coordinates outside the image bounds")
            if not np.all(np.isfinite(ds)) or ds.min() < 0:
                raise ValueError("seed disparities must be finite and non-negative")
            if d_max is not None and ds.max() > d_max:
                raise ValueError(f"seed disparity {ds.max()} exceeds d_max={d_max}")
        flat = ys * width + xs
        # last-write-wins: keep the final occurrence of each pixel
        rev_unique, rev_idx = np.unique(flat[::-1], return_index=True)
        keep = flat.size - 1 - rev_idx
        self.width = int(width)
        self.height = int(height)
        self.xs = xs[keep]
        self.ys = ys[keep]
        self.ds = ds[keep]
        for a in (self.xs, self.ys, self.ds):
            a.setflags(write=False)

    @classmethod
    def from_entries(cls, entries: Iterable[tuple[int, int, float]], width: int, height: int,
                     d_max: float | None = None) -> SeedSet:
        entries = list(entries)
        if not entries:
            return cls.empty(width, height)
        xs, ys, ds = zip(*entries)
        return cls(xs, ys, ds, width, height, d_max)

    @classmethod
    def empty(cls, width: int, height: int) -> SeedSet:
        return cls([], [], [], width, height)

    @classmethod
    def from_map(cls, disparity: DisparityMap) -> SeedSet:
        ys, xs = np.nonzero(disparity.valid)
        return cls(xs, ys, disparity.data[ys, xs], disparity.width, disparity.height)

    def __len__(self) -> int:
        return int(self.xs.size)

    def __iter__(self) -> Iterator[tuple[int, int, float]]:
        for x, y, d in zip(self.xs.tolist(), self.ys.tolist(), self.ds.tolist()):
            yield x, y, d

    def __eq__(self, other) -> bool:
        if not isinstance(other, SeedSet):
            return NotImplemented
        return (self.width == other.width and self.height == other.height
                and np.array_equal(self.xs, other.xs) and np.array_equal(self.ys, other.ys)
                and np.array_equal(self.ds, other.ds))

    def __repr__(self) -> str:
        return f"SeedSet(n={len(self)}, width={self.width}, height={self.height})"

    @property
    def levels(self) -> np.ndarray:
        return round_level(self.ds)

    def to_map(self) -> DisparityMap:
        arr = np.full((self.height, self.width), INVALID, dtype=DISP_DTYPE)
        arr[self.ys, self.xs] = self.ds
        return DisparityMap(arr)


SEED_FILE_MAGIC = "stereofuse-seeds"


def write_seeds(seeds: SeedSet, path: str | os.PathLike) -> None:
    """Write ``seeds`` as text: a ``stereofuse-seeds W H`` header, then ``x y d`` lines."""
    lines = [f"{SEED_FILE_MAGIC} {seeds.width} {seeds.height}"]
    lines += [f"{x} {y} {d!r}" for x, y, d in seeds]
    Path(path).write_text("\n".join(lines) + "\n", encoding="ascii")


def read_seeds(path: str | os.PathLike, d_max: float | None = None) -> SeedSet:
    text = Path(path).read_text(encoding="ascii").splitlines()
    if not text:
        raise ValueError(f"{path}: empty seed file")
    head = text[0].split()
    if len(head) != 3 or head[0] != SEED_FILE_MAGIC:
        raise ValueError(f"{path}: bad seed file header {text[0]!r}")
    width, height = int(head[1]), int(head[2])
    entries = []
    for lineno, line in enumerate(text[1:], start=2):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 3:
            raise ValueError(f"{path}:{lineno}: expected 'x y d', got {line!r}")
        entries.append((int(parts[0]), int(parts[1]), float(parts[2])))
    return SeedSet.from_entries(entries, width, height, d_max)


class CostVolume:
    """Matching costs indexed ``(y, x, d)`` for ``d = 0 .. d_max``.

    Stored as uint16, so every cost lies in ``[0, COST_CAP]``. Fusion updates
    mutate ``costs`` in place; callers that need the original keep a ``copy()``.
    """

    __slots__ = ("costs",)

    def __init__(self, costs: np.ndarray):
        costs = np.asarray(costs)
        if costs.ndim != 3 or min(costs.shape) < 1:
            raise ValueError(f"cost volume must be (height, width, levels), got {costs.shape}")
        if costs.dtype != COST_DTYPE:
            if costs.size and (costs.min() < 0 or costs.max() > COST_CAP):
                raise ValueError("costs must lie in [0, COST_CAP]")
            costs = costs.astype(COST_DTYPE)
        self.costs = np.ascontiguousarray(costs)

    @classmethod
    def zeros(cls, height: int, width: int, d_max: int) -> CostVolume:
        return cls(np.zeros((height, width, d_max + 1), dtype=COST_DTYPE))

    @property
    def height(self) -> int:
        return self.costs.shape[0]

    @property
    def width(self) -> int:
        return self.costs.shape[1]

    @property
    def d_max(self) -> int:
        return self.costs.shape[2] - 1

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.costs.shape

    def copy(self) -> CostVolume:
        return CostVolume(self.costs.copy())


@dataclass(frozen=True)
class FusionParams:
    """Every tunable of the pipeline. ``sigma_d`` defaults to ``k_interp / 2``."""

    p1: int = 7
    p2: int = 100
    beta: float = float(COST_CAP // 2)
    epsilon: float = 0.0
    gamma: float = float(COST_CAP // 2)
    tau_d: float = 2.0
    tau_n: float = 0.5
    tau_l: float = 0.1
    tau_u: float = 0.9
    sigma_r: float = 10.0
    sigma_d: float | None = None
    k_w: int = 7
    k_interp: int = 15
    d_max: int = 256
    num_paths: int = 8
    census_radius: int = 2
    literal_low_confidence: bool = False
    aniso_iterations: int = 500
    aniso_kappa: float = 10.0
    aniso_lambda: float = 0.2

    def __post_init__(self):
        if self.sigma_d is None:
            object.__setattr__(self, "sigma_d", self.k_interp / 2.0)

    def replace(self, **changes) -> FusionParams:
        if "k_interp" in changes and "sigma_d" not in changes:
            # keep sigma_d tied to k_interp unless it was set explicitly
            if self.sigma_d == self.k_interp / 2.0:
                changes["sigma_d"] = None
        return dataclasses.replace(self, **changes)


def validate_params(params: FusionParams) -> FusionParams:
    """Return ``params`` unchanged or raise :class:`ParamError` naming the first violation."""
    p = params
    checks = [
        (p.p1 >= 0, f"p1 >= 0 violated (p1={p.p1})"),
        (p.p1 <= p.p2, f"p1 <= p2 violated (p1={p.p1}, p2={p.p2})"),
        (p.p2 <= COST_CAP, f"p2 <= COST_CAP violated (p2={p.p2})"),
        (0 <= p.epsilon < p.beta, f"0 <= epsilon < beta violated (epsilon={p.epsilon}, beta={p.beta})"),
        (0 <= p.epsilon < p.gamma, f"0 <= epsilon < gamma violated (epsilon={p.epsilon}, gamma={p.gamma})"),
        (p.beta <= COST_CAP, f"beta <= COST_CAP violated (beta={p.beta})"),
        (p.gamma <= COST_CAP, f"gamma <= COST_CAP violated (gamma={p.gamma})"),
        (p.tau_d >= 1, f"tau_d >= 1 violated (tau_d={p.tau_d})"),
        (0 < p.tau_n < 1, f"tau_n in (0, 1) violated (tau_n={p.tau_n})"),
        (0 <= p.tau_l <= 1 and 0 <= p.tau_u <= 1,
         f"tau_l, tau_u in [0, 1] violated (tau_l={p.tau_l}, tau_u={p.tau_u})"),
        (p.tau_l < p.tau_u, f"tau_l < tau_u violated (tau_l={p.tau_l}, tau_u={p.tau_u})"),
        (p.sigma_r > 0, f"sigma_r > 0 violated (sigma_r={p.sigma_r})"),
        (p.sigma_d > 0, f"sigma_d > 0 violated (sigma_d={p.sigma_d})"),
        (p.k_w >= 0, f"k_w >= 0 violated (k_w={p.k_w})"),
        (p.k_interp >= 1, f"k_interp >= 1 violated (k_interp={p.k_interp})"),
        (p.d_max >= 1, f"d_max >= 1 violated (d_max={p.d_max})"),
        (p.num_paths in (4, 8), f"num_paths in {{4, 8}} violated (num_paths={p.num_paths})"),
        (1 <= p.census_radius <= 3, f"census_radius in [1, 3] violated (census_radius={p.census_radius})"),
        (p.aniso_iterations >= 1, f"aniso_iterations >= 1 violated ({p.aniso_iterations})"),
        (p.aniso_kappa > 0, f"aniso_kappa > 0 violated ({p.aniso_kappa})"),
        (0 < p.aniso_lambda <= 0.25, f"aniso_lambda in (0, 0.25] violated ({p.aniso_lambda})"),
    ]
    for ok, message in checks:
        if not ok:
            raise ParamError(message)
    return params


# -- config file ------------------------------------------------------------
#
# One ``key = value`` pair per line, ``#`` starts a comment. Keys are the
# FusionParams field names. Floats are written with repr() so that
# parse(serialize(p)) == p holds bit for bit.

PARAM_TYPES = {f.name: f.type for f in dataclasses.fields(FusionParams)}


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def parse_value(text: str, kind: str):
    text = text.strip()
    if kind == "bool":
        low = text.lower()
        if low in ("true", "1", "yes", "on"):
            return True
        if low in ("false", "0", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if kind == "int":
        return int(text)
    if kind in ("float", "float | None"):
        return float(text)
    return text


def params_to_dict(params: FusionParams) -> dict:
    return dataclasses.asdict(params)


def params_from_dict(values: dict, base: FusionParams | None = None) -> FusionParams:
    unknown = set(values) - set(PARAM_TYPES)
    if unknown:
        raise ParamError(f"unknown parameter(s): {', '.join(sorted(unknown))}")
    base = base or FusionParams()
    return validate_params(base.replace(**values))


def serialize_params(params: FusionParams) -> str:
    lines = [f"{name} = {_format_value(value)}" for name, value in params_to_dict(params).items()]
    return "\n".join(lines) + "\n"


def parse_kv(text: str) -> dict[str, str]:
    """Split a ``key = value`` document into a raw string dict."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ValueError(f"line {lineno}: empty key")
        out[key.replace("-", "_")] = value
    return out


def parse_params(text: str, base: FusionParams | None = None) -> FusionParams:
    raw = parse_kv(text)
    values = {}
    for key, value in raw.items():
        if key not in PARAM_TYPES:
            raise ParamError(f"unknown parameter {key!r}")
        values[key] = parse_value(value, PARAM_TYPES[key])
    return params_from_dict(values, base)


def load_params(path: str | os.PathLike, base: FusionParams | None = None) -> FusionParams:
    return parse_params(Path(path).read_text(encoding="utf-8"), base)


def save_params(params: FusionParams, path: str | os.PathLike) -> None:
    Path(path).write_text(serialize_params(params), encoding="utf-8")


# -- worker control -----------------------------------------------------------

def max_workers() -> int:
    """Largest worker count the thread pool accepts."""
    import numba

    return int(numba.config.NUMBA_NUM_THREADS)


def default_workers() -> int:
    """Available parallelism: the CPUs this process may run on, capped by the pool."""
    try:
        cpus = len(os.sched_getaffinity(0))
    except AttributeError:
        cpus = os.cpu_count() or 1
    return max(1, min(cpus, max_workers()))


def set_workers(n: int | None) -> int:
    """Set the numba thread count (``None`` = available parallelism); returns the count used.

    Kernels only parallelise over disjoint output regions, so results do not
    depend on this value.
    """
    import numba

    limit = max_workers()
    n = default_workers() if n is None else int(n)
    if n < 1:
        raise ValueError(f"worker count must be >= 1, got {n}")
    n = min(n, limit)
    numba.set_num_threads(n)
    return n
