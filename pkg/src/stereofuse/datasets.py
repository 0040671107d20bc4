"""Dataset I/O, ground-truth seed sampling and depth/disparity conversion.

Layouts understood by the loaders::

    Middlebury-style sample directory        KITTI-style root
      im0.png   left image                     image_2/<id>_10.png     left
      im1.png   right image                    image_3/<id>_10.png     right
      disp0.pfm left ground truth              disp_occ_0/<id>_10.png  ground truth
      calib.txt cam0=[f 0 cx; ...] baseline=<mm>

A Middlebury root is either one sample directory or a directory of them.
"""

from __future__ import annotations

import math
import os
import re
import struct
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np

from .core import DISP_DTYPE, INVALID, DisparityMap, GrayImage, SeedSet


class DatasetError(ValueError):
    """Malformed or missing dataset file."""


# -- PFM ---------------------------------------------------------------------

def _read_header_token(f, path) -> bytes:
    line = f.readline()
    if not line:
        raise DatasetError(f"{path}: truncated PFM header")
    return line.strip()


def read_pfm(path: str | os.PathLike) -> DisparityMap:
    """Read a single-channel PFM; non-finite values become INVALID."""
    with open(path, "rb") as f:
        magic = _read_header_token(f, path)
        if magic == b"PF":
            raise DatasetError(f"{path}: colour PFM is not supported")
        if magic != b"Pf":
            raise DatasetError(f"{path}: not a PFM file (magic {magic!r})")
        dims = _read_header_token(f, path).split()
        if len(dims) != 2:
            raise DatasetError(f"{path}: malformed PFM dimensions line")
        try:
            width, height = int(dims[0]), int(dims[1])
            scale = float(_read_header_token(f, path))
        except ValueError as exc:
            raise DatasetError(f"{path}: malformed PFM header ({exc})") from None
        if width < 1 or height < 1 or scale == 0 or not math.isfinite(scale):
            raise DatasetError(f"{path}: invalid PFM dimensions or scale")
        dtype = "<f4" if scale < 0 else ">f4"
        raw = f.read(width * height * 4)
    if len(raw) != width * height * 4:
        raise DatasetError(f"{path}: truncated PFM raster ({len(raw)} of {width * height * 4} bytes)")
    data = np.frombuffer(raw, dtype=dtype).reshape(height, width)
    # rows are stored bottom to top
    data = np.flipud(data).astype(DISP_DTYPE)
    data[~np.isfinite(data)] = INVALID
    if np.any(data < 0):
        # Some tools store negative values for unknown pixels.
        data[data < 0] = INVALID
    return DisparityMap(data)


def write_pfm(disparity: DisparityMap, path: str | os.PathLike) -> None:
    """Write little-endian ``Pf``; INVALID pixels are stored as +inf."""
    data = np.asarray(disparity.data, dtype="<f4")
    header = f"Pf\n{disparity.width} {disparity.height}\n-1.0\n".encode("ascii")
    with open(path, "wb") as f:
        f.write(header)
        f.write(np.ascontiguousarray(np.flipud(data)).tobytes())


def pfm_header(path: str | os.PathLike) -> dict:
    with open(path, "rb") as f:
        magic = _read_header_token(f, path).decode("ascii", "replace")
        dims = _read_header_token(f, path).split()
        scale = float(_read_header_token(f, path))
    return {"format": "pfm", "magic": magic, "width": int(dims[0]), "height": int(dims[1]),
            "scale": scale, "endian": "little" if scale < 0 else "big"}


# -- PNG ---------------------------------------------------------------------

def _imread(path: str | os.PathLike) -> np.ndarray:
    if not Path(path).is_file():
        raise DatasetError(f"{path}: no such file")
    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise DatasetError(f"{path}: unreadable image")
    return img


def read_kitti_disparity_png(path: str | os.PathLike, d_max: float | None = None) -> DisparityMap:
    """16-bit KITTI disparity: 0 is invalid, otherwise ``raw / 256``.

    Values above ``d_max`` (when given) are clamped to it.
    """
    raw = _imread(path)
    if raw.ndim != 2:
        raise DatasetError(f"{path}: expected a single-channel PNG, got {raw.shape[2]} channels")
    if raw.dtype != np.uint16:
        raise DatasetError(f"{path}: expected 16-bit PNG, got {raw.dtype}")
    data = raw.astype(DISP_DTYPE) / DISP_DTYPE(256.0)
    if d_max is not None:
        np.minimum(data, DISP_DTYPE(d_max), out=data)
    data[raw == 0] = INVALID
    return DisparityMap(data)


def write_kitti_disparity_png(disparity: DisparityMap, path: str | os.PathLike) -> None:
    data = disparity.data
    raw = np.zeros(data.shape, dtype=np.uint16)
    valid = disparity.valid
    raw[valid] = np.clip(np.round(data[valid] * 256.0), 1, 65535).astype(np.uint16)
    if not cv2.imwrite(str(path), raw):
        raise DatasetError(f"{path}: could not write PNG")


def to_gray(img: np.ndarray) -> np.ndarray:
    """ITU-R 601 luma of a BGR(A) image, rounded to the nearest integer."""
    if img.ndim == 2:
        return img
    if img.ndim != 3 or img.shape[2] not in (3, 4):
        raise DatasetError(f"unsupported image shape {img.shape}")
    b, g, r = (img[..., i].astype(np.float64) for i in range(3))
    return np.floor(0.299 * r + 0.587 * g + 0.114 * b + 0.5).astype(np.uint8)


def read_gray(path: str | os.PathLike) -> GrayImage:
    img = _imread(path)
    if img.dtype != np.uint8:
        raise DatasetError(f"{path}: expected an 8-bit image, got {img.dtype}")
    return GrayImage(to_gray(img))


def write_gray(image: GrayImage, path: str | os.PathLike) -> None:
    if not cv2.imwrite(str(path), image.data):
        raise DatasetError(f"{path}: could not write image")


def png_header(path: str | os.PathLike) -> dict:
    with open(path, "rb") as f:
        head = f.read(33)
    if len(head) < 33 or head[:8] != b"\x89PNG\r\n\x1a\n" or head[12:16] != b"IHDR":
        raise DatasetError(f"{path}: not a PNG file")
    width, height, depth, color = struct.unpack(">IIBB", head[16:26])
    channels = {0: 1, 2: 3, 3: 1, 4: 2, 6: 4}.get(color)
    return {"format": "png", "width": width, "height": height, "bit_depth": depth,
            "color_type": color, "channels": channels}


# -- depth / disparity ---------------------------------------------------------

def depth_to_disparity(depth, f: float, baseline: float):
    """``f * baseline / depth``; depth and baseline in the same unit, f in pixels."""
    depth_arr = np.asarray(depth, dtype=np.float64)
    if np.any(~(depth_arr > 0)):
        raise ValueError("depth must be positive")
    if f <= 0 or baseline <= 0:
        raise ValueError("focal length and baseline must be positive")
    out = f * baseline / depth_arr
    return float(out) if out.ndim == 0 else out


def disparity_to_depth(disparity, f: float, baseline: float):
    disp = np.asarray(disparity, dtype=np.float64)
    if np.any(~(disp > 0)):
        raise ValueError("disparity must be positive")
    out = f * baseline / disp
    return float(out) if out.ndim == 0 else out


def depth_image_to_seeds(depth: np.ndarray, f: float, baseline: float, d_max: float | None = None) -> SeedSet:
    """Seeds from a depth image registered to the left camera.

    Pixels with zero or non-finite depth carry no measurement; disparities
    beyond ``d_max`` are dropped.
    """
    depth = np.asarray(depth, dtype=np.float64)
    if depth.ndim != 2:
        raise ValueError("depth image must be 2-D")
    measured = np.isfinite(depth) & (depth > 0)
    ys, xs = np.nonzero(measured)
    disp = depth_to_disparity(depth[ys, xs], f, baseline) if ys.size else np.zeros(0)
    disp = np.atleast_1d(disp)
    if d_max is not None:
        keep = disp <= d_max
        xs, ys, disp = xs[keep], ys[keep], disp[keep]
    return SeedSet(xs, ys, disp, depth.shape[1], depth.shape[0], d_max)


def read_depth_image(path: str | os.PathLike, depth_scale: float = 0.001) -> np.ndarray:
    """Depth in metres from a PFM (metres) or 16-bit PNG (``raw * depth_scale``)."""
    path = Path(path)
    if path.suffix.lower() == ".pfm":
        data = read_pfm(path).data.astype(np.float64)
        data[~np.isfinite(data)] = 0.0
        return data
    raw = _imread(path)
    if raw.ndim != 2 or raw.dtype != np.uint16:
        raise DatasetError(f"{path}: depth PNG must be single-channel 16-bit")
    return raw.astype(np.float64) * depth_scale


# -- samples -------------------------------------------------------------------

@dataclass(frozen=True)
class StereoSample:
    left: GrayImage
    right: GrayImage
    ground_truth: DisparityMap
    name: str
    focal: float | None = None
    baseline: float | None = None  # metres

    def __post_init__(self):
        if self.left.shape != self.right.shape or self.left.shape != self.ground_truth.shape:
            raise ValueError(f"sample {self.name}: left/right/ground-truth dimensions disagree")


def read_middlebury_calib(path: str | os.PathLike) -> dict:
    """Parse ``calib.txt``; returns focal (px), baseline (m, from mm) and any scalar keys."""
    text = Path(path).read_text(encoding="ascii")
    out: dict = {}
    for line in text.splitlines():
        if "=" not in line:
            continue
        key, value = (s.strip() for s in line.split("=", 1))
        if key.startswith("cam"):
            nums = [float(v) for v in re.findall(r"[-+0-9.eE]+", value)]
            out[key] = nums
        else:
            try:
                out[key] = float(value)
            except ValueError:
                out[key] = value
    if "cam0" not in out or not out["cam0"]:
        raise DatasetError(f"{path}: missing cam0 entry")
    if "baseline" not in out:
        raise DatasetError(f"{path}: missing baseline entry")
    out["focal"] = out["cam0"][0]
    out["baseline_m"] = float(out["baseline"]) / 1000.0
    return out


def load_middlebury_sample(directory: str | os.PathLike) -> StereoSample:
    directory = Path(directory)
    left = read_gray(directory / "im0.png")
    right = read_gray(directory / "im1.png")
    gt = read_pfm(directory / "disp0.pfm")
    focal = baseline = None
    calib_path = directory / "calib.txt"
    if calib_path.is_file():
        calib = read_middlebury_calib(calib_path)
        focal, baseline = calib["focal"], calib["baseline_m"]
    return StereoSample(left, right, gt, directory.name, focal, baseline)


def middlebury_sample_dirs(root: str | os.PathLike) -> list[Path]:
    root = Path(root)
    if not root.is_dir():
        raise DatasetError(f"{root}: not a directory")
    if (root / "im0.png").is_file():
        return [root]
    dirs = sorted(p for p in root.iterdir() if p.is_dir() and (p / "im0.png").is_file())
    if not dirs:
        raise DatasetError(f"{root}: no Middlebury-style samples (im0.png) found")
    return dirs


def load_middlebury(root: str | os.PathLike) -> list[StereoSample]:
    return [load_middlebury_sample(d) for d in middlebury_sample_dirs(root)]


def kitti_sample_ids(root: str | os.PathLike) -> list[str]:
    root = Path(root)
    gt_dir = root / "disp_occ_0"
    if not gt_dir.is_dir():
        raise DatasetError(f"{root}: missing disp_occ_0/ directory")
    ids = sorted(p.name[: -len("_10.png")] for p in gt_dir.glob("*_10.png"))
    if not ids:
        raise DatasetError(f"{gt_dir}: no *_10.png ground-truth files")
    return ids


def load_kitti_sample(root: str | os.PathLike, sample_id: str, d_max: float | None = None) -> StereoSample:
    root = Path(root)
    name = f"{sample_id}_10.png"
    return StereoSample(read_gray(root / "image_2" / name), read_gray(root / "image_3" / name),
                        read_kitti_disparity_png(root / "disp_occ_0" / name, d_max), sample_id)


def load_kitti(root: str | os.PathLike, d_max: float | None = None) -> list[StereoSample]:
    return [load_kitti_sample(root, i, d_max) for i in kitti_sample_ids(root)]


def load_dataset(kind: str, root: str | os.PathLike, d_max: float | None = None) -> list[StereoSample]:
    if kind in ("middlebury", "middlebury-style"):
        return load_middlebury(root)
    if kind in ("kitti", "kitti-style"):
        return load_kitti(root, d_max)
    raise ValueError(f"unknown dataset kind {kind!r}")


def write_middlebury_sample(sample: StereoSample, directory: str | os.PathLike, ndisp: int | None = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, img in (("im0.png", sample.left), ("im1.png", sample.right)):
        write_gray(GrayImage(img.data), directory / name)
    write_pfm(sample.ground_truth, directory / "disp0.pfm")
    f = sample.focal or 1.0
    baseline_mm = 1000.0 * (sample.baseline or 0.1)
    h, w = sample.left.shape
    if ndisp is None:
        valid = sample.ground_truth.valid
        ndisp = int(math.ceil(float(sample.ground_truth.data[valid].max()))) + 1 if valid.any() else 1
    lines = [
        f"cam0=[{f!r} 0 {w / 2!r}; 0 {f!r} {h / 2!r}; 0 0 1]",
        f"cam1=[{f!r} 0 {w / 2!r}; 0 {f!r} {h / 2!r}; 0 0 1]",
        "doffs=0",
        f"baseline={baseline_mm!r}",
        f"width={w}",
        f"height={h}",
        f"ndisp={ndisp}",
    ]
    (directory / "calib.txt").write_text("\n".join(lines) + "\n", encoding="ascii")
    return directory


def write_kitti_sample(sample: StereoSample, root: str | os.PathLike, sample_id: str) -> None:
    root = Path(root)
    for sub in ("image_2", "image_3", "disp_occ_0"):
        (root / sub).mkdir(parents=True, exist_ok=True)
    name = f"{sample_id}_10.png"
    write_gray(sample.left, root / "image_2" / name)
    write_gray(sample.right, root / "image_3" / name)
    write_kitti_disparity_png(sample.ground_truth, root / "disp_occ_0" / name)


# -- split -----------------------------------------------------------------------

@dataclass(frozen=True)
class SplitSpec:
    """How to turn ground truth into seeds plus a held-out evaluation map.

    ``noise_on`` selects whether the multiplicative noise perturbs disparity
    or depth (``d / (1 + u)``).
    """

    seed_fraction: float
    noise_fraction: float = 0.0
    rng_seed: int = 0
    noise_on: str = "disparity"

    def __post_init__(self):
        if not 0 <= self.seed_fraction < 1:
            raise ValueError(f"seed_fraction must lie in [0, 1), got {self.seed_fraction}")
        if not 0 <= self.noise_fraction < 1:
            raise ValueError(f"noise_fraction must lie in [0, 1), got {self.noise_fraction}")
        if self.noise_on not in ("disparity", "depth"):
            raise ValueError(f"noise_on must be 'disparity' or 'depth', got {self.noise_on!r}")
        if not 0 <= self.rng_seed < 2**64:
            raise ValueError("rng_seed must be a 64-bit unsigned integer")


def split_streams(rng_seed: int) -> tuple[np.random.Generator, np.random.Generator]:
    """Independent PCG64 streams for pixel selection and for noise."""
    selection, noise = np.random.SeedSequence(rng_seed).spawn(2)
    return np.random.Generator(np.random.PCG64(selection)), np.random.Generator(np.random.PCG64(noise))


def sample_split(gt: DisparityMap, spec: SplitSpec, d_max: float | None = None) -> tuple[SeedSet, DisparityMap]:
    """Draw ``round(seed_fraction * valid)`` ground-truth pixels as (noisy) seeds.

    Returns the seeds and an evaluation map holding every other valid pixel.
    With ``d_max`` set, ground truth above it is excluded from both.
    """
    if d_max is not None:
        gt = gt.clipped(d_max)
    valid = gt.valid.ravel()
    candidates = np.flatnonzero(valid)
    if candidates.size == 0:
        raise ValueError("ground truth has no valid pixels")
    count = int(math.floor(spec.seed_fraction * candidates.size + 0.5))
    select_rng, noise_rng = split_streams(spec.rng_seed)
    chosen = np.sort(candidates[select_rng.choice(candidates.size, size=count, replace=False)])
    values = gt.data.ravel()[chosen].astype(np.float64)
    if spec.noise_fraction > 0 and count:
        u = noise_rng.uniform(-spec.noise_fraction, spec.noise_fraction, size=count)
        values = values * (1.0 + u) if spec.noise_on == "disparity" else values / (1.0 + u)
        values = np.maximum(values, 0.0)
        if d_max is not None:
            values = np.minimum(values, d_max)
    width = gt.width
    seeds = SeedSet(chosen % width, chosen // width, values, width, gt.height, d_max)
    eval_data = gt.data.copy()
    eval_data.ravel()[chosen] = INVALID
    return seeds, DisparityMap(eval_data)

