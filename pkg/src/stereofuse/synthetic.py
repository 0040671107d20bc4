"""Synthetic rectified stereo scenes with dense ground truth.

A scene is a stack of planar layers ``d(x, y) = a*x + b*y + c`` (left-image
coordinates), each with an analytic mask and a texture glued to the
surface. The left view shows the nearest layer covering each pixel; the right
view is rendered by mapping every right pixel back onto each layer
(``x = (x' + b*y + c) / (1 - a)``) and keeping the nearest hit, so
occlusions are exact. Some layers, or parts of the background, carry almost
no texture: that is where stereo matching alone goes wrong and range seeds
are supposed to help.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .core import DISP_DTYPE, DisparityMap, GrayImage
from .datasets import StereoSample


@dataclass
class Layer:
    a: float
    b: float
    c: float
    shape: str  # "full", "rect" or "ellipse"
    box: tuple[float, float, float, float] = (0.0, 0.0, 0.0, 0.0)  # x0, y0, x1, y1
    base: float = 128.0
    amplitude: float = 40.0
    texture: np.ndarray | None = field(default=None, repr=False)
    flat_boxes: list = field(default_factory=list)  # regions of the layer without texture

    def disparity(self, x, y):
        return self.a * x + self.b * y + self.c

    def covers(self, x, y):
        if self.shape == "full":
            return np.ones(np.broadcast(x, y).shape, dtype=bool)
        x0, y0, x1, y1 = self.box
        if self.shape == "rect":
            return (x >= x0) & (x <= x1) & (y >= y0) & (y <= y1)
        cx, cy = (x0 + x1) / 2, (y0 + y1) / 2
        rx, ry = (x1 - x0) / 2, (y1 - y0) / 2
        return ((x - cx) / rx) ** 2 + ((y - cy) / ry) ** 2 <= 1.0


def _smooth_noise(rng: np.random.Generator, shape, scale: float) -> np.ndarray:
    noise = ndimage.gaussian_filter(rng.standard_normal(shape), scale, mode="wrap")
    return noise / (noise.std() + 1e-12)


def _shade(layer: Layer, x, y, margin: int) -> np.ndarray:
    tex = ndimage.map_coordinates(layer.texture, [y, x + margin], order=1, mode="nearest")
    amp = np.full(np.shape(x), layer.amplitude)
    for x0, y0, x1, y1 in layer.flat_boxes:
        amp[(x >= x0) & (x <= x1) & (y >= y0) & (y <= y1)] = 0.0
    return layer.base + amp * tex


def render(layers: list[Layer], width: int, height: int, margin: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Left image, right image (float) and left ground-truth disparity.

    ``layers`` are ordered far to near; every layer must be nearer (larger
    disparity) than all layers before it wherever they overlap.
    """
    ys, xs = np.mgrid[0:height, 0:width].astype(np.float64)
    left = np.zeros((height, width))
    right = np.zeros((height, width))
    gt = np.zeros((height, width))
    left_done = np.zeros((height, width), dtype=bool)
    right_done = np.zeros((height, width), dtype=bool)
    for layer in reversed(layers):
        hit = layer.covers(xs, ys) & ~left_done
        left[hit] = _shade(layer, xs[hit], ys[hit], margin)
        gt[hit] = layer.disparity(xs[hit], ys[hit])
        left_done |= hit

        lx = (xs + layer.b * ys + layer.c) / (1.0 - layer.a)
        hit = layer.covers(lx, ys) & ~right_done
        right[hit] = _shade(layer, lx[hit], ys[hit], margin)
        right_done |= hit
    return left, right, gt


def make_scene(seed: int, width: int = 320, height: int = 240, max_disparity: float = 48.0,
               noise_sigma: float = 1.5, n_objects: int = 5, texture: tuple[float, float] = (6.0, 12.0),
               texture_scale: tuple[float, float] = (0.8, 1.6),
               min_contrast: float = 40.0, name: str | None = None) -> StereoSample:
    """Random layered scene with a sloped background and a few objects.

    Roughly a third of the objects and one large background patch are
    textureless. Object shades differ from the background shade by at least
    ``min_contrast`` grey levels. ``texture`` bounds the amplitude of the
    surface texture. Disparities stay within ``[0.15, 1] * max_disparity``.
    """
    rng = np.random.default_rng(seed)
    margin = int(max_disparity) + 4
    tex_shape = (height, width + 2 * margin)

    d_far, d_near_bg = 0.15 * max_disparity, 0.4 * max_disparity
    background = Layer(a=0.0, b=(d_near_bg - d_far) / max(height - 1, 1), c=d_far, shape="full",
                       base=float(rng.uniform(90, 160)), amplitude=float(rng.uniform(*texture)))
    background.texture = _smooth_noise(rng, tex_shape, rng.uniform(*texture_scale))
    fw, fh = rng.uniform(0.25, 0.4) * width, rng.uniform(0.3, 0.5) * height
    fx, fy = rng.uniform(0.1, 0.9) * width - fw / 2, rng.uniform(0.05, 0.5) * height
    background.flat_boxes.append((fx, fy, fx + fw, fy + fh))
    layers = [background]

    object_disps = np.sort(rng.uniform(0.45, 1.0, size=n_objects) * max_disparity)
    for i, d in enumerate(object_disps):
        ow = rng.uniform(0.15, 0.35) * width
        oh = rng.uniform(0.15, 0.4) * height
        ox = rng.uniform(0.0, width - ow)
        oy = rng.uniform(0.0, height - oh)
        slope = rng.uniform(-0.04, 0.04)
        textured = (i % 3) != 1
        base = float(rng.uniform(40, 220))
        while abs(base - background.base) < min_contrast:
            base = float(rng.uniform(40, 220))
        layer = Layer(a=slope, b=0.0, c=float(d - slope * (ox + ow / 2)),
                      shape="ellipse" if rng.random() < 0.4 else "rect",
                      box=(ox, oy, ox + ow, oy + oh), base=base,
                      amplitude=float(rng.uniform(*texture)) if textured else 0.0)
        layer.texture = _smooth_noise(rng, tex_shape, rng.uniform(*texture_scale))
        layers.append(layer)

    left, right, gt = render(layers, width, height, margin)
    gain = rng.uniform(0.95, 1.05)
    left = left + rng.normal(0.0, noise_sigma, left.shape)
    right = gain * right + rng.normal(0.0, noise_sigma, right.shape)
    left_img = GrayImage(np.clip(np.rint(left), 0, 255).astype(np.uint8))
    right_img = GrayImage(np.clip(np.rint(right), 0, 255).astype(np.uint8))
    focal = 1.25 * width
    baseline = 0.2
    return StereoSample(left_img, right_img, DisparityMap(gt.astype(DISP_DTYPE)),
                        name or f"synth{seed:03d}", focal, baseline)


def shifted_pair(seed: int, width: int, height: int, shift: int) -> tuple[GrayImage, GrayImage]:
    """Random texture pair with ``left[y, x] == right[y, x - shift]``."""
    rng = np.random.default_rng(seed)
    base = rng.integers(0, 256, size=(height, width + shift), dtype=np.uint8)
    return GrayImage(base[:, :width]), GrayImage(base[:, shift:])
