"""Injecting sparse range measurements into the cost volume.

Three update strategies operate on a :class:`CostVolume` before aggregation:

* :func:`naive_update` zeroes the cost of each measured disparity;
* :func:`neighborhood_update` also forces the measured level onto
  intensity-similar pixels in a square window around each seed;
* :func:`diffusion_update` spreads the seeds with a bilateral interpolation
  (:func:`interpolate_seeds`) and rewrites the costs of every pixel whose
  interpolation is confident enough.

:func:`anisotropic_baseline` is the stereo-free comparison: it diffuses the
seeds over the guide image alone.

All kernels gather per output pixel, so overlapping seed influences resolve
the same way whatever the seed order or thread count.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit, prange

from .core import (
    DISP_DTYPE,
    INVALID,
    CostVolume,
    DisparityMap,
    FusionParams,
    GrayImage,
    SeedSet,
    validate_params,
)


@dataclass(frozen=True)
class InterpolationField:
    """Bilaterally interpolated seed disparities.

    ``disparity`` is INVALID where no seed lies within ``k_interp`` pixels.
    ``confidence`` is the largest single-seed weight at the pixel (1 at a seed,
    0 where invalid); ``weight_sum`` keeps the raw weight total.
    """

    disparity: np.ndarray  # float64
    confidence: np.ndarray  # float64
    weight_sum: np.ndarray  # float64

    @property
    def shape(self) -> tuple[int, int]:
        return self.disparity.shape

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.disparity)

    def to_map(self) -> DisparityMap:
        return DisparityMap(self.disparity.astype(DISP_DTYPE))


def gaussian(delta, sigma: float):
    """Unnormalised Gaussian, ``exp(-delta^2 / (2 sigma^2))``; equals 1 at 0."""
    delta = np.asarray(delta, dtype=np.float64)
    return np.exp(-(delta * delta) / (2.0 * sigma * sigma))


def _intensity_lut(sigma_r: float) -> np.ndarray:
    return gaussian(np.arange(256), sigma_r)


def _check_seeds(volume: CostVolume, seeds: SeedSet) -> np.ndarray:
    if (seeds.height, seeds.width) != (volume.height, volume.width):
        raise ValueError(
            f"seed image {seeds.width}x{seeds.height} does not match volume {volume.width}x{volume.height}")
    levels = seeds.levels
    if levels.size and levels.max() > volume.d_max:
        raise ValueError(f"seed disparity level {levels.max()} exceeds volume d_max={volume.d_max}")
    return levels



# -- naive -------------------------------------------------------------------

def naive_update(volume: CostVolume, seeds: SeedSet, *, inplace: bool = False) -> CostVolume:
    """Set ``C[y_m, x_m, round(d_m)] = 0`` for every seed; nothing else changes."""
    levels = _check_seeds(volume, seeds)
    out = volume if inplace else volume.copy()
    out.costs[seeds.ys, seeds.xs, levels] = 0
    return out


# -- neighborhood promotion ---------------------------------------------------

@njit(cache=True, parallel=True)
def _neighborhood_kernel(costs, guide, seed_index, seed_level, radius, lut, beta, eps, tau_d, tau_n):
    h, w, n = costs.shape
    big = np.inf
    for y in prange(h):
        pending = np.full(n, big)
        for x in range(w):
            touched = False
            center = seed_index[y, x]
            if center >= 0:
                dm = seed_level[center]
                for k in range(n):
                    pending[k] = beta if abs(k - dm) >= tau_d else eps
                touched = True
            gi = guide[y, x]
            for yy in range(max(0, y - radius), min(h, y + radius + 1)):
                for xx in range(max(0, x - radius), min(w, x + radius + 1)):
                    s = seed_index[yy, xx]
                    if s < 0:
                        continue
                    wm = lut[abs(gi - guide[yy, xx])]
                    v = eps if wm >= tau_n else (1.0 - wm) * beta
                    lvl = seed_level[s]
                    if v < pending[lvl]:
                        pending[lvl] = v
                    touched = True
            if touched:
                for k in range(n):
                    v = pending[k]
                    if v != big:
                        c = np.floor(v + 0.5)
                        if c > 65535.0:
                            c = 65535.0
                        costs[y, x, k] = np.uint16(c)
                        pending[k] = big


def _seed_index_map(seeds: SeedSet) -> np.ndarray:
    index = np.full((seeds.height, seeds.width), -1, dtype=np.int64)
    index[seeds.ys, seeds.xs] = np.arange(len(seeds))
    return index


def neighborhood_update(volume: CostVolume, seeds: SeedSet, guide: GrayImage, params: FusionParams,
                        *, inplace: bool = False) -> CostVolume:
    """Neighborhood promotion.

    At each seed pixel every level becomes ``beta`` outside the agreement band
    ``|k - d_m| >= tau_d`` and ``epsilon`` inside it. Each pixel in the
    ``(2 k_w + 1)^2`` window around a seed gets, at the seed's level only,
    ``epsilon`` when its intensity weight reaches ``tau_n`` and
    ``(1 - weight) * beta`` otherwise. Where several seeds assign the same
    cell, the smallest value wins.
    """
    validate_params(params)
    levels = _check_seeds(volume, seeds)
    if guide.shape != (volume.height, volume.width):
        raise ValueError("guide image does not match the cost volume")
    out = volume if inplace else volume.copy()
    if len(seeds) == 0:
        return out
    _neighborhood_kernel(out.costs, guide.data.astype(np.int64), _seed_index_map(seeds), levels,
                         int(params.k_w), _intensity_lut(params.sigma_r), float(params.beta),
                         float(params.epsilon), float(params.tau_d), float(params.tau_n))
    return out


# -- bilateral interpolation ---------------------------------------------------

MIN_WEIGHT = 1e-300

@njit(cache=True, parallel=True)
def _interpolate_kernel(guide, xs, ys, ds, gs, row_start, radius, half_span, lut_r, lut_d,
                        disp, conf, wsum):
    # Output row y gathers every seed in rows y - radius .. y + radius, in
    # seed order, over that seed's disc span on row y. Each row is owned by
    # one thread and sees the seeds in the same order, so sums are reproducible.
    h, w = guide.shape
    for y in prange(h):
        sw = np.zeros(w)
        swd = np.zeros(w)
        best = np.zeros(w)
        first = row_start[max(0, y - radius)]
        last = row_start[min(h, y + radius + 1)]
        for s in range(first, last):
            dy = ys[s] - y
            if dy < 0:
                dy = -dy
            span = half_span[dy]
            sx = xs[s]
            g = gs[s]
            d = ds[s]
            for x in range(max(0, sx - span), min(w, sx + span + 1)):
                dx = x - sx
                wt = lut_r[abs(g - guide[y, x])] * lut_d[dx * dx + dy * dy]
                if wt < MIN_WEIGHT:
                    continue  # subnormal weights break the convex-combination bound
                sw[x] += wt
                swd[x] += wt * d
                if wt > best[x]:
                    best[x] = wt
        for x in range(w):
            if sw[x] > 0.0:
                disp[y, x] = swd[x] / sw[x]
                conf[y, x] = min(best[x], 1.0)
                wsum[y, x] = sw[x]


def interpolate_seeds(seeds: SeedSet, guide: GrayImage, params: FusionParams) -> InterpolationField:
    """Bilateral interpolation of the seeds within ``k_interp`` pixels (Euclidean).

    Seed ``s`` contributes to pixel ``p`` with weight
    ``G_sigma_r(I(s) - I(p)) * G_sigma_d(|s - p|)``. Seed pixels keep their
    measured value exactly.
    """
    validate_params(params)
    if len(seeds) == 0:
        raise ValueError("interpolate_seeds needs at least one seed")
    if guide.shape != (seeds.height, seeds.width):
        raise ValueError("guide image does not match the seed set dimensions")
    h, w = guide.shape
    radius = int(params.k_interp)
    # seeds are stored row-major, so each image row owns a contiguous range
    row_start = np.searchsorted(seeds.ys, np.arange(h + 1), side="left").astype(np.int64)
    offsets = np.arange(radius + 1)
    half_span = np.floor(np.sqrt(radius * radius - offsets * offsets) + 1e-9).astype(np.int64)
    lut_r = _intensity_lut(params.sigma_r)
    lut_d = np.exp(-np.arange(2 * radius * radius + 1, dtype=np.float64) / (2.0 * params.sigma_d ** 2))

    guide_i = guide.data.astype(np.int64)
    disp = np.full((h, w), np.inf)
    conf = np.zeros((h, w))
    wsum = np.zeros((h, w))
    _interpolate_kernel(guide_i, seeds.xs, seeds.ys, seeds.ds, guide_i[seeds.ys, seeds.xs], row_start,
                        radius, half_span, lut_r, lut_d, disp, conf, wsum)
    # measured pixels stay unaltered
    disp[seeds.ys, seeds.xs] = seeds.ds
    conf[seeds.ys, seeds.xs] = 1.0
    return InterpolationField(disp, conf, wsum)


# -- diffusion-based update -------------------------------------------------------

@njit(cache=True, parallel=True)
def _diffusion_kernel(costs, disp, conf, beta, gamma, eps, tau_d, tau_l, tau_u, literal):
    h, w, n = costs.shape
    c_beta = np.uint16(min(np.floor(beta + 0.5), 65535.0))
    c_gamma = np.uint16(min(np.floor(gamma + 0.5), 65535.0))
    c_eps = np.uint16(min(np.floor(eps + 0.5), 65535.0))
    for y in prange(h):
        for x in range(w):
            dv = disp[y, x]
            if not np.isfinite(dv):
                continue
            wt = conf[y, x]
            if wt <= tau_l:
                if literal:
                    for k in range(n):
                        costs[y, x, k] = c_gamma
                continue
            level = np.ceil(dv - 0.5)
            if wt >= tau_u:
                inside = c_eps
            else:
                inside = np.uint16(min(np.floor((1.0 - wt) * gamma + 0.5), 65535.0))
            for k in range(n):
                costs[y, x, k] = c_beta if abs(k - level) >= tau_d else inside


def diffusion_update(volume: CostVolume, field: InterpolationField, params: FusionParams,
                     *, inplace: bool = False) -> CostVolume:
    """Rewrite costs from an interpolation field.

    For every pixel with a valid interpolated disparity ``d_v`` and confidence
    ``W > tau_l``: levels with ``|k - round(d_v)| >= tau_d`` get ``beta``; the
    levels inside the band get ``epsilon`` if ``W >= tau_u`` and
    ``(1 - W) * gamma`` otherwise. Pixels with ``W <= tau_l`` keep their
    stereo costs, unless ``params.literal_low_confidence`` is set, in which
    case every level becomes ``gamma``.
    """
    validate_params(params)
    if field.shape != (volume.height, volume.width):
        raise ValueError("interpolation field does not match the cost volume")
    out = volume if inplace else volume.copy()
    _diffusion_kernel(out.costs, field.disparity, field.confidence, float(params.beta), float(params.gamma),
                      float(params.epsilon), float(params.tau_d), float(params.tau_l), float(params.tau_u),
                      bool(params.literal_low_confidence))
    return out


# -- monocular baseline ---------------------------------------------------------

MIN_MASS = 1e-6


@njit(cache=True)
def _conductance(guide, kappa):
    h, w = guide.shape
    g_right = np.zeros((h, w))
    g_down = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            if x + 1 < w:
                t = (guide[y, x + 1] - guide[y, x]) / kappa
                g_right[y, x] = np.exp(-t * t)
            if y + 1 < h:
                t = (guide[y + 1, x] - guide[y, x]) / kappa
                g_down[y, x] = np.exp(-t * t)
    return g_right, g_down


@njit(cache=True, parallel=True)
def _diffuse_step(src, dst, g_right, g_down, lam):
    h, w = src.shape
    for y in prange(h):
        for x in range(w):
            c = src[y, x]
            flux = 0.0
            if x + 1 < w:
                flux += g_right[y, x] * (src[y, x + 1] - c)
            if x > 0:
                flux += g_right[y, x - 1] * (src[y, x - 1] - c)
            if y + 1 < h:
                flux += g_down[y, x] * (src[y + 1, x] - c)
            if y > 0:
                flux += g_down[y - 1, x] * (src[y - 1, x] - c)
            dst[y, x] = c + lam * flux


def diffuse_seeds(guide: GrayImage, seeds: SeedSet, iterations: int, kappa: float, lam: float):
    """Run the clamped diffusion; returns ``(value, mass)`` arrays.

    ``value`` carries seed disparity and ``mass`` the seed indicator; both
    follow the same explicit 4-neighbour scheme with edge-stopping
    conductance ``exp(-(dI / kappa)^2)`` and are re-clamped at the seeds after
    every iteration. ``value / mass`` is then a convex combination of seeds.
    """
    if iterations < 1:
        raise ValueError(f"iterations must be >= 1, got {iterations}")
    if not 0 < lam <= 0.25:
        raise ValueError(f"lambda must lie in (0, 0.25], got {lam}")
    if kappa <= 0:
        raise ValueError(f"kappa must be positive, got {kappa}")
    if guide.shape != (seeds.height, seeds.width):
        raise ValueError("guide image does not match the seed set dimensions")
    g_right, g_down = _conductance(guide.data.astype(np.float64), float(kappa))
    value = np.zeros(guide.shape)
    mass = np.zeros(guide.shape)
    value[seeds.ys, seeds.xs] = seeds.ds
    mass[seeds.ys, seeds.xs] = 1.0
    tmp_v = np.empty_like(value)
    tmp_m = np.empty_like(mass)
    for _ in range(iterations):
        _diffuse_step(value, tmp_v, g_right, g_down, float(lam))
        _diffuse_step(mass, tmp_m, g_right, g_down, float(lam))
        value, tmp_v = tmp_v, value
        mass, tmp_m = tmp_m, mass
        value[seeds.ys, seeds.xs] = seeds.ds
        mass[seeds.ys, seeds.xs] = 1.0
    return value, mass


def anisotropic_baseline(guide: GrayImage, seeds: SeedSet, iterations: int = 500, kappa: float = 10.0,
                         lam: float = 0.2, min_mass: float = MIN_MASS) -> DisparityMap:
    """Stereo-free densification: edge-stopping diffusion of the seeds over ``guide``.

    Pixels whose diffused seed mass stays below ``min_mass`` are INVALID.
    """
    value, mass = diffuse_seeds(guide, seeds, iterations, kappa, lam)
    out = np.full(guide.shape, INVALID, dtype=DISP_DTYPE)
    ok = mass >= min_mass
    out[ok] = value[ok] / mass[ok]
    return DisparityMap(out)
