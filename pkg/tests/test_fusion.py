import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import bilateral_value, clamped_relaxation
from stereofuse.core import COST_CAP, CostVolume, FusionParams, GrayImage, SeedSet
from stereofuse.fusion import (
    InterpolationField,
    anisotropic_baseline,
    diffuse_seeds,
    diffusion_update,
    gaussian,
    interpolate_seeds,
    naive_update,
    neighborhood_update,
)

# frozen from an mpmath evaluation at 30 digits
EXP_MINUS_4_5 = 0.0111089965382423064961
TWO_SEED_VALUE = 11.8242552380635634039


def random_case(rng, h=12, w=14, d_max=20, n_seeds=8):
    vol = CostVolume(rng.integers(0, 25, (h, w, d_max + 1)).astype(np.uint16))
    guide = GrayImage(rng.integers(0, 256, (h, w), dtype=np.uint8))
    flat = rng.choice(h * w, size=n_seeds, replace=False)
    seeds = SeedSet(flat % w, flat // w, rng.uniform(0, d_max, n_seeds), w, h)
    return vol, guide, seeds


def test_gaussian_is_unnormalised():
    assert gaussian(0.0, 3.0) == 1.0
    assert gaussian(30.0, 10.0) == pytest.approx(EXP_MINUS_4_5, abs=1e-15)


# -- naive ----------------------------------------------------------------------

def test_naive_single_seed():
    vol = CostVolume(np.full((8, 8, 16), 9, np.uint16))
    out = naive_update(vol, SeedSet.from_entries([(5, 5, 10.0)], 8, 8))
    changed = np.argwhere(out.costs != vol.costs)
    assert changed.tolist() == [[5, 5, 10]]
    assert out.costs[5, 5, 10] == 0


def test_naive_empty_is_identity():
    vol = CostVolume(np.full((3, 3, 4), 5, np.uint16))
    assert np.array_equal(naive_update(vol, SeedSet.empty(3, 3)).costs, vol.costs)


def test_naive_duplicate_seed_last_wins():
    vol = CostVolume(np.full((3, 3, 8), 5, np.uint16))
    out = naive_update(vol, SeedSet.from_entries([(1, 1, 2.0), (1, 1, 6.0)], 3, 3))
    assert np.argwhere(out.costs == 0).tolist() == [[1, 1, 6]]


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_naive_changes_one_cell_per_seed(seed):
    rng = np.random.default_rng(seed)
    vol, _, seeds = random_case(rng)
    vol.costs[...] += 1  # no cell starts at zero
    out = naive_update(vol, seeds)
    assert np.count_nonzero(out.costs != vol.costs) == len(seeds)


def test_seed_level_beyond_volume_rejected():
    vol = CostVolume.zeros(3, 3, 4)
    with pytest.raises(ValueError, match="d_max"):
        naive_update(vol, SeedSet.from_entries([(0, 0, 6.0)], 3, 3))


# -- neighborhood -------------------------------------------------------------------

def test_neighborhood_seed_pixel_band():
    vol = CostVolume(np.full((1, 1, 21), 7, np.uint16))
    params = FusionParams(beta=100.0, epsilon=0.0, tau_d=2, k_w=0)
    out = neighborhood_update(vol, SeedSet.from_entries([(0, 0, 10.0)], 1, 1), GrayImage(np.zeros((1, 1))), params)
    want = [0 if k in (9, 10, 11) else 100 for k in range(21)]
    assert out.costs[0, 0].tolist() == want


def test_neighborhood_neighbours():
    sigma_r = 10.0
    guide = np.full((1, 3), 100, np.uint8)
    guide[0, 2] = 130  # three sigma away from the seed intensity
    vol = CostVolume(np.full((1, 3, 8), 7, np.uint16))
    params = FusionParams(beta=10000.0, epsilon=0.0, sigma_r=sigma_r, tau_n=0.5, k_w=2)
    out = neighborhood_update(vol, SeedSet.from_entries([(0, 0, 4.0)], 3, 1), GrayImage(guide), params).costs
    assert out[0, 1, 4] == 0  # identical intensity: weight 1
    assert out[0, 2, 4] == int(np.floor((1 - EXP_MINUS_4_5) * 10000 + 0.5)) == 9889
    for x in (1, 2):  # other levels of neighbours untouched
        assert np.all(np.delete(out[0, x], 4) == 7)


def test_neighborhood_min_wins_and_order_free():
    rng = np.random.default_rng(4)
    vol, guide, seeds = random_case(rng, n_seeds=20)
    params = FusionParams(d_max=20, k_w=3)
    base = neighborhood_update(vol, seeds, guide, params).costs
    perm = rng.permutation(len(seeds))
    shuffled = SeedSet(seeds.xs[perm], seeds.ys[perm], seeds.ds[perm], seeds.width, seeds.height)
    assert np.array_equal(base, neighborhood_update(vol, shuffled, guide, params).costs)


def test_neighborhood_overlap_keeps_lowest():
    guide = GrayImage(np.array([[100, 100, 140]], np.uint8))
    vol = CostVolume(np.full((1, 3, 6), 9, np.uint16))
    params = FusionParams(beta=1000.0, sigma_r=10.0, tau_n=0.5, k_w=2, tau_d=1)
    # seed at x=0 (intensity 100) and x=2 (intensity 140) both cover x=1 at level 3
    seeds = SeedSet.from_entries([(0, 0, 3.0), (2, 0, 3.0)], 3, 1)
    out = neighborhood_update(vol, seeds, guide, params).costs
    assert out[0, 1, 3] == 0  # epsilon from the similar seed beats the penalty from the other


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_neighborhood_costs_in_range(seed):
    rng = np.random.default_rng(seed)
    vol, guide, seeds = random_case(rng)
    params = FusionParams(d_max=20, epsilon=3.0, k_w=4)
    out = neighborhood_update(vol, seeds, guide, params).costs
    changed = out != vol.costs
    assert np.all(out[changed] >= 3) and np.all(out <= COST_CAP)


# -- interpolation --------------------------------------------------------------------

def test_two_seed_value():
    guide = GrayImage(np.full((1, 13), 80, np.uint8))
    seeds = SeedSet.from_entries([(3, 0, 10.0), (12, 0, 20.0)], 13, 1)
    field = interpolate_seeds(seeds, guide, FusionParams(sigma_d=3.0, k_interp=15))
    assert field.disparity[0, 6] == pytest.approx(TWO_SEED_VALUE, abs=1e-6)


def test_seed_pixel_exact_with_full_confidence():
    guide = GrayImage(np.full((5, 5), 9, np.uint8))
    seeds = SeedSet.from_entries([(2, 2, 7.5), (4, 4, 1.0)], 5, 5)
    field = interpolate_seeds(seeds, guide, FusionParams())
    assert field.disparity[2, 2] == 7.5 and field.confidence[2, 2] == 1.0


def test_out_of_radius_is_invalid():
    guide = GrayImage(np.zeros((1, 20), np.uint8))
    field = interpolate_seeds(SeedSet.from_entries([(0, 0, 4.0)], 20, 1), guide, FusionParams(k_interp=5))
    assert field.valid[0].tolist() == [x <= 5 for x in range(20)]
    assert np.all(field.confidence[0, 6:] == 0)


def test_empty_seedset_rejected():
    with pytest.raises(ValueError):
        interpolate_seeds(SeedSet.empty(3, 3), GrayImage(np.zeros((3, 3))), FusionParams())


@settings(max_examples=200, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), sigma_r=st.floats(1.0, 60.0), k=st.integers(1, 8))
def test_interpolation_is_convex(seed, sigma_r, k):
    rng = np.random.default_rng(seed)
    _, guide, seeds = random_case(rng, n_seeds=int(rng.integers(1, 12)))
    field = interpolate_seeds(seeds, guide, FusionParams(sigma_r=sigma_r, k_interp=k))
    ok = field.valid
    assert np.all(field.disparity[ok] >= seeds.ds.min() - 1e-9)
    assert np.all(field.disparity[ok] <= seeds.ds.max() + 1e-9)
    assert np.all((field.confidence >= 0) & (field.confidence <= 1))
    assert np.all(field.confidence[~ok] == 0)


@settings(max_examples=100, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), value=st.floats(0.0, 200.0))
def test_constant_seeds_reproduced(seed, value):
    rng = np.random.default_rng(seed)
    _, guide, seeds = random_case(rng)
    seeds = SeedSet(seeds.xs, seeds.ys, np.full(len(seeds), value), seeds.width, seeds.height)
    field = interpolate_seeds(seeds, guide, FusionParams(k_interp=6))
    assert np.all(field.disparity[field.valid] == pytest.approx(value, rel=1e-12, abs=1e-12))


def test_matches_high_precision_evaluator():
    rng = np.random.default_rng(17)
    for _ in range(20):
        _, guide, seeds = random_case(rng, h=10, w=10, n_seeds=int(rng.integers(1, 10)))
        params = FusionParams(sigma_r=float(rng.uniform(10, 40)), k_interp=int(rng.integers(2, 8)))
        field = interpolate_seeds(seeds, guide, params)
        rows = guide.data.tolist()
        measured = {(sx, sy): d for sx, sy, d in seeds}
        for _ in range(10):
            x, y = int(rng.integers(10)), int(rng.integers(10))
            want = bilateral_value(list(seeds), rows, x, y, params.sigma_r, params.sigma_d, params.k_interp)
            if (x, y) in measured:
                assert field.disparity[y, x] == measured[(x, y)]
            elif want is None:
                assert not field.valid[y, x]
            else:
                assert field.disparity[y, x] == pytest.approx(float(want), abs=1e-6)


# -- diffusion update -------------------------------------------------------------------

def make_field(disp, conf):
    disp = np.asarray(disp, dtype=np.float64)
    conf = np.asarray(conf, dtype=np.float64)
    return InterpolationField(disp, conf, conf.copy())


def test_diffusion_full_confidence_band():
    vol = CostVolume(np.full((1, 1, 21), 7, np.uint16))
    out = diffusion_update(vol, make_field([[10.0]], [[1.0]]), FusionParams(beta=100.0, tau_d=2)).costs
    assert out[0, 0].tolist() == [0 if k in (9, 10, 11) else 100 for k in range(21)]


def test_diffusion_partial_confidence():
    vol = CostVolume(np.full((1, 1, 8), 7, np.uint16))
    params = FusionParams(beta=200.0, gamma=100.0, tau_l=0.1, tau_u=0.9, tau_d=2)
    out = diffusion_update(vol, make_field([[3.4]], [[0.5]]), params).costs
    assert out[0, 0].tolist() == [200, 200, 50, 50, 50, 200, 200, 200]


def test_diffusion_low_confidence_keeps_stereo_cost():
    rng = np.random.default_rng(0)
    vol = CostVolume(rng.integers(0, 25, (2, 2, 6)).astype(np.uint16))
    field = make_field(np.full((2, 2), 3.0), [[0.0, 0.1], [0.05, 0.1]])
    assert np.array_equal(diffusion_update(vol, field, FusionParams()).costs, vol.costs)
    literal = diffusion_update(vol, field, FusionParams(literal_low_confidence=True, gamma=500.0)).costs
    assert np.all(literal == 500)


def test_diffusion_all_invalid_is_identity():
    rng = np.random.default_rng(1)
    vol = CostVolume(rng.integers(0, 25, (4, 5, 6)).astype(np.uint16))
    field = make_field(np.full((4, 5), np.inf), np.zeros((4, 5)))
    assert np.array_equal(diffusion_update(vol, field, FusionParams()).costs, vol.costs)


def _scalar_diffusion(costs, disp, conf, p):
    out = costs.copy()
    h, w, n = costs.shape
    for y in range(h):
        for x in range(w):
            dv, wt = disp[y, x], conf[y, x]
            if not np.isfinite(dv) or wt <= p.tau_l:
                continue
            level = int(np.ceil(dv - 0.5))
            for k in range(n):
                if abs(k - level) >= p.tau_d:
                    out[y, x, k] = round(p.beta)
                elif wt >= p.tau_u:
                    out[y, x, k] = round(p.epsilon)
                else:
                    out[y, x, k] = int(np.floor((1 - wt) * p.gamma + 0.5))
    return out


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), tau_d=st.integers(1, 4))
def test_diffusion_matches_scalar_loop(seed, tau_d):
    rng = np.random.default_rng(seed)
    vol, guide, seeds = random_case(rng)
    params = FusionParams(d_max=20, tau_d=tau_d, gamma=1000.0, beta=3000.0, epsilon=2.0)
    field = interpolate_seeds(seeds, guide, params)
    got = diffusion_update(vol, field, params).costs
    assert np.array_equal(got, _scalar_diffusion(vol.costs, field.disparity, field.confidence, params))
    changed = got != vol.costs
    assert np.all(got[changed] >= 2)


def test_confident_pixels_select_within_band():
    rng = np.random.default_rng(2)
    vol, guide, seeds = random_case(rng, n_seeds=30)
    params = FusionParams(d_max=20)
    field = interpolate_seeds(seeds, guide, params)
    out = diffusion_update(vol, field, params).costs
    confident = field.confidence >= params.tau_u
    wta = np.argmin(out, axis=2)
    levels = np.ceil(field.disparity - 0.5)
    assert np.all(np.abs(wta - levels)[confident] < params.tau_d)


# -- anisotropic baseline ------------------------------------------------------------

def test_constant_guide_single_seed_spreads():
    guide = GrayImage(np.full((6, 6), 50, np.uint8))
    out = anisotropic_baseline(guide, SeedSet.from_entries([(0, 0, 9.0)], 6, 6), iterations=300)
    assert np.allclose(out.data, 9.0)


def test_hard_edge_blocks_leakage():
    img = np.zeros((8, 10), np.uint8)
    img[:, 5:] = 200
    seeds = SeedSet.from_entries([(1, 4, 30.0), (8, 4, 2.0)], 10, 8)
    value, mass = diffuse_seeds(GrayImage(img), seeds, 300, 5.0, 0.2)
    out = anisotropic_baseline(GrayImage(img), seeds, 300, 5.0, 0.2)
    assert np.all(np.abs(out.data[:, :5] - 30.0) < 1e-3)
    assert np.all(np.abs(out.data[:, 5:] - 2.0) < 1e-3)
    # without the second seed the right side receives almost no mass
    _, lone = diffuse_seeds(GrayImage(img), SeedSet.from_entries([(1, 4, 30.0)], 10, 8), 300, 5.0, 0.2)
    assert lone[:, 5:].max() < 1e-6


def test_matches_dense_relaxation():
    rng = np.random.default_rng(8)
    img = rng.integers(0, 60, (8, 8)).astype(np.uint8)
    seeds = SeedSet.from_entries([(1, 2, 12.0), (6, 5, 40.0)], 8, 8)
    out = anisotropic_baseline(GrayImage(img), seeds, iterations=200, kappa=20.0, lam=0.2)
    want, _ = clamped_relaxation(img, list(seeds), 200, 20.0, 0.2)
    assert np.max(np.abs(out.data - want)) < 1e-3


def test_baseline_parameter_checks():
    guide = GrayImage(np.zeros((3, 3), np.uint8))
    seeds = SeedSet.from_entries([(0, 0, 1.0)], 3, 3)
    with pytest.raises(ValueError):
        anisotropic_baseline(guide, seeds, iterations=0)
    with pytest.raises(ValueError):
        anisotropic_baseline(guide, seeds, lam=0.3)
    with pytest.raises(ValueError):
        anisotropic_baseline(guide, seeds, kappa=0.0)


def test_unreached_pixels_invalid():
    img = np.zeros((3, 7), np.uint8)
    img[:, 3] = 255  # wall
    out = anisotropic_baseline(GrayImage(img), SeedSet.from_entries([(0, 1, 4.0)], 7, 3), 50, kappa=1.0)
    assert out.valid[:, :3].all() and not out.valid[:, 4:].any()
