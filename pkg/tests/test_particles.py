import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dualgrid.grid import GridMap, GridSpec
from dualgrid.measurement import ConfigurationError, FreeModelParams
from dualgrid.particles import (FilterParams, Particle, ParticleSet, SpatialIndex, f_v,
                                nearest_measurement, predict, resample, resample_weight,
                                sample_births, systematic_resample, update_weight_position,
                                update_weight_velocity)

FREE = FreeModelParams(sigma_f=0.5)
EYE = np.eye(2)


def f_d_ref(d, sigma=0.5):
    return math.exp(-0.5 * (d / sigma) ** 2)


def w_pos_ref(w, d, eps, sigma=0.5):
    if d is None:
        return (1 - eps) * w
    return f_d_ref(d, sigma) * (1 - eps) * w


def w_vel_ref(w, d, vp, vm, eps, s_inv, sigma=0.5):
    if d is None:
        return (1 - eps) * w
    fd = f_d_ref(d, sigma)
    dx, dy = vp[0] - vm[0], vp[1] - vm[1]
    m = dx * (s_inv[0][0] * dx + s_inv[0][1] * dy) + dy * (s_inv[1][0] * dx + s_inv[1][1] * dy)
    fv = math.exp(-0.5 * m)
    return fd * fv + (1 - fd) * (1 - eps) * w


# -- position weight ------------------------------------------------------------

def test_position_weight_examples():
    assert update_weight_position(0.8, 0.0, 0.0, FREE) == 0.8
    assert update_weight_position(1.0, 0.5, 0.1, FREE) == pytest.approx(0.5458775937413701, abs=1e-15)
    assert update_weight_position(0.5, None, 0.1, FREE) == pytest.approx(0.45, abs=1e-15)
    assert update_weight_position(0.5, float("nan"), 0.1, FREE) == pytest.approx(0.45, abs=1e-15)


def test_position_weight_random_oracle():
    rng = np.random.default_rng(0)
    n = 200
    w = rng.uniform(0, 1, n)
    d = rng.uniform(0, 3, n)
    d[::7] = np.nan
    eps = rng.uniform(0, 0.5)
    got = update_weight_position(w, d, eps, FREE)
    for k in range(n):
        ref = w_pos_ref(w[k], None if np.isnan(d[k]) else d[k], eps)
        assert abs(got[k] - ref) < 1e-12


# -- velocity weight ------------------------------------------------------------

def test_velocity_weight_examples():
    assert update_weight_velocity(0.3, 0.0, [2.0, 1.0], [2.0, 1.0], 0.1, FREE, EYE) == 1.0
    assert update_weight_velocity(0.7, None, [0, 0], [0, 0], 0.0, FREE, EYE) == 0.7
    # f_d = exp(-0.5), f_v = 0.8, eps 0.1, w_prev 0.5
    dv = math.sqrt(-2 * math.log(0.8))
    got = update_weight_velocity(0.5, 0.5, [dv, 0.0], [0.0, 0.0], 0.1, FREE, EYE)
    assert got == pytest.approx(0.6065306597 * 0.8 + 0.3934693403 * 0.9 * 0.5, abs=1e-9)
    assert got == pytest.approx(0.66229, abs=1e-5)


def test_velocity_weight_random_oracle():
    rng = np.random.default_rng(1)
    n = 200
    w = rng.uniform(0, 1, n)
    d = rng.uniform(0, 3, n)
    d[::9] = np.nan
    vp = rng.normal(0, 3, (n, 2))
    vm = rng.normal(0, 3, (n, 2))
    a = rng.normal(size=(2, 2))
    sigma = a @ a.T + 0.3 * np.eye(2)
    s_inv = np.linalg.inv(sigma)
    eps = 0.1
    got = update_weight_velocity(w, d, vp, vm, eps, FREE, s_inv)
    for k in range(n):
        ref = w_vel_ref(w[k], None if np.isnan(d[k]) else d[k], vp[k], vm[k], eps, s_inv.tolist())
        assert abs(got[k] - ref) < 1e-12


def test_f_v_peak_and_tail():
    assert f_v([3.0, -1.0], [3.0, -1.0], EYE) == 1.0
    assert f_v([10.0, 0.0], [0.0, 0.0], EYE) < 1e-20


# -- resample weight ------------------------------------------------------------

def test_resample_weight_examples():
    assert resample_weight(0.3, 0.7, "dual") == 0.7
    assert resample_weight(0.5, 0.5, "dual") == 0.5
    assert resample_weight(0.2, 0.9, "position") == 0.2
    assert resample_weight(0.2, 0.9, "velocity") == 0.9
    with pytest.raises(ConfigurationError):
        resample_weight(0.2, 0.9, "max")


@given(st.floats(0, 1), st.floats(0, 1))
def test_dual_dominates(wp, wv):
    d = resample_weight(wp, wv, "dual")
    assert d >= resample_weight(wp, wv, "position")
    assert d >= resample_weight(wp, wv, "velocity")
    assert d == max(wp, wv)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 30), st.integers(0, 2**31))
def test_weights_stay_finite_nonnegative(steps, seed):
    rng = np.random.default_rng(seed)
    wp = wv = rng.uniform(0, 1, 50)
    for _ in range(steps):
        d = np.where(rng.random(50) < 0.3, np.nan, rng.uniform(0, 5, 50))
        wp = update_weight_position(wp, d, 0.1, FREE)
        wv = update_weight_velocity(wv, d, rng.normal(0, 5, (50, 2)), rng.normal(0, 5, (50, 2)),
                                    0.1, FREE, EYE)
        for w in (wp, wv):
            assert np.all(np.isfinite(w)) and np.all(w >= 0) and np.all(w <= 1)


# -- prediction -----------------------------------------------------------------

def _set(x, y, vx, vy):
    n = len(x)
    return ParticleSet(np.asarray(x, float), np.asarray(y, float), np.asarray(vx, float),
                       np.asarray(vy, float), np.full(n, 0.1), np.full(n, 0.2))


def test_predict_noise_free():
    p = FilterParams(process_noise_pos=0.0, process_noise_vel=0.0)
    rng = np.random.default_rng(0)
    out = predict(_set([0.0, 5.0], [0.0, 1.0], [10.0, 0.0], [0.0, 0.0]), 0.1, p, rng)
    assert out.x == pytest.approx([1.0, 5.0], abs=1e-15)
    assert out.y == pytest.approx([0.0, 1.0], abs=1e-15)
    assert np.array_equal(out.w_position, [0.1, 0.1])


def test_predict_statistics():
    n = 100_000
    p = FilterParams(process_noise_pos=0.1, process_noise_vel=0.0)
    out = predict(_set(np.zeros(n), np.zeros(n), np.full(n, 10.0), np.zeros(n)), 0.1, p,
                  np.random.default_rng(1))
    tol = 3 * 0.1 / math.sqrt(n)
    assert abs(out.x.mean() - 1.0) < tol
    assert abs(out.y.mean()) < tol
    assert out.x.std() == pytest.approx(0.1, rel=0.02)


def test_predict_rejects_bad_dt():
    with pytest.raises(ValueError):
        predict(_set([0], [0], [0], [0]), 0.0, FilterParams(), np.random.default_rng(0))


# -- resampling -----------------------------------------------------------------

def test_equal_weights_copy_each_particle_once():
    for n in (1, 4, 7, 100, 1000):
        idx = systematic_resample(np.full(n, 1.0 / n), n, np.random.default_rng(n))
        assert np.array_equal(idx, np.arange(n))


def test_single_heavy_particle():
    w = np.zeros(10)
    w[3] = 2.0
    assert np.all(systematic_resample(w, 10, np.random.default_rng(0)) == 3)


def test_survivor_frequencies_monte_carlo():
    w = np.array([0.1, 0.2, 0.3, 0.4])
    rng = np.random.default_rng(2)
    counts = np.zeros(4)
    runs = 100_000
    for _ in range(runs):
        counts += np.bincount(systematic_resample(w, 4, rng), minlength=4)
    freq = counts / counts.sum()
    assert np.all(np.abs(freq - w) < 0.01)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 10), min_size=1, max_size=40), st.integers(1, 200),
       st.integers(0, 2**31))
def test_systematic_counts_are_floor_or_ceil(w, n, seed):
    w = np.asarray(w)
    if not w.sum() > 0:
        return
    idx = systematic_resample(w, n, np.random.default_rng(seed))
    assert len(idx) == n
    counts = np.bincount(idx, minlength=len(w))
    expected = n * w / w.sum()
    assert np.all(counts >= np.floor(expected - 1e-9)) and np.all(counts <= np.ceil(expected + 1e-9))
    assert np.all(counts[w == 0] == 0)


def _grid():
    return GridMap.create(GridSpec())


def test_resample_conserves_count_and_mass():
    params = FilterParams(particle_count=1000, birth_fraction=0.1)
    rng = np.random.default_rng(3)
    g = _grid()
    ps = _set(rng.uniform(-5, 5, 1000), rng.uniform(-5, 5, 1000), rng.normal(0, 5, 1000),
              rng.normal(0, 5, 1000))
    masses = rng.uniform(0, 1e-3, 1000)
    births = np.array([g.flat_index([[20.1, 3.1]])[0]])
    rs = resample(ps, masses, params, rng, births, g)
    out = rs.particles
    assert len(out) == 1000 and not rs.reset
    assert np.allclose(out.w_position, masses.sum() / 1000)
    assert np.array_equal(out.w_position, out.w_velocity)
    # 100 births, all inside the birth cell, velocities within the init bound
    born = out.take(np.arange(900, 1000))
    assert np.all(g.flat_index(born.positions) == births[0])
    assert np.all(np.abs(born.velocities) <= params.v_init_max)


def test_resample_resets_on_zero_mass():
    params = FilterParams(particle_count=200)
    g = _grid()
    ps = _set(np.zeros(200), np.zeros(200), np.zeros(200), np.zeros(200))
    rs = resample(ps, np.zeros(200), params, np.random.default_rng(0), np.array([], int), g)
    assert rs.reset and len(rs.particles) == 200
    assert np.allclose(rs.particles.w_position, 1 / 200)
    assert np.all(g.flat_index(rs.particles.positions) >= 0)


def test_births_cover_the_map_without_cells():
    g = _grid()
    b = sample_births(5000, np.array([], dtype=int), g, FilterParams(), np.random.default_rng(0))
    assert np.all(g.flat_index(b.positions) >= 0)


# -- nearest neighbor -----------------------------------------------------------

def test_single_measurement():
    idx = SpatialIndex([[2.0, 0.0]])
    assert nearest_measurement(Particle(0, 0, 0, 0, 1, 1), idx, 5.0) == (0, 2.0)


def test_empty_index():
    assert nearest_measurement(Particle(0, 0, 0, 0, 1, 1), SpatialIndex(np.zeros((0, 2))), 5.0) is None


def test_radius_is_inclusive():
    idx = SpatialIndex([[3.0, 4.0]])
    i, d = idx.query([[0.0, 0.0]], 5.0)
    assert i[0] == 0 and d[0] == 5.0
    i, d = idx.query([[0.0, -1e-9]], 5.0)
    assert i[0] == -1 and np.isnan(d[0])


def test_nearest_matches_brute_force():
    rng = np.random.default_rng(4)
    meas = rng.uniform(-100, 100, (1000, 2))
    q = rng.uniform(-110, 110, (5000, 2))
    i, d = SpatialIndex(meas).query(q, 5.0)
    dist = np.hypot(q[:, None, 0] - meas[None, :, 0], q[:, None, 1] - meas[None, :, 1])
    best = dist.min(axis=1)
    hit = best <= 5.0
    assert np.array_equal(i >= 0, hit)
    # the tree and hypot may round differently in the last bit
    assert np.allclose(d[hit], best[hit], rtol=0, atol=1e-12)
    assert np.allclose(dist[np.flatnonzero(hit), i[hit]], best[hit], rtol=0, atol=1e-12)


def test_filter_params_validation():
    for kw in ({"particle_count": 0}, {"epsilon": 1.0}, {"birth_fraction": 1.5},
               {"weight_mode": "mean"}, {"sigma_v": ((1, 0), (0, -1))},
               {"sigma_v": ((1, 0.5), (0, 1))}):
        with pytest.raises(ConfigurationError):
            FilterParams(**kw)
