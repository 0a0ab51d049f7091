import numpy as np
import pytest

from frameflow import estimator
from frameflow.estimator import (EstimationFailed, McConfig, grid_field_estimate, heat_form_estimate,
                                 heat_scalar_estimate, reduce_statistics)
from frameflow.fields import FormField, StripGrid
from frameflow.frame_bundle import FramePoint
from frameflow.geometry import ConnectionField, ContractError
from frameflow.oracle import images_kernel_solution
from frameflow.paths import PathNoise, simulate_path

NU = 0.5
FLAT2 = ConnectionField.flat_ns(2, NU)


def gauss(y, c=1.0, w=0.3):
    return np.exp(-(y - c) ** 2 / (2 * w * w))


def test_reduce_examples(rs):
    r = reduce_statistics(np.array([1.5, 1.5]))
    assert r.value == 1.5 and r.stderr == 0.0
    r = reduce_statistics(np.array([0.0, 2.0]))
    assert r.value == 1.0 and r.stderr == 1.0
    r = reduce_statistics(rs.normal(size=10000))
    assert 0.0095 <= r.stderr <= 0.0105
    with pytest.raises(ContractError):
        reduce_statistics(np.array([1.0]))


def test_reduce_is_order_fixed(rs):
    s = rs.normal(size=(1001, 3))
    a = reduce_statistics(s)
    b = reduce_statistics(s.copy())
    np.testing.assert_array_equal(a.value, b.value)
    assert np.allclose(a.value, s.mean(axis=0), rtol=0, atol=1e-14)
    anti = reduce_statistics(np.array([1.0, 3.0, 2.0, 2.0]), antithetic=True)
    assert anti.value == 2.0 and anti.stderr == 0.0 and anti.n_effective == 4


def test_config_validation():
    for bad in (dict(n_paths=1), dict(dt=0.0), dict(strip_height=-1.0), dict(n_paths=3, antithetic=True)):
        with pytest.raises(ContractError):
            McConfig(**bad)
    with pytest.raises(ContractError):
        McConfig(dt=0.003).nsteps(0.01)


def test_constant_and_tau_zero():
    cfg = McConfig(n_paths=200, dt=1e-2, seed=1, strip_height=5.0)
    r = heat_scalar_estimate(2.5, [0.0, 0.1], 0.5, FLAT2, cfg)
    assert r.value == 2.5 and r.stderr == 0.0
    f = lambda p: gauss(p[:, -1])
    r0 = heat_scalar_estimate(f, [0.0, 0.4], 0.0, FLAT2, cfg)
    assert r0.value == gauss(0.4) and r0.stderr == 0.0
    w = lambda p: np.tile([0.3, -1.0, 2.0], (p.shape[0], 1))
    c3 = ConnectionField.flat_ns(3, NU)
    rf = heat_form_estimate(w, [0.0, 0.0, 0.5], 0.0, c3, cfg=cfg)
    np.testing.assert_array_equal(rf.value, [0.3, -1.0, 2.0])
    z = heat_form_estimate(lambda p: np.zeros((p.shape[0], 3)), [0.0, 0.0, 0.1], 0.2, c3, cfg=cfg)
    assert not np.any(z.value)


def test_scalar_images_example():
    cfg = McConfig(n_paths=100000, dt=1e-3, seed=5, strip_height=10.0)
    f = lambda p: gauss(p[:, -1])
    r = heat_scalar_estimate(f, [0.0, 0.2], 0.5, FLAT2, cfg)
    ref = images_kernel_solution(gauss, NU, 0.5, 0.2, "even")
    assert abs(r.value - ref) <= 3 * r.stderr


def test_2d_form_is_dirichlet():
    cfg = McConfig(n_paths=100000, dt=1e-3, seed=6, strip_height=10.0)
    bump = lambda y: np.sin(np.pi * y / 2) * (y < 2) * (y > 0)
    r = heat_form_estimate(lambda p: bump(p[:, -1])[:, None], [0.0, 0.5], 0.5, FLAT2, cfg=cfg)
    ref = images_kernel_solution(bump, NU, 0.5, 0.5, "odd")
    assert abs(r.value[0] - ref) <= 3 * r.stderr[0]


def test_single_node_grid_matches_point_estimate():
    g = StripGrid(3, 4, 1.5, 1.5)
    cfg = McConfig(n_paths=500, dt=2e-3, seed=9, strip_height=5.0)
    w = lambda p: (gauss(p[:, -1], 0.5) * np.cos(p[:, 0]))[:, None]
    ff = grid_field_estimate(w, g, 0.1, FLAT2, cfg, stream0=100)
    k = 2 * g.nx + 1
    pt = g.points()[k]
    r = heat_form_estimate(w, pt, 0.1, FLAT2, cfg=cfg, stream=100 + k)
    assert ff.values[0].ravel()[k] == r.value[0]
    assert ff.stderr[0].ravel()[k] == r.stderr[0]
    part = grid_field_estimate(w, g, 0.1, FLAT2, cfg, nodes=(np.array([2]), np.array([1])), stream0=100)
    assert part.values[0, 2, 1] == r.value[0]
    assert np.isnan(part.values[0, 0, 0])


def test_grid_worker_invariance():
    g = StripGrid(9, 17, 2.0, 2.0)
    w = lambda p: (gauss(p[:, -1], 0.8) * np.sin(np.pi * p[:, 0]))[:, None]
    a = grid_field_estimate(w, g, 0.05, FLAT2, McConfig(100, 5e-3, 3, 4.0, workers=1))
    b = grid_field_estimate(w, g, 0.05, FLAT2, McConfig(100, 5e-3, 3, 4.0, workers=4))
    np.testing.assert_array_equal(a.values, b.values)
    np.testing.assert_array_equal(a.stderr, b.stderr)


def test_zero_form_grid():
    g = StripGrid(4, 5, 1.0, 1.0)
    ff = grid_field_estimate(lambda p: np.zeros((p.shape[0], 1)), g, 0.02, FLAT2, McConfig(50, 1e-2, 0, 3.0))
    assert not np.any(ff.values)


def test_all_discarded_raises(monkeypatch):
    def broken(starts, tau, conn, cfg, streams, pack_fn=None):
        n = cfg.n_paths
        return np.zeros((n, 2)), np.zeros((n, 2, 2)), np.ones(n, dtype=np.int8)
    monkeypatch.setattr(estimator, "_ensemble", broken)
    with pytest.raises(EstimationFailed):
        heat_scalar_estimate(lambda p: p[:, 0], [0.0, 1.0], 0.1, FLAT2, McConfig(10, 1e-2))


def test_discard_threshold(monkeypatch):
    real = estimator._ensemble

    def some_bad(starts, tau, conn, cfg, streams, pack_fn=None):
        x, m, st = real(starts, tau, conn, cfg, streams, pack_fn)
        st = st.copy()
        st[:2] = 1
        return x, m, st
    monkeypatch.setattr(estimator, "_ensemble", some_bad)
    f = lambda p: p[:, -1]
    with pytest.raises(EstimationFailed):
        heat_scalar_estimate(f, [0.0, 1.0], 0.02, FLAT2, McConfig(1000, 1e-2))
    r = heat_scalar_estimate(f, [0.0, 1.0], 0.02, FLAT2, McConfig(4000, 1e-2))
    assert r.n_discarded == 2 and r.n_effective == 3998


def test_stderr_halves_with_four_times_paths():
    f = lambda p: gauss(p[:, -1])
    a = heat_scalar_estimate(f, [0.0, 0.6], 0.5, FLAT2, McConfig(10000, 1e-3, 1, 10.0))
    b = heat_scalar_estimate(f, [0.0, 0.6], 0.5, FLAT2, McConfig(40000, 1e-3, 2, 10.0))
    assert abs(a.stderr / b.stderr / 2 - 1) < 0.2


def test_semigroup():
    g = StripGrid(1, 121, 1.0, 6.0)
    f = lambda p: gauss(p[:, -1])
    half = grid_field_estimate(f, g, 0.25, FLAT2, McConfig(4000, 1e-3, 7, 6.0), degree=0)
    pts = np.array([[0.0, 0.1], [0.0, 0.7], [0.0, 1.3]])
    cfg = McConfig(20000, 1e-3, 8, 6.0)
    for k, x in enumerate(pts):
        full = heat_scalar_estimate(f, x, 0.5, FLAT2, cfg, stream=k)
        two = heat_scalar_estimate(half, x, 0.25, FLAT2, cfg, stream=100 + k)
        j = int(round(x[1] / g.hy))
        se = np.sqrt(full.stderr ** 2 + two.stderr ** 2 + half.stderr[0, j, 0] ** 2)
        assert abs(full.value - two.value) <= 3 * se


def test_martingale_increments():
    # F(t, y) = cos(k y) exp(-nu k^2 t) solves the Neumann heat equation
    k, tau, dt = 1.3, 0.5, 5e-3
    F = lambda t, y: np.cos(k * y) * np.exp(-NU * k * k * t)
    dFy = lambda t, y: -k * np.sin(k * y) * np.exp(-NU * k * k * t)
    sums, ends = [], []
    for p in range(300):
        tr = simulate_path(FramePoint.standard([0.0, 0.15], NU), tau, dt, FLAT2, rng=PathNoise(3, 0, p), height=10.0)
        s = 0.0
        for m, rec in enumerate(tr.records):
            t = tau - m * dt
            s += dFy(t, rec.x_pre[-1]) * (rec.e_pre @ rec.dB)[-1]
            if rec.dphi > 0:
                assert dFy(t, 0.0) == 0.0
        sums.append(s)
        ends.append(F(0.0, tr.records[-1].x_post[-1]))
    r = reduce_statistics(np.array(sums))
    assert abs(r.value) <= 3 * r.stderr
    e = reduce_statistics(np.array(ends))
    assert abs(e.value - F(tau, 0.15)) <= 3 * e.stderr
