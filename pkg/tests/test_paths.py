import numpy as np
import pytest
from scipy.stats import norm

from frameflow import kernels
from frameflow.fields import StripGrid, VelocityField
from frameflow.frame_bundle import FramePoint
from frameflow.geometry import ConnectionField, MetricModel, OutOfRangeError, TraceTorsion
from frameflow.paths import (PathNoise, PathState, simulate_path, skorokhod_reflect, step_backward_timedep,
                             step_forward)


def test_skorokhod_examples():
    assert skorokhod_reflect(0.5) == (0.5, 0.0)
    xn, dphi = skorokhod_reflect(-0.3)
    assert xn == 0.3 and abs(dphi - 0.6) < 1e-15


def test_zero_noise_interior_is_stationary():
    conn = ConnectionField.flat_ns(2, 0.5)
    st = PathState.start(FramePoint.standard([0.2, 3.0], 0.5))
    new, rec = step_forward(st, conn, 1e-3, noise=(np.zeros(2), 0.5))
    np.testing.assert_array_equal(new.frame.x, st.frame.x)
    np.testing.assert_array_equal(new.frame.e, st.frame.e)
    assert new.t == 1e-3 and rec.dphi == 0.0 and not rec.boundary_hit


def test_interior_increment_variance():
    nu, dt = 0.7, 1e-3
    conn = ConnectionField.flat_ns(2, nu)
    st = PathState.start(FramePoint.standard([0.0, 50.0], nu))
    rng = PathNoise(4, 0, 0)
    inc = []
    for _ in range(20000):
        x0 = st.frame.x[-1]
        st, _ = step_forward(st, conn, dt, rng=rng)
        inc.append(st.frame.x[-1] - x0)
    q = np.square(inc) / dt
    se = q.std(ddof=1) / np.sqrt(q.size)
    assert abs(q.mean() - 2 * nu) < 3 * se


def test_drift_is_minus_velocity():
    g = StripGrid(4, 3, 4.0, 20.0)
    u = np.array([1.0, 0.0])
    vf = VelocityField.from_function(g, [0.0], lambda t, p: np.tile(u, (p.shape[0], 1)))
    r = kernels.run_ensemble(np.array([[0.0, 10.0]]), 100000, dt=1e-3, nsteps=250, nu=0.5,
                             height=20.0, seed=8, velocity=vf, workers=4)
    d = (r.xend - np.array([0.0, 10.0])) / 0.25
    se = d.std(axis=0, ddof=1) / np.sqrt(d.shape[0])
    assert np.all(np.abs(d.mean(axis=0) + u) < 3 * se)


def test_backward_equals_forward_for_steady_connection():
    conn = ConnectionField.flat_ns(2, 0.5, lambda t, x: np.array([np.sin(x[1]), 0.3]))
    r0 = FramePoint.standard([0.0, 0.2], 0.5)
    fw = simulate_path(r0, 0.2, 1e-3, conn, "forward", rng=PathNoise(3, 1, 2), height=5.0)
    bw = simulate_path(r0, 0.2, 1e-3, conn, ("backward", 0.7), rng=PathNoise(3, 1, 2), height=5.0)
    for a, b in zip(fw.records, bw.records):
        np.testing.assert_array_equal(a.x_post, b.x_post)
        np.testing.assert_array_equal(a.e_post, b.e_post)
        assert a.dphi == b.dphi


def test_backward_range_error():
    conn = ConnectionField.flat_ns(2, 0.5, lambda t, x: np.zeros(2), t_range=(0.0, 0.5))
    st = PathState.start(FramePoint.standard([0.0, 1.0], 0.5))
    with pytest.raises(OutOfRangeError):
        step_backward_timedep(st, conn, 0.5, 0.6, noise=(np.zeros(2), 0.5))


def test_backward_heun_step_by_hand():
    nu, dt, tau = 0.5, 0.01, 0.3
    cvec = np.array([1.0, 0.5])
    conn = ConnectionField.flat_ns(2, nu, lambda t, x: t * cvec)
    r0 = FramePoint.standard([0.0, 2.0], nu)
    dB = np.array([0.05, -0.02])
    _, rec = step_backward_timedep(PathState.start(r0), conn, tau, dt, noise=(dB, 0.5))

    def gam_v(t, v):
        u = t * cvec
        return (u[:, None] * v[None, :] - v[:, None] * u[None, :]) / nu

    e = r0.e
    v0 = e @ dB
    eb = e - gam_v(tau, v0) @ e
    v1 = eb @ dB
    x1 = r0.x + 0.5 * (v0 + v1)
    e1 = e - 0.5 * (gam_v(tau, v0) @ e + gam_v(tau - dt, v1) @ eb)
    np.testing.assert_allclose(rec.x_post, x1, rtol=0, atol=1e-15)
    np.testing.assert_allclose(rec.e_post, e1, rtol=0, atol=1e-15)


def test_local_time_mean():
    r = kernels.run_ensemble(np.zeros((1, 2)), 100000, dt=1e-3, nsteps=1000, nu=0.5, height=100.0, seed=21,
                             workers=4)
    se = r.phi.std(ddof=1) / np.sqrt(r.phi.size)
    assert abs(r.phi.mean() - np.sqrt(2 / np.pi)) < 3 * se


def test_hitting_fraction():
    r = kernels.run_ensemble(np.array([[0.0, 0.1]]), 100000, dt=1e-3, nsteps=1000, nu=0.5,
                             height=100.0, seed=22, workers=4)
    frac = np.mean(r.first_hit >= 0)
    exact = 2 * norm.sf(0.1 / np.sqrt(2 * 0.5 * 1.0))
    assert abs(frac - exact) / exact < 0.02


def test_trajectory_indices_and_invariants():
    conn = ConnectionField.flat_ns(3, 0.5, lambda t, x: np.array([x[2], 0.0, 0.0]))
    r0 = FramePoint.standard([0.0, 0.0, 0.0], 0.5)
    tr = simulate_path(r0, 0.5, 1e-3, conn, rng=PathNoise(1, 0, 0), height=5.0)
    assert tr.first_hit_index == 0
    assert tr.first_hit_index <= tr.last_exit_index
    phi = 0.0
    for k, rec in enumerate(tr.records):
        assert rec.dphi >= 0
        if rec.dphi > 0:
            assert rec.boundary_hit
        if rec.boundary_hit or (k + 1) % 16 == 0:
            assert np.max(np.abs(rec.e_post.T @ rec.e_post - np.eye(3))) <= 1e-9
        assert np.max(np.abs(rec.theta_post @ rec.e_post - np.eye(3))) <= 1e-10
        phi += rec.dphi
        assert rec.x_post[-1] >= 0
    far = simulate_path(FramePoint.standard([0.0, 0.0, 4.0], 0.5), 0.01, 1e-3,
                        ConnectionField.flat_ns(3, 0.5), rng=PathNoise(1, 0, 0), height=10.0)
    assert far.first_hit_index is None and all(r.dphi == 0 for r in far.records)


def test_curved_path_runs_and_stays_orthonormal():
    m = MetricModel.conformal(2, 0.2, "quadratic")
    conn = ConnectionField(m, 0.5, TraceTorsion.zero(2))
    r0 = FramePoint.standard([0.0, 0.3], 0.5, m)
    tr = simulate_path(r0, 0.2, 1e-3, conn, rng=PathNoise(2, 0, 0), height=5.0)
    last = tr.records[-1]
    g = m.g(last.x_post)
    assert np.max(np.abs(last.e_post.T @ (g / 1.0) @ last.e_post - np.eye(2))) < 1e-3


def test_quadratic_variation_normal():
    nu, dt = 0.5, 1e-3
    r = kernels.run_ensemble(np.array([[0.0, 30.0]]), 50000, dt=dt, nsteps=1, nu=nu, height=100.0, seed=5)
    q = (r.xend[:, -1] - 30.0) ** 2 / dt
    se = q.std(ddof=1) / np.sqrt(q.size)
    assert abs(q.mean() - 2 * nu) < 3 * se


def test_horizon_must_be_multiple():
    with pytest.raises(ValueError):
        simulate_path(FramePoint.standard([0.0, 1.0], 0.5), 0.0105, 1e-3, ConnectionField.flat_ns(2, 0.5),
                      rng=PathNoise(0))
