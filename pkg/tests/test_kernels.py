import numpy as np
import pytest

from frameflow import kernels
from frameflow._accel import USE_NUMBA
from frameflow.fields import StripGrid, VelocityField
from frameflow.frame_bundle import FramePoint
from frameflow.geometry import ConnectionField, OutOfRangeError
from frameflow.mof import run_functional
from frameflow.paths import PathNoise, simulate_path

BACKENDS = ["numpy"] + (["numba"] if USE_NUMBA else [])


def _field(dim=2):
    g = StripGrid(16, 9, 2 * np.pi, 4.0, dim)

    def u(t, p):
        out = np.zeros((p.shape[0], dim))
        out[:, 0] = np.sin(p[:, 0]) * p[:, -1] * (1 + t)
        out[:, -1] = 0.3 * np.cos(p[:, 0]) * p[:, -1]
        return out
    return VelocityField.from_function(g, [0.0, 1.0], u)


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("dim", [2, 3])
def test_kernels_match_reference_stepper(backend, dim):
    vf = _field(dim)
    conn = ConnectionField.flat_ns(dim, 0.5, vf)
    x0 = np.r_[0.3, np.zeros(dim - 2), 0.05]
    r = kernels.run_ensemble(x0, 6, dt=1e-3, nsteps=150, nu=0.5, height=4.0, seed=7, velocity=vf,
                             backward=True, tau_anchor=0.5, backend=backend)
    for p in range(6):
        tr = simulate_path(FramePoint.standard(x0, 0.5), 0.15, 1e-3, conn, ("backward", 0.5),
                           rng=PathNoise(7, 0, p), height=4.0)
        assert np.max(np.abs(tr.records[-1].x_post - r.xend[p])) < 1e-12
        assert np.max(np.abs(run_functional(tr)[-1].M - r.M[p])) < 1e-12
        assert (tr.first_hit_index if tr.first_hit_index is not None else -1) == r.first_hit[p]
        assert abs(sum(rec.dphi for rec in tr.records) - r.phi[p]) < 1e-12


@pytest.mark.skipif(not USE_NUMBA, reason="numba disabled")
def test_numba_and_numpy_agree():
    vf = _field()
    kw = dict(dt=1e-3, nsteps=200, nu=0.5, height=4.0, seed=3, velocity=vf, backward=True, tau_anchor=0.5)
    a = kernels.run_ensemble(np.array([[0.1, 0.1], [1.0, 2.0]]), 300, backend="numba", **kw)
    b = kernels.run_ensemble(np.array([[0.1, 0.1], [1.0, 2.0]]), 300, backend="numpy", **kw)
    assert np.max(np.abs(a.xend - b.xend)) < 1e-11
    assert np.max(np.abs(a.M - b.M)) < 1e-11
    np.testing.assert_array_equal(a.first_hit, b.first_hit)


@pytest.mark.parametrize("backend", BACKENDS)
def test_worker_and_chunk_invariance(backend, monkeypatch):
    kw = dict(dt=2e-3, nsteps=50, nu=0.5, height=3.0, seed=12, backend=backend, antithetic=True)
    starts = np.array([[0.0, 0.0], [0.5, 0.3], [1.0, 1.0]])
    a = kernels.run_ensemble(starts, 500, workers=1, **kw)
    monkeypatch.setattr(kernels, "NUMPY_CHUNK", 37)
    monkeypatch.setattr(kernels, "NUMBA_CHUNK", 37)
    b = kernels.run_ensemble(starts, 500, workers=3, **kw)
    for f in ("xend", "M", "phi", "first_hit", "status"):
        np.testing.assert_array_equal(getattr(a, f), getattr(b, f))


def test_stream_selects_node_noise():
    kw = dict(dt=2e-3, nsteps=20, nu=0.5, height=3.0, seed=1)
    both = kernels.run_ensemble(np.array([[0.0, 1.0], [0.0, 1.0]]), 10, stream0=5, **kw)
    one = kernels.run_ensemble(np.array([[0.0, 1.0]]), 10, streams=[6], **kw)
    np.testing.assert_array_equal(both.xend[10:], one.xend)


def test_driftless_functional_is_projector():
    r = kernels.run_ensemble(np.array([[0.0, 0.0, 0.02]]), 200, dt=1e-3, nsteps=100, nu=0.5,
                             height=3.0, seed=2)
    hit = r.first_hit >= 0
    assert hit.any() and (~hit).any()
    np.testing.assert_array_equal(r.M[~hit], np.broadcast_to(np.eye(3), r.M[~hit].shape))
    q = np.diag([1.0, 1.0, 0.0])
    assert np.max(np.abs(r.M[hit] - q)) < 1e-14


def test_velocity_interpolation_exact_on_bilinear():
    g = StripGrid(8, 5, 4.0, 2.0)
    vf = VelocityField.from_function(g, [0.0, 2.0], lambda t, p: np.stack([p[:, 1] * (1 + t), 2 + 0 * p[:, 0]], 1))
    pts = np.array([[0.3, 0.7], [1.1, 1.9], [3.9, 0.1], [0.2, -0.4]])
    v = vf.sample(1.0, pts)
    np.testing.assert_allclose(v[:, 0], 2 * np.abs(pts[:, 1]), rtol=1e-13)
    np.testing.assert_allclose(v[:, 1], 2.0)


def test_range_and_input_errors():
    vf = _field()
    with pytest.raises(OutOfRangeError):
        kernels.run_ensemble(np.array([0.0, 1.0]), 2, dt=1e-3, nsteps=10, nu=0.5, height=4.0, seed=0,
                             velocity=vf, backward=True, tau_anchor=2.0)
    with pytest.raises(ValueError):
        kernels.run_ensemble(np.array([0.0, -1.0]), 2, dt=1e-3, nsteps=10, nu=0.5, height=4.0, seed=0)
