"""Monte Carlo Feynman-Kac estimates of scalar and 2-form heat flows.

To evaluate the solution at (tau, x0) the paths run backward in physical
time: path time t sees the connection at ``tau - t``.  The endpoint value of
the initial data is contracted with the functional ``M`` accumulated along the
path, ``M Omega0(X) M^T`` for 2-forms and plain ``f(X)`` for scalars.

The flat Navier-Stokes connection goes through the ensemble kernels; any
other connection falls back to the reference one-path stepper.
"""
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .fields import FormField, form_components
from .frame_bundle import FrameCollapseError, FramePoint
from .geometry import ContractError
from .mof import run_functional
from .paths import PathNoise, simulate_path

MAX_DISCARD_FRACTION = 1e-3


class EstimationFailed(RuntimeError):
    pass


@dataclass
class McConfig:
    n_paths: int = 10000
    dt: float = 1e-3
    seed: int = 0
    strip_height: float = 10.0
    antithetic: bool = False
    workers: int = 1
    backend: str = None

    def __post_init__(self):
        if self.n_paths < 2:
            raise ContractError("n_paths must be at least 2")
        if not self.dt > 0:
            raise ContractError("dt must be positive")
        if not self.strip_height > 0:
            raise ContractError("strip height must be positive")
        if self.antithetic and self.n_paths % 2:
            raise ContractError("antithetic pairing needs an even path count")

    def nsteps(self, tau):
        m = int(round(tau / self.dt))
        if abs(m * self.dt - tau) > 1e-9 * max(1.0, tau):
            raise ContractError("tau=%g is not a multiple of dt=%g" % (tau, self.dt))
        return m

    def to_dict(self):
        return {"n_paths": self.n_paths, "dt": self.dt, "seed": self.seed,
                "strip_height": self.strip_height, "antithetic": self.antithetic,
                "workers": self.workers}


@dataclass
class EstimatorResult:
    value: np.ndarray
    stderr: np.ndarray
    n_effective: int
    n_discarded: int = 0
    extras: dict = field(default_factory=dict)


def _pairwise_sum(a):
    """Sum over axis 0 by a fixed binary tree on the index."""
    a = np.asarray(a, dtype=float)
    while a.shape[0] > 1:
        m = a.shape[0] // 2
        head = a[0:2 * m:2] + a[1:2 * m:2]
        a = np.concatenate([head, a[2 * m:]]) if a.shape[0] % 2 else head
    return a[0]


def reduce_statistics(samples, antithetic=False):
    """Mean and standard error over axis 0 with a path-ordered summation tree.

    With ``antithetic`` the samples are averaged in consecutive pairs first
    and the error is that of the pair means.
    """
    s = np.asarray(samples, dtype=float)
    if antithetic:
        if s.shape[0] % 2:
            raise ContractError("antithetic reduction needs an even count")
        s = 0.5 * (s[0::2] + s[1::2])
    n = s.shape[0]
    if n < 2:
        raise ContractError("need at least 2 samples")
    mean = _pairwise_sum(s) / n
    var = _pairwise_sum((s - mean) ** 2) / (n - 1)
    n_eff = n * 2 if antithetic else n
    return EstimatorResult(mean, np.sqrt(var / n), n_eff)


# --------------------------------------------------------------------------
# field adapters


def sample_form_field(ff, pts):
    """Bilinear interpolation of a FormField at points (m, n); returns (m, ncomp)."""
    g = ff.grid
    arr = np.ascontiguousarray(ff.values.transpose(1, 2, 0))[None]
    return kernels.velocity_at_np(np.zeros(1), arr, g.hx, g.hy, g.lx, 0.0, pts)


def components_to_matrix(vals, dim):
    """(m, ncomp) 2-form components -> (m, dim, dim) antisymmetric arrays."""
    out = np.zeros((vals.shape[0], dim, dim))
    for c, (a, b) in enumerate(form_components(dim, 2)):
        out[:, a, b] = vals[:, c]
        out[:, b, a] = -vals[:, c]
    return out


def matrix_to_components(mats):
    dim = mats.shape[-1]
    return np.stack([mats[..., a, b] for a, b in form_components(dim, 2)], axis=-1)


def form_callable(omega, dim):
    """Normalise a 2-form input to ``pts -> (m, dim, dim)``.

    Accepts a FormField, a callable returning matrices, or a callable returning
    (m, ncomp) components.
    """
    if isinstance(omega, FormField):
        return lambda pts: components_to_matrix(sample_form_field(omega, pts), dim)

    def fn(pts):
        v = np.asarray(omega(pts), dtype=float)
        if v.ndim == 3:
            return v
        return components_to_matrix(v.reshape(pts.shape[0], -1), dim)
    return fn


def scalar_callable(f):
    if isinstance(f, FormField):
        return lambda pts: sample_form_field(f, pts)[:, 0]
    if np.isscalar(f):
        c = float(f)
        return lambda pts: np.full(pts.shape[0], c)
    return lambda pts: np.asarray(f(pts), dtype=float).reshape(pts.shape[0])


# --------------------------------------------------------------------------
# ensembles


def _ensemble(starts, tau, conn, cfg, streams, pack_fn=None):
    """(xend, M, status) for every path of every start point, node-major."""
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    streams = np.atleast_1d(np.asarray(streams, dtype=np.int64))
    nsteps = cfg.nsteps(tau)
    if conn.is_flat_ns and pack_fn is None:
        r = kernels.run_ensemble(starts, cfg.n_paths, dt=cfg.dt, nsteps=nsteps, nu=conn.nu,
                                 height=cfg.strip_height, seed=cfg.seed, streams=streams,
                                 velocity=conn.gridded_velocity, backward=True, tau_anchor=tau,
                                 antithetic=cfg.antithetic, workers=cfg.workers,
                                 backend=cfg.backend)
        return r.xend, r.M, r.status
    return _ensemble_reference(starts, tau, conn, cfg, streams, pack_fn)


def _ensemble_reference(starts, tau, conn, cfg, streams, pack_fn):
    nn, n = starts.shape
    total = nn * cfg.n_paths
    xend = np.zeros((total, n))
    M = np.zeros((total, n, n))
    status = np.zeros(total, dtype=np.int8)
    for j in range(nn):
        r0 = FramePoint.standard(starts[j], conn.nu, conn.metric)
        for p in range(cfg.n_paths):
            k = j * cfg.n_paths + p
            try:
                tr = simulate_path(r0, tau, cfg.dt, conn, ("backward", tau),
                                   rng=PathNoise(cfg.seed, int(streams[j]), p, cfg.antithetic),
                                   height=cfg.strip_height)
                st = run_functional(tr, 0, pack_fn, "ns")[-1]
                xend[k] = tr.records[-1].x_post if tr.records else r0.x
                M[k] = st.M
            except FrameCollapseError:
                status[k] = kernels.STATUS_DISCARDED
    return xend, M, status


def _reduce_node(samples, status, cfg):
    good = status == kernels.STATUS_OK
    nd = int(np.count_nonzero(~good))
    if nd == len(status) or nd > MAX_DISCARD_FRACTION * len(status):
        raise EstimationFailed("%d of %d paths discarded" % (nd, len(status)))
    if nd:
        if cfg.antithetic:
            pair_ok = good[0::2] & good[1::2]
            good = np.repeat(pair_ok, 2)
        samples = samples[good]
    res = reduce_statistics(samples, cfg.antithetic)
    res.n_discarded = nd
    return res


def heat_scalar_estimate(f, x0, tau, conn, cfg, stream=0):
    """Solution of dV/dt = nu Lap V - u.grad V with Neumann wall condition at (tau, x0)."""
    fn = scalar_callable(f)
    x0 = np.asarray(x0, dtype=float)
    if tau == 0:
        v = fn(x0[None])
        return EstimatorResult(v[0], 0.0 * v[0], cfg.n_paths)
    xend, _, status = _ensemble(x0, tau, conn, cfg, stream)
    vals = np.zeros(xend.shape[0])
    ok = status == kernels.STATUS_OK
    vals[ok] = fn(xend[ok])
    return _reduce_node(vals, status, cfg)


def _form_samples(fn, xend, M, status):
    n = xend.shape[1]
    ok = status == kernels.STATUS_OK
    mats = np.zeros((xend.shape[0], n, n))
    om = fn(xend[ok])
    mats[ok] = np.einsum("pab,pbc,pdc->pad", M[ok], om, M[ok])
    return matrix_to_components(mats)


def heat_form_estimate(omega, x0, tau, conn, pack_fn=None, cfg=None, stream=0):
    """2-form heat flow with absolute wall conditions at (tau, x0).

    Returns components ordered as :func:`form_components`.  ``pack_fn(x)``
    supplies curvature for curved connections (reference stepper only).
    """
    if cfg is None:
        raise ContractError("cfg is required")
    x0 = np.asarray(x0, dtype=float)
    fn = form_callable(omega, x0.shape[0])
    if tau == 0:
        v = matrix_to_components(fn(x0[None]))[0]
        return EstimatorResult(v, np.zeros_like(v), cfg.n_paths)
    xend, M, status = _ensemble(x0, tau, conn, cfg, stream, pack_fn)
    return _reduce_node(_form_samples(fn, xend, M, status), status, cfg)


def grid_field_estimate(omega, grid, tau, conn, cfg, nodes=None, degree=2, stream0=0):
    """Estimate on every grid node (or on ``nodes`` = (js, is) index arrays).

    Node ``k`` in row-major order uses RNG stream ``stream0 + k``, so a single
    node reproduces :func:`heat_form_estimate` with ``stream=k`` exactly.
    Unestimated nodes are left as NaN.
    """
    pts_all = grid.points()
    if nodes is None:
        flat_idx = np.arange(grid.ny * grid.nx)
    else:
        js, is_ = nodes
        jj, ii = np.meshgrid(js, is_, indexing="ij")
        flat_idx = (jj * grid.nx + ii).ravel()
    ncomp = len(form_components(grid.dim, degree))
    vals = np.full((ncomp, grid.ny * grid.nx), np.nan)
    errs = np.full_like(vals, np.nan)
    ndisc = 0
    if tau == 0:
        pts = pts_all[flat_idx]
        if degree == 2:
            v = matrix_to_components(form_callable(omega, grid.dim)(pts))
        else:
            v = scalar_callable(omega)(pts)[:, None]
        vals[:, flat_idx] = v.T
        errs[:, flat_idx] = 0.0
    else:
        xend, M, status = _ensemble(pts_all[flat_idx], tau, conn, cfg, stream0 + flat_idx)
        if degree == 2:
            s_all = _form_samples(form_callable(omega, grid.dim), xend, M, status)
        else:
            s_all = np.zeros(xend.shape[0])
            ok = status == kernels.STATUS_OK
            s_all[ok] = scalar_callable(omega)(xend[ok])
        npth = cfg.n_paths
        for m, k in enumerate(flat_idx):
            sl = slice(m * npth, (m + 1) * npth)
            r = _reduce_node(s_all[sl], status[sl], cfg)
            vals[:, k] = np.atleast_1d(r.value)
            errs[:, k] = np.atleast_1d(r.stderr)
            ndisc += r.n_discarded
    ff = FormField(grid, degree, vals.reshape(ncomp, grid.ny, grid.nx),
                   errs.reshape(ncomp, grid.ny, grid.nx), tau)
    ff.meta["n_discarded"] = ndisc
    return ff
