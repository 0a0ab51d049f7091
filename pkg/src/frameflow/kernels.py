"""Ensemble kernels for the flat Navier-Stokes connection.

In flat space the connection acts on a vector ``v`` as
``Gamma(v) = c (u v^T - v u^T)`` with ``c = 1 / (nu (n - 1))``; the
frames stay ``sqrt(2 nu)``-orthonormal and the scheme is the one of
:mod:`frameflow.paths`.  The kernels return per path the end point, the
functional ``M`` at the end, the local time and the first hit step.

Two implementations share one contract: a numba loop over paths (compiled
with ``nogil`` so worker threads run in parallel) and a numpy version
vectorised over paths.  Results depend on (seed, stream, path) only, never
on chunking or worker count.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import rng as _rng
from ._accel import USE_NUMBA, njit
from .geometry import OutOfRangeError

REORTH_EVERY = 16
NUMPY_CHUNK = 4096
NUMBA_CHUNK = 2048

STATUS_OK = 0
STATUS_DISCARDED = 1


@dataclass
class EnsembleResult:
    xend: np.ndarray
    M: np.ndarray
    phi: np.ndarray
    first_hit: np.ndarray
    status: np.ndarray
    backend: str = "numpy"

    @property
    def n_discarded(self):
        return int(np.count_nonzero(self.status != STATUS_OK))


# --------------------------------------------------------------------------
# velocity interpolation


def _time_weights(times, tau):
    nt = times.shape[0]
    if nt == 1:
        return 0, 0, 0.0
    if tau <= times[0]:
        return 0, 1, 0.0
    if tau >= times[-1]:
        return nt - 2, nt - 1, 1.0
    k = int(np.searchsorted(times, tau, side="right")) - 1
    return k, k + 1, (tau - times[k]) / (times[k + 1] - times[k])


def velocity_at_np(times, U, hx, hy, lx, tau, pts):
    """Velocity at points (m, n): linear in time, bilinear on the (x, normal) grid.

    ``U`` has shape (nt, ny, nx, n).  The normal coordinate is mirrored at the
    wall and clamped to the top row.
    """
    pts = np.asarray(pts, dtype=float)
    ny, nx = U.shape[1], U.shape[2]
    k0, k1, w = _time_weights(times, tau)
    xt = np.mod(pts[:, 0], lx)
    fi = xt / hx
    i0 = np.floor(fi).astype(np.int64)
    fx = fi - i0
    i0 = np.mod(i0, nx)
    i1 = np.mod(i0 + 1, nx)
    y = np.minimum(np.abs(pts[:, -1]), (ny - 1) * hy)
    fj = y / hy
    j0 = np.minimum(np.floor(fj).astype(np.int64), ny - 2)
    fy = fj - j0

    def bil(S):
        return ((1 - fy)[:, None] * ((1 - fx)[:, None] * S[j0, i0] + fx[:, None] * S[j0, i1])
                + fy[:, None] * ((1 - fx)[:, None] * S[j0 + 1, i0] + fx[:, None] * S[j0 + 1, i1]))

    a = bil(U[k0])
    if w == 0.0:
        return a
    return (1 - w) * a + w * bil(U[k1])


@njit(cache=True, nogil=True)
def _velocity_at_jit(times, U, hx, hy, lx, tau, x, out):
    nt = times.shape[0]
    ny = U.shape[1]
    nx = U.shape[2]
    n = U.shape[3]
    k0 = 0
    k1 = 0
    w = 0.0
    if nt > 1:
        if tau <= times[0]:
            k1 = 1
        elif tau >= times[nt - 1]:
            k0 = nt - 2
            k1 = nt - 1
            w = 1.0
        else:
            k0 = 0
            while times[k0 + 1] <= tau:
                k0 += 1
            k1 = k0 + 1
            w = (tau - times[k0]) / (times[k1] - times[k0])
    xt = x[0] % lx
    fi = xt / hx
    i0 = int(np.floor(fi))
    fx = fi - i0
    i0 = i0 % nx
    i1 = (i0 + 1) % nx
    y = abs(x[x.shape[0] - 1])
    ymax = (ny - 1) * hy
    if y > ymax:
        y = ymax
    fj = y / hy
    j0 = int(np.floor(fj))
    if j0 > ny - 2:
        j0 = ny - 2
    fy = fj - j0
    for c in range(n):
        a = ((1 - fy) * ((1 - fx) * U[k0, j0, i0, c] + fx * U[k0, j0, i1, c])
             + fy * ((1 - fx) * U[k0, j0 + 1, i0, c] + fx * U[k0, j0 + 1, i1, c]))
        if w != 0.0:
            b = ((1 - fy) * ((1 - fx) * U[k1, j0, i0, c] + fx * U[k1, j0, i1, c])
                 + fy * ((1 - fx) * U[k1, j0 + 1, i0, c] + fx * U[k1, j0 + 1, i1, c]))
            a = (1 - w) * a + w * b
        out[c] = a


# --------------------------------------------------------------------------
# numba kernel


@njit(cache=True, nogil=True)
def _inv_small(a, out):
    n = a.shape[0]
    if n == 2:
        det = a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]
        out[0, 0] = a[1, 1] / det
        out[0, 1] = -a[0, 1] / det
        out[1, 0] = -a[1, 0] / det
        out[1, 1] = a[0, 0] / det
        return det
    c00 = a[1, 1] * a[2, 2] - a[1, 2] * a[2, 1]
    c01 = a[1, 2] * a[2, 0] - a[1, 0] * a[2, 2]
    c02 = a[1, 0] * a[2, 1] - a[1, 1] * a[2, 0]
    det = a[0, 0] * c00 + a[0, 1] * c01 + a[0, 2] * c02
    out[0, 0] = c00 / det
    out[1, 0] = c01 / det
    out[2, 0] = c02 / det
    out[0, 1] = (a[0, 2] * a[2, 1] - a[0, 1] * a[2, 2]) / det
    out[1, 1] = (a[0, 0] * a[2, 2] - a[0, 2] * a[2, 0]) / det
    out[2, 1] = (a[0, 1] * a[2, 0] - a[0, 0] * a[2, 1]) / det
    out[0, 2] = (a[0, 1] * a[1, 2] - a[0, 2] * a[1, 1]) / det
    out[1, 2] = (a[0, 2] * a[1, 0] - a[0, 0] * a[1, 2]) / det
    out[2, 2] = (a[0, 0] * a[1, 1] - a[0, 1] * a[1, 0]) / det
    return det


@njit(cache=True, nogil=True)
def _rot_apply(c, u, v, E, out):
    # out = (c (u v^T - v u^T)) @ E
    n = E.shape[0]
    for k in range(n):
        a = 0.0
        b = 0.0
        for j in range(n):
            a += v[j] * E[j, k]
            b += u[j] * E[j, k]
        for i in range(n):
            out[i, k] = c * (u[i] * a - v[i] * b)


@njit(cache=True, nogil=True)
def _gram_schmidt(E, inv2nu):
    """In-place modified Gram-Schmidt in the flat (1/2nu) inner product; False on collapse."""
    n = E.shape[0]
    for k in range(n):
        for j in range(k):
            d = 0.0
            for i in range(n):
                d += E[i, j] * E[i, k]
            d *= inv2nu
            for i in range(n):
                E[i, k] -= d * E[i, j]
        s = 0.0
        for i in range(n):
            s += E[i, k] * E[i, k]
        s *= inv2nu
        if not s > 1e-24:
            return False
        s = 1.0 / np.sqrt(s)
        for i in range(n):
            E[i, k] *= s
    return True


@njit(cache=True, nogil=True)
def _paths_jit(starts, node_of, keys, signs, nsteps, dt, nu, height, backward, tau_anchor,
               has_u, times, U, hx, hy, lx, xend, Mout, phiout, firsthit, status):
    npaths = keys.shape[0]
    n = starts.shape[1]
    c = 1.0 / (nu * (n - 1))
    s2 = np.sqrt(2.0 * nu)
    sqdt = np.sqrt(dt)
    inv2nu = 1.0 / (2.0 * nu)
    x = np.empty(n)
    xb = np.empty(n)
    xn = np.empty(n)
    z = np.zeros(4)
    v0 = np.empty(n)
    v1 = np.empty(n)
    u0 = np.zeros(n)
    u1 = np.zeros(n)
    en = np.zeros(n)
    E = np.empty((n, n))
    Eb = np.empty((n, n))
    En = np.empty((n, n))
    Th = np.empty((n, n))
    Thn = np.empty((n, n))
    K = np.empty((n, n))
    Kn = np.empty((n, n))
    T = np.empty((n, n))
    A0 = np.empty((n, n))
    A1 = np.empty((n, n))
    en[n - 1] = 1.0
    for p in range(npaths):
        for i in range(n):
            x[i] = starts[node_of[p], i]
            for k in range(n):
                E[i, k] = s2 if i == k else 0.0
                Th[i, k] = 1.0 / s2 if i == k else 0.0
                K[i, k] = E[i, k]
        fh = -1
        if x[n - 1] <= 0.0:
            fh = 0
            for i in range(n):
                K[i, n - 1] = 0.0
        phi = 0.0
        ok = True
        key = keys[p]
        sg = signs[p]
        for s in range(nsteps):
            if backward:
                t0 = tau_anchor - s * dt
                t1 = tau_anchor - (s + 1) * dt
            else:
                t0 = s * dt
                t1 = (s + 1) * dt
            ub = _rng.step_draws_jit(key, s, n, sg, z)
            for i in range(n):
                z[i] *= sqdt
            for i in range(n):
                a = 0.0
                for k in range(n):
                    a += E[i, k] * z[k]
                v0[i] = a
                xb[i] = x[i] + a
            if has_u:
                _velocity_at_jit(times, U, hx, hy, lx, t0, x, u0)
                _rot_apply(c, u0, v0, E, A0)
                for i in range(n):
                    for k in range(n):
                        Eb[i, k] = E[i, k] - A0[i, k]
                for i in range(n):
                    a = 0.0
                    for k in range(n):
                        a += Eb[i, k] * z[k]
                    v1[i] = a
                _velocity_at_jit(times, U, hx, hy, lx, t1, xb, u1)
                _rot_apply(c, u1, v1, Eb, A1)
                for i in range(n):
                    for k in range(n):
                        En[i, k] = E[i, k] - 0.5 * (A0[i, k] + A1[i, k])
            else:
                for i in range(n):
                    v1[i] = v0[i]
            for i in range(n):
                xn[i] = x[i] + 0.5 * (v0[i] + v1[i])
            sig2 = 0.0
            for k in range(n):
                sig2 += E[n - 1, k] * E[n - 1, k]
            hit = False
            dphi = 0.0
            if xn[n - 1] < 0.0:
                dphi = -2.0 * xn[n - 1]
                xn[n - 1] = -xn[n - 1]
                hit = True
                if has_u:
                    _velocity_at_jit(times, U, hx, hy, lx, t1, xn, u1)
                    _rot_apply(c * dphi, u1, en, En, A1)
                    for i in range(n):
                        for k in range(n):
                            En[i, k] -= A1[i, k]
            elif x[n - 1] <= 0.0 or xn[n - 1] <= 0.0:
                hit = True
            elif np.exp(-2.0 * x[n - 1] * xn[n - 1] / (sig2 * dt)) > ub:
                hit = True
            if xn[n - 1] > height:
                xn[n - 1] = 2.0 * height - xn[n - 1]
            if has_u:
                if hit or (s + 1) % REORTH_EVERY == 0:
                    if not _gram_schmidt(En, inv2nu):
                        ok = False
                        break
                det = _inv_small(En, Thn)
                if not np.isfinite(det) or det == 0.0:
                    ok = False
                    break
                if hit:
                    for i in range(n):
                        K[i, n - 1] = 0.0
                else:
                    for i in range(n):
                        for k in range(n):
                            a = 0.0
                            for j in range(n):
                                a += Th[i, j] * En[j, k]
                            T[i, k] = a
                    for i in range(n):
                        for k in range(n):
                            a = 0.0
                            for j in range(n):
                                a += K[i, j] * T[j, k]
                            Kn[i, k] = a
                    for i in range(n):
                        for k in range(n):
                            K[i, k] = Kn[i, k]
                for i in range(n):
                    for k in range(n):
                        E[i, k] = En[i, k]
                        Th[i, k] = Thn[i, k]
            elif hit:
                for i in range(n):
                    K[i, n - 1] = 0.0
            if hit and fh < 0:
                fh = s + 1
            phi += dphi
            for i in range(n):
                x[i] = xn[i]
        for i in range(n):
            xend[p, i] = x[i]
            for k in range(n):
                a = 0.0
                for j in range(n):
                    a += K[i, j] * Th[j, k]
                Mout[p, i, k] = a
                if not np.isfinite(a):
                    ok = False
        phiout[p] = phi
        firsthit[p] = fh
        status[p] = STATUS_OK if ok else STATUS_DISCARDED


# --------------------------------------------------------------------------
# numpy kernel


def _rot_apply_np(c, u, v, E):
    a = np.einsum("pj,pjk->pk", v, E)
    b = np.einsum("pj,pjk->pk", u, E)
    return c * (u[:, :, None] * a[:, None, :] - v[:, :, None] * b[:, None, :])


def _gram_schmidt_np(E, inv2nu):
    """Batched modified Gram-Schmidt; returns (frames, ok flags)."""
    E = E.copy()
    n = E.shape[1]
    ok = np.ones(E.shape[0], dtype=bool)
    for k in range(n):
        for j in range(k):
            d = np.einsum("pi,pi->p", E[:, :, j], E[:, :, k]) * inv2nu
            E[:, :, k] -= d[:, None] * E[:, :, j]
        s = np.einsum("pi,pi->p", E[:, :, k], E[:, :, k]) * inv2nu
        ok &= s > 1e-24
        E[:, :, k] /= np.sqrt(np.where(ok, s, 1.0))[:, None]
    return E, ok


def _paths_np(starts, node_of, keys, signs, nsteps, dt, nu, height, backward, tau_anchor,
              velocity):
    npaths = keys.shape[0]
    n = starts.shape[1]
    c = 1.0 / (nu * (n - 1))
    s2 = np.sqrt(2.0 * nu)
    sqdt = np.sqrt(dt)
    inv2nu = 1.0 / (2.0 * nu)
    x = starts[node_of].astype(float).copy()
    E = np.broadcast_to(s2 * np.eye(n), (npaths, n, n)).copy()
    Th = np.broadcast_to(np.eye(n) / s2, (npaths, n, n)).copy()
    K = E.copy()
    onb = x[:, -1] <= 0.0
    K[onb, :, n - 1] = 0.0
    fh = np.where(onb, 0, -1).astype(np.int64)
    phi = np.zeros(npaths)
    ok = np.ones(npaths, dtype=bool)
    en = np.zeros(n)
    en[-1] = 1.0
    for s in range(nsteps):
        if backward:
            t0, t1 = tau_anchor - s * dt, tau_anchor - (s + 1) * dt
        else:
            t0, t1 = s * dt, (s + 1) * dt
        z, ub = _rng.step_draws_np(keys, s, n, signs)
        dB = z * sqdt
        v0 = np.einsum("pik,pk->pi", E, dB)
        xb = x + v0
        if velocity is not None:
            times, U, hx, hy, lx = velocity
            u0 = velocity_at_np(times, U, hx, hy, lx, t0, x)
            Eb = E - _rot_apply_np(c, u0, v0, E)
            v1 = np.einsum("pik,pk->pi", Eb, dB)
            u1 = velocity_at_np(times, U, hx, hy, lx, t1, xb)
            En = E - 0.5 * (_rot_apply_np(c, u0, v0, E) + _rot_apply_np(c, u1, v1, Eb))
        else:
            v1 = v0
            En = E
        xn = x + 0.5 * (v0 + v1)
        sig2 = np.einsum("pk,pk->p", E[:, -1, :], E[:, -1, :])
        refl = xn[:, -1] < 0.0
        dphi = np.where(refl, -2.0 * xn[:, -1], 0.0)
        xn[:, -1] = np.abs(xn[:, -1])
        hit = refl | (x[:, -1] <= 0.0) | (xn[:, -1] <= 0.0)
        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            pb = np.exp(-2.0 * x[:, -1] * xn[:, -1] / (sig2 * dt))
        hit |= pb > ub
        if velocity is not None and np.any(refl):
            u2 = velocity_at_np(times, U, hx, hy, lx, t1, xn[refl])
            ens = np.broadcast_to(en, u2.shape)
            En = En.copy()
            En[refl] -= dphi[refl][:, None, None] * _rot_apply_np(c, u2, ens, En[refl])
        top = xn[:, -1] > height
        xn[top, -1] = 2.0 * height - xn[top, -1]
        if velocity is not None:
            redo = hit if (s + 1) % REORTH_EVERY else np.ones(npaths, dtype=bool)
            if np.any(redo):
                Er, good = _gram_schmidt_np(En[redo], inv2nu)
                En = En.copy()
                En[redo] = Er
                bad = np.flatnonzero(redo)[~good]
                ok[bad] = False
            with np.errstate(divide="ignore", invalid="ignore"):
                Thn = np.linalg.inv(np.where(ok[:, None, None], En, np.eye(n)))
            T = Th @ En
            Kt = K @ T
            K = np.where(hit[:, None, None], K, Kt)
            K[hit, :, n - 1] = 0.0
            E, Th = En, Thn
        else:
            K[hit, :, n - 1] = 0.0
        newly = hit & (fh < 0)
        fh[newly] = s + 1
        phi += dphi
        x = xn
    M = K @ Th
    ok &= np.all(np.isfinite(M), axis=(1, 2)) & np.all(np.isfinite(x), axis=1)
    status = np.where(ok, STATUS_OK, STATUS_DISCARDED).astype(np.int8)
    return x, M, phi, fh, status


# --------------------------------------------------------------------------
# driver


def _check_range(times, nsteps, dt, backward, tau_anchor):
    if times.shape[0] == 1:
        return
    lo, hi = (tau_anchor - nsteps * dt, tau_anchor) if backward else (0.0, nsteps * dt)
    if lo < times[0] - 1e-9 or hi > times[-1] + 1e-9:
        raise OutOfRangeError("velocity known on [%g, %g], paths need [%g, %g]"
                              % (times[0], times[-1], lo, hi))


def run_ensemble(starts, n_paths, *, dt, nsteps, nu, height, seed, stream0=0, velocity=None,
                 backward=False, tau_anchor=0.0, antithetic=False, workers=1, backend=None,
                 streams=None):
    """Simulate ``n_paths`` paths from each start point.

    Paths of start ``j`` use RNG stream ``streams[j]`` (default ``stream0 + j``)
    and path indices ``0..n_paths-1``.  ``velocity`` is a :class:`~frameflow.fields.VelocityField`
    or ``None`` (driftless).  Results are ordered node-major.
    """
    starts = np.atleast_2d(np.asarray(starts, dtype=float))
    nnodes, n = starts.shape
    if n not in (2, 3):
        raise ValueError("kernels support n = 2 or 3")
    if np.any(starts[:, -1] < 0.0):
        raise ValueError("start points must lie in the closed half-space")
    if backend is None:
        backend = "numba" if USE_NUMBA else "numpy"
    if backend == "numba" and not USE_NUMBA:
        raise RuntimeError("numba backend requested but disabled")
    if streams is None:
        streams = stream0 + np.arange(nnodes)
    if len(streams) != nnodes:
        raise ValueError("one stream per start point is required")
    keys = np.empty(nnodes * n_paths, dtype=np.uint64)
    signs = np.empty(nnodes * n_paths)
    for j in range(nnodes):
        k, sg = _rng.path_keys(seed, int(streams[j]), n_paths, antithetic)
        keys[j * n_paths:(j + 1) * n_paths] = k
        signs[j * n_paths:(j + 1) * n_paths] = sg
    node_of = np.repeat(np.arange(nnodes), n_paths)

    if velocity is not None:
        times, U = velocity.kernel_arrays()
        if U.shape[3] != n:
            raise ValueError("velocity dimension does not match start points")
        _check_range(times, nsteps, dt, backward, tau_anchor)
        g = velocity.grid
        vel = (times, U, g.hx, g.hy, g.lx)
    else:
        vel = None

    total = keys.shape[0]
    xend = np.empty((total, n))
    M = np.empty((total, n, n))
    phi = np.empty(total)
    fh = np.empty(total, dtype=np.int64)
    status = np.empty(total, dtype=np.int8)
    chunk = NUMBA_CHUNK if backend == "numba" else NUMPY_CHUNK
    bounds = [(a, min(a + chunk, total)) for a in range(0, total, chunk)]

    def work(b):
        a, e = b
        if backend == "numba":
            if vel is None:
                t_, U_, hx, hy, lx = np.zeros(1), np.zeros((1, 2, 1, n)), 1.0, 1.0, 1.0
            else:
                t_, U_, hx, hy, lx = vel
            _paths_jit(starts, node_of[a:e], keys[a:e], signs[a:e], nsteps, dt, nu, height,
                       backward, tau_anchor, vel is not None, t_, U_, hx, hy, lx,
                       xend[a:e], M[a:e], phi[a:e], fh[a:e], status[a:e])
        else:
            r = _paths_np(starts, node_of[a:e], keys[a:e], signs[a:e], nsteps, dt, nu, height,
                          backward, tau_anchor, vel)
            xend[a:e], M[a:e], phi[a:e], fh[a:e], status[a:e] = r

    if workers <= 1 or len(bounds) == 1:
        for b in bounds:
            work(b)
    else:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            list(ex.map(work, bounds))
    return EnsembleResult(xend, M, phi, fh, status, backend)
