"""Half-plane Navier-Stokes vorticity solver and the flat 3D kinematic dynamo.

Vorticity is estimated pointwise by backward Feynman-Kac paths through the
velocity-dependent connection; the velocity is recovered from the vorticity
by a stream-function Poisson solve (FFT along the periodic direction, a
tridiagonal solve across the strip).
"""
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded

from .estimator import McConfig, grid_field_estimate
from .fields import FormField, StripGrid, VelocityField
from .geometry import ConnectionField, ContractError

PROBE_STREAM_OFFSET = 1 << 19
STEP_STREAM_STRIDE = 1 << 20


class ConvergenceFailure(RuntimeError):
    def __init__(self, msg, history):
        super().__init__(msg)
        self.history = history


class PoissonError(ArithmeticError):
    pass


# --------------------------------------------------------------------------
# stream function


def _omega_array(omega):
    if isinstance(omega, FormField):
        return omega.values[0]
    return np.asarray(omega, dtype=float)


def stream_function(omega, grid):
    """Solve Lap psi = -omega, psi = 0 on both strip edges, periodic in x."""
    w = _omega_array(omega)
    ny, nx = grid.ny, grid.nx
    if w.shape != (ny, nx):
        raise ContractError("vorticity shape %s does not match grid" % (w.shape,))
    hx, hy = grid.hx, grid.hy
    what = np.fft.fft(w, axis=1)
    kd2 = (2.0 - 2.0 * np.cos(2.0 * np.pi * np.fft.fftfreq(nx))) / hx ** 2
    m = ny - 2
    psih = np.zeros((ny, nx), dtype=complex)
    if m > 0:
        for k in range(nx):
            ab = np.zeros((3, m))
            ab[0, 1:] = 1.0 / hy ** 2
            ab[1, :] = -2.0 / hy ** 2 - kd2[k]
            ab[2, :-1] = 1.0 / hy ** 2
            psih[1:-1, k] = solve_banded((1, 1), ab, -what[1:-1, k])
    psi = np.real(np.fft.ifft(psih, axis=1))
    if not np.all(np.isfinite(psi)):
        raise PoissonError("stream-function solve produced non-finite values")
    return psi


def _ddy(f, hy):
    d = np.empty_like(f)
    d[1:-1] = (f[2:] - f[:-2]) / (2 * hy)
    d[0] = (-3 * f[0] + 4 * f[1] - f[2]) / (2 * hy)
    d[-1] = (3 * f[-1] - 4 * f[-2] + f[-3]) / (2 * hy)
    return d


def _ddx(f, hx):
    return (np.roll(f, -1, axis=-1) - np.roll(f, 1, axis=-1)) / (2 * hx)


def velocity_from_vorticity_2d(omega, grid):
    """Velocity (2, ny, nx) with u = (d psi/dy, -d psi/dx); normal velocity vanishes on the wall."""
    if grid.dim != 2:
        raise ContractError("stream-function recovery is two-dimensional")
    psi = stream_function(omega, grid)
    u = np.empty((2, grid.ny, grid.nx))
    u[0] = _ddy(psi, grid.hy)
    u[1] = -_ddx(psi, grid.hx)
    u[1, 0] = 0.0
    u[1, -1] = 0.0
    return u


def vorticity_from_velocity(u, grid):
    """omega = d u2/dx - d u1/dy by centred differences (one-sided at the edges)."""
    u = np.asarray(u, dtype=float)
    return _ddx(u[1], grid.hx) - _ddy(u[0], grid.hy)


def divergence(u, grid):
    return _ddx(u[0], grid.hx) + _ddy(u[1], grid.hy)


# --------------------------------------------------------------------------
# probe interpolation


def _fill_from_probes(vals, grid, js, is_):
    """Interpolate a field known on the probe lattice (js x is_) to every node.

    Periodic linear interpolation in x, linear in y.
    """
    sub = vals[np.ix_(js, is_)]
    xs = grid.x[is_]
    rows = np.array([np.interp(grid.x, xs, sub[r], period=grid.lx) for r in range(len(js))])
    out = np.empty((grid.ny, grid.nx))
    for i in range(grid.nx):
        out[:, i] = np.interp(grid.y, grid.y[js], rows[:, i])
    return out


# --------------------------------------------------------------------------
# Navier-Stokes


@dataclass
class NsSlice:
    tau: float
    omega: FormField
    u: np.ndarray
    diagnostics: dict = field(default_factory=dict)


def _vorticity_callable(omega0):
    if callable(omega0) and not isinstance(omega0, FormField):
        return lambda pts: np.asarray(omega0(pts), dtype=float).reshape(-1, 1)
    return omega0


def ns2d_solve(omega0, nu, T, dtau_outer, grid, cfg, probe=None, probe_fill="interp",
               picard_sweeps=2, picard_tol=0.5, callback=None):
    """Outer time stepping of the half-plane vorticity equation.

    ``omega0`` is a callable ``pts -> values`` or a degree-2 FormField.
    ``cfg`` sets the paths per grid node.  ``probe=(step_x, step_y, n_paths)``
    estimates a thinned lattice with ``n_paths`` each.  The other nodes are
    filled by interpolation (``probe_fill="interp"``) or estimated with
    ``cfg.n_paths`` (``probe_fill="mc"``) before the velocity solve.
    Returns the list of slices including tau = 0.
    """
    if grid.dim != 2:
        raise ContractError("ns2d_solve needs a two-dimensional grid")
    if nu <= 0 or T <= 0 or dtau_outer <= 0:
        raise ContractError("nu, T and the outer step must be positive")
    nout = int(round(T / dtau_outer))
    if abs(nout * dtau_outer - T) > 1e-9 * T:
        raise ContractError("T must be a multiple of the outer step")
    if picard_sweeps < 1:
        raise ContractError("at least one Picard sweep is required")
    w0 = _vorticity_callable(omega0)
    init = grid_field_estimate(w0, grid, 0.0, ConnectionField.flat_ns(2, nu), cfg)
    u_prev = velocity_from_vorticity_2d(init, grid)
    times = [0.0]
    us = [u_prev]
    out = [NsSlice(0.0, init, u_prev, {"picard_residuals": [], "n_discarded": 0})]
    if callback:
        callback(out[-1])
    if probe is not None:
        sx, sy, np_probe = probe
        js, is_ = grid.subgrid(sx, sy)
        pcfg = McConfig(np_probe, cfg.dt, cfg.seed, cfg.strip_height, cfg.antithetic,
                        cfg.workers, cfg.backend)
    for k in range(1, nout + 1):
        tau = k * dtau_outer
        guess = us[-1]
        history = []
        omega_k = None
        for sweep in range(picard_sweeps):
            vf = VelocityField(grid, np.array(times + [tau]), np.array(us + [guess]))
            conn = ConnectionField.flat_ns(2, nu, vf)
            s0 = k * STEP_STREAM_STRIDE
            if probe is None:
                omega_k = grid_field_estimate(w0, grid, tau, conn, cfg, stream0=s0)
            else:
                omega_k = grid_field_estimate(w0, grid, tau, conn, pcfg, nodes=(js, is_),
                                              stream0=s0 + PROBE_STREAM_OFFSET)
                if probe_fill == "mc":
                    rest = grid_field_estimate(w0, grid, tau, conn, cfg, stream0=s0)
                    hole = np.isnan(omega_k.values)
                    omega_k.values[hole] = rest.values[hole]
                    omega_k.stderr[hole] = rest.stderr[hole]
                    omega_k.meta["n_discarded"] += rest.meta["n_discarded"]
                else:
                    omega_k.values[0] = _fill_from_probes(omega_k.values[0], grid, js, is_)
                omega_k.meta["probe"] = {"js": js.tolist(), "is": is_.tolist()}
            u_new = velocity_from_vorticity_2d(omega_k, grid)
            scale = max(float(np.sqrt(np.mean(u_new ** 2))), 1e-300)
            res = float(np.sqrt(np.mean((u_new - guess) ** 2))) / scale
            if not np.any(u_new) and not np.any(guess):
                res = 0.0
            history.append(res)
            guess = u_new
        if picard_sweeps > 1 and history[-1] > picard_tol:
            raise ConvergenceFailure("Picard residual %.3g above %.3g at tau=%g"
                                     % (history[-1], picard_tol, tau), history)
        times.append(tau)
        us.append(guess)
        wall_slip = float(np.max(np.abs(guess[0, 0])))
        diag = {"picard_residuals": history, "n_discarded": omega_k.meta.get("n_discarded", 0),
                "wall_tangential_velocity": wall_slip,
                "max_divergence": float(np.max(np.abs(divergence(guess, grid)[1:-1])))}
        out.append(NsSlice(tau, omega_k, guess, diag))
        if callback:
            callback(out[-1])
    return out


# --------------------------------------------------------------------------
# kinematic dynamo


def b_to_2form(b):
    """Flat duality B -> i_B mu: components (12, 13, 23) = (B3, -B2, B1); axis 0 is the vector index."""
    b = np.asarray(b, dtype=float)
    return np.stack([b[2], -b[1], b[0]])


def twoform_to_b(w):
    w = np.asarray(w, dtype=float)
    return np.stack([w[2], -w[1], w[0]])


def dynamo3d_solve(B0, u, nu_m, T, grid, cfg, dtau=None):
    """Evolve a magnetic field by the 2-form heat flow of its dual.

    ``B0`` is a callable ``pts -> (m, 3)``; ``u`` a 3D VelocityField or None.
    Returns 2-form FormFields (components 12, 13, 23) at tau = 0, dtau, ..., T.
    """
    if grid.dim != 3:
        raise ContractError("the dynamo runs on a three-dimensional grid")
    if nu_m <= 0 or T <= 0:
        raise ContractError("nu_m and T must be positive")
    dtau = T if dtau is None else dtau
    nout = int(round(T / dtau))
    conn = ConnectionField.flat_ns(3, nu_m, u)

    def w0(pts):
        return b_to_2form(np.asarray(B0(pts), dtype=float).T).T

    out = [grid_field_estimate(w0, grid, 0.0, conn, cfg)]
    for k in range(1, nout + 1):
        ff = grid_field_estimate(w0, grid, k * dtau, conn, cfg, stream0=k * STEP_STREAM_STRIDE)
        out.append(ff)
    return out
