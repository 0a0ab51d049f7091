"""Deterministic reference solutions: half-line image kernels and explicit finite differences.

These share no code with the path simulation.  The FD schemes are second
order central differences for diffusion with first order upwinding for
advection, explicit Euler in time, on the same periodic strip grids.
"""
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from .fields import StripGrid
from .fluids import velocity_from_vorticity_2d
from .geometry import ContractError

MAX_FD_STEPS = 5_000_000


class CflError(ValueError):
    pass


@dataclass(frozen=True)
class Grid1D:
    """Uniform nodes on [0, length] along the normal axis; wall at 0."""
    n: int
    length: float
    wall: str = "neumann"
    top: str = "neumann"

    def __post_init__(self):
        if self.n < 3 or self.length <= 0:
            raise ValueError("invalid 1D grid")
        for b in (self.wall, self.top):
            if b not in ("dirichlet", "neumann"):
                raise ValueError("boundary flag must be dirichlet or neumann")

    @property
    def h(self):
        return self.length / (self.n - 1)

    @property
    def y(self):
        return np.arange(self.n) * self.h

    def as_strip(self):
        return StripGrid(1, self.n, 1.0, self.length)


Grid2D = StripGrid


# --------------------------------------------------------------------------
# images


def _kernel(z, var):
    return np.exp(-z * z / (2.0 * var)) / np.sqrt(2.0 * np.pi * var)


def images_kernel_solution(f0, nu, tau, x, parity="even", epsabs=1e-12):
    """Half-line heat flow dV/dt = nu V'' from V(0) = f0 with Neumann (even) or Dirichlet (odd) wall.

    Computes  int_0^inf f0(y) [p(x - y) +/- p(x + y)] dy  with p the Gaussian
    of variance 2 nu tau.  ``x`` may be an array.
    """
    if not tau > 0:
        raise ContractError("tau must be positive")
    if parity not in ("even", "odd"):
        raise ContractError("parity must be 'even' or 'odd'")
    sgn = 1.0 if parity == "even" else -1.0
    var = 2.0 * nu * tau
    sd = np.sqrt(var)
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    out = np.empty(xs.shape)
    for k, xv in enumerate(xs):
        hi = xv + 40.0 * sd
        integrand = lambda y: f0(y) * (_kernel(xv - y, var) + sgn * _kernel(xv + y, var))
        lo_peak = max(0.0, xv - 10.0 * sd)
        pts = sorted({lo_peak, xv, min(hi, xv + 10.0 * sd)} - {0.0, hi})
        val, _ = quad(integrand, 0.0, hi, points=pts or None, epsabs=epsabs, epsrel=1e-12, limit=500)
        out[k] = val
    return out if np.ndim(x) else float(out[0])


# --------------------------------------------------------------------------
# finite differences


def _pad(f, bc_wall, bc_top):
    """Ghost rows in y (mirror for Neumann, odd mirror about the zero wall for Dirichlet)."""
    g = np.empty((f.shape[0] + 2,) + f.shape[1:])
    g[1:-1] = f
    g[0] = f[1] if bc_wall == "neumann" else -f[1]
    g[-1] = f[-2] if bc_top == "neumann" else -f[-2]
    return g


def _rhs(f, ux, uy, nu, hx, hy, bc_wall, bc_top, central=False):
    g = _pad(f, bc_wall, bc_top)
    c = g[1:-1]
    fxp = np.roll(c, -1, axis=1)
    fxm = np.roll(c, 1, axis=1)
    lap = (g[2:] - 2 * c + g[:-2]) / hy ** 2
    if f.shape[1] > 1:
        lap = lap + (fxp - 2 * c + fxm) / hx ** 2
    out = nu * lap
    if ux is not None and central:
        if f.shape[1] > 1:
            out -= ux * (fxp - fxm) / (2 * hx)
        out -= uy * (g[2:] - g[:-2]) / (2 * hy)
    elif ux is not None:
        if f.shape[1] > 1:
            dxm = (c - fxm) / hx
            dxp = (fxp - c) / hx
            out -= np.where(ux > 0, ux * dxm, ux * dxp)
        dym = (c - g[:-2]) / hy
        dyp = (g[2:] - c) / hy
        out -= np.where(uy > 0, uy * dym, uy * dyp)
    return out


def _pick_dt(nu, hx, hy, umax, T, nx):
    h = hy if nx == 1 else min(hx, hy)
    dt = 0.25 * h * h / (2.0 * nu)
    if umax > 0:
        dt = min(dt, 0.5 * h / umax)
    nsteps = max(1, int(np.ceil(T / dt - 1e-12)))
    if nsteps > MAX_FD_STEPS:
        raise CflError("CFL restriction needs %d steps (limit %d)" % (nsteps, MAX_FD_STEPS))
    return T / nsteps, nsteps


def fd_advdiff(field0, u, nu, T, grid, bc, bc_top="neumann", return_steps=False):
    """Explicit advection-diffusion of each component of ``field0`` (ncomp, ny, nx).

    ``u`` is None or ``u(t) -> (dim, ny, nx)`` (a VelocityField is sampled at
    its nodes); only the tangential (first) and normal (last) velocity
    components act.  ``bc`` lists 'dirichlet' or 'neumann' per component at
    the wall; Dirichlet rows are held at zero.
    """
    f = np.array(field0, dtype=float)
    if f.ndim == 2:
        f = f[None]
    if isinstance(bc, str):
        bc = [bc] * f.shape[0]
    if len(bc) != f.shape[0]:
        raise ContractError("one boundary flag per component is required")
    if T < 0:
        raise ContractError("T must be non-negative")
    if T == 0:
        return (f, 0) if return_steps else f
    ufun = _velocity_fn(u, grid)
    umax = 0.0
    if ufun is not None:
        probe = [ufun(t) for t in np.linspace(0.0, T, 5)]
        umax = max(float(np.max(np.abs(p))) for p in probe)
    dt, nsteps = _pick_dt(nu, grid.hx, grid.hy, 1.5 * umax, T, grid.nx)
    for s in range(nsteps):
        if ufun is not None:
            uu = ufun(s * dt)
            ux, uy = uu[0], uu[-1]
        else:
            ux = uy = None
        new = np.empty_like(f)
        for c in range(f.shape[0]):
            new[c] = f[c] + dt * _rhs(f[c], ux, uy, nu, grid.hx, grid.hy, bc[c], bc_top)
            if bc[c] == "dirichlet":
                new[c, 0] = 0.0
            if bc_top == "dirichlet":
                new[c, -1] = 0.0
        if ufun is not None and float(np.max(np.abs(uu))) * dt / min(grid.hx, grid.hy) > 0.5 + 1e-12:
            raise CflError("advective CFL exceeded at t=%g" % (s * dt))
        f = new
    return (f, nsteps) if return_steps else f


def _velocity_fn(u, grid):
    if u is None:
        return None
    if hasattr(u, "kernel_arrays"):
        pts = grid.points()

        def fn(t):
            return u.sample(t, pts).T.reshape(grid.dim, grid.ny, grid.nx)
        return fn
    if callable(u):
        return u
    arr = np.asarray(u, dtype=float)
    return lambda t: arr


def trapezoid_integral(f, grid):
    """Discrete integral with half weights on the wall and top rows (periodic in x)."""
    w = np.ones(grid.ny)
    w[0] = w[-1] = 0.5
    return float(np.sum(w[:, None] * f) * grid.hx * grid.hy)


def fd_ns2d_vorticity(omega0, nu, T, grid, n_slices=1, safety=0.4):
    """Explicit vorticity-stream solver with omega = 0 on the wall.

    Advection uses central differences (second order; stable here because
    the cell Peclet number stays below 2 on the grids used).

    Returns ``[(tau, omega (ny, nx), u (2, ny, nx)), ...]`` at ``n_slices``
    equally spaced times after 0 (plus the initial slice).
    """
    w = np.array(omega0, dtype=float)
    if w.shape != (grid.ny, grid.nx):
        raise ContractError("omega0 shape does not match grid")
    w[0] = 0.0
    h = min(grid.hx, grid.hy)
    out = [(0.0, w.copy(), velocity_from_vorticity_2d(w, grid))]
    t = 0.0
    targets = [T * (k + 1) / n_slices for k in range(n_slices)]
    steps = 0
    for tgt in targets:
        while t < tgt - 1e-14:
            u = velocity_from_vorticity_2d(w, grid)
            umax = float(np.max(np.abs(u)))
            dt = 0.25 * h * h / (2.0 * nu)
            if umax > 0:
                dt = min(dt, safety * h / umax)
            dt = min(dt, tgt - t)
            w = w + dt * _rhs(w, u[0], u[1], nu, grid.hx, grid.hy, "dirichlet", "neumann", central=True)
            w[0] = 0.0
            t += dt
            steps += 1
            if steps > MAX_FD_STEPS:
                raise CflError("vorticity solver exceeded the step limit")
            if not np.all(np.isfinite(w)):
                raise CflError("vorticity solver blew up at t=%g" % t)
        out.append((tgt, w.copy(), velocity_from_vorticity_2d(w, grid)))
    return out


# --------------------------------------------------------------------------
# cross checks run by the ``validate`` command


def _rel_l2(a, b):
    return float(np.linalg.norm(a - b) / np.linalg.norm(b))


def cross_checks():
    """Deterministic oracle consistency checks; returns {name: (value, limit, passed)}."""
    from .fluids import b_to_2form, twoform_to_b, velocity_from_vorticity_2d as vfv

    out = {}
    one = lambda y: 1.0
    v = images_kernel_solution(one, 0.5, 0.5, 0.7, "even")
    out["images_even_constant"] = (abs(v - 1.0), 1e-8)
    v = images_kernel_solution(one, 0.5, 0.5, 0.0, "odd")
    out["images_odd_wall"] = (abs(v), 1e-12)

    f0 = lambda y: np.exp(-(y - 1.0) ** 2 / (2 * 0.3 ** 2))
    g1 = Grid1D(201, 8.0)
    for parity, bc in (("even", "neumann"), ("odd", "dirichlet")):
        init = f0(g1.y)
        if bc == "dirichlet":
            init[0] = 0.0
        fd = fd_advdiff(init[None, :, None], None, 0.5, 0.5, g1.as_strip(), bc)[0, :, 0]
        ref = images_kernel_solution(f0, 0.5, 0.5, g1.y[g1.y < 4.0], parity)
        out["fd_vs_images_%s" % parity] = (_rel_l2(fd[g1.y < 4.0], ref), 1e-2)

    errs = []
    for r in (1, 2):
        g = StripGrid(16 * r, 8 * r + 1, 2 * np.pi, 1.0)
        yy, xx = np.meshgrid(g.y, g.x, indexing="ij")
        psi = np.sin(xx) * np.sin(np.pi * yy)
        w = (1.0 + np.pi ** 2) * psi
        u = vfv(w, g)
        ue = np.stack([np.pi * np.sin(xx) * np.cos(np.pi * yy), -np.cos(xx) * np.sin(np.pi * yy)])
        errs.append(float(np.max(np.abs(u - ue))))
    ratio = errs[0] / errs[1]
    out["poisson_second_order_ratio"] = (abs(ratio - 4.0), 1.0)

    g = StripGrid(12, 21, 3.0, 2.0)
    yy, xx = np.meshgrid(g.y, g.x, indexing="ij")
    f = np.exp(-((xx - 1.5) ** 2 + (yy - 0.5) ** 2))
    dt, _ = _pick_dt(0.5, g.hx, g.hy, 0.0, 1.0, g.nx)
    f1 = f + dt * _rhs(f, None, None, 0.5, g.hx, g.hy, "neumann", "neumann")
    drift = abs(trapezoid_integral(f1, g) - trapezoid_integral(f, g))
    out["fd_neumann_conservation"] = (drift, 1e-12)

    b = np.random.default_rng(1).normal(size=(3, 4, 5))
    out["duality_round_trip"] = (float(np.max(np.abs(twoform_to_b(b_to_2form(b)) - b))), 0.0)
    return {k: (float(val), float(lim), bool(val <= lim)) for k, (val, lim) in out.items()}
