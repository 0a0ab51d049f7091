"""Reflected horizontal diffusion on the frame bundle, one path at a time.

This is the reference stepper: it accepts any :class:`ConnectionField`
(curved metrics included) and records every step.  The ensemble kernels in
:mod:`frameflow.kernels` run the same scheme for the flat Navier-Stokes
connection and are checked against this module.

Scheme per step (Stratonovich-Heun for the coupled (X, e) system)::

    v0 = e dB,                 A0 = Gamma(t0, x)(v0)
    x' = x + v0,               e' = e - A0 e
    v1 = e' dB,                A1 = Gamma(t1, x')(v1)
    x+ = x + (v0 + v1)/2,      e+ = e - (A0 e + A1 e')/2

followed by reflection of the normal coordinate, the local-time frame kick
``-Gamma^a_{n c} e^c_k dphi`` and periodic re-orthonormalisation.  A step
counts as a boundary hit if it reflected or if the Brownian bridge between
the two interior endpoints touched the wall (probability
``exp(-2 x0 x1 / (sigma^2 dt))``).
"""
from dataclasses import dataclass, field

import numpy as np

from . import rng as _rng
from .frame_bundle import FrameCollapseError, FramePoint, orthonormalize
from .geometry import OutOfRangeError

REORTH_EVERY = 16


@dataclass
class PathState:
    frame: FramePoint
    phi: float = 0.0
    t: float = 0.0
    on_boundary: bool = False
    steps: int = 0

    @classmethod
    def start(cls, frame):
        return cls(frame, 0.0, 0.0, bool(frame.x[-1] <= 0.0), 0)


@dataclass
class StepRecord:
    dB: np.ndarray
    dphi: float
    de: np.ndarray
    x_pre: np.ndarray
    x_post: np.ndarray
    boundary_hit: bool
    e_pre: np.ndarray = None
    e_post: np.ndarray = None
    theta_post: np.ndarray = None
    u_bridge: float = 1.0
    t_pre: float = 0.0
    t_post: float = 0.0


@dataclass
class TrajectoryBuffer:
    r0: FramePoint
    records: list = field(default_factory=list)
    first_hit_index: int = None
    last_exit_index: int = None
    dt: float = 0.0
    nu: float = 0.5
    direction: object = "forward"
    discarded: bool = False

    @property
    def n_steps(self):
        return len(self.records)

    def x_path(self):
        return np.array([self.r0.x] + [r.x_post for r in self.records])

    def hit_flags(self):
        """hit[k] is True when the path sits on the boundary at state index k."""
        return np.array([self.r0.x[-1] <= 0.0] + [r.boundary_hit for r in self.records])


class PathNoise:
    """Noise source of one path: the counter-based stream of the ensemble kernels."""

    def __init__(self, seed, stream=0, path=0, antithetic=False):
        keys, sign = _rng.path_keys(seed, stream, path + 1, antithetic)
        self.key = keys[path:path + 1]
        self.sign = sign[path:path + 1]

    def draw(self, step, n):
        z, ub = _rng.step_draws_np(self.key, step, n, self.sign)
        return z[0], float(ub[0])


def skorokhod_reflect(xn_proposed, gnn=1.0):
    """Reflect the normal coordinate at 0; returns (new value, local-time increment).

    ``gnn`` is accepted for interface symmetry; the increment is measured in
    coordinate length along the normal axis.
    """
    if xn_proposed >= 0.0:
        return float(xn_proposed), 0.0
    return float(-xn_proposed), float(-2.0 * xn_proposed)


def _eval_point(x, height):
    y = abs(x[-1])
    if height is not None and y > height:
        y = height
    if y == x[-1]:
        return x
    z = x.copy()
    z[-1] = y
    return z


def _gamma_v(conn, t, x, v, height):
    gam = conn(t, _eval_point(x, height))
    return np.einsum("abc,b->ac", gam, v), gam


def _advance(state, conn, t0, t1, dt, dB, u_bridge, height):
    r = state.frame
    n = r.x.shape[0]
    x, e, th = r.x, r.e, r.theta
    v0 = e @ dB
    a0, _ = _gamma_v(conn, t0, x, v0, height)
    de0 = -a0 @ e
    xbar = x + v0
    ebar = e + de0
    v1 = ebar @ dB
    a1, _ = _gamma_v(conn, t1, xbar, v1, height)
    de1 = -a1 @ ebar
    xnew = x + 0.5 * (v0 + v1)
    enew = e + 0.5 * (de0 + de1)

    sig2 = float(e[-1] @ e[-1])
    xn, dphi = skorokhod_reflect(xnew[-1])
    xnew[-1] = xn
    hit = dphi > 0.0
    if hit:
        gam = conn(t1, _eval_point(xnew, height))
        enew = enew - dphi * (gam[:, n - 1, :] @ enew)
    elif x[-1] <= 0.0 or xnew[-1] <= 0.0:
        hit = True
    elif np.exp(-2.0 * x[-1] * xnew[-1] / (sig2 * dt)) > u_bridge:
        hit = True
    if height is not None and xnew[-1] > height:
        xnew[-1] = 2.0 * height - xnew[-1]

    steps = state.steps + 1
    if hit or steps % REORTH_EVERY == 0:
        g = conn.metric.g(_eval_point(xnew, height))
        enew = orthonormalize(enew, g / (2.0 * conn.nu))
    # exact inverse: the first-order update th - th de th drifts at O(dt)
    thnew = np.linalg.inv(enew)
    if not (np.all(np.isfinite(enew)) and np.all(np.isfinite(xnew))):
        raise FrameCollapseError("non-finite frame")

    rec = StepRecord(dB=np.array(dB), dphi=dphi, de=enew - e, x_pre=x.copy(), x_post=xnew.copy(),
                     boundary_hit=hit, e_pre=e.copy(), e_post=enew.copy(), theta_post=thnew.copy(),
                     u_bridge=u_bridge)
    new = PathState(FramePoint(xnew, enew, thnew), state.phi + dphi, state.t + dt, hit, steps)
    return new, rec


def _noise(rng, step, n, noise):
    if noise is not None:
        dB, ub = noise
        return np.asarray(dB, dtype=float), float(ub)
    z, ub = rng.draw(step, n)
    return z, ub


def step_forward(state, conn, dt, rng=None, noise=None, height=None):
    """One reflected step of the autonomous equation; Christoffels at path time.

    ``noise=(dB, u_bridge)`` overrides the generator (``dB`` already scaled by sqrt(dt)).
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    n = state.frame.x.shape[0]
    if noise is None:
        z, ub = _noise(rng, state.steps, n, None)
        dB = np.sqrt(dt) * z
    else:
        dB, ub = _noise(None, 0, n, noise)
    new, rec = _advance(state, conn, state.t, state.t + dt, dt, dB, ub, height)
    rec.t_pre, rec.t_post = state.t, state.t + dt
    return new, rec


def step_backward_timedep(state, conn, tau_anchor, dt, rng=None, noise=None, height=None):
    """One step of the backward-running equation: Christoffels at ``tau_anchor - t``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    t0 = tau_anchor - state.t
    t1 = tau_anchor - state.t - dt
    tr = conn.torsion.t_range
    if tr is not None and (t1 < tr[0] - 1e-12 or t0 > tr[1] + 1e-12):
        raise OutOfRangeError("backward step needs torsion on [%g, %g], have [%g, %g]" % (t1, t0, tr[0], tr[1]))
    n = state.frame.x.shape[0]
    if noise is None:
        z, ub = _noise(rng, state.steps, n, None)
        dB = np.sqrt(dt) * z
    else:
        dB, ub = _noise(None, 0, n, noise)
    new, rec = _advance(state, conn, t0, t1, dt, dB, ub, height)
    rec.t_pre, rec.t_post = t0, t1
    return new, rec


def simulate_path(r0, horizon, dt, conn, direction="forward", rng=None, height=None, noises=None):
    """Run ``horizon / dt`` steps and return the full trajectory.

    ``direction`` is ``"forward"`` or ``("backward", tau_anchor)``.  ``noises``
    optionally supplies the per-step ``(dB, u_bridge)`` pairs.
    """
    m = int(round(horizon / dt))
    if m < 0 or abs(m * dt - horizon) > 1e-9 * max(1.0, horizon):
        raise ValueError("horizon must be an integer multiple of dt")
    traj = TrajectoryBuffer(r0=r0, dt=dt, nu=conn.nu, direction=direction)
    state = PathState.start(r0)
    hits = [state.on_boundary]
    for k in range(m):
        nz = None if noises is None else noises[k]
        if direction == "forward":
            state, rec = step_forward(state, conn, dt, rng, nz, height)
        else:
            state, rec = step_backward_timedep(state, conn, direction[1], dt, rng, nz, height)
        traj.records.append(rec)
        hits.append(rec.boundary_hit)
    idx = np.flatnonzero(hits)
    if idx.size:
        traj.first_hit_index = int(idx[0])
        traj.last_exit_index = int(idx[-1])
    return traj
