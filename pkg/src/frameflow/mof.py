"""Multiplicative operator functional along a reflected frame-bundle path.

``K`` has a coordinate row index and a frame column index.  It splits into a
normal block ``K1 = K P`` and a tangential block ``K2 = K Q`` where ``P``
selects the last frame column.  Per step, away from the wall::

    K <- K (theta_pre e_post) (I + theta_post W e_post dt)

with ``W`` the curvature coupling (``nu Ric - 2 nu R`` in Navier-Stokes
scaling, ``Ric/2 - R`` in unit scaling).  On a step that touches the wall the
normal block is zeroed and the tangential block is frozen.  The functional
itself is ``M = K theta``.
"""
from dataclasses import dataclass

import numpy as np

from .frame_bundle import FrameCollapseError, FramePoint
from .geometry import ContractError
from .paths import simulate_path

@dataclass(frozen=True)
class ProjectorPair:
    P: np.ndarray
    Q: np.ndarray

    @classmethod
    def for_dim(cls, n):
        p = np.zeros((n, n))
        p[n - 1, n - 1] = 1.0
        return cls(p, np.eye(n) - p)


@dataclass
class MofState:
    K1: np.ndarray
    K2: np.ndarray
    M: np.ndarray
    theta: np.ndarray

    @property
    def K(self):
        return self.K1 + self.K2


def _coeffs(scale, nu):
    if scale == "ns":
        return nu, 2.0 * nu
    if scale == "unit":
        return 0.5, 1.0
    raise ContractError("scale must be 'ns' or 'unit'")


def coupling_matrix(pack, nu, scale="ns"):
    """Curvature coupling W = a Ric - b R (n x n) for the chosen scaling."""
    a, b = _coeffs(scale, nu)
    return a * pack.ric - b * pack.single_slot_r()


def mof_init(r0, on_boundary=None):
    """Initial blocks: K1 = 1_int e P, K2 = e Q."""
    n = r0.x.shape[0]
    pq = ProjectorPair.for_dim(n)
    if on_boundary is None:
        on_boundary = bool(r0.x[-1] <= 0.0)
    k1 = np.zeros((n, n)) if on_boundary else r0.e @ pq.P
    k2 = r0.e @ pq.Q
    return MofState(k1, k2, (k1 + k2) @ r0.theta, r0.theta.copy())


def mof_step(state, rec, theta, pack=None, nu=0.5, dt=None, scale="ns"):
    """Advance the functional over one recorded path step.

    ``theta`` is the co-frame after the step; ``pack`` the curvature at the
    step (``None`` for flat space).
    """
    n = state.K1.shape[0]
    pq = ProjectorPair.for_dim(n)
    e_post = rec.e_pre + rec.de if rec.e_post is None else rec.e_post
    if rec.boundary_hit:
        k1 = np.zeros((n, n))
        k2 = state.K2.copy()
    else:
        tr = state.theta @ e_post
        if pack is not None:
            if dt is None:
                raise ContractError("dt is required with a curvature pack")
            w = coupling_matrix(pack, nu, scale)
            tr = tr @ (np.eye(n) + theta @ w @ e_post * dt)
        kn = state.K @ tr
        k1 = kn @ pq.P
        k2 = kn @ pq.Q
    m = (k1 + k2) @ theta
    if not np.all(np.isfinite(m)):
        raise FrameCollapseError("non-finite functional")
    return MofState(k1, k2, m, np.array(theta, dtype=float))


def mof_boundaryless_step(M, pack, nu=0.5, dt=1e-3, scale="unit"):
    """Interior update dM = M (a Ric - b R) dt, pack given in M's column indices."""
    w = coupling_matrix(pack, nu, scale)
    return M @ (np.eye(M.shape[0]) + w * dt)


def run_functional(traj, start=0, pack_fn=None, scale="ns", restart=False):
    """Integrate the functional over ``traj.records[start:]``; returns the list of states.

    With ``restart=True`` the functional is re-initialised at state index
    ``start`` from the frame there (shifted path).
    """
    hits = traj.hit_flags()
    if start == 0:
        r = traj.r0
    else:
        rec = traj.records[start - 1]
        r = FramePoint(rec.x_post, rec.e_post, rec.theta_post)
    if start != 0 and not restart:
        raise ContractError("non-restarted runs must start at 0")
    st = mof_init(r, on_boundary=bool(hits[start]))
    out = [st]
    for rec in traj.records[start:]:
        pack = pack_fn(rec.x_pre) if pack_fn is not None else None
        st = mof_step(st, rec, rec.theta_post, pack, traj.nu, traj.dt, scale)
        out.append(st)
    return out


def mof_multiplicativity_check(traj, split, pack_fn=None, scale="ns"):
    """|| M(tau + s) - M(s) M_restarted(tau) || for a split at state index ``split``."""
    if not 0 <= split <= traj.n_steps:
        raise ContractError("split outside trajectory")
    full = run_functional(traj, 0, pack_fn, scale)
    if split == 0:
        again = run_functional(traj, 0, pack_fn, scale)
        return float(np.max(np.abs(full[-1].M - full[0].M @ again[-1].M)))
    tail = run_functional(traj, split, pack_fn, scale, restart=True)
    return float(np.max(np.abs(full[-1].M - full[split].M @ tail[-1].M)))


def equivariance_check(traj, a, conn, pack_fn=None, scale="ns", height=None):
    """Re-run the path with frame e A and noise A^T dB; return || M_rot - A M A^T ||."""
    a = np.asarray(a, dtype=float)
    if not np.allclose(a.T @ a, np.eye(a.shape[0]), rtol=0, atol=1e-12):
        raise ContractError("A must be orthogonal")
    noises = [(a.T @ rec.dB, rec.u_bridge) for rec in traj.records]
    rot = simulate_path(traj.r0.rotated(a), traj.n_steps * traj.dt, traj.dt, conn, traj.direction,
                        height=height, noises=noises)
    m = run_functional(traj, 0, pack_fn, scale)[-1].M
    m_rot = run_functional(rot, 0, pack_fn, scale)[-1].M
    return float(np.max(np.abs(m_rot - a @ m @ a.T)))
