"""Frame points, horizontal vector fields, and lifting of forms to frame components.

Frames are stored as matrices ``e[alpha, a]`` (column ``a`` is the frame
vector e_a) normalised so that ``e.T @ (g / (2 nu)) @ e = I``; ``theta`` is
the inverse matrix (the co-frame).
"""
from dataclasses import dataclass

import numpy as np

from .geometry import ContractError


class FrameCollapseError(ArithmeticError):
    """Frame became numerically singular; the path is discarded."""


@dataclass
class FramePoint:
    x: np.ndarray
    e: np.ndarray
    theta: np.ndarray

    @classmethod
    def make(cls, x, e):
        e = np.array(e, dtype=float)
        return cls(np.array(x, dtype=float), e, np.linalg.inv(e))

    @classmethod
    def standard(cls, x, nu, metric=None):
        """Frame sqrt(2 nu) * (g-orthonormal basis obtained from the coordinate axes)."""
        x = np.array(x, dtype=float)
        n = x.shape[0]
        g = np.eye(n) if metric is None else metric.g(x)
        e = orthonormalize(np.sqrt(2.0 * nu) * np.eye(n), g / (2.0 * nu))
        return cls.make(x, e)

    def rotated(self, a):
        """Right action of an orthogonal matrix: e -> e a."""
        return FramePoint.make(self.x, self.e @ a)

    def orthonormality_defect(self, g, nu):
        n = self.e.shape[0]
        return float(np.max(np.abs(self.e.T @ (g / (2.0 * nu)) @ self.e - np.eye(n))))

    @property
    def on_boundary(self):
        return self.x[-1] <= 0.0


def horizontal_field(conn, tau, r):
    """Canonical horizontal vector fields at ``r``.

    Returns ``(xpart, epart)`` with ``xpart[:, a] = e_a`` and
    ``epart[a, alpha, c] = -Gamma^alpha_{beta gamma} e^gamma_a e^beta_c``.
    """
    gam = conn(tau, r.x)
    epart = -np.einsum("xbg,ga,bc->axc", gam, r.e, r.e)
    return r.e.copy(), epart


def _degree(omega):
    return np.ndim(omega)


def lift_form(omega, r):
    """Frame components of a 0-, 1- or 2-form given by its coordinate components at ``r.x``."""
    omega = np.asarray(omega, dtype=float)
    p = _degree(omega)
    if p == 0:
        return omega.copy()
    if p == 1:
        return r.e.T @ omega
    if p == 2:
        return r.e.T @ omega @ r.e
    raise ContractError("only p <= 2 (or p = n - 1 with n <= 3) is supported")


def project_form(lifted, r):
    """Inverse of :func:`lift_form`: contract frame components with the co-frame."""
    lifted = np.asarray(lifted, dtype=float)
    p = _degree(lifted)
    if p == 0:
        return lifted.copy()
    if p == 1:
        return r.theta.T @ lifted
    if p == 2:
        return r.theta.T @ lifted @ r.theta
    raise ContractError("only p <= 2 (or p = n - 1 with n <= 3) is supported")


def orthonormalize(e, gscaled):
    """Modified Gram-Schmidt of the columns of ``e`` in the ``gscaled`` inner product."""
    e = np.array(e, dtype=float)
    if not np.all(np.isfinite(e)):
        raise FrameCollapseError("non-finite frame")
    n = e.shape[1]
    scale = max(float(np.max(np.abs(e))), 1e-300)
    for k in range(n):
        for j in range(k):
            e[:, k] -= (e[:, j] @ gscaled @ e[:, k]) * e[:, j]
        nrm2 = float(e[:, k] @ gscaled @ e[:, k])
        if not nrm2 > 1e-24 * scale * scale * float(np.max(np.abs(gscaled))):
            raise FrameCollapseError("frame collapsed at column %d" % k)
        e[:, k] /= np.sqrt(nrm2)
    return e


def absolute_bc_residual(ff):
    """Max-norm residuals of the absolute boundary conditions of a 2-form field.

    ``dirichlet``: max |Omega_{a n}| on the boundary row.  ``neumann``: max
    one-sided normal difference of the tangential components Omega_{ab}
    (a, b < n) at the boundary; 0.0 when there are none (n = 2).
    """
    if ff.degree != 2:
        raise ContractError("absolute BC residual is defined for 2-forms here")
    if ff.grid.ny < 2:
        raise ContractError("grid has no interior row next to the boundary")
    n = ff.grid.dim
    dirichlet = 0.0
    neumann = 0.0
    for c, (a, b) in enumerate(ff.components):
        row0 = ff.values[c, 0]
        if b == n - 1:
            dirichlet = max(dirichlet, float(np.max(np.abs(row0))))
        else:
            d = (ff.values[c, 1] - row0) / ff.grid.hy
            neumann = max(neumann, float(np.max(np.abs(d))))
    return {"dirichlet": dirichlet, "neumann": neumann}
