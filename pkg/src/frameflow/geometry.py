"""Metrics on the half-space chart, Riemann-Cartan-Weyl connections, curvature.

Index conventions (all arrays are plain numpy):

* ``gamma[a, b, c]`` is the Christoffel symbol with ``nabla_b d_c = gamma[a, b, c] d_a``.
* ``dg[a, b, c]`` is ``d g_ab / d x^c``.
* ``rr[a, b, c, d]`` is the (2,2) curvature tensor R^{ab}_{cd} obtained by
  raising the second index of the Riemann tensor R^a_{bcd}.
* ``ric[b, d]`` is the mixed Ricci tensor Ric^b_d, equal to ``rr[a, b, a, d]`` summed over ``a``.

The boundary is ``{x[-1] == 0}``; the normal coordinate is always the last one.
"""
from dataclasses import dataclass, field

import numpy as np

EIG_FLOOR = 1e-10


class DegenerateMetricError(ValueError):
    pass


class OutOfRangeError(ValueError):
    """A time-dependent field was queried outside its stored time range."""


class ContractError(ValueError):
    """An operation was called with inputs violating its preconditions."""


def _fd_step(x):
    return 1e-5 * (1.0 + np.linalg.norm(x))


class MetricModel:
    """Metric g(x) on the closed half-space, in a boundary-adapted chart.

    ``gfun(x)`` returns the n x n matrix; ``dgfun(x)`` (optional) returns the
    n x n x n derivative array.  Without ``dgfun`` derivatives are central
    differences.  The constructor rejects metrics with g_{a n} != 0 for a < n
    on a fixed set of sample points.
    """

    def __init__(self, dim, gfun, dgfun=None, kind="user-supplied", check=True):
        if dim < 2:
            raise ContractError("dimension must be at least 2")
        self.dim = dim
        self.kind = kind
        self._g = gfun
        self._dg = dgfun
        if check:
            self._check_samples()

    def _check_samples(self):
        rs = np.random.default_rng(12345)
        n = self.dim
        for _ in range(16):
            x = np.concatenate([rs.uniform(-2, 2, n - 1), rs.uniform(0, 3, 1)])
            g = self.g(x)
            if np.max(np.abs(g[:-1, -1])) > 1e-12 or np.max(np.abs(g[-1, :-1])) > 1e-12:
                raise ContractError("metric is not boundary adapted: g_{a n} != 0 at %s" % (x,))

    def g(self, x):
        g = np.asarray(self._g(np.asarray(x, dtype=float)), dtype=float)
        if not np.allclose(g, g.T, rtol=0, atol=1e-14):
            raise DegenerateMetricError("metric not symmetric")
        if np.linalg.eigvalsh(g)[0] < EIG_FLOOR:
            raise DegenerateMetricError("metric eigenvalue below %g" % EIG_FLOOR)
        return g

    def ginv(self, x):
        return np.linalg.inv(self.g(x))

    def dg(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == "flat":
            return np.zeros((self.dim,) * 3)
        if self._dg is not None:
            return np.asarray(self._dg(x), dtype=float)
        h = _fd_step(x)
        out = np.empty((self.dim,) * 3)
        for c in range(self.dim):
            xp = x.copy()
            xm = x.copy()
            xp[c] += h
            xm[c] -= h
            out[:, :, c] = (self._g(xp) - self._g(xm)) / (2 * h)
        return out

    @classmethod
    def flat(cls, dim):
        eye = np.eye(dim)
        return cls(dim, lambda x: eye, None, kind="flat", check=False)

    @classmethod
    def conformal(cls, dim, lam, profile="linear"):
        """Test metric exp(2 f(x_n)) I with f = lam*x_n (linear) or lam*x_n**2 (quadratic)."""
        if profile == "linear":
            f = lambda y: lam * y
            fp = lambda y: lam
        elif profile == "quadratic":
            f = lambda y: lam * y * y
            fp = lambda y: 2 * lam * y
        else:
            raise ContractError("unknown conformal profile %r" % profile)
        eye = np.eye(dim)

        def gfun(x):
            return np.exp(2 * f(x[-1])) * eye

        def dgfun(x):
            out = np.zeros((dim,) * 3)
            out[:, :, -1] = 2 * fp(x[-1]) * np.exp(2 * f(x[-1])) * eye
            return out

        return cls(dim, gfun, dgfun, kind="conformally-flat-test")


def levi_civita(metric, x):
    """Christoffel symbols of the Levi-Civita connection of ``metric`` at ``x``."""
    x = np.asarray(x, dtype=float)
    n = metric.dim
    if metric.kind == "flat":
        return np.zeros((n, n, n))
    ginv = metric.ginv(x)
    dg = metric.dg(x)
    # lowered[d, b, c] = d_c g_db + d_b g_dc - d_d g_bc
    lowered = np.einsum("dbc->dbc", dg) + np.einsum("dcb->dbc", dg) - np.einsum("bcd->dbc", dg)
    gam = 0.5 * np.einsum("ad,dbc->abc", ginv, lowered)
    return 0.5 * (gam + gam.transpose(0, 2, 1))


@dataclass
class TraceTorsion:
    """Trace-torsion 1-form Q(tau, x) as a callable returning a length-n covector.

    ``t_range`` is the closed interval on which the field is defined; ``None``
    means all times.
    """
    q: object
    t_range: tuple = None
    velocity: object = None
    nu: float = None
    is_zero: bool = False

    @classmethod
    def zero(cls, dim):
        z = np.zeros(dim)
        return cls(lambda tau, x: z, is_zero=True)

    @classmethod
    def from_velocity(cls, u, nu, t_range=None):
        """Navier-Stokes torsion Q = -u / (2 nu); ``u(tau, x)`` returns a covector."""
        return cls(lambda tau, x: -np.asarray(u(tau, x), dtype=float) / (2.0 * nu), t_range, u, nu)

    def __call__(self, tau, x):
        if self.t_range is not None:
            lo, hi = self.t_range
            if tau < lo - 1e-12 or tau > hi + 1e-12:
                raise OutOfRangeError("torsion queried at tau=%g outside [%g, %g]" % (tau, lo, hi))
        return np.asarray(self.q(tau, x), dtype=float)


@dataclass
class ConnectionField:
    """Riemann-Cartan-Weyl connection built from (g, nu, Q).

    ``lc_scale`` multiplies the Levi-Civita part.  The Christoffels of ``2 nu g``
    coincide with those of ``g``, so the default is 1.
    """
    metric: MetricModel
    nu: float
    torsion: TraceTorsion
    lc_scale: float = 1.0

    @property
    def dim(self):
        return self.metric.dim

    @classmethod
    def flat_ns(cls, dim, nu, u=None, t_range=None):
        """Flat-space Navier-Stokes connection for velocity ``u`` (zero if None).

        ``u`` is a callable ``u(tau, x)`` or a gridded velocity field (anything
        with ``kernel_arrays``); the latter lets the ensemble kernels run.
        """
        metric = MetricModel.flat(dim)
        if u is None:
            return cls(metric, nu, TraceTorsion.zero(dim))
        if hasattr(u, "kernel_arrays"):
            if t_range is None and len(u.times) > 1:
                t_range = (float(u.times[0]), float(u.times[-1]))
            tt = TraceTorsion.from_velocity(u.as_function(), nu, t_range)
            tt.velocity = u
            return cls(metric, nu, tt)
        return cls(metric, nu, TraceTorsion.from_velocity(u, nu, t_range))

    @property
    def gridded_velocity(self):
        v = self.torsion.velocity
        return v if hasattr(v, "kernel_arrays") else None

    @property
    def is_flat_ns(self):
        """True when the ensemble kernels can simulate this connection."""
        if self.metric.kind != "flat" or self.lc_scale != 1.0:
            return False
        return self.torsion.is_zero or self.gridded_velocity is not None

    def __call__(self, tau, x):
        return rcw_christoffels(self, tau, x)


def rcw_christoffels(conn, tau, x):
    """Gamma^a_{bc} = lc_scale*{a bc} + 2/(n-1) (delta^a_b Q_c - g_bc Q^a)."""
    x = np.asarray(x, dtype=float)
    n = conn.dim
    q = conn.torsion(tau, x)
    g = conn.metric.g(x)
    qup = np.linalg.solve(g, q)
    eye = np.eye(n)
    tors = (2.0 / (n - 1)) * (np.einsum("ab,c->abc", eye, q) - np.einsum("bc,a->abc", g, qup))
    if conn.metric.kind == "flat":
        return tors
    return conn.lc_scale * levi_civita(conn.metric, x) + tors


def trace_torsion(gamma):
    """Q_b = T^a_{ab} with T^a_{bc} = (Gamma^a_{bc} - Gamma^a_{cb}) / 2."""
    tors = 0.5 * (gamma - gamma.transpose(0, 2, 1))
    return np.einsum("aab->b", tors)


@dataclass
class CurvaturePack:
    ric: np.ndarray
    rr: np.ndarray
    at: np.ndarray = field(default=None)

    @classmethod
    def zero(cls, dim, at=None):
        return cls(np.zeros((dim, dim)), np.zeros((dim,) * 4), at)

    def single_slot_r(self):
        """R-term of the functional as an n x n matrix: sum_e R^{a e}_{b e}."""
        return np.einsum("aebe->ab", self.rr)

    def scalar(self):
        return float(np.trace(self.ric))


def curvature(metric, x, h=None):
    """Curvature pack from Levi-Civita Christoffels and their central differences."""
    x = np.asarray(x, dtype=float)
    n = metric.dim
    if metric.kind == "flat":
        return CurvaturePack.zero(n, x)
    if h is None:
        h = 1e-4 * (1.0 + np.linalg.norm(x))
    gam = levi_civita(metric, x)
    dgam = np.empty((n, n, n, n))  # dgam[a, b, c, e] = d_e Gamma^a_bc
    for e in range(n):
        xp = x.copy()
        xm = x.copy()
        xp[e] += h
        xm[e] -= h
        dgam[..., e] = (levi_civita(metric, xp) - levi_civita(metric, xm)) / (2 * h)
    # R^a_{bcd} = d_c Gamma^a_{db} - d_d Gamma^a_{cb} + Gamma^a_{cl} Gamma^l_{db} - Gamma^a_{dl} Gamma^l_{cb}
    riem = (np.einsum("adbc->abcd", dgam) - np.einsum("acbd->abcd", dgam)
            + np.einsum("acl,ldb->abcd", gam, gam) - np.einsum("adl,lcb->abcd", gam, gam))
    ginv = metric.ginv(x)
    rr = np.einsum("be,aecd->abcd", ginv, riem)
    ric = np.einsum("abad->bd", rr)
    return CurvaturePack(ric, rr, x)


def weitzenbock_2form(pack, phi):
    """Curvature coupling of a 2-form: half the Ricci term on both slots minus the R-term.

    (W phi)_ab = 1/2 (Ric^c_a phi_cb + Ric^c_b phi_ac) - 1/2 R^{cd}_{ab} phi_cd
    """
    phi = np.asarray(phi, dtype=float)
    if not np.allclose(phi, -phi.T, rtol=0, atol=1e-13):
        raise ContractError("phi must be antisymmetric")
    ric_term = pack.ric.T @ phi + phi @ pack.ric
    r_term = 0.5 * np.einsum("cdab,cd->ab", pack.rr, phi)
    return 0.5 * ric_term - r_term
