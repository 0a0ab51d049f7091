"""Strip grids and grid-sampled fields, with their CSV representation.

The strip is periodic in the tangential coordinate ``x`` (period ``lx``) and
spans ``0 <= y <= height`` in the normal coordinate, boundary row ``j = 0``
included.  In three dimensions the grid is the (x, z) plane and fields are
taken to be invariant along the second tangential axis.
"""
import csv
import io
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class StripGrid:
    nx: int
    ny: int
    lx: float
    height: float
    dim: int = 2

    def __post_init__(self):
        if self.nx < 1 or self.ny < 2 or self.lx <= 0 or self.height <= 0:
            raise ValueError("invalid strip grid %r" % (self,))
        if self.dim not in (2, 3):
            raise ValueError("grid dimension must be 2 or 3")

    @property
    def hx(self):
        return self.lx / self.nx

    @property
    def hy(self):
        return self.height / (self.ny - 1)

    @property
    def x(self):
        return np.arange(self.nx) * self.hx

    @property
    def y(self):
        return np.arange(self.ny) * self.hy

    def points(self):
        """Node coordinates in row-major (j outer, i inner) order, shape (ny*nx, dim)."""
        yy, xx = np.meshgrid(self.y, self.x, indexing="ij")
        pts = np.zeros((self.ny * self.nx, self.dim))
        pts[:, 0] = xx.ravel()
        pts[:, -1] = yy.ravel()
        return pts

    def subgrid(self, step_x, step_y):
        """Thinned node indices (j, i) keeping every ``step``-th node, boundaries included."""
        js = np.arange(0, self.ny, step_y)
        is_ = np.arange(0, self.nx, step_x)
        return js, is_

    def to_dict(self):
        return {"nx": self.nx, "ny": self.ny, "lx": self.lx, "height": self.height, "dim": self.dim}


def form_components(dim, degree):
    """Index tuples (0-based, increasing) of the independent components."""
    if degree == 0:
        return [()]
    if degree == 1:
        return [(a,) for a in range(dim)]
    if degree == 2:
        return [(a, b) for a in range(dim) for b in range(a + 1, dim)]
    raise ValueError("degree %d not supported" % degree)


def component_name(idx, prefix="w"):
    return prefix + "".join(str(i + 1) for i in idx) if idx else prefix


@dataclass
class FormField:
    """One time slice of a p-form on a strip grid, plus standard errors.

    ``values`` and ``stderr`` have shape (ncomp, ny, nx) ordered like
    :func:`form_components`.
    """
    grid: StripGrid
    degree: int
    values: np.ndarray
    stderr: np.ndarray = None
    tau: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.stderr is None:
            self.stderr = np.zeros_like(self.values)
        ncomp = len(self.components)
        if self.values.shape != (ncomp, self.grid.ny, self.grid.nx):
            raise ValueError("values shape %s does not match grid/degree" % (self.values.shape,))

    @property
    def components(self):
        return form_components(self.grid.dim, self.degree)

    def component(self, idx):
        return self.values[self.components.index(tuple(idx))]

    def to_matrix(self):
        """Full antisymmetric arrays, shape (ny, nx, dim, dim) (degree 2 only)."""
        n = self.grid.dim
        out = np.zeros((self.grid.ny, self.grid.nx, n, n))
        for c, (a, b) in enumerate(self.components):
            out[..., a, b] = self.values[c]
            out[..., b, a] = -self.values[c]
        return out


@dataclass
class VelocityField:
    """Velocity time slices on a strip grid; ``values`` has shape (nt, dim, ny, nx)."""
    grid: StripGrid
    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.times = np.atleast_1d(np.asarray(self.times, dtype=float))
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim == 3:
            self.values = self.values[None]
        if self.values.shape != (len(self.times), self.grid.dim, self.grid.ny, self.grid.nx):
            raise ValueError("velocity values shape %s does not match grid" % (self.values.shape,))
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("velocity slice times must increase")

    @classmethod
    def from_function(cls, grid, times, u):
        """Sample ``u(tau, pts)`` (pts of shape (m, dim), returns (m, dim)) on the grid."""
        pts = grid.points()
        vals = []
        for t in np.atleast_1d(times):
            v = np.asarray(u(t, pts), dtype=float)
            vals.append(v.T.reshape(grid.dim, grid.ny, grid.nx))
        return cls(grid, times, np.array(vals))

    def kernel_arrays(self):
        """(times, U[nt, ny, nx, dim]) contiguous layout used by the path kernels."""
        return self.times.copy(), np.ascontiguousarray(self.values.transpose(0, 2, 3, 1))

    def sample(self, tau, pts):
        """Linear-in-time, bilinear-in-space interpolation at points (m, dim)."""
        from .kernels import velocity_at_np
        t, U = self.kernel_arrays()
        return velocity_at_np(t, U, self.grid.hx, self.grid.hy, self.grid.lx, tau, np.atleast_2d(pts))

    def as_function(self):
        return lambda tau, x: self.sample(tau, np.atleast_2d(x))[0]


def write_form_csv(path_or_buf, ff, with_stderr=True):
    """Row-major CSV: x, y[, z], then each component followed by its stderr column."""
    g = ff.grid
    names = [component_name(c) for c in ff.components]
    coord = ["x", "y"] if g.dim == 2 else ["x", "y", "z"]
    header = list(coord)
    for nm in names:
        header.append(nm)
        if with_stderr:
            header.append(nm + "_stderr")
    pts = g.points()
    cols = [pts[:, k] for k in range(g.dim)]
    for c in range(len(names)):
        cols.append(ff.values[c].ravel())
        if with_stderr:
            cols.append(ff.stderr[c].ravel())
    own = isinstance(path_or_buf, (str, bytes)) or hasattr(path_or_buf, "__fspath__")
    fh = open(path_or_buf, "w", newline="") if own else path_or_buf
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*cols):
            w.writerow(["%.17g" % v for v in row])
    finally:
        if own:
            fh.close()


def read_form_csv(path, grid, degree):
    with open(path) as fh:
        rows = list(csv.reader(fh))
    header, data = rows[0], np.array(rows[1:], dtype=float)
    ncomp = len(form_components(grid.dim, degree))
    vals = np.zeros((ncomp, grid.ny, grid.nx))
    errs = np.zeros_like(vals)
    for c, comp in enumerate(form_components(grid.dim, degree)):
        nm = component_name(comp)
        vals[c] = data[:, header.index(nm)].reshape(grid.ny, grid.nx)
        if nm + "_stderr" in header:
            errs[c] = data[:, header.index(nm + "_stderr")].reshape(grid.ny, grid.nx)
    return FormField(grid, degree, vals, errs)


def write_velocity_csv(path, grid, u):
    """Velocity slice (dim, ny, nx) as CSV with columns x, y[, z], u1..un."""
    pts = grid.points()
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x", "y"] + (["z"] if grid.dim == 3 else []) + ["u%d" % (k + 1) for k in range(grid.dim)])
    flat = u.reshape(grid.dim, -1)
    for m in range(pts.shape[0]):
        w.writerow(["%.17g" % v for v in list(pts[m]) + list(flat[:, m])])
    with open(path, "w", newline="") as fh:
        fh.write(buf.getvalue())
