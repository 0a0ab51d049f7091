"""Named initial fields used by run configurations.

Each profile spec is a dict with a ``kind`` key; :func:`make_profile` turns it
into a vectorised callable ``pts -> values`` on points of shape (m, n).  The
normal coordinate is the last column, the tangential one the first.
"""
import numpy as np

from .geometry import ContractError


def _gauss(d2, w):
    return np.exp(-d2 / (2.0 * w * w))


def make_profile(spec):
    kind = spec.get("kind", "zero")
    a = float(spec.get("amplitude", 1.0))
    if kind == "zero":
        return lambda p: np.zeros(p.shape[0])
    if kind == "constant":
        v = float(spec.get("value", a))
        return lambda p: np.full(p.shape[0], v)
    if kind in ("gaussian", "wall_gaussian"):
        c = float(spec.get("center", 1.0))
        w = float(spec.get("width", 0.3))
        xc = spec.get("x_center")
        xw = float(spec.get("x_width", w))
        wall = kind == "wall_gaussian"

        def f(p):
            y = p[:, -1]
            v = a * _gauss((y - c) ** 2, w)
            if xc is not None:
                v = v * _gauss((p[:, 0] - float(xc)) ** 2, xw)
            return v * y if wall else v
        return f
    if kind == "vortex_pair":
        w = float(spec.get("width", 0.25))
        centers = np.asarray(spec.get("centers", [[1.6, 1.0], [2.4, 1.0]]), dtype=float)
        signs = np.asarray(spec.get("signs", [-1.0, 1.0]), dtype=float)

        def f(p):
            v = np.zeros(p.shape[0])
            for (cx, cy), s in zip(centers, signs):
                v += s * a * _gauss((p[:, 0] - cx) ** 2 + (p[:, -1] - cy) ** 2, w)
            return v
        return f
    raise ContractError("unknown profile kind %r" % kind)


def make_vector_profile(specs):
    """List of component specs -> ``pts -> (m, len(specs))``."""
    fs = [make_profile(s) for s in specs]
    return lambda p: np.stack([f(p) for f in fs], axis=1)


def make_velocity(spec, dim):
    """Steady velocity ``u(tau, pts) -> (m, dim)`` or None for zero flow.

    Kinds: ``zero``; ``uniform`` (``value`` list); ``shear`` (u_1 = rate * x_n).
    """
    kind = spec.get("kind", "zero") if spec else "zero"
    if kind == "zero":
        return None
    if kind == "uniform":
        v = np.asarray(spec["value"], dtype=float)
        if v.shape != (dim,):
            raise ContractError("uniform velocity needs %d components" % dim)
        return lambda t, p: np.broadcast_to(v, (p.shape[0], dim)).copy()
    if kind == "shear":
        s = float(spec.get("rate", 1.0))

        def u(t, p):
            out = np.zeros((p.shape[0], dim))
            out[:, 0] = s * p[:, -1]
            return out
        return u
    raise ContractError("unknown velocity kind %r" % kind)
