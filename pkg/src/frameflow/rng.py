"""Counter-based random numbers keyed by (seed, stream, path, counter).

Every draw is a pure function of its key and counter, so a path produces the
same noise no matter which worker or chunk simulates it.  The mixer is the
SplitMix64 finalizer.  The same source is used twice: as plain numpy code
(vectorised over paths) and compiled by numba (scalar, inside kernels).
"""
import numpy as np

from ._accel import HAS_NUMBA, numba

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0

# uniform slots reserved per SDE step: 4 for Box-Muller (up to 4 normals),
# 1 for the Brownian-bridge boundary test
SLOTS_PER_STEP = 8


def mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


def path_key(seed, stream, path):
    """Key of one path's substream.  Arguments must be uint64 (scalars or arrays)."""
    return mix64(mix64(seed ^ mix64(stream * GOLDEN + np.uint64(1))) + (path + np.uint64(1)) * GOLDEN)


def uniform(key, ctr):
    """Uniform on the open interval (0, 1); ``key`` and ``ctr`` are uint64 arrays."""
    bits = mix64(key + (ctr + np.uint64(1)) * GOLDEN) >> _S11
    return (bits.astype(np.float64) + 0.5) * _INV53


def step_draws_np(keys, step, n, sign):
    """Normals (npath, n) and bridge uniforms (npath,) for one step, vectorised."""
    base = np.uint64(step) * np.uint64(SLOTS_PER_STEP)
    z = np.empty((keys.shape[0], 4))
    for pair in range(2):
        u1 = uniform(keys, np.full_like(keys, base + np.uint64(2 * pair)))
        u2 = uniform(keys, np.full_like(keys, base + np.uint64(2 * pair + 1)))
        r = np.sqrt(-2.0 * np.log(u1))
        z[:, 2 * pair] = r * np.cos(2.0 * np.pi * u2)
        z[:, 2 * pair + 1] = r * np.sin(2.0 * np.pi * u2)
    ub = uniform(keys, np.full_like(keys, base + np.uint64(4)))
    z = z[:, :n] * sign[:, None]
    ub = np.where(sign < 0, 1.0 - ub, ub)
    return z, ub


def path_keys(seed, stream, n_paths, antithetic=False):
    """Keys and noise signs for ``n_paths`` paths of one stream.

    With antithetic pairing, path ``2m+1`` reuses the key of path ``2m`` and
    flips the sign of its Gaussian increments.
    """
    idx = np.arange(n_paths, dtype=np.uint64)
    sign = np.ones(n_paths)
    if antithetic:
        idx = idx - (idx & np.uint64(1))
        sign[1::2] = -1.0
    seed = np.uint64(seed & 0xFFFFFFFFFFFFFFFF)
    stream = np.uint64(stream)
    return path_key(np.full(n_paths, seed, dtype=np.uint64), np.full(n_paths, stream, dtype=np.uint64), idx), sign


if HAS_NUMBA:
    mix64_jit = numba.njit(cache=True, nogil=True)(mix64)

    @numba.njit(cache=True, nogil=True)
    def uniform_jit(key, ctr):
        bits = mix64_jit(key + (ctr + np.uint64(1)) * GOLDEN) >> _S11
        return (np.float64(bits) + 0.5) * _INV53

    @numba.njit(cache=True, nogil=True)
    def step_draws_jit(key, step, n, sign, z):
        """Fill ``z[:n]`` with normals and return the bridge uniform."""
        base = np.uint64(step) * np.uint64(SLOTS_PER_STEP)
        for pair in range(2):
            u1 = uniform_jit(key, base + np.uint64(2 * pair))
            u2 = uniform_jit(key, base + np.uint64(2 * pair + 1))
            r = np.sqrt(-2.0 * np.log(u1))
            if 2 * pair < n:
                z[2 * pair] = sign * r * np.cos(2.0 * np.pi * u2)
            if 2 * pair + 1 < n:
                z[2 * pair + 1] = sign * r * np.sin(2.0 * np.pi * u2)
        ub = uniform_jit(key, base + np.uint64(4))
        if sign < 0:
            ub = 1.0 - ub
        return ub
