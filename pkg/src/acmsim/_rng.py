"""Counter-based randomness keyed by (seed, t, draw_index).

Every uniform is a pure function of its key, so any single draw can be
recomputed without replaying a stream. Index 0 at time t is reserved for the
delay xi_t; construction draws at time t use indices 1, 2, ...
"""

import numba
import numpy as np

MASK64 = (1 << 64) - 1
XI_INDEX = 0

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_STEP_T = np.uint64(0xD1B54A32D192ED03)
_STEP_I = np.uint64(0x8CB92BA72F3D8DD7)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0


@numba.njit(cache=True, nogil=True)
def _mix64(z):
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@numba.njit(cache=True, nogil=True)
def _key(seed, t, i):
    h = _mix64(seed ^ _GOLDEN)
    h = _mix64(h + np.uint64(t) * _STEP_T)
    return _mix64(h + np.uint64(i + 1) * _STEP_I)


@numba.njit(cache=True, nogil=True)
def counter_uniform(seed, t, i):
    """Uniform on the open interval (0, 1) for key (seed, t, i)."""
    return (float(_key(seed, t, i) >> _S11) + 0.5) * _INV53


@numba.njit(cache=True, nogil=True)
def counter_uniforms(seed, t_start, n, i):
    out = np.empty(n, np.float64)
    for j in range(n):
        out[j] = counter_uniform(seed, t_start + j, i)
    return out


@numba.njit(cache=True, nogil=True)
def randbelow(u, n):
    j = int(u * n)
    return j if j < n else n - 1


def as_seed(seed):
    """Normalise a Python integer seed to the uint64 key used by the kernels."""
    return np.uint64(int(seed) & MASK64)


class ThetaStream:
    """Per-step randomness: successive uniforms keyed by (seed, t, 1), (seed, t, 2), ..."""

    __slots__ = ("seed", "t", "draws")

    def __init__(self, seed, t):
        self.seed = as_seed(seed)
        self.t = int(t)
        self.draws = 0

    def uniform(self):
        self.draws += 1
        return counter_uniform(self.seed, self.t, self.draws)

    def randbelow(self, n):
        return randbelow(self.uniform(), n)
