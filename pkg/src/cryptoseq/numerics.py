"""Dense float64 arithmetic, activations and the seeded random stream.

Matrices are plain 2-D ``float64`` numpy arrays.  ``matmul`` does not call
BLAS: it runs a compiled triple loop in which every output entry accumulates
its products in ascending ``k`` order, so results are bit-identical from run
to run regardless of threading or BLAS build.

Random numbers come from xoshiro256** (Blackman & Vigna) seeded through
splitmix64.  Given a 64-bit seed the sequence of raw 64-bit outputs is fully
specified, so streams reproduce exactly on any platform:

* seeding: ``z = seed``; four times ``z += 0x9E3779B97F4A7C15`` and emit
  ``mix(z)`` with the splitmix64 finaliser, giving ``s[0..3]``;
* uniform doubles: ``(next() >> 11) * 2**-53`` which lies in ``[0, 1)``;
* bounded integers: rejection sampling on ``next() % n``;
* normals: Box-Muller on pairs of uniforms (the only part that depends on the
  platform's ``log``/``cos``).
"""
from __future__ import annotations

import numba
import numpy as np
from scipy.special import expit

from .errors import ShapeError

__all__ = [
    "RandomStream",
    "activate",
    "activation_grad",
    "as_matrix",
    "matmul",
    "matmul_unchecked",
]

_GOLDEN = 0x9E3779B97F4A7C15
_U64 = (1 << 64) - 1

# Saturation guard: keeps sigmoid in (0, 1) and tanh in (-1, 1) strictly.
_SIG_LO = np.finfo(np.float64).tiny
_SIG_HI = np.nextafter(1.0, 0.0)


@numba.njit(cache=True)
def _matmul_kernel(a, b):
    n, depth = a.shape
    m = b.shape[1]
    out = np.zeros((n, m))
    for i in range(n):
        for k in range(depth):
            aik = a[i, k]
            for j in range(m):
                out[i, j] += aik * b[k, j]
    return out


def matmul_unchecked(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Fixed-order product without validation, for internal hot loops."""
    return _matmul_kernel(np.ascontiguousarray(a), np.ascontiguousarray(b))


def as_matrix(values, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    """Build a float64 matrix, optionally from a flat row-major sequence."""
    arr = np.array(values, dtype=np.float64)
    if rows is not None or cols is not None:
        if rows is None or cols is None:
            raise ShapeError("both rows and cols are required")
        if rows < 1 or cols < 1:
            raise ShapeError(f"matrix dimensions must be positive, got {rows}x{cols}")
        if arr.size != rows * cols:
            raise ShapeError(f"{arr.size} values cannot fill a {rows}x{cols} matrix")
        return arr.reshape(rows, cols)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2 or arr.size == 0:
        raise ShapeError(f"expected a non-empty 2-D matrix, got shape {arr.shape}")
    return arr


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return matmul_unchecked(a, b)


def activate(x: np.ndarray, kind: str) -> np.ndarray:
    """Elementwise ``sigmoid``, ``tanh`` or ``identity``; shape is preserved."""
    if kind == "sigmoid":
        return np.clip(expit(x), _SIG_LO, _SIG_HI)
    if kind == "tanh":
        return np.clip(np.tanh(x), -_SIG_HI, _SIG_HI)
    if kind == "identity":
        return np.array(x, dtype=np.float64, copy=True)
    raise ValueError(f"unknown activation {kind!r}")


def activation_grad(y: np.ndarray, kind: str) -> np.ndarray:
    """Derivative of the activation expressed through its output ``y``."""
    if kind == "sigmoid":
        return y * (1.0 - y)
    if kind == "tanh":
        return 1.0 - y * y
    if kind == "identity":
        return np.ones_like(y)
    raise ValueError(f"unknown activation {kind!r}")


# --- xoshiro256** -----------------------------------------------------------

@numba.njit(cache=True)
def _rotl(x, k):
    return (x << np.uint64(k)) | (x >> np.uint64(64 - k))


@numba.njit(cache=True)
def _next(s):
    result = _rotl(s[1] * np.uint64(5), 7) * np.uint64(9)
    t = s[1] << np.uint64(17)
    s[2] ^= s[0]
    s[3] ^= s[1]
    s[1] ^= s[2]
    s[0] ^= s[3]
    s[2] ^= t
    s[3] = _rotl(s[3], 45)
    return result


@numba.njit(cache=True)
def _to_unit(x):
    return np.float64(x >> np.uint64(11)) * (1.0 / 9007199254740992.0)


@numba.njit(cache=True)
def _next_unit(s):
    return _to_unit(_next(s))


@numba.njit(cache=True)
def _fill_u64(s, out):
    for i in range(out.shape[0]):
        out[i] = _next(s)


@numba.njit(cache=True)
def _fill_uniform(s, out):
    for i in range(out.shape[0]):
        out[i] = _to_unit(_next(s))


@numba.njit(cache=True)
def _fill_normal(s, out):
    n = out.shape[0]
    i = 0
    while i < n:
        u1 = 1.0 - _to_unit(_next(s))  # (0, 1]
        u2 = _to_unit(_next(s))
        rad = np.sqrt(-2.0 * np.log(u1))
        out[i] = rad * np.cos(2.0 * np.pi * u2)
        if i + 1 < n:
            out[i + 1] = rad * np.sin(2.0 * np.pi * u2)
        i += 2


@numba.njit(cache=True)
def _below(s, n):
    n64 = np.uint64(n)
    threshold = (np.uint64(0) - n64) % n64
    while True:
        x = _next(s)
        if x >= threshold:
            return np.int64(x % n64)


@numba.njit(cache=True)
def _permutation(s, n):
    idx = np.arange(n)
    for i in range(n - 1, 0, -1):
        j = _below(s, i + 1)
        tmp = idx[i]
        idx[i] = idx[j]
        idx[j] = tmp
    return idx


def _splitmix_mix(z: int) -> int:
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _U64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _U64
    return z ^ (z >> 31)


def seed_state(seed: int) -> list[int]:
    """The four xoshiro256** state words derived from ``seed`` by splitmix64."""
    z = seed & _U64
    words = []
    for _ in range(4):
        z = (z + _GOLDEN) & _U64
        words.append(_splitmix_mix(z))
    return words


class RandomStream:
    """Seeded xoshiro256** stream.

    A stream is single-owner; use :meth:`split` to derive an independent child
    stream instead of sharing one between consumers.
    """

    def __init__(self, seed: int = 0):
        self.seed = int(seed) & _U64
        self._state = np.array(seed_state(self.seed), dtype=np.uint64)

    def next_u64(self) -> int:
        return int(_next(self._state))

    def next_uniform(self, lo: float = 0.0, hi: float = 1.0) -> float:
        if not lo < hi:
            raise ValueError(f"empty range [{lo}, {hi})")
        u = float(_next_unit(self._state))
        value = lo + (hi - lo) * u
        # rounding can land exactly on hi for wide ranges
        return value if value < hi else float(np.nextafter(hi, lo))

    def uniform(self, size, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
        if not lo < hi:
            raise ValueError(f"empty range [{lo}, {hi})")
        shape = (size,) if np.isscalar(size) else tuple(size)
        out = np.empty(int(np.prod(shape)))
        _fill_uniform(self._state, out)
        if lo != 0.0 or hi != 1.0:
            out = lo + (hi - lo) * out
            np.minimum(out, np.nextafter(hi, lo), out=out)
        return out.reshape(shape)

    def normal(self, size) -> np.ndarray:
        shape = (size,) if np.isscalar(size) else tuple(size)
        out = np.empty(int(np.prod(shape)))
        _fill_normal(self._state, out)
        return out.reshape(shape)

    def raw(self, size: int) -> np.ndarray:
        out = np.empty(size, dtype=np.uint64)
        _fill_u64(self._state, out)
        return out

    def below(self, n: int) -> int:
        """Uniform integer in ``[0, n)``."""
        if n < 1:
            raise ValueError("n must be positive")
        return int(_below(self._state, n))

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of ``range(n)``."""
        return _permutation(self._state, n)

    def keep_mask(self, shape, rate: float) -> np.ndarray:
        """Inverted-dropout mask: entries are 0 or ``1/(1-rate)``.

        A zero rate returns ones without consuming the stream.
        """
        if not 0.0 <= rate < 1.0:
            raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
        if rate == 0.0:
            return np.ones(shape)
        u = self.uniform(shape)
        return np.where(u >= rate, 1.0 / (1.0 - rate), 0.0)

    def split(self) -> "RandomStream":
        return RandomStream(self.next_u64())

    def state(self) -> tuple[int, ...]:
        return tuple(int(w) for w in self._state)
