"""Square matrices with Cayley-Dickson entries."""
from __future__ import annotations

import numpy as np

from .algebra import CDNumber, DEFAULT_TOL, as_cd, embed, level_of, mul_arrays


class ShapeMismatch(ValueError):
    pass


class CDMatrix:
    """s x s matrix over A_r stored as a real array of shape (s, s, 2^r)."""

    __slots__ = ("data",)

    def __init__(self, data):
        d = np.array(data, dtype=float)
        if d.ndim != 3 or d.shape[0] != d.shape[1] or d.shape[0] < 1:
            raise ShapeMismatch(f"expected (s, s, 2^r) array, got {d.shape}")
        level_of(d.shape[2])
        d.setflags(write=False)
        object.__setattr__(self, "data", d)

    def __setattr__(self, name, value):
        raise AttributeError("CDMatrix is immutable")

    @property
    def s(self) -> int:
        return self.data.shape[0]

    @property
    def level(self) -> int:
        return level_of(self.data.shape[2])

    @classmethod
    def zeros(cls, s: int, level: int) -> "CDMatrix":
        return cls(np.zeros((s, s, 1 << level)))

    @classmethod
    def identity(cls, s: int, level: int) -> "CDMatrix":
        d = np.zeros((s, s, 1 << level))
        d[np.arange(s), np.arange(s), 0] = 1.0
        return cls(d)

    @classmethod
    def from_entries(cls, rows) -> "CDMatrix":
        r = max(e.level for row in rows for e in row)
        return cls([[embed(e.coeffs, r) for e in row] for row in rows])

    @classmethod
    def from_real(cls, m, level: int) -> "CDMatrix":
        m = np.atleast_2d(np.asarray(m, dtype=float))
        d = np.zeros(m.shape + (1 << level,))
        d[..., 0] = m
        return cls(d)

    def entry(self, j: int, k: int) -> CDNumber:
        return CDNumber(self.data[j, k])

    def __add__(self, other):
        return mat_add(self, other)

    def __matmul__(self, other):
        return mat_mul(self, other)

    def __neg__(self):
        return CDMatrix(-self.data)

    def close(self, other: "CDMatrix", tol: float = DEFAULT_TOL) -> bool:
        a, b = _aligned(self, other)
        diff = np.max(np.abs(a - b), initial=0.0)
        scale = max(np.max(np.abs(a), initial=0.0), np.max(np.abs(b), initial=0.0), 1.0)
        return bool(diff <= tol * scale)

    def __repr__(self):
        return f"CDMatrix(s={self.s}, r={self.level})"


def _aligned(a: CDMatrix, b: CDMatrix):
    if a.s != b.s:
        raise ShapeMismatch(f"matrix sizes {a.s} and {b.s} differ")
    r = max(a.level, b.level)
    return embed(a.data, r), embed(b.data, r)


def mat_add(a: CDMatrix, b: CDMatrix) -> CDMatrix:
    x, y = _aligned(a, b)
    return CDMatrix(x + y)


def mat_mul(a: CDMatrix, b: CDMatrix) -> CDMatrix:
    """C_jk = sum_m A_jm B_mk, accumulated with m ascending."""
    x, y = _aligned(a, b)
    out = np.zeros_like(x)
    for m in range(x.shape[0]):
        out = out + mul_arrays(x[:, m, None, :], y[None, m, :, :])
    return CDMatrix(out)


def mat_scale_left(a, m: CDMatrix) -> CDMatrix:
    a = as_cd(a, m.level)
    r = max(a.level, m.level)
    return CDMatrix(mul_arrays(embed(a.coeffs, r), embed(m.data, r)))


def mat_scale_right(m: CDMatrix, a) -> CDMatrix:
    a = as_cd(a, m.level)
    r = max(a.level, m.level)
    return CDMatrix(mul_arrays(embed(m.data, r), embed(a.coeffs, r)))


def is_real_matrix(m: CDMatrix, tol: float = DEFAULT_TOL) -> bool:
    return bool(np.max(np.abs(m.data[..., 1:]), initial=0.0) <= tol)


def matmul_arrays(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product of batched CD matrices of shape (..., s, s, 2^r)."""
    s = a.shape[-2]
    out = None
    for m in range(s):
        term = mul_arrays(a[..., :, m, None, :], b[..., None, m, :, :])
        out = term if out is None else out + term
    return out
