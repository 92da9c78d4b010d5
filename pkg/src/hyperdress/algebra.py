"""Cayley-Dickson algebras A_r of dimension 2^r built by repeated doubling.

Numbers are stored as flat coefficient vectors over the generators
i_0 = 1, i_1, ..., i_{2^r - 1}.  The generator convention is
i_{2^r + m} = i_m * l with l = i_{2^r}.

Two multiplication routes exist on purpose:

* ``cd_mul`` follows the doubling formula recursively on coefficient halves.
* ``basis_table`` derives the signed product of every pair of generators
  from a sign recursion and is used for the fast batched product.

Tests compare the two routes on every generator pair.
"""
from __future__ import annotations

from functools import lru_cache
from itertools import combinations

import numpy as np

MAX_LEVEL = 6
DEFAULT_TOL = 1e-12


class DivisionByZero(ZeroDivisionError):
    pass


def _check_level(r: int) -> int:
    r = int(r)
    if r < 0 or r > MAX_LEVEL:
        raise ValueError(f"level must be in [0, {MAX_LEVEL}], got {r}")
    return r


def level_of(n: int) -> int:
    r = int(n).bit_length() - 1
    if n <= 0 or (1 << r) != n:
        raise ValueError(f"coefficient count {n} is not a power of two")
    return r


def embed(coeffs: np.ndarray, r: int) -> np.ndarray:
    """Zero-pad coefficients along the last axis up to level r."""
    coeffs = np.asarray(coeffs, dtype=float)
    n = 1 << r
    have = coeffs.shape[-1]
    if have == n:
        return coeffs
    if have > n:
        raise ValueError("cannot embed into a smaller algebra")
    pad = [(0, 0)] * (coeffs.ndim - 1) + [(0, n - have)]
    return np.pad(coeffs, pad)


# ---------------------------------------------------------------------------
# recursive route


def _conj_rec(a: np.ndarray) -> np.ndarray:
    n = a.shape[-1]
    if n == 1:
        return a.copy()
    h = n // 2
    return np.concatenate([_conj_rec(a[..., :h]), -a[..., h:]], axis=-1)


def _mul_rec(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # (al + be l)(ga + de l) = (al ga - conj(de) be) + (de al + be conj(ga)) l
    n = a.shape[-1]
    if n == 1:
        return a * b
    h = n // 2
    al, be = a[..., :h], a[..., h:]
    ga, de = b[..., :h], b[..., h:]
    lo = _mul_rec(al, ga) - _mul_rec(_conj_rec(de), be)
    hi = _mul_rec(de, al) + _mul_rec(be, _conj_rec(ga))
    return np.concatenate([lo, hi], axis=-1)


# ---------------------------------------------------------------------------
# table route


@lru_cache(maxsize=None)
def basis_table(r: int) -> tuple[np.ndarray, np.ndarray]:
    """Return (index, sign) with i_p i_q = sign[p, q] * i_{index[p, q]}.

    Built from the sign recursion obtained by feeding generators through the
    doubling formula, without ever multiplying coefficient vectors.
    """
    r = _check_level(r)
    n = 1 << r
    idx = np.zeros((n, n), dtype=np.int64)
    sgn = np.zeros((n, n), dtype=np.int64)
    if r == 0:
        sgn[0, 0] = 1
        return idx, sgn
    sub_idx, sub_sgn = basis_table(r - 1)
    h = n // 2

    def conj_sign(q):
        return 1 if q == 0 else -1

    for p in range(n):
        for q in range(n):
            if p < h and q < h:
                idx[p, q] = sub_idx[p, q]
                sgn[p, q] = sub_sgn[p, q]
            elif p < h:
                # i_p (i_q' l) = (i_q' i_p) l
                qq = q - h
                idx[p, q] = sub_idx[qq, p] + h
                sgn[p, q] = sub_sgn[qq, p]
            elif q < h:
                # (i_p' l) i_q = (i_p' conj(i_q)) l
                pp = p - h
                idx[p, q] = sub_idx[pp, q] + h
                sgn[p, q] = conj_sign(q) * sub_sgn[pp, q]
            else:
                # (i_p' l)(i_q' l) = -conj(i_q') i_p'
                pp, qq = p - h, q - h
                idx[p, q] = sub_idx[qq, pp]
                sgn[p, q] = -conj_sign(qq) * sub_sgn[qq, pp]
    idx.setflags(write=False)
    sgn.setflags(write=False)
    return idx, sgn


@lru_cache(maxsize=None)
def structure_tensor(r: int) -> np.ndarray:
    """Dense C[p, q, k] with i_p i_q = sum_k C[p, q, k] i_k."""
    idx, sgn = basis_table(r)
    n = 1 << r
    c = np.zeros((n, n, n))
    p, q = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    c[p, q, idx] = sgn
    c.setflags(write=False)
    return c


def mul_arrays(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Batched product over the last axis (broadcasting the leading axes)."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    r = level_of(max(a.shape[-1], b.shape[-1]))
    a, b = embed(a, r), embed(b, r)
    c = structure_tensor(r)
    return np.einsum("...p,...q,pqk->...k", a, b, c, optimize=True)


def conj_arrays(a: np.ndarray) -> np.ndarray:
    out = -np.asarray(a, dtype=float)
    out[..., 0] *= -1
    return out


def left_matrix(a: np.ndarray) -> np.ndarray:
    """Real matrix L with L @ x == coefficients of a * x."""
    a = np.asarray(a, dtype=float)
    c = structure_tensor(level_of(a.shape[-1]))
    return np.einsum("p,pqk->kq", a, c)


def right_matrix(b: np.ndarray) -> np.ndarray:
    """Real matrix R with R @ x == coefficients of x * b."""
    b = np.asarray(b, dtype=float)
    c = structure_tensor(level_of(b.shape[-1]))
    return np.einsum("q,pqk->kp", b, c)


def _close(x: np.ndarray, y: np.ndarray, tol: float) -> bool:
    diff = float(np.max(np.abs(x - y), initial=0.0))
    scale = max(float(np.max(np.abs(x), initial=0.0)), float(np.max(np.abs(y), initial=0.0)), 1.0)
    return diff <= tol * scale


# ---------------------------------------------------------------------------
# number type


class CDNumber:
    """Immutable element of A_r."""

    __slots__ = ("level", "coeffs")

    def __init__(self, coeffs, level: int | None = None):
        c = np.array(coeffs, dtype=float).reshape(-1)
        r = level_of(c.size) if level is None else _check_level(level)
        if level is None:
            _check_level(r)
        c = embed(c, r)
        c.setflags(write=False)
        object.__setattr__(self, "level", r)
        object.__setattr__(self, "coeffs", c)

    def __setattr__(self, name, value):
        raise AttributeError("CDNumber is immutable")

    @classmethod
    def basis(cls, j: int, level: int) -> "CDNumber":
        c = np.zeros(1 << _check_level(level))
        c[j] = 1.0
        return cls(c)

    @classmethod
    def real(cls, x: float, level: int) -> "CDNumber":
        c = np.zeros(1 << _check_level(level))
        c[0] = x
        return cls(c)

    @classmethod
    def random(cls, level: int, rng: np.random.Generator) -> "CDNumber":
        return cls(rng.standard_normal(1 << level))

    @property
    def dim(self) -> int:
        return 1 << self.level

    @property
    def re(self) -> float:
        return float(self.coeffs[0])

    def embed(self, level: int) -> "CDNumber":
        return CDNumber(embed(self.coeffs, level))

    def _pair(self, other):
        if not isinstance(other, CDNumber):
            other = CDNumber.real(float(other), self.level)
        r = max(self.level, other.level)
        return embed(self.coeffs, r), embed(other.coeffs, r)

    def __add__(self, other):
        a, b = self._pair(other)
        return CDNumber(a + b)

    __radd__ = __add__

    def __sub__(self, other):
        a, b = self._pair(other)
        return CDNumber(a - b)

    def __rsub__(self, other):
        a, b = self._pair(other)
        return CDNumber(b - a)

    def __neg__(self):
        return CDNumber(-self.coeffs)

    def __mul__(self, other):
        if isinstance(other, (int, float, np.floating)):
            return CDNumber(self.coeffs * float(other))
        return cd_mul(self, other)

    def __rmul__(self, other):
        if isinstance(other, (int, float, np.floating)):
            return CDNumber(self.coeffs * float(other))
        return cd_mul(other, self)

    def __truediv__(self, other):
        if isinstance(other, (int, float, np.floating)):
            return CDNumber(self.coeffs / float(other))
        return cd_mul(self, cd_inv(other))

    def __eq__(self, other):
        if not isinstance(other, CDNumber):
            return NotImplemented
        a, b = self._pair(other)
        return bool(np.array_equal(a, b))

    def __hash__(self):
        return hash((self.level, self.coeffs.tobytes()))

    def close(self, other, tol: float = DEFAULT_TOL) -> bool:
        a, b = self._pair(other)
        return _close(a, b, tol)

    def conj(self) -> "CDNumber":
        return cd_conj(self)

    def norm_sq(self) -> float:
        return cd_norm_sq(self)

    def norm(self) -> float:
        return float(np.sqrt(cd_norm_sq(self)))

    def __abs__(self):
        return self.norm()

    def __repr__(self):
        terms = []
        for j, w in enumerate(self.coeffs):
            if w == 0.0:
                continue
            name = "" if j == 0 else f"*i{j}"
            terms.append(f"{w:+g}{name}")
        body = " ".join(terms) if terms else "0"
        return f"CDNumber[r={self.level}]({body})"


def as_cd(x, level: int) -> CDNumber:
    if isinstance(x, CDNumber):
        return x.embed(max(level, x.level))
    return CDNumber.real(float(x), level)


def cd_mul(a: CDNumber, b: CDNumber) -> CDNumber:
    x, y = a._pair(b)
    return CDNumber(_mul_rec(x, y))


def cd_mul_table(a: CDNumber, b: CDNumber) -> CDNumber:
    x, y = a._pair(b)
    return CDNumber(mul_arrays(x, y))


def cd_conj(a: CDNumber) -> CDNumber:
    return CDNumber(_conj_rec(a.coeffs))


def cd_norm_sq(a: CDNumber) -> float:
    return float(np.dot(a.coeffs, a.coeffs))


def cd_inv(a: CDNumber) -> CDNumber:
    """a* / |a|^2.

    For r >= 4 the product a a^{-1} is still 1, but (ab)^{-1} and
    b^{-1} a^{-1} differ in general and zero divisors exist.
    """
    n2 = cd_norm_sq(a)
    if n2 == 0.0:
        raise DivisionByZero("inverse of zero")
    return CDNumber(_conj_rec(a.coeffs) / n2)


def associator(a: CDNumber, b: CDNumber, c: CDNumber) -> CDNumber:
    return cd_mul(cd_mul(a, b), c) - cd_mul(a, cd_mul(b, c))


def commutator(a: CDNumber, b: CDNumber) -> CDNumber:
    return cd_mul(a, b) - cd_mul(b, a)


def cd_pow(a: CDNumber, n: int) -> CDNumber:
    if n < 0:
        raise ValueError("negative power")
    out = CDNumber.real(1.0, a.level)
    for _ in range(n):
        out = cd_mul(out, a)
    return out


def find_zero_divisor(r: int, tol: float = DEFAULT_TOL):
    """Search (i_p +- i_q)(i_u +- i_v) for a vanishing product.

    Returns a pair of CDNumbers or None.  None is returned for r <= 3, where
    the algebras are division algebras.
    """
    r = _check_level(r)
    n = 1 << r
    if r <= 3:
        return None
    idx, sgn = basis_table(r)
    pairs = list(combinations(range(1, n), 2))
    for p, q in pairs:
        for s1 in (1, -1):
            for u, v in pairs:
                for s2 in (1, -1):
                    # product expanded through the table
                    prod = np.zeros(n)
                    for a_i, a_w in ((p, 1.0), (q, s1)):
                        for b_i, b_w in ((u, 1.0), (v, s2)):
                            prod[idx[a_i, b_i]] += a_w * b_w * sgn[a_i, b_i]
                    if np.max(np.abs(prod)) < tol:
                        a = np.zeros(n)
                        a[p], a[q] = 1.0, s1
                        b = np.zeros(n)
                        b[u], b[v] = 1.0, s2
                        return CDNumber(a), CDNumber(b)
    return None


def format_table(r: int) -> str:
    idx, sgn = basis_table(r)
    n = 1 << r
    width = len(f"-i{n - 1}") + 1
    lines = [" " * width + "".join(f"{'i' + str(q):>{width}}" for q in range(n))]
    for p in range(n):
        row = [f"{'i' + str(p):>{width}}"]
        for q in range(n):
            s = "-" if sgn[p, q] < 0 else ""
            row.append(f"{s + 'i' + str(idx[p, q]):>{width}}")
        lines.append("".join(row))
    return "\n".join(lines)
