"""First-order sigma operators on sampled functions, and operator-algebra checks.

A sigma operator acts as

    sigma f = sum_j conj(i_j) * (d f / d x_{xi(j)}) * psi_j

with left multiplication by the conjugated generator.  The hat variant puts
the (unconjugated) generator on the right.  Grid functions carry their
active real axes; every derivative is a second order finite difference
(central inside, one-sided at the two ends).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from itertools import product as iproduct

import numpy as np

from .algebra import basis_table, embed, level_of
from .matrix import CDMatrix, matmul_arrays


class UnmappedAxis(KeyError):
    pass


class BadGrouping(ValueError):
    pass


class GridTooSmall(ValueError):
    pass


class PreconditionViolated(ValueError):
    pass


# ---------------------------------------------------------------------------
# types


@dataclass(frozen=True)
class SigmaSpec:
    level: int
    psi: tuple
    xi: tuple = None
    var: str = "x"

    def __post_init__(self):
        n = 1 << self.level
        psi = tuple(float(p) for p in self.psi)
        if len(psi) < n:
            psi = psi + (0.0,) * (n - len(psi))
        xi = tuple(range(n)) if self.xi is None else tuple(int(k) for k in self.xi)
        if len(psi) != n:
            raise ValueError(f"psi needs {n} entries")
        if sorted(xi) != list(range(n)):
            raise ValueError(f"xi must be a permutation of 0..{n - 1}")
        if sum(p * p for p in psi) <= 0:
            raise ValueError("psi must not vanish identically")
        object.__setattr__(self, "psi", psi)
        object.__setattr__(self, "xi", xi)

    @classmethod
    def single(cls, level: int, j: int, coord: int | None = None, var: str = "x", weight: float = 1.0):
        """sigma = weight * conj(i_j) d/dx_coord (coord defaults to j)."""
        n = 1 << level
        psi = [0.0] * n
        psi[j] = weight
        xi = list(range(n))
        coord = j if coord is None else coord
        if coord != j:
            xi[j], xi[coord] = coord, j
        return cls(level, tuple(psi), tuple(xi), var)

    def on(self, var: str) -> "SigmaSpec":
        return replace(self, var=var)

    def terms(self):
        """Nonzero (generator j, coordinate xi(j), psi_j) triples."""
        return [(j, self.xi[j], p) for j, p in enumerate(self.psi) if p != 0.0]

    def symbol(self, direction) -> np.ndarray:
        """Coefficients of u = sum_j conj(i_j) psi_j v_{xi(j)} for a real direction v."""
        v = np.asarray(direction, dtype=float)
        v = embed(v, self.level) if v.size <= (1 << self.level) else v
        u = np.zeros(1 << self.level)
        for j, k, p in self.terms():
            u[j] += (1.0 if j == 0 else -1.0) * p * v[k]
        return u


@dataclass(frozen=True)
class Axis:
    slot: str
    coord: int
    origin: float
    h: float
    n: int

    def __post_init__(self):
        if self.h <= 0:
            raise ValueError("spacing must be positive")
        if self.n < 1:
            raise ValueError("axis needs at least one sample")

    @property
    def points(self) -> np.ndarray:
        return self.origin + self.h * np.arange(self.n)

    @property
    def key(self):
        return (self.slot, self.coord)


@dataclass(frozen=True, eq=False)
class GridFunction:
    """Samples of a Mat_s(A_r)-valued function on a lattice of active axes.

    ``values`` has shape (*axis lengths, s, s, 2^r).  ``constant`` lists
    (slot, coord) pairs along which the caller declares the function constant.
    """

    values: np.ndarray
    axes: tuple
    constant: frozenset = field(default_factory=frozenset)
    zmax: float | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        shape = tuple(a.n for a in self.axes)
        if v.ndim != len(shape) + 3 or v.shape[: len(shape)] != shape:
            raise ValueError(f"values shape {v.shape} does not match axes {shape}")
        if v.shape[-3] != v.shape[-2]:
            raise ValueError("matrix part must be square")
        level_of(v.shape[-1])
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "axes", tuple(self.axes))
        object.__setattr__(self, "constant", frozenset(self.constant))

    @property
    def level(self) -> int:
        return level_of(self.values.shape[-1])

    @property
    def s(self) -> int:
        return self.values.shape[-2]

    @property
    def shape(self) -> tuple:
        return tuple(a.n for a in self.axes)

    def axis_index(self, slot: str, coord: int):
        for i, a in enumerate(self.axes):
            if a.slot == slot and a.coord == coord:
                return i
        return None

    def with_values(self, values) -> "GridFunction":
        return replace(self, values=values)

    def embed(self, level: int) -> "GridFunction":
        return self.with_values(embed(self.values, level))

    def mesh(self):
        """Dict (slot, coord) -> broadcastable coordinate array."""
        out = {}
        nd = len(self.axes)
        for i, a in enumerate(self.axes):
            shape = [1] * nd
            shape[i] = a.n
            out[a.key] = a.points.reshape(shape)
        return out

    @classmethod
    def sample(cls, axes, func, s: int = 1, level: int = 0, constant=(), zmax=None):
        """Build from func(mesh) returning an array of shape (..., s, s, 2^r)
        or (...) for real scalar data."""
        g = cls(np.zeros(tuple(a.n for a in axes) + (s, s, 1 << level)), axes, frozenset(constant), zmax)
        raw = np.asarray(func(g.mesh()), dtype=float)
        shape = g.shape
        if raw.ndim == len(shape) and np.broadcast_shapes(raw.shape, shape) == shape:
            vals = np.zeros(shape + (s, s, 1 << level))
            idx = np.arange(s)
            vals[..., idx, idx, 0] = np.broadcast_to(raw, shape)[..., None]
        else:
            vals = np.broadcast_to(raw, shape + (s, s, 1 << level)).copy()
        return g.with_values(vals)

    def at(self, *index) -> CDMatrix:
        return CDMatrix(self.values[index])

    def real_part(self) -> np.ndarray:
        return self.values[..., 0]


# ---------------------------------------------------------------------------
# generator multiplication on coefficient arrays (exact permutations)


def left_generator(j: int, x: np.ndarray, conj: bool = False) -> np.ndarray:
    """Coefficients of i_j * x (or conj(i_j) * x)."""
    r = level_of(x.shape[-1])
    idx, sgn = basis_table(r)
    out = np.zeros_like(x)
    out[..., idx[j, :]] = x * sgn[j, :]
    if conj and j != 0:
        out = -out
    return out


def right_generator(x: np.ndarray, j: int, conj: bool = False) -> np.ndarray:
    """Coefficients of x * i_j (or x * conj(i_j))."""
    r = level_of(x.shape[-1])
    idx, sgn = basis_table(r)
    out = np.zeros_like(x)
    out[..., idx[:, j]] = x * sgn[:, j]
    if conj and j != 0:
        out = -out
    return out


_D4_EDGE = np.array([[-25.0, 48.0, -36.0, 16.0, -3.0], [-3.0, -10.0, 18.0, -6.0, 1.0]]) / 12.0


def derivative(values: np.ndarray, axis: int, h: float, order: int = 2) -> np.ndarray:
    """First derivative along ``axis``: second order (numpy gradient) or a
    fourth order five-point stencil with one-sided ends."""
    n = values.shape[axis]
    if order == 2:
        if n < 3:
            raise GridTooSmall(f"axis {axis} has {n} samples, need 3")
        return np.gradient(values, h, axis=axis, edge_order=2)
    if order != 4:
        raise ValueError("stencil order must be 2 or 4")
    if n < 5:
        raise GridTooSmall(f"axis {axis} has {n} samples, need 5")
    v = np.moveaxis(values, axis, 0)
    out = np.empty_like(v)
    out[2:-2] = (v[:-4] - 8 * v[1:-3] + 8 * v[3:-1] - v[4:]) / 12.0
    for i, row in enumerate(_D4_EDGE):
        out[i] = np.tensordot(row, v[:5], axes=(0, 0))
        out[n - 1 - i] = -np.tensordot(row, v[::-1][:5], axes=(0, 0))
    return np.moveaxis(out / h, 0, axis)


def _partials(sigma: SigmaSpec, f: GridFunction):
    """Yield (j, psi_j, derivative values) for every mapped term."""
    for j, k, p in sigma.terms():
        ax = f.axis_index(sigma.var, k)
        if ax is None:
            if (sigma.var, k) in f.constant:
                continue
            raise UnmappedAxis(f"coordinate {sigma.var}_{k} is neither active nor declared constant")
        yield j, p, ax


def _lift(sigma: SigmaSpec, f: GridFunction) -> GridFunction:
    r = max(sigma.level, f.level)
    return f if f.level == r else f.embed(r)


def apply_sigma(sigma: SigmaSpec, f: GridFunction, order: int = 2) -> GridFunction:
    f = _lift(sigma, f)
    out = np.zeros_like(f.values)
    for j, p, ax in _partials(sigma, f):
        d = derivative(f.values, ax, f.axes[ax].h, order)
        out += p * left_generator(j, d, conj=True)
    return f.with_values(out)


def apply_sigma_hat(sigma: SigmaSpec, f: GridFunction) -> GridFunction:
    f = _lift(sigma, f)
    out = np.zeros_like(f.values)
    for j, p, ax in _partials(sigma, f):
        d = derivative(f.values, ax, f.axes[ax].h)
        out += p * right_generator(d, j)
    return f.with_values(out)


def sigma_power(sigma: SigmaSpec, m: int, f: GridFunction) -> GridFunction:
    if m < 1:
        raise ValueError("power must be positive")
    for j, k, p in sigma.terms():
        ax = f.axis_index(sigma.var, k)
        if ax is not None and f.axes[ax].n < 2 * m + 1:
            raise GridTooSmall(f"{m}-fold stencil needs {2 * m + 1} samples on {sigma.var}_{k}")
    out = f
    for _ in range(m):
        out = apply_sigma(sigma, out)
    return out


def conj_values(f: GridFunction) -> GridFunction:
    """Entrywise conjugation of the A_r part (matrix is not transposed)."""
    v = -f.values.copy()
    v[..., 0] *= -1
    return f.with_values(v)


# ---------------------------------------------------------------------------
# ordered products and partial operators


def _validate_grouping(grouping, k: int):
    seen = []

    def walk(node):
        if isinstance(node, (int, np.integer)):
            seen.append(int(node))
            return
        if not isinstance(node, (tuple, list)) or len(node) != 2:
            raise BadGrouping(f"grouping node {node!r} is not a leaf or a pair")
        walk(node[0])
        walk(node[1])

    walk(grouping)
    if seen != list(range(k)):
        raise BadGrouping(f"grouping {grouping!r} must list factors 0..{k - 1} once, in order")


def left_grouping(k: int):
    g = 0
    for i in range(1, k):
        g = (g, i)
    return g


def grouped_product(arrays, grouping) -> np.ndarray:
    _validate_grouping(grouping, len(arrays))

    def ev(node):
        if isinstance(node, (int, np.integer)):
            return arrays[int(node)]
        return matmul_arrays(ev(node[0]), ev(node[1]))

    return ev(grouping)


def apply_partial_sigma(sigma: SigmaSpec, slot: int, factors, grouping=None) -> GridFunction:
    """Differentiate only factor ``slot`` (0-based) of an ordered product.

    Returns sum_j conj(i_j) {f_0 ... d f_slot ... f_{k-1}}_grouping psi_j.
    """
    k = len(factors)
    if not 0 <= slot < k:
        raise BadGrouping(f"slot {slot} out of range for {k} factors")
    grouping = left_grouping(k) if grouping is None else grouping
    _validate_grouping(grouping, k)
    r = max([sigma.level] + [f.level for f in factors])
    factors = [f.embed(r) if f.level != r else f for f in factors]
    base = factors[slot]
    out = np.zeros(np.broadcast_shapes(*[f.values.shape for f in factors]))
    for j, p, ax in _partials(sigma, base):
        d = derivative(base.values, ax, base.axes[ax].h)
        arrays = [f.values for f in factors]
        arrays[slot] = d
        out = out + p * left_generator(j, grouped_product(arrays, grouping), conj=True)
    return base.with_values(out)


def product(factors, grouping=None) -> GridFunction:
    grouping = left_grouping(len(factors)) if grouping is None else grouping
    r = max(f.level for f in factors)
    arrays = [embed(f.values, r) for f in factors]
    return factors[0].with_values(grouped_product(arrays, grouping))


# ---------------------------------------------------------------------------
# real-coefficient check for even powers


def check_real_coefficients(sigma: SigmaSpec, m: int, samples, tol: float = 1e-10) -> dict:
    if sigma.psi[0] != 0.0:
        raise PreconditionViolated("the real-coefficient property needs psi_0 = 0")
    if m < 2 or m % 2:
        raise ValueError("m must be a positive even integer")
    leak = 0.0
    for f in samples:
        if np.max(np.abs(f.values[..., 1:]), initial=0.0) > 0:
            raise ValueError("samples must be real-valued")
        out = sigma_power(sigma, m, f)
        leak = max(leak, float(np.max(np.abs(out.values[..., 1:]), initial=0.0)))
    return {"m": m, "max_leak": leak, "passed": leak < tol}


# ---------------------------------------------------------------------------
# operator algebra with real constant-coefficient blocks
#
# An operator is stored in the normal form  A f = sum_{j,s} (A_{j,s} f_s) conj(i_j)
# where each block A_{j,s} is a real constant-coefficient differential operator
# given as a dict {multi-index: coefficient}.  Inputs are polynomials with
# A_r coefficients, stored per component as dicts {exponent tuple: coefficient}.


def _conj_sign(j: int) -> int:
    return 1 if j == 0 else -1


def _sign_of(j: int) -> int:
    return 0 if j == 0 else 1


@dataclass
class NormalOperator:
    level: int
    blocks: dict  # (j, s) -> {alpha: coef}

    @property
    def n(self) -> int:
        return 1 << self.level

    def clean(self, tol: float = 0.0) -> "NormalOperator":
        out = {}
        for key, blk in self.blocks.items():
            b = {a: c for a, c in blk.items() if abs(c) > tol}
            if b:
                out[key] = b
        return NormalOperator(self.level, out)


def real_operator(level: int, alpha, coef: float = 1.0) -> NormalOperator:
    """coef * d^alpha applied to every component alike."""
    n = 1 << level
    alpha = tuple(alpha) + (0,) * (n - len(alpha))
    return NormalOperator(level, {(s, s): {alpha: coef * _conj_sign(s)} for s in range(n)})


def left_mult_operator(level: int, j: int) -> NormalOperator:
    """f -> i_j f as a normal-form operator of order zero."""
    n = 1 << level
    idx, sgn = basis_table(level)
    zero = (0,) * n
    blocks = {}
    for s in range(n):
        m = int(idx[j, s])
        blocks[(m, s)] = {zero: float(sgn[j, s] * _conj_sign(m))}
    return NormalOperator(level, blocks)


def sigma_operator(sigma: SigmaSpec) -> NormalOperator:
    n = 1 << sigma.level
    idx, sgn = basis_table(sigma.level)
    blocks = {}
    for j, k, p in sigma.terms():
        alpha = tuple(1 if c == k else 0 for c in range(n))
        for s in range(n):
            m = int(idx[j, s])
            c = p * _conj_sign(j) * sgn[j, s] * _conj_sign(m)
            blk = blocks.setdefault((m, s), {})
            blk[alpha] = blk.get(alpha, 0.0) + c
    return NormalOperator(sigma.level, blocks).clean()


def poly_diff(poly: dict, alpha) -> dict:
    out = {}
    for e, c in poly.items():
        if any(a > b for a, b in zip(alpha, e)):
            continue
        coef = c
        ne = list(e)
        for v, a in enumerate(alpha):
            for t in range(a):
                coef *= ne[v] - t
            ne[v] -= a
        if coef != 0:
            key = tuple(ne)
            out[key] = out.get(key, 0.0) + coef
    return out


def _poly_add(acc: dict, poly: dict, scale: float):
    for e, c in poly.items():
        acc[e] = acc.get(e, 0.0) + scale * c


def apply_normal(op: NormalOperator, f) -> list:
    """Apply to an A_r polynomial given as a list of 2^r component dicts."""
    n = op.n
    out = [dict() for _ in range(n)]
    for (j, s), blk in op.blocks.items():
        for alpha, c in blk.items():
            _poly_add(out[j], poly_diff(f[s], alpha), c * _conj_sign(j))
    return [{e: c for e, c in comp.items() if c != 0.0} for comp in out]


def compose_formula(b: NormalOperator, a: NormalOperator, with_sign: bool = True) -> NormalOperator:
    """Normal form of B o A: C_{k,s} = sum_j (-1)^{sign j} B_{k,j} A_{j,s}."""
    blocks = {}
    for (k, j), bblk in b.blocks.items():
        for (j2, s), ablk in a.blocks.items():
            if j2 != j:
                continue
            sign = (-1) ** _sign_of(j) if with_sign else 1
            blk = blocks.setdefault((k, s), {})
            for al, cb in bblk.items():
                for be, ca in ablk.items():
                    g = tuple(x + y for x, y in zip(al, be))
                    blk[g] = blk.get(g, 0.0) + sign * cb * ca
    return NormalOperator(a.level, blocks).clean()


def operator_power(a: NormalOperator, k: int) -> NormalOperator:
    n = a.n
    zero = (0,) * n
    out = NormalOperator(a.level, {(s, s): {zero: float(_conj_sign(s))} for s in range(n)})
    for _ in range(k):
        out = compose_formula(a, out)
    return out


def random_polynomial(level: int, degree: int, rng: np.random.Generator, terms: int = 6) -> list:
    n = 1 << level
    comps = []
    for _ in range(n):
        poly = {}
        for _ in range(terms):
            d = int(rng.integers(0, degree + 1))
            e = [0] * n
            for _ in range(d):
                e[int(rng.integers(0, n))] += 1
            poly[tuple(e)] = poly.get(tuple(e), 0.0) + float(rng.integers(-5, 6))
        comps.append({e: c for e, c in poly.items() if c != 0.0})
    return comps


def poly_distance(f, g) -> float:
    worst = 0.0
    for a, b in zip(f, g):
        for e in set(a) | set(b):
            worst = max(worst, abs(a.get(e, 0.0) - b.get(e, 0.0)))
    return worst


def is_real_coefficient(op: NormalOperator, tol: float = 1e-12) -> bool:
    """True when the operator acts as one real differential operator on every
    component (the structural meaning of "real coefficients")."""
    n = op.n
    base = None
    for (j, s), blk in op.clean(tol).blocks.items():
        if j != s:
            return False
    for s in range(n):
        blk = op.blocks.get((s, s), {})
        comp = {a: c * _conj_sign(s) for a, c in blk.items() if abs(c) > tol}
        if base is None:
            base = comp
        elif set(comp) != set(base) or any(abs(comp[a] - base[a]) > tol for a in comp):
            return False
    return True


def dr_algebra_check(a: NormalOperator, b: NormalOperator, seed: int = 0, samples: int = 5,
                     degree: int = 5, max_power: int = 4, tol: float = 1e-9) -> dict:
    """Check the composition rule, power associativity and the center test."""
    rng = np.random.default_rng(seed)
    level = a.level
    polys = [random_polynomial(level, degree, rng) for _ in range(samples)]

    def direct(op2, op1, f):
        return apply_normal(op2, apply_normal(op1, f))

    err_with = max(poly_distance(apply_normal(compose_formula(b, a, True), f), direct(b, a, f)) for f in polys)
    err_without = max(poly_distance(apply_normal(compose_formula(b, a, False), f), direct(b, a, f)) for f in polys)
    matching = "with_sign" if err_with <= tol else ("without_sign" if err_without <= tol else "none")

    power_err = 0.0
    for k in range(1, max_power):
        for m in range(1, max_power - k + 1):
            pk, pm, pkm = operator_power(a, k), operator_power(a, m), operator_power(a, k + m)
            for f in polys:
                power_err = max(power_err, poly_distance(apply_normal(pk, apply_normal(pm, f)), apply_normal(pkm, f)))
                power_err = max(power_err, poly_distance(apply_normal(compose_formula(pk, pm), f), apply_normal(pkm, f)))

    c = compose_formula(b, a)
    assoc_diff = max(poly_distance(apply_normal(compose_formula(compose_formula(a, b), c), f),
                                   apply_normal(compose_formula(a, compose_formula(b, c)), f)) for f in polys)

    n = 1 << level
    generators = [left_mult_operator(level, j) for j in range(n)]
    generators += [real_operator(level, tuple(1 if v == k else 0 for v in range(n))) for k in range(n)]
    comm = 0.0
    for g in generators:
        for f in polys:
            comm = max(comm, poly_distance(direct(a, g, f), direct(g, a, f)))
    central = comm <= tol
    literal = all(j == 0 for (j, s), blk in a.clean(tol).blocks.items())
    return {
        "composition_error_with_sign": err_with,
        "composition_error_without_sign": err_without,
        "matching_composition": matching,
        "power_assoc_error": power_err,
        "power_assoc_ok": power_err <= tol,
        "assoc_difference": assoc_diff,
        "central": central,
        "real_coefficient": is_real_coefficient(a),
        "literal_center_criterion": literal,
        "center_consistent": central == is_real_coefficient(a),
    }
