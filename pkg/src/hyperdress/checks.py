"""Invariant suites for the algebra, the operator calculus and the ray
anti-derivative.  Used by the ``selftest`` command and by the test suite.

Each check returns a ``Check`` (name, passed, value, detail); a suite is a
list of checks.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .algebra import CDNumber, _conj_rec, _mul_rec, basis_table, find_zero_divisor, mul_arrays
from .diffops import (Axis, GridFunction, SigmaSpec, apply_normal, check_real_coefficients, dr_algebra_check,
                      operator_power, random_polynomial, sigma_operator)
from .line_integral import RayFoliation, check_inversion

ALGEBRA_TOL = 1e-12


@dataclass(frozen=True)
class Check:
    name: str
    passed: bool
    value: float = 0.0
    detail: str = ""

    def __post_init__(self):
        object.__setattr__(self, "passed", bool(self.passed))
        object.__setattr__(self, "value", float(self.value))


def _rel(diff: np.ndarray, *refs: np.ndarray) -> float:
    """max over samples of |diff| / max(1, |refs|)."""
    scale = np.ones(diff.shape[:-1])
    for r in refs:
        scale = np.maximum(scale, np.linalg.norm(r, axis=-1))
    return float(np.max(np.linalg.norm(diff, axis=-1) / scale, initial=0.0))


def _pow(a: np.ndarray, n: int) -> np.ndarray:
    out = np.zeros_like(a)
    out[..., 0] = 1.0
    for _ in range(n):
        out = _mul_rec(out, a)
    return out


# ---------------------------------------------------------------------------
# algebra


def algebra_suite(seed: int = 0, samples: int = 1000, levels=(1, 2, 3, 4), tol: float = ALGEBRA_TOL) -> list:
    rng = np.random.default_rng(seed)
    out = []
    for r in levels:
        n = 1 << r
        a = rng.standard_normal((samples, n))
        b = rng.standard_normal((samples, n))
        ab = _mul_rec(a, b)
        ca, cb = _conj_rec(a), _conj_rec(b)
        inv = float(np.max(np.abs(_conj_rec(ca) - a)))
        out.append(Check(f"r={r} involution", inv == 0.0, inv))
        anti = _rel(_conj_rec(ab) - _mul_rec(cb, ca), ab)
        out.append(Check(f"r={r} conj(ab) = conj(b) conj(a)", anti <= tol, anti))
        re_part = a + ca
        nice = float(np.max(np.abs(re_part[:, 1:]), initial=0.0))
        out.append(Check(f"r={r} a + conj(a) is real", nice <= tol, nice))
        aa, a_a = _mul_rec(a, ca), _mul_rec(ca, a)
        sym = _rel(aa - a_a, aa)
        imag = float(np.max(np.abs(aa[:, 1:]), initial=0.0) / max(1.0, float(np.max(aa[:, 0]))))
        pos = bool(np.all(aa[:, 0] > 0))
        out.append(Check(f"r={r} a conj(a) = conj(a) a > 0", sym <= tol and imag <= tol and pos, max(sym, imag)))
        nrm = float(np.max(np.abs(aa[:, 0] - np.sum(a * a, axis=1)) / np.maximum(1.0, aa[:, 0])))
        out.append(Check(f"r={r} |a|^2 = a conj(a)", nrm <= tol, nrm))
        # power associativity a^(n+m) = a^n a^m, n + m <= 8
        worst = 0.0
        for k in range(1, 8):
            for m in range(1, 9 - k):
                lhs = _pow(a[:50], k + m)
                rhs = _mul_rec(_pow(a[:50], k), _pow(a[:50], m))
                worst = max(worst, _rel(lhs - rhs, lhs))
        out.append(Check(f"r={r} power associativity", worst <= 1e-11, worst))
        nab = np.sum(ab * ab, axis=1)
        mult = float(np.max(np.abs(nab - np.sum(a * a, 1) * np.sum(b * b, 1)) / np.maximum(1.0, nab)))
        if r <= 3:
            out.append(Check(f"r={r} |ab|^2 = |a|^2 |b|^2", mult <= tol, mult))
        alt1 = _rel(_mul_rec(ab, b) - _mul_rec(a, _mul_rec(b, b)), ab)
        alt2 = _rel(_mul_rec(a, ab) - _mul_rec(_mul_rec(a, a), b), ab)
        if r <= 3:
            out.append(Check(f"r={r} alternativity", max(alt1, alt2) <= tol, max(alt1, alt2)))
        else:
            # at least one sampled pair must break it (a counterexample, not a tolerance miss)
            out.append(Check(f"r={r} alternativity fails", max(alt1, alt2) > 1e-6, max(alt1, alt2),
                             "counterexample found among random pairs"))
    out.extend(table_suite(max(levels)))
    out.append(zero_divisor_check(4))
    out.append(centrality_check(3))
    return out


def table_suite(max_level: int = 4) -> list:
    """Doubling recursion against the signed basis table on every basis pair (exact)."""
    out = []
    for r in range(0, max_level + 1):
        n = 1 << r
        eye = np.eye(n)
        rec = _mul_rec(eye[:, None, :], eye[None, :, :])
        idx, sgn = basis_table(r)
        tab = np.zeros((n, n, n))
        p, q = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        tab[p, q, idx] = sgn
        bad = int(np.count_nonzero(rec != tab))
        out.append(Check(f"r={r} doubling = table", bad == 0, float(bad)))
    return out


def zero_divisor_check(r: int = 4) -> Check:
    pair = find_zero_divisor(r)
    if pair is None:
        return Check(f"r={r} zero divisor", False, 0.0, "none found")
    a, b = pair
    prod = (a * b).norm()
    mult = a.norm() * b.norm()
    return Check(f"r={r} zero divisor", prod < ALGEBRA_TOL and mult > 0, prod, f"({a}) * ({b}) = 0")


def alternativity_counterexample(r: int = 4):
    """Search over x = i_p, y = i_q + i_s with (xy)y != x(yy); returns (x, y, defect)."""
    n = 1 << r
    for p in range(1, n):
        for q in range(1, n):
            for s in range(1, n):
                if len({p, q, s}) < 3:
                    continue
                x = np.zeros(n)
                x[p] = 1.0
                y = np.zeros(n)
                y[q] = 1.0
                y[s] = 1.0
                d = _mul_rec(_mul_rec(x, y), y) - _mul_rec(x, _mul_rec(y, y))
                if np.max(np.abs(d)) > 0.5:
                    return CDNumber(x), CDNumber(y), float(np.linalg.norm(d))
    return None


def centrality_check(r: int = 3) -> Check:
    """commutator(i_j, i_k) vanishes for every k exactly when j = 0."""
    n = 1 << r
    eye = np.eye(n)
    central = []
    for j in range(n):
        c = mul_arrays(eye[j][None, :], eye) - mul_arrays(eye, eye[j][None, :])
        central.append(bool(np.max(np.abs(c)) == 0.0))
    ok = central[0] and not any(central[1:])
    return Check(f"r={r} center is the reals", ok, float(sum(central)))


# ---------------------------------------------------------------------------
# operator calculus


def operator_suite(seed: int = 0) -> list:
    out = []
    specs = [SigmaSpec.single(2, 1), SigmaSpec(2, (0.0, 1.0, -0.5, 2.0), (0, 2, 1, 3)),
             SigmaSpec(3, (0.0, 1.0, 0.0, 0.5, 0.0, -1.0, 0.0, 0.3), (1, 0, 2, 3, 5, 4, 6, 7))]
    for k, sg in enumerate(specs):
        op = sigma_operator(sg)
        other = sigma_operator(specs[(k + 1) % 2]) if sg.level == 2 else sigma_operator(
            SigmaSpec(3, (0.0, 0.0, 1.0), None))
        d = dr_algebra_check(op, other, seed=seed, degree=5, max_power=4)
        out.append(Check(f"sigma#{k} power associativity (k+m<=4)", bool(d["power_assoc_ok"]),
                         float(d["power_assoc_error"])))
        out.append(Check(f"sigma#{k} center test consistent", bool(d["center_consistent"]), 0.0))
        out.append(Check(f"sigma#{k} composition rule", d["matching_composition"] == "with_sign",
                         float(d["composition_error_with_sign"])))
    # even powers of psi_0 = 0 operators keep real inputs real
    rng = np.random.default_rng(seed)
    for sg in (SigmaSpec(2, (0.0, 1.0, 0.7, -0.4), (1, 0, 2, 3)), specs[2]):
        for m in (2, 4):
            leak = real_coefficient_leak(sg, m, rng)
            out.append(Check(f"r={sg.level} real-coefficient leak m={m}", leak < 1e-10, leak))
    # same property through finite differences on a grid (m = 2)
    h = 0.05
    axes = tuple(Axis("x", c, -1.0, h, 41) for c in range(3))
    samples = []
    for _ in range(3):
        w = rng.standard_normal(3)
        samples.append(GridFunction.sample(
            axes, lambda g, w=w: np.exp(0.3 * (w[0] * g[("x", 0)] + w[1] * g[("x", 1)] + w[2] * g[("x", 2)])),
            level=2, constant=[("x", 3)]))
    d = check_real_coefficients(SigmaSpec(2, (0.0, 1.0, 0.7, -0.4), (1, 0, 2, 3)), 2, samples)
    out.append(Check("grid real-coefficient leak m=2", bool(d["passed"]), float(d["max_leak"])))
    return out


def real_coefficient_leak(sigma: SigmaSpec, m: int, rng: np.random.Generator, samples: int = 5,
                          degree: int = 5) -> float:
    """Largest non-real coefficient of sigma^m f over real polynomials f (exact arithmetic route)."""
    op = operator_power(sigma_operator(sigma), m)
    n = 1 << sigma.level
    leak = 0.0
    for _ in range(samples):
        f = random_polynomial(sigma.level, degree, rng)
        f = [f[0]] + [dict() for _ in range(n - 1)]
        g = apply_normal(op, f)
        for comp in g[1:]:
            leak = max([leak] + [abs(c) for c in comp.values()])
    return leak


# ---------------------------------------------------------------------------
# line integral


INVERSION_SPECS = (
    SigmaSpec.single(2, 1),
    SigmaSpec(2, (0.0, 1.0, 0.5, 0.0)),
    SigmaSpec(2, (0.7, 0.0, 0.0, 1.0), (3, 1, 2, 0)),
    SigmaSpec(3, (0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0), (0, 1, 2, 3, 4, 6, 5, 7)),
)


def inversion_orders(sigma: SigmaSpec, hs=(0.01, 0.005), length: float = 14.0) -> dict:
    """Empirical orders of sigma(int) - id and sigma(int to infinity) + id on an
    exponential test function along the first coordinate sigma acts on."""
    coord = sigma.terms()[0][1]
    errs = {"from": [], "to_infinity": []}
    for h in hs:
        n = int(round(length / h)) + 1
        ax = (Axis("x", coord, 0.0, h, n),)
        vals = np.zeros((n, 1, 1, 1 << sigma.level))
        x = ax[0].points
        vals[:, 0, 0, 0] = np.exp(-2.0 * x) * np.cos(x)
        vals[:, 0, 0, 1] = 0.5 * np.exp(-1.5 * x)
        vals[:, 0, 0, -1] = np.exp(-3.0 * x)
        others = [("x", k) for k in range(1 << sigma.level) if k != coord]
        g = GridFunction(vals, ax, frozenset(others))
        fol = RayFoliation.along(coord, sigma.level)
        e = check_inversion(sigma, g, fol)
        for key in errs:
            errs[key].append(e[key])
    return {key: [math.log2(v[i] / v[i + 1]) for i in range(len(v) - 1)] + [v[-1]] for key, v in errs.items()}


def line_integral_suite(min_order: float = 1.9) -> list:
    out = []
    for k, sg in enumerate(INVERSION_SPECS):
        res = inversion_orders(sg)
        for key, (order, err) in res.items():
            out.append(Check(f"sigma#{k} inversion {key}", order >= min_order, order, f"error {err:.2e}"))
    return out


def run_all(seed: int = 0) -> dict:
    return {"algebra": algebra_suite(seed), "operators": operator_suite(seed), "line_integral": line_integral_suite()}
