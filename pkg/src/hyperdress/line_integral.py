"""Non-commutative anti-derivatives along straight rays, and path utilities.

Along a ray with direction v the sigma operator reduces to left
multiplication by its symbol u = sum_j conj(i_j) psi_j v_{xi(j)} followed by
the directional derivative.  The anti-derivative is therefore cumulative
quadrature followed by left multiplication with u^{-1}.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_simpson, cumulative_trapezoid

from .algebra import CDNumber, cd_inv, embed, mul_arrays
from .diffops import GridFunction, SigmaSpec, apply_sigma


class IncompatibleDirection(ValueError):
    pass


class TailNotDecayed(ValueError):
    pass


class RangeError(ValueError):
    pass


@dataclass(frozen=True)
class QuadratureConfig:
    rule: str = "simpson"
    h: float = 0.01
    zmax: float = 20.0
    eps_tail: float = 1e-8

    def __post_init__(self):
        if self.rule not in ("simpson", "trapezoid"):
            raise ValueError(f"unknown quadrature rule {self.rule!r}")
        if self.h <= 0 or self.zmax <= 0 or self.eps_tail <= 0:
            raise ValueError("h, zmax and eps_tail must be positive")


@dataclass(frozen=True)
class RayFoliation:
    """Rays t -> base + t * direction; transverse directions complete a basis."""

    direction: tuple
    base: tuple = None
    transverse: tuple = field(default=())
    t_range: tuple = (0.0, np.inf)

    def __post_init__(self):
        v = np.asarray(self.direction, dtype=float)
        if not np.any(v):
            raise ValueError("ray direction must be nonzero")
        object.__setattr__(self, "direction", tuple(v))
        if self.transverse:
            m = np.vstack([v] + [embed(np.asarray(w, float), int(np.log2(v.size))) for w in self.transverse])
            if np.linalg.matrix_rank(m) != v.size:
                raise ValueError("directions do not span the algebra")

    @classmethod
    def along(cls, coord: int, level: int, sign: float = 1.0) -> "RayFoliation":
        n = 1 << level
        v = np.zeros(n)
        v[coord] = sign
        others = []
        for k in range(n):
            if k != coord:
                w = np.zeros(n)
                w[k] = 1.0
                others.append(tuple(w))
        return cls(tuple(v), tuple(np.zeros(n)), tuple(others))


def simpson_weights(n: int, h: float) -> np.ndarray:
    """Composite weights for n samples; the last three intervals use the
    3/8 rule when the interval count is odd."""
    if n < 2:
        return np.zeros(n)
    if n == 2:
        return np.array([h / 2, h / 2])
    w = np.zeros(n)
    m = n - 1
    end = m if m % 2 == 0 else m - 3
    if end > 0:
        w[0:end + 1:2] += 2 * h / 3
        w[1:end:2] += 4 * h / 3
        w[0] -= h / 3
        w[end] -= h / 3
    if m % 2:
        w[end:end + 4] += 3 * h / 8 * np.array([1, 3, 3, 1])
    return w


def trapezoid_weights(n: int, h: float) -> np.ndarray:
    w = np.full(n, h)
    w[0] = w[-1] = h / 2
    return w


def quadrature_weights(n: int, h: float, rule: str = "simpson") -> np.ndarray:
    return simpson_weights(n, h) if rule == "simpson" else trapezoid_weights(n, h)


def _cumulative(values: np.ndarray, axis: int, h: float, rule: str) -> np.ndarray:
    if values.shape[axis] < 3 or rule == "trapezoid":
        return cumulative_trapezoid(values, dx=h, axis=axis, initial=0.0)
    return cumulative_simpson(values, dx=h, axis=axis, initial=0.0)


def _ray_axis(sigma: SigmaSpec, g: GridFunction, foliation: RayFoliation):
    v = np.asarray(foliation.direction, dtype=float)
    nz = np.flatnonzero(v)
    if nz.size != 1:
        raise IncompatibleDirection("only rays along one coordinate axis are supported")
    coord = int(nz[0])
    ax = g.axis_index(sigma.var, coord)
    if ax is None:
        raise IncompatibleDirection(f"ray coordinate {sigma.var}_{coord} is not an active axis")
    for j, k, p in sigma.terms():
        if k != coord and g.axis_index(sigma.var, k) is not None:
            raise IncompatibleDirection(
                f"sigma also differentiates active axis {sigma.var}_{k}; the ray integral cannot invert it")
    unit = np.zeros_like(v)
    unit[coord] = 1.0
    u = sigma.symbol(unit)
    if not np.any(u):
        raise IncompatibleDirection("sigma does not act along the ray")
    return ax, coord, u


def ray_symbol_inverse(sigma: SigmaSpec, coord: int) -> np.ndarray:
    unit = np.zeros(1 << sigma.level)
    unit[coord] = 1.0
    u = sigma.symbol(unit)
    if not np.any(u):
        raise IncompatibleDirection("sigma does not act along the ray")
    return cd_inv(CDNumber(u)).coeffs


def _tail_check(values: np.ndarray, ax: int, eps: float):
    end = np.take(values, -1, axis=ax)
    tail = float(np.max(np.abs(end), initial=0.0))
    if tail > eps:
        raise TailNotDecayed(f"integrand is {tail:.3g} at the truncation point (limit {eps:.1g})")
    return tail


def antideriv_from(sigma: SigmaSpec, g: GridFunction, foliation: RayFoliation, x0: float | None = None,
                   quad: QuadratureConfig | None = None, check_tail: bool = False) -> GridFunction:
    """w with sigma w = g along the rays and w = 0 at the start coordinate x0."""
    quad = quad or QuadratureConfig()
    r = max(sigma.level, g.level)
    g = g.embed(r) if g.level != r else g
    ax, coord, u = _ray_axis(sigma, g, foliation)
    axis = g.axes[ax]
    if check_tail:
        _tail_check(g.values, ax, quad.eps_tail)
    cum = _cumulative(g.values, ax, axis.h, quad.rule)
    if x0 is not None:
        i0 = (x0 - axis.origin) / axis.h
        k = int(round(i0))
        if abs(i0 - k) > 1e-9 or not 0 <= k < axis.n:
            raise RangeError(f"start point {x0} is not a sample of axis {axis.slot}_{axis.coord}")
        cum = cum - np.take(cum, [k], axis=ax)
    uinv = cd_inv(CDNumber(embed(u, r))).coeffs
    return g.with_values(mul_arrays(uinv, cum))


def antideriv_to_infinity(sigma: SigmaSpec, g: GridFunction, foliation: RayFoliation,
                          quad: QuadratureConfig | None = None) -> GridFunction:
    """w(x) = u^{-1} int_x^{end} g; sigma w = -g.  The last sample stands in for infinity."""
    quad = quad or QuadratureConfig()
    r = max(sigma.level, g.level)
    g = g.embed(r) if g.level != r else g
    ax, coord, u = _ray_axis(sigma, g, foliation)
    _tail_check(g.values, ax, quad.eps_tail)
    rev = np.flip(g.values, axis=ax)
    cum = np.flip(_cumulative(rev, ax, g.axes[ax].h, quad.rule), axis=ax)
    uinv = cd_inv(CDNumber(embed(u, r))).coeffs
    return g.with_values(mul_arrays(uinv, cum))


def path_variation(gamma, t, a: float, b: float) -> float:
    """Total variation of a sampled path on [a, b] (linear interpolation at the ends)."""
    gamma = np.asarray(gamma, dtype=float)
    t = np.asarray(t, dtype=float)
    if gamma.ndim == 1:
        gamma = gamma[:, None]
    if not (a < b) or a < t[0] - 1e-12 or b > t[-1] + 1e-12:
        raise RangeError(f"[{a}, {b}] is not inside the sampled range [{t[0]}, {t[-1]}]")
    inner = (t > a) & (t < b)
    ga = np.array([np.interp(a, t, gamma[:, k]) for k in range(gamma.shape[1])])
    gb = np.array([np.interp(b, t, gamma[:, k]) for k in range(gamma.shape[1])])
    pts = np.vstack([ga, gamma[inner], gb])
    return float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))


def path_distance(gamma, omega) -> float:
    """|gamma(start) - omega(start)| plus the least variation of gamma - omega
    over monotone alignments of the two sample sequences."""
    g = np.asarray(gamma, dtype=float)
    w = np.asarray(omega, dtype=float)
    if g.ndim == 1:
        g = g[:, None]
    if w.ndim == 1:
        w = w[:, None]
    n, m = len(g), len(w)
    inf = np.inf
    prev = np.full(m, inf)
    dcol = g[0][None, :] - w  # differences along the first row
    steps = np.linalg.norm(np.diff(dcol, axis=0), axis=1)
    prev[0] = 0.0
    prev[1:] = np.cumsum(steps)
    for i in range(1, n):
        cur_d = g[i][None, :] - w
        prev_d = g[i - 1][None, :] - w
        vert = prev + np.linalg.norm(cur_d - prev_d, axis=1)
        diag = np.full(m, inf)
        diag[1:] = prev[:-1] + np.linalg.norm(cur_d[1:] - prev_d[:-1], axis=1)
        cand = np.minimum(vert, diag)
        hstep = np.zeros(m)
        hstep[1:] = np.linalg.norm(np.diff(cur_d, axis=0), axis=1)
        hc = np.cumsum(hstep)
        cur = hc + np.minimum.accumulate(cand - hc)
        prev = cur
    return float(np.linalg.norm(g[0] - w[0]) + prev[-1])


def operator_norm_decay(sigma: SigmaSpec, foliation: RayFoliation, tests, quad: QuadratureConfig | None = None) -> dict:
    """Sup-norm ratios of the anti-derivative and the Lipschitz size of outputs."""
    rows = []
    for g in tests:
        w = antideriv_from(sigma, g, foliation, quad=quad)
        gn = float(np.max(np.abs(g.values), initial=0.0))
        wn = float(np.max(np.abs(w.values), initial=0.0))
        ax, _, _ = _ray_axis(sigma, w, foliation)
        lip = float(np.max(np.abs(np.diff(w.values, axis=ax)), initial=0.0)) / w.axes[ax].h
        rows.append({"input_sup": gn, "output_sup": wn, "ratio": wn / gn if gn > 0 else 0.0, "lipschitz": lip})
    ratios = [row["ratio"] for row in rows]
    return {"rows": rows, "max_ratio": max(ratios) if ratios else 0.0}


def check_inversion(sigma: SigmaSpec, g: GridFunction, foliation: RayFoliation, quad=None, trim: int = 2) -> dict:
    """Max errors of sigma(antideriv_from g) - g and sigma(antideriv_to_infinity g) + g."""
    a = apply_sigma(sigma, antideriv_from(sigma, g, foliation, quad=quad)).values - embed(g.values, max(sigma.level, g.level))
    b = apply_sigma(sigma, antideriv_to_infinity(sigma, g, foliation, quad=quad)).values + embed(g.values, max(sigma.level, g.level))
    sl = tuple(slice(trim, -trim) if k < len(g.axes) else slice(None) for k in range(a.ndim))
    return {"from": float(np.max(np.abs(a[sl]))), "to_infinity": float(np.max(np.abs(b[sl])))}
