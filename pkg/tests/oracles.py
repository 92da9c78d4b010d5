"""Independent reference solutions used by the tests.

Everything here works in plain complex arithmetic in one real variable and
shares no code with the package.  The dressed kdv kernel lives in the span of
1 and i_1 when the x operator is a single i_1 term, so i_1 is identified with
the complex unit.

Classical Marchenko equation:  K(x,y) + F(x+y) + int_x^oo K(x,z) F(z+y) dz = 0
with F(s) = A exp(-kappa s).  Then

    K(x,x) = -A e / (1 + A e / (2 kappa)),  e = exp(-2 kappa x)
    u(x)   = -2 d/dx K(x,x) = -4 kappa A e / (1 + A e / (2 kappa))^2

and u solves u_t - 6 u u_x + u_xxx = 0 when A grows like exp(8 kappa^3 t).
For real A > 0 this is -2 kappa^2 sech^2(kappa x - delta).
"""
import numpy as np


def soliton_kernel_diag(x, A, kappa):
    e = np.exp(-2.0 * kappa * np.asarray(x, dtype=float))
    return -A * e / (1.0 + A * e / (2.0 * kappa))


def soliton_u(x, A, kappa):
    e = np.exp(-2.0 * kappa * np.asarray(x, dtype=float))
    return -4.0 * kappa * A * e / (1.0 + A * e / (2.0 * kappa)) ** 2


def sech2_profile(x, t, kappa, A0):
    """Real 1-soliton from the sech^2 formula, A(t) = A0 exp(8 kappa^3 t)."""
    delta = 0.5 * np.log(A0 / (2.0 * kappa)) + 4.0 * kappa ** 3 * t
    return -2.0 * kappa ** 2 / np.cosh(kappa * np.asarray(x) - delta) ** 2


def marchenko_brute_force(x0, A, kappa, length=20.0, n=4001):
    """K(x0, x0) from a trapezoid Nystrom solve of the classical equation on
    [x0, x0 + length], in complex arithmetic."""
    z = np.linspace(x0, x0 + length, n)
    h = z[1] - z[0]
    w = np.full(n, h, dtype=complex)
    w[0] = w[-1] = h / 2
    F = A * np.exp(-kappa * (z[:, None] + z[None, :]))  # F(z + y), rows z, columns y
    # K(y) + F(x0 + y) + sum_z w_z K(z) F(z + y) = 0
    M = np.eye(n, dtype=complex) + (F * w[:, None]).T
    K = np.linalg.solve(M, -A * np.exp(-kappa * (x0 + z)))
    return K[0]


def dressed_to_classical(omega: complex, p: float, beta: float, rate: float, t: float) -> complex:
    """Classical amplitude A for the dressed kdv problem.

    The dressed equation K = F + p omega^-1 int F K with F = beta exp(-kappa(x+y) + rate t)
    becomes the classical one for K_cl = p omega^-1 K and F_cl = -p omega^-1 F, and
    u = 2 omega d/dx K(x,x) equals u_cl / p.
    """
    return -(p / omega) * beta * np.exp(rate * t)


def classical_kdv_residual(u: np.ndarray, h: float, dt: float) -> np.ndarray:
    """u_t - 6 u u_x + u_xxx on the middle of three time slices u[:, 0..2],
    second order central differences, interior points only."""
    ut = (u[:, 2] - u[:, 0]) / (2 * dt)
    v = u[:, 1]
    ux = (v[2:] - v[:-2]) / (2 * h)
    uxxx = (v[4:] - 2 * v[3:-1] + 2 * v[1:-3] - v[:-4]) / (2 * h ** 3)
    return ut[2:-2] - 6 * v[2:-2] * ux[1:-1] + uxxx


def dressed_u_error(u_values: np.ndarray, x: np.ndarray, omega: complex, p: float, beta: float, kappa: float,
                    rate: float, t: float, trim: int = 4) -> float:
    """max |u - u_cl / p| over the interior, u_values[i] = (u_0, u_1, ...) at x[i]
    with the i_1 coefficient read as the imaginary part."""
    A = dressed_to_classical(omega, p, beta, rate, t)
    ref = soliton_u(x, A, kappa) / p
    got = u_values[:, 0] + 1j * u_values[:, 1]
    assert np.max(np.abs(u_values[:, 2:]), initial=0.0) < 1e-12, "field left the complex subalgebra"
    sl = slice(trim, len(x) - trim)
    return float(np.max(np.abs(got[sl] - ref[sl])))


def _simpson(n, h):
    w = np.ones(n)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w * h / 3.0


def _d1_five_point(v, h, axis):
    """Centered five-point first derivative; the two end samples fall back to
    np.gradient and are meant to be trimmed."""
    v = np.moveaxis(v, axis, 0)
    out = np.gradient(v, h, axis=0, edge_order=2)
    out[2:-2] = (v[:-4] - 8 * v[1:-3] + 8 * v[3:-1] - v[4:]) / (12.0 * h)
    return np.moveaxis(out, 0, axis)


def marchenko_on_rays(x, offsets, A, kappa):
    """Classical kernel K_cl(x_i, x_j) with F(s) = A exp(-kappa s), solved per
    base point on the nodes x_i + offsets (composite Simpson) and carried to
    the y samples by the Nystrom formula."""
    h = offsets[1] - offsets[0]
    w = _simpson(len(offsets), h)
    Fs = lambda s: A * np.exp(-kappa * s)
    K = np.zeros((len(x), len(x)), dtype=complex)
    for i, x0 in enumerate(x):
        z = x0 + offsets
        M = np.eye(len(z), dtype=complex) + Fs(z[None, :] + z[:, None]) * w[None, :]  # [k, m]
        Kr = np.linalg.solve(M, -Fs(x0 + z))
        K[i] = -Fs(x0 + x) - (Kr * w) @ Fs(z[:, None] + x[None, :])
    return K


def matched_classical_residual(x, offsets, beta, kappa, omega, p, rate, t0, dt):
    """The complex array (i / p) [D_t u_cl - 3 D_x(u_cl^2) + D_x^3 u_cl] on all x,
    i.e. the 3p-coefficient field residual of u = u_cl / p with time symbol i.

    Discretization: five-point (d/dx + d/dy) K on the diagonal, then np.gradient
    for every field derivative and a central difference over t0 +- dt.
    """
    h = x[1] - x[0]
    us = []
    for t in (t0 - dt, t0, t0 + dt):
        A = dressed_to_classical(omega, p, beta, rate, t)
        K = marchenko_on_rays(x, offsets, A, kappa)
        D = _d1_five_point(K, h, 0) + _d1_five_point(K, h, 1)
        us.append(-2.0 * np.diagonal(D))
    u_m, u, u_p = us
    g = lambda v: np.gradient(v, h, edge_order=2)
    R = (u_p - u_m) / (2 * dt) - 3.0 * g(u * u) + g(g(g(u)))
    return 1j * R / p
