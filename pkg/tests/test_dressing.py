import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hyperdress.algebra import CDNumber
from hyperdress.diffops import Axis, GridFunction, SigmaSpec
from hyperdress.dressing import (GridConfig, Mode, NoDispersionSolution, Scenario, ScenarioError, SingularOperator,
                                 assemble_A, build_F, check_constraints, dispersion_rates, fixed_point_residual,
                                 hilbert_norm, kernel_function, miura_transform, right_linearity_check,
                                 scalar_product, solve_dressing)
from hyperdress.matrix import ShapeMismatch

from oracles import dressed_u_error

SX = SigmaSpec.single(2, 1)  # conj(i_1) d/dx_1, symbol -i_1 along x_1
ST = SigmaSpec(2, (0, -1, 0, 0), (1, 0, 2, 3))  # i_1 d/dt_0


def kdv(h=0.1, p=1.0, modes=((1.0, 1.0),), s=1, window=(-3.0, 3.0), **grid):
    return Scenario("kdv", 2, SX, ST, tuple(Mode(b, k) for b, k in modes), s=s, p=p,
                    grid=GridConfig(window[0], window[1], h, **grid))


def simpson(n, h):
    w = np.ones(n)
    w[1:-1:2] = 4
    w[2:-1:2] = 2
    return w * h / 3


# ---------------------------------------------------------------------------
# scenario validation


def test_psi0_rejected_for_kdv():
    with pytest.raises(ScenarioError, match="psi_0 = 0"):
        Scenario("kdv", 2, SigmaSpec(2, (0.5, 1, 0, 0)), ST, (Mode(1, 1),))


@pytest.mark.parametrize("kw", [dict(level=3, s=2), dict(level=4), dict(kind="burgers")])
def test_level_and_size_rules(kw):
    args = dict(kind="kdv", level=2, sigma_x=SX, sigma_t=ST, modes=(Mode(1, 1),))
    args.update(kw)
    with pytest.raises(ScenarioError):
        Scenario(**args)


def test_mode_rules():
    with pytest.raises(ScenarioError):
        Mode(1.0, -1.0)
    with pytest.raises(ScenarioError):
        Scenario("kdv", 2, SX, ST, (Mode(1, 1, "gauss"),))
    with pytest.raises(ScenarioError):
        Scenario("kdv", 2, SX, ST, (Mode(1, 1),), classical=True)


def test_real_time_operator_cannot_absorb_imaginary_symbol():
    sc = Scenario("kdv", 2, SX, SigmaSpec(2, (1, 0, 0, 0)), (Mode(1, 1),))
    with pytest.raises(NoDispersionSolution):
        kernel_function(sc)


# ---------------------------------------------------------------------------
# F and its constraints


def quat(a, b):
    a0, a1, a2, a3 = a
    b0, b1, b2, b3 = b
    return np.array([a0 * b0 - a1 * b1 - a2 * b2 - a3 * b3, a0 * b1 + a1 * b0 + a2 * b3 - a3 * b2,
                     a0 * b2 - a1 * b3 + a2 * b0 + a3 * b1, a0 * b3 + a1 * b2 - a2 * b1 + a3 * b0])


@settings(max_examples=20, deadline=None)
@given(st.floats(0.2, 2.0))
def test_kdv_time_rate_is_eight_kappa_cubed(kappa):
    # symbol of the x and y operators along x_1 is w = -i_1, the time symbol is i_1;
    # exp(-kappa(x + y) + c t) needs i_1 c + (-2 kappa w)^3 = 0
    w = np.array([0, -1.0, 0, 0])
    a = -2 * kappa * w
    cube = quat(a, quat(a, a))
    c = -cube[1]  # i_1 c = -cube and cube lies along i_1
    assert np.allclose(cube[[0, 2, 3]], 0)
    rates = dispersion_rates(kdv(), Mode(1.0, kappa))
    assert rates[0] == pytest.approx(c, rel=1e-12)
    assert rates[0] == pytest.approx(8 * kappa ** 3, rel=1e-12)


def test_constraints_converge_at_second_order():
    res = []
    for h in (0.1, 0.05):
        sc = kdv(h, margin=0.4)
        res.append(check_constraints(build_F(sc), sc))
    assert res[1]["L1"] < 1e-9
    assert np.log2(res[0]["L2"] / res[1]["L2"]) > 1.9


def test_constraint_check_reports_perturbation():
    sc = Scenario("kdv", 2, SX, ST, (Mode(1.0, 1.0, rate_offset=1.0),), grid=GridConfig(-3, 3, 0.05))
    r = check_constraints(build_F(sc), sc)
    assert r["L2"] > 50.0  # about |F| at the left edge of the interior


def test_zero_amplitude_gives_zero_F():
    sc = kdv(modes=((0.0, 1.0),))
    F = build_F(sc)
    assert not np.any(F.values)
    assert check_constraints(F, sc) == {"L1": 0.0, "L2": 0.0}


def test_F_is_real_scalar_times_identity():
    F = build_F(kdv(s=2, modes=((1.0, 1.0), (0.5, 1.5))))
    v = F.values
    assert np.all(v[..., 1:] == 0)
    assert np.all(v[..., 0, 1, 0] == 0) and np.array_equal(v[..., 0, 0, 0], v[..., 1, 1, 0])


# ---------------------------------------------------------------------------
# discrete operator


def test_assemble_A_against_hand_quadrature():
    h = 0.25
    sc = kdv(h, ray_length=8 * h)
    A = assemble_A(sc, x_index=2)
    x = sc.grid.x_min + 2 * h
    z = x + h * np.arange(9)
    w = simpson(9, h)
    F = lambda a, b: np.exp(-(a + b))  # beta = kappa = 1, t = 0
    # block (k, c), (m, d): p w_m F(z_m, z_k) L[c, d], L = left multiplication by (-i_1)^{-1} = i_1
    L = np.array([quat([0, 1, 0, 0], e) for e in np.eye(4)]).T
    ref = np.zeros((36, 36))
    for k in range(9):
        for m in range(9):
            ref[4 * k:4 * k + 4, 4 * m:4 * m + 4] = w[m] * F(z[m], z[k]) * L
    assert np.allclose(A, ref, atol=1e-14)


def test_zero_coupling_gives_zero_operator_and_K_equals_F():
    sc = kdv(0.2, p=0.0)
    assert not np.any(assemble_A(sc))
    sol = solve_dressing(sc)
    assert np.array_equal(sol.K.values, sol.F.values)


def test_zero_F_gives_zero_K():
    sol = solve_dressing(kdv(0.2, modes=((0.0, 1.0),), ray_length=6.0))
    assert not np.any(sol.K.values)


def test_fixed_point_and_neumann_agreement():
    sol = solve_dressing(kdv(0.1, modes=((0.05, 1.0),), window=(-1.0, 3.0)))
    assert fixed_point_residual(sol) < 1e-12
    d = sol.diagnostics
    assert d["spectral_radius"] < 0.9 and d["neumann_checked"]
    assert d["neumann_diff"] < 1e-8


def test_split_and_dense_solvers_agree():
    sc = kdv(0.2, ray_length=14.0)
    a, b = solve_dressing(sc, method="split"), solve_dressing(sc, method="dense")
    assert np.max(np.abs(a.K.values - b.K.values)) < 1e-13 * np.max(np.abs(a.F.values))


def test_ray_grows_until_tail_passes():
    sol = solve_dressing(kdv(0.1))
    assert sol.diagnostics["tail"] <= sol.scenario.grid.eps_tail
    with pytest.raises(Exception, match="truncation"):
        solve_dressing(kdv(0.1, ray_length=2.0))


def test_singular_operator_detected():
    # classical mkdv: A = (p/4) B^2 with rank-one B of eigenvalue lam; p = 4 / lam^2 makes I - A singular
    h, x0, kappa, beta = 0.1, -1.0, 1.0, 1.0
    ray = 12.0
    M = int(round(ray / h))
    z = x0 + h * np.arange(M + 1)
    lam = np.dot(simpson(M + 1, h), beta * np.exp(-2 * kappa * z))
    p = 4.0 / lam ** 2
    sc = Scenario("mkdv", 2, SigmaSpec(2, (1, 0, 0, 0)), SigmaSpec(2, (1, 0, 0, 0)), (Mode(beta, kappa),), p=p,
                  classical=True, grid=GridConfig(x0, 1.0, h, ray_length=ray, t0=0.0))
    for method in ("split", "dense"):
        with pytest.raises(SingularOperator):
            solve_dressing(sc, method=method)


# ---------------------------------------------------------------------------
# right linearity


def test_right_linearity():
    sol = solve_dressing(kdv(0.1, s=2, modes=((1.0, 1.0), (0.3, 1.4))))
    one = right_linearity_check(sol, CDNumber.real(1.0, 2))
    assert one["max_diff"] == 0.0
    scale = right_linearity_check(sol, 2.5)
    assert scale["relative"] < 1e-13
    for j in (1, 2, 3):
        assert right_linearity_check(sol, CDNumber.basis(j, 2))["passed"]
    rng = np.random.default_rng(0)
    assert right_linearity_check(sol, CDNumber.random(2, rng))["relative"] < 1e-12


def test_real_scaling_commutes_with_solve():
    a = solve_dressing(kdv(0.2, modes=((1.0, 1.0),), ray_length=16.0))
    b = solve_dressing(kdv(0.2, modes=((2.0, 1.0),), p=0.5, ray_length=16.0))
    # K -> c K, F -> c F, p -> p / c leaves the equation invariant
    assert np.allclose(b.K.values, 2.0 * a.K.values, rtol=1e-13, atol=1e-15)


# ---------------------------------------------------------------------------
# classical comparison (cheap grid; the acceptance suite runs the fine one)


def test_kdv_field_tracks_classical_soliton():
    sol = solve_dressing(kdv(0.1))
    g = sol.scenario.grid
    x = g.x_min + g.h * np.arange(g.n)
    u = sol.u.values[:, 1, 0, 0]  # middle time slice, t = 0
    err = dressed_u_error(u, x, omega=-1j, p=1.0, beta=1.0, kappa=1.0, rate=8.0, t=0.0)
    assert err < 5e-3


# ---------------------------------------------------------------------------
# field utilities


def line_axes(h=0.01, n=401, origin=-2.0):
    return (Axis("x", 1, origin, h, n),)


def test_miura_transform():
    ax = line_axes()
    cst = [("x", 0), ("x", 2), ("x", 3)]
    d1 = SigmaSpec(2, (1, 0, 0, 0), (1, 0, 2, 3))  # plain d/dx_1
    zero = GridFunction.sample(ax, lambda m: 0 * m[("x", 1)], level=2, constant=cst)
    assert not np.any(miura_transform(zero, d1).values)
    c = GridFunction.sample(ax, lambda m: 0 * m[("x", 1)] + 1.5, level=2, constant=cst)
    assert np.allclose(miura_transform(c, d1).values[..., 0], -2.25)
    v = GridFunction.sample(ax, lambda m: np.tanh(m[("x", 1)]), level=2, constant=cst)
    g = miura_transform(v, d1).values[..., 0, 0, 0]
    # -tanh^2 - sech^2 = -1
    assert np.max(np.abs(g[2:-2] + 1.0)) < 1e-4


def test_scalar_product():
    ax = line_axes()
    rng = np.random.default_rng(3)
    f = GridFunction(rng.standard_normal((401, 1, 1, 4)), ax)
    g = GridFunction(rng.standard_normal((401, 1, 1, 4)), ax)
    ff = scalar_product(f, f)
    assert np.allclose(ff.coeffs[1:], 0, atol=1e-12) and ff.re > 0
    assert scalar_product(f, g).conj().close(scalar_product(g, f), 1e-12)
    assert hilbert_norm(f) == pytest.approx(np.sqrt(ff.re))
    box1 = GridFunction.sample(ax, lambda m: (m[("x", 1)] < -0.5) * 1.0, level=2)
    box2 = GridFunction.sample(ax, lambda m: (m[("x", 1)] > 0.5) * 1.0, level=2)
    assert scalar_product(box1, box2).norm() == 0.0
    with pytest.raises(ShapeMismatch):
        scalar_product(f, GridFunction(np.zeros((400, 1, 1, 4)), line_axes(n=400)))
