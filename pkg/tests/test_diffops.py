import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st

from hyperdress.algebra import mul_arrays
from hyperdress.diffops import (Axis, GridFunction, GridTooSmall, PreconditionViolated, SigmaSpec, UnmappedAxis,
                                apply_partial_sigma, apply_sigma, check_real_coefficients, derivative,
                                dr_algebra_check, is_real_coefficient, left_generator, operator_power, product, sigma_operator,
                                sigma_power)


def grid(h=0.05, n=41, coords=(0, 1, 2), origin=-1.0):
    return tuple(Axis("x", c, origin, h, n) for c in coords)


def test_sigmaspec_validation():
    with pytest.raises(ValueError):
        SigmaSpec(2, (0, 1, 0, 0), (0, 0, 1, 2))
    with pytest.raises(ValueError):
        SigmaSpec(2, (0, 0, 0, 0))
    with pytest.raises(ValueError):
        SigmaSpec(1, (0, 1, 1, 0))
    s = SigmaSpec.single(2, 2, coord=1)
    assert s.terms() == [(2, 1, 1.0)]
    assert sorted(s.xi) == [0, 1, 2, 3]


def test_symbol():
    s = SigmaSpec(2, (0.0, 1.0, 0.5, 0.0), (0, 2, 1, 3))
    # direction e_2 is seen by generator 1 (xi(1) = 2): conj(i_1) * 1.0
    assert np.allclose(s.symbol([0, 0, 1, 0]), [0, -1, 0, 0])
    assert np.allclose(s.symbol([0, 1, 0, 0]), [0, 0, -0.5, 0])


def test_derivative_orders():
    errs2, errs4 = [], []
    for h in (0.1, 0.05):
        x = np.arange(0, 2 + h / 2, h)
        f = np.sin(x)
        errs2.append(np.max(np.abs(derivative(f, 0, h) - np.cos(x))))
        errs4.append(np.max(np.abs(derivative(f, 0, h, order=4) - np.cos(x))))
    assert np.log2(errs2[0] / errs2[1]) > 1.9
    assert np.log2(errs4[0] / errs4[1]) > 3.5
    with pytest.raises(GridTooSmall):
        derivative(np.zeros(2), 0, 0.1)


def test_sigma_on_linear_function_is_exact():
    ax = grid()
    f = GridFunction.sample(ax, lambda m: 2.0 * m[("x", 1)] - m[("x", 2)], level=2, constant=[("x", 3)])
    s = SigmaSpec(2, (0.0, 1.0, 3.0, 0.0), (0, 1, 2, 3))
    out = apply_sigma(s, f).values
    # conj(i_1) * 2 * 1 + conj(i_2) * (-1) * 3 = -2 i_1 + 3 i_2
    assert np.allclose(out[..., 0, 0, :], [0.0, -2.0, 3.0, 0.0], atol=1e-12)


def test_sigma_left_multiplies_by_conjugate_generator():
    ax = grid(coords=(1,))
    rng = np.random.default_rng(0)
    q = rng.standard_normal(4)
    f = GridFunction.sample(ax, lambda m: m[("x", 1)][..., None, None, None] * q, level=2,
                            constant=[("x", 0), ("x", 2), ("x", 3)])
    out = apply_sigma(SigmaSpec.single(2, 1), f).values
    assert np.allclose(out[5, 0, 0], mul_arrays(np.array([0, -1.0, 0, 0]), q), atol=1e-12)


def test_unmapped_axis():
    ax = grid(coords=(1,))
    f = GridFunction.sample(ax, lambda m: m[("x", 1)], level=2)
    with pytest.raises(UnmappedAxis):
        apply_sigma(SigmaSpec.single(2, 2), f)


def test_sigma_power_matches_operator_power_on_quadratic():
    ax = grid(coords=(0, 1, 2, 3), n=9, h=0.25)
    s = SigmaSpec(2, (0.0, 1.0, 0.7, -0.4), (1, 0, 2, 3))
    f = GridFunction.sample(ax, lambda m: m[("x", 0)] ** 2 + 3 * m[("x", 1)] * m[("x", 2)], level=2)
    out = sigma_power(s, 2, f).values
    # second order stencils are exact on quadratics: sigma^2 f is a constant real number
    const = out[4, 4, 4, 4, 0, 0]
    assert np.allclose(out[..., 0, 0, :], const, atol=1e-10)
    assert np.allclose(const[1:], 0.0, atol=1e-10)


def test_partial_sigma_sums_to_product_rule():
    ax = grid(coords=(1,), n=81, h=0.025)
    cst = [("x", 0), ("x", 2), ("x", 3)]
    f = GridFunction.sample(ax, lambda m: np.stack([np.cos(m[("x", 1)]), np.sin(m[("x", 1)]), 0 * m[("x", 1)],
                                                    m[("x", 1)] ** 2], -1)[..., None, None, :], level=2, constant=cst)
    g = GridFunction.sample(ax, lambda m: np.stack([np.exp(m[("x", 1)]), 0 * m[("x", 1)], m[("x", 1)],
                                                    0 * m[("x", 1)]], -1)[..., None, None, :], level=2, constant=cst)
    s = SigmaSpec.single(2, 1)
    total = apply_sigma(s, product([f, g])).values
    parts = apply_partial_sigma(s, 0, [f, g]).values + apply_partial_sigma(s, 1, [f, g]).values
    assert np.max(np.abs(total - parts)[2:-2]) < 5e-3


def test_left_generator_is_a_signed_permutation():
    x = np.arange(8.0)
    for j in range(8):
        y = left_generator(j, x)
        assert sorted(np.abs(y)) == sorted(x)


@pytest.mark.parametrize("sigma", [SigmaSpec.single(2, 1), SigmaSpec(2, (0, 1, -0.5, 2), (0, 2, 1, 3)),
                                  SigmaSpec(3, (0, 1, 0, 0.5, 0, -1, 0, 0.3), (1, 0, 2, 3, 5, 4, 6, 7))])
def test_operator_algebra(sigma):
    other = sigma_operator(SigmaSpec(sigma.level, (0, 0, 1.0)))
    d = dr_algebra_check(sigma_operator(sigma), other, degree=5, max_power=4)
    assert d["power_assoc_ok"]
    assert d["matching_composition"] == "with_sign"
    assert d["center_consistent"]


def test_even_powers_real_on_real_grid_functions():
    ax = grid(coords=(0, 1, 2))
    rng = np.random.default_rng(1)
    samples = []
    for _ in range(3):
        w = rng.standard_normal(3)
        samples.append(GridFunction.sample(ax, lambda m, w=w: np.exp(0.3 * sum(w[k] * m[("x", k)] for k in range(3))),
                                           level=2, constant=[("x", 3)]))
    s = SigmaSpec(2, (0.0, 1.0, 0.7, -0.4), (1, 0, 2, 3))
    assert check_real_coefficients(s, 2, samples)["passed"]
    with pytest.raises(PreconditionViolated):
        check_real_coefficients(SigmaSpec(2, (1.0, 1.0, 0, 0)), 2, samples)
    # odd powers do leak: sigma f has imaginary parts
    assert np.max(np.abs(apply_sigma(s, samples[0]).values[..., 1:])) > 1e-3


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-2, 2, allow_nan=False), min_size=3, max_size=3), st.permutations(range(4)))
def test_even_power_normal_form_is_real(psi, xi):
    assume(any(abs(p) > 1e-3 for p in psi))
    s = SigmaSpec(2, (0.0, *psi), tuple(xi))
    assert is_real_coefficient(operator_power(sigma_operator(s), 2))
    assert is_real_coefficient(operator_power(sigma_operator(s), 4))
    assert not is_real_coefficient(sigma_operator(s))
