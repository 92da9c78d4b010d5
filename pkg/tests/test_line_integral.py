import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hyperdress.algebra import cd_inv, CDNumber, mul_arrays
from hyperdress.checks import INVERSION_SPECS, inversion_orders
from hyperdress.diffops import Axis, GridFunction, SigmaSpec
from hyperdress.line_integral import (IncompatibleDirection, QuadratureConfig, RangeError, RayFoliation,
                                      TailNotDecayed, antideriv_from, antideriv_to_infinity, operator_norm_decay,
                                      path_distance, path_variation, simpson_weights, trapezoid_weights)


def ray_function(values_fn, coord=1, level=2, h=0.01, length=14.0):
    n = int(round(length / h)) + 1
    ax = (Axis("x", coord, 0.0, h, n),)
    others = [("x", k) for k in range(1 << level) if k != coord]
    return GridFunction.sample(ax, lambda m: values_fn(m[("x", coord)]), level=level, constant=others)


@pytest.mark.parametrize("n", [3, 5, 6, 11, 12])
def test_simpson_is_exact_on_cubics(n):
    h = 0.3
    x = h * np.arange(n)
    f = 1 - 2 * x + 0.5 * x ** 2 + 0.25 * x ** 3
    exact = x[-1] - x[-1] ** 2 + x[-1] ** 3 / 6 + x[-1] ** 4 / 16
    assert np.dot(simpson_weights(n, h), f) == pytest.approx(exact, rel=1e-13)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 60), st.floats(0.01, 2.0))
def test_weights_integrate_constants(n, h):
    assert simpson_weights(n, h).sum() == pytest.approx((n - 1) * h, rel=1e-12)
    assert trapezoid_weights(n, h).sum() == pytest.approx((n - 1) * h, rel=1e-12)


def test_antiderivative_of_exponential_against_closed_form():
    # sigma = conj(i_1) d/dx_1 has symbol -i_1 with inverse i_1, so w = i_1 int g
    s = SigmaSpec.single(2, 1)
    g = ray_function(lambda x: np.exp(-1.5 * x))
    w = antideriv_to_infinity(s, g, RayFoliation.along(1, 2), QuadratureConfig(eps_tail=1e-6))
    x = g.axes[0].points
    ref = np.exp(-1.5 * x) / 1.5
    assert np.allclose(w.values[:, 0, 0, 1], ref, atol=1e-8)
    assert np.allclose(w.values[:, 0, 0, [0, 2, 3]], 0.0)
    w0 = antideriv_from(s, g, RayFoliation.along(1, 2))
    assert np.allclose(w0.values[:, 0, 0, 1], (1 - np.exp(-1.5 * x)) / 1.5, atol=1e-8)


def test_start_point():
    s = SigmaSpec.single(2, 1)
    g = ray_function(lambda x: np.cos(x), length=2.0)
    w = antideriv_from(s, g, RayFoliation.along(1, 2), x0=1.0)
    assert np.allclose(w.values[100], 0.0)
    with pytest.raises(RangeError):
        antideriv_from(s, g, RayFoliation.along(1, 2), x0=1.005)


def test_tail_check():
    s = SigmaSpec.single(2, 1)
    g = ray_function(lambda x: np.exp(-0.5 * x), length=5.0)
    with pytest.raises(TailNotDecayed):
        antideriv_to_infinity(s, g, RayFoliation.along(1, 2))


def test_incompatible_direction():
    g = ray_function(lambda x: np.exp(-x))
    with pytest.raises(IncompatibleDirection):
        antideriv_from(SigmaSpec.single(2, 2), g, RayFoliation.along(1, 2))
    with pytest.raises(IncompatibleDirection):
        antideriv_from(SigmaSpec.single(2, 1), g, RayFoliation((0, 1.0, 1.0, 0)))


@pytest.mark.parametrize("k", range(len(INVERSION_SPECS)))
def test_inversion_is_second_order(k):
    res = inversion_orders(INVERSION_SPECS[k])
    for key in ("from", "to_infinity"):
        order, err = res[key]
        assert order >= 1.9, (key, order)
        assert err < 1e-4


def test_non_identity_permutation_among_specs():
    assert any(sg.xi != tuple(range(len(sg.xi))) for sg in INVERSION_SPECS)
    assert len({(sg.psi, sg.xi) for sg in INVERSION_SPECS}) >= 3


def test_path_variation_and_distance():
    t = np.linspace(0, 1, 101)
    line = np.stack([t, 2 * t], 1)
    assert path_variation(line, t, 0.0, 1.0) == pytest.approx(math.sqrt(5))
    assert path_variation(line, t, 0.25, 0.5) == pytest.approx(0.25 * math.sqrt(5))
    with pytest.raises(RangeError):
        path_variation(line, t, 0.5, 2.0)
    assert path_distance(line, line) == pytest.approx(0.0)
    assert path_distance(line, line + 1.0) == pytest.approx(math.sqrt(2))
    # a copy that dwells on every sample is the same path
    assert path_distance(line, np.repeat(line, 2, axis=0)) < 1e-12


def test_operator_norm_bound_on_unit_interval():
    s = SigmaSpec.single(2, 1)
    tests = [ray_function(lambda x, a=a: np.cos(a * x), length=1.0) for a in (0.5, 2.0, 7.0)]
    d = operator_norm_decay(s, RayFoliation.along(1, 2), tests)
    assert d["max_ratio"] <= 1.0 + 1e-9
    for row in d["rows"]:
        assert row["lipschitz"] <= row["input_sup"] + 1e-6
