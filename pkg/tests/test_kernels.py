import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from axsym.kernels import (AffineLatFunction, MatrixKernel, cosh_closed_form, log_closed_form,
                           make_cosh_family, make_lambda_family, make_log_family,
                           make_poisson_family, make_separable_time, poisson_closed_form,
                           table_family, truncation_for)

COTH_PI = 1.0037418731973213      # coth(pi)
CSCH_PI = 0.08658953753004694     # 1/sinh(pi)


def cosh_partial_sum(theta, N=10_000):
    # independent oracle: direct summation of the rational series with a = 1
    n = np.arange(1, N + 1)
    return 1 / math.pi + np.sum(2 * np.cos(n * theta) / ((n**2 + 1) * math.pi))


def log_partial_sum(b, theta, N=200):
    n = np.arange(1, N + 1)
    return np.sum((2 / n) * b**n * np.cos(n * theta))


def poisson_partial_sum(b, theta, N=200):
    n = np.arange(1, N + 1)
    return 1 + np.sum(2 * b**n * np.cos(n * theta))


def test_frozen_constants():
    assert COTH_PI == pytest.approx(1 / math.tanh(math.pi), rel=1e-15)
    assert CSCH_PI == pytest.approx(1 / math.sinh(math.pi), rel=1e-15)


@pytest.mark.parametrize("theta,expected", [(0.0, COTH_PI), (math.pi, CSCH_PI)])
def test_cosh_closed_form_matches_oracle(theta, expected):
    assert cosh_closed_form(0.5, 0.5, theta) == pytest.approx(expected, rel=1e-14)
    assert abs(cosh_partial_sum(theta) - expected) <= 2 / (math.pi * 1e4)


def test_cosh_closed_form_large_argument_is_finite():
    v = cosh_closed_form(400.0, 400.0, 0.1)
    assert np.isfinite(v) and v > 0


@pytest.mark.parametrize("theta,expected", [(0.0, math.log(4)), (math.pi, -math.log(2.25))])
def test_log_closed_form(theta, expected):
    assert log_closed_form(0.5, theta) == pytest.approx(expected, rel=1e-14)
    assert abs(log_partial_sum(0.5, theta) - expected) < 1e-12


@pytest.mark.parametrize("theta,expected", [(0.0, 3.0), (math.pi, 1 / 3)])
def test_poisson_closed_form(theta, expected):
    assert poisson_closed_form(0.5, theta) == pytest.approx(expected, rel=1e-14)
    assert abs(poisson_partial_sum(0.5, theta) - expected) < 1e-12


def test_closed_forms_at_zero_base():
    th = np.linspace(-2 * math.pi, 2 * math.pi, 9)
    assert np.all(log_closed_form(0.0, th) == 0)
    assert np.all(poisson_closed_form(0.0, th) == 1)


@pytest.mark.parametrize("fn", [log_closed_form, poisson_closed_form])
def test_closed_forms_reject_unit_base(fn):
    with pytest.raises(ValueError):
        fn(1.0, 0.3)


def test_cosh_closed_form_rejects_nonpositive():
    with pytest.raises(ValueError):
        cosh_closed_form(0.0, 0.0, 0.0)


@settings(max_examples=50)
@given(st.floats(0, 2 * math.pi), st.floats(0.01, 5), st.floats(-0.95, 0.95))
def test_closed_forms_even_in_theta(theta, a, b):
    assert cosh_closed_form(a, a, theta) == cosh_closed_form(a, a, -theta)
    assert log_closed_form(b, theta) == pytest.approx(log_closed_form(b, -theta), abs=1e-14)
    assert poisson_closed_form(b, theta) == pytest.approx(poisson_closed_form(b, -theta),
                                                          rel=1e-14)


# --- cosh family -----------------------------------------------------------

def test_cosh_family_values():
    fam = make_cosh_family([0.5])
    assert fam.eval(0, 1.0, 2.0)[0][0, 0] == pytest.approx(1 / math.pi, rel=1e-15)
    assert fam.eval(1, 1.0, 2.0)[0][0, 0] == pytest.approx(1 / math.pi, rel=1e-15)
    assert fam.eval(3, 1.0, 2.0)[0][0, 0] == pytest.approx(2 / (10 * math.pi), rel=1e-15)
    assert fam.eval(3, 0, 0)[0][0, 0] == pytest.approx(0.0636620, abs=1e-7)
    assert fam.reversible
    assert not np.any(fam.eval(3, 0.2, 0.4)[1])


def test_cosh_family_matrix_entries():
    fam = make_cosh_family([AffineLatFunction(0.5, 1.0), AffineLatFunction(2.0)])
    B, _ = fam.eval(2, 0.0, math.pi)
    b1 = [0.5, 2.0]
    b2 = [1.5, 2.0]
    expected = [[2 / ((4 + b1[i] + b2[j]) * math.pi) for j in range(2)] for i in range(2)]
    np.testing.assert_allclose(B, expected, rtol=1e-15)


def test_cosh_family_rejects_nonpositive_latitude_function():
    with pytest.raises(ValueError):
        AffineLatFunction(0.5, -0.6)
    fam = make_cosh_family([lambda phi: 1.0 - phi])
    with pytest.raises(ValueError):
        fam.eval(0, 2.0, 0.0)


def test_cosh_truncation_hint_is_capped():
    assert make_cosh_family([0.5]).truncation_hint == 10**5


def test_truncation_for_geometric_tail():
    N = truncation_for(lambda N: 0.5 ** (N + 1))
    assert 0.5 ** (N + 1) < 1e-8 <= 0.5 ** N


# --- hadamard families -----------------------------------------------------

def test_log_family_coefficients():
    fam = make_log_family([[0.5]])
    assert fam.eval(2, 0, 0)[0][0, 0] == pytest.approx(0.25, rel=1e-15)
    assert fam.eval(0, 0, 0)[0][0, 0] == 0
    zero = make_log_family([[0.0]])
    assert all(zero.eval(n, 0, 0)[0][0, 0] == 0 for n in range(1, 5))


def test_poisson_family_coefficients():
    fam = make_poisson_family([[0.5, 0.2], [0.2, 0.5]])
    np.testing.assert_array_equal(fam.eval(0, 0, 0)[0], np.ones((2, 2)))
    assert fam.eval(1, 0, 0)[0][0, 0] == 1.0
    assert fam.eval(3, 0, 0)[0][0, 0] == pytest.approx(0.25, rel=1e-15)
    assert fam.eval(3, 0, 0)[0][0, 1] == pytest.approx(2 * 0.2**3, rel=1e-15)


def test_poisson_factor_two_reproduces_closed_form():
    # brute-force partial sums with the factor-2 convention converge to the kernel
    fam = make_poisson_family([[0.5]])
    th = np.linspace(-2 * math.pi, 2 * math.pi, 33)
    B, _ = fam.coefficients(np.arange(201), 0, 0)
    series = np.cos(np.outer(th, np.arange(201))) @ B[:, 0, 0]
    np.testing.assert_allclose(series, poisson_closed_form(0.5, th), atol=1e-12)


@pytest.mark.parametrize("maker", [make_log_family, make_poisson_family])
def test_hadamard_families_reject_unit_entries(maker):
    with pytest.raises(ValueError):
        maker([[1.0]])
    with pytest.raises(ValueError):
        maker(MatrixKernel(fn=lambda p1, p2, t: [[0.5]], sup=1.0))


def test_callable_base_rejects_at_evaluation():
    fam = make_log_family(MatrixKernel(fn=lambda p1, p2, t: [[1.5 * p1]], sup=0.9))
    fam.eval(1, 0.1, 0.1)
    with pytest.raises(ValueError):
        fam.eval(1, 1.0, 0.1)


# --- lambda and separable -------------------------------------------------

def test_lambda_family():
    base = make_cosh_family([0.5])
    fam = make_lambda_family(base, 1.0)
    B, A = fam.eval(4, 0.3, 0.7)
    np.testing.assert_array_equal(A, B)
    assert not fam.reversible
    assert make_lambda_family(base, 0.0).reversible
    assert not np.any(make_lambda_family(base, 0.0).eval(2, 0, 0)[1])
    with pytest.raises(ValueError):
        make_lambda_family(base, 1.5)


def test_lambda_family_from_scalar_kernel():
    fam = make_lambda_family(lambda n, p1, p2: 1.0 / (n + 1) ** 2, -0.5, m=2,
                             tail=lambda N: 1.0 / (N + 1))
    B, A = fam.eval(1, 0, 0)
    np.testing.assert_allclose(B, 0.25 * np.eye(2))
    np.testing.assert_allclose(A, -0.125 * np.eye(2))
    assert fam.tail_bound(3) == pytest.approx(1.5 * 0.25)


def test_separable_time():
    spatial = make_cosh_family([0.5, 0.8])
    fam = make_separable_time(spatial, 1.0)
    assert fam.temporal
    np.testing.assert_array_equal(fam.eval(2, 0.1, 0.2, 0.0)[0], spatial.eval(2, 0.1, 0.2)[0])
    np.testing.assert_allclose(fam.eval(2, 0.1, 0.2, 1.0)[0],
                               spatial.eval(2, 0.1, 0.2)[0] * math.exp(-1), rtol=1e-15)
    const = make_separable_time(spatial, 0.0)
    np.testing.assert_array_equal(const.eval(2, 0.1, 0.2, 5.0)[0], spatial.eval(2, 0.1, 0.2)[0])
    with pytest.raises(ValueError):
        make_separable_time(spatial, -0.1)


def test_table_family():
    fam = table_family([[[1.0]], [[0.5]]], [[[0.0]], [[0.25]]])
    assert fam.eval(5, 0, 0)[0][0, 0] == 0
    assert fam.eval(1, 0, 0)[1][0, 0] == 0.25
    assert fam.tail_bound(0) == 0.75
    assert fam.tail_bound(1) == 0


# --- family-wide invariants -----------------------------------------------

def builtin_families():
    base = MatrixKernel(matrix=[[0.6, 0.3, 0.1], [0.3, 0.5, 0.2], [0.1, 0.2, 0.4]],
                        length_scale=1.0, alpha=0.5)
    cosh3 = make_cosh_family([AffineLatFunction(0.5, 1.0), AffineLatFunction(1.0),
                              AffineLatFunction(2.0, -1.0)])
    return {
        "cosh": make_cosh_family([0.5]),
        "cosh3": cosh3,
        "log": make_log_family(base),
        "poisson": make_poisson_family(base),
        "separable": make_separable_time(cosh3, 0.7),
        "lambda": make_lambda_family(cosh3, 0.5),
    }


@pytest.mark.parametrize("name", list(builtin_families()))
def test_transpose_swap_time_reflection_symmetry(name):
    fam = builtin_families()[name]
    rng = np.random.default_rng(3)
    for _ in range(20):
        p1, p2 = rng.uniform(0, math.pi, 2)
        t = rng.uniform(-3, 3)
        for n in (0, 1, 2, 7):
            B12 = fam.eval(n, p1, p2, t)[0]
            B21 = fam.eval(n, p2, p1, -t)[0]
            np.testing.assert_allclose(B12, B21.T, rtol=1e-15, atol=0)


@pytest.mark.parametrize("name", list(builtin_families()))
@pytest.mark.parametrize("N", [10, 100])
def test_tail_bounds_are_valid(name, N):
    fam = builtin_families()[name]
    rng = np.random.default_rng(N)
    ns = np.arange(N + 1, 2 * N + 1)
    for _ in range(5):
        p1, p2 = rng.uniform(0, math.pi, 2)
        B, A = fam.coefficients(ns, p1, p2, rng.uniform(-2, 2))
        partial = np.sum(np.max(np.abs(B) + np.abs(A), axis=(1, 2)))
        assert partial <= fam.tail_bound(N)


@pytest.mark.parametrize("n", [0, 1, 3, 10])
def test_cosh_coefficients_psd_on_latitude_grids(n):
    fam = builtin_families()["cosh3"]
    rng = np.random.default_rng(n)
    for size in range(1, 9):
        lats = np.sort(rng.uniform(0, math.pi, size))
        m = fam.m
        S = np.empty((size * m, size * m))
        for a in range(size):
            for b in range(size):
                S[a * m:(a + 1) * m, b * m:(b + 1) * m] = fam.eval(n, lats[a], lats[b])[0]
        assert np.linalg.eigvalsh((S + S.T) / 2)[0] >= -1e-10 * np.trace(S)
