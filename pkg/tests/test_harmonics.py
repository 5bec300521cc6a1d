import numpy as np
import pytest
from hypothesis import given, strategies as st

from su2kam.harmonics import (
    AliasingError,
    CentralFunction,
    char_product,
    decay_profile,
    eigenvalue,
    multiplication_matrix,
    qp_by_shift,
    qp_conj,
    qp_product,
)
from su2kam.lattice import GroupSpec

SU2, SO3 = GroupSpec.su2(), GroupSpec.so3()


def _chars(labels, theta, g):
    k = g.step_ratio
    return np.array([np.sin((k * m + 1) * theta) / np.sin(theta) for m in labels])


def _quadrature_matrix(b: CentralFunction, M, g, n=4096):
    """``<chi_m, b chi_m'>`` under the class-function Haar measure, by the trapezoid rule."""
    theta = (np.arange(n) + 0.5) * np.pi / n
    w = (2 / np.pi) * np.sin(theta) ** 2 * (np.pi / n)
    chi = _chars(range(M + 1), theta, g)
    bv = sum(c * _chars([h], theta, g)[0] for h, c in b.coeffs.items())
    return (chi * w) @ (bv * chi).T


def test_eigenvalues_frozen():
    np.testing.assert_array_equal(eigenvalue(np.arange(6)), [0, 3 / 8, 1, 15 / 8, 3, 35 / 8])
    np.testing.assert_allclose(eigenvalue(np.arange(3), SO3), [0, 1, 3])
    with pytest.raises(ValueError):
        eigenvalue(-1)


def test_char_product_examples():
    assert char_product(1, 1) == [2, 0]
    assert char_product(2, 3) == [5, 3, 1]
    assert char_product(1, 2, SO3) == [3, 2, 1]
    with pytest.raises(ValueError):
        char_product(-1, 0)


@given(st.integers(0, 30), st.integers(0, 30))
def test_char_product_dimensions(h, m):
    assert sum(p + 1 for p in char_product(h, m)) == (h + 1) * (m + 1)
    assert sum(2 * p + 1 for p in char_product(h, m, SO3)) == (2 * h + 1) * (2 * m + 1)


@pytest.mark.parametrize("g", [SU2, SO3])
def test_multiplication_matrix_against_quadrature(g):
    b = CentralFunction({0: 0.3, 1: 1.0, 2: -0.5 + 0.25j, 4: 0.1}, g)
    M = 10
    np.testing.assert_allclose(multiplication_matrix(b, M), _quadrature_matrix(b, M, g), atol=1e-12)


coeff_maps = st.dictionaries(st.integers(0, 5), st.complex_numbers(max_magnitude=2, allow_nan=False,
                                                                  allow_infinity=False), max_size=4)


@given(coeff_maps, coeff_maps)
def test_matrix_homomorphism_on_safe_block(bc, cc):
    b, c = CentralFunction(bc), CentralFunction(cc)
    M = 16
    safe = M - max(b.support, c.support, 0) + 1
    lhs = multiplication_matrix(b, M) @ multiplication_matrix(c, M)
    rhs = multiplication_matrix(b * c, M)
    np.testing.assert_allclose(lhs[:safe, :safe], rhs[:safe, :safe], atol=1e-12)


def test_real_function_gives_symmetric_matrix():
    B = multiplication_matrix(CentralFunction({1: 1.0, 3: 2.0}), 8)
    np.testing.assert_array_equal(B, B.T)


def test_aliasing_refused():
    with pytest.raises(AliasingError):
        multiplication_matrix(CentralFunction({9: 1.0}), 4)


def test_tail_mass():
    _, tail = multiplication_matrix(CentralFunction({1: 1.0}), 3, return_tail=True)
    # only chi_1 chi_3 spills (onto chi_4)
    assert tail == pytest.approx(1.0)


def test_decay_profile_band():
    fit = decay_profile(multiplication_matrix(CentralFunction({1: 1.0}), 8))
    assert fit.exact_band and fit.width == 1
    i = np.arange(30)
    B = (1 + np.abs(i[:, None] - i[None, :]) / np.sqrt(8)) ** -3.0
    fit = decay_profile(B)
    assert not fit.exact_band
    assert 2.0 < fit.exponent < 3.5


def test_central_function_algebra():
    f = CentralFunction.from_triples([(1, 1.0, 0.0), (1, 0.0, 2.0), (0, 0.0, 0.0)])
    assert f.coeffs == {1: 1 + 2j}
    assert f.to_triples() == [(1, 1.0, 2.0)]
    assert not f.is_real and f.conj().coeffs == {1: 1 - 2j}
    assert (f * 2).coeffs == {1: 2 + 4j}
    assert (f * f).coeffs == {0: (1 + 2j) ** 2, 2: (1 + 2j) ** 2}
    assert CentralFunction({}).support == -1
    with pytest.raises(ValueError):
        CentralFunction({-1: 1.0})


def test_quasi_periodic_products():
    w = {((1, 0), 1): 1.0, ((0, 0), 0): 2.0}
    prod = qp_product(w, qp_conj(w))
    assert prod[((0, 0), 0)] == pytest.approx(5.0)
    assert prod[((0, 0), 2)] == pytest.approx(1.0)
    assert prod[((1, 0), 1)] == pytest.approx(2.0)
    by = qp_by_shift(prod)
    assert by[(0, 0)].coeffs == {0: 5.0, 2: 1.0}
