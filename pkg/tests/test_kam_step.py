import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from su2kam.decay_norm import ToeplitzBlockOperator, s_norm, storage_labels
from su2kam.kam_step import (
    MelnikovFailure,
    SmallDivisorError,
    StepParams,
    conjugate,
    divisor_table,
    homological_residual,
    kam_single_step,
    melnikov_screen,
    small_divisor,
    solve_homological,
)
from su2kam.linop import DiagonalPart, NlsModel, Truncation, build_diagonal, check_hamiltonian, random_hamiltonian
from su2kam.oracles import conjugation_oracle, homological_residual_materialized

OMEGA = np.array([1 / math.sqrt(2), 1 - 1 / math.sqrt(2)])


def unperturbed(M):
    return build_diagonal(NlsModel(truncation=Truncation(4, M, 4)))


def screen_oracle(D, lam, gamma, tau, N):
    """Plain loops over every (h, m, a, m', a')."""
    best = math.inf
    K = D.M_max + 1
    for h in itertools.product(range(-int(N), int(N) + 1), repeat=2):
        br = max(1, abs(h[0]), abs(h[1]))
        for m, a, mp, ap in itertools.product(range(K), (1, -1), range(K), (1, -1)):
            if h == (0, 0) and (m, a) == (mp, ap):
                continue
            v = abs(lam * (OMEGA @ h) + a * D.mu[m] - ap * D.mu[mp]) * br**tau
            best = min(best, v)
    return best / gamma


def test_small_divisor_frozen():
    D = unperturbed(4)
    assert small_divisor((1, 1), 2, 1, 0, 1, 1.0, D, OMEGA) == pytest.approx(2.0)
    assert small_divisor((-1, -1), 2, 1, 0, 1, 1.0, D, OMEGA) == pytest.approx(0.0, abs=1e-15)
    assert small_divisor((0, 0), 1, 1, 1, -1, 0.7, D, OMEGA) == pytest.approx(2.75)


def test_divisor_table_matches_scalar(rng):
    D = DiagonalPart(unperturbed(3).mu0, rng.normal(size=4) * 1e-3)
    tab = divisor_table(D, 0.8, OMEGA, 2, 2)
    m, a = storage_labels(3)
    for h in [(0, 0), (1, -2), (-2, 2)]:
        for p, q in [(0, 5), (3, 1), (7, 7)]:
            want = small_divisor(h, m[p], a[p], m[q], a[q], 0.8, D, OMEGA)
            assert tab[h[0] + 2, h[1] + 2, p, q] == pytest.approx(want, abs=1e-14)


@settings(max_examples=10)
@given(st.floats(0.5, 1.5), st.sampled_from([2, 4]))
def test_screen_against_loops(lam, N):
    D = unperturbed(5)
    res = melnikov_screen(D, lam, 1e-2, 5.0, N, OMEGA)
    assert res.min_ratio == pytest.approx(screen_oracle(D, lam, 1e-2, 5.0, N), rel=1e-9)
    assert res.passed == (res.min_ratio >= 1)


def test_screen_unsorted_spectrum_uses_enumeration():
    D = DiagonalPart(np.array([2.0, 1.0, 3.0]), np.zeros(3))
    res = melnikov_screen(D, 0.9, 1e-2, 5.0, 2, OMEGA)
    assert res.min_ratio == pytest.approx(screen_oracle(D, 0.9, 1e-2, 5.0, 2), rel=1e-9)


def test_resonance_detected_with_canonical_witness():
    D = unperturbed(4)
    res = melnikov_screen(D, 1.0, 1e-2, 5.0, 4, OMEGA)
    assert not res.passed
    h, m, a, mp, ap = res.witness
    delta = small_divisor(h, m, a, mp, ap, 1.0, D, OMEGA)
    assert abs(delta) < 1e-12
    assert melnikov_screen(D, 1.0, 0.0, 5.0, 4, OMEGA).passed


def test_small_divisor_error():
    D = unperturbed(4)
    R = ToeplitzBlockOperator.zeros(2, 1, 4)
    R.coeffs[0, 0, 2, 0] = 1e-3  # h = (-1, -1), (2,+) <- (0,+)
    with pytest.raises(SmallDivisorError) as exc:
        solve_homological(R, D, 1.0, 4, 1e-2, 5.0, OMEGA)
    assert exc.value.witness in {((1, 1), 0, 1, 2, 1), ((-1, -1), 2, 1, 0, 1)}
    with pytest.raises(MelnikovFailure):
        kam_single_step(D, R, 1.0, StepParams(4, 1e-2, 5.0), OMEGA)


@settings(max_examples=10)
@given(st.integers(0, 2**32 - 1))
def test_homological_equation_is_exact(seed):
    rng = np.random.default_rng(seed)
    D = unperturbed(4)
    R = random_hamiltonian(2, 2, 4, rng, 1e-3)
    lam = 0.9317
    A = solve_homological(R, D, lam, 2, 1e-3, 5.0, OMEGA)
    res = homological_residual(R, A, D, lam, 2, OMEGA)
    assert s_norm(res, 2.0) <= 1e-14 * s_norm(R, 2.0)
    _, rel = homological_residual_materialized(R, A, D, lam, 2, OMEGA, 3)
    assert rel <= 1e-13


def test_generator_is_hamiltonian(rng):
    D = unperturbed(4)
    R = random_hamiltonian(2, 1, 4, rng, 1e-3)
    A = solve_homological(R, D, 0.9317, 4, 1e-3, 5.0, OMEGA)
    # generators of symplectic maps satisfy the same identities
    assert check_hamiltonian(A, 1e-12 * s_norm(A, 2.0)).passed


def test_conjugation_against_dense_exponential(rng):
    D = unperturbed(4)
    R = random_hamiltonian(2, 1, 4, rng, 1e-3)
    lam, N = 0.9317, 4
    A = solve_homological(R, D, lam, N, 1e-3, 5.0, OMEGA)
    D1, R1, diag_ = conjugate(D, R, A, N, H_cap=3)
    chk = conjugation_oracle(D, R, A, D1, R1, lam, OMEGA, 3, interior=1, dense=True)
    assert chk.relative <= 1e-10
    assert diag_.imag_residue <= 1e-15
    assert diag_.sign_asymmetry <= 1e-15


def test_step_is_quadratic(rng):
    D = unperturbed(4)
    R = random_hamiltonian(2, 1, 4, rng, 1e-3)
    p = StepParams(4, 1e-3, 5.0, H_cap=4)
    out = [s_norm(kam_single_step(D, R * t, 0.9317, p, OMEGA)[1], 2.0) for t in (1.0, 0.5)]
    assert out[0] / out[1] == pytest.approx(4.0, rel=0.05)


def test_step_on_vanishing_remainder():
    D = unperturbed(4)
    R = ToeplitzBlockOperator.zeros(2, 1, 4)
    D1, R1, A, diag_ = kam_single_step(D, R, 1.0, StepParams(4, 1e-2, 5.0), OMEGA)
    assert not np.any(A.coeffs) and not np.any(R1.coeffs)
    np.testing.assert_array_equal(D1.mu, D.mu)


def test_diagonal_correction_is_first_order(rng):
    D = unperturbed(3)
    R = random_hamiltonian(2, 1, 3, rng, 1e-3)
    A = solve_homological(R, D, 0.9317, 4, 1e-3, 5.0, OMEGA)
    D1, _, _ = conjugate(D, R, A, 4)
    np.testing.assert_allclose(D1.r, (np.diag(R.block((0, 0)))[:4] / 1j).real)
    assert D1.step == 1
