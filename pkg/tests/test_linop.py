import numpy as np
import pytest
from hypothesis import given, strategies as st

from su2kam.decay_norm import s_norm
from su2kam.harmonics import AliasingError, CentralFunction, multiplication_matrix
from su2kam.linop import (
    CUBIC,
    LINEAR,
    DiagonalPart,
    ForcingSpec,
    NlsModel,
    Truncation,
    build_T,
    build_diagonal,
    check_hamiltonian,
    default_profile,
    initial_remainder,
    random_hamiltonian,
    self_adjoint_residual,
)


def _phys_matrix(f, h, M, nphi=8, nth=512):
    """``<e^{i h.phi} chi_m, f chi_m'>`` by quadrature on the torus times the class-function measure."""
    phi = 2 * np.pi * np.arange(nphi) / nphi
    P1, P2 = np.meshgrid(phi, phi, indexing="ij")
    th = (np.arange(nth) + 0.5) * np.pi / nth
    w = (2 / np.pi) * np.sin(th) ** 2 * (np.pi / nth)
    chi = np.array([np.sin((m + 1) * th) / np.sin(th) for m in range(M + 1)])
    F = f(P1[..., None], P2[..., None], th)  # (nphi, nphi, nth)
    Fh = (F * np.exp(-1j * (h[0] * P1 + h[1] * P2))[..., None]).mean(axis=(0, 1))
    return (chi * w) @ (Fh * chi).T


def _profile_fn(prof):
    def w(p1, p2, th):
        out = 0
        for (h, m), c in prof.items():
            out = out + c * np.exp(1j * (h[0] * p1 + h[1] * p2)) * np.sin((m + 1) * th) / np.sin(th)
        return out
    return w


def test_default_T_blocks():
    model = NlsModel(truncation=Truncation(4, 6, 4))
    T = build_T(model)
    assert T.H == 1
    B1 = multiplication_matrix(CentralFunction({1: 1.0}), 6)
    np.testing.assert_array_equal(T.block((1, 0))[:7, :7], B1)
    np.testing.assert_array_equal(T.block((1, 0))[7:, 7:], -B1)
    assert not np.any(T.block((1, 0))[:7, 7:])
    assert T.is_block_diagonal()


def test_cubic_forcing_against_quadrature():
    prof = default_profile(0.2)
    model = NlsModel(forcing=ForcingSpec(CUBIC, profile=prof), truncation=Truncation(4, 5, 4))
    T = build_T(model)
    w = _profile_fn(prof)
    for h in [(0, 0), (1, 0), (-1, 1), (2, 0), (0, 2)]:
        blk = T.block(h)
        np.testing.assert_allclose(blk[:6, :6], _phys_matrix(lambda a, b, t: 2 * np.abs(w(a, b, t)) ** 2, h, 5),
                                   atol=1e-12)
        np.testing.assert_allclose(blk[:6, 6:], -_phys_matrix(lambda a, b, t: w(a, b, t) ** 2, h, 5), atol=1e-12)
        np.testing.assert_allclose(blk[6:, :6], _phys_matrix(lambda a, b, t: np.conj(w(a, b, t)) ** 2, h, 5),
                                   atol=1e-12)


@pytest.mark.parametrize("mode", [LINEAR, CUBIC])
def test_initial_remainder_is_hamiltonian(mode):
    fs = ForcingSpec(CUBIC, profile=default_profile()) if mode == CUBIC else None
    model = NlsModel(forcing=fs, truncation=Truncation(4, 8, 4))
    R0 = initial_remainder(model)
    assert check_hamiltonian(R0, 1e-14).passed
    assert self_adjoint_residual(R0) <= 1e-14 * s_norm(R0, 2.0)


@given(st.integers(0, 2**32 - 1), st.booleans())
def test_random_hamiltonian_satisfies_identities(seed, block_diag):
    R = random_hamiltonian(2, 2, 4, np.random.default_rng(seed), block_diagonal=block_diag)
    assert check_hamiltonian(R, 1e-13).passed
    assert self_adjoint_residual(R) <= 1e-13 * s_norm(R, 2.0)
    assert R.is_block_diagonal() == block_diag


def test_broken_hamiltonian_is_located(rng):
    R = random_hamiltonian(2, 1, 3, rng)
    R.coeffs[2, 1, 1, 2] += 0.5
    rep = check_hamiltonian(R, 1e-10)
    assert not rep.passed
    h, m, a, mp, ap, _ = rep.location
    assert (m, a, mp, ap) in {(1, 1, 2, 1), (2, 1, 1, 1)}
    assert h in {(1, 0), (-1, 0)}


def test_forcing_validation():
    bad = {(1, 0): CentralFunction({1: 1.0j}), (-1, 0): CentralFunction({1: 1.0j})}
    with pytest.raises(ValueError, match="not real"):
        ForcingSpec(LINEAR, bad)
    with pytest.raises(ValueError):
        ForcingSpec("quartic")
    fs = ForcingSpec.from_records(LINEAR, [((0, 0), 2, 1.0, 0.0), ((3, 0), 1, 0.5, 0), ((-3, 0), 1, 0.5, 0)])
    assert fs.support() == 3
    with pytest.raises(AliasingError):
        build_T(NlsModel(forcing=fs, truncation=Truncation(4, 6, 2)))


def test_model_validation():
    with pytest.raises(ValueError):
        NlsModel(mass=0.0)
    with pytest.raises(ValueError):
        NlsModel(eps=-1.0)
    with pytest.raises(ValueError):
        Truncation(0, 4, 4)


def test_diagonal_part():
    D = build_diagonal(NlsModel(truncation=Truncation(4, 3, 4)))
    np.testing.assert_allclose(D.mu, [1, 1.375, 2, 2.875])
    np.testing.assert_allclose(D.signed(), [1, 1.375, 2, 2.875, -1, -1.375, -2, -2.875])
    D1 = D.corrected(np.full(4, 0.1))
    assert D1.step == 1
    np.testing.assert_allclose(D1.mu, D.mu + 0.1)
    with pytest.raises(ValueError):
        DiagonalPart(np.zeros(3), np.zeros(2))
