"""One KAM step: screen the divisors, solve the homological equation, conjugate.

Conventions.  ``L = D + R`` with ``D = diag(i (lam w.l + a mu_m))`` never
stored; on a block at time shift ``h = l - l'`` the commutator with ``D`` is
multiplication by ``-i delta`` where

    delta = lam w.h + a mu_m - a' mu_m'.

A step solves ``Pi_N R + [A, D] = diag R`` and replaces ``L`` by
``exp(A) L exp(-A)``, i.e. ``h = exp(-A) h_new``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .decay_norm import (
    ToeplitzBlockOperator,
    commutator,
    distance_table,
    retruncate,
    s_norm,
    storage_labels,
    smooth_project,
)
from .lattice import integer_box
from .linop import DiagonalPart, check_hamiltonian, self_adjoint_residual

__all__ = [
    "DiagonalPart",
    "StepDiagnostics",
    "ScreenResult",
    "SmallDivisorError",
    "MelnikovFailure",
    "SeriesDivergence",
    "StepParams",
    "small_divisor",
    "divisor_table",
    "melnikov_screen",
    "solve_homological",
    "homological_residual",
    "conjugate",
    "kam_single_step",
]


class SmallDivisorError(ArithmeticError):
    """Division by a divisor that violates the screened lower bound."""

    def __init__(self, witness, value, bound):
        super().__init__(f"divisor {value:.3e} below {bound:.3e} at {witness}")
        self.witness = witness
        self.value = value
        self.bound = bound


class MelnikovFailure(Exception):
    def __init__(self, screen: "ScreenResult"):
        super().__init__(f"Melnikov screen failed at {screen.witness} (ratio {screen.min_ratio:.3e})")
        self.screen = screen


class SeriesDivergence(ArithmeticError):
    def __init__(self, norms):
        super().__init__(f"Lie series stopped contracting: term norms {norms[-4:]}")
        self.norms = norms


@dataclass
class StepDiagnostics:
    step: int = 0
    N: float = 0.0
    R_s0_before: float = 0.0
    R_s_before: float = 0.0
    R_sb_before: float = 0.0
    R_s0_after: float = 0.0
    R_s_after: float = 0.0
    R_sb_after: float = 0.0
    A_s0: float = 0.0
    A_s: float = 0.0
    divisors_screened: int = 0
    min_divisor: float = math.inf
    truncation_tail: float = 0.0
    hamiltonian_residual: float = 0.0
    eigen_shift: float = 0.0
    imag_residue: float = 0.0
    sign_asymmetry: float = 0.0
    series_terms: tuple = (0, 0)

    def row(self) -> dict:
        out = dict(self.__dict__)
        out["series_terms"] = "/".join(str(x) for x in self.series_terms)
        return out


@dataclass(frozen=True)
class ScreenResult:
    passed: bool
    witness: tuple | None
    min_ratio: float
    count: int


@dataclass(frozen=True)
class StepParams:
    N: float
    gamma: float
    tau: float
    s0: float = 2.0
    s: float = 4.0
    beta: float = 35.0
    H_cap: int = 6
    series_tol: float = 1e-14
    max_terms: int = 60


def small_divisor(h, m: int, a: int, mp: int, ap: int, lam: float, D: DiagonalPart, omega_tilde) -> float:
    """``lam w.h + a mu_m - a' mu_m'``."""
    wh = float(np.dot(omega_tilde, h)) if len(h) else 0.0
    return lam * wh + a * D.mu[m] - ap * D.mu[mp]


def divisor_table(D: DiagonalPart, lam: float, omega_tilde, d: int, H: int) -> np.ndarray:
    """``delta`` for every stored entry of an operator with support ``H``."""
    r = np.arange(-H, H + 1)
    wh = np.zeros((2 * H + 1,) * d)
    for ax in range(d):
        shape = [1] * d
        shape[ax] = -1
        wh = wh + omega_tilde[ax] * r.reshape(shape)
    sgn = D.signed()
    return lam * wh[..., None, None] + sgn[:, None] - sgn[None, :]


def _bracket(h: np.ndarray) -> np.ndarray:
    return np.maximum(1.0, np.abs(h).max(axis=-1, initial=0)).astype(float)


def _canonical(h, m, a, mp, ap, delta):
    # (h, k, k') and (-h, k', k) carry opposite divisors; report the nonnegative one
    if delta < 0:
        return tuple(-x for x in h), mp, ap, m, a
    return tuple(h), m, a, mp, ap


def melnikov_screen(D: DiagonalPart, lam: float, gamma: float, tau: float, N: float, omega_tilde) -> ScreenResult:
    """Check ``|delta| >= gamma <h>^-tau`` for ``|h| <= N`` and all label/sign pairs."""
    omega_tilde = np.asarray(omega_tilde, dtype=float)
    d = len(omega_tilde)
    hs = integer_box(d, int(math.floor(N)))
    hs = np.vstack([np.zeros((1, d), dtype=np.int64), hs[np.abs(hs).max(axis=1) > 0]]) if d else hs
    n_lab = D.M_max + 1
    count = len(hs) * (2 * n_lab) ** 2 - 2 * n_lab
    if gamma <= 0:
        return ScreenResult(True, None, math.inf, count)
    wl = hs @ omega_tilde
    lw = _bracket(hs) ** tau
    mu = D.mu
    if np.all(np.diff(mu) > 0):
        best, arg = kernels.resonance_scan(np.array([lam]), mu[None, :], wl, lw)
        val, (li, m, a, mp, ap) = float(best[0]), arg[0]
    else:  # unsorted spectrum: direct enumeration
        sgn = D.signed()
        lab, sg = storage_labels(D.M_max)
        tab = np.abs(lam * wl[:, None, None] + sgn[None, :, None] - sgn[None, None, :]) * lw[:, None, None]
        tab[0][np.eye(len(sgn), dtype=bool)] = np.inf
        i = int(np.argmin(tab))
        li, p, q = np.unravel_index(i, tab.shape)
        val, m, a, mp, ap = float(tab.flat[i]), lab[p], sg[p], lab[q], sg[q]
    h = tuple(int(x) for x in hs[li])
    delta = small_divisor(h, int(m), int(a), int(mp), int(ap), lam, D, omega_tilde)
    witness = _canonical(h, int(m), int(a), int(mp), int(ap), delta)
    ratio = val / gamma
    return ScreenResult(ratio >= 1.0, witness, ratio, count)


def solve_homological(R: ToeplitzBlockOperator, D: DiagonalPart, lam: float, N: float, gamma: float,
                      tau: float, omega_tilde) -> ToeplitzBlockOperator:
    """``A = R / (i delta)`` on entries with ``0 < dist <= N``, zero elsewhere."""
    omega_tilde = np.asarray(omega_tilde, dtype=float)
    delta = divisor_table(D, lam, omega_tilde, R.d, R.H)
    dist = distance_table(R)
    target = (dist > 0) & (dist <= N) & (R.coeffs != 0)
    hs = np.indices(R.coeffs.shape[:R.d]).reshape(R.d, -1).T - R.H if R.d else np.zeros((1, 0), int)
    bound = gamma / _bracket(hs).reshape(R.coeffs.shape[:R.d]) ** tau
    bad = target & (np.abs(delta) < bound[..., None, None])
    if gamma > 0 and bad.any():
        i = int(np.flatnonzero(bad)[np.argmin(np.abs(delta[bad]))])
        *hidx, p, q = np.unravel_index(i, delta.shape)
        m, a = storage_labels(R.M_max)
        h = tuple(int(x) - R.H for x in hidx)
        w = _canonical(h, int(m[p]), int(a[p]), int(m[q]), int(a[q]), float(delta.flat[i]))
        raise SmallDivisorError(w, abs(float(delta.flat[i])), float(bound[tuple(hidx)]))
    coeffs = np.zeros_like(R.coeffs)
    coeffs[target] = R.coeffs[target] / (1j * delta[target])
    return ToeplitzBlockOperator(coeffs, R.M_max, R.group, R.d)


def homological_residual(R, A, D, lam, N, omega_tilde) -> ToeplitzBlockOperator:
    """``Pi_N R + [A, D] - diag R`` computed entrywise in the shift representation."""
    H = max(R.H, A.H)
    R, A = R.resized(H), A.resized(H)
    delta = divisor_table(D, lam, np.asarray(omega_tilde, float), R.d, H)
    low, _ = smooth_project(R, N)
    dist = distance_table(R)
    diag = np.where(dist == 0, R.coeffs, 0)
    return ToeplitzBlockOperator(low.coeffs - 1j * delta * A.coeffs - diag, R.M_max, R.group, R.d)


def _lie_series(A, X, factor, tol, H_cap, s0, max_terms):
    """``sum_{k>=1} ad_A^k(X) / factor(k)``; returns (sum, norms, dropped mass)."""
    total = ToeplitzBlockOperator.zeros(X.d, 0, X.M_max, X.group)
    term = X
    norms = []
    dropped = 0.0
    rising = 0
    for k in range(1, max_terms + 1):
        term = commutator(A, term)
        term, cut = retruncate(term, H_cap, s0)
        dropped += cut
        nrm = s_norm(term, s0) / factor(k)
        norms.append(nrm)
        total = total + term * (1.0 / factor(k))
        if nrm < tol:
            break
        rising = rising + 1 if len(norms) > 1 and nrm >= norms[-2] else 0
        if rising >= 3:
            raise SeriesDivergence(norms)
    return total, norms, dropped


def conjugate(D: DiagonalPart, R: ToeplitzBlockOperator, A: ToeplitzBlockOperator, N: float, tol: float | None = None,
              *, s0: float = 2.0, s: float = 4.0, beta: float = 35.0, H_cap: int = 6, max_terms: int = 60):
    """``exp(A) (D + R) exp(-A) = D_1 + R_1``.

    ``D_1`` takes the real part of the shift-0 diagonal of ``R`` (read on the
    ``+`` sign and mirrored); whatever the projection leaves out stays in
    ``R_1`` so the identity is exact up to the series cut and the shift cap.
    """
    diag_ = StepDiagnostics(N=N)
    nR = s_norm(R, s0)
    diag_.R_s0_before, diag_.R_s_before, diag_.R_sb_before = nR, s_norm(R, s), s_norm(R, s + beta)
    diag_.A_s0, diag_.A_s = s_norm(A, s0), s_norm(A, s)
    if tol is None:
        tol = 1e-14 * nR
    k = R.M_max + 1
    zero = (R.H,) * R.d
    rd = np.diag(R.coeffs[zero]).copy() if R.H >= 0 else np.zeros(2 * k, complex)
    # a = +: r += R_mm / i ; a = -: r += R_mm / (-i)
    c_plus = rd[:k] / 1j
    c_minus = rd[k:] / -1j
    dr = c_plus.real
    diag_.imag_residue = float(np.abs(c_plus.imag).max(initial=0.0))
    diag_.sign_asymmetry = float(np.abs(c_minus - c_plus).max(initial=0.0))
    diag_.eigen_shift = float(np.abs(dr).max(initial=0.0))
    D1 = D.corrected(dr)

    low, high = smooth_project(R, N)
    dist = distance_table(R)
    diagR = ToeplitzBlockOperator(np.where(dist == 0, R.coeffs, 0), R.M_max, R.group, R.d)
    Y = diagR - low
    leftover = diagR.copy()
    leftover.coeffs[zero] -= np.diag(np.concatenate([1j * dr, -1j * dr]))

    R1 = high + leftover
    terms = [0, 0]
    if np.any(A.coeffs) and nR > 0:
        sR, nr, cut1 = _lie_series(A, R, math.factorial, tol, H_cap, s0, max_terms)
        sY, ny, cut2 = _lie_series(A, Y, lambda j: math.factorial(j + 1), tol, H_cap, s0, max_terms)
        R1 = R1 + sR + sY
        terms = [len(nr), len(ny)]
        diag_.truncation_tail = cut1 + cut2
    R1, cut = retruncate(R1.trimmed(), H_cap, s0)
    diag_.truncation_tail += cut
    diag_.series_terms = tuple(terms)
    diag_.R_s0_after, diag_.R_s_after, diag_.R_sb_after = s_norm(R1, s0), s_norm(R1, s), s_norm(R1, s + beta)
    diag_.hamiltonian_residual = max(self_adjoint_residual(R1, s0), check_hamiltonian(R1, math.inf, s0).worst)
    return D1, R1, diag_


def kam_single_step(D: DiagonalPart, R: ToeplitzBlockOperator, lam: float, params: StepParams, omega_tilde):
    """Screen, solve and conjugate; raises MelnikovFailure when the screen fails.

    A vanishing remainder needs no division, so the screen is skipped for it.
    """
    if not np.any(R.coeffs):
        screen = ScreenResult(True, None, math.inf, 0)
    else:
        screen = melnikov_screen(D, lam, params.gamma, params.tau, params.N, omega_tilde)
    if not screen.passed:
        raise MelnikovFailure(screen)
    A = solve_homological(R, D, lam, params.N, params.gamma, params.tau, omega_tilde)
    nR = s_norm(R, params.s0)
    D1, R1, diag_ = conjugate(D, R, A, params.N, params.series_tol * nR, s0=params.s0, s=params.s,
                              beta=params.beta, H_cap=params.H_cap, max_terms=params.max_terms)
    diag_.step = D.step
    diag_.divisors_screened = screen.count
    delta = divisor_table(D, lam, np.asarray(omega_tilde, float), A.d, A.H)
    nz = A.coeffs != 0
    diag_.min_divisor = float(np.abs(delta[nz]).min()) if nz.any() else math.inf
    return D1, R1, A, diag_
