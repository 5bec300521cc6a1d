"""Independent checks on the materialized lattice.

Everything here works with explicit (sparse or dense) matrices over the
sites ``|l|_inf <= L`` and never calls the shift-convolution algebra, so it
can serve as an oracle for it.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.linalg import expm
from scipy.sparse.linalg import expm_multiply

from .decay_norm import ToeplitzBlockOperator, lattice_sites, materialize, s_norm, storage_labels
from .linop import DiagonalPart


def site_table(d: int, L: int, M_max: int):
    """``(l, m, a)`` for every row of a materialized operator."""
    ls = lattice_sites(d, L)
    m, a = storage_labels(M_max)
    n = len(m)
    return np.repeat(ls, n, axis=0), np.tile(m, len(ls)), np.tile(a, len(ls))


def site_diagonal(D: DiagonalPart, lam: float, omega, L: int) -> sp.csr_matrix:
    """``diag(i (lam w.l + a mu_m))`` on the materialized lattice."""
    omega = np.asarray(omega, float)
    l, m, a = site_table(len(omega), L, D.M_max)
    return sp.diags(1j * (lam * (l @ omega) + a * D.mu[m])).tocsr()


def _entry_distances(mat: sp.coo_matrix, d: int, L: int, M_max: int, step: float) -> np.ndarray:
    l, m, a = site_table(d, L, M_max)
    r, c = mat.row, mat.col
    dl = np.abs(l[r] - l[c]).max(axis=1, initial=0).astype(float)
    dist = np.maximum(dl, np.abs(m[r] - m[c]) * step)
    flip = (dl == 0) & (m[r] == m[c]) & (a[r] != a[c])
    return np.where(flip, 1.0, dist)


def project_by_distance(mat, d: int, L: int, M_max: int, step: float, lo: float, hi: float) -> sp.csr_matrix:
    """Keep the entries whose site distance lies in ``[lo, hi]``."""
    coo = sp.coo_matrix(mat)
    dist = _entry_distances(coo, d, L, M_max, step)
    keep = (dist >= lo) & (dist <= hi)
    return sp.csr_matrix((coo.data[keep], (coo.row[keep], coo.col[keep])), shape=coo.shape)


def homological_residual_materialized(R: ToeplitzBlockOperator, A: ToeplitzBlockOperator, D: DiagonalPart,
                                      lam: float, N: float, omega, L: int) -> tuple[float, float]:
    """Frobenius norm of ``Pi_N R + [A, D] - diag R`` and its ratio to ``|R|``."""
    d, M, step = R.d, R.M_max, R.group.label_step
    Rm = materialize(R, L)
    Am = materialize(A, L)
    Dm = site_diagonal(D, lam, omega, L)
    low = project_by_distance(Rm, d, L, M, step, 0.0, N)
    diag = project_by_distance(Rm, d, L, M, step, 0.0, 0.0)
    res = low + (Am @ Dm - Dm @ Am) - diag
    nr = sp.linalg.norm(Rm)
    a = float(sp.linalg.norm(res))
    return a, (a / nr if nr else a)


def _center_row_conjugation(Am, Lm, n: int, center: int, dense: bool) -> np.ndarray:
    """Row block ``center`` of ``exp(A) L exp(-A)``."""
    if dense:
        Ad = Am.toarray()
        full = expm(Ad) @ Lm.toarray() @ expm(-Ad)
        return full[center * n:(center + 1) * n]
    E = np.zeros((Am.shape[0], n), dtype=np.complex128)
    E[center * n:(center + 1) * n] = np.eye(n)
    # rows of exp(A) L exp(-A) are columns of exp(-A)^T L^T exp(A)^T
    v = expm_multiply(Am.T.tocsc(), E)
    w = Lm.T @ v
    u = expm_multiply((-Am.T).tocsc(), w)
    return u.T


@dataclass(frozen=True)
class ConjugationCheck:
    relative: float
    absolute: float
    reference: float
    interior: int


def conjugation_oracle(D: DiagonalPart, R: ToeplitzBlockOperator, A: ToeplitzBlockOperator,
                       D1: DiagonalPart, R1: ToeplitzBlockOperator, lam: float, omega, L: int,
                       interior: int, dense: bool = False, s0: float = 2.0) -> ConjugationCheck:
    """Compare ``D1 + R1`` with the materialized ``exp(A) (D + R) exp(-A)``.

    The conjugated lattice operator is Toeplitz, so its centre row block
    holds every shift; shifts ``|h| <= interior`` are read off it (the
    centre is the site farthest from the lattice boundary).  The difference
    is measured in the s0 norm relative to ``|R|_{s0}``.
    """
    omega = np.asarray(omega, float)
    d, M = R.d, R.M_max
    n = 2 * (M + 1)
    Lm = (site_diagonal(D, lam, omega, L) + materialize(R, L)).tocsr()
    Am = materialize(A, L).tocsr()
    ls = lattice_sites(d, L)
    center = int(np.flatnonzero((ls == 0).all(axis=1))[0])
    row = _center_row_conjugation(Am, Lm, n, center, dense)
    # remove the new diagonal part, read back shifts
    row = row.copy()
    row[:, center * n:(center + 1) * n] -= np.diag(1j * D1.signed())
    out = ToeplitzBlockOperator.zeros(d, interior, M, R.group)
    for h in out.shift_vectors():
        j = int(np.flatnonzero((ls == -h).all(axis=1))[0])
        out.coeffs[out._index(h)] = row[:, j * n:(j + 1) * n]
    diff = out - R1.resized(interior)
    ref = s_norm(R, s0)
    a = s_norm(diff, s0)
    return ConjugationCheck(a / ref if ref else a, a, ref, interior)


def exp_oracle(A: ToeplitzBlockOperator, L: int, interior: int) -> ToeplitzBlockOperator:
    """Shifts ``|h| <= interior`` of the materialized ``exp(A)``, read from the centre row."""
    d, M = A.d, A.M_max
    n = 2 * (M + 1)
    Am = materialize(A, L).tocsr()
    ls = lattice_sites(d, L)
    center = int(np.flatnonzero((ls == 0).all(axis=1))[0])
    E = np.zeros((Am.shape[0], n), dtype=np.complex128)
    E[center * n:(center + 1) * n] = np.eye(n)
    row = expm_multiply(Am.T.tocsc(), E).T
    out = ToeplitzBlockOperator.zeros(d, interior, M, A.group)
    for h in out.shift_vectors():
        j = int(np.flatnonzero((ls == -h).all(axis=1))[0])
        out.coeffs[out._index(h)] = row[:, j * n:(j + 1) * n]
    return out
