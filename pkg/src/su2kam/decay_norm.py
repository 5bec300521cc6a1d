"""Toeplitz-in-time block operators and the s-decay norm.

An operator on the lattice of sites ``(l, m, a)`` that depends on the time
indices only through ``h = l - l'`` is stored as a dense array
``coeffs[h_1 + H, ..., h_d + H, p, q]`` where ``p, q`` run over the
phase-space storage order ``(0,+), ..., (M,+), (0,-), ..., (M,-)``.
"""
from __future__ import annotations

import itertools
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft
import scipy.sparse as sp

from . import kernels
from .lattice import GroupSpec

_SU2 = GroupSpec.su2()


def storage_labels(M_max: int) -> tuple[np.ndarray, np.ndarray]:
    """Label and sign of each phase-space storage index."""
    m = np.concatenate([np.arange(M_max + 1), np.arange(M_max + 1)])
    a = np.concatenate([np.ones(M_max + 1, int), -np.ones(M_max + 1, int)])
    return m, a


def storage_index(m: int, a: int, M_max: int) -> int:
    if not 0 <= m <= M_max:
        raise IndexError(f"label {m} outside 0..{M_max}")
    return m if a == 1 else M_max + 1 + m


def phase_space_weights(M_max: int, g: GroupSpec, s: float) -> np.ndarray:
    """``|j + rho|^s`` per storage index."""
    w = np.arange(M_max + 1) * g.label_step + g.rho
    return np.concatenate([w, w]) ** s


def vector_norm(v: np.ndarray, s: float, g: GroupSpec, M_max: int) -> float:
    """H^s norm of a phase-space vector (last axis in storage order)."""
    w = phase_space_weights(M_max, g, s)
    return float(np.sqrt(np.sum(np.abs(np.asarray(v)) ** 2 * w**2)))


class ToeplitzBlockOperator:
    """Toeplitz-in-time operator with ``|h|_inf <= H`` and labels ``0..M_max``.

    Treated as immutable: every operation returns a new instance.  ``d = 0``
    gives a plain phase-space matrix.
    """

    __slots__ = ("coeffs", "group", "M_max", "d")

    def __init__(self, coeffs, M_max: int, group: GroupSpec = _SU2, d: int | None = None):
        c = np.asarray(coeffs, dtype=np.complex128)
        n = 2 * (M_max + 1)
        if c.ndim < 2 or c.shape[-2:] != (n, n):
            raise ValueError(f"blocks must be {n}x{n} for M_max={M_max}")
        if d is None:
            d = c.ndim - 2
        if c.ndim != d + 2 or len(set(c.shape[:d])) > 1 or any(x % 2 == 0 for x in c.shape[:d]):
            raise ValueError("shift axes must be equal and odd, (2H+1,)*d")
        self.coeffs = c
        self.M_max = int(M_max)
        self.group = group
        self.d = int(d)

    # -- construction -------------------------------------------------------

    @classmethod
    def zeros(cls, d: int, H: int, M_max: int, group: GroupSpec = _SU2):
        n = 2 * (M_max + 1)
        return cls(np.zeros((2 * H + 1,) * d + (n, n), dtype=np.complex128), M_max, group, d)

    @classmethod
    def identity(cls, d: int, M_max: int, group: GroupSpec = _SU2, H: int = 0):
        out = cls.zeros(d, H, M_max, group)
        out.coeffs[(H,) * d] = np.eye(2 * (M_max + 1))
        return out

    @classmethod
    def from_shifts(cls, shifts: dict, d: int, M_max: int, group: GroupSpec = _SU2, H: int | None = None):
        if H is None:
            H = max((max((abs(x) for x in h), default=0) for h in shifts), default=0)
        out = cls.zeros(d, H, M_max, group)
        for h, block in shifts.items():
            out.coeffs[out._index(h)] += block
        return out

    # -- basic structure ----------------------------------------------------

    @property
    def H(self) -> int:
        return (self.coeffs.shape[0] - 1) // 2 if self.d else 0

    @property
    def n(self) -> int:
        return self.coeffs.shape[-1]

    def _index(self, h) -> tuple:
        h = tuple(int(x) for x in h)
        if len(h) != self.d:
            raise ValueError(f"shift {h} has wrong dimension (d={self.d})")
        if any(abs(x) > self.H for x in h):
            raise IndexError(f"shift {h} outside |h| <= {self.H}")
        return tuple(x + self.H for x in h)

    def block(self, h) -> np.ndarray:
        """Block at shift ``h`` (zero outside the stored support)."""
        h = tuple(h)
        if any(abs(x) > self.H for x in h):
            return np.zeros((self.n, self.n), dtype=np.complex128)
        return self.coeffs[self._index(h)]

    def entry(self, h, m: int, a: int, mp: int, ap: int) -> complex:
        p, q = storage_index(m, a, self.M_max), storage_index(mp, ap, self.M_max)
        return complex(self.block(h)[p, q])

    def shift_vectors(self) -> np.ndarray:
        """All stored shifts in array order, shape ``(S, d)``."""
        r = range(-self.H, self.H + 1)
        return np.array(list(itertools.product(r, repeat=self.d)), dtype=np.int64).reshape(-1, self.d)

    def flat(self) -> np.ndarray:
        return self.coeffs.reshape(-1, self.n, self.n)

    @property
    def shifts(self) -> dict:
        """Nonzero blocks keyed by shift."""
        out = {}
        for h, blk in zip(self.shift_vectors(), self.flat()):
            if np.any(blk):
                out[tuple(int(x) for x in h)] = blk
        return out

    def support(self) -> int:
        """Largest ``|h|_inf`` carrying a nonzero block (-1 if the operator vanishes)."""
        nz = np.flatnonzero(np.abs(self.flat()).max(axis=(1, 2), initial=0.0) > 0)
        if not len(nz):
            return -1
        return int(np.abs(self.shift_vectors()[nz]).max(initial=0))

    def resized(self, H: int) -> "ToeplitzBlockOperator":
        """Pad or cut to shift support ``H`` (cutting drops blocks silently; see ``retruncate``)."""
        if self.d == 0 or H == self.H:
            return self
        out = ToeplitzBlockOperator.zeros(self.d, H, self.M_max, self.group)
        k = min(H, self.H)
        src = tuple(slice(self.H - k, self.H + k + 1) for _ in range(self.d))
        dst = tuple(slice(H - k, H + k + 1) for _ in range(self.d))
        out.coeffs[dst] = self.coeffs[src]
        return out

    def trimmed(self) -> "ToeplitzBlockOperator":
        """Smallest shift support holding every nonzero block."""
        return self.resized(max(self.support(), 0))

    def _check(self, other: "ToeplitzBlockOperator"):
        if self.M_max != other.M_max or self.d != other.d or self.group != other.group:
            raise ValueError("operators have mismatched truncations or groups")

    def _aligned(self, other):
        self._check(other)
        H = max(self.H, other.H)
        return self.resized(H).coeffs, other.resized(H).coeffs

    def __add__(self, other):
        a, b = self._aligned(other)
        return ToeplitzBlockOperator(a + b, self.M_max, self.group, self.d)

    def __sub__(self, other):
        a, b = self._aligned(other)
        return ToeplitzBlockOperator(a - b, self.M_max, self.group, self.d)

    def __neg__(self):
        return ToeplitzBlockOperator(-self.coeffs, self.M_max, self.group, self.d)

    def __mul__(self, z):
        return ToeplitzBlockOperator(self.coeffs * z, self.M_max, self.group, self.d)

    __rmul__ = __mul__

    def __matmul__(self, other):
        return compose(self, other)

    def copy(self):
        return ToeplitzBlockOperator(self.coeffs.copy(), self.M_max, self.group, self.d)

    def adjoint(self) -> "ToeplitzBlockOperator":
        """Lattice adjoint: block at ``h`` becomes ``conj(block(-h)).T``."""
        c = self.coeffs[(slice(None, None, -1),) * self.d]
        return ToeplitzBlockOperator(np.conj(np.swapaxes(c, -1, -2)), self.M_max, self.group, self.d)

    def is_block_diagonal(self) -> bool:
        """True when no entry couples the two signs."""
        k = self.M_max + 1
        c = self.coeffs
        return not (np.any(c[..., :k, k:]) or np.any(c[..., k:, :k]))

    def allclose(self, other, atol=1e-12) -> bool:
        a, b = self._aligned(other)
        return bool(np.allclose(a, b, rtol=0.0, atol=atol))

    def __repr__(self):
        return (f"ToeplitzBlockOperator(d={self.d}, H={self.H}, M_max={self.M_max}, "
                f"group={self.group.kind}, nnz_shifts={len(self.shifts)})")


# -- norms ------------------------------------------------------------------


def profile_table(M: ToeplitzBlockOperator) -> np.ndarray:
    """``[M(i)]`` for every ``i = (h, dm)``, shape ``(2H+1,)*d + (2M+1,)``."""
    tab = kernels.block_profile_table(M.flat(), M.M_max)
    return tab.reshape(M.coeffs.shape[:-2] + (2 * M.M_max + 1,))


def block_profile(M: ToeplitzBlockOperator, i) -> float:
    """Largest 2x2 sign-block norm over sites separated by ``i = (h, dm)``."""
    h, dm = i
    h = tuple(h)
    if any(abs(x) > M.H for x in h) or abs(dm) > M.M_max:
        return 0.0
    return float(profile_table(M)[M._index(h) + (dm + M.M_max,)])


def _bracket_weights(d: int, H: int, M_max: int, g: GroupSpec) -> np.ndarray:
    """``<i> = max(1, |h|_inf, |dm| * step)`` on the profile grid."""
    r = np.abs(np.arange(-H, H + 1))
    hmax = np.zeros((2 * H + 1,) * d)
    for ax in range(d):
        shape = [1] * d
        shape[ax] = -1
        hmax = np.maximum(hmax, r.reshape(shape))
    dj = np.abs(np.arange(-M_max, M_max + 1)) * g.label_step
    return np.maximum(1.0, np.maximum(hmax[..., None], dj))


def s_norm(M: ToeplitzBlockOperator, s: float) -> float:
    if s < 0:
        raise ValueError("s must be nonnegative")
    tab = profile_table(M)
    w = _bracket_weights(M.d, M.H, M.M_max, M.group)
    return float(np.sqrt(np.sum(tab**2 * w ** (2 * s))))


@dataclass
class ParamFamily:
    """Operators sampled on a uniform parameter grid."""

    lams: np.ndarray
    samples: list
    grid_step: float = field(init=False)

    def __post_init__(self):
        self.lams = np.asarray(self.lams, dtype=float)
        if len(self.lams) != len(self.samples) or not len(self.samples):
            raise ValueError("need one sample per grid point")
        for x in self.samples[1:]:
            self.samples[0]._check(x)
        if len(self.lams) > 1:
            steps = np.diff(self.lams)
            if not np.allclose(steps, steps[0], rtol=1e-9, atol=0) or steps[0] <= 0:
                raise ValueError("grid must be uniform and increasing")
            self.grid_step = float(steps[0])
        else:
            self.grid_step = 0.0


@dataclass(frozen=True)
class LipNorm:
    sup: float
    lip: float
    gamma: float
    single_sample: bool = False

    @property
    def value(self) -> float:
        return self.sup + self.gamma * self.lip


def lip_norm(F: ParamFamily, s: float, gamma: float) -> LipNorm:
    """``sup |M|_s + gamma * max |M(l_i+1) - M(l_i)|_s / step`` over adjacent pairs."""
    sup = max(s_norm(M, s) for M in F.samples)
    if len(F.samples) < 2:
        warnings.warn("single-sample family: Lipschitz part reported as 0", stacklevel=2)
        return LipNorm(sup, 0.0, gamma, True)
    lip = max(s_norm(b - a, s) for a, b in zip(F.samples, F.samples[1:])) / F.grid_step
    return LipNorm(sup, lip, gamma)


# -- algebra ----------------------------------------------------------------


def _conv_direct(a: np.ndarray, b: np.ndarray, d: int, Ha: int, Hb: int) -> np.ndarray:
    n = a.shape[-1]
    Ho = Ha + Hb
    out = np.zeros((2 * Ho + 1,) * d + (n, n), dtype=np.complex128)
    af = a.reshape(-1, n, n)
    bf = b.reshape(-1, n, n)
    a_nz = np.flatnonzero(np.abs(af).max(axis=(1, 2), initial=0.0) > 0)
    b_nz = np.flatnonzero(np.abs(bf).max(axis=(1, 2), initial=0.0) > 0)
    if not len(a_nz) or not len(b_nz):
        return out
    a_idx = np.array(np.unravel_index(a_nz, (2 * Ha + 1,) * d)).T
    b_idx = np.array(np.unravel_index(b_nz, (2 * Hb + 1,) * d)).T
    bstack = bf[b_nz]
    for k, ia in zip(a_nz, a_idx):
        pos = tuple((b_idx + ia).T)
        out[pos] += np.matmul(af[k], bstack)
    return out


def _conv_fft(a: np.ndarray, b: np.ndarray, d: int, Ha: int, Hb: int) -> np.ndarray:
    size = 2 * (Ha + Hb) + 1
    axes = tuple(range(d))
    fa = sfft.fftn(a, s=(size,) * d, axes=axes)
    fb = sfft.fftn(b, s=(size,) * d, axes=axes, overwrite_x=True)
    return sfft.ifftn(np.matmul(fa, fb), axes=axes, overwrite_x=True)


def _nnz_blocks(a: np.ndarray) -> int:
    return int(np.count_nonzero(np.abs(a.reshape(-1, *a.shape[-2:])).max(axis=(1, 2))))


def _use_fft(a, b, d, Ha, Hb) -> bool:
    return _nnz_blocks(a) * _nnz_blocks(b) > 3 * (2 * (Ha + Hb) + 1) ** d


def _conv(a, b, d, Ha, Hb):
    if d == 0:
        return a @ b
    if _use_fft(a, b, d, Ha, Hb):
        return _conv_fft(a, b, d, Ha, Hb)
    return _conv_direct(a, b, d, Ha, Hb)


def _commute(a, b, d, Ha, Hb):
    """``a * b - b * a`` in the shift-convolution sense, sharing the transforms."""
    if d == 0:
        return a @ b - b @ a
    if not _use_fft(a, b, d, Ha, Hb):
        return _conv_direct(a, b, d, Ha, Hb) - _conv_direct(b, a, d, Hb, Ha)
    size = 2 * (Ha + Hb) + 1
    axes = tuple(range(d))
    fa = sfft.fftn(a, s=(size,) * d, axes=axes)
    fb = sfft.fftn(b, s=(size,) * d, axes=axes)
    return sfft.ifftn(np.matmul(fa, fb) - np.matmul(fb, fa), axes=axes, overwrite_x=True)


def compose(A: ToeplitzBlockOperator, B: ToeplitzBlockOperator) -> ToeplitzBlockOperator:
    """Shift-convolution product ``out[h] = sum_{h1 + h2 = h} A[h1] B[h2]``.

    The result has shift support ``H_A + H_B``.  When both factors keep the
    two signs decoupled the sign blocks are multiplied separately.
    """
    A._check(B)
    A, B = A.trimmed(), B.trimmed()
    d, Ha, Hb = A.d, A.H, B.H
    if A.is_block_diagonal() and B.is_block_diagonal():
        k = A.M_max + 1
        n = A.n
        out = np.zeros((2 * (Ha + Hb) + 1,) * d + (n, n), dtype=np.complex128)
        out[..., :k, :k] = _conv(A.coeffs[..., :k, :k], B.coeffs[..., :k, :k], d, Ha, Hb)
        out[..., k:, k:] = _conv(A.coeffs[..., k:, k:], B.coeffs[..., k:, k:], d, Ha, Hb)
    else:
        out = _conv(A.coeffs, B.coeffs, d, Ha, Hb)
    return ToeplitzBlockOperator(out, A.M_max, A.group, d)


def commutator(A: ToeplitzBlockOperator, B: ToeplitzBlockOperator) -> ToeplitzBlockOperator:
    """``A B - B A``."""
    A._check(B)
    A, B = A.trimmed(), B.trimmed()
    d, Ha, Hb = A.d, A.H, B.H
    if A.is_block_diagonal() and B.is_block_diagonal():
        k = A.M_max + 1
        out = np.zeros((2 * (Ha + Hb) + 1,) * d + (A.n, A.n), dtype=np.complex128)
        out[..., :k, :k] = _commute(A.coeffs[..., :k, :k], B.coeffs[..., :k, :k], d, Ha, Hb)
        out[..., k:, k:] = _commute(A.coeffs[..., k:, k:], B.coeffs[..., k:, k:], d, Ha, Hb)
    else:
        out = _commute(A.coeffs, B.coeffs, d, Ha, Hb)
    return ToeplitzBlockOperator(out, A.M_max, A.group, d)


def retruncate(M: ToeplitzBlockOperator, H_cap: int, s: float) -> tuple[ToeplitzBlockOperator, float]:
    """Cut to ``|h|_inf <= H_cap``; returns the cut operator and the s-norm of what was dropped."""
    if M.H <= H_cap:
        return M, 0.0
    kept = M.resized(H_cap)
    dropped = M - kept
    return kept, s_norm(dropped, s)


def distance_table(M: ToeplitzBlockOperator) -> np.ndarray:
    """Site distance for every stored entry, same shape as ``coeffs``."""
    m, a = storage_labels(M.M_max)
    dj = np.abs(m[:, None] - m[None, :]) * M.group.label_step
    r = np.abs(np.arange(-M.H, M.H + 1))
    hmax = np.zeros((2 * M.H + 1,) * M.d)
    for ax in range(M.d):
        shape = [1] * M.d
        shape[ax] = -1
        hmax = np.maximum(hmax, r.reshape(shape))
    dist = np.maximum(hmax[..., None, None], dj)
    flip = (m[:, None] == m[None, :]) & (a[:, None] != a[None, :])
    dist[(M.H,) * M.d][flip] = 1.0
    return dist


def smooth_project(M: ToeplitzBlockOperator, N: float):
    """Split into entries with site distance ``<= N`` and the rest."""
    if N <= 0:
        raise ValueError("N must be positive")
    keep = distance_table(M) <= N
    low = ToeplitzBlockOperator(np.where(keep, M.coeffs, 0), M.M_max, M.group, M.d)
    high = ToeplitzBlockOperator(np.where(keep, 0, M.coeffs), M.M_max, M.group, M.d)
    return low, high


def diagonal_part(M: ToeplitzBlockOperator) -> ToeplitzBlockOperator:
    """Entries at zero site distance: shift 0, the diagonal of the block."""
    out = ToeplitzBlockOperator.zeros(M.d, 0, M.M_max, M.group)
    out.coeffs[(0,) * M.d] = np.diag(np.diag(M.block((0,) * M.d)))
    return out


# -- full-lattice representation -------------------------------------------


def lattice_sites(d: int, L_max: int) -> np.ndarray:
    """Time indices ``|l|_inf <= L_max`` in lexicographic order."""
    r = range(-L_max, L_max + 1)
    return np.array(list(itertools.product(r, repeat=d)), dtype=np.int64).reshape(-1, d)


def materialize(M: ToeplitzBlockOperator, L_max: int, dense: bool = False):
    """Matrix of ``M`` on sites ``|l|_inf <= L_max`` (row block ``l``, column block ``l'``).

    Site ``(l, p)`` sits at row ``index(l) * n + p`` with ``p`` the
    phase-space storage index.
    """
    ls = lattice_sites(M.d, L_max)
    nl, n = len(ls), M.n
    rows, cols, vals = [], [], []
    pi, qi = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    for h, blk in M.shifts.items():
        h = np.array(h)
        for i, l in enumerate(ls):
            lp = l - h
            if np.abs(lp).max(initial=0) > L_max:
                continue
            j = _site_number(lp, L_max)
            nz = blk != 0
            rows.append(i * n + pi[nz])
            cols.append(j * n + qi[nz])
            vals.append(blk[nz])
    size = nl * n
    if rows:
        mat = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(size, size))
    else:
        mat = sp.csr_matrix((size, size), dtype=np.complex128)
    return mat.toarray() if dense else mat


def _site_number(l, L_max: int) -> int:
    k = 0
    for x in l:
        k = k * (2 * L_max + 1) + int(x) + L_max
    return k


def lattice_diagonal(dvec_of_l, d: int, L_max: int) -> sp.csr_matrix:
    """Diagonal lattice matrix with entries ``dvec_of_l(l)`` (a length-n vector) per time block."""
    ls = lattice_sites(d, L_max)
    return sp.diags(np.concatenate([dvec_of_l(l) for l in ls])).tocsr()


def from_materialized(mat, d: int, L_max: int, M_max: int, H: int, group: GroupSpec = _SU2) -> ToeplitzBlockOperator:
    """Read shifts ``|h| <= H`` back from the row block ``l = 0`` of a lattice matrix."""
    if H > L_max:
        raise ValueError("H must not exceed L_max")
    n = 2 * (M_max + 1)
    out = ToeplitzBlockOperator.zeros(d, H, M_max, group)
    i = _site_number((0,) * d, L_max)
    dense_row = mat[i * n:(i + 1) * n]
    dense_row = dense_row.toarray() if sp.issparse(dense_row) else np.asarray(dense_row)
    for h in out.shift_vectors():
        j = _site_number(-h, L_max)
        out.coeffs[out._index(h)] = dense_row[:, j * n:(j + 1) * n]
    return out


def phase_space_slice(M: ToeplitzBlockOperator, phi) -> np.ndarray:
    """``T(phi) = sum_h M[h] exp(i h.phi)`` as an ``n x n`` matrix."""
    phi = np.asarray(phi, dtype=float)
    if M.d == 0:
        return M.coeffs.copy()
    h = M.shift_vectors()
    ph = np.exp(1j * (h @ phi))
    return np.tensordot(ph, M.flat(), axes=1)


def as_phase_space(mat: np.ndarray, M_max: int, group: GroupSpec = _SU2) -> ToeplitzBlockOperator:
    return ToeplitzBlockOperator(mat, M_max, group, 0)


# -- dump format ------------------------------------------------------------

_HEADER = "# toeplitz-block-operator"


def dump(M: ToeplitzBlockOperator, path) -> None:
    """Columnar text: ``h_1..h_d m a m' a' re im`` with hexadecimal floats."""
    m, a = storage_labels(M.M_max)
    lines = [f"{_HEADER} d={M.d} H={M.H} M_max={M.M_max} group={M.group.kind}"]
    for h, blk in zip(M.shift_vectors(), M.flat()):
        ps, qs = np.nonzero(blk)
        hs = " ".join(str(int(x)) for x in h)
        for p, q in zip(ps, qs):
            z = complex(blk[p, q])
            lines.append(f"{hs} {m[p]} {a[p]:+d} {m[q]} {a[q]:+d} {z.real.hex()} {z.imag.hex()}".lstrip())
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load(path) -> ToeplitzBlockOperator:
    with open(path) as fh:
        head = fh.readline().split()
        if " ".join(head[:2]) != _HEADER:
            raise ValueError(f"{path}: not an operator dump")
        meta = dict(kv.split("=") for kv in head[2:])
        d, H, M_max = int(meta["d"]), int(meta["H"]), int(meta["M_max"])
        out = ToeplitzBlockOperator.zeros(d, H, M_max, GroupSpec.from_kind(meta["group"]))
        for lineno, line in enumerate(fh, start=2):
            f = line.split()
            if not f:
                continue
            if len(f) != d + 6:
                raise ValueError(f"{path}:{lineno}: expected {d + 6} fields")
            h = [int(x) for x in f[:d]]
            mm, aa, mp, ap = (int(x) for x in f[d:d + 4])
            z = complex(float.fromhex(f[d + 4]), float.fromhex(f[d + 5]))
            out.coeffs[out._index(h) + (storage_index(mm, aa, M_max), storage_index(mp, ap, M_max))] = z
    return out


def operator_h_s_norm(M: ToeplitzBlockOperator, L_max: int, s: float) -> float:
    """Weighted spectral norm of ``materialize(M)`` as a map H^s -> H^s."""
    w = np.tile(phase_space_weights(M.M_max, M.group, s), len(lattice_sites(M.d, L_max)))
    mat = materialize(M, L_max, dense=True)
    return float(np.linalg.norm((w[:, None] * mat) / w[None, :], 2))

