"""The linearised operator ``(-Lap + mass) sigma_3 - eps T`` and its Hamiltonian structure.

In the lattice picture the operator ``omega.d_phi + i L_eps`` splits as
``D + R`` with ``D = diag(i (omega.l + a mu_m))`` and ``R = -i eps T``; only
``R`` is stored, as a Toeplitz block operator.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .decay_norm import ToeplitzBlockOperator, s_norm, storage_labels
from .harmonics import AliasingError, CentralFunction, eigenvalue, multiplication_matrix, qp_by_shift, qp_conj, qp_product
from .lattice import FrequencyDirection, GroupSpec, default_frequency

LINEAR = "linear_potential"
CUBIC = "cubic_at_profile"


@dataclass(frozen=True)
class Truncation:
    L_max: int = 6
    M_max: int = 24
    H_cap: int = 6

    def __post_init__(self):
        if self.L_max < 1 or self.M_max < 0 or self.H_cap < 1:
            raise ValueError("truncations must be positive")


@dataclass(frozen=True)
class ForcingSpec:
    """Forcing term: ``V(phi, x) u`` or ``|u|^2 u`` at a prescribed profile.

    ``potential`` maps a time harmonic ``h`` to a CentralFunction; ``profile``
    maps ``(h, m)`` to the amplitude of ``exp(i h.phi) chi_m(x)`` in ``w``.
    """

    mode: str = LINEAR
    potential: dict = field(default_factory=dict)
    profile: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.mode not in (LINEAR, CUBIC):
            raise ValueError(f"unknown forcing mode {self.mode!r}")
        pot = {tuple(int(x) for x in h): f for h, f in self.potential.items()}
        object.__setattr__(self, "potential", pot)
        prof = {(tuple(int(x) for x in h), int(m)): complex(c) for (h, m), c in self.profile.items()}
        object.__setattr__(self, "profile", prof)
        for h, f in pot.items():
            mirror = pot.get(tuple(-x for x in h), CentralFunction({}, f.group))
            diff = (f.conj() + mirror * -1).coeffs
            if any(abs(c) > 1e-14 for c in diff.values()):
                raise ValueError(f"potential is not real: coefficient at {tuple(-x for x in h)} "
                                 f"is not the conjugate of the one at {h}")

    @classmethod
    def from_records(cls, mode: str, potential=(), profile=(), group: GroupSpec = GroupSpec.su2()):
        """Build from ``(h-vector, label, re, im)`` records."""
        pot: dict = {}
        for h, m, re, im in potential:
            h = tuple(int(x) for x in h)
            pot[h] = pot.get(h, CentralFunction({}, group)) + CentralFunction({int(m): complex(re, im)}, group)
        prof: dict = {}
        for h, m, re, im in profile:
            key = (tuple(int(x) for x in h), int(m))
            prof[key] = prof.get(key, 0) + complex(re, im)
        return cls(mode, pot, prof)

    def support(self) -> int:
        """Largest time harmonic used."""
        keys = list(self.potential) if self.mode == LINEAR else [h for h, _ in self.profile]
        return max((max((abs(x) for x in h), default=0) for h in keys), default=0)


def default_forcing(d: int = 2, group: GroupSpec = GroupSpec.su2()) -> ForcingSpec:
    """``V = chi_2 + 2 cos(phi_1) chi_1 + 2 cos(phi_2) chi_3`` (d = 2)."""
    if d != 2:
        raise ValueError("the default forcing is defined for d = 2")
    pot = {
        (0, 0): CentralFunction({2: 1.0}, group),
        (1, 0): CentralFunction({1: 1.0}, group),
        (-1, 0): CentralFunction({1: 1.0}, group),
        (0, 1): CentralFunction({3: 1.0}, group),
        (0, -1): CentralFunction({3: 1.0}, group),
    }
    return ForcingSpec(LINEAR, pot)


def default_profile(delta: float = 0.1) -> dict:
    """A small real central profile ``w = delta (chi_1 + cos(phi_1) chi_0 + 1/2 cos(phi_2) chi_2)``."""
    return {
        ((0, 0), 1): delta,
        ((1, 0), 0): delta / 2,
        ((-1, 0), 0): delta / 2,
        ((0, 1), 2): delta / 4,
        ((0, -1), 2): delta / 4,
    }


@dataclass(frozen=True)
class NlsModel:
    group: GroupSpec = field(default_factory=GroupSpec.su2)
    d: int = 2
    freq: FrequencyDirection = None  # type: ignore[assignment]
    mass: float = 1.0
    eps: float = 1e-3
    forcing: ForcingSpec = None  # type: ignore[assignment]
    truncation: Truncation = field(default_factory=Truncation)

    def __post_init__(self):
        if self.mass <= 0:
            raise ValueError("mass must be positive")
        if self.eps < 0:
            raise ValueError("eps must be nonnegative")
        if self.freq is None:
            object.__setattr__(self, "freq", default_frequency(self.d))
        if self.forcing is None:
            object.__setattr__(self, "forcing", default_forcing(self.d, self.group))
        if self.freq.d != self.d:
            raise ValueError("frequency direction has the wrong dimension")

    @property
    def M_max(self) -> int:
        return self.truncation.M_max

    @property
    def w_eps(self) -> dict:
        return self.forcing.profile


def _check_harmonics(keys, d: int, H: int):
    for h in keys:
        if len(h) != d:
            raise ValueError(f"time harmonic {h} does not have dimension {d}")
        if max((abs(x) for x in h), default=0) > H:
            raise AliasingError(f"time harmonic {h} exceeds the shift cap {H}")


def build_T(model: NlsModel) -> ToeplitzBlockOperator:
    """Töplitz matrix ``T`` of the linearised forcing."""
    fs, M, g, d = model.forcing, model.M_max, model.group, model.d
    H = model.truncation.H_cap
    k = M + 1
    if fs.mode == LINEAR:
        _check_harmonics(fs.potential, d, H)
        out = ToeplitzBlockOperator.zeros(d, max(fs.support(), 0), M, g)
        for h, f in fs.potential.items():
            B = multiplication_matrix(f, M)
            blk = out.coeffs[out._index(h)]
            blk[:k, :k] += B
            blk[k:, k:] -= B
        return out
    w = fs.profile
    _check_harmonics([h for h, _ in w], d, H)
    wbar = qp_conj(w)
    mod2 = {key: 2 * c for key, c in qp_product(w, wbar, g).items()}
    parts = [
        (qp_by_shift(mod2, g), slice(0, k), slice(0, k), 1.0),
        (qp_by_shift(qp_product(w, w, g), g), slice(0, k), slice(k, None), -1.0),
        (qp_by_shift(qp_product(wbar, wbar, g), g), slice(k, None), slice(0, k), 1.0),
        (qp_by_shift(mod2, g), slice(k, None), slice(k, None), -1.0),
    ]
    Ht = max((max((abs(x) for x in h), default=0) for p in parts for h in p[0]), default=0)
    _check_harmonics([h for p in parts for h in p[0]], d, H)
    out = ToeplitzBlockOperator.zeros(d, Ht, M, g)
    for by_shift, rows, cols, sign in parts:
        for h, f in by_shift.items():
            out.coeffs[out._index(h)][rows, cols] += sign * multiplication_matrix(f, M)
    return out


def initial_remainder(model: NlsModel) -> ToeplitzBlockOperator:
    """``R_0 = -i eps T``."""
    return build_T(model) * (-1j * model.eps)


@dataclass
class DiagonalPart:
    """``mu_m = eigenvalue(m) + mass + r_m`` for one parameter value."""

    mu0: np.ndarray
    r: np.ndarray
    step: int = 0
    group: GroupSpec = field(default_factory=GroupSpec.su2)

    def __post_init__(self):
        self.mu0 = np.asarray(self.mu0, dtype=float)
        self.r = np.asarray(self.r, dtype=float)
        if self.mu0.shape != self.r.shape:
            raise ValueError("mu0 and r must have the same shape")

    @property
    def mu(self) -> np.ndarray:
        return self.mu0 + self.r

    @property
    def M_max(self) -> int:
        return len(self.mu0) - 1

    def signed(self) -> np.ndarray:
        """``a mu_m`` in phase-space storage order."""
        return np.concatenate([self.mu, -self.mu])

    def corrected(self, dr: np.ndarray) -> "DiagonalPart":
        return DiagonalPart(self.mu0, self.r + dr, self.step + 1, self.group)


def build_diagonal(model: NlsModel) -> DiagonalPart:
    mu0 = eigenvalue(np.arange(model.M_max + 1), model.group) + model.mass
    return DiagonalPart(mu0, np.zeros_like(mu0), 0, model.group)


# -- Hamiltonian structure ---------------------------------------------------


@dataclass(frozen=True)
class HamiltonianReport:
    passed: bool
    tol: float
    worst: float
    condition: str
    location: tuple | None
    residuals: dict


def _reflect_conj(c: np.ndarray, d: int) -> np.ndarray:
    """Block at ``h`` replaced by ``conj(block(-h))``."""
    return np.conj(c[(slice(None, None, -1),) * d])


def hamiltonian_residuals(M: ToeplitzBlockOperator) -> dict:
    """Violation operators of the four linear Hamiltonian identities, keyed by name."""
    k = M.M_max + 1
    c, d = M.coeffs, M.d
    rc = _reflect_conj(c, d)
    pp, pm, mp, mm = (slice(0, k), slice(0, k)), (slice(0, k), slice(k, None)), (slice(k, None), slice(0, k)), (slice(k, None), slice(k, None))

    def blk(arr, idx):
        return arr[(Ellipsis,) + idx]

    def embed(diff, idx):
        out = np.zeros_like(c)
        out[(Ellipsis,) + idx] = diff
        return ToeplitzBlockOperator(out, M.M_max, M.group, d)

    return {
        "M++ = conj(M--)": embed(blk(c, pp) - blk(rc, mm), pp),
        "M++ = -conj(M++)^T": embed(blk(c, pp) + np.swapaxes(blk(rc, pp), -1, -2), pp),
        "M+- symmetric": embed(blk(c, pm) - np.swapaxes(blk(c, pm), -1, -2), pm),
        "M+- = conj(M-+)": embed(blk(c, pm) - blk(rc, mp), pm),
        "M-- = -conj(M--)^T": embed(blk(c, mm) + np.swapaxes(blk(rc, mm), -1, -2), mm),
    }


def check_hamiltonian(M: ToeplitzBlockOperator, tol: float, s0: float = 2.0) -> HamiltonianReport:
    """Verify the linear Hamiltonian identities in the s0-decay norm.

    The identities are read in the lattice sense, pairing the block at shift
    ``h`` with the one at ``-h``.  The report names the worst identity and the
    largest offending entry ``(h, m, a, m', a', value)``.
    """
    res = hamiltonian_residuals(M)
    norms = {name: s_norm(op, s0) for name, op in res.items()}
    name = max(norms, key=lambda key: norms[key])
    worst = norms[name]
    loc = None
    if worst > 0:
        op = res[name]
        i = int(np.argmax(np.abs(op.coeffs)))
        *hidx, p, q = np.unravel_index(i, op.coeffs.shape)
        m, a = storage_labels(M.M_max)
        h = tuple(int(x) - op.H for x in hidx)
        loc = (h, int(m[p]), int(a[p]), int(m[q]), int(a[q]), complex(op.coeffs.flat[i]))
    return HamiltonianReport(worst <= tol, tol, worst, name, loc, norms)


def self_adjoint_residual(M: ToeplitzBlockOperator, s0: float = 2.0) -> float:
    """``|i sigma_3 M - (i sigma_3 M)^*|_{s0}``."""
    k = M.M_max + 1
    sig = np.concatenate([np.ones(k), -np.ones(k)])
    X = M * 1j
    X = ToeplitzBlockOperator(sig[:, None] * X.coeffs, M.M_max, M.group, M.d)
    return s_norm(X - X.adjoint(), s0)


def random_hamiltonian(d: int, H: int, M_max: int, rng: np.random.Generator, scale: float = 1.0,
                       group: GroupSpec = GroupSpec.su2(), block_diagonal: bool = False,
                       decay: float = 1.0) -> ToeplitzBlockOperator:
    """Random Toeplitz operator satisfying the Hamiltonian identities exactly.

    Entries are damped by ``exp(-decay * (|h| + |m - m'|))`` so the s-norms
    stay moderate.
    """
    k = M_max + 1
    S = (2 * H + 1,) * d

    def noise():
        return rng.normal(size=S + (k, k)) + 1j * rng.normal(size=S + (k, k))

    hv = np.abs(np.indices(S) - H).max(axis=0) if d else np.zeros(())
    mv = np.abs(np.arange(k)[:, None] - np.arange(k)[None, :])
    damp = np.exp(-decay * (hv[..., None, None] + mv))

    K = noise() * damp
    K = 0.5 * (K + np.conj(np.swapaxes(K[(slice(None, None, -1),) * d], -1, -2)))  # K[h] = K[-h]^H
    out = np.zeros(S + (2 * k, 2 * k), dtype=np.complex128)
    out[..., :k, :k] = -1j * K
    out[..., k:, k:] = np.conj(out[(slice(None, None, -1),) * d][..., :k, :k])
    if not block_diagonal:
        Q = noise() * damp
        Q = 0.5 * (Q + np.swapaxes(Q, -1, -2))
        out[..., :k, k:] = Q
        out[..., k:, :k] = np.conj(Q[(slice(None, None, -1),) * d])
    return ToeplitzBlockOperator(scale * out, M_max, group, d)
