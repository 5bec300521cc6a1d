"""Index sets, distances, Sobolev weights and the Diophantine frequency.

Sites of the truncated lattice are triples ``k = (l, m, a)`` where ``l`` is a
time-Fourier index in Z^d, ``m >= 0`` is the representation label (the
dominant weight is ``j = m * label_step``) and ``a`` is a sign in {+1, -1}.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

SQRT8 = math.sqrt(8.0)
RHO_SU2 = 1.0 / SQRT8


@dataclass(frozen=True)
class GroupSpec:
    """Weight lattice data for SU(2) or SO(3).

    SO(3) is SU(2) restricted to even labels: same ``rho``, doubled step.
    """

    kind: str
    rho: float
    label_step: float

    def __post_init__(self):
        if self.kind not in ("SU2", "SO3"):
            raise ValueError(f"unknown group kind {self.kind!r}")
        if self.rho <= 0:
            raise ValueError("rho must be positive")
        ratio = self.label_step / self.rho
        if not (math.isclose(ratio, 1.0) or math.isclose(ratio, 2.0)):
            raise ValueError("label_step must be rho or 2*rho")

    @classmethod
    def su2(cls) -> "GroupSpec":
        return cls("SU2", RHO_SU2, RHO_SU2)

    @classmethod
    def so3(cls) -> "GroupSpec":
        return cls("SO3", RHO_SU2, 2.0 * RHO_SU2)

    @classmethod
    def from_kind(cls, kind: str) -> "GroupSpec":
        kind = kind.upper().replace("(", "").replace(")", "")
        if kind == "SU2":
            return cls.su2()
        if kind == "SO3":
            return cls.so3()
        raise ValueError(f"unknown group kind {kind!r}")

    @property
    def rho_sq(self) -> float:
        # exact 1/8 for the built-in weight, so SU(2) eigenvalues land on N/8
        return 0.125 if self.rho == RHO_SU2 else self.rho**2

    @property
    def step_ratio(self) -> int:
        """Integer ratio ``label_step / rho`` (1 for SU2, 2 for SO3)."""
        return int(round(self.label_step / self.rho))

    def weight(self, m):
        """Dominant weight ``j = m * label_step`` (scalar or array)."""
        return m * self.label_step


@dataclass(frozen=True)
class SiteIndex:
    l: tuple
    m: int
    a: int

    def __post_init__(self):
        object.__setattr__(self, "l", tuple(int(x) for x in self.l))
        if self.m < 0:
            raise ValueError("label m must be nonnegative")
        if self.a not in (1, -1):
            raise ValueError("sign a must be +1 or -1")


def site_distance(k: SiteIndex, kp: SiteIndex, g: GroupSpec) -> float:
    """Distance between two sites.

    Equal (l, m) with opposite signs are at distance 1; otherwise the
    max-metric ``max(|l - l'|_inf, |j - j'|)``.
    """
    if len(k.l) != len(kp.l):
        raise ValueError("sites live in lattices of different dimension")
    if k.l == kp.l and k.m == kp.m and k.a != kp.a:
        return 1.0
    dl = max((abs(x - y) for x, y in zip(k.l, kp.l)), default=0)
    return float(max(dl, abs(k.m - kp.m) * g.label_step))


def sobolev_weight(k, g: GroupSpec) -> float:
    """``|j + rho|`` for a site (or a bare label)."""
    m = k.m if isinstance(k, SiteIndex) else k
    return m * g.label_step + g.rho


def label_weights(M_max: int, g: GroupSpec) -> np.ndarray:
    return np.arange(M_max + 1) * g.label_step + g.rho


# -- Diophantine direction ---------------------------------------------------


@dataclass(frozen=True)
class FrequencyDirection:
    omega_tilde: tuple
    gamma0: float
    certified_up_to: int = 0

    def __post_init__(self):
        object.__setattr__(self, "omega_tilde", tuple(float(x) for x in self.omega_tilde))
        if self.gamma0 <= 0:
            raise ValueError("gamma0 must be positive")
        if sum(abs(x) for x in self.omega_tilde) > 1.0 + 1e-12:
            raise ValueError("|omega_tilde|_1 must not exceed 1")

    @property
    def d(self) -> int:
        return len(self.omega_tilde)

    @property
    def vector(self) -> np.ndarray:
        return np.array(self.omega_tilde)


@dataclass(frozen=True)
class DiophantineCheck:
    certified: bool
    up_to: int
    witness: tuple | None = None
    min_ratio: float = field(default=math.inf)


def integer_box(d: int, L: int, exclude_zero: bool = False) -> np.ndarray:
    """All ``l`` in Z^d with ``|l|_inf <= L``, ordered by shell then lexicographically."""
    pts = np.array(list(itertools.product(range(-L, L + 1), repeat=d)), dtype=np.int64)
    pts = pts.reshape(-1, d)
    shell = np.abs(pts).max(axis=1) if d else np.zeros(len(pts), dtype=np.int64)
    order = np.lexsort(tuple(pts[:, i] for i in reversed(range(d))) + (shell,))
    pts = pts[order]
    if exclude_zero:
        pts = pts[np.abs(pts).max(axis=1) > 0]
    return pts


def _canonical_sign(l: np.ndarray) -> tuple:
    nz = np.flatnonzero(l)
    if len(nz) and l[nz[0]] < 0:
        l = -l
    return tuple(int(x) for x in l)


def diophantine_check(f: FrequencyDirection, L: int) -> DiophantineCheck:
    """Scan ``0 < |l|_inf <= L`` for ``|w.l| >= 2 gamma0 |l|^-d``.

    The witness (first violation in shell order) is reported with its first
    nonzero component positive, since ``l`` and ``-l`` are equivalent.
    """
    if L < 1:
        raise ValueError("L must be >= 1")
    pts = integer_box(f.d, L, exclude_zero=True)
    norms = np.abs(pts).max(axis=1).astype(float)
    dots = np.abs(pts @ f.vector)
    ratio = dots * norms ** f.d
    bad = np.flatnonzero(ratio < 2.0 * f.gamma0)
    if len(bad):
        return DiophantineCheck(False, L, _canonical_sign(pts[bad[0]]), float(ratio.min()))
    return DiophantineCheck(True, L, None, float(ratio.min()))


def normalized_direction(raw) -> np.ndarray:
    w = np.asarray(raw, dtype=float)
    return w / np.abs(w).sum()


def default_frequency(d: int = 2, L: int = 200, raw=None) -> FrequencyDirection:
    """Direction ``(1, sqrt2 - 1)`` (or ``raw``) normalised to unit l1 norm.

    ``gamma0`` is half the smallest ``|w.l| |l|^d`` over the scan range, which
    certifies the direction up to ``L`` by construction.
    """
    if raw is None:
        if d != 2:
            raise ValueError("no built-in default direction for d != 2; pass raw")
        raw = (1.0, math.sqrt(2.0) - 1.0)
    w = normalized_direction(raw)
    if len(w) != d:
        raise ValueError("direction length does not match d")
    pts = integer_box(d, L, exclude_zero=True)
    norms = np.abs(pts).max(axis=1).astype(float)
    min_ratio = float((np.abs(pts @ w) * norms ** d).min())
    if min_ratio == 0.0:
        raise ValueError("direction is resonant within the scan range")
    f = FrequencyDirection(tuple(w), 0.5 * min_ratio, 0)
    check = diophantine_check(f, L)
    if not check.certified:  # pragma: no cover - rounding guard
        f = FrequencyDirection(tuple(w), 0.5 * min_ratio * (1 - 1e-12), 0)
        check = diophantine_check(f, L)
    return FrequencyDirection(f.omega_tilde, f.gamma0, L)
