"""Spectrum of the Laplacian and multiplication by central functions.

On SU(2) the characters obey ``chi_h chi_m = sum_{k=0}^{min(h,m)} chi_{h+m-2k}``.
Since every representation is self-dual the characters are real, and the
matrix of multiplication by ``b = sum_h b_h chi_h`` in the character basis is

    B[m, m'] = sum { b_h : |m - m'| <= h <= m + m',  h = m + m' (mod 2) }.

For SO(3) the labels count integer spins (``chi_n^{SO3} = chi_{2n}^{SU2}``) and
the parity restriction disappears.
"""
from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field

import numpy as np

from .lattice import GroupSpec

_SU2 = GroupSpec.su2()


def eigenvalue(m, g: GroupSpec = _SU2):
    """``(j + rho)^2 - rho^2`` with ``j = m * label_step``.

    Evaluated as ``rho^2 ((k m + 1)^2 - 1)`` with ``k = label_step / rho`` so
    that SU(2) values are exact multiples of 1/8.
    """
    k = g.step_ratio
    m = np.asarray(m)
    if np.any(m < 0):
        raise ValueError("labels must be nonnegative")
    out = g.rho_sq * ((k * m + 1.0) ** 2 - 1.0)
    return float(out) if out.ndim == 0 else out


def char_product(h: int, m: int, g: GroupSpec = _SU2) -> list[int]:
    """Labels appearing in ``chi_h chi_m``, largest first."""
    if h < 0 or m < 0:
        raise ValueError("labels must be nonnegative")
    if g.step_ratio == 1:
        return [h + m - 2 * k for k in range(min(h, m) + 1)]
    # integer spins: |h - m|, ..., h + m
    return list(range(h + m, abs(h - m) - 1, -1))


@dataclass(frozen=True)
class CentralFunction:
    """Finite character expansion ``sum_m b_m chi_m``."""

    coeffs: dict = field(default_factory=dict)
    group: GroupSpec = _SU2

    def __post_init__(self):
        clean = {}
        for m, c in self.coeffs.items():
            if int(m) < 0:
                raise ValueError("labels must be nonnegative")
            if c != 0:
                clean[int(m)] = complex(c)
        object.__setattr__(self, "coeffs", clean)

    @classmethod
    def from_triples(cls, triples, group: GroupSpec = _SU2) -> "CentralFunction":
        acc = defaultdict(complex)
        for m, re, im in triples:
            acc[int(m)] += complex(re, im)
        return cls(dict(acc), group)

    def to_triples(self) -> list[tuple[int, float, float]]:
        return [(m, c.real, c.imag) for m, c in sorted(self.coeffs.items())]

    @property
    def support(self) -> int:
        """Largest label with a nonzero coefficient (-1 for the zero function)."""
        return max(self.coeffs, default=-1)

    @property
    def is_real(self) -> bool:
        return all(c.imag == 0 for c in self.coeffs.values())

    def __add__(self, other):
        acc = defaultdict(complex, self.coeffs)
        for m, c in other.coeffs.items():
            acc[m] += c
        return CentralFunction(dict(acc), self.group)

    def __mul__(self, other):
        if isinstance(other, CentralFunction):
            acc = defaultdict(complex)
            for h, b in self.coeffs.items():
                for m, c in other.coeffs.items():
                    for p in char_product(h, m, self.group):
                        acc[p] += b * c
            return CentralFunction(dict(acc), self.group)
        return CentralFunction({m: c * other for m, c in self.coeffs.items()}, self.group)

    __rmul__ = __mul__

    def conj(self) -> "CentralFunction":
        return CentralFunction({m: c.conjugate() for m, c in self.coeffs.items()}, self.group)


class AliasingError(ValueError):
    """Raised when a function's support does not fit the label truncation."""


def multiplication_matrix(b: CentralFunction, M_max: int, return_tail: bool = False):
    """Matrix of ``u -> b u`` on labels ``0..M_max``.

    Products that land above ``M_max`` are dropped; with ``return_tail`` the
    Frobenius mass of the dropped coefficients is returned alongside.
    """
    if b.support > 2 * M_max:
        raise AliasingError(
            f"support {b.support} exceeds 2*M_max = {2 * M_max}; refusing to clip silently"
        )
    g = b.group
    n = M_max + 1
    B = np.zeros((n, n), dtype=complex)
    m = np.arange(n)
    lo = np.abs(m[:, None] - m[None, :])
    hi = m[:, None] + m[None, :]
    for h, c in b.coeffs.items():
        mask = (lo <= h) & (h <= hi)
        if g.step_ratio == 1:
            mask &= (hi - h) % 2 == 0
        B[mask] += c
    if not return_tail:
        return B
    tail = 0.0
    for mp in range(n):
        for h, c in b.coeffs.items():
            tail += abs(c) ** 2 * sum(1 for p in char_product(h, mp, g) if p > M_max)
    return B, math.sqrt(tail)


@dataclass(frozen=True)
class DecayFit:
    exact_band: bool
    width: int
    exponent: float = math.nan
    constant: float = math.nan


def decay_profile(B: np.ndarray, g: GroupSpec = _SU2, atol: float = 0.0) -> DecayFit:
    """Least-squares fit ``log|B[m, m']| ~ log C - alpha log<j - j'>``.

    All nonzero off-diagonal entries enter the fit, with ``<x> = max(1, |x|)``
    measured in weight units as in the s-decay norm.  Fewer than two distinct
    nonzero offsets cannot be fitted and are reported as an exact band.
    """
    B = np.asarray(B)
    i, j = np.nonzero(np.abs(B) > atol)
    off = i != j
    i, j = i[off], j[off]
    widths = np.unique(np.abs(i - j))
    if len(widths) < 2:
        return DecayFit(True, int(widths[-1]) if len(widths) else 0)
    x = -np.log(np.maximum(1.0, np.abs(i - j) * g.label_step))
    y = np.log(np.abs(B[i, j]))
    slope, intercept = np.polyfit(x, y, 1)
    return DecayFit(False, int(widths[-1]), float(slope), float(math.exp(intercept)))


# -- quasi-periodic central functions: {(h, m): coefficient} ----------------


def qp_product(f: dict, g: dict, group: GroupSpec = _SU2) -> dict:
    """Product of two functions ``sum c_{h,m} e^{i h.phi} chi_m(x)``."""
    acc = defaultdict(complex)
    for (h1, m1), c1 in f.items():
        for (h2, m2), c2 in g.items():
            h = tuple(a + b for a, b in zip(h1, h2))
            for p in char_product(m1, m2, group):
                acc[(h, p)] += c1 * c2
    return {k: v for k, v in acc.items() if v != 0}


def qp_conj(f: dict) -> dict:
    """Complex conjugate; characters are real so only ``h -> -h`` and ``c -> conj c``."""
    return {(tuple(-x for x in h), m): complex(c).conjugate() for (h, m), c in f.items()}


def qp_by_shift(f: dict, group: GroupSpec = _SU2) -> dict:
    """Regroup ``{(h, m): c}`` into ``{h: CentralFunction}``."""
    acc = defaultdict(dict)
    for (h, m), c in f.items():
        acc[tuple(h)][m] = acc[tuple(h)].get(m, 0) + c
    return {h: CentralFunction(c, group) for h, c in acc.items()}
