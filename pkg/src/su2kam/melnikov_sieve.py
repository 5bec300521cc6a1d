"""Resonant parameters: enumeration with pruning, pruning audit, and measure scaling in gamma.

A parameter ``lam`` is resonant when some tuple ``(l, m, a, m', a')`` with
``(m, a) != (m', a')`` and ``|l|_inf <= L_max`` has
``|lam w.l + a mu_m - a' mu_m'| <= 2 gamma <l>^-tau``.

Three pruning rules shrink the enumeration:

``small_l``
    drop every ``l`` with ``|w.l|`` below a threshold.  The threshold follows
    from the spectral gap ``min |a mu_m - a' mu_m'|``: a resonance needs
    ``|lam w.l| >= gap - 2 gamma`` and ``lam <= 3/2``.  ``mode="audited"``
    uses the gap measured on the supplied spectrum; ``mode="literal"`` uses
    the fixed value 1/3, which assumes a gap of 5/8 and is unsound for the
    SU(2) spectrum, whose smallest gap is 3/8.
``far_labels``
    drop tuples with ``|a (j + rho)^2 - a' (j' + rho)^2| > 6 |l|``.
``label_box``
    keep only ``j, j' < 9 |l|``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .decay_norm import storage_labels
from .harmonics import eigenvalue
from .lattice import GroupSpec, integer_box

AUDITED = "audited"
LITERAL = "literal"
NONE = "none"
RULES = ("small_l", "far_labels", "label_box")


@dataclass
class MuFamily:
    """Spectra ``mu_m(lam)`` sampled on a grid, extended piecewise linearly in ``lam``."""

    lams: np.ndarray
    mu: np.ndarray
    group: GroupSpec = field(default_factory=GroupSpec.su2)

    def __post_init__(self):
        self.lams = np.asarray(self.lams, dtype=float)
        self.mu = np.atleast_2d(np.asarray(self.mu, dtype=float))
        if self.mu.shape[0] != len(self.lams):
            raise ValueError("one spectrum row per grid point is required")
        if len(self.lams) > 1 and np.any(np.diff(self.lams) <= 0):
            raise ValueError("grid must be strictly increasing")

    @property
    def M_max(self) -> int:
        return self.mu.shape[1] - 1

    def at(self, lam) -> np.ndarray:
        lam = np.atleast_1d(np.asarray(lam, dtype=float))
        if len(self.lams) == 1:
            return np.repeat(self.mu, len(lam), axis=0)
        return np.stack([np.interp(lam, self.lams, self.mu[:, j]) for j in range(self.mu.shape[1])], axis=1)

    def truncated(self, M_max: int) -> "MuFamily":
        if M_max > self.M_max:
            raise ValueError(f"family only holds labels up to {self.M_max}")
        return MuFamily(self.lams, self.mu[:, : M_max + 1], self.group)

    @classmethod
    def unperturbed(cls, M_max: int, mass: float = 1.0, group: GroupSpec = GroupSpec.su2()) -> "MuFamily":
        mu = eigenvalue(np.arange(M_max + 1), group) + mass
        return cls(np.array([1.0]), mu[None, :], group)

    @classmethod
    def from_reduction(cls, result, M_max: int | None = None) -> "MuFamily":
        """Limit spectra of a reduction run, extended to ``M_max`` labels (see ``extend_first_order``)."""
        fam = cls(result.lams, result.mu_family(), result.model.group)
        if M_max is None:
            return fam
        if M_max <= fam.M_max:
            return fam.truncated(M_max)
        return extend_first_order(fam, result.model, M_max)


def extend_first_order(family: MuFamily, model, M_max: int) -> MuFamily:
    """Append labels up to ``M_max`` with the first-order correction ``-eps Re T_mm`` at shift zero."""
    from .linop import Truncation, build_T
    if M_max <= family.M_max:
        return family.truncated(M_max)
    t = model.truncation
    big = type(model)(model.group, model.d, model.freq, model.mass, model.eps, model.forcing,
                      Truncation(t.L_max, M_max, t.H_cap))
    T = build_T(big)
    T0 = T.coeffs[(T.H,) * model.d]
    first = -model.eps * np.real(np.diag(T0)[: M_max + 1])
    mu0 = eigenvalue(np.arange(M_max + 1), model.group) + model.mass
    ext = np.repeat((mu0 + first)[None, :], len(family.lams), axis=0)
    ext[:, : family.M_max + 1] = family.mu
    return MuFamily(family.lams, ext, family.group)


@dataclass
class PruneStats:
    considered: int = 0
    pruned: dict = field(default_factory=lambda: {r: 0 for r in RULES})
    checked: int = 0

    def merge(self, other: "PruneStats") -> None:
        self.considered += other.considered
        self.checked += other.checked
        for r in RULES:
            self.pruned[r] += other.pruned[r]


def _bracket(ls: np.ndarray) -> np.ndarray:
    return np.maximum(1.0, np.abs(ls).max(axis=-1, initial=0)).astype(float)


def spectral_gap(mu: np.ndarray) -> tuple[float, tuple]:
    """``min |a mu_m - a' mu_m'|`` over distinct ``(m, a)`` pairs of each row; returns value and ``(row, m, a, m', a')``."""
    mu = np.atleast_2d(mu)
    best, where = math.inf, None
    for g, row in enumerate(mu):
        same = np.abs(np.diff(np.sort(row)))
        i = int(np.argmin(same)) if len(same) else 0
        order = np.argsort(row)
        if len(same) and same[i] < best:
            best, where = float(same[i]), (g, int(order[i + 1]), 1, int(order[i]), 1)
        mixed = np.abs(row[:, None] + row[None, :])
        j = int(np.argmin(mixed))
        if mixed.flat[j] < best:
            p, q = np.unravel_index(j, mixed.shape)
            best, where = float(mixed.flat[j]), (g, int(p), 1, int(q), -1)
    return best, where


def small_l_threshold(mu: np.ndarray, gamma: float, mode: str = AUDITED, lam_max: float = 1.5) -> float:
    """``|w.l|`` below which no resonance is possible."""
    if mode == NONE:
        return 0.0
    if mode == LITERAL:
        return 1.0 / 3.0
    gap, _ = spectral_gap(mu)
    return max(0.0, (gap - 2.0 * gamma) / lam_max)


def _label_value(m: np.ndarray, g: GroupSpec) -> np.ndarray:
    """``(j + rho)^2`` for storage label ``m``."""
    return (g.weight(m) + g.rho) ** 2


def _tuple_rules(lnorm: np.ndarray, m, a, mp, ap, g: GroupSpec):
    """Boolean masks (far_labels, label_box) marking tuples each rule prunes."""
    jv, jpv = _label_value(m, g), _label_value(mp, g)
    far = np.abs(a * jv - ap * jpv) > 6 * lnorm
    j, jp = g.weight(m), g.weight(mp)
    box = ~((j < 9 * lnorm) & (jp < 9 * lnorm))
    return far, box


@dataclass(frozen=True)
class Resonance:
    l: tuple
    m: int
    a: int
    mp: int
    ap: int
    value: float
    bound: float


def _enumerate(lam: float, mu_row: np.ndarray, gamma: float, tau: float, ls: np.ndarray, omega,
               g: GroupSpec, factor: float, keep=None):
    """Every violated tuple over ``ls``; ``keep(l_idx, far, box)`` selects which tuples to test."""
    K = len(mu_row)
    lab, sg = storage_labels(K - 1)
    signed = np.concatenate([mu_row, -mu_row])
    wl = ls @ np.asarray(omega, float)
    br = _bracket(ls)
    lnorm = np.abs(ls).max(axis=1, initial=0).astype(float)
    out = []
    for i in range(len(ls)):
        delta = lam * wl[i] + signed[:, None] - signed[None, :]
        bound = factor * gamma * br[i] ** -tau
        hit = np.abs(delta) <= bound
        np.fill_diagonal(hit, False)
        if keep is not None:
            far, box = _tuple_rules(lnorm[i], lab[:, None], sg[:, None], lab[None, :], sg[None, :], g)
            hit &= keep(i, far, box)
        for p, q in zip(*np.nonzero(hit)):
            out.append(Resonance(tuple(int(x) for x in ls[i]), int(lab[p]), int(sg[p]), int(lab[q]), int(sg[q]),
                                 float(abs(delta[p, q])), bound))
    return out


def resonant_membership(lam: float, family: MuFamily, gamma: float, tau: float, L_max: int, M_max: int,
                        omega, mode: str = AUDITED, factor: float = 2.0,
                        stats: PruneStats | None = None) -> list:
    """Violated tuples at ``lam`` after pruning (``mode="none"`` disables every rule)."""
    fam = family.truncated(M_max)
    row = fam.at(lam)[0]
    ls = integer_box(len(omega), L_max)
    n_pairs = (2 * (M_max + 1)) ** 2 - 2 * (M_max + 1)
    st = PruneStats(considered=len(ls) * n_pairs)
    if gamma <= 0:
        if stats is not None:
            stats.merge(st)
        return []
    if mode == NONE:
        st.checked = st.considered
        if stats is not None:
            stats.merge(st)
        return _enumerate(lam, row, gamma, tau, ls, omega, fam.group, factor)
    thr = small_l_threshold(fam.mu, gamma, mode)
    wl = np.abs(ls @ np.asarray(omega, float))
    live = wl >= thr
    st.pruned["small_l"] = int((~live).sum()) * n_pairs
    ls = ls[live]
    lnorm = np.abs(ls).max(axis=1, initial=0).astype(float)
    lab, sg = storage_labels(M_max)
    for i in range(len(ls)):
        far, box = _tuple_rules(lnorm[i], lab[:, None], sg[:, None], lab[None, :], sg[None, :], fam.group)
        offdiag = ~np.eye(len(lab), dtype=bool)
        st.pruned["far_labels"] += int((far & offdiag).sum())
        st.pruned["label_box"] += int((box & ~far & offdiag).sum())
        st.checked += int((~far & ~box & offdiag).sum())
    if stats is not None:
        stats.merge(st)
    return _enumerate(lam, row, gamma, tau, ls, omega, fam.group, factor, keep=lambda i, far, box: ~far & ~box)


def resonant_mask(lams, family: MuFamily, gamma: float, tau: float, L_max: int, M_max: int, omega,
                  mode: str = AUDITED, factor: float = 2.0) -> np.ndarray:
    """Resonant flag per grid point via the sorted nearest-pair scan.

    With pruning on, only ``l`` surviving the ``small_l`` rule are scanned;
    the label rules never exclude the nearest pair of a resonant tuple and
    are audited separately.
    """
    lams = np.asarray(lams, dtype=float)
    fam = family.truncated(M_max)
    if gamma <= 0:
        return np.zeros(len(lams), dtype=bool)
    ls = integer_box(len(omega), L_max)
    wl = ls @ np.asarray(omega, float)
    if mode != NONE:
        live = np.abs(wl) >= small_l_threshold(fam.mu, gamma, mode)
        ls, wl = ls[live], wl[live]
    if not len(ls):
        return np.zeros(len(lams), dtype=bool)
    mu = fam.at(lams)
    best, _ = kernels.resonance_scan(lams, mu, wl, _bracket(ls) ** tau, exclude_diag=True)
    return best <= factor * gamma


@dataclass
class AuditReport:
    false_prunes: dict
    witnesses: dict
    resonant_tuples: int
    lams_checked: int
    random_rechecks: int
    random_recheck_failures: int

    @property
    def clean(self) -> bool:
        return all(v == 0 for v in self.false_prunes.values()) and self.random_recheck_failures == 0


def pruning_audit(family: MuFamily, gamma: float, tau: float, L_max: int, M_max: int, omega, lams,
                  mode: str = AUDITED, factor: float = 2.0, random_checks: int = 10_000,
                  rng: np.random.Generator | None = None) -> AuditReport:
    """Check each pruning rule against unpruned enumeration.

    For every sampled ``lam`` all resonant tuples are found by brute force; a
    false prune is a resonant tuple that some rule would have dropped.  On
    top, ``random_checks`` pruned tuples drawn at random are rechecked with
    the direct inequality.
    """
    rng = rng or np.random.default_rng(0)
    fam = family.truncated(M_max)
    omega = np.asarray(omega, float)
    thr = small_l_threshold(fam.mu, gamma, mode)
    g = fam.group
    false = {r: 0 for r in RULES}
    wit: dict = {r: [] for r in RULES}
    ls_all = integer_box(len(omega), L_max)
    total = 0
    for lam in np.asarray(lams, float):
        for res in _enumerate(lam, fam.at(lam)[0], gamma, tau, ls_all, omega, g, factor):
            total += 1
            ln = float(max((abs(x) for x in res.l), default=0))
            rules = {"small_l": abs(float(np.dot(omega, res.l))) < thr}
            far, box = _tuple_rules(ln, np.array(res.m), np.array(res.a), np.array(res.mp), np.array(res.ap), g)
            rules["far_labels"], rules["label_box"] = bool(far), bool(box)
            for r, hit in rules.items():
                if hit:
                    false[r] += 1
                    if len(wit[r]) < 10:
                        wit[r].append((float(lam), res))
    # random pruned tuples must satisfy the strict non-resonance inequality
    fails = 0
    done = 0
    lams = np.asarray(lams, float)
    K = M_max + 1
    tries = 0
    while done < random_checks and tries < 50 * random_checks:
        n = min(4096, 2 * (random_checks - done))
        tries += n
        li = rng.integers(len(ls_all), size=n)
        lam = rng.uniform(lams.min(), lams.max(), size=n)
        m, mp = rng.integers(K, size=n), rng.integers(K, size=n)
        a, ap = rng.choice([1, -1], size=n), rng.choice([1, -1], size=n)
        ok = (m != mp) | (a != ap)
        l = ls_all[li]
        ln = np.abs(l).max(axis=1).astype(float)
        wl = l @ omega
        far, box = _tuple_rules(ln, m, a, mp, ap, g)
        pruned = ok & ((np.abs(wl) < thr) | far | box)
        if not pruned.any():
            continue
        idx = np.flatnonzero(pruned)[: random_checks - done]
        mu = fam.at(lam[idx])
        rows = np.arange(len(idx))
        delta = lam[idx] * wl[idx] + a[idx] * mu[rows, m[idx]] - ap[idx] * mu[rows, mp[idx]]
        bound = factor * gamma * _bracket(l[idx]) ** -tau
        fails += int((np.abs(delta) <= bound).sum())
        done += len(idx)
    return AuditReport(false, wit, total, len(lams), done, fails)


@dataclass
class SieveReport:
    gammas: list
    fractions: list
    slope: float
    intercept: float
    degenerate: bool
    tau: float
    L_max: int
    M_max: int
    grid_size: int
    mode: str
    factor: float
    stats: list = field(default_factory=list)
    notes: list = field(default_factory=list)

    def rows(self) -> list:
        return list(zip(self.gammas, self.fractions))


def fit_slope(gammas, fractions) -> tuple[float, float]:
    """Least-squares slope and intercept of ``log fraction`` against ``log gamma`` (zero fractions skipped)."""
    x = np.log(np.asarray(gammas, float))
    y = np.asarray(fractions, float)
    keep = y > 0
    if keep.sum() < 2:
        return math.nan, math.nan
    slope, icpt = np.polyfit(x[keep], np.log(y[keep]), 1)
    return float(slope), float(icpt)


def default_grid(n: int = 2000) -> np.ndarray:
    return np.linspace(0.5, 1.5, n)


def measure_estimate(family: MuFamily, gammas, lams, tau: float, L_max: int, M_max: int, omega,
                     mode: str = AUDITED, factor: float = 2.0, d: int | None = None) -> SieveReport:
    """Resonant fraction of the grid per gamma and the log-log slope."""
    d = len(omega) if d is None else d
    if tau <= d + 2:
        raise ValueError(f"the measure estimate needs tau > d + 2 = {d + 2}, got {tau}")
    lams = np.asarray(lams, float)
    fr = [float(resonant_mask(lams, family, gm, tau, L_max, M_max, omega, mode, factor).mean()) for gm in gammas]
    slope, icpt = fit_slope(gammas, fr)
    degenerate = all(f == 0 for f in fr) or all(f == 1 for f in fr)
    notes = ["degenerate experiment: fractions are all 0 or all 1"] if degenerate else []
    return SieveReport(list(map(float, gammas)), fr, slope, icpt, degenerate, tau, L_max, M_max, len(lams),
                       mode, factor, notes=notes)


@dataclass(frozen=True)
class GapCheck:
    gap: float
    where: tuple
    c_eps: float
    holds: dict


def gap_check(family: MuFamily, c_eps: float, claimed=(5 / 8, 3 / 8)) -> GapCheck:
    """Whether ``min |a mu_m - a' mu_m'| >= c - C eps`` holds for each claimed constant ``c``."""
    gap, where = spectral_gap(family.mu)
    return GapCheck(gap, where, c_eps, {c: gap >= c - c_eps for c in claimed})


def write_csv(report: SieveReport, path) -> None:
    with open(path, "w", newline="") as fh:
        fh.write("gamma,fraction\n")
        for gm, f in report.rows():
            fh.write(f"{float(gm).hex()},{float(f).hex()}\n")
        fh.write(f"# slope,{float(report.slope).hex()}\n")
