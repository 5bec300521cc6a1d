"""The full reduction: iterate KAM steps per parameter value, compose transforms, verify."""
from __future__ import annotations

import logging
import math
import os
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .decay_norm import ToeplitzBlockOperator, compose, retruncate, s_norm
from .kam_step import (
    MelnikovFailure,
    SeriesDivergence,
    SmallDivisorError,
    StepParams,
    divisor_table,
    kam_single_step,
    melnikov_screen,
)
from .linop import DiagonalPart, NlsModel, build_diagonal, initial_remainder, self_adjoint_residual

log = logging.getLogger(__name__)

WORKERS_ENV = "SU2KAM_WORKERS"


@dataclass(frozen=True)
class Schedule:
    N0: int = 4
    growth: float = 1.5
    max_steps: int = 4
    tau: float = 5.0
    gamma: float = 1e-2
    s0: float = 2.0
    s: float = 4.0
    N_cap: float = math.inf
    H_cap: int = 6
    series_tol: float = 1e-14
    accept_residual: float = 1e-6
    smallness: float = 0.5

    def __post_init__(self):
        if self.N0 < 2:
            raise ValueError("N0 must be at least 2")
        if self.max_steps < 0:
            raise ValueError("max_steps must be nonnegative")
        if self.gamma < 0:
            raise ValueError("gamma must be nonnegative")

    @property
    def beta(self) -> float:
        return 6 * self.tau + 5

    def N_raw(self, n: int) -> int:
        return math.ceil(self.N0 ** (self.growth**n) - 1e-9)

    def N(self, n: int) -> float:
        return min(float(self.N_raw(n)), self.N_cap)

    def params(self, n: int) -> StepParams:
        return StepParams(self.N(n), self.gamma, self.tau, self.s0, self.s, self.beta, self.H_cap, self.series_tol)

    @classmethod
    def for_model(cls, model: NlsModel, **kw) -> "Schedule":
        """Schedule whose N is clipped to the lattice diameter and whose shift cap is L_max."""
        t = model.truncation
        kw.setdefault("tau", model.d + 3.0)
        kw.setdefault("s0", 1.0 + model.d / 2)
        kw.setdefault("N_cap", 2.0 * t.L_max)
        kw.setdefault("H_cap", t.H_cap)
        return cls(**kw)


@dataclass
class LambdaResult:
    lam: float
    accepted: bool
    steps: int
    reason: str = ""
    witness: tuple | None = None
    residuals: list = field(default_factory=list)
    r_table: np.ndarray | None = None
    diagnostics: list = field(default_factory=list)
    hamiltonian: list = field(default_factory=list)
    chain: list | None = None
    mu0: np.ndarray | None = None

    @property
    def r_final(self) -> np.ndarray:
        return self.r_table[-1]

    @property
    def mu_inf(self) -> np.ndarray:
        return self.mu0 + self.r_final


@dataclass
class ReducibilityResult:
    model: NlsModel
    schedule: Schedule
    per_lambda: list
    notes: list = field(default_factory=list)

    @property
    def lams(self) -> np.ndarray:
        return np.array([x.lam for x in self.per_lambda])

    @property
    def accepted(self) -> np.ndarray:
        return np.array([x.accepted for x in self.per_lambda])

    def acceptance_rate(self) -> float:
        return float(self.accepted.mean()) if self.per_lambda else math.nan

    def r_family(self) -> np.ndarray:
        """``r`` per grid point from the last completed step (rejected points included)."""
        return np.array([x.r_final for x in self.per_lambda])

    def mu_family(self) -> np.ndarray:
        return np.array([x.mu_inf for x in self.per_lambda])

    def interpolate_mu(self, lam) -> np.ndarray:
        """Piecewise-linear extension of ``mu_inf`` in the parameter."""
        lams, mu = self.lams, self.mu_family()
        lam = np.atleast_1d(np.asarray(lam, dtype=float))
        out = np.empty((len(lam), mu.shape[1]))
        for j in range(mu.shape[1]):
            out[:, j] = np.interp(lam, lams, mu[:, j])
        return out

    def accepted_sets(self) -> list:
        """Parameter values surviving each step, for the nesting check."""
        steps = self.schedule.max_steps
        return [set(x.lam for x in self.per_lambda if x.steps >= n) for n in range(steps + 1)]


def _smallness_note(model: NlsModel, sched: Schedule) -> str | None:
    if sched.gamma > 0 and model.eps / sched.gamma > sched.smallness:
        return f"eps/gamma = {model.eps / sched.gamma:.3g} exceeds the smallness threshold {sched.smallness}"
    return None


def reduce_one(model: NlsModel, sched: Schedule, lam: float, keep_chain: bool = False) -> LambdaResult:
    """Run the iteration at one parameter value."""
    omega = model.freq.vector
    D = build_diagonal(model)
    R = initial_remainder(model)
    res = LambdaResult(lam, False, 0, mu0=D.mu0.copy(), chain=[] if keep_chain else None)
    res.residuals.append(s_norm(R, sched.s0))
    rs = [D.r.copy()]
    res.hamiltonian.append(self_adjoint_residual(R, sched.s0))
    for n in range(sched.max_steps):
        p = sched.params(n)
        try:
            D, R, A, diag_ = kam_single_step(D, R, lam, p, omega)
        except MelnikovFailure as exc:
            res.reason, res.witness = f"screen failed at step {n}", exc.screen.witness
            break
        except SmallDivisorError as exc:
            res.reason, res.witness = f"small divisor at step {n}", exc.witness
            break
        except SeriesDivergence:
            res.reason = f"Lie series diverged at step {n}"
            break
        diag_.step = n
        res.steps = n + 1
        rs.append(D.r.copy())
        res.residuals.append(diag_.R_s0_after)
        res.hamiltonian.append(diag_.hamiltonian_residual)
        res.diagnostics.append(diag_)
        if keep_chain:
            res.chain.append(A)
    res.r_table = np.array(rs)
    if res.steps == sched.max_steps:
        r0 = res.residuals[0]
        ok = r0 == 0 or res.residuals[-1] <= sched.accept_residual * r0
        res.accepted = ok
        if not ok:
            res.reason = "final residual above the acceptance threshold"
    return res


def _worker(args):
    return reduce_one(*args)


def worker_count() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def iterate(model: NlsModel, sched: Schedule, lams, workers: int | None = None, keep_chain: bool = False) -> ReducibilityResult:
    """Reduce at every grid point; per-point pipelines run in a process pool when ``workers > 1``."""
    lams = [float(x) for x in lams]
    notes = []
    note = _smallness_note(model, sched)
    if note:
        warnings.warn(note, stacklevel=2)
        notes.append(note)
    notes.append("candidate parameter set is the full interval [1/2, 3/2]")
    if sched.max_steps and sched.N_raw(sched.max_steps - 1) > sched.N_cap:
        notes.append(f"N clipped to the lattice diameter {sched.N_cap:g}")
    workers = worker_count() if workers is None else workers
    jobs = [(model, sched, lam, keep_chain) for lam in lams]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(_worker, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        out = [_worker(j) for j in jobs]
    return ReducibilityResult(model, sched, out, notes)


# -- transforms ---------------------------------------------------------------


def exp_operator(A: ToeplitzBlockOperator, sign: float = 1.0, H_cap: int = 6, tol: float = 1e-16,
                 s0: float = 2.0, max_terms: int = 80) -> tuple[ToeplitzBlockOperator, float]:
    """``exp(sign A)`` by its power series; returns the operator and the dropped s0 mass."""
    I = ToeplitzBlockOperator.identity(A.d, A.M_max, A.group)
    total, term = I, I
    dropped = 0.0
    nA = s_norm(A, s0)
    for k in range(1, max_terms + 1):
        term = compose(term, A) * (sign / k)
        term, cut = retruncate(term, H_cap, s0)
        dropped += cut
        total = total + term
        if s_norm(term, s0) < tol * max(1.0, nA):
            break
    return total, dropped


@dataclass
class Transform:
    psi: ToeplitzBlockOperator
    psi_inv: ToeplitzBlockOperator
    dropped: float


def compose_transform(chain, d: int | None = None, M_max: int | None = None, group=None,
                      H_cap: int = 6, s0: float = 2.0) -> Transform:
    """``Psi = exp(-A_0) ... exp(-A_n)`` and ``Psi^-1 = exp(A_n) ... exp(A_0)``."""
    if not chain:
        if d is None or M_max is None:
            raise ValueError("an empty chain needs d and M_max")
        from .lattice import GroupSpec
        I = ToeplitzBlockOperator.identity(d, M_max, group or GroupSpec.su2())
        return Transform(I, I, 0.0)
    psi = psi_inv = None
    dropped = 0.0
    for A in chain:
        e_minus, c1 = exp_operator(A, -1.0, H_cap, s0=s0)
        e_plus, c2 = exp_operator(A, 1.0, H_cap, s0=s0)
        dropped += c1 + c2
        if psi is None:
            psi, psi_inv = e_minus, e_plus
            continue
        psi, c3 = retruncate(compose(psi, e_minus), H_cap, s0)
        psi_inv, c4 = retruncate(compose(e_plus, psi_inv), H_cap, s0)
        dropped += c3 + c4
    return Transform(psi, psi_inv, dropped)


@dataclass(frozen=True)
class LimitEigenvalues:
    mu: np.ndarray
    certificate: np.ndarray
    converged: bool
    imag_max: float


def limit_eigenvalues(res: LambdaResult) -> LimitEigenvalues:
    """Last iterate plus the sequence ``max_m |mu^(n) - mu^(n-1)|``."""
    if res.r_table is None or len(res.r_table) < 3:
        raise ValueError("need at least two completed steps")
    cert = np.abs(np.diff(res.r_table, axis=0)).max(axis=1)
    # the sequence must decrease until it reaches rounding level
    floor = 1e-15 * max(1.0, float(np.abs(res.mu_inf).max()))
    dec = all(b < a or b <= floor for a, b in zip(cert, cert[1:]))
    imag = max((x.imag_residue for x in res.diagnostics), default=0.0)
    return LimitEigenvalues(res.mu_inf, cert, bool(dec), imag)


@dataclass(frozen=True)
class ReductionReport:
    absolute: float
    relative: float
    budget: float
    inverse_defect: float
    passed: bool


def reduction_residual(model: NlsModel, tr: Transform, mu_inf: np.ndarray, lam: float,
                       H_cap: int = 6, s0: float = 2.0) -> tuple[ToeplitzBlockOperator, float]:
    """``Psi^-1 (D_0 + R_0) Psi - D_inf`` without the (unbounded) time symbol.

    Uses ``Psi^-1 (i lam w.l) Psi = Psi^-1 (i lam w.h * Psi) + Psi^-1 Psi (i lam w.l)``;
    the last term is accounted for by the inversion defect reported separately.
    """
    D0 = build_diagonal(model)
    R0 = initial_remainder(model)
    psi, inv = tr.psi, tr.psi_inv
    zero = DiagonalPart(np.zeros_like(D0.mu0), np.zeros_like(D0.mu0))
    wh = divisor_table(zero, lam, model.freq.vector, psi.d, psi.H)  # lam w.h on every entry
    time_part = ToeplitzBlockOperator(1j * wh * psi.coeffs, psi.M_max, psi.group, psi.d)
    Dmu = ToeplitzBlockOperator.zeros(psi.d, 0, psi.M_max, psi.group)
    Dmu.coeffs[(0,) * psi.d] = np.diag(1j * D0.signed())
    Dinf = ToeplitzBlockOperator.zeros(psi.d, 0, psi.M_max, psi.group)
    Dinf.coeffs[(0,) * psi.d] = np.diag(1j * np.concatenate([mu_inf, -mu_inf]))
    dropped = 0.0
    X, c = retruncate(compose(Dmu + R0, psi), H_cap, s0)
    dropped += c
    X = X + time_part
    Y, c = retruncate(compose(inv, X), H_cap, s0)
    dropped += c
    return Y - Dinf, dropped


def verify_reduction(model: NlsModel, tr: Transform, mu_inf: np.ndarray, lam: float, final_residual: float = 0.0,
                     H_cap: int = 6, s0: float = 2.0, series_tol: float = 1e-12) -> ReductionReport:
    """Residual of the reduction in the s0 norm, relative to ``|R_0|_{s0}``.

    Passes when the residual is within the final remainder norm plus the
    dropped truncation mass (weighted by the transform norms) plus
    ``series_tol * |R_0|``.
    """
    res, dropped = reduction_residual(model, tr, mu_inf, lam, H_cap, s0)
    absolute = s_norm(res, s0)
    r0 = s_norm(initial_remainder(model), s0)
    I = ToeplitzBlockOperator.identity(model.d, model.M_max, model.group)
    prod, _ = retruncate(compose(tr.psi_inv, tr.psi), H_cap, s0)
    defect = s_norm(prod - I, s0)
    k_psi = s_norm(tr.psi, s0) * s_norm(tr.psi_inv, s0)
    scale = max(1.0, s_norm(build_diagonal_operator(model), s0) + r0)
    budget = k_psi * final_residual + k_psi * (dropped + tr.dropped) * scale + series_tol * max(r0, 1e-300)
    rel = absolute / r0 if r0 > 0 else (0.0 if absolute == 0 else math.inf)
    return ReductionReport(absolute, rel, budget, defect, absolute <= budget)


def build_diagonal_operator(model: NlsModel) -> ToeplitzBlockOperator:
    """``i diag(a mu_m)`` as a shift-0 operator."""
    D0 = build_diagonal(model)
    out = ToeplitzBlockOperator.zeros(model.d, 0, model.M_max, model.group)
    out.coeffs[(0,) * model.d] = np.diag(1j * D0.signed())
    return out


def screen_limit(mu_inf: np.ndarray, lam: float, model: NlsModel, sched: Schedule, factor: float = 1.0):
    """Melnikov screen with the limit eigenvalues at ``gamma * factor`` up to the largest N used."""
    D = DiagonalPart(mu_inf, np.zeros_like(mu_inf))
    N = sched.N(max(sched.max_steps - 1, 0))
    return melnikov_screen(D, lam, sched.gamma * factor, sched.tau, N, model.freq.vector)


# -- checks on a finished run ---------------------------------------------------


def reevaluate_witness(res: LambdaResult, model: NlsModel, sched: Schedule) -> tuple[float, float]:
    """``(|delta|, gamma <h>^-tau)`` for a rejection witness, recomputed from the recorded spectrum."""
    if res.witness is None:
        raise ValueError("no witness recorded")
    h, m, a, mp, ap = res.witness
    mu = res.mu0 + res.r_table[-1]
    wh = float(np.dot(model.freq.vector, h))
    delta = abs(res.lam * wh + a * mu[m] - ap * mu[mp])
    br = max(1.0, max((abs(x) for x in h), default=0))
    return delta, sched.gamma * br ** -sched.tau


def eigen_bound_constant(result: ReducibilityResult) -> float:
    """Fitted ``C`` in ``|r^(n)_m| <= C eps`` over accepted points and all steps."""
    eps = result.model.eps
    rows = [np.abs(x.r_table).max() for x in result.per_lambda if x.accepted]
    if not rows or eps == 0:
        return 0.0
    return float(max(rows) / eps)


def lipschitz_constant(result: ReducibilityResult) -> float:
    """Largest adjacent-sample slope of ``mu_inf`` across the grid."""
    lams, mu = result.lams, result.mu_family()
    if len(lams) < 2:
        return 0.0
    return float((np.abs(np.diff(mu, axis=0)).max(axis=1) / np.diff(lams)).max())


def envelope_fit(res: LambdaResult, sched: Schedule) -> tuple[float, np.ndarray]:
    """Fit ``|mu_inf - mu^(n)| <= C gamma N_{n-1}^{1-beta}`` and return ``(C, ratios)``.

    ``N`` is taken unclipped, so the envelope is the schedule's nominal one.
    """
    diffs = np.abs(res.r_table[-1] - res.r_table[1:-1]).max(axis=1)
    env = np.array([sched.gamma * float(sched.N_raw(n)) ** (1 - sched.beta) for n in range(len(diffs))])
    ratios = diffs / env
    return float(ratios.max(initial=0.0)), ratios


def containment_violations(result: ReducibilityResult, factor: float = 2.0) -> list:
    """Grid points satisfying the limit conditions at ``factor * gamma`` but rejected."""
    out = []
    for x in result.per_lambda:
        if x.accepted:
            continue
        if screen_limit(x.mu_inf, x.lam, result.model, result.schedule, factor).passed:
            out.append(x.lam)
    return out


def write_csv(result: ReducibilityResult, path) -> None:
    """Acceptance table: one row per grid point, floats as hex."""
    steps = result.schedule.max_steps
    cols = ["lambda", "accepted", "steps"] + [f"residual_{n}" for n in range(steps + 1)] + ["max_abs_r", "witness"]
    with open(path, "w", newline="") as fh:
        fh.write(",".join(cols) + "\n")
        for x in result.per_lambda:
            res = [float(v).hex() for v in x.residuals] + [""] * (steps + 1 - len(x.residuals))
            wit = "" if x.witness is None else " ".join(str(v) for v in (*x.witness[0], *x.witness[1:]))
            row = [float(x.lam).hex(), str(int(x.accepted)), str(x.steps), *res,
                   float(np.abs(x.r_final).max()).hex(), wit]
            fh.write(",".join(row) + "\n")
