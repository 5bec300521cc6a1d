"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The two full reductions (eps and eps/2 on the default 200-point grid) are
shared session fixtures; they dominate the runtime.
"""
import time

import numpy as np
import pytest

from su2kam import decay_norm as dn
from su2kam.harmonics import CentralFunction, char_product, multiplication_matrix
from su2kam.kam_driver import Schedule, compose_transform, iterate, reduce_one, verify_reduction, worker_count
from su2kam.kam_step import conjugate, melnikov_screen, solve_homological
from su2kam.lattice import default_frequency
from su2kam.linop import NlsModel, Truncation, build_diagonal, initial_remainder, random_hamiltonian
from su2kam.melnikov_sieve import MuFamily, default_grid, extend_first_order, measure_estimate, pruning_audit
from su2kam.oracles import conjugation_oracle, homological_residual_materialized
from su2kam.stability import (
    band_halfwidth,
    compare_flows,
    evolve_linearized,
    evolve_reduced,
    random_angles,
    real_initial_state,
    transform_error,
)

pytestmark = pytest.mark.slow

OMEGA = default_frequency(2).vector
EPS, GAMMA = 1e-3, 1e-2
GRID = np.linspace(0.5, 1.5, 200)
STAB_LAM = 0.9317


def default_model(eps=EPS, M_max=24):
    return NlsModel(eps=eps, truncation=Truncation(6, M_max, 6))


def timed_run(eps):
    model = default_model(eps)
    sched = Schedule.for_model(model, gamma=GAMMA)
    t = time.perf_counter()
    res = iterate(model, sched, GRID)
    return res, time.perf_counter() - t


@pytest.fixture(scope="session")
def default_run():
    return timed_run(EPS)


@pytest.fixture(scope="session")
def half_run():
    return timed_run(EPS / 2)


def rand_op(rng, H, M, decay=0.5):
    n = 2 * (M + 1)
    shape = (2 * H + 1,) * 2 + (n, n)
    c = rng.normal(size=shape) + 1j * rng.normal(size=shape)
    hv = np.abs(np.indices((2 * H + 1,) * 2) - H).max(axis=0)
    mv = np.abs(np.arange(M + 1)[:, None] - np.arange(M + 1)[None, :])
    mv = np.tile(mv, (2, 2))
    return dn.ToeplitzBlockOperator(c * np.exp(-decay * (hv[..., None, None] + mv)), M)


# -- 1 --------------------------------------------------------------------------


def test_character_algebra(criterion):
    t = time.perf_counter()
    dims_ok = all(sum(p + 1 for p in char_product(h, m)) == (h + 1) * (m + 1)
                  for h in range(31) for m in range(31))
    rng = np.random.default_rng(1)
    M, worst = 20, 0.0
    for _ in range(50):
        b = CentralFunction({int(k): complex(*rng.normal(size=2)) for k in rng.integers(0, 6, size=3)})
        c = CentralFunction({int(k): complex(*rng.normal(size=2)) for k in rng.integers(0, 6, size=3)})
        safe = M - max(b.support, c.support) + 1
        lhs = multiplication_matrix(b, M) @ multiplication_matrix(c, M)
        rhs = multiplication_matrix(b * c, M)
        worst = max(worst, float(np.abs(lhs - rhs)[:safe, :safe].max()))
    el = time.perf_counter() - t
    ok = dims_ok and worst <= 1e-12 and el < 10
    assert criterion("1", ok, f"dimensions exact={dims_ok}, homomorphism max err {worst:.2e} (<=1e-12), {el:.1f}s")


# -- 2 --------------------------------------------------------------------------


def test_decay_norm_calculus(criterion):
    t = time.perf_counter()
    rng = np.random.default_rng(2)
    s0 = 2.0
    ops = [rand_op(rng, 6, 10, decay=0.3) for _ in range(100)]
    slack = np.inf
    for A in ops:
        for N in (2, 4, 8):
            _, high = dn.smooth_project(A, N)
            for beta in (1.0, 2.0, 4.0):
                slack = min(slack, N**-beta * dn.s_norm(A, s0 + beta) - dn.s_norm(high, s0))

    def ratios(pairs, s):
        alg, itp = [], []
        for A, B in pairs:
            ab = dn.s_norm(dn.compose(A, B), s)
            alg.append(ab / (dn.s_norm(A, s) * dn.s_norm(B, s)))
            itp.append(ab / (dn.s_norm(A, s) * dn.s_norm(B, s0) + dn.s_norm(A, s0) * dn.s_norm(B, s)))
        return max(alg), max(itp)

    pairs = [(rand_op(rng, 2, 8), rand_op(rng, 2, 8)) for _ in range(200)]
    detail, stable = [], True
    for s in (s0, s0 + 2):
        c100, i100 = ratios(pairs[:100], s)
        c200, i200 = ratios(pairs, s)
        stable &= c200 <= 2 * c100 and i200 <= 2 * i100
        detail.append(f"s={s:g}: C_alg {c100:.3f}->{c200:.3f}, C_int {i100:.3f}->{i200:.3f}")
    el = time.perf_counter() - t
    ok = slack >= -1e-14 and stable and el < 60
    assert criterion("2", ok, f"smoothing min slack {slack:.2e}; {'; '.join(detail)}; {el:.1f}s")


# -- 3 --------------------------------------------------------------------------


def _screened_cases(n, rng, gamma=1e-2, tau=5.0, N=4):
    D = build_diagonal(default_model(M_max=12))
    out = []
    while len(out) < n:
        lam = float(rng.uniform(0.5, 1.5))
        if melnikov_screen(D, lam, gamma, tau, N, OMEGA).passed:
            out.append((lam, random_hamiltonian(2, 2, 12, rng, 1e-3)))
    return D, out


def test_homological_exactness(criterion):
    t = time.perf_counter()
    D, cases = _screened_cases(20, np.random.default_rng(3))
    worst = 0.0
    for lam, R in cases:
        A = solve_homological(R, D, lam, 4, 1e-2, 5.0, OMEGA)
        _, rel = homological_residual_materialized(R, A, D, lam, 4, OMEGA, 6)
        worst = max(worst, rel)
    el = time.perf_counter() - t
    ok = worst <= 1e-12 and el < 60
    assert criterion("3", ok, f"max |Pi_N R + [A,D] - diag R| / |R| = {worst:.2e} (<=1e-12) over 20 cases, {el:.1f}s")


# -- 4 --------------------------------------------------------------------------


def test_conjugation_oracle(criterion):
    t = time.perf_counter()
    D, cases = _screened_cases(4, np.random.default_rng(4))
    model = default_model(M_max=12)
    cases.append((STAB_LAM, initial_remainder(model)))
    worst = 0.0
    for lam, R in cases:
        R = R.resized(1) if R.H > 1 else R
        A = solve_homological(R, D, lam, 4, 1e-2, 5.0, OMEGA)
        D1, R1, _ = conjugate(D, R, A, 4, H_cap=6)
        chk = conjugation_oracle(D, R, A, D1, R1, lam, OMEGA, 6, interior=2)
        worst = max(worst, chk.relative)
    el = time.perf_counter() - t
    ok = worst <= 1e-10 and el < 120
    assert criterion("4", ok, f"max relative deviation from materialized exp(A)(D+R)exp(-A): {worst:.2e} "
                              f"(<=1e-10) over {len(cases)} cases, interior |h|<=2, {el:.1f}s")


# -- 5 --------------------------------------------------------------------------


def test_kam_convergence(criterion, default_run):
    res, el = default_run
    acc = [x for x in res.per_lambda if x.accepted]
    mono = all(all(b < a for a, b in zip(x.residuals, x.residuals[1:])) for x in acc)
    worst = max(x.residuals[-1] / x.residuals[0] for x in acc)
    ok = bool(acc) and mono and worst <= 1e-8 and el < 600
    assert criterion("5a", ok, f"{len(acc)} accepted points: strictly decreasing={mono}, "
                               f"max final/initial {worst:.2e} (<=1e-8); {el:.0f}s with {worker_count()} worker(s)")


def test_acceptance_rate(criterion, default_run):
    res, _ = default_run
    rate = res.acceptance_rate()
    reasons = {}
    for x in res.per_lambda:
        if not x.accepted:
            key = x.reason.split(" at step")[0]
            reasons[key] = reasons.get(key, 0) + 1
    assert criterion("5b", rate >= 1 - 10 * GAMMA, f"acceptance rate {rate:.3f} (>= {1 - 10 * GAMMA:.2f}); "
                                                    f"rejections {reasons}")


# -- 6 --------------------------------------------------------------------------


def test_eigenvalue_reality(criterion, default_run):
    res, _ = default_run
    imag = max(d.imag_residue for x in res.per_lambda for d in x.diagnostics)
    assert criterion("6a", imag <= 1e-12, f"max |Im r| discarded over all steps {imag:.2e} (<=1e-12)")


def test_eigenvalue_linearity(criterion, default_run, half_run):
    full, _ = default_run
    half, el = half_run
    a = max(float(np.abs(x.r_final).max()) for x in full.per_lambda if x.accepted)
    b = max(float(np.abs(x.r_final).max()) for x in half.per_lambda if x.accepted)
    ratio = b / a
    assert criterion("6b", 0.4 <= ratio <= 0.6, f"max|r| {a:.4e} -> {b:.4e} at eps/2, ratio {ratio:.4f} "
                                                 f"in [0.4, 0.6]; second run {el:.0f}s")


# -- 7 --------------------------------------------------------------------------


def test_hamiltonian_persistence(criterion, default_run):
    res, _ = default_run
    worst = max(max(x.hamiltonian) for x in res.per_lambda)
    steps = sum(len(x.hamiltonian) for x in res.per_lambda)
    assert criterion("7", worst <= 1e-10, f"max self-adjointness residual {worst:.2e} (<=1e-10) over {steps} iterates")


# -- 8 --------------------------------------------------------------------------


def test_measure_scaling(criterion, default_run):
    res, _ = default_run
    t = time.perf_counter()
    fam = extend_first_order(MuFamily.from_reduction(res), res.model, 80)
    gammas = [1e-2, 3e-3, 1e-3]
    rep = measure_estimate(fam, gammas, default_grid(2000), 5.0, 8, 80, OMEGA)
    false, checked = {}, 0
    for g in gammas:
        audit = pruning_audit(fam, g, 5.0, 8, 80, OMEGA, np.linspace(0.5, 1.5, 101), random_checks=10_000,
                              rng=np.random.default_rng(8))
        for k, v in audit.false_prunes.items():
            false[k] = false.get(k, 0) + v
        false["random"] = false.get("random", 0) + audit.random_recheck_failures
        checked += audit.resonant_tuples
    el = time.perf_counter() - t
    ok = 0.7 <= rep.slope <= 1.3 and not any(false.values()) and el < 300
    fr = ", ".join(f"{f:.4f}" for f in rep.fractions)
    assert criterion("8", ok, f"fractions {fr} -> slope {rep.slope:.3f} in [0.7, 1.3]; false prunes {false} "
                              f"over {checked} resonant tuples; {el:.0f}s")


# -- 9 --------------------------------------------------------------------------


def _stability_case(eps, M_max=12):
    model = default_model(eps, M_max)
    sched = Schedule.for_model(model, gamma=GAMMA)
    res = reduce_one(model, sched, STAB_LAM, keep_chain=True)
    return model, sched, res


def test_stability_band(criterion):
    t = time.perf_counter()
    h0 = real_initial_state(12, np.random.default_rng(9), modes=3)
    widths, flow_ok, conserve, accepted = [], True, 0.0, True
    for eps in (EPS, EPS / 4):
        model, sched, res = _stability_case(eps)
        accepted &= res.accepted
        traj = evolve_linearized(model, STAB_LAM, h0, 100.0 / eps, 1e-10, n_out=200)
        widths.append(band_halfwidth(traj.band))
        tr = compose_transform(res.chain, H_cap=sched.H_cap)
        rep = verify_reduction(model, tr, res.mu_inf, STAB_LAM, res.residuals[-1], sched.H_cap, sched.s0)
        short = evolve_linearized(model, STAB_LAM, h0, 100.0, 1e-10, n_out=50)
        flow_ok &= compare_flows(short, tr.psi, tr.psi_inv, res.mu_inf, rep.absolute).passed
        times = np.linspace(0, 100.0 / eps, 201)
        v = evolve_reduced(res.mu_inf, h0, times)
        w = dn.phase_space_weights(12, model.group, sched.s)
        nv = np.sqrt((np.abs(v) ** 2 * w**2).sum(axis=1))
        conserve = max(conserve, float(np.abs(nv / nv[0] - 1).max()))
    el = time.perf_counter() - t
    finite = all(np.isfinite(widths))
    ok = accepted and finite and widths[1] <= 0.5 * widths[0] and conserve <= 1e-12 and flow_ok and el < 600
    assert criterion("9", ok, f"lambda {STAB_LAM}: sup band half-width {widths[0]:.4e} -> {widths[1]:.4e} "
                              f"at eps/4 (ratio {widths[1] / widths[0]:.3f} <= 0.5); reduced-flow drift "
                              f"{conserve:.1e}; flow comparison {'ok' if flow_ok else 'FAILED'}; {el:.0f}s")


# -- 10 -------------------------------------------------------------------------


def test_near_identity_transform(criterion, default_run):
    res, _ = default_run
    lams = [x.lam for x in res.per_lambda if x.accepted][::25]
    consts = {}
    for M in (12, 24):
        c = 0.0
        for lam in lams:
            model = default_model(EPS, M)
            sched = Schedule.for_model(model, gamma=GAMMA)
            r = reduce_one(model, sched, lam, keep_chain=True)
            if not r.accepted:
                continue
            tr = compose_transform(r.chain, H_cap=sched.H_cap)
            I = dn.ToeplitzBlockOperator.identity(2, M)
            c = max(c, dn.s_norm(tr.psi - I, sched.s0) / (EPS / GAMMA))
        consts[M] = c
    stable = 0.5 <= consts[24] / consts[12] <= 2.0
    errs = []
    phis = random_angles(2, 16, np.random.default_rng(10))
    h = real_initial_state(12, np.random.default_rng(11), modes=3)
    for eps in (EPS, EPS / 2):
        model, sched, r = _stability_case(eps)
        tr = compose_transform(r.chain, H_cap=sched.H_cap)
        errs.append(transform_error(tr.psi_inv, phis, h, sched.s0))
    ratio = errs[1] / errs[0]
    ok = stable and ratio <= 0.7
    assert criterion("10", ok, f"|Psi - Id|_s0 <= C eps/gamma with C {consts[12]:.4f} (M=12), {consts[24]:.4f} "
                               f"(M=24) over {len(lams)} points; transform error {errs[0]:.3e} -> {errs[1]:.3e} "
                               f"(ratio {ratio:.3f} <= 0.7)")
