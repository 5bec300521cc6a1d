"""Command line: ``su2kam {reduce,sieve,stability,verify,bench} CONFIG``.

Every command writes under ``<output_dir>/<manifest hash>/``; the manifest
echoes the full configuration and the code version, and every artifact
starts with a ``# manifest <hash>`` line.  Floats are written as hexadecimal
significands so reruns are byte-identical.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__, kernels
from .config import ConfigError, RunConfig, load

log = logging.getLogger("su2kam")

REDUCE_FILES = {
    "acceptance.csv": ["lambda", "accepted", "steps"],
    "residuals.csv": ["lambda", "step", "residual_s0"],
    "eigenvalues.csv": ["lambda", "m", "mu_inf", "r_inf"],
}


class MissingArtifacts(RuntimeError):
    pass


def _hex(x) -> str:
    return float(x).hex()


def _prepare(cfg: RunConfig) -> Path:
    out = cfg.run_dir()
    out.mkdir(parents=True, exist_ok=True)
    manifest = dict(cfg.manifest(), hash=cfg.manifest_hash())
    (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    return out


def _stamp(path: Path, cfg: RunConfig) -> None:
    """Prefix an artifact with the manifest hash."""
    body = path.read_text()
    path.write_text(f"# manifest {cfg.manifest_hash()}\n" + body)


def _read_table(path: Path) -> tuple[list, list]:
    lines = [ln for ln in path.read_text().splitlines() if ln and not ln.startswith("#")]
    head = lines[0].split(",")
    return head, [ln.split(",") for ln in lines[1:]]


def check_schema(run_dir: Path, files: dict = REDUCE_FILES) -> list:
    """Problems found in a run directory (empty when every table has its leading columns)."""
    problems = []
    for name, cols in files.items():
        p = Path(run_dir) / name
        if not p.exists():
            problems.append(f"{name}: missing")
            continue
        head, rows = _read_table(p)
        if head[: len(cols)] != cols:
            problems.append(f"{name}: header {head[:len(cols)]} != {cols}")
        if any(len(r) != len(head) for r in rows):
            problems.append(f"{name}: ragged rows")
    return problems


def _workers(cfg: RunConfig) -> int | None:
    return cfg.workers if cfg.workers > 0 else None


# -- reduce ---------------------------------------------------------------------


def cmd_reduce(cfg: RunConfig) -> int:
    from .kam_driver import eigen_bound_constant, iterate, lipschitz_constant, write_csv

    out = _prepare(cfg)
    model = cfg.model()
    sched = cfg.schedule(model)
    result = iterate(model, sched, cfg.lambda_grid(), workers=_workers(cfg))
    write_csv(result, out / "acceptance.csv")
    with open(out / "residuals.csv", "w") as fh:
        fh.write("lambda,step,residual_s0\n")
        for x in result.per_lambda:
            for n, r in enumerate(x.residuals):
                fh.write(f"{_hex(x.lam)},{n},{_hex(r)}\n")
    with open(out / "eigenvalues.csv", "w") as fh:
        fh.write("lambda,m,mu_inf,r_inf\n")
        for x in result.per_lambda:
            for m, (mu, r) in enumerate(zip(x.mu_inf, x.r_final)):
                fh.write(f"{_hex(x.lam)},{m},{_hex(mu)},{_hex(r)}\n")
    rate = result.acceptance_rate()
    lines = [*result.notes, f"acceptance_rate {rate!r}", f"eigen_bound_C {eigen_bound_constant(result)!r}",
             f"lipschitz_mu {lipschitz_constant(result)!r}"]
    for e in cfg.eps_sweep:
        sub = iterate(cfg.model(eps=e), sched, cfg.lambda_grid(), workers=_workers(cfg))
        r_max = max((float(np.abs(x.r_final).max()) for x in sub.per_lambda if x.accepted), default=math.nan)
        lines.append(f"sweep eps {e!r} acceptance {sub.acceptance_rate()!r} max_abs_r {r_max!r}")
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    for name in REDUCE_FILES:
        _stamp(out / name, cfg)
    print(f"reduce: {len(result.per_lambda)} parameter values, acceptance {rate:.3f}, artifacts in {out}")
    return 0


def load_spectrum(cfg: RunConfig):
    """Limit spectra from a previous ``reduce`` run of the same configuration."""
    from .melnikov_sieve import MuFamily
    path = cfg.run_dir() / "eigenvalues.csv"
    if not path.exists():
        raise MissingArtifacts(f"no reduction artifacts at {path.parent}; run `su2kam reduce {cfg.source or 'CONFIG'}` first")
    _, rows = _read_table(path)
    lams = sorted({float.fromhex(r[0]) for r in rows})
    K = 1 + max(int(r[1]) for r in rows)
    mu = np.zeros((len(lams), K))
    idx = {lam: i for i, lam in enumerate(lams)}
    for r in rows:
        mu[idx[float.fromhex(r[0])], int(r[1])] = float.fromhex(r[2])
    return MuFamily(np.array(lams), mu, cfg.group_spec)


def load_acceptance(cfg: RunConfig) -> list:
    path = cfg.run_dir() / "acceptance.csv"
    if not path.exists():
        raise MissingArtifacts(f"no reduction artifacts at {path.parent}; run `su2kam reduce {cfg.source or 'CONFIG'}` first")
    _, rows = _read_table(path)
    return [(float.fromhex(r[0]), r[1] == "1") for r in rows]


# -- sieve ----------------------------------------------------------------------


def cmd_sieve(cfg: RunConfig) -> int:
    from .melnikov_sieve import (MuFamily, default_grid, extend_first_order, gap_check, measure_estimate,
                                 pruning_audit)

    out = _prepare(cfg)
    model = cfg.model()
    if cfg.sieve_spectrum == "reduction":
        fam = extend_first_order(load_spectrum(cfg), model, cfg.sieve_M_max)
    else:
        fam = MuFamily.unperturbed(cfg.sieve_M_max, cfg.mass, cfg.group_spec)
    gammas = list(cfg.gamma_sweep) or [cfg.gamma_value]
    grid = default_grid(cfg.sieve_grid_size)
    omega = model.freq.vector
    rep = measure_estimate(fam, gammas, grid, cfg.tau, cfg.sieve_L_max, cfg.sieve_M_max, omega, cfg.sieve_mode)
    with open(out / "sieve.csv", "w") as fh:
        fh.write("gamma,fraction\n")
        for g, f in rep.rows():
            fh.write(f"{_hex(g)},{_hex(f)}\n")
        if len(gammas) > 1:
            fh.write(f"slope,{_hex(rep.slope)}\n")
    audit = pruning_audit(fam, max(gammas), cfg.tau, cfg.sieve_L_max, cfg.sieve_M_max, omega,
                          np.linspace(cfg.lambda_min, cfg.lambda_max, 201), cfg.sieve_mode,
                          random_checks=10_000, rng=np.random.default_rng(cfg.seed))
    with open(out / "audit.csv", "w") as fh:
        fh.write("rule,false_prunes\n")
        for rule, n in audit.false_prunes.items():
            fh.write(f"{rule},{n}\n")
        fh.write(f"random_recheck_failures,{audit.random_recheck_failures}\n")
    c_eps = 2 * float(np.abs(fam.mu - MuFamily.unperturbed(fam.M_max, cfg.mass, cfg.group_spec).mu).max())
    gc = gap_check(fam, c_eps)
    (out / "gap.txt").write_text(
        f"gap {gc.gap!r}\nwhere {gc.where}\nc_eps {gc.c_eps!r}\n"
        + "".join(f"holds {c!r} {ok}\n" for c, ok in gc.holds.items()) + "".join(f"note {n}\n" for n in rep.notes))
    for name in ("sieve.csv", "audit.csv"):
        _stamp(out / name, cfg)
    print(f"sieve: fractions {', '.join(f'{f:.4f}' for f in rep.fractions)}; slope {rep.slope:.3f}; "
          f"audit {'clean' if audit.clean else 'FALSE PRUNES'}")
    return 0 if audit.clean else 1


# -- stability ------------------------------------------------------------------


def cmd_stability(cfg: RunConfig) -> int:
    from .kam_driver import compose_transform, reduce_one, verify_reduction
    from .stability import (band_halfwidth, compare_flows, evolve_linearized, real_initial_state,
                            write_norms_csv)

    table = load_acceptance(cfg)
    accepted = [lam for lam, ok in table if ok]
    if not accepted:
        print("stability: no accepted parameter value in the reduction run", file=sys.stderr)
        return 1
    lam = min(accepted, key=lambda x: (abs(x - cfg.stability_lambda), x))
    out = _prepare(cfg)
    model = cfg.model(M_max=cfg.stability_M_max)
    sched = cfg.schedule(model)
    res = reduce_one(model, sched, lam, keep_chain=True)
    h0 = real_initial_state(model.M_max, np.random.default_rng(cfg.seed), modes=cfg.stability_modes)
    t_end = cfg.stability_t_end_per_inverse_eps / cfg.eps if cfg.eps > 0 else cfg.stability_t_end_per_inverse_eps
    traj = evolve_linearized(model, lam, h0, t_end, cfg.integrator_rtol, n_out=200, s=cfg.s0)
    write_norms_csv(traj, (cfg.s0, cfg.s), out / "norms.csv")
    lo, hi = traj.band
    (out / "band.csv").write_text(f"lambda,inf,sup,halfwidth\n{_hex(lam)},{_hex(lo)},{_hex(hi)},"
                                  f"{_hex(band_halfwidth(traj.band))}\n")
    passed = True
    if res.accepted:
        tr = compose_transform(res.chain, d=model.d, M_max=model.M_max, group=model.group, H_cap=sched.H_cap)
        rep = verify_reduction(model, tr, res.mu_inf, lam, res.residuals[-1], sched.H_cap, sched.s0)
        short = evolve_linearized(model, lam, h0, 100.0, cfg.integrator_rtol, n_out=50, s=cfg.s0)
        cmp_ = compare_flows(short, tr.psi, tr.psi_inv, res.mu_inf, rep.absolute)
        with open(out / "flow_compare.csv", "w") as fh:
            fh.write("t,deviation,bound\n")
            for t, dv, b in zip(cmp_.times, cmp_.deviation, cmp_.bound):
                fh.write(f"{_hex(t)},{_hex(dv)},{_hex(b)}\n")
        _stamp(out / "flow_compare.csv", cfg)
        passed = cmp_.passed
    for name in ("norms.csv", "band.csv"):
        _stamp(out / name, cfg)
    print(f"stability: lambda {lam:.6f}, band [{lo:.6f}, {hi:.6f}], flow comparison {'ok' if passed else 'FAILED'}")
    return 0 if passed else 1


# -- verify ---------------------------------------------------------------------


def cmd_verify(cfg: RunConfig, mutate: bool = False) -> int:
    """Oracle and property suite at reduced sizes; ``mutate`` flips the sign of the first generator."""
    from .decay_norm import s_norm, storage_labels
    from .kam_driver import Schedule, compose_transform, reduce_one, reduction_residual, verify_reduction
    from .kam_step import conjugate, melnikov_screen, solve_homological
    from .linop import NlsModel, Truncation, build_diagonal, check_hamiltonian, random_hamiltonian
    from .melnikov_sieve import MuFamily, pruning_audit
    from .oracles import conjugation_oracle, homological_residual_materialized

    out = _prepare(cfg)
    rng = np.random.default_rng(cfg.seed)
    lines, ok_all = [], True

    def record(name, ok, value):
        nonlocal ok_all
        ok_all &= bool(ok)
        lines.append(f"{'PASS' if ok else 'FAIL'} {name} {value}")

    omega = cfg.frequency().vector
    small = NlsModel(cfg.group_spec, cfg.d, cfg.frequency(), cfg.mass, cfg.eps, cfg.forcing(), Truncation(4, 6, 4))
    D = build_diagonal(small)
    lam, gamma, tau, N = 0.9317, 1e-3, cfg.tau, 4
    for i in range(3):
        R = random_hamiltonian(cfg.d, 1, 6, rng, 1e-3)
        if not melnikov_screen(D, lam, gamma, tau, N, omega).passed:
            record(f"screen[{i}]", False, "lambda not screened")
            continue
        A = solve_homological(R, D, lam, N, gamma, tau, omega)
        _, rel = homological_residual_materialized(R, A, D, lam, N, omega, 4)
        record(f"homological[{i}]", rel <= 1e-12, f"{rel:.3e}")
        D1, R1, diag_ = conjugate(D, R, A, N, H_cap=4)
        chk = conjugation_oracle(D, R, A, D1, R1, lam, omega, 4, interior=2)
        record(f"conjugation[{i}]", chk.relative <= 1e-10, f"{chk.relative:.3e}")
        hr = check_hamiltonian(R1, 1e-10, cfg.s0)
        record(f"hamiltonian[{i}]", hr.passed, f"{hr.worst:.3e}")

    model = cfg.model(M_max=8)
    sched = Schedule.for_model(model, gamma=cfg.gamma_value, tau=cfg.tau, N0=cfg.N0, max_steps=cfg.max_steps)
    res = reduce_one(model, sched, lam, keep_chain=True)
    if res.accepted:
        chain = list(res.chain)
        if mutate:
            chain[0] = chain[0] * -1.0
        tr = compose_transform(chain, H_cap=sched.H_cap)
        rep = verify_reduction(model, tr, res.mu_inf, lam, res.residuals[-1], sched.H_cap, sched.s0)
        where = ""
        if not rep.passed:
            op, _ = reduction_residual(model, tr, res.mu_inf, lam, sched.H_cap, sched.s0)
            i = int(np.argmax(np.abs(op.coeffs)))
            *hidx, p, q = np.unravel_index(i, op.coeffs.shape)
            m, a = storage_labels(model.M_max)
            h = tuple(int(x) - op.H for x in hidx)
            where = f" at h={h} (m={m[p]}, a={a[p]:+d}) <- (m={m[q]}, a={a[q]:+d}) |entry|={abs(op.coeffs.flat[i]):.3e}"
        record("reduction", rep.passed, f"relative {rep.relative:.3e} budget {rep.budget:.3e}{where}")
    else:
        record("reduction", False, f"lambda {lam} rejected: {res.reason}")

    fam = MuFamily.unperturbed(30, cfg.mass, cfg.group_spec)
    audit = pruning_audit(fam, 1e-2, max(cfg.tau, cfg.d + 3.0), 4, 30, omega, np.linspace(0.5, 1.5, 101),
                          random_checks=2000, rng=rng)
    record("pruning_audit", audit.clean, json.dumps(audit.false_prunes, sort_keys=True))
    (out / "verify.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return 0 if ok_all else 1


# -- bench ----------------------------------------------------------------------


def cmd_bench(cfg: RunConfig) -> int:
    from .bench import format_rows, run
    out = _prepare(cfg)
    rows = run(scale=1.0, repeat=3, seed=cfg.seed)
    with open(out / "bench.csv", "w") as fh:
        fh.write("kernel,backend,size,seconds,max_abs_diff\n")
        for r in rows:
            fh.write(f"{r.kernel},{r.backend},{r.size},{r.seconds!r},{r.max_abs_diff!r}\n")
    print(format_rows(rows))
    return 0


COMMANDS = {"reduce": cmd_reduce, "sieve": cmd_sieve, "stability": cmd_stability, "verify": cmd_verify,
            "bench": cmd_bench}


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="su2kam", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"su2kam {__version__} ({kernels.BACKEND} kernels)")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("config", type=Path)
        if name == "verify":
            p.add_argument("--mutate", action="store_true", help="flip the sign of one generator (must fail)")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = load(args.config, sieve=args.command == "sieve")
    except FileNotFoundError:
        print(f"{args.config}: no such file", file=sys.stderr)
        return 2
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return 2
    try:
        if args.command == "verify":
            return cmd_verify(cfg, mutate=args.mutate)
        return COMMANDS[args.command](cfg)
    except MissingArtifacts as exc:
        print(str(exc), file=sys.stderr)
        return 3


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
