"""Timing of the hot kernels, compiled against pure Python."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import kernels


@dataclass(frozen=True)
class BenchRow:
    kernel: str
    backend: str
    size: str
    seconds: float
    max_abs_diff: float


def _time(fn, repeat: int):
    best, out = float("inf"), None
    for _ in range(repeat):
        t = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t)
    return best, out


def _cases(rng: np.random.Generator, scale: float):
    M = 24
    S = max(1, int(169 * scale))
    coeffs = rng.normal(size=(S, 2 * M + 2, 2 * M + 2)) + 1j * rng.normal(size=(S, 2 * M + 2, 2 * M + 2))
    yield "block_profile_table", f"S={S} M={M}", lambda b: b.block_profile_table(coeffs, M), lambda r: r

    n = 26
    V = 1e-3 * (rng.normal(size=(5, n, n)) + 1j * rng.normal(size=(5, n, n)))
    theta = np.array([0.0, 0.7, -0.7, 0.3, -0.3])
    dvec = np.concatenate([np.arange(n // 2) ** 2 / 8 + 1, -(np.arange(n // 2) ** 2 / 8 + 1)])
    y0 = rng.normal(size=n) + 0j
    t1 = 200.0 * scale
    t_out = np.linspace(0, t1, 11)
    yield ("dopri5_linear", f"n={n} t={t1:g}",
           lambda b: b.dopri5_linear(V, theta, dvec, y0, 0.0, t1, 1e-10, 1e-12, True, t_out, np.ones(n)),
           lambda r: r[0])

    G = max(1, int(400 * scale))
    K = 81
    mu = np.sort(rng.uniform(0, 800, size=(G, K)), axis=1)
    ls = rng.integers(-8, 9, size=(289, 2))
    wl = ls @ np.array([0.7071, 0.2929])
    lw = np.maximum(1, np.abs(ls).max(axis=1)) ** 5.0
    lams = np.linspace(0.5, 1.5, G)
    yield "resonance_scan", f"G={G} K={K} l=289", lambda b: b.resonance_scan(lams, mu, wl, lw), lambda r: r[0]


def run(scale: float = 1.0, repeat: int = 3, seed: int = 0) -> list:
    """Time every kernel on every available backend; diffs are taken against the pure-Python result."""
    rows = []
    rng = np.random.default_rng(seed)
    for name, size, call, key in _cases(rng, scale):
        ref = None
        for backend, mod in sorted(kernels.backends().items(), key=lambda kv: kv[0] != "python"):
            secs, out = _time(lambda: call(mod), repeat)
            val = np.asarray(key(out))
            if ref is None:
                ref = val
            diff = float(np.nanmax(np.abs(val - ref))) if val.size else 0.0
            rows.append(BenchRow(name, backend, size, secs, diff))
    return rows


def format_rows(rows) -> str:
    lines = [f"{'kernel':22s} {'backend':9s} {'size':22s} {'seconds':>10s} {'speedup':>8s} {'max|diff|':>10s}"]
    base = {r.kernel: r.seconds for r in rows if r.backend == "python"}
    for r in rows:
        sp = base[r.kernel] / r.seconds if r.seconds > 0 else float("inf")
        lines.append(f"{r.kernel:22s} {r.backend:9s} {r.size:22s} {r.seconds:10.4f} {sp:8.1f} {r.max_abs_diff:10.2e}")
    return "\n".join(lines)
