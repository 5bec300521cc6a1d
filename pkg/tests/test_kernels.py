import os
import subprocess
import sys

import numpy as np
import pytest

from su2kam import bench, kernels
from su2kam.kernels import _fallback

BACKENDS = kernels.backends()
compiled_only = pytest.mark.skipif("compiled" not in BACKENDS, reason="compiled kernels not built")


def test_fallback_always_present():
    assert "python" in BACKENDS
    assert kernels.BACKEND in ("compiled", "python")


def test_pure_python_switch():
    env = dict(os.environ, SU2KAM_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import su2kam.kernels as k; print(k.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def _profile_oracle(c, M):
    k = M + 1
    out = np.zeros((len(c), 2 * M + 1))
    for s in range(len(c)):
        for m in range(k):
            for mp in range(k):
                blk = c[s][np.ix_([m, k + m], [mp, k + mp])]
                out[s, m - mp + M] = max(out[s, m - mp + M], np.linalg.norm(blk, 2))
    return out


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_profile_table_against_svd(name, rng):
    c = rng.normal(size=(3, 8, 8)) + 1j * rng.normal(size=(3, 8, 8))
    np.testing.assert_allclose(BACKENDS[name].block_profile_table(c, 3), _profile_oracle(c, 3), rtol=1e-12)


@pytest.mark.parametrize("name", sorted(BACKENDS))
def test_resonance_scan_against_brute_force(name, rng):
    K, G = 7, 25
    mu = np.sort(rng.uniform(0, 10, size=(G, K)), axis=1)
    ls = rng.integers(-3, 4, size=(12, 2))
    ls[0] = 0
    wl = ls @ np.array([0.7, 0.3])
    lw = np.maximum(1, np.abs(ls).max(axis=1)) ** 2.0
    lams = np.linspace(0.5, 1.5, G)
    for excl in (False, True):
        best, arg = BACKENDS[name].resonance_scan(lams, mu, wl, lw, exclude_diag=excl)
        for g in range(G):
            sg = np.concatenate([mu[g], -mu[g]])
            tab = np.abs(lams[g] * wl[:, None, None] + sg[None, :, None] - sg[None, None, :]) * lw[:, None, None]
            for i in range(len(wl)):
                if excl or wl[i] == 0:
                    np.fill_diagonal(tab[i], np.inf)
            assert best[g] == pytest.approx(tab.min(), rel=1e-12, abs=1e-14)
            li, m, a, mp, ap = arg[g]
            val = abs(lams[g] * wl[li] + a * mu[g, m] - ap * mu[g, mp]) * lw[li]
            assert val == pytest.approx(best[g], rel=1e-12, abs=1e-14)


@compiled_only
def test_backends_agree_on_bench_cases():
    rows = bench.run(scale=0.05, repeat=1)
    assert {r.backend for r in rows} == {"python", "compiled"}
    for r in rows:
        assert r.max_abs_diff <= 1e-10, r
    assert "speedup" in bench.format_rows(rows)


@compiled_only
def test_dopri5_step_sequences_agree(rng):
    n = 6
    V = 1e-2 * (rng.normal(size=(2, n, n)) + 1j * rng.normal(size=(2, n, n)))
    theta = np.array([0.4, -0.4])
    dvec = np.array([1.0, 1.5, 2.0, -1.0, -1.5, -2.0])
    y0 = rng.normal(size=n) + 0j
    t_out = np.linspace(0, 30, 4)
    outs = [BACKENDS[b].dopri5_linear(V, theta, dvec, y0, 0.0, 30.0, 1e-10, 1e-12, True, t_out, np.ones(n))
            for b in ("python", "compiled")]
    np.testing.assert_allclose(outs[0][0], outs[1][0], atol=1e-12)
    assert list(np.asarray(outs[0][1])[:2]) == list(np.asarray(outs[1][1])[:2])


def test_fallback_dopri5_exponential():
    # one uncoupled mode: y = exp(-i d t) y0
    Y, info = _fallback.dopri5_linear(np.zeros((0, 2, 2), complex), np.zeros(0), np.array([2.0, -2.0]),
                                      np.array([1.0 + 0j, 1.0 + 0j]), 0.0, 3.0, 1e-12, 1e-14, False,
                                      np.array([0.0, 3.0]), np.ones(2))
    np.testing.assert_allclose(Y[-1], [np.exp(-6j), np.exp(6j)], atol=1e-10)
    assert info[-1] == 0
