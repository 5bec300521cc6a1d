"""Pure numpy versions of the compiled kernels.

Signatures and results match ``_core`` exactly (up to rounding), so either
module can back :mod:`su2kam.kernels`.
"""
from __future__ import annotations

import numpy as np


def block_profile_table(coeffs: np.ndarray, M: int) -> np.ndarray:
    """Sup over diagonals of the 2x2 sign-block spectral norms.

    ``coeffs`` has shape ``(S, n, n)`` with ``n = 2 (M + 1)`` in the storage
    order ``(m, +)`` then ``(m, -)``.  Returns ``(S, 2M + 1)`` where column
    ``dm + M`` holds ``max_{m - m' = dm} ||block(m, m')||_2``.
    """
    c = np.ascontiguousarray(coeffs, dtype=np.complex128)
    S = c.shape[0]
    k = M + 1
    p, q = c[:, :k, :k], c[:, :k, k:]
    r, t = c[:, k:, :k], c[:, k:, k:]
    fro = np.abs(p) ** 2 + np.abs(q) ** 2 + np.abs(r) ** 2 + np.abs(t) ** 2
    det = np.abs(p * t - q * r)
    disc = np.sqrt(np.maximum(fro * fro - 4.0 * det * det, 0.0))
    sigma = np.sqrt(0.5 * (fro + disc))
    m = np.arange(k)
    skew = np.zeros((S, k, 2 * M + 1))
    skew[:, m[:, None], (m[:, None] - m[None, :]) + M] = sigma
    return skew.max(axis=1) if S else np.zeros((0, 2 * M + 1))


# Dormand-Prince 5(4) tableau
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_E = _B - np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])


def _rhs(t, z, V, theta, dvec, rotating):
    Vt = np.tensordot(np.exp(1j * theta * t), V, axes=1)
    if rotating:
        u = np.exp(1j * dvec * t)
        return -1j * u * (Vt @ (np.conj(u) * z))
    return -1j * (dvec * z + Vt @ z)


def dopri5_linear(V, theta, dvec, y0, t0, t1, rtol, atol, rotating, t_out, weights,
                  h_init=0.0, max_steps=10_000_000):
    """Adaptive Dormand-Prince integration of ``y' = -i (diag(d) + V(t)) y``.

    ``V(t) = sum_k exp(i theta_k t) V[k]``.  With ``rotating`` the solver
    works on ``z = exp(i d t) y``, whose right-hand side is O(|V|) instead of
    O(|d|); outputs are always returned in the original variable ``y``.

    The step is clipped so every time in ``t_out`` is hit exactly.  Returns
    ``(Y, info)`` with ``Y[i] = y(t_out[i])`` and
    ``info = [accepted, rejected, error_sum, min_ratio, max_ratio, status]``,
    where the ratios are the extremes of ``|y(t)|_w / |y(t0)|_w`` over accepted
    steps and ``status`` is 0 on success, 1 on step-size underflow and 2 when
    ``max_steps`` ran out.
    """
    V = np.ascontiguousarray(V, dtype=np.complex128)
    theta = np.ascontiguousarray(theta, dtype=np.float64)
    dvec = np.ascontiguousarray(dvec, dtype=np.float64)
    w = np.ascontiguousarray(weights, dtype=np.float64)
    t_out = np.ascontiguousarray(t_out, dtype=np.float64)
    n = len(dvec)
    Y = np.full((len(t_out), n), np.nan + 0j)
    info = np.zeros(6)
    sgn = 1.0 if t1 >= t0 else -1.0

    t = float(t0)
    y = np.array(y0, dtype=np.complex128)
    z = np.exp(1j * dvec * t) * y if rotating else y.copy()
    norm0 = np.sqrt(np.sum(w * np.abs(y) ** 2))
    lo = hi = 1.0
    k_out = 0
    while k_out < len(t_out) and sgn * (t_out[k_out] - t) <= 0:
        Y[k_out] = y
        k_out += 1

    if h_init > 0:
        h = h_init
    else:
        scale = np.abs(V).sum(axis=(1, 2)).sum() if len(V) else 0.0
        if not rotating:
            scale += np.abs(dvec).max(initial=0.0)
        h = 0.1 / scale if scale > 0 else abs(t1 - t0)
    h = min(h, abs(t1 - t0)) if t1 != t0 else 0.0

    K = np.empty((7, n), dtype=np.complex128)
    K[0] = _rhs(t, z, V, theta, dvec, rotating)
    accepted = rejected = 0
    err_sum = 0.0
    status = 0
    while sgn * (t1 - t) > 0:
        if accepted + rejected >= max_steps:
            status = 2
            break
        target = t_out[k_out] if k_out < len(t_out) else t1
        hh = min(h, abs(target - t))
        if hh <= 1e-14 * max(1.0, abs(t)):
            if abs(target - t) <= 1e-14 * max(1.0, abs(t)):
                hh = abs(target - t)
            else:
                status = 1
                break
        hs = sgn * hh
        for i in range(1, 7):
            zi = z + hs * np.tensordot(_A[i], K[:i], axes=1)
            K[i] = _rhs(t + _C[i] * hs, zi, V, theta, dvec, rotating)
        znew = z + hs * np.tensordot(_B[:6], K[:6], axes=1)
        K6 = K[6]
        errv = hs * np.tensordot(_E, K, axes=1)
        sc = atol + rtol * np.maximum(np.abs(z), np.abs(znew))
        err = np.sqrt(np.mean((np.abs(errv) / sc) ** 2)) if n else 0.0
        if err <= 1.0:
            accepted += 1
            err_sum += np.abs(errv).max(initial=0.0)
            hit = hh == abs(target - t)
            t = target if hit else t + hs
            z = znew
            K[0] = K6
            y = np.exp(-1j * dvec * t) * z if rotating else z
            if norm0 > 0:
                r = np.sqrt(np.sum(w * np.abs(y) ** 2)) / norm0
                lo, hi = min(lo, r), max(hi, r)
            while k_out < len(t_out) and sgn * (t_out[k_out] - t) <= 0:
                Y[k_out] = y
                k_out += 1
            fac = 0.9 * err ** -0.2 if err > 0 else 5.0
            h = hh * min(5.0, max(0.2, fac))
        else:
            rejected += 1
            h = hh * max(0.2, 0.9 * err ** -0.2)
    info[:] = (accepted, rejected, err_sum, lo, hi, status)
    return Y, info


def resonance_scan(lam, mu, wl, lw, exclude_diag=False):
    """Smallest normalised divisor per parameter value.

    For each ``lam[g]`` computes
    ``min |lam w.l + a mu_m - a' mu_m'| * <l>^tau`` over all listed ``l``
    (``wl = w.l``, ``lw = <l>^tau``), labels and signs with
    ``(m, a) != (m', a')`` when ``w.l = 0`` (for every ``l`` with
    ``exclude_diag``).  Each row ``mu[g]`` must be
    strictly increasing, which lets the inner minimum be found by bisection.
    Returns ``(best, arg)`` with ``arg[g] = (l index, m, a, m', a')``.
    """
    lam = np.asarray(lam, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    wl = np.asarray(wl, dtype=np.float64)
    lw = np.asarray(lw, dtype=np.float64)
    G, K = mu.shape
    best = np.full(G, np.inf)
    arg = np.zeros((G, 5), dtype=np.int64)
    m = np.arange(K)
    excl = np.ones_like(wl, dtype=bool) if exclude_diag else wl == 0
    for g in range(G):
        row = mu[g]
        for a in (1, -1):
            for ap in (1, -1):
                # want ap * mu_m' close to x = lam w.l + a mu_m
                x = lam[g] * wl[:, None] + a * row[None, :]
                target = ap * x
                pos = np.searchsorted(row, target)
                for off in (-1, 0):
                    cand = np.clip(pos + off, 0, K - 1)
                    val = np.abs(x - ap * row[cand]) * lw[:, None]
                    self_hit = excl[:, None] & (a == ap) & (cand == m[None, :])
                    val[self_hit] = np.inf
                    # a bisection neighbour may be the excluded pair; look one further
                    if self_hit.any():
                        for step in (-1, 1):
                            c2 = np.clip(cand + step, 0, K - 1)
                            v2 = np.abs(x - ap * row[c2]) * lw[:, None]
                            v2[excl[:, None] & (a == ap) & (c2 == m[None, :])] = np.inf
                            better = self_hit & (v2 < val)
                            val[better] = v2[better]
                            cand = np.where(better, c2, cand)
                    i = np.argmin(val)
                    if val.flat[i] < best[g]:
                        li, mi = np.unravel_index(i, val.shape)
                        best[g] = val.flat[i]
                        arg[g] = (li, mi, a, cand[li, mi], ap)
    return best, arg
