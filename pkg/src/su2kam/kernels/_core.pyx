# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels; see ``_fallback`` for the reference semantics."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, cos, sin, pow

cnp.import_array()

ctypedef double complex cplx


def block_profile_table(coeffs, int M):
    cdef cplx[:, :, ::1] c = np.ascontiguousarray(coeffs, dtype=np.complex128)
    cdef Py_ssize_t S = c.shape[0], k = M + 1
    out_arr = np.zeros((S, 2 * M + 1))
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t s, i, j
    cdef cplx p, q, r, t
    cdef double fro, det, disc, sig
    for s in range(S):
        for i in range(k):
            for j in range(k):
                p = c[s, i, j]
                q = c[s, i, k + j]
                r = c[s, k + i, j]
                t = c[s, k + i, k + j]
                fro = (p.real * p.real + p.imag * p.imag + q.real * q.real + q.imag * q.imag
                       + r.real * r.real + r.imag * r.imag + t.real * t.real + t.imag * t.imag)
                det = abs(p * t - q * r)
                disc = fro * fro - 4.0 * det * det
                disc = sqrt(disc) if disc > 0 else 0.0
                sig = sqrt(0.5 * (fro + disc))
                if sig > out[s, i - j + M]:
                    out[s, i - j + M] = sig
    return out_arr


cdef double[7] C_ = [0.0, 1 / 5., 3 / 10., 4 / 5., 8 / 9., 1.0, 1.0]
cdef double[7][6] A_ = [
    [0, 0, 0, 0, 0, 0],
    [1 / 5., 0, 0, 0, 0, 0],
    [3 / 40., 9 / 40., 0, 0, 0, 0],
    [44 / 45., -56 / 15., 32 / 9., 0, 0, 0],
    [19372 / 6561., -25360 / 2187., 64448 / 6561., -212 / 729., 0, 0],
    [9017 / 3168., -355 / 33., 46732 / 5247., 49 / 176., -5103 / 18656., 0],
    [35 / 384., 0.0, 500 / 1113., 125 / 192., -2187 / 6784., 11 / 84.],
]
cdef double[7] B_ = [35 / 384., 0.0, 500 / 1113., 125 / 192., -2187 / 6784., 11 / 84., 0.0]
cdef double[7] B4_ = [5179 / 57600., 0.0, 7571 / 16695., 393 / 640., -92097 / 339200., 187 / 2100., 1 / 40.]


cdef inline cplx cexpi(double x) nogil:
    return cos(x) + 1j * sin(x)


cdef void rhs(double t, cplx* z, cplx[:, :, ::1] V, double[::1] theta, double[::1] dvec,
              bint rotating, cplx* tmp, cplx* out) nogil:
    cdef Py_ssize_t n = dvec.shape[0], nk = V.shape[0], k, i, j
    cdef cplx ph, acc
    if rotating:
        for i in range(n):
            tmp[i] = cexpi(-dvec[i] * t) * z[i]
    else:
        for i in range(n):
            tmp[i] = z[i]
    for i in range(n):
        out[i] = 0
    for k in range(nk):
        ph = cexpi(theta[k] * t)
        for i in range(n):
            acc = 0
            for j in range(n):
                acc = acc + V[k, i, j] * tmp[j]
            out[i] = out[i] + ph * acc
    if rotating:
        for i in range(n):
            out[i] = -1j * cexpi(dvec[i] * t) * out[i]
    else:
        for i in range(n):
            out[i] = -1j * (dvec[i] * z[i] + out[i])


def dopri5_linear(V, theta, dvec, y0, double t0, double t1, double rtol, double atol, bint rotating,
                  t_out, weights, double h_init=0.0, long max_steps=10_000_000):
    cdef cplx[:, :, ::1] Vv = np.ascontiguousarray(V, dtype=np.complex128)
    cdef double[::1] th = np.ascontiguousarray(theta, dtype=np.float64)
    cdef double[::1] dv = np.ascontiguousarray(dvec, dtype=np.float64)
    cdef double[::1] w = np.ascontiguousarray(weights, dtype=np.float64)
    cdef double[::1] to = np.ascontiguousarray(t_out, dtype=np.float64)
    cdef Py_ssize_t n = dv.shape[0], nout = to.shape[0], i, s, j
    Y_arr = np.full((nout, n), np.nan + 0j)
    cdef cplx[:, ::1] Y = Y_arr
    info = np.zeros(6)
    cdef double sgn = 1.0 if t1 >= t0 else -1.0
    cdef double t = t0, h, hh, hs, target, err, scale, sc, e, nrm, norm0, ratio, lo = 1.0, hi = 1.0
    cdef double err_sum = 0.0, fac, errmax
    cdef long accepted = 0, rejected = 0
    cdef int status = 0
    cdef Py_ssize_t k_out = 0
    cdef bint hit

    z_arr = np.array(y0, dtype=np.complex128)
    cdef cplx[::1] yv = z_arr
    K_arr = np.empty((7, n), dtype=np.complex128)
    cdef cplx[:, ::1] K = K_arr
    zb = np.empty(n, dtype=np.complex128)
    cdef cplx[::1] z = zb
    zi_arr = np.empty(n, dtype=np.complex128)
    cdef cplx[::1] zi = zi_arr
    zn_arr = np.empty(n, dtype=np.complex128)
    cdef cplx[::1] znew = zn_arr
    tmp_arr = np.empty(n, dtype=np.complex128)
    cdef cplx[::1] tmp = tmp_arr
    cdef cplx acc, ev

    norm0 = 0.0
    for i in range(n):
        norm0 += w[i] * (yv[i].real * yv[i].real + yv[i].imag * yv[i].imag)
        z[i] = cexpi(dv[i] * t) * yv[i] if rotating else yv[i]
    norm0 = sqrt(norm0)
    while k_out < nout and sgn * (to[k_out] - t) <= 0:
        Y[k_out, :] = yv
        k_out += 1

    if h_init > 0:
        h = h_init
    else:
        scale = float(np.abs(V).sum()) if Vv.shape[0] else 0.0
        if not rotating and n:
            scale += float(np.abs(dvec).max())
        h = 0.1 / scale if scale > 0 else fabs(t1 - t0)
    h = min(h, fabs(t1 - t0)) if t1 != t0 else 0.0

    if n == 0:
        info[:] = (0, 0, 0.0, 1.0, 1.0, 0)
        return Y_arr, info
    rhs(t, &z[0], Vv, th, dv, rotating, &tmp[0], &K[0, 0])
    with nogil:
        while sgn * (t1 - t) > 0:
            if accepted + rejected >= max_steps:
                status = 2
                break
            target = to[k_out] if k_out < nout else t1
            hh = min(h, fabs(target - t))
            if hh <= 1e-14 * max(1.0, fabs(t)):
                if fabs(target - t) <= 1e-14 * max(1.0, fabs(t)):
                    hh = fabs(target - t)
                else:
                    status = 1
                    break
            hs = sgn * hh
            for s in range(1, 7):
                for i in range(n):
                    acc = z[i]
                    for j in range(s):
                        acc = acc + hs * A_[s][j] * K[j, i]
                    zi[i] = acc
                rhs(t + C_[s] * hs, &zi[0], Vv, th, dv, rotating, &tmp[0], &K[s, 0])
            err = 0.0
            errmax = 0.0
            for i in range(n):
                acc = z[i]
                ev = 0
                for j in range(6):
                    acc = acc + hs * B_[j] * K[j, i]
                for j in range(7):
                    ev = ev + hs * (B_[j] - B4_[j]) * K[j, i]
                znew[i] = acc
                sc = atol + rtol * max(abs(z[i]), abs(acc))
                e = abs(ev)
                if e > errmax:
                    errmax = e
                err += (e / sc) * (e / sc)
            err = sqrt(err / n)
            if err <= 1.0:
                accepted += 1
                err_sum += errmax
                hit = hh == fabs(target - t)
                t = target if hit else t + hs
                nrm = 0.0
                for i in range(n):
                    z[i] = znew[i]
                    K[0, i] = K[6, i]
                    yv[i] = cexpi(-dv[i] * t) * z[i] if rotating else z[i]
                    nrm += w[i] * (yv[i].real * yv[i].real + yv[i].imag * yv[i].imag)
                if norm0 > 0:
                    ratio = sqrt(nrm) / norm0
                    lo = min(lo, ratio)
                    hi = max(hi, ratio)
                while k_out < nout and sgn * (to[k_out] - t) <= 0:
                    for i in range(n):
                        Y[k_out, i] = yv[i]
                    k_out += 1
                fac = 0.9 * pow(err, -0.2) if err > 0 else 5.0
                h = hh * min(5.0, max(0.2, fac))
            else:
                rejected += 1
                h = hh * max(0.2, 0.9 * pow(err, -0.2))
    info[:] = (accepted, rejected, err_sum, lo, hi, status)
    return Y_arr, info


cdef inline Py_ssize_t lower_bound(double* row, Py_ssize_t K, double x) nogil:
    cdef Py_ssize_t lo = 0, hi = K, mid
    while lo < hi:
        mid = (lo + hi) >> 1
        if row[mid] < x:
            lo = mid + 1
        else:
            hi = mid
    return lo


def resonance_scan(lam, mu, wl, lw, bint exclude_diag=False):
    cdef double[::1] lv = np.ascontiguousarray(lam, dtype=np.float64)
    cdef double[:, ::1] mv = np.ascontiguousarray(mu, dtype=np.float64)
    cdef double[::1] wv = np.ascontiguousarray(wl, dtype=np.float64)
    cdef double[::1] bv = np.ascontiguousarray(lw, dtype=np.float64)
    cdef Py_ssize_t G = mv.shape[0], K = mv.shape[1], NL = wv.shape[0]
    best_arr = np.full(G, np.inf)
    arg_arr = np.zeros((G, 5), dtype=np.int64)
    cdef double[::1] best = best_arr
    cdef long long[:, ::1] arg = arg_arr
    cdef Py_ssize_t g, li, mi, pos, c, off
    cdef int a, ap, ia, iap
    cdef double x, target, val
    cdef double* row
    if K == 0:
        return best_arr, arg_arr
    with nogil:
        for g in range(G):
            row = &mv[g, 0]
            for ia in range(2):
                a = 1 - 2 * ia
                for iap in range(2):
                    ap = 1 - 2 * iap
                    for li in range(NL):
                        for mi in range(K):
                            x = lv[g] * wv[li] + a * row[mi]
                            target = ap * x
                            pos = lower_bound(row, K, target)
                            # neighbours of the insertion point, plus one more in case of self-exclusion
                            for off in range(-2, 2):
                                c = pos + off
                                if c < 0 or c >= K:
                                    continue
                                if (exclude_diag or wv[li] == 0) and a == ap and c == mi:
                                    continue
                                val = fabs(x - ap * row[c]) * bv[li]
                                if val < best[g]:
                                    best[g] = val
                                    arg[g, 0] = li
                                    arg[g, 1] = mi
                                    arg[g, 2] = a
                                    arg[g, 3] = c
                                    arg[g, 4] = ap
    return best_arr, arg_arr
