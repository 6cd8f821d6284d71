# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled numerical kernels (Cython).

Same API as ``_ref``: ball-constrained GLM fits, smallest eigenvalue via
cyclic Jacobi, grid+golden-section revenue maximization, and Lloyd
iterations.  Matrix dimension is capped at MAXK; the record dimension is
unbounded.
"""

from libc.math cimport exp, floor, ldexp, log1p, fabs, sqrt
from libc.string cimport memcpy, memset

import numpy as np

LINK_LINEAR = 0
LINK_LOGISTIC = 1

cdef enum:
    MAXK = 32
    MAXK2 = 1024

cdef double INVPHI = 0.6180339887498949  # (sqrt(5)-1)/2


# ---------------------------------------------------------------------------
# scalar link pieces
# ---------------------------------------------------------------------------

cdef double _EXP_C1 = 6.93145751953125e-1
cdef double _EXP_C2 = 1.42860682030941723212e-6
cdef double _EXP_LOG2E = 1.4426950408889634074


cdef inline double _fast_exp(double x) nogil:
    # Cephes-style exp: range reduction + rational approximation (~1 ulp),
    # with 2^n applied via exponent-field bit twiddling (n is in range for
    # any |x| <= 708).  Hot paths only pass x <= 0; overflow uses libm.
    cdef double px, xx, qx, two_n
    cdef long long n
    cdef unsigned long long bits
    if x < -708.0:
        return 0.0
    if x > 708.0:
        return exp(x)
    px = floor(_EXP_LOG2E * x + 0.5)
    n = <long long>px
    x -= px * _EXP_C1
    x -= px * _EXP_C2
    xx = x * x
    px = x * (((1.26177193074810590878e-4 * xx
                + 3.02994407707441961300e-2) * xx
               + 9.99999999999999999910e-1))
    qx = (((3.00198505138664455042e-6 * xx
            + 2.52448340349684104192e-3) * xx
           + 2.27265548208155028766e-1) * xx
          + 2.00000000000000000005e0)
    x = 1.0 + 2.0 * px / (qx - px)
    bits = (<unsigned long long>(n + 1023)) << 52
    memcpy(&two_n, &bits, 8)
    return x * two_n


cdef inline double _sigmoid(double v) nogil:
    cdef double e
    if v >= 0.0:
        return 1.0 / (1.0 + _fast_exp(-v))
    e = _fast_exp(v)
    return e / (1.0 + e)


cdef inline double _softplus(double v) nogil:
    if v >= 0.0:
        return v + log1p(_fast_exp(-v))
    return log1p(_fast_exp(v))


# ---------------------------------------------------------------------------
# dense helpers on k x k scratch buffers (k <= MAXK)
# ---------------------------------------------------------------------------

cdef int _cholesky(double* A, double* C, int k) nogil:
    # lower-triangular factor of A (row-major) into C; returns 0 on success
    cdef int i, j, m
    cdef double s
    memset(C, 0, k * k * sizeof(double))
    for i in range(k):
        for j in range(i + 1):
            s = A[i * k + j]
            for m in range(j):
                s -= C[i * k + m] * C[j * k + m]
            if i == j:
                if s <= 0.0:
                    return 1
                C[i * k + i] = sqrt(s)
            else:
                C[i * k + j] = s / C[j * k + j]
    return 0


cdef void _cho_solve(double* C, double* b, double* x, int k) nogil:
    # solve C C' x = b with C lower triangular
    cdef int i, j
    cdef double s
    for i in range(k):
        s = b[i]
        for j in range(i):
            s -= C[i * k + j] * x[j]
        x[i] = s / C[i * k + i]
    for i in range(k - 1, -1, -1):
        s = x[i]
        for j in range(i + 1, k):
            s -= C[j * k + i] * x[j]
        x[i] = s / C[i * k + i]


cdef void _forward_solve(double* C, double* b, double* x, int k) nogil:
    cdef int i, j
    cdef double s
    for i in range(k):
        s = b[i]
        for j in range(i):
            s -= C[i * k + j] * x[j]
        x[i] = s / C[i * k + i]


cdef double _norm(double* v, int k) nogil:
    cdef int i
    cdef double s = 0.0
    for i in range(k):
        s += v[i] * v[i]
    return sqrt(s)


cdef int _ball_newton(double* A_in, double* b, double L, double* w, int k) nogil:
    # minimize 1/2 w'Aw - b'w over ||w|| <= L; A PSD.  Returns 0 on success.
    cdef double A[MAXK2]
    cdef double C[MAXK2]
    cdef double q[MAXK]
    cdef int i, it
    cdef double tr = 0.0, reg, nu, nrm, qn2, step
    for i in range(k):
        tr += A_in[i * k + i]
    reg = 1e-12 * (1.0 if tr < k else tr / k)
    memcpy(A, A_in, k * k * sizeof(double))
    for i in range(k):
        A[i * k + i] += reg
    if _cholesky(A, C, k) != 0:
        for i in range(k):
            A[i * k + i] += 1e-8 + reg
        if _cholesky(A, C, k) != 0:
            return 1
    _cho_solve(C, b, w, k)
    nrm = _norm(w, k)
    if nrm <= L:
        return 0
    nu = 0.0
    for it in range(100):
        memcpy(A, A_in, k * k * sizeof(double))
        for i in range(k):
            A[i * k + i] += reg + nu
        if _cholesky(A, C, k) != 0:
            return 1
        _cho_solve(C, b, w, k)
        nrm = _norm(w, k)
        if fabs(nrm - L) <= 1e-11 * L:
            break
        _forward_solve(C, w, q, k)
        qn2 = 0.0
        for i in range(k):
            qn2 += q[i] * q[i]
        if qn2 <= 0.0:
            break
        step = (nrm - L) / L * (nrm * nrm / qn2)
        nu = nu + step
        if nu < 0.0:
            nu = 0.0
    if nrm > L:
        for i in range(k):
            w[i] *= L / nrm
    return 0


# ---------------------------------------------------------------------------
# GLM objective / gradient / fit
# ---------------------------------------------------------------------------

cdef double _obj(double[:, ::1] U, double[::1] y, int link, double* theta,
                 int N, int k) nogil:
    cdef int s, j
    cdef double v, f = 0.0
    for s in range(N):
        v = 0.0
        for j in range(k):
            v += U[s, j] * theta[j]
        if link == 1:
            f += _softplus(v) - y[s] * v
        else:
            f += 0.5 * v * v - y[s] * v
    return f


cdef double _grad_hess(double[:, ::1] U, double[::1] y, int link,
                       double* theta, double* g, double* H, int N, int k,
                       int want_obj) nogil:
    # gradient + Hessian accumulation; objective only when requested
    cdef int s, i, j
    cdef double v, mu, wgt, r, f = 0.0
    memset(g, 0, k * sizeof(double))
    memset(H, 0, k * k * sizeof(double))
    for s in range(N):
        v = 0.0
        for j in range(k):
            v += U[s, j] * theta[j]
        if link == 1:
            mu = _sigmoid(v)
            wgt = mu * (1.0 - mu)
            if want_obj:
                f += _softplus(v) - y[s] * v
        else:
            mu = v
            wgt = 1.0
            if want_obj:
                f += 0.5 * v * v - y[s] * v
        r = mu - y[s]
        for i in range(k):
            g[i] += r * U[s, i]
            for j in range(i + 1):
                H[i * k + j] += wgt * U[s, i] * U[s, j]
    for i in range(k):
        for j in range(i + 1, k):
            H[i * k + j] = H[j * k + i]
    return f


cdef double _kkt(double* theta, double* g, double L, int k) nogil:
    cdef double nrm = _norm(theta, k)
    cdef double lam, s
    cdef int i
    if nrm < L * (1.0 - 1e-10):
        return _norm(g, k)
    lam = 0.0
    for i in range(k):
        lam -= theta[i] * g[i]
    lam /= L * L
    if lam < 0.0:
        lam = 0.0
    s = 0.0
    for i in range(k):
        s += (g[i] + lam * theta[i]) ** 2
    return sqrt(s)


def glm_objective(U, y, int link, theta):
    cdef double[:, ::1] Um = np.ascontiguousarray(U, dtype=np.float64)
    cdef double[::1] ym = np.ascontiguousarray(y, dtype=np.float64)
    cdef double[::1] tm = np.ascontiguousarray(theta, dtype=np.float64)
    if Um.shape[0] == 0:
        return 0.0
    return _obj(Um, ym, link, &tm[0], Um.shape[0], Um.shape[1])


def glm_gradient(U, y, int link, theta):
    cdef double[:, ::1] Um = np.ascontiguousarray(U, dtype=np.float64)
    cdef double[::1] ym = np.ascontiguousarray(y, dtype=np.float64)
    cdef double[::1] tm = np.ascontiguousarray(theta, dtype=np.float64)
    cdef int N = Um.shape[0], k = tm.shape[0]
    cdef int s, j
    cdef double v, mu
    out = np.zeros(k)
    cdef double[::1] om = out
    for s in range(N):
        v = 0.0
        for j in range(k):
            v += Um[s, j] * tm[j]
        mu = _sigmoid(v) if link == 1 else v
        for j in range(k):
            om[j] += (mu - ym[s]) * Um[s, j]
    return out


def glm_fit(U, y, int link, double L, theta0=None, tol=None, int max_iter=500):
    cdef double[:, ::1] Um = np.ascontiguousarray(U, dtype=np.float64)
    cdef double[::1] ym = np.ascontiguousarray(y, dtype=np.float64)
    cdef int N = Um.shape[0]
    cdef int k = Um.shape[1]
    if N == 0:
        return np.zeros(k)
    if k > MAXK:
        raise ValueError("dimension %d exceeds kernel limit %d" % (k, MAXK))
    cdef double ctol = 1e-8 * (N if N > 1 else 1.0) if tol is None else float(tol)

    cdef double theta[MAXK]
    cdef double g[MAXK]
    cdef double H[MAXK2]
    cdef double rhs[MAXK]
    cdef double w[MAXK]
    cdef double d[MAXK]
    cdef double cand[MAXK]
    cdef int i, j, it, ls, accepted
    cdef int have_lip = 0, uncertified = 0, f_known = 0
    cdef double nrm, fc, gd, alpha, dn
    cdef double lip = 1.0, f = 0.0

    memset(theta, 0, k * sizeof(double))
    if theta0 is not None:
        t0 = np.asarray(theta0, dtype=np.float64)
        for i in range(k):
            theta[i] = t0[i]
        nrm = _norm(theta, k)
        if nrm > L:
            for i in range(k):
                theta[i] *= L / nrm

    f = _grad_hess(Um, ym, link, theta, g, H, N, k, 1)
    f_known = 1
    for it in range(max_iter):
        if _kkt(theta, g, L, k) <= ctol:
            break
        for i in range(k):
            rhs[i] = -g[i]
            for j in range(k):
                rhs[i] += H[i * k + j] * theta[j]
        if _ball_newton(H, rhs, L, w, k) != 0:
            for i in range(k):
                w[i] = theta[i]
        for i in range(k):
            d[i] = w[i] - theta[i]
        gd = 0.0
        for i in range(k):
            gd += g[i] * d[i]
        dn = _norm(d, k)
        if gd >= 0.0 or dn <= 1e-15 * (1.0 + L):
            # stalled model step (boundary or degenerate Hessian):
            # projected gradient with a conservative 1/Lipschitz step
            if have_lip == 0:
                for i in range(N):
                    for j in range(k):
                        lip += Um[i, j] * Um[i, j] * (0.25 if link == 1 else 1.0)
                have_lip = 1
            for i in range(k):
                w[i] = theta[i] - g[i] / lip
            nrm = _norm(w, k)
            if nrm > L:
                for i in range(k):
                    w[i] *= L / nrm
            gd = 0.0
            for i in range(k):
                d[i] = w[i] - theta[i]
                gd += g[i] * d[i]
            if gd >= 0.0 or _norm(d, k) <= 1e-15 * (1.0 + L):
                break
        if f_known == 0:
            f = _obj(Um, ym, link, theta, N, k)
            f_known = 1
        if -gd <= 1e-9 * (1.0 + fabs(f)):
            # predicted decrease below objective float resolution: take the
            # raw model step; the KKT check stays the stopping certificate
            uncertified += 1
            if uncertified > 10:
                break
            for i in range(k):
                theta[i] += d[i]
            nrm = _norm(theta, k)
            if nrm > L:
                for i in range(k):
                    theta[i] *= L / nrm
            f_known = 0
        else:
            alpha = 1.0
            accepted = 0
            for ls in range(30):
                for i in range(k):
                    cand[i] = theta[i] + alpha * d[i]
                nrm = _norm(cand, k)
                if nrm > L:
                    for i in range(k):
                        cand[i] *= L / nrm
                fc = _obj(Um, ym, link, cand, N, k)
                if fc <= f + 1e-4 * alpha * gd:
                    accepted = 1
                    break
                alpha *= 0.5
            if accepted == 0:
                break
            memcpy(theta, cand, k * sizeof(double))
            f = fc
        _grad_hess(Um, ym, link, theta, g, H, N, k, 0)

    out = np.empty(k)
    for i in range(k):
        out[i] = theta[i]
    return out


def ball_least_squares(A, b, double L):
    """Minimizer of 1/2 w'Aw - b'w over the ball ||w|| <= L (A PSD)."""
    cdef double[:, ::1] Am = np.ascontiguousarray(A, dtype=np.float64)
    cdef double[::1] bm = np.ascontiguousarray(b, dtype=np.float64)
    cdef int k = Am.shape[0]
    if k > MAXK:
        raise ValueError("dimension %d exceeds kernel limit %d" % (k, MAXK))
    cdef double Abuf[MAXK2]
    cdef double bbuf[MAXK]
    cdef double w[MAXK]
    cdef int i, j
    for i in range(k):
        bbuf[i] = bm[i]
        for j in range(k):
            Abuf[i * k + j] = Am[i, j]
    if L <= 0.0:
        return np.zeros(k)
    if _ball_newton(Abuf, bbuf, L, w, k) != 0:
        return np.zeros(k)
    out = np.empty(k)
    for i in range(k):
        out[i] = w[i]
    return out


# ---------------------------------------------------------------------------
# smallest eigenvalue: cyclic Jacobi
# ---------------------------------------------------------------------------

def min_eig(M):
    cdef double[:, ::1] Mm = np.ascontiguousarray(M, dtype=np.float64)
    cdef int k = Mm.shape[0]
    if k > MAXK:
        raise ValueError("dimension %d exceeds kernel limit %d" % (k, MAXK))
    cdef double A[MAXK2]
    cdef int i, j, p, q, sweep
    cdef double off, scale, thresh, apq, app, aqq, tau, t, c, s, aip, aiq

    for i in range(k):
        for j in range(k):
            A[i * k + j] = Mm[i, j]
    if k == 1:
        return A[0]

    scale = 0.0
    for i in range(k):
        if fabs(A[i * k + i]) > scale:
            scale = fabs(A[i * k + i])
        for j in range(i + 1, k):
            if fabs(A[i * k + j]) > scale:
                scale = fabs(A[i * k + j])
    if scale == 0.0:
        return 0.0
    thresh = 1e-16 * scale

    for sweep in range(60):
        off = 0.0
        for p in range(k - 1):
            for q in range(p + 1, k):
                if fabs(A[p * k + q]) > off:
                    off = fabs(A[p * k + q])
        if off <= thresh:
            break
        for p in range(k - 1):
            for q in range(p + 1, k):
                apq = A[p * k + q]
                if fabs(apq) <= thresh * 1e-2:
                    continue
                app = A[p * k + p]
                aqq = A[q * k + q]
                tau = (aqq - app) / (2.0 * apq)
                if tau >= 0.0:
                    t = 1.0 / (tau + sqrt(1.0 + tau * tau))
                else:
                    t = -1.0 / (-tau + sqrt(1.0 + tau * tau))
                c = 1.0 / sqrt(1.0 + t * t)
                s = t * c
                A[p * k + p] = app - t * apq
                A[q * k + q] = aqq + t * apq
                A[p * k + q] = 0.0
                A[q * k + p] = 0.0
                for i in range(k):
                    if i != p and i != q:
                        aip = A[i * k + p]
                        aiq = A[i * k + q]
                        A[i * k + p] = c * aip - s * aiq
                        A[p * k + i] = A[i * k + p]
                        A[i * k + q] = s * aip + c * aiq
                        A[q * k + i] = A[i * k + q]

    cdef double lmin = A[0]
    for i in range(1, k):
        if A[i * k + i] < lmin:
            lmin = A[i * k + i]
    return lmin


# ---------------------------------------------------------------------------
# price optimization: 200-point grid scan + golden-section refinement
# ---------------------------------------------------------------------------

cdef inline double _rev_logistic(double p, double ax, double beta) nogil:
    return p * _sigmoid(ax + beta * p)


cdef inline double _rev_misspec(double p, double fz, double b1, double b2sq,
                                double b3) nogil:
    return p * _sigmoid(-(fz + p * (b1 + p * (b2sq + p * b3))))


cdef tuple _scan_golden(int mode, double c0, double c1, double c2, double c3,
                        double lo, double hi):
    cdef int n_grid = 200
    cdef double step = (hi - lo) / (n_grid - 1)
    cdef double best_p = lo, best_r, p, r, a, b, m1, m2, f1, f2
    cdef int i, k_best = 0

    best_r = _rev_logistic(lo, c0, c1) if mode == 0 else _rev_misspec(lo, c0, c1, c2, c3)
    for i in range(1, n_grid):
        p = lo + i * step if i < n_grid - 1 else hi
        r = _rev_logistic(p, c0, c1) if mode == 0 else _rev_misspec(p, c0, c1, c2, c3)
        if r > best_r:
            best_p = p
            best_r = r
            k_best = i
    a = lo + (k_best - 1) * step if k_best > 0 else lo
    b = lo + (k_best + 1) * step if k_best < n_grid - 1 else hi
    if b > hi:
        b = hi
    m1 = b - INVPHI * (b - a)
    m2 = a + INVPHI * (b - a)
    f1 = _rev_logistic(m1, c0, c1) if mode == 0 else _rev_misspec(m1, c0, c1, c2, c3)
    f2 = _rev_logistic(m2, c0, c1) if mode == 0 else _rev_misspec(m2, c0, c1, c2, c3)
    while (b - a) > 1e-8:
        if f1 > best_r or (f1 == best_r and m1 < best_p):
            best_p = m1
            best_r = f1
        if f2 > best_r or (f2 == best_r and m2 < best_p):
            best_p = m2
            best_r = f2
        if f1 >= f2:
            b = m2
            m2 = m1
            f2 = f1
            m1 = b - INVPHI * (b - a)
            f1 = _rev_logistic(m1, c0, c1) if mode == 0 else _rev_misspec(m1, c0, c1, c2, c3)
        else:
            a = m1
            m1 = m2
            f1 = f2
            m2 = a + INVPHI * (b - a)
            f2 = _rev_logistic(m2, c0, c1) if mode == 0 else _rev_misspec(m2, c0, c1, c2, c3)
    return best_p, best_r


def price_opt_logistic(double ax, double beta, double lo, double hi):
    return _scan_golden(0, ax, beta, 0.0, 0.0, lo, hi)


def price_opt_misspec(double fz, double b1, double b2sq, double b3,
                      double lo, double hi):
    return _scan_golden(1, fz, b1, b2sq, b3, lo, hi)


# ---------------------------------------------------------------------------
# Lloyd iterations (seeding done by the caller)
# ---------------------------------------------------------------------------

def kmeans_run(X, int K, int restarts, int max_iter, uniforms):
    """kmeans++ seeding + Lloyd, best inertia over restarts; `uniforms`
    supplies restarts*K uniform draws from the caller's stream."""
    cdef double[:, ::1] Xm = np.ascontiguousarray(X, dtype=np.float64)
    cdef double[::1] um = np.ascontiguousarray(uniforms, dtype=np.float64)
    cdef int n = Xm.shape[0], k = Xm.shape[1]
    cdef int r, j, i, m, idx
    cdef double total, target, acc, d2v, diff

    d2_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] d2 = d2_arr
    centers_arr = np.empty((K, k), dtype=np.float64)
    cdef double[:, ::1] centers = centers_arr

    best = None
    for r in range(restarts):
        idx = <int>(um[r * K] * n)
        if idx > n - 1:
            idx = n - 1
        for m in range(k):
            centers[0, m] = Xm[idx, m]
        for i in range(n):
            d2v = 0.0
            for m in range(k):
                diff = Xm[i, m] - centers[0, m]
                d2v += diff * diff
            d2[i] = d2v
        for j in range(1, K):
            total = 0.0
            for i in range(n):
                total += d2[i]
            if total <= 0.0:
                idx = <int>(um[r * K + j] * n)
                if idx > n - 1:
                    idx = n - 1
            else:
                target = um[r * K + j] * total
                acc = 0.0
                idx = n - 1
                for i in range(n):
                    acc += d2[i]
                    if acc > target:
                        idx = i
                        break
            for m in range(k):
                centers[j, m] = Xm[idx, m]
            for i in range(n):
                d2v = 0.0
                for m in range(k):
                    diff = Xm[i, m] - centers[j, m]
                    d2v += diff * diff
                if d2v < d2[i]:
                    d2[i] = d2v
        assign, cen, inertia, _ = lloyd(Xm, centers_arr, max_iter)
        if best is None or inertia < best[2]:
            best = (assign, cen, inertia)
    return best


def lloyd(X, centers, int max_iter=100):
    cdef double[:, ::1] Xm = np.ascontiguousarray(X, dtype=np.float64)
    cdef double[:, ::1] Cm = np.array(centers, dtype=np.float64)
    cdef int n = Xm.shape[0], k = Xm.shape[1], K = Cm.shape[0]
    cdef int i, j, m, it, best, far
    cdef double d2, best_d2, diff, inertia

    assign_arr = np.zeros(n, dtype=np.int32)
    prev_arr = np.zeros(n, dtype=np.int32)
    own_arr = np.zeros(n, dtype=np.float64)
    cnt_arr = np.zeros(K, dtype=np.int64)
    cdef int[::1] assign = assign_arr
    cdef int[::1] prev = prev_arr
    cdef double[::1] own = own_arr
    cdef long[::1] cnt = cnt_arr
    sums_arr = np.zeros((K, k), dtype=np.float64)
    cdef double[:, ::1] sums = sums_arr

    cdef int changed
    it = 0
    for it in range(1, max_iter + 1):
        for i in range(n):
            prev[i] = assign[i]
        for i in range(n):
            best = 0
            best_d2 = 0.0
            for j in range(K):
                d2 = 0.0
                for m in range(k):
                    diff = Xm[i, m] - Cm[j, m]
                    d2 += diff * diff
                if j == 0 or d2 < best_d2:
                    best_d2 = d2
                    best = j
            assign[i] = best
            own[i] = best_d2
        for j in range(K):
            cnt[j] = 0
            for m in range(k):
                sums[j, m] = 0.0
        for i in range(n):
            cnt[assign[i]] += 1
            for m in range(k):
                sums[assign[i], m] += Xm[i, m]
        for j in range(K):
            if cnt[j] == 0:
                # reseed from the farthest point whose donor cluster keeps >= 1 member
                far = -1
                for i in range(n):
                    if cnt[assign[i]] >= 2 and (far < 0 or own[i] > own[far]):
                        far = i
                if far < 0:
                    continue
                cnt[assign[far]] -= 1
                for m in range(k):
                    sums[assign[far], m] -= Xm[far, m]
                assign[far] = j
                own[far] = 0.0
                cnt[j] = 1
                for m in range(k):
                    sums[j, m] = Xm[far, m]
        for j in range(K):
            if cnt[j] > 0:
                for m in range(k):
                    Cm[j, m] = sums[j, m] / cnt[j]
        if it > 1:
            changed = 0
            for i in range(n):
                if assign[i] != prev[i]:
                    changed = 1
                    break
            if changed == 0:
                break

    inertia = 0.0
    for i in range(n):
        d2 = 0.0
        for m in range(k):
            diff = Xm[i, m] - Cm[assign[i], m]
            d2 += diff * diff
        inertia += d2
    return assign_arr, np.asarray(Cm), inertia, it
