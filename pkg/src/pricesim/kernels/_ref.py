"""Pure-numpy reference implementations of the numerical kernels.

These are the fallback backend when the compiled extension is unavailable
(and the behavioural reference the compiled kernels are tested against).
Every public function here has an identically-named, identically-shaped
counterpart in ``_core.pyx``.
"""

from __future__ import annotations

import math

import numpy as np

LINK_LINEAR = 0
LINK_LOGISTIC = 1

_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


# ---------------------------------------------------------------------------
# symmetric eigenvalues
# ---------------------------------------------------------------------------

def min_eig(M):
    """Smallest eigenvalue of a small symmetric matrix.

    Uses LAPACK's tridiagonalization + QL path via ``eigvalsh``; the
    compiled backend runs a cyclic Jacobi sweep instead.  Both are direct
    dense solvers, accurate to well below the 1e-9 contract.
    """
    M = np.asarray(M, dtype=np.float64)
    return float(np.linalg.eigvalsh(M)[0])


# ---------------------------------------------------------------------------
# ball-constrained least squares (trust-region subproblem)
# ---------------------------------------------------------------------------

def _ball_newton(A, b, L):
    # minimize 1/2 w'Aw - b'w subject to ||w|| <= L, A symmetric PSD.
    k = A.shape[0]
    reg = 1e-12 * max(1.0, float(np.trace(A)) / max(k, 1))
    A = A + reg * np.eye(k)
    try:
        C = np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        try:
            C = np.linalg.cholesky(A + (1e-8 + reg) * np.eye(k))
        except np.linalg.LinAlgError:
            return None
    w = _cho_solve(C, b)
    nrm = float(np.linalg.norm(w))
    if nrm <= L or L <= 0.0:
        return w if L > 0.0 else np.zeros(k)
    # secular iteration (Hebden/More-Sorensen): find nu > 0 with
    # ||(A + nu I)^-1 b|| = L
    nu = 0.0
    for _ in range(100):
        C = np.linalg.cholesky(A + nu * np.eye(k))
        w = _cho_solve(C, b)
        nrm = float(np.linalg.norm(w))
        if abs(nrm - L) <= 1e-11 * L:
            break
        q = np.linalg.solve(C, w)  # forward substitution with lower factor
        qnrm2 = float(q @ q)
        if qnrm2 <= 0.0:
            break
        nu_step = (nrm - L) / L * (nrm * nrm / qnrm2)
        nu = max(nu + nu_step, 0.0)
    return w * (L / max(nrm, L))  # snap exactly onto the ball if still outside


def _cho_solve(C, b):
    z = np.linalg.solve(C, b)
    return np.linalg.solve(C.T, z)


def ball_least_squares(A, b, L):
    """Minimizer of 1/2 w'Aw - b'w over the Euclidean ball of radius L."""
    A = np.asarray(A, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    w = _ball_newton(A, b, float(L))
    return np.zeros(A.shape[0]) if w is None else w


# ---------------------------------------------------------------------------
# GLM negative log-likelihood pieces
# ---------------------------------------------------------------------------

def _sigmoid(v):
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _softplus(v):
    return np.maximum(v, 0.0) + np.log1p(np.exp(-np.abs(v)))


def glm_objective(U, y, link, theta):
    """sum_s m(u_s' theta) - y_s u_s' theta."""
    U = np.asarray(U, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if U.shape[0] == 0:
        return 0.0
    v = U @ theta
    if link == LINK_LOGISTIC:
        m = _softplus(v)
    else:
        m = 0.5 * v * v
    return float(np.sum(m - y * v))


def glm_gradient(U, y, link, theta):
    U = np.asarray(U, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    k = U.shape[1] if U.ndim == 2 else len(theta)
    if U.shape[0] == 0:
        return np.zeros(k)
    v = U @ theta
    mu = _sigmoid(v) if link == LINK_LOGISTIC else v
    return U.T @ (mu - y)


def _glm_grad_hess(U, y, link, theta, want_obj=False):
    v = U @ theta
    if link == LINK_LOGISTIC:
        mu = _sigmoid(v)
        w = mu * (1.0 - mu)
        f = float(np.sum(_softplus(v) - y * v)) if want_obj else 0.0
    else:
        mu = v
        w = np.ones_like(v)
        f = float(np.sum(0.5 * v * v - y * v)) if want_obj else 0.0
    g = U.T @ (mu - y)
    H = (U * w[:, None]).T @ U
    return g, H, f


def _proj_ball(theta, L):
    nrm = float(np.linalg.norm(theta))
    if nrm > L:
        return theta * (L / nrm)
    return theta


def _kkt_residual(theta, g, L):
    nrm = float(np.linalg.norm(theta))
    if nrm < L * (1.0 - 1e-10):
        return float(np.linalg.norm(g))
    lam = max(0.0, -float(theta @ g) / (L * L))
    return float(np.linalg.norm(g + lam * theta))


def glm_fit(U, y, link, L, theta0=None, tol=None, max_iter=500):
    """Ball-constrained GLM maximum likelihood.

    Newton steps are taken as exact minimizers of the local quadratic model
    over the ball (so the unconstrained Newton point is used whenever it is
    feasible) with Armijo backtracking; a projected-gradient step covers the
    rare case where the model step stalls on the boundary.
    """
    U = np.ascontiguousarray(U, dtype=np.float64)
    y = np.ascontiguousarray(y, dtype=np.float64)
    N, k = (U.shape[0], U.shape[1]) if U.ndim == 2 else (0, len(theta0))
    if N == 0:
        return np.zeros(k)
    L = float(L)
    if tol is None:
        tol = 1e-8 * max(1.0, N)
    theta = np.zeros(k) if theta0 is None else _proj_ball(
        np.array(theta0, dtype=np.float64), L)

    lip = None
    uncertified = 0
    g, H, f = _glm_grad_hess(U, y, link, theta, want_obj=True)
    f_known = True
    for _ in range(max_iter):
        if _kkt_residual(theta, g, L) <= tol:
            break
        w = _ball_newton(H, H @ theta - g, L)
        if w is None:
            w = theta
        d = w - theta
        gd = float(g @ d)
        if gd >= 0.0 or float(np.linalg.norm(d)) <= 1e-15 * (1.0 + L):
            # model step stalled (boundary or degenerate Hessian):
            # projected gradient with a conservative 1/Lipschitz step
            if lip is None:
                mu_prime_max = 0.25 if link == LINK_LOGISTIC else 1.0
                lip = mu_prime_max * float(np.sum(U * U)) + 1.0
            w = _proj_ball(theta - g / lip, L)
            d = w - theta
            gd = float(g @ d)
            if gd >= 0.0 or float(np.linalg.norm(d)) <= 1e-15 * (1.0 + L):
                break
        if not f_known:
            f = glm_objective(U, y, link, theta)
            f_known = True
        if -gd <= 1e-9 * (1.0 + abs(f)):
            # predicted decrease below objective float resolution: take the
            # raw model step (quadratic convergence basin); the KKT check
            # above remains the only stopping certificate
            uncertified += 1
            if uncertified > 10:
                break
            theta = _proj_ball(theta + d, L)
            f_known = False
        else:
            alpha = 1.0
            accepted = False
            for _ in range(30):
                cand = _proj_ball(theta + alpha * d, L)
                fc = glm_objective(U, y, link, cand)
                if fc <= f + 1e-4 * alpha * gd:
                    accepted = True
                    break
                alpha *= 0.5
            if not accepted:
                break
            theta = cand
            f = fc
        g, H, _ = _glm_grad_hess(U, y, link, theta)
    return theta


# ---------------------------------------------------------------------------
# one-dimensional revenue maximization (grid scan + golden section)
# ---------------------------------------------------------------------------

def _scan_golden(rev, lo, hi, n_grid=200, width=1e-8):
    # Track the best evaluated point throughout; ties resolve to the lower
    # price, so the result is deterministic on flat stretches.
    best_p = lo
    best_r = rev(lo)
    k_best = 0
    step = (hi - lo) / (n_grid - 1)
    for i in range(1, n_grid):
        p = lo + i * step if i < n_grid - 1 else hi
        r = rev(p)
        if r > best_r:
            best_p, best_r, k_best = p, r, i
    a = lo + max(0, k_best - 1) * step
    b = lo + min(n_grid - 1, k_best + 1) * step
    if b > hi:
        b = hi
    m1 = b - _INVPHI * (b - a)
    m2 = a + _INVPHI * (b - a)
    f1 = rev(m1)
    f2 = rev(m2)
    while (b - a) > width:
        if f1 > best_r or (f1 == best_r and m1 < best_p):
            best_p, best_r = m1, f1
        if f2 > best_r or (f2 == best_r and m2 < best_p):
            best_p, best_r = m2, f2
        if f1 >= f2:
            b, m2, f2 = m2, m1, f1
            m1 = b - _INVPHI * (b - a)
            f1 = rev(m1)
        else:
            a, m1, f1 = m1, m2, f2
            m2 = a + _INVPHI * (b - a)
            f2 = rev(m2)
    return best_p, best_r


def _sigmoid_scalar(v):
    if v >= 0.0:
        return 1.0 / (1.0 + math.exp(-v))
    e = math.exp(v)
    return e / (1.0 + e)


def price_opt_logistic(ax, beta, lo, hi):
    """argmax over [lo, hi] of p * sigmoid(ax + beta p); returns (p, revenue)."""
    return _scan_golden(lambda p: p * _sigmoid_scalar(ax + beta * p), lo, hi)


def price_opt_misspec(fz, b1, b2sq, b3, lo, hi):
    """argmax of p / (1 + exp(f(p))) with cubic utility f; returns (p, revenue)."""

    def rev(p):
        f = fz + b1 * p + b2sq * p * p + b3 * p * p * p
        return p * _sigmoid_scalar(-f)

    return _scan_golden(rev, lo, hi)


# ---------------------------------------------------------------------------
# Lloyd iterations for k-means (seeding is done by the caller)
# ---------------------------------------------------------------------------

def kmeans_run(X, K, restarts, max_iter, uniforms):
    """kmeans++ seeding + Lloyd, best inertia over restarts.

    `uniforms` supplies restarts*K uniform draws so the caller owns all
    randomness; both backends consume them identically.
    """
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    best = None
    for r in range(restarts):
        u = uniforms[r * K:(r + 1) * K]
        centers = np.empty((K, X.shape[1]))
        first = min(int(u[0] * n), n - 1)
        centers[0] = X[first]
        d2 = ((X - centers[0]) ** 2).sum(axis=1)
        for j in range(1, K):
            total = float(d2.sum())
            if total <= 0.0:
                idx = min(int(u[j] * n), n - 1)
            else:
                idx = min(int(np.searchsorted(np.cumsum(d2), u[j] * total,
                                              side="right")), n - 1)
            centers[j] = X[idx]
            d2 = np.minimum(d2, ((X - centers[j]) ** 2).sum(axis=1))
        assign, centers, inertia, _ = lloyd(X, centers, max_iter)
        if best is None or inertia < best[2]:
            best = (assign, centers, inertia)
    return best


def lloyd(X, centers, max_iter=100):
    """Run Lloyd's algorithm from the given centers.

    Returns (assignment, centers, inertia, n_iter).  Empty clusters are
    repaired by reseeding from the point farthest from its own center.
    """
    X = np.asarray(X, dtype=np.float64)
    centers = np.array(centers, dtype=np.float64)
    n = X.shape[0]
    K = centers.shape[0]
    assign = np.zeros(n, dtype=np.int32)
    for it in range(1, max_iter + 1):
        d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_assign = np.argmin(d2, axis=1).astype(np.int32)
        own = d2[np.arange(n), new_assign]
        counts = np.bincount(new_assign, minlength=K)
        for j in range(K):
            if counts[j] == 0:
                # reseed from the farthest point whose donor keeps >= 1 member
                donors = counts[new_assign] >= 2
                if not np.any(donors):
                    continue
                far = int(np.argmax(np.where(donors, own, -1.0)))
                counts[new_assign[far]] -= 1
                new_assign[far] = j
                own[far] = 0.0
                counts[j] = 1
        for j in range(K):
            if counts[j] > 0:
                centers[j] = X[new_assign == j].mean(axis=0)
        if it > 1 and np.array_equal(new_assign, assign):
            assign = new_assign
            break
        assign = new_assign
    d2 = ((X - centers[assign]) ** 2).sum(axis=1)
    return assign, centers, float(d2.sum()), it
