"""Parameter estimation and confidence bounds.

GLM maximum likelihood over a norm ball, the separated beta/alpha
estimators for linear demand, Fisher-information bookkeeping with rank-one
updates, minimum-eigenvalue computation, and the covariate-variation
diagnostic.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from . import kernels
from .demand import Link, ThetaVector
from .errors import ConfigError, EstimationError


@dataclass(frozen=True)
class SalesRecord:
    """One observed interaction: design vector u = (x', p), the signed price
    perturbation applied that period, and the purchase outcome."""

    t: int
    product: int
    u: np.ndarray
    delta: float
    outcome: int


@dataclass(frozen=True)
class EstimateWithBound:
    theta_hat: ThetaVector
    bound: float


class ProductHistory:
    """Sales records of one product plus running sufficient statistics.

    Maintains V = I + sum u u' (and its top-left block Vbar = I + sum x x'),
    b = sum d u, the perturbation sums used by the linear-demand estimators,
    and growable record buffers.  Rank-one updates keep appends O(k^2).
    """

    def __init__(self, dim: int, product: int = 0):
        self.product = product
        self.dim = dim
        self.V = np.eye(dim)
        self.b = np.zeros(dim)
        self.sum_delta_d = 0.0
        self.sum_delta_sq = 0.0
        self.count = 0
        self._cap = 16
        self._U = np.empty((self._cap, dim))
        self._y = np.empty(self._cap)
        self._delta = np.empty(self._cap)
        self._t = np.empty(self._cap, dtype=np.int64)

    @property
    def Vbar(self) -> np.ndarray:
        """I + sum x x' (the price row/column of V dropped)."""
        return self.V[:-1, :-1].copy()

    @property
    def U(self) -> np.ndarray:
        return self._U[:self.count]

    @property
    def y(self) -> np.ndarray:
        return self._y[:self.count]

    @property
    def deltas(self) -> np.ndarray:
        return self._delta[:self.count]

    @property
    def records(self) -> list[SalesRecord]:
        return [
            SalesRecord(t=int(self._t[s]), product=self.product,
                        u=self._U[s].copy(), delta=float(self._delta[s]),
                        outcome=int(self._y[s]))
            for s in range(self.count)
        ]

    def append(self, record: SalesRecord) -> None:
        if record.u.shape != (self.dim,):
            raise ConfigError("record.u: wrong dimension")
        if self.count == self._cap:
            self._cap *= 2
            for name in ("_U", "_y", "_delta", "_t"):
                old = getattr(self, name)
                new = np.empty((self._cap,) + old.shape[1:], dtype=old.dtype)
                new[:self.count] = old[:self.count]
                setattr(self, name, new)
        s = self.count
        self._U[s] = record.u
        self._y[s] = record.outcome
        self._delta[s] = record.delta
        self._t[s] = record.t
        self.count += 1
        u = record.u
        self.V += np.outer(u, u)
        self.b += record.outcome * u
        self.sum_delta_d += record.delta * record.outcome
        self.sum_delta_sq += record.delta * record.delta

    def recompute(self) -> tuple[np.ndarray, np.ndarray, float, float]:
        """From-scratch (V, b, sum_delta_d, sum_delta_sq) for coherence checks."""
        U = self.U
        V = np.eye(self.dim) + U.T @ U
        b = U.T @ self.y
        sdd = float(self.deltas @ self.y)
        sdsq = float(self.deltas @ self.deltas)
        return V, b, sdd, sdsq

    def to_dict(self) -> dict:
        return {
            "product": self.product,
            "records": [
                {"t": int(self._t[s]), "u": self._U[s].tolist(),
                 "delta": float(self._delta[s]), "outcome": int(self._y[s])}
                for s in range(self.count)
            ],
        }


# ---------------------------------------------------------------------------
# GLM maximum likelihood
# ---------------------------------------------------------------------------

def _stack_records(records: Sequence[SalesRecord]):
    U = np.stack([r.u for r in records]).astype(float)
    y = np.array([r.outcome for r in records], dtype=float)
    return U, y


def glm_mle(records: Sequence[SalesRecord], link: Link, L: float,
            dim: Optional[int] = None, theta0=None) -> ThetaVector:
    """Maximum likelihood estimate of theta over the ball ||theta|| <= L.

    Minimizes sum_s m(u_s' theta) - d_s u_s' theta with m the
    log-partition of the link (softplus for logistic, v^2/2 for linear).
    An empty record set returns the zero vector (the ball center).
    """
    if L <= 0:
        raise ConfigError("glm_mle: need L > 0")
    if len(records) == 0:
        if dim is None:
            raise ConfigError("glm_mle: dim required for empty records")
        return ThetaVector.from_vector(np.zeros(dim))
    U, y = _stack_records(records)
    theta = kernels.glm_fit(U, y, link.code, float(L), theta0=theta0)
    if not np.all(np.isfinite(theta)):
        raise EstimationError("glm_mle: non-finite estimate")
    return ThetaVector.from_vector(theta)


def projected_gradient_norm(records: Sequence[SalesRecord], link: Link,
                            L: float, theta: np.ndarray) -> float:
    """KKT residual of the ball-constrained MLE problem at theta."""
    if len(records) == 0:
        return 0.0
    U, y = _stack_records(records)
    g = np.asarray(kernels.glm_gradient(U, y, link.code, theta), dtype=float)
    nrm = float(np.linalg.norm(theta))
    if nrm < L * (1.0 - 1e-10):
        return float(np.linalg.norm(g))
    lam = max(0.0, -float(theta @ g) / (L * L))
    return float(np.linalg.norm(g + lam * theta))


# ---------------------------------------------------------------------------
# eigenvalues and confidence bounds
# ---------------------------------------------------------------------------

def min_eigenvalue(M: np.ndarray) -> float:
    """Smallest eigenvalue of a small symmetric matrix (direct solver)."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError("min_eigenvalue: square matrix required")
    scale = max(1.0, float(np.abs(M).max()))
    if float(np.abs(M - M.T).max()) > 1e-12 * scale:
        raise ValueError("min_eigenvalue: matrix is not symmetric")
    return float(kernels.min_eig(M))


def confidence_bound_glm(V: np.ndarray, t: int, c: float, d: int) -> float:
    """sqrt(c (d+2) log(1+t)) / sqrt(lambda_min(V))."""
    if c <= 0:
        raise ConfigError("confidence_bound_glm: need c > 0")
    lam = min_eigenvalue(V)
    return math.sqrt(c * (d + 2) * math.log1p(t)) / math.sqrt(lam)


def individual_estimate(history: ProductHistory, link: Link, L: float, t: int,
                        c: float) -> EstimateWithBound:
    """Individual MLE of one product's parameters paired with its
    confidence radius at period t."""
    theta = glm_mle(history.records, link, L, dim=history.dim)
    return EstimateWithBound(
        theta_hat=theta,
        bound=confidence_bound_glm(history.V, t, c, history.dim - 2))


def beta_hat_linear(sum_delta_d: float, sum_delta_sq: float,
                    B: tuple[float, float]) -> float:
    """Perturbation-ratio estimate of the price coefficient, projected
    onto the interval B; the interval midpoint when no perturbation mass
    has accumulated yet."""
    lo, hi = float(B[0]), float(B[1])
    if lo > hi:
        raise ConfigError("beta_hat_linear: empty interval B")
    if sum_delta_sq < 0:
        raise ConfigError("beta_hat_linear: negative sum_delta_sq")
    if sum_delta_sq == 0.0:
        return 0.5 * (lo + hi)
    return float(min(max(sum_delta_d / sum_delta_sq, lo), hi))


def alpha_hat_ridge(records: Sequence[SalesRecord], beta_hat: float,
                    lambda_reg: float = 1.0,
                    dim: Optional[int] = None) -> np.ndarray:
    """Ridge estimate of alpha given beta_hat: exact minimizer of
    sum (d_s - alpha' x_s - beta_hat p_s)^2 + lambda_reg ||alpha||^2."""
    if lambda_reg <= 0:
        raise ConfigError("alpha_hat_ridge: need lambda_reg > 0")
    if len(records) == 0:
        if dim is None:
            raise ConfigError("alpha_hat_ridge: dim required for empty records")
        return np.zeros(dim)
    U, y = _stack_records(records)
    X = U[:, :-1]
    p = U[:, -1]
    k = X.shape[1]
    A = X.T @ X + lambda_reg * np.eye(k)
    rhs = X.T @ (y - beta_hat * p)
    return cho_solve(cho_factor(A, lower=True), rhs)


def alpha_hat_from_stats(Sxx: np.ndarray, Sdx: np.ndarray, Spx: np.ndarray,
                         beta_hat: float, lambda_reg: float = 1.0) -> np.ndarray:
    """Sufficient-statistics form of `alpha_hat_ridge`:
    Sxx = sum x x', Sdx = sum d x, Spx = sum p x."""
    A = Sxx + lambda_reg * np.eye(Sxx.shape[0])
    return cho_solve(cho_factor(A, lower=True), Sdx - beta_hat * Spx)


def confidence_bound_linear(sum_delta_sq: float, count: int, Vbar: np.ndarray,
                            t: int, c1: float, c2: float) -> float:
    """Combined beta/alpha confidence radius for the linear-demand
    estimators; +inf when no perturbation mass has accumulated."""
    if t < 1:
        raise ConfigError("confidence_bound_linear: need t >= 1")
    if sum_delta_sq == 0.0:
        return math.inf
    d_plus_1 = Vbar.shape[0]
    log_t = math.log(t)
    cb = c1 * math.sqrt(log_t) / math.sqrt(sum_delta_sq)
    ca = c2 * math.sqrt(d_plus_1) * log_t / math.sqrt(sum_delta_sq) \
        * math.sqrt(count)
    lam = min_eigenvalue(Vbar)
    return math.sqrt(cb * cb + ca * ca / lam)


def covariate_variation_check(records: Sequence[SalesRecord], c0: float,
                              kappa: float, t0: int) -> tuple[bool, float]:
    """Data-driven covariate variation diagnostic.

    True iff the history is shorter than t0 or
    lambda_min(sum x x') >= c0 * count^kappa.  Also returns the slack
    margin (inf while the check is vacuous).
    """
    if not 0.5 < kappa <= 1.0:
        raise ConfigError("covariate_variation_check: kappa must be in (1/2, 1]")
    count = len(records)
    if count < t0:
        return True, math.inf
    X = np.stack([r.u[:-1] for r in records]).astype(float)
    lam = min_eigenvalue(X.T @ X)
    margin = lam - c0 * count ** kappa
    return margin >= 0.0, float(margin)
