"""Pricing policies as a uniform state machine.

All policies share one pipeline per period: refresh individual estimates
and confidence radii for the arrived product's market, form a neighborhood
(confidence-ball test, singleton, everything, or a k-means cluster), pool
the neighborhood's records into a clustered estimate, price greedily against
it, and post that price plus a vanishing random exploration perturbation.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from . import kernels
from .clustering import Neighborhood, kmeans
from .demand import Link
from .errors import ConfigError, EstimationError
from .estimation import ProductHistory, SalesRecord, alpha_hat_from_stats, \
    beta_hat_linear


class PolicyKind(str, Enum):
    CSMP = "CSMP"
    CSMP_L = "CSMP_L"
    SMP_IND = "SMP_IND"
    SMP_ONE = "SMP_ONE"
    CSMP_KMEANS = "CSMP_KMEANS"
    ORACLE = "ORACLE"  # clairvoyant reference policy (posts the oracle price)


@dataclass(frozen=True)
class PolicyConfig:
    """Constants for one policy run; `name` labels output files."""

    kind: PolicyKind
    name: str = ""
    c: float = 0.8                 # GLM confidence-bound constant
    c1: float = 1.0                # linear-bound beta constant
    c2: float = 1.0                # linear-bound alpha constant
    delta0: float = 1.0            # base price perturbation
    gamma0: float = 0.0            # neighborhood slack (relaxed clusters)
    upsilon: float = 0.0           # perturbation floor
    K: int = 10                    # k-means cluster count
    kmeans_restarts: int = 2
    kmeans_max_iter: int = 50
    kmeans_every: int = 1          # reclustering cadence in periods
    B_interval: Optional[tuple[float, float]] = None  # beta interval; None -> (-L, -0.01)
    price_bounds: Optional[tuple[float, float]] = None  # None -> instance bounds

    def __post_init__(self):
        object.__setattr__(self, "kind", PolicyKind(self.kind))
        if not self.name:
            object.__setattr__(self, "name", self.kind.value.lower())

    def validate(self, n: Optional[int] = None,
                 instance_bounds: Optional[tuple[float, float]] = None) -> None:
        if self.delta0 <= 0:
            raise ConfigError(f"policy[{self.name}].delta0: must be > 0")
        if self.upsilon < 0:
            raise ConfigError(f"policy[{self.name}].upsilon: must be >= 0")
        if self.gamma0 < 0:
            raise ConfigError(f"policy[{self.name}].gamma0: must be >= 0")
        if self.kind is PolicyKind.CSMP_KMEANS:
            if self.K < 1:
                raise ConfigError(f"policy[{self.name}].K: must be >= 1")
            if n is not None and self.K > n:
                raise ConfigError(f"policy[{self.name}].K: exceeds product count")
            if self.kmeans_restarts < 1 or self.kmeans_every < 1:
                raise ConfigError(
                    f"policy[{self.name}]: kmeans_restarts and kmeans_every must be >= 1")
        bounds = self.price_bounds or instance_bounds
        if bounds is not None:
            lo, hi = bounds
            if lo >= hi:
                raise ConfigError(f"policy[{self.name}].price_bounds: need lower < upper")
            if lo + self.delta0 > hi - self.delta0:
                warnings.warn(
                    f"policy {self.name}: delta0={self.delta0} leaves no room in "
                    f"[{lo}, {hi}]; projected prices collapse to the midpoint",
                    stacklevel=2)
        if self.B_interval is not None and self.B_interval[0] > self.B_interval[1]:
            raise ConfigError(f"policy[{self.name}].B_interval: empty interval")

    def to_dict(self) -> dict:
        doc = {"kind": self.kind.value, "name": self.name, "c": self.c,
               "c1": self.c1, "c2": self.c2, "delta0": self.delta0,
               "gamma0": self.gamma0, "upsilon": self.upsilon, "K": self.K,
               "kmeans_restarts": self.kmeans_restarts,
               "kmeans_max_iter": self.kmeans_max_iter,
               "kmeans_every": self.kmeans_every}
        if self.B_interval is not None:
            doc["B_interval"] = list(self.B_interval)
        if self.price_bounds is not None:
            doc["price_bounds"] = list(self.price_bounds)
        return doc

    @staticmethod
    def from_dict(doc: dict) -> "PolicyConfig":
        doc = dict(doc)
        if "c_collapsed" in doc:
            # single-constant parameterization of the two linear-bound
            # constants: c1 = sqrt(c), c2 = sqrt(0.05 c)
            c = float(doc.pop("c_collapsed"))
            doc.setdefault("c1", math.sqrt(c))
            doc.setdefault("c2", math.sqrt(0.05 * c))
        if "B_interval" in doc and doc["B_interval"] is not None:
            doc["B_interval"] = tuple(float(v) for v in doc["B_interval"])
        if "price_bounds" in doc and doc["price_bounds"] is not None:
            doc["price_bounds"] = tuple(float(v) for v in doc["price_bounds"])
        return PolicyConfig(**doc)


@dataclass
class PriceDiagnostics:
    neighborhood: Neighborhood
    theta_tilde: np.ndarray
    delta: float
    p_opt: float
    p_projected: float
    members_array: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))


# ---------------------------------------------------------------------------
# primitive pricing operations
# ---------------------------------------------------------------------------

def price_optimize(link: Link, ax: float, beta: float,
                   bounds: tuple[float, float]) -> float:
    """Greedy price: argmax_p mu(ax + beta p) * p over [lo, hi].

    Linear link is closed form; logistic uses a 200-point grid scan plus
    golden-section refinement (ties toward the lower price).
    """
    lo, hi = float(bounds[0]), float(bounds[1])
    if lo >= hi:
        raise ConfigError("price_optimize: need lower < upper bound")
    if link is Link.LINEAR:
        if beta < 0.0:
            return float(min(max(-ax / (2.0 * beta), lo), hi))
        r_lo = lo * (ax + beta * lo)
        r_hi = hi * (ax + beta * hi)
        return lo if r_lo >= r_hi else hi
    p, _ = kernels.price_opt_logistic(float(ax), float(beta), lo, hi)
    return float(p)


def perturbation(delta0: float, pooled_count: int, upsilon: float,
                 rng: np.random.Generator) -> float:
    """Signed exploration perturbation: +-delta0 * max(count^-1/4, upsilon)."""
    if pooled_count < 1:
        raise ConfigError("perturbation: pooled_count must be >= 1")
    mag = delta0 * max(pooled_count ** -0.25, upsilon)
    return mag if rng.random() < 0.5 else -mag


def project_price(p_raw: float, delta_mag: float,
                  bounds: tuple[float, float]) -> float:
    """Clip into [lo + |delta|, hi - |delta|]; midpoint when that interval
    is empty, so the posted price p~ + delta stays inside [lo, hi]."""
    lo, hi = bounds
    lo_eff = lo + delta_mag
    hi_eff = hi - delta_mag
    if lo_eff > hi_eff:
        return 0.5 * (lo + hi)
    return float(min(max(p_raw, lo_eff), hi_eff))


# ---------------------------------------------------------------------------
# policy state
# ---------------------------------------------------------------------------

class PolicyState:
    """Per-replication mutable state for one policy.

    Holds per-product histories, a shared record buffer in arrival order
    (so whole-market pooling needs no copy), cached individual estimates
    with dirty flags, and the policy's own RNG stream.
    """

    def __init__(self, config: PolicyConfig, n: int, d: int, link: Link,
                 L: float, price_bounds: tuple[float, float],
                 rng: np.random.Generator):
        config.validate(n=n, instance_bounds=price_bounds)
        self.config = config
        self.n = n
        self.d = d
        self.k = d + 2
        self.link = link
        self.L = float(L)
        self.bounds = tuple(config.price_bounds or price_bounds)
        self.B_interval = config.B_interval or (-self.L, -0.01)
        if self.B_interval[0] > self.B_interval[1]:
            raise ConfigError("policy.B_interval: empty interval")
        self.rng = rng

        self.histories = [ProductHistory(self.k, i) for i in range(n)]
        self.counts = np.zeros(n, dtype=np.int64)
        self.theta_hat = np.zeros((n, self.k))
        self.lam_min = np.ones(n)        # lambda_min of V_i = I + sum u u'
        self.lam_min_bar = np.ones(n)    # lambda_min of Vbar_i (linear-sep path)
        self.dirty = np.zeros(n, dtype=bool)

        cap = 1024
        self._gU = np.empty((cap, self.k))
        self._gy = np.empty(cap)
        self._gcap = cap
        self._gcount = 0

        self._pool_cache: dict[tuple, np.ndarray] = {}
        self._anchor_cache: dict[int, np.ndarray] = {}
        self._km_assign: Optional[np.ndarray] = None
        self._km_last_t = -(10 ** 9)

    # -- bookkeeping --------------------------------------------------------

    def update(self, product: int, record: SalesRecord) -> None:
        if record.product != product:
            raise ConfigError("policy_update: record/product mismatch")
        self.histories[product].append(record)
        if self._gcount == self._gcap:
            self._gcap *= 2
            gU = np.empty((self._gcap, self.k))
            gU[:self._gcount] = self._gU[:self._gcount]
            gy = np.empty(self._gcap)
            gy[:self._gcount] = self._gy[:self._gcount]
            self._gU, self._gy = gU, gy
        self._gU[self._gcount] = record.u
        self._gy[self._gcount] = record.outcome
        self._gcount += 1
        self.counts[product] += 1
        self.dirty[product] = True

    # -- individual estimates -----------------------------------------------

    def _refresh(self, i: int) -> None:
        h = self.histories[i]
        if self.config.kind is PolicyKind.CSMP_L:
            beta = beta_hat_linear(h.sum_delta_d, h.sum_delta_sq,
                                   self.B_interval)
            Sxx = h.V[:-1, :-1] - np.eye(self.k - 1)
            alpha = alpha_hat_from_stats(Sxx, h.b[:-1], h.V[:-1, -1], beta)
            self.theta_hat[i, :-1] = alpha
            self.theta_hat[i, -1] = beta
            self.lam_min_bar[i] = kernels.min_eig(h.V[:-1, :-1])
        else:
            # no warm start here: cache entries stay bit-identical to a
            # fresh recomputation from the history
            if h.count == 0:
                self.theta_hat[i] = 0.0
            elif self.link is Link.LINEAR:
                self.theta_hat[i] = kernels.ball_least_squares(
                    h.V - np.eye(self.k), h.b, self.L)
            else:
                self.theta_hat[i] = kernels.glm_fit(
                    h.U, h.y, self.link.code, self.L)
            self.lam_min[i] = kernels.min_eig(h.V)
        self.dirty[i] = False

    def refresh_dirty(self) -> None:
        for i in np.flatnonzero(self.dirty):
            self._refresh(int(i))

    def individual_bounds(self, t: int) -> np.ndarray:
        """Confidence radii B_{i,t-1} (or C_{i,t-1}) for all products."""
        cfg = self.config
        if cfg.kind is PolicyKind.CSMP_L:
            out = np.full(self.n, math.inf)
            if t >= 2:
                log_t = math.log(t - 1) if t - 1 >= 1 else 0.0
                for i in range(self.n):
                    sdsq = self.histories[i].sum_delta_sq
                    if sdsq > 0.0:
                        cb = cfg.c1 * math.sqrt(log_t) / math.sqrt(sdsq)
                        ca = (cfg.c2 * math.sqrt(self.k - 1) * log_t
                              / math.sqrt(sdsq) * math.sqrt(self.counts[i]))
                        out[i] = math.sqrt(
                            cb * cb + ca * ca / self.lam_min_bar[i])
            return out
        # log(1 + (t-1)) with V_{i,t-1} already in lam_min
        num = math.sqrt(cfg.c * self.k * math.log(t))
        return num / np.sqrt(self.lam_min)

    # -- pooled estimation ---------------------------------------------------

    def _pool_members_glm(self, members: np.ndarray, anchor: int) -> np.ndarray:
        key = tuple(members.tolist())
        if self.link is Link.LINEAR:
            A = -len(members) * np.eye(self.k)
            b = np.zeros(self.k)
            for i in members:
                A += self.histories[i].V
                b += self.histories[i].b
            theta = kernels.ball_least_squares(A, b, self.L)
        else:
            if len(members) == self.n:
                U = self._gU[:self._gcount]
                y = self._gy[:self._gcount]
            else:
                U = np.concatenate([self.histories[i].U for i in members])
                y = np.concatenate([self.histories[i].y for i in members])
            if U.shape[0] == 0:
                theta = np.zeros(self.k)
            else:
                warm = self._pool_cache.get(key)
                if warm is None:
                    warm = self._anchor_cache.get(anchor,
                                                  self.theta_hat[anchor])
                theta = kernels.glm_fit(U, y, self.link.code, self.L,
                                        theta0=warm)
        if not np.all(np.isfinite(theta)):
            raise EstimationError("pooled GLM fit produced a non-finite estimate")
        self._pool_cache[key] = theta
        self._anchor_cache[anchor] = theta
        return theta

    def _pool_members_linear_sep(self, members: np.ndarray) -> np.ndarray:
        sdd = sum(self.histories[i].sum_delta_d for i in members)
        sdsq = sum(self.histories[i].sum_delta_sq for i in members)
        beta = beta_hat_linear(sdd, sdsq, self.B_interval)
        A = -len(members) * np.eye(self.k)
        b = np.zeros(self.k)
        for i in members:
            A += self.histories[i].V
            b += self.histories[i].b
        alpha = alpha_hat_from_stats(A[:-1, :-1], b[:-1], A[:-1, -1], beta)
        return np.concatenate((alpha, [beta]))

    # -- neighborhood selection ----------------------------------------------

    def _members(self, product: int, t: int) -> np.ndarray:
        cfg = self.config
        if cfg.kind is PolicyKind.SMP_IND:
            return np.array([product])
        if cfg.kind is PolicyKind.SMP_ONE:
            return np.arange(self.n)
        if cfg.kind is PolicyKind.CSMP_KMEANS:
            if self._km_assign is None or \
                    t - self._km_last_t >= cfg.kmeans_every:
                res = kmeans(self.theta_hat, cfg.K,
                             restarts=cfg.kmeans_restarts,
                             max_iter=cfg.kmeans_max_iter, rng=self.rng)
                self._km_assign = res.assignment
                self._km_last_t = t
            return np.flatnonzero(self._km_assign == self._km_assign[product])
        bounds = self.individual_bounds(t)
        diff = self.theta_hat - self.theta_hat[product]
        dist = np.sqrt((diff * diff).sum(axis=1))
        thresh = bounds + bounds[product] + cfg.gamma0
        return np.flatnonzero((dist <= thresh) | np.isinf(thresh))


def policy_price(state: PolicyState, config: PolicyConfig, product: int,
                 x: np.ndarray, t: int) -> tuple[float, PriceDiagnostics]:
    """Compute the posted price of `product` for period t.

    Pipeline: refresh dirty individual estimates, build the neighborhood,
    pool its records into the clustered estimate, optimize the greedy price,
    then project and perturb.  Estimates and bounds use data through t-1.
    """
    if t < 1:
        raise ConfigError("policy_price: need t >= 1")
    if config.kind is PolicyKind.ORACLE:
        raise ConfigError("policy_price: the oracle policy is priced by the harness")
    if config.kind in (PolicyKind.CSMP, PolicyKind.CSMP_L,
                       PolicyKind.CSMP_KMEANS):
        state.refresh_dirty()
    members = state._members(product, t)
    if config.kind is PolicyKind.CSMP_L:
        theta = state._pool_members_linear_sep(members)
    else:
        theta = state._pool_members_glm(members, product)
    ax = float(theta[:-1] @ np.asarray(x, dtype=float))
    p_opt = price_optimize(state.link, ax, float(theta[-1]), state.bounds)
    pooled_count = int(state.counts[members].sum()) + 1
    delta = perturbation(config.delta0, pooled_count, config.upsilon,
                         state.rng)
    p_proj = project_price(p_opt, abs(delta), state.bounds)
    posted = p_proj + delta
    lo, hi = state.bounds
    posted = min(max(posted, lo), hi)  # safety net for midpoint-collapse configs
    diag = PriceDiagnostics(
        neighborhood=Neighborhood(anchor=product,
                                  members=frozenset(members.tolist())),
        theta_tilde=theta, delta=posted - p_proj, p_opt=p_opt,
        p_projected=p_proj, members_array=members)
    return float(posted), diag


def policy_update(state: PolicyState, product: int,
                  record: SalesRecord) -> PolicyState:
    """Append the period's record and rank-one-update the product's
    sufficient statistics; marks the individual-estimate cache dirty."""
    state.update(product, record)
    return state
