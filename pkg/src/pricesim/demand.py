"""Ground-truth demand environments.

Synthetic market instances: clustered demand parameters, covariate streams,
customer arrivals, and Bernoulli purchase sampling, including a cubic-utility
variant used to stress-test model misspecification.

A product's purchase probability is mu(alpha' x + beta p), where
x = (1, z') extends the raw covariates z with an intercept and mu is the
link function (identity or logistic sigmoid).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .errors import ConfigError


class Link(str, Enum):
    LINEAR = "linear"
    LOGISTIC = "logistic"

    @property
    def code(self) -> int:
        # kernel-level link codes
        return 0 if self is Link.LINEAR else 1

    def mu(self, v):
        """Link function: purchase probability at utility v."""
        if self is Link.LINEAR:
            return v
        return _sigmoid(v)

    def mu_prime(self, v):
        if self is Link.LINEAR:
            return np.ones_like(np.asarray(v, dtype=float))
        s = _sigmoid(v)
        return s * (1.0 - s)


def _sigmoid(v):
    if np.isscalar(v) or getattr(v, "ndim", 1) == 0:
        v = float(v)
        if v >= 0.0:
            return 1.0 / (1.0 + math.exp(-v))
        e = math.exp(v)
        return e / (1.0 + e)
    v = np.asarray(v, dtype=float)
    out = np.empty_like(v)
    pos = v >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-v[pos]))
    e = np.exp(v[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def extend_context(z: np.ndarray) -> np.ndarray:
    """x = (1, z')."""
    return np.concatenate(([1.0], np.asarray(z, dtype=float)))


def design_vector(x: np.ndarray, p: float) -> np.ndarray:
    """u = (x', p)."""
    return np.concatenate((np.asarray(x, dtype=float), [float(p)]))


@dataclass(frozen=True)
class ThetaVector:
    """Demand parameter theta = (alpha, beta); alpha[0] is the intercept."""

    alpha: np.ndarray
    beta: float

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate((self.alpha, [self.beta]))

    @property
    def norm(self) -> float:
        return float(np.linalg.norm(self.vector))

    @staticmethod
    def from_vector(v: np.ndarray) -> "ThetaVector":
        v = np.asarray(v, dtype=float)
        return ThetaVector(alpha=v[:-1].copy(), beta=float(v[-1]))


@dataclass(frozen=True)
class MisspecCoefficients:
    """Cubic-utility coefficients for the misspecified demand model.

    Utility f(z, p) = c0 + sum_k c1[k] z_k + c2[k] z_k^2 + c3[k] z_k^3
                      + b1 p + b2^2 p^2 + b3 p^3
    and the purchase probability is 1 / (1 + exp(f)).  b2 is stored as
    drawn (negative) and squared at evaluation time.
    """

    c0: float
    c1: np.ndarray
    c2: np.ndarray
    c3: np.ndarray
    b1: float
    b2: float
    b3: float

    def context_part(self, z: np.ndarray) -> float:
        z = np.asarray(z, dtype=float)
        return float(self.c0 + self.c1 @ z + self.c2 @ (z * z)
                     + self.c3 @ (z ** 3))

    def utility(self, z: np.ndarray, p: float) -> float:
        return (self.context_part(z) + self.b1 * p
                + (self.b2 ** 2) * p * p + self.b3 * p ** 3)

    def probability(self, z: np.ndarray, p: float) -> float:
        return float(_sigmoid(-self.utility(z, p)))


@dataclass(frozen=True)
class CovariateMode:
    """Covariate stream law: iid uniform, optionally with one square-wave
    ("almost static") coordinate flipping sign every `period` periods."""

    kind: str = "iid_uniform"
    coordinate: int = 0
    period: int = 100

    def validate(self, d: int) -> None:
        if self.kind not in ("iid_uniform", "almost_static"):
            raise ConfigError(f"covariate_mode.kind: unknown kind {self.kind!r}")
        if self.kind == "almost_static":
            if not 0 <= self.coordinate < d:
                raise ConfigError("covariate_mode.coordinate: out of range")
            if self.period < 1:
                raise ConfigError("covariate_mode.period: must be >= 1")

    def to_dict(self) -> dict:
        if self.kind == "iid_uniform":
            return {"kind": self.kind}
        return {"kind": self.kind, "coordinate": self.coordinate,
                "period": self.period}

    @staticmethod
    def from_dict(d: dict) -> "CovariateMode":
        return CovariateMode(kind=d.get("kind", "iid_uniform"),
                             coordinate=int(d.get("coordinate", 0)),
                             period=int(d.get("period", 100)))


@dataclass(frozen=True)
class ClusterInstance:
    """A fully specified synthetic market.

    Products are partitioned into clusters; products in one cluster share a
    parameter center (and sit within L2 distance gamma0 of it when
    gamma0 > 0).  `gamma` records the realized minimum distance between
    distinct cluster centers (inf for a single cluster).
    """

    n: int
    m: int
    d: int
    L: float
    link: Link
    price_bounds: tuple[float, float]
    q: np.ndarray
    assignment: np.ndarray
    theta: np.ndarray                     # (n, d+2), beta in the last column
    centers: np.ndarray                   # (m, d+2)
    gamma: float
    gamma0: float
    covariate_mode: CovariateMode = field(default_factory=CovariateMode)
    misspec: Optional[list[MisspecCoefficients]] = None
    seed: Optional[int] = None

    def __post_init__(self):
        for arr in (self.q, self.assignment, self.theta, self.centers):
            arr.flags.writeable = False

    def theta_of(self, i: int) -> ThetaVector:
        return ThetaVector.from_vector(self.theta[i])

    def cluster_members(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == j)

    def without_misspec(self) -> "ClusterInstance":
        """Companion instance with the same GLM parameters and no
        misspecification layer."""
        if self.misspec is None:
            return self
        return ClusterInstance(
            n=self.n, m=self.m, d=self.d, L=self.L, link=self.link,
            price_bounds=self.price_bounds, q=self.q.copy(),
            assignment=self.assignment.copy(), theta=self.theta.copy(),
            centers=self.centers.copy(), gamma=self.gamma, gamma0=self.gamma0,
            covariate_mode=self.covariate_mode, misspec=None, seed=self.seed)

    # -- serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        doc = {
            "format": "pricesim-instance-v1",
            "n": self.n, "m": self.m, "d": self.d, "L": self.L,
            "link": self.link.value,
            "price_bounds": list(self.price_bounds),
            "q": self.q.tolist(),
            "assignment": self.assignment.tolist(),
            "theta": self.theta.tolist(),
            "centers": self.centers.tolist(),
            "gamma": None if math.isinf(self.gamma) else self.gamma,
            "gamma0": self.gamma0,
            "covariate_mode": self.covariate_mode.to_dict(),
            "misspec": None,
            "seed": self.seed,
        }
        if self.misspec is not None:
            doc["misspec"] = [
                {"c0": mc.c0, "c1": mc.c1.tolist(), "c2": mc.c2.tolist(),
                 "c3": mc.c3.tolist(), "b1": mc.b1, "b2": mc.b2, "b3": mc.b3}
                for mc in self.misspec
            ]
        return doc

    @staticmethod
    def from_dict(doc: dict) -> "ClusterInstance":
        misspec = None
        if doc.get("misspec") is not None:
            misspec = [
                MisspecCoefficients(
                    c0=float(mc["c0"]), c1=np.asarray(mc["c1"], dtype=float),
                    c2=np.asarray(mc["c2"], dtype=float),
                    c3=np.asarray(mc["c3"], dtype=float),
                    b1=float(mc["b1"]), b2=float(mc["b2"]), b3=float(mc["b3"]))
                for mc in doc["misspec"]
            ]
        gamma = doc.get("gamma")
        inst = ClusterInstance(
            n=int(doc["n"]), m=int(doc["m"]), d=int(doc["d"]),
            L=float(doc["L"]), link=Link(doc["link"]),
            price_bounds=(float(doc["price_bounds"][0]),
                          float(doc["price_bounds"][1])),
            q=np.asarray(doc["q"], dtype=float),
            assignment=np.asarray(doc["assignment"], dtype=np.int32),
            theta=np.asarray(doc["theta"], dtype=float),
            centers=np.asarray(doc["centers"], dtype=float),
            gamma=math.inf if gamma is None else float(gamma),
            gamma0=float(doc.get("gamma0", 0.0)),
            covariate_mode=CovariateMode.from_dict(
                doc.get("covariate_mode", {"kind": "iid_uniform"})),
            misspec=misspec,
            seed=doc.get("seed"),
        )
        inst.validate()
        return inst

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")

    @staticmethod
    def load(path) -> "ClusterInstance":
        with open(path) as fh:
            return ClusterInstance.from_dict(json.load(fh))

    def validate(self) -> None:
        if not 1 <= self.m <= self.n:
            raise ConfigError("instance.m: need 1 <= m <= n")
        if self.theta.shape != (self.n, self.d + 2):
            raise ConfigError("instance.theta: wrong shape")
        if self.q.shape != (self.n,) or np.any(self.q <= 0) or \
                not math.isclose(float(self.q.sum()), 1.0, abs_tol=1e-9):
            raise ConfigError("instance.q: must be positive and sum to 1")
        counts = np.bincount(self.assignment, minlength=self.m)
        if len(counts) != self.m or np.any(counts == 0):
            raise ConfigError("instance.assignment: every cluster must be nonempty")
        if self.price_bounds[0] >= self.price_bounds[1]:
            raise ConfigError("instance.price_bounds: need lower < upper")
        self.covariate_mode.validate(self.d)


# ---------------------------------------------------------------------------
# instance generation
# ---------------------------------------------------------------------------

def _draw_centers(m: int, d: int, L: float, link: Link,
                  rng: np.random.Generator) -> np.ndarray:
    a = L / math.sqrt(d + 2)
    centers = np.empty((m, d + 2))
    if link is Link.LOGISTIC:
        centers[:, :d + 1] = rng.uniform(-a, a, size=(m, d + 1))
        centers[:, d + 1] = rng.uniform(-a, 0.0, size=m)
        return centers
    # linear: positive covariate effects, positive intercept, negative beta;
    # these ranges do not force ||theta|| <= L by themselves, so redraw any
    # center that lands outside the ball.
    for j in range(m):
        for _ in range(10_000):
            center = np.empty(d + 2)
            center[0] = rng.uniform(a, 2 * a)
            center[1:d + 1] = rng.uniform(0.0, a, size=d)
            center[d + 1] = rng.uniform(-1.05 * a, -0.05 * a)
            if np.linalg.norm(center) <= L:
                centers[j] = center
                break
        else:
            raise ConfigError("instance: cannot satisfy the norm bound")
    return centers


def _draw_assignment(n: int, m: int, rng: np.random.Generator) -> np.ndarray:
    for _ in range(1000):
        assignment = rng.integers(0, m, size=n)
        if len(np.unique(assignment)) == m:
            return assignment.astype(np.int32)
    # pigeonhole fallback for regimes where rejection is hopeless (m ~ n)
    assignment = np.concatenate((np.arange(m), rng.integers(0, m, size=n - m)))
    rng.shuffle(assignment)
    return assignment.astype(np.int32)


def _draw_misspec(m: int, d: int, L: float,
                  rng: np.random.Generator) -> list[MisspecCoefficients]:
    a = L / math.sqrt(d + 2)
    b = L / math.sqrt(3 * (d + 2))
    out = []
    for _ in range(m):
        out.append(MisspecCoefficients(
            c0=float(rng.uniform(-a, a)),
            c1=rng.uniform(-b, b, size=d),
            c2=rng.uniform(-b, b, size=d),
            c3=rng.uniform(-b, b, size=d),
            b1=float(rng.uniform(-b, 0.0)),
            b2=float(rng.uniform(-b, 0.0)),
            b3=float(rng.uniform(-b, 0.0)),
        ))
    return out


def generate_cluster_instance(
    n: int, m: int, d: int, L: float, link: Link, gamma0: float,
    rng: np.random.Generator, *,
    q: Optional[np.ndarray] = None,
    price_bounds: tuple[float, float] = (0.0, 10.0),
    covariate_mode: Optional[CovariateMode] = None,
    misspec: bool = False,
    seed: Optional[int] = None,
) -> ClusterInstance:
    """Draw a clustered demand instance.

    Cluster centers are drawn per the link-specific parameter ranges, the
    products are assigned to clusters uniformly at random (all clusters
    nonempty), and, when gamma0 > 0, each product's parameter is the center
    plus a per-entry uniform jitter with L2 norm at most gamma0.
    """
    if not 1 <= m <= n:
        raise ConfigError("instance.m: need 1 <= m <= n")
    if d < 1:
        raise ConfigError("instance.d: need d >= 1")
    if L <= 0:
        raise ConfigError("instance.L: need L > 0")
    if gamma0 < 0:
        raise ConfigError("instance.gamma0: need gamma0 >= 0")

    link = Link(link)
    centers = _draw_centers(m, d, L, link, rng)
    assignment = _draw_assignment(n, m, rng)

    theta = centers[assignment].copy()
    if gamma0 > 0:
        b = gamma0 / math.sqrt(d + 2)
        for i in range(n):
            for _ in range(10_000):
                jit = rng.uniform(-b, b, size=d + 2)
                cand = centers[assignment[i]] + jit
                if np.linalg.norm(cand) <= L and cand[d + 1] < 0:
                    theta[i] = cand
                    break
            else:
                raise ConfigError(
                    "instance.gamma0: jitter incompatible with norm/sign bounds")

    if m >= 2:
        diffs = centers[:, None, :] - centers[None, :, :]
        dist = np.sqrt((diffs ** 2).sum(axis=2))
        gamma = float(dist[np.triu_indices(m, k=1)].min())
    else:
        gamma = math.inf

    if q is None:
        q = np.full(n, 1.0 / n)
    else:
        q = np.asarray(q, dtype=float).copy()

    misspec_table = None
    if misspec:
        per_cluster = _draw_misspec(m, d, L, rng)
        misspec_table = [per_cluster[assignment[i]] for i in range(n)]

    inst = ClusterInstance(
        n=n, m=m, d=d, L=float(L), link=link,
        price_bounds=(float(price_bounds[0]), float(price_bounds[1])),
        q=q, assignment=assignment, theta=theta, centers=centers,
        gamma=gamma, gamma0=float(gamma0),
        covariate_mode=covariate_mode or CovariateMode(),
        misspec=misspec_table, seed=seed)
    inst.validate()
    return inst


# ---------------------------------------------------------------------------
# sampling operations
# ---------------------------------------------------------------------------

def sample_arrival(q: np.ndarray, rng: np.random.Generator) -> int:
    """Draw a product index with probability q_i."""
    cq = np.cumsum(q)
    i = int(np.searchsorted(cq, rng.random(), side="right"))
    return min(i, len(q) - 1)


def sample_context(mode: CovariateMode, d: int, t: int,
                   rng: np.random.Generator) -> np.ndarray:
    """Draw the raw covariate vector z for period t (||z||_2 <= 1)."""
    bound = 1.0 / math.sqrt(d)
    z = rng.uniform(-bound, bound, size=d)
    if mode.kind == "almost_static":
        half = (t - 1) // mode.period
        z[mode.coordinate] = bound if half % 2 == 0 else -bound
    return z


def purchase_probability(instance: ClusterInstance, i: int,
                         x: np.ndarray, p: float) -> float:
    """Expected demand of product i at price p given extended covariates x.

    Linear-link values may fall outside [0, 1]; they are clamped only at
    Bernoulli sampling time (see `clamp_probability`).
    """
    if instance.misspec is not None:
        return instance.misspec[i].probability(np.asarray(x)[1:], p)
    v = float(instance.theta[i] @ design_vector(x, p))
    return float(instance.link.mu(v))


def clamp_probability(prob: float) -> tuple[float, bool]:
    """Clamp into [0, 1] for sampling; flags whether clamping occurred."""
    if prob < 0.0:
        return 0.0, True
    if prob > 1.0:
        return 1.0, True
    return prob, False


def sample_purchase(prob: float, rng: np.random.Generator) -> int:
    """Bernoulli purchase outcome."""
    return 1 if rng.random() < prob else 0
