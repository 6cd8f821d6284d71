"""Neighborhood construction and k-means.

Neighborhoods are the online surrogate for clusters: product i' joins the
neighborhood of i when their individual estimates are within the sum of
their confidence radii (plus an optional slack for relaxed clusters).
K-means (kmeans++ seeding, Lloyd iterations, several restarts) backs the
benchmark policy that replaces the confidence-ball rule.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError


@dataclass(frozen=True)
class Neighborhood:
    anchor: int
    members: frozenset[int]

    def __contains__(self, i: int) -> bool:
        return i in self.members

    def __len__(self) -> int:
        return len(self.members)


def neighborhood_mask(anchor: int, estimates: np.ndarray, bounds: np.ndarray,
                      gamma0: float = 0.0) -> np.ndarray:
    """Boolean membership mask for `build_neighborhood` (vectorized form).

    Infinite bounds are admitted deliberately: a product with no usable
    data has a vacuous confidence ball and joins every neighborhood.
    """
    diff = estimates - estimates[anchor]
    dist = np.sqrt((diff * diff).sum(axis=1))
    thresh = bounds + bounds[anchor] + gamma0
    return (dist <= thresh) | np.isinf(thresh)


def build_neighborhood(anchor: int, estimates: np.ndarray, bounds: np.ndarray,
                       gamma0: float = 0.0) -> Neighborhood:
    """Products whose estimates are within the summed confidence radii of
    the anchor's estimate (boundary inclusive); gamma0 = 0 is the exact
    cluster rule, gamma0 > 0 the relaxed one."""
    estimates = np.asarray(estimates, dtype=float)
    bounds = np.asarray(bounds, dtype=float)
    mask = neighborhood_mask(anchor, estimates, bounds, gamma0)
    return Neighborhood(anchor=anchor,
                        members=frozenset(np.flatnonzero(mask).tolist()))


@dataclass(frozen=True)
class KMeansResult:
    assignment: np.ndarray
    centers: np.ndarray
    inertia: float

    def __post_init__(self):
        self.assignment.flags.writeable = False
        self.centers.flags.writeable = False


def kmeans(points: np.ndarray, K: int, restarts: int = 10,
           max_iter: int = 100, rng: np.random.Generator | None = None
           ) -> KMeansResult:
    """Lloyd's algorithm with kmeans++ seeding; best inertia over restarts."""
    X = np.ascontiguousarray(points, dtype=float)
    if X.ndim != 2:
        raise ConfigError("kmeans: points must be 2-D")
    if K > X.shape[0]:
        raise ConfigError("kmeans: K exceeds the number of points")
    if K < 1 or restarts < 1:
        raise ConfigError("kmeans: need K >= 1 and restarts >= 1")
    if rng is None:
        rng = np.random.default_rng()
    uniforms = rng.random(restarts * K)
    assign, centers, inertia = kernels.kmeans_run(X, K, restarts, max_iter,
                                                  uniforms)
    return KMeansResult(assignment=np.asarray(assign, dtype=np.int32),
                        centers=np.asarray(centers, dtype=float),
                        inertia=float(inertia))
