"""Experiment orchestration.

The period loop: draw a customer arrival and covariates, price with the
configured policy, score the price against the clairvoyant optimum under the
true demand model (expected regret), sample the Bernoulli outcome, and update
the policy state.  Aggregation turns replication traces into checkpointed
mean/std summaries of cumulative regret and percentage revenue loss.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import kernels
from .demand import ClusterInstance, Link, clamp_probability, design_vector, \
    extend_context, purchase_probability, sample_arrival, sample_context, \
    sample_purchase
from .errors import ConfigError, MetricError
from .estimation import SalesRecord
from .policy import PolicyConfig, PolicyKind, PolicyState, policy_price, \
    policy_update

TRACE_COLUMNS = ["rep", "t", "product", "true_cluster", "nbhd_size",
                 "recovery", "price", "delta", "outcome", "p_star", "r_star",
                 "r_policy", "inst_regret", "cum_regret"]


# ---------------------------------------------------------------------------
# clairvoyant pricing under the true model
# ---------------------------------------------------------------------------

def true_expected_revenue(instance: ClusterInstance, i: int, x: np.ndarray,
                          p: float) -> float:
    """p times the true expected demand, clamped into [0, 1] so it matches
    the expectation of the sampled Bernoulli outcome."""
    prob, _ = clamp_probability(purchase_probability(instance, i, x, p))
    return float(p) * prob


def oracle_price(instance: ClusterInstance, i: int,
                 x: np.ndarray) -> tuple[float, float]:
    """Optimal price and revenue for product i under the true demand model."""
    lo, hi = instance.price_bounds
    x = np.asarray(x, dtype=float)
    if instance.misspec is not None:
        mc = instance.misspec[i]
        p, r = kernels.price_opt_misspec(mc.context_part(x[1:]), mc.b1,
                                         mc.b2 ** 2, mc.b3, lo, hi)
        return float(p), float(r)
    theta = instance.theta[i]
    ax = float(theta[:-1] @ x)
    beta = float(theta[-1])
    if instance.link is Link.LINEAR:
        cands = [lo, hi]
        if beta < 0.0:
            for c in (-ax / (2.0 * beta), (1.0 - ax) / beta, -ax / beta):
                cands.append(min(max(c, lo), hi))
        best_p, best_r = None, -np.inf
        for p in cands:
            r = p * min(max(ax + beta * p, 0.0), 1.0)
            if r > best_r or (r == best_r and (best_p is None or p < best_p)):
                best_p, best_r = p, r
        return float(best_p), float(best_r)
    p, r = kernels.price_opt_logistic(ax, beta, lo, hi)
    return float(p), float(r)


# ---------------------------------------------------------------------------
# replication traces
# ---------------------------------------------------------------------------

@dataclass
class RegretTrace:
    """Per-period log of one replication."""

    policy: str
    rep: int
    T: int
    seed_key: list[int]
    t: np.ndarray
    product: np.ndarray
    true_cluster: np.ndarray
    nbhd_size: np.ndarray
    recovery: np.ndarray
    price: np.ndarray
    delta: np.ndarray
    outcome: np.ndarray
    p_star: np.ndarray
    r_star: np.ndarray
    r_policy: np.ndarray
    inst_regret: np.ndarray
    cum_regret: np.ndarray
    clamp_count: int


def run_replication(instance: ClusterInstance, config: PolicyConfig, T: int,
                    seed, rep: int = 0, mode: str = "lazy") -> RegretTrace:
    """Run one seeded replication and return its full trace.

    `seed` is an integer or a numpy SeedSequence; the environment and the
    policy consume independent child streams, so matched seeds give every
    policy the same arrival/covariate/outcome draws.  In the default lazy
    mode only the arrived product is priced each period (prices of the
    other products touch no state and no revenue); exhaustive mode prices
    all n products for strict fidelity to the full pipeline.
    """
    if T < 1:
        raise ConfigError("run: need T >= 1")
    if mode not in ("lazy", "exhaustive"):
        raise ConfigError(f"run.mode: unknown mode {mode!r}")
    ss = seed if isinstance(seed, np.random.SeedSequence) \
        else np.random.SeedSequence(seed)
    env_ss, pol_ss = ss.spawn(2)
    env_rng = np.random.Generator(np.random.Philox(env_ss))
    pol_rng = np.random.Generator(np.random.Philox(pol_ss))

    oracle_mode = config.kind is PolicyKind.ORACLE
    state = None
    if not oracle_mode:
        state = PolicyState(config, instance.n, instance.d, instance.link,
                            instance.L, instance.price_bounds, pol_rng)

    assignment = instance.assignment
    cluster_sizes = np.bincount(assignment, minlength=instance.m)

    cols_i = {name: np.zeros(T, dtype=np.int32)
              for name in ("t", "product", "true_cluster", "nbhd_size")}
    rec_col = np.zeros(T, dtype=bool)
    out_col = np.zeros(T, dtype=np.int8)
    cols_f = {name: np.zeros(T)
              for name in ("price", "delta", "p_star", "r_star", "r_policy",
                           "inst_regret", "cum_regret")}
    clamp_count = 0
    cum = 0.0

    for t in range(1, T + 1):
        if mode == "exhaustive":
            zs = [sample_context(instance.covariate_mode, instance.d, t,
                                 env_rng) for _ in range(instance.n)]
            i_t = sample_arrival(instance.q, env_rng)
            z = zs[i_t]
        else:
            i_t = sample_arrival(instance.q, env_rng)
            z = sample_context(instance.covariate_mode, instance.d, t, env_rng)
        x = extend_context(z)

        p_star, r_star = oracle_price(instance, i_t, x)
        if oracle_mode:
            posted = p_star
            delta = 0.0
            members = np.array([i_t])
        else:
            if mode == "exhaustive":
                for j in range(instance.n):
                    if j == i_t:
                        posted, diag = policy_price(state, config, i_t, x, t)
                    else:
                        policy_price(state, config, j,
                                     extend_context(zs[j]), t)
            else:
                posted, diag = policy_price(state, config, i_t, x, t)
            delta = diag.delta
            members = diag.members_array

        r_pol = true_expected_revenue(instance, i_t, x, posted)
        regret = r_star - r_pol
        cum += regret

        prob, clamped = clamp_probability(
            purchase_probability(instance, i_t, x, posted))
        if clamped:
            clamp_count += 1
        outcome = sample_purchase(prob, env_rng)

        if state is not None:
            policy_update(state, i_t, SalesRecord(
                t=t, product=i_t, u=design_vector(x, posted), delta=delta,
                outcome=outcome))

        ci = int(assignment[i_t])
        recovered = (len(members) == cluster_sizes[ci]
                     and bool(np.all(assignment[members] == ci)))
        k = t - 1
        cols_i["t"][k] = t
        cols_i["product"][k] = i_t
        cols_i["true_cluster"][k] = ci
        cols_i["nbhd_size"][k] = len(members)
        rec_col[k] = recovered
        out_col[k] = outcome
        cols_f["price"][k] = posted
        cols_f["delta"][k] = delta
        cols_f["p_star"][k] = p_star
        cols_f["r_star"][k] = r_star
        cols_f["r_policy"][k] = r_pol
        cols_f["inst_regret"][k] = regret
        cols_f["cum_regret"][k] = cum

    seed_key = [int(v) for v in np.atleast_1d(np.asarray(ss.entropy))] + \
        [int(v) for v in ss.spawn_key]
    return RegretTrace(
        policy=config.name, rep=rep, T=T, seed_key=seed_key,
        t=cols_i["t"], product=cols_i["product"],
        true_cluster=cols_i["true_cluster"], nbhd_size=cols_i["nbhd_size"],
        recovery=rec_col, price=cols_f["price"], delta=cols_f["delta"],
        outcome=out_col, p_star=cols_f["p_star"], r_star=cols_f["r_star"],
        r_policy=cols_f["r_policy"], inst_regret=cols_f["inst_regret"],
        cum_regret=cols_f["cum_regret"], clamp_count=clamp_count)


# ---------------------------------------------------------------------------
# multi-replication experiments
# ---------------------------------------------------------------------------

def _replication_worker(args):
    instance, config, T, master_seed, k, mode, trace_dir = args
    ss = np.random.SeedSequence(master_seed, spawn_key=(k,))
    trace = run_replication(instance, config, T, ss, rep=k, mode=mode)
    if trace_dir is not None:
        import os

        write_trace_csv(trace, os.path.join(
            trace_dir, f"trace_{config.name}_rep{k:03d}.csv"))
    return trace


def run_experiment(instance: ClusterInstance, config: PolicyConfig, T: int,
                   replications: int, master_seed: int,
                   checkpoints: Iterable[int], jobs: int = 1,
                   mode: str = "lazy", trace_dir=None
                   ) -> tuple["ExperimentSummary", list[RegretTrace]]:
    """Run seeded replications (optionally in parallel) and aggregate.

    Replication k uses the substream SeedSequence(master_seed,
    spawn_key=(k,)), so any single replication is reproducible in
    isolation.  Results are order-stable regardless of the worker count.
    """
    args = [(instance, config, T, master_seed, k, mode, trace_dir)
            for k in range(replications)]
    if jobs <= 1 or replications == 1:
        traces = [_replication_worker(a) for a in args]
    else:
        import multiprocessing as mp

        with mp.Pool(min(jobs, replications)) as pool:
            traces = pool.map(_replication_worker, args, chunksize=1)
    return aggregate(traces, checkpoints), traces


# ---------------------------------------------------------------------------
# metrics and aggregation
# ---------------------------------------------------------------------------

def percentage_revenue_loss(trace: RegretTrace) -> float:
    """Cumulative regret divided by cumulative clairvoyant revenue."""
    denom = float(trace.r_star.sum())
    if denom <= 0.0:
        raise MetricError("percentage_revenue_loss: zero oracle revenue")
    return float(trace.cum_regret[-1]) / denom


@dataclass
class ExperimentSummary:
    policy: str
    checkpoints: list[int]
    mean_loss: list[float]
    std_loss: list[float]
    mean_regret: list[float]
    std_regret: list[float]
    recovery_rate: list[float]
    clamp_count: int
    seeds: list[list[int]]

    def to_dict(self) -> dict:
        return {
            "policy": self.policy,
            "checkpoints": self.checkpoints,
            "mean_loss": self.mean_loss,
            "std_loss": self.std_loss,
            "mean_regret": self.mean_regret,
            "std_regret": self.std_regret,
            "recovery_rate": self.recovery_rate,
            "clamp_count": self.clamp_count,
            "seeds": self.seeds,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.to_json())

    @staticmethod
    def load(path) -> "ExperimentSummary":
        with open(path) as fh:
            doc = json.load(fh)
        return ExperimentSummary(**doc)


RECOVERY_SMOOTHING_WINDOW = 100


def aggregate(traces: Sequence[RegretTrace],
              checkpoints: Iterable[int]) -> ExperimentSummary:
    """Checkpointed sample mean and (n-1)-denominator standard deviation of
    percentage revenue loss and cumulative regret across replications, plus
    the trailing-window-smoothed recovery-rate curve at the checkpoints."""
    traces = list(traces)
    if not traces:
        raise ConfigError("aggregate: no traces")
    T = traces[0].T
    if any(tr.T != T for tr in traces):
        raise ConfigError("aggregate: traces disagree on T")
    checkpoints = sorted(int(c) for c in checkpoints)
    if not checkpoints or checkpoints[-1] > T or checkpoints[0] < 1:
        raise ConfigError("aggregate: checkpoints must lie in [1, T]")
    if len(traces) < 2:
        warnings.warn("aggregate: fewer than 2 traces; std reported as 0",
                      stacklevel=2)

    idx = np.array(checkpoints) - 1
    losses = []
    regrets = []
    for tr in traces:
        oracle_cum = np.cumsum(tr.r_star)
        if np.any(oracle_cum[idx] <= 0.0):
            raise MetricError("aggregate: zero oracle revenue at a checkpoint")
        losses.append(tr.cum_regret[idx] / oracle_cum[idx])
        regrets.append(tr.cum_regret[idx])
    losses = np.array(losses)
    regrets = np.array(regrets)

    rec = np.mean([tr.recovery.astype(float) for tr in traces], axis=0)
    w = RECOVERY_SMOOTHING_WINDOW
    cs = np.concatenate(([0.0], np.cumsum(rec)))
    lo = np.maximum(idx + 1 - w, 0)
    smoothed = (cs[idx + 1] - cs[lo]) / (idx + 1 - lo)

    def _std(a):
        if a.shape[0] < 2:
            return np.zeros(a.shape[1])
        return a.std(axis=0, ddof=1)

    return ExperimentSummary(
        policy=traces[0].policy,
        checkpoints=checkpoints,
        mean_loss=[float(v) for v in losses.mean(axis=0)],
        std_loss=[float(v) for v in _std(losses)],
        mean_regret=[float(v) for v in regrets.mean(axis=0)],
        std_regret=[float(v) for v in _std(regrets)],
        recovery_rate=[float(v) for v in smoothed],
        clamp_count=int(sum(tr.clamp_count for tr in traces)),
        seeds=[tr.seed_key for tr in traces],
    )


# ---------------------------------------------------------------------------
# trace CSV io
# ---------------------------------------------------------------------------

def write_trace_csv(trace: RegretTrace, path) -> None:
    ints = [np.full(trace.T, trace.rep, dtype=np.int64), trace.t,
            trace.product, trace.true_cluster, trace.nbhd_size,
            trace.recovery.astype(np.int64)]
    floats_a = [trace.price, trace.delta]
    floats_b = [trace.p_star, trace.r_star, trace.r_policy,
                trace.inst_regret, trace.cum_regret]
    with open(path, "w") as fh:
        fh.write(",".join(TRACE_COLUMNS) + "\n")
        for k in range(trace.T):
            parts = [str(int(col[k])) for col in ints]
            parts += [repr(float(col[k])) for col in floats_a]
            parts.append(str(int(trace.outcome[k])))
            parts += [repr(float(col[k])) for col in floats_b]
            fh.write(",".join(parts) + "\n")


def read_trace_csv(path) -> dict[str, np.ndarray]:
    """Strict reader for the trace schema; raises on any deviation."""
    with open(path) as fh:
        header = fh.readline().rstrip("\n")
        if header.split(",") != TRACE_COLUMNS:
            raise ConfigError(f"trace csv {path}: bad header")
        rows = [line.rstrip("\n").split(",") for line in fh if line.strip()]
    if any(len(r) != len(TRACE_COLUMNS) for r in rows):
        raise ConfigError(f"trace csv {path}: wrong field count")
    cols = {name: [] for name in TRACE_COLUMNS}
    for r in rows:
        for name, val in zip(TRACE_COLUMNS, r):
            cols[name].append(val)
    int_cols = {"rep", "t", "product", "true_cluster", "nbhd_size",
                "recovery", "outcome"}
    out = {}
    for name, vals in cols.items():
        if name in int_cols:
            out[name] = np.array([int(v) for v in vals], dtype=np.int64)
        else:
            out[name] = np.array([float(v) for v in vals])
    return out
