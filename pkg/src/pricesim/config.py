"""Experiment configuration: JSON schema, validation, and shipped presets.

A config document has three sections: `instance` (the synthetic market to
generate), `policies` (named policy parameter sets), and `run` (horizon,
replication count, seeds, checkpoints, output).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from typing import Optional

import numpy as np

from .demand import ClusterInstance, CovariateMode, Link, \
    generate_cluster_instance
from .errors import ConfigError
from .policy import PolicyConfig

DEFAULT_CHECKPOINT_GRID = [5000, 10000, 15000, 20000, 25000, 30000]


def default_checkpoints(T: int) -> list[int]:
    if T == 30000:
        return list(DEFAULT_CHECKPOINT_GRID)
    pts = sorted({max(1, round(T * i / 6)) for i in range(1, 7)})
    return pts


@dataclass(frozen=True)
class InstanceSpec:
    n: int = 100
    m: int = 10
    d: int = 5
    L: float = 10.0
    link: Link = Link.LOGISTIC
    price_bounds: tuple[float, float] = (0.0, 10.0)
    gamma0: float = 0.0
    q_mode: str = "uniform"
    q: Optional[list[float]] = None
    covariate_mode: CovariateMode = field(default_factory=CovariateMode)
    misspec: bool = False
    seed: int = 1

    def validate(self) -> None:
        if self.n < 1:
            raise ConfigError("instance.n: must be >= 1")
        if not 1 <= self.m <= self.n:
            raise ConfigError("instance.m: need 1 <= m <= n")
        if self.d < 1:
            raise ConfigError("instance.d: must be >= 1")
        if self.L <= 0:
            raise ConfigError("instance.L: must be > 0")
        if self.gamma0 < 0:
            raise ConfigError("instance.gamma0: must be >= 0")
        if self.price_bounds[0] >= self.price_bounds[1]:
            raise ConfigError("instance.price_bounds: need lower < upper")
        if self.q_mode not in ("uniform", "explicit"):
            raise ConfigError("instance.q_mode: unknown mode")
        if self.q_mode == "explicit" and (self.q is None or
                                          len(self.q) != self.n):
            raise ConfigError("instance.q: need n entries in explicit mode")
        self.covariate_mode.validate(self.d)

    def to_dict(self) -> dict:
        doc = {"n": self.n, "m": self.m, "d": self.d, "L": self.L,
               "link": self.link.value,
               "price_bounds": list(self.price_bounds),
               "gamma0": self.gamma0, "q_mode": self.q_mode,
               "covariate_mode": self.covariate_mode.to_dict(),
               "misspec": self.misspec, "seed": self.seed}
        if self.q is not None:
            doc["q"] = list(self.q)
        return doc

    @staticmethod
    def from_dict(doc: dict) -> "InstanceSpec":
        known = {"n", "m", "d", "L", "link", "price_bounds", "gamma0",
                 "q_mode", "q", "covariate_mode", "misspec", "seed"}
        for key in doc:
            if key not in known:
                raise ConfigError(f"instance.{key}: unknown field")
        spec = InstanceSpec(
            n=int(doc.get("n", 100)), m=int(doc.get("m", 10)),
            d=int(doc.get("d", 5)), L=float(doc.get("L", 10.0)),
            link=Link(doc.get("link", "logistic")),
            price_bounds=tuple(float(v) for v in
                               doc.get("price_bounds", (0.0, 10.0))),
            gamma0=float(doc.get("gamma0", 0.0)),
            q_mode=doc.get("q_mode", "uniform"),
            q=doc.get("q"),
            covariate_mode=CovariateMode.from_dict(
                doc.get("covariate_mode", {"kind": "iid_uniform"})),
            misspec=bool(doc.get("misspec", False)),
            seed=int(doc.get("seed", 1)))
        spec.validate()
        return spec

    def build(self) -> ClusterInstance:
        rng = np.random.Generator(np.random.Philox(
            np.random.SeedSequence(self.seed)))
        q = None
        if self.q_mode == "explicit":
            q = np.asarray(self.q, dtype=float)
        return generate_cluster_instance(
            self.n, self.m, self.d, self.L, self.link, self.gamma0, rng,
            q=q, price_bounds=self.price_bounds,
            covariate_mode=self.covariate_mode, misspec=self.misspec,
            seed=self.seed)


@dataclass(frozen=True)
class RunSpec:
    T: int = 30000
    replications: int = 30
    master_seed: int = 1
    checkpoints: Optional[list[int]] = None
    mode: str = "lazy"
    output_dir: str = "out"

    def validate(self) -> None:
        if self.T < 1:
            raise ConfigError("run.T: must be >= 1")
        if self.replications < 1:
            raise ConfigError("run.replications: must be >= 1")
        if self.mode not in ("lazy", "exhaustive"):
            raise ConfigError("run.mode: must be 'lazy' or 'exhaustive'")
        cps = self.effective_checkpoints()
        if cps[0] < 1 or cps[-1] > self.T:
            raise ConfigError("run.checkpoints: must lie in [1, T]")

    def effective_checkpoints(self) -> list[int]:
        if self.checkpoints is not None:
            return sorted(int(c) for c in self.checkpoints)
        return default_checkpoints(self.T)

    def to_dict(self) -> dict:
        doc = {"T": self.T, "replications": self.replications,
               "master_seed": self.master_seed, "mode": self.mode,
               "output_dir": self.output_dir}
        if self.checkpoints is not None:
            doc["checkpoints"] = list(self.checkpoints)
        return doc

    @staticmethod
    def from_dict(doc: dict) -> "RunSpec":
        known = {"T", "replications", "master_seed", "checkpoints", "mode",
                 "output_dir"}
        for key in doc:
            if key not in known:
                raise ConfigError(f"run.{key}: unknown field")
        spec = RunSpec(
            T=int(doc.get("T", 30000)),
            replications=int(doc.get("replications", 30)),
            master_seed=int(doc.get("master_seed", 1)),
            checkpoints=(None if doc.get("checkpoints") is None
                         else [int(c) for c in doc["checkpoints"]]),
            mode=doc.get("mode", "lazy"),
            output_dir=str(doc.get("output_dir", "out")))
        spec.validate()
        return spec


@dataclass(frozen=True)
class ExperimentConfig:
    instance: InstanceSpec
    policies: list[PolicyConfig]
    run: RunSpec

    def validate(self) -> None:
        self.instance.validate()
        self.run.validate()
        if not self.policies:
            raise ConfigError("policies: at least one policy required")
        names = [p.name for p in self.policies]
        if len(set(names)) != len(names):
            raise ConfigError("policies: names must be unique")
        for p in self.policies:
            p.validate(n=self.instance.n,
                       instance_bounds=self.instance.price_bounds)

    def policy(self, name: str) -> PolicyConfig:
        for p in self.policies:
            if p.name == name:
                return p
        raise ConfigError(f"policy: no preset named {name!r}")

    def to_dict(self) -> dict:
        return {"instance": self.instance.to_dict(),
                "policies": [p.to_dict() for p in self.policies],
                "run": self.run.to_dict()}

    @staticmethod
    def from_dict(doc: dict) -> "ExperimentConfig":
        for key in doc:
            if key not in ("instance", "policies", "run"):
                raise ConfigError(f"{key}: unknown section")
        try:
            policies = [PolicyConfig.from_dict(p)
                        for p in doc.get("policies", [])]
        except TypeError as exc:
            raise ConfigError(f"policies: {exc}") from exc
        cfg = ExperimentConfig(
            instance=InstanceSpec.from_dict(doc.get("instance", {})),
            policies=policies,
            run=RunSpec.from_dict(doc.get("run", {})))
        cfg.validate()
        return cfg

    @staticmethod
    def load(path) -> "ExperimentConfig":
        with open(path) as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config {path}: invalid JSON ({exc})") from exc
        return ExperimentConfig.from_dict(doc)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")


def list_presets() -> list[str]:
    names = []
    for entry in resources.files("pricesim.presets").iterdir():
        if entry.name.endswith(".json"):
            names.append(entry.name[:-5])
    return sorted(names)


def load_preset(name: str) -> ExperimentConfig:
    ref = resources.files("pricesim.presets") / f"{name}.json"
    if not ref.is_file():
        raise ConfigError(
            f"preset {name!r} not found; available: {', '.join(list_presets())}")
    return ExperimentConfig.from_dict(json.loads(ref.read_text()))
