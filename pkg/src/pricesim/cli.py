"""Command-line front end.

Subcommands:
  generate   build a demand instance JSON from a config
  run        execute an experiment (replications in parallel), writing
             per-replication trace CSVs and one summary JSON per policy
  compare    tabulate mean losses of several summaries (CSV to stdout)
  report     human-readable view of summary files

Exit codes: 0 success, 2 configuration error, 3 runtime failure.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .config import ExperimentConfig, list_presets, load_preset
from .demand import ClusterInstance
from .errors import ConfigError, MetricError, PricesimError
from .harness import ExperimentSummary, run_experiment
from .kernels import BACKEND

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def _load_config(args) -> ExperimentConfig:
    if args.preset and args.config:
        raise ConfigError("use either --preset or --config, not both")
    if args.preset:
        return load_preset(args.preset)
    if args.config:
        return ExperimentConfig.load(args.config)
    raise ConfigError("one of --preset or --config is required")


def _apply_overrides(cfg: ExperimentConfig, args) -> ExperimentConfig:
    doc = cfg.to_dict()
    if getattr(args, "T", None) is not None:
        doc["run"]["T"] = args.T
        doc["run"].pop("checkpoints", None)
    if getattr(args, "reps", None) is not None:
        doc["run"]["replications"] = args.reps
    if getattr(args, "seed", None) is not None:
        doc["run"]["master_seed"] = args.seed
    if getattr(args, "mode", None) is not None:
        doc["run"]["mode"] = args.mode
    if getattr(args, "out", None) is not None:
        doc["run"]["output_dir"] = args.out
    return ExperimentConfig.from_dict(doc)


def _jobs(args) -> int:
    if getattr(args, "jobs", None) is not None:
        return max(1, args.jobs)
    env = os.environ.get("PRICESIM_JOBS")
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigError(f"PRICESIM_JOBS: not an integer ({env!r})") from exc
    return os.cpu_count() or 1


def cmd_generate(args) -> int:
    cfg = _load_config(args)
    instance = cfg.instance.build()
    instance.save(args.out)
    print(f"wrote {args.out} (n={instance.n} m={instance.m} d={instance.d} "
          f"link={instance.link.value} gamma={instance.gamma:.4g})")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _apply_overrides(_load_config(args), args)
    if args.instance:
        instance = ClusterInstance.load(args.instance)
    else:
        instance = cfg.instance.build()

    if args.policy == "all":
        policies = cfg.policies
    else:
        policies = [cfg.policy(args.policy)]

    out_dir = cfg.run.output_dir
    os.makedirs(out_dir, exist_ok=True)
    instance.save(os.path.join(out_dir, "instance.json"))
    manifest = {
        "complete": False,
        "policies": [],
        "config": cfg.to_dict(),
        "kernel_backend": BACKEND,
        "error": None,
    }
    manifest_path = os.path.join(out_dir, "MANIFEST.json")

    def _flush_manifest():
        with open(manifest_path, "w") as fh:
            json.dump(manifest, fh, indent=1, sort_keys=True)
            fh.write("\n")

    _flush_manifest()
    jobs = _jobs(args)
    checkpoints = cfg.run.effective_checkpoints()
    try:
        for pol in policies:
            summary, _ = run_experiment(
                instance, pol, cfg.run.T, cfg.run.replications,
                cfg.run.master_seed, checkpoints, jobs=jobs,
                mode=cfg.run.mode,
                trace_dir=None if args.no_traces else out_dir)
            summary.save(os.path.join(out_dir, f"summary_{pol.name}.json"))
            manifest["policies"].append(pol.name)
            _flush_manifest()
            print(f"{pol.name}: final mean loss "
                  f"{summary.mean_loss[-1]:.4f} "
                  f"(std {summary.std_loss[-1]:.4f}), "
                  f"mean regret {summary.mean_regret[-1]:.1f}")
    except PricesimError as exc:
        manifest["error"] = str(exc)
        _flush_manifest()
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    manifest["complete"] = True
    _flush_manifest()
    return EXIT_OK


def _load_summaries(paths) -> list[ExperimentSummary]:
    out = []
    for p in paths:
        try:
            out.append(ExperimentSummary.load(p))
        except (OSError, json.JSONDecodeError, TypeError) as exc:
            raise ConfigError(f"summary {p}: cannot load ({exc})") from exc
    return out


def cmd_compare(args) -> int:
    summaries = _load_summaries(args.summaries)
    if len(summaries) < 2:
        raise ConfigError("compare: need at least 2 summaries")
    cps = summaries[0].checkpoints
    for s in summaries[1:]:
        if s.checkpoints != cps:
            raise ConfigError("compare: summaries have mismatched checkpoints")
    names = [s.policy for s in summaries]
    print("# mean percentage revenue loss ('*' marks the checkpoint minimizer)")
    print(",".join(["checkpoint"] + names))
    for row, cp in enumerate(cps):
        vals = [s.mean_loss[row] for s in summaries]
        best = min(vals)
        cells = [f"{v:.6f}*" if v == best else f"{v:.6f}" for v in vals]
        print(",".join([str(cp)] + cells))
    print("# std percentage revenue loss")
    print(",".join(["checkpoint"] + names))
    for row, cp in enumerate(cps):
        cells = [f"{s.std_loss[row]:.6f}" for s in summaries]
        print(",".join([str(cp)] + cells))
    return EXIT_OK


def cmd_report(args) -> int:
    for path in args.summaries:
        s = _load_summaries([path])[0]
        print(f"policy {s.policy}  (replications={len(s.seeds)}, "
              f"clamped samples={s.clamp_count})")
        print(f"  {'t':>8} {'loss':>10} {'std':>10} {'regret':>12} "
              f"{'std':>12} {'recovery':>9}")
        for i, cp in enumerate(s.checkpoints):
            print(f"  {cp:>8} {s.mean_loss[i]:>10.4f} {s.std_loss[i]:>10.4f} "
                  f"{s.mean_regret[i]:>12.1f} {s.std_regret[i]:>12.1f} "
                  f"{s.recovery_rate[i]:>9.3f}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="pricesim",
        description="Dynamic pricing with online product clustering: "
                    "synthetic-market experiments.")
    sub = ap.add_subparsers(dest="command", required=True)

    def add_config_args(p):
        p.add_argument("--config", help="experiment config JSON path")
        p.add_argument("--preset",
                       help=f"shipped preset ({', '.join(list_presets())})")

    g = sub.add_parser("generate", help="write a demand instance JSON")
    add_config_args(g)
    g.add_argument("--out", required=True, help="output instance path")
    g.set_defaults(func=cmd_generate)

    r = sub.add_parser("run", help="run an experiment")
    add_config_args(r)
    r.add_argument("--instance", help="use a pre-generated instance JSON")
    r.add_argument("--policy", default="all",
                   help="configured policy name, or 'all'")
    r.add_argument("--T", type=int, help="override horizon")
    r.add_argument("--reps", type=int, help="override replication count")
    r.add_argument("--seed", type=int, help="override master seed")
    r.add_argument("--jobs", type=int,
                   help="worker processes (default: PRICESIM_JOBS or cores)")
    r.add_argument("--mode", choices=["lazy", "exhaustive"])
    r.add_argument("--out", help="override output directory")
    r.add_argument("--no-traces", action="store_true",
                   help="skip per-replication trace CSVs")
    r.set_defaults(func=cmd_run)

    c = sub.add_parser("compare", help="compare summary JSONs")
    c.add_argument("summaries", nargs="+")
    c.set_defaults(func=cmd_compare)

    p = sub.add_parser("report", help="pretty-print summary JSONs")
    p.add_argument("summaries", nargs="+")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MetricError, PricesimError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
