"""featnet command line: run experiments, generate inputs, audit traces."""

from __future__ import annotations

import argparse
import copy
import csv
import json
import os
import sys

import numpy as np

from . import algorithms, data, harness, topology
from .errors import ConfigError, DivergenceError, FeatnetError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


def main(argv=None):
    _apply_thread_cap()
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DivergenceError as exc:
        print(f"divergence: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except FeatnetError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def _apply_thread_cap():
    cap = os.environ.get("FEATNET_THREADS")
    if not cap:
        return
    try:
        from threadpoolctl import threadpool_limits

        threadpool_limits(limits=int(cap))
    except Exception:  # pragma: no cover - best effort
        pass


def _build_parser():
    parser = argparse.ArgumentParser(prog="featnet",
                                     description="feature-distributed learning simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment config")
    _common_config_flags(run)
    run.add_argument("--seeds", type=int, default=1, help="replicate count (seed, seed+1, ...)")
    run.add_argument("--strict-invariants", action="store_true",
                     help="nonzero exit when an invariant audit fails")
    run.set_defaults(func=cmd_run)

    gen_data = sub.add_parser("gen-data", help="materialize the config's dataset as CSV")
    _common_config_flags(gen_data)
    gen_data.set_defaults(func=cmd_gen_data)

    gen_topo = sub.add_parser("gen-topology", help="write the config's combination matrix as JSON")
    _common_config_flags(gen_topo)
    gen_topo.set_defaults(func=cmd_gen_topology)

    audit = sub.add_parser("audit", help="re-audit invariants of a written trace")
    audit.add_argument("--trace", required=True, help="path to a trace CSV")
    audit.set_defaults(func=cmd_audit)

    compare = sub.add_parser("compare", help="run several configs and align their traces")
    compare.add_argument("--config", action="append", required=True, dest="configs")
    compare.add_argument("--out", required=True)
    compare.add_argument("--set", action="append", default=[], dest="overrides",
                         metavar="KEY=VALUE")
    compare.set_defaults(func=cmd_compare)

    rate = sub.add_parser("rate-bound", help="evaluate the linear-rate factor")
    rate.add_argument("--lam", type=float, default=None, help="mixing rate in [0,1)")
    rate.add_argument("--topology", default=None, help="topology JSON to take lambda from")
    rate.add_argument("--depth", type=int, default=1)
    rate.add_argument("--n-samples", type=int, required=True)
    rate.add_argument("--mu", type=float, required=True)
    rate.add_argument("--nu", type=float, required=True)
    rate.set_defaults(func=cmd_rate_bound)

    return parser


def _common_config_flags(p):
    p.add_argument("--config", required=True, help="experiment config JSON")
    p.add_argument("--out", required=True, help="output directory (or file for gen-*)")
    p.add_argument("--set", action="append", default=[], dest="overrides",
                   metavar="KEY=VALUE", help="dotted-path config override, repeatable")


def _load_with_overrides(path, overrides):
    cfg = harness.load_config(path)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not KEY=VALUE")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = cfg
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override path {key!r} crosses a non-object")
        node[parts[-1]] = value
    return harness.validate_config(cfg)


def cmd_run(args):
    cfg = _load_with_overrides(args.config, args.overrides)
    os.makedirs(args.out, exist_ok=True)
    base_seed = int(cfg["algorithm"].get("seed", 0))
    seeds = [base_seed + i for i in range(max(1, args.seeds))]
    reference = None
    failures = 0
    for seed in seeds:
        trace, report, reference = harness.run_experiment(cfg, reference=reference,
                                                          seed_override=seed)
        out_dir = args.out if len(seeds) == 1 else os.path.join(args.out, f"seed-{seed}")
        os.makedirs(out_dir, exist_ok=True)
        trace.to_csv(os.path.join(out_dir, "trace.csv"))
        harness.write_summary(os.path.join(out_dir, "summary.json"), {
            "config": trace.config,
            "summary": trace.summary(),
            "invariants": report,
            "reference": {"risk_star": reference.risk_star,
                          "grad_norm": reference.grad_norm,
                          "iterations": reference.iterations},
        })
        if not report["all_pass"]:
            failures += 1
            print(f"seed {seed}: invariant audit FAILED", file=sys.stderr)
    if failures and args.strict_invariants:
        return EXIT_RUNTIME
    return EXIT_OK


def cmd_gen_data(args):
    cfg = _load_with_overrides(args.config, args.overrides)
    dataset = harness.build_dataset(cfg["dataset"])
    out = args.out
    if os.path.isdir(out):
        out = os.path.join(out, "data.csv")
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        for feats, label in zip(dataset.features, dataset.labels):
            writer.writerow([repr(float(v)) for v in feats] + [repr(float(label))])
    print(f"wrote {dataset.n_samples} samples x {dataset.n_features} features to {out}")
    return EXIT_OK


def cmd_gen_topology(args):
    cfg = _load_with_overrides(args.config, args.overrides)
    A = harness.build_topology(cfg["topology"])
    out = args.out
    if os.path.isdir(out):
        out = os.path.join(out, "topology.json")
    with open(out, "w") as fh:
        fh.write(A.to_json() + "\n")
    print(f"wrote K={A.node_count} topology (lambda={A.lam:.6f}) to {out}")
    return EXIT_OK


def cmd_audit(args):
    from .trace import RunTrace

    trace = RunTrace.from_csv(args.trace)
    report = harness.audit_invariants(trace)
    for name, entry in report.items():
        if not isinstance(entry, dict):
            continue
        if not entry["applicable"]:
            print(f"{name}: N/A")
        else:
            status = "pass" if entry["pass"] else "FAIL"
            print(f"{name}: {status} (worst {entry['worst_value']:.3e} "
                  f"at iteration {entry['worst_iteration']}, tol {entry['tolerance']:.1e})")
    return EXIT_OK if report["all_pass"] else EXIT_RUNTIME


def cmd_compare(args):
    if len(args.configs) < 2:
        raise ConfigError("compare needs at least two --config arguments")
    configs = [_load_with_overrides(p, args.overrides) for p in args.configs]
    first_ds = json.dumps(configs[0]["dataset"], sort_keys=True)
    for cfg in configs[1:]:
        if json.dumps(cfg["dataset"], sort_keys=True) != first_ds:
            raise ConfigError("compare requires all configs to share the dataset spec")
    os.makedirs(args.out, exist_ok=True)
    reference = None
    traces = []
    for idx, cfg in enumerate(configs):
        trace, report, reference = harness.run_experiment(cfg, reference=reference)
        label = f"{idx}-{trace.algorithm}"
        trace.to_csv(os.path.join(args.out, f"trace-{label}.csv"))
        traces.append((label, trace))
    _write_aligned(os.path.join(args.out, "compare.csv"), traces)
    harness.write_summary(os.path.join(args.out, "compare-summary.json"), {
        "runs": {label: t.summary() for label, t in traces},
        "configs": {label: t.config for label, t in traces},
    })
    print(f"wrote aligned comparison for {len(traces)} runs to {args.out}")
    return EXIT_OK


def _write_aligned(path, traces):
    headers = []
    columns = []
    for label, t in traces:
        for col in ("gradient_evals", "comm_net", "excess_risk"):
            headers.append(f"{label}:{col}")
            columns.append(t.column(col))
    depth = max(len(c) for c in columns)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(headers)
        for i in range(depth):
            writer.writerow([repr(float(c[i])) if i < len(c) and np.isfinite(c[i]) else ""
                             for c in columns])


def cmd_rate_bound(args):
    if (args.lam is None) == (args.topology is None):
        raise ConfigError("provide exactly one of --lam or --topology")
    if args.topology is not None:
        with open(args.topology, "r") as fh:
            lam = topology.CombinationMatrix.from_json(fh.read()).lam
    else:
        lam = args.lam
    try:
        rho, branch = algorithms.rate_bound_branch(lam, args.depth, args.n_samples,
                                                   args.mu, args.nu)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    print(f"rho = {rho:.12g} ({branch}, lambda={lam:.6g}, J={args.depth})")
    if args.depth == 1:
        rho1 = algorithms.corollary_rate_bound(lam, args.n_samples, args.mu, args.nu)
        print(f"corollary rho = {rho1:.12g}")
    return EXIT_OK


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
