"""Experiment orchestration: reference minimizer, audits, rate fits, configs."""

from __future__ import annotations

import copy
import json
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import algorithms, data, model, topology
from .errors import ConfigError, FeatnetError
from .trace import RunTrace, comm_per_edge_per_iter, write_summary  # noqa: F401  (re-exported)

UNBIAS_TOL = 1e-9
GRADSUM_TOL = 1e-8


@dataclass
class ReferenceSolution:
    """Empirical-risk minimizer computed by the deterministic solver."""

    w_star: np.ndarray  # (M, C)
    risk_star: float
    grad_norm: float
    iterations: int
    solver: str = "backtracking-gd"

    def blocks(self, shards):
        out = []
        pos = 0
        for sh in shards:
            out.append(self.w_star[pos:pos + sh.block_size])
            pos += sh.block_size
        return out


def compute_reference(dataset, loss, reg, tol=1e-10, max_iter=500_000, w0=None):
    """Full-batch gradient descent with backtracking line search.

    Runs until ||grad R|| <= tol; deterministic. Needs a strongly convex
    total risk (positive regularization for logistic/softmax). Near the
    minimizer the Armijo decrease can fall below float resolution of the
    risk; the solver then stops at the numerical floor, where the risk
    error is about ||grad||^2 / (2 nu), far below ||grad|| itself.
    """
    H = dataset.features
    y = dataset.labels
    N, M = H.shape
    C = loss.n_classes

    def risk(w):
        scores = H @ w
        return loss.mean_risk_term(scores, y) + reg.value(w)

    def grad(w):
        G = loss.score_grad(H @ w, y)  # (N, C)
        return H.T @ G / N + reg.grad(w)

    w = np.zeros((M, C)) if w0 is None else np.array(w0, dtype=float).reshape(M, C)
    step = 1.0
    r = risk(w)
    for it in range(max_iter):
        g = grad(w)
        gnorm = float(np.linalg.norm(g))
        if gnorm <= tol:
            return ReferenceSolution(w_star=w, risk_star=risk(w), grad_norm=gnorm, iterations=it)
        gsq = gnorm ** 2
        # Armijo backtracking, reusing the last accepted step as the guess.
        step = min(step * 2.0, 1e8)
        while True:
            w_try = w - step * g
            r_try = risk(w_try)
            if r_try <= r - 0.5 * step * gsq or step < 1e-18:
                break
            step *= 0.5
        if step < 1e-18 or not np.any(w_try != w):
            # Stalled at the float floor. Accept if the residual risk error
            # (gnorm^2 / 2 nu) is negligible, otherwise report failure.
            if gnorm <= max(tol, 1e-6):
                return ReferenceSolution(w_star=w, risk_star=r, grad_norm=gnorm,
                                         iterations=it)
            break
        w, r = w_try, r_try
    raise FeatnetError(
        f"reference solver did not reach ||grad|| <= {tol:g} within {max_iter} "
        "iterations; increase the regularization coefficient or the cap"
    )


def audit_invariants(trace: RunTrace, unbias_tol=UNBIAS_TOL, gradsum_tol=GRADSUM_TOL):
    """Pass/fail report per invariant channel with worst-iteration pointers."""
    report = {}
    iters = trace.column("iteration")

    def channel(name, tol):
        col = trace.column(name)
        mask = np.isfinite(col)
        if not mask.any():
            return {"applicable": False, "pass": None, "worst_iteration": None, "worst_value": None, "tolerance": tol}
        worst = int(np.nanargmax(np.where(mask, col, -np.inf)))
        return {
            "applicable": True,
            "pass": bool(np.all(col[mask] <= tol)),
            "worst_iteration": int(iters[worst]),
            "worst_value": float(col[worst]),
            "tolerance": tol,
        }

    report["unbiasedness"] = channel("unbias_max", unbias_tol)
    report["grad_sum"] = channel("gradsum_drift", gradsum_tol)

    excess = trace.column("excess_risk")
    mask = np.isfinite(excess)
    if mask.any():
        worst = int(np.argmin(np.where(mask, excess, np.inf)))
        report["excess_risk_nonnegative"] = {
            "applicable": True,
            "pass": bool(np.all(excess[mask] >= -1e-12)),
            "worst_iteration": int(iters[worst]),
            "worst_value": float(excess[worst]),
            "tolerance": -1e-12,
        }
    else:
        report["excess_risk_nonnegative"] = {"applicable": False, "pass": None,
                                             "worst_iteration": None, "worst_value": None,
                                             "tolerance": -1e-12}
    report["all_pass"] = all(c["pass"] for c in report.values()
                             if isinstance(c, dict) and c["applicable"])
    return report


def fit_linear_rate(trace, window=None, x_axis="iteration", return_r2=False):
    """Least-squares slope of log10 excess risk over the window.

    `window` is an (start, end) iteration pair; defaults to the full trace.
    Records with non-positive excess risk are dropped with a warning (the
    window effectively shrinks). Slope is per unit of `x_axis`.
    """
    iters = trace.column("iteration")
    excess = trace.column("excess_risk")
    x = trace.column(x_axis)
    if window is None:
        sel = np.ones_like(iters, dtype=bool)
    else:
        sel = (iters >= window[0]) & (iters <= window[1])
    sel &= np.isfinite(excess) & np.isfinite(x)
    positive = excess > 0
    if np.any(sel & ~positive):
        warnings.warn("dropping non-positive excess-risk records from rate window")
        sel &= positive
    if sel.sum() < 2:
        raise ValueError("rate window has fewer than 2 usable records")
    slope, intercept = np.polyfit(x[sel], np.log10(excess[sel]), 1)
    if return_r2:
        fitted = slope * x[sel] + intercept
        resid = np.log10(excess[sel]) - fitted
        total = np.log10(excess[sel]) - np.log10(excess[sel]).mean()
        r2 = 1.0 - float(resid @ resid) / float(total @ total) if float(total @ total) > 0 else 1.0
        return float(slope), r2
    return float(slope)


# ---------------------------------------------------------------------------
# experiment configuration


CONFIG_VERSION = 1

_SCHEMA = {
    "version": None,
    "loss": None,
    "reg_coeff": None,
    "dataset": {
        "kind", "model", "n_samples", "n_features", "seed", "n_classes",
        "flip_prob", "noise", "margin", "row_normalize", "condition",
        "path", "label_col", "header", "scale01", "images", "labels", "digits",
    },
    "partition": {"scheme", "sizes"},
    "topology": {"kind", "n_agents", "radius", "seed", "path"},
    "algorithm": {"name", "mu", "step_factor", "depth", "batch", "iters", "seed", "sampling"},
    "metrics": {"record_every", "checkpoints", "reference_tol", "record_weights"},
}

_ALGORITHMS = ("naive", "vrd2", "pvrd2", "centralized_sgd", "centralized_saga",
               "deterministic_baseline")


def validate_config(cfg):
    """Schema check; raises ConfigError naming the offending field."""
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(cfg) - set(_SCHEMA)
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if cfg.get("version") != CONFIG_VERSION:
        raise ConfigError(f"config 'version' must be {CONFIG_VERSION}")
    for section in ("dataset", "topology", "algorithm"):
        if section not in cfg:
            raise ConfigError(f"missing config section '{section}'")
    for section, allowed in _SCHEMA.items():
        if allowed is None or section not in cfg:
            continue
        if not isinstance(cfg[section], dict):
            raise ConfigError(f"config section '{section}' must be an object")
        bad = set(cfg[section]) - allowed
        if bad:
            raise ConfigError(f"unknown keys in '{section}': {sorted(bad)}")
    loss_name = cfg.get("loss", "logistic")
    if loss_name not in ("logistic", "softmax", "ridge"):
        raise ConfigError(f"loss must be logistic|softmax|ridge, got {loss_name!r}")
    alg = cfg["algorithm"]
    if alg.get("name") not in _ALGORITHMS:
        raise ConfigError(f"algorithm.name must be one of {_ALGORITHMS}")
    try:
        if "iters" not in alg or int(alg["iters"]) < 1:
            raise ConfigError("algorithm.iters must be a positive integer")
        mu = alg.get("mu")
        if mu is not None and float(mu) <= 0:
            raise ConfigError("algorithm.mu must be positive")
        if float(cfg.get("reg_coeff", 0.0)) < 0:
            raise ConfigError("reg_coeff must be nonnegative")
        if alg.get("depth") is not None and int(alg["depth"]) < 1:
            raise ConfigError("algorithm.depth must be >= 1")
        if alg.get("batch") is not None and int(alg["batch"]) < 1:
            raise ConfigError("algorithm.batch must be >= 1")
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"bad config value: {exc}") from exc
    return cfg


def load_config(path):
    try:
        with open(path, "r") as fh:
            cfg = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return validate_config(cfg)


def build_dataset(spec):
    spec = dict(spec)
    kind = spec.pop("kind", "synthetic")
    if kind == "synthetic":
        return data.make_synthetic(
            N=int(spec.pop("n_samples")),
            M=int(spec.pop("n_features")),
            seed=int(spec.pop("seed", 0)),
            model=spec.pop("model", "logistic"),
            **spec,
        )
    if kind == "csv":
        return data.load_csv(spec["path"], label_col=int(spec.get("label_col", -1)),
                             header=bool(spec.get("header", False)),
                             scale01=bool(spec.get("scale01", False)))
    if kind == "idx":
        return data.load_idx(spec["images"], spec["labels"],
                             scale01=bool(spec.get("scale01", True)),
                             digits=spec.get("digits"))
    raise ConfigError(f"unknown dataset kind {kind!r}")


def build_topology(spec):
    kind = spec.get("kind", "ring")
    K = int(spec.get("n_agents", 0))
    if kind == "ring":
        g = topology.ring_graph(K)
    elif kind == "complete":
        g = topology.complete_graph(K)
    elif kind == "path":
        g = topology.path_graph(K)
    elif kind == "geometric":
        g = topology.build_random_geometric_graph(K, float(spec["radius"]), int(spec.get("seed", 0)))
    elif kind == "file":
        with open(spec["path"], "r") as fh:
            return topology.CombinationMatrix.from_json(fh.read())
    else:
        raise ConfigError(f"unknown topology kind {kind!r}")
    return topology.build_metropolis_weights(g)


def run_experiment(cfg, reference=None, seed_override=None):
    """Build everything from a validated config and run the driver.

    Returns (trace, report, reference). The resolved config is echoed into
    trace.config for reproducibility.
    """
    cfg = validate_config(copy.deepcopy(cfg))
    dataset = build_dataset(cfg["dataset"])
    loss = model.make_loss(cfg.get("loss", "logistic"),
                           n_classes=int(cfg["dataset"].get("n_classes", 2)))
    reg = model.l2_regularizer(float(cfg.get("reg_coeff", 0.0)))
    alg = dict(cfg["algorithm"])
    name = alg["name"]
    metrics = dict(cfg.get("metrics", {}))
    seed = int(alg.get("seed", 0)) if seed_override is None else int(seed_override)

    if name in ("centralized_sgd", "centralized_saga"):
        A = None
        part = data.partition_features(dataset.n_features, 1)
        shards = data.shard(dataset, part)
    else:
        A = build_topology(cfg["topology"])
        part_spec = cfg.get("partition", {"scheme": "even"})
        if "sizes" in part_spec:
            sizes = [int(s) for s in part_spec["sizes"]]
            part = data.partition_features(dataset.n_features, len(sizes), sizes)
        else:
            part = data.partition_features(dataset.n_features, A.node_count, "even")
        if part.n_agents != A.node_count:
            raise ConfigError("partition agent count does not match topology")
        shards = data.shard(dataset, part)

    if reference is None:
        reference = compute_reference(dataset, loss, reg,
                                      tol=float(metrics.get("reference_tol", 1e-10)))

    mu = alg.get("mu")
    if mu is None:
        mu = algorithms.default_step_size(loss, reg,
                                          float(np.max(shards[0].full_norms_sq)),
                                          dataset.n_samples,
                                          factor=alg.get("step_factor"))
    mu = float(mu)
    iters = int(alg["iters"])
    common = dict(
        reference=reference,
        record_every=int(metrics.get("record_every", 1)),
        record_weights=bool(metrics.get("record_weights", False)),
    )
    sampling = alg.get("sampling", "uniform")
    checkpoints = int(metrics.get("checkpoints", 10))

    if name == "naive":
        trace = algorithms.run_naive(shards, A, loss, reg, mu, iters, seed,
                                     sampling=sampling, **common)
    elif name == "vrd2":
        trace = algorithms.run_vrd2(shards, A, loss, reg, mu, iters, seed,
                                    sampling=sampling, checkpoints=checkpoints, **common)
    elif name == "pvrd2":
        trace = algorithms.run_pvrd2(shards, A, loss, reg, mu,
                                     int(alg.get("depth", 1)), int(alg.get("batch", 1)),
                                     iters, seed, sampling=sampling,
                                     checkpoints=checkpoints, **common)
    elif name == "centralized_sgd":
        trace = algorithms.run_centralized_sgd(dataset, loss, reg, mu, iters, seed,
                                               sampling=sampling, shards=shards, **common)
    elif name == "centralized_saga":
        trace = algorithms.run_centralized_saga(dataset, loss, reg, mu, iters, seed,
                                                sampling=sampling, checkpoints=checkpoints,
                                                shards=shards, **common)
    elif name == "deterministic_baseline":
        trace = algorithms.run_deterministic_baseline(shards, A, loss, reg, mu, iters, **common)
    else:  # pragma: no cover - guarded by validate_config
        raise ConfigError(f"unknown algorithm {name!r}")

    resolved = copy.deepcopy(cfg)
    resolved["algorithm"]["mu"] = mu
    resolved["algorithm"]["seed"] = seed
    if A is not None:
        resolved["topology"]["lambda"] = A.lam
    trace.config = resolved
    report = audit_invariants(trace)
    return trace, report, reference
