"""Run traces and communication accounting."""

from __future__ import annotations

import csv
import json
import math

import numpy as np

TRACE_COLUMNS = [
    "iteration",
    "risk",
    "excess_risk",
    "msd",
    "gradient_evals",
    "combination_ops",
    "comm_net",
    "comm_gross",
    "unbias_max",
    "gradsum_drift",
]


class RunTrace:
    """Per-iteration metrics recorded at a fixed cadence.

    Residual channels: `unbias_max` is the worst unbiasedness residual seen
    since the previous record (NaN where the invariant does not apply) and
    `gradsum_drift` is filled only at checkpoint iterations.
    """

    def __init__(self, algorithm, config=None):
        self.algorithm = algorithm
        self.config = dict(config or {})
        self.records = {name: [] for name in TRACE_COLUMNS}
        self.weights = []
        self.final_weights = None
        self.collisions = 0
        self.n_iterations = 0

    def add(self, **fields):
        for name in TRACE_COLUMNS:
            self.records[name].append(fields.get(name, math.nan))

    def column(self, name):
        return np.asarray(self.records[name], dtype=float)

    def __len__(self):
        return len(self.records["iteration"])

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            if self.config:
                fh.write("# config: " + json.dumps(self.config, sort_keys=True) + "\n")
            fh.write("# algorithm: " + self.algorithm + "\n")
            writer = csv.writer(fh)
            writer.writerow(TRACE_COLUMNS)
            for row in zip(*(self.records[c] for c in TRACE_COLUMNS)):
                writer.writerow(["" if isinstance(v, float) and math.isnan(v) else repr(v) if isinstance(v, float) else v for v in row])

    @classmethod
    def from_csv(cls, path):
        config = {}
        algorithm = "unknown"
        with open(path, "r", newline="") as fh:
            lines = fh.read().splitlines()
        body = []
        for line in lines:
            if line.startswith("# config: "):
                config = json.loads(line[len("# config: "):])
            elif line.startswith("# algorithm: "):
                algorithm = line[len("# algorithm: "):].strip()
            elif line.startswith("#"):
                continue
            else:
                body.append(line)
        trace = cls(algorithm, config)
        for row in csv.DictReader(body):
            trace.add(**{k: float(v) for k, v in row.items() if v not in (None, "")})
        if len(trace):
            trace.n_iterations = int(trace.records["iteration"][-1]) + 1
        return trace

    def summary(self):
        out = {
            "algorithm": self.algorithm,
            "iterations": self.n_iterations,
            "records": len(self),
            "collisions": self.collisions,
        }
        for name in TRACE_COLUMNS:
            col = self.column(name)
            finite = col[np.isfinite(col)]
            out[f"final_{name}"] = float(finite[-1]) if finite.size else None
        return out


def comm_per_edge_per_iter(algorithm, J=1, C=1, B=1, M=None, K=None,
                           convention="full", gross=False):
    """Scalars communicated per edge per iteration for each method.

    PVRD2 sends its J-stage state for each of the B batch entries
    (J*C*B scalars); `gross=True` additionally counts the piggybacked v
    tags. The model-distributed ("exact diffusion" style) convention sends
    the full stacked model (M*C) by default, or one block
    (ceil(M/K)*C) when convention="block".
    """
    if algorithm in ("pvrd2",):
        net = J * C * B
        return 2 * net if gross else net
    if algorithm in ("vrd2",):
        return 2 * C * B if gross else C * B
    if algorithm == "naive":
        return C * B
    if algorithm == "model_distributed":
        if M is None:
            raise ValueError("model-distributed accounting needs M")
        if convention == "full":
            return M * C
        if convention == "block":
            if K is None:
                raise ValueError("block convention needs K")
            return -(-M // K) * C
        raise ValueError(f"unknown convention {convention!r}")
    if algorithm in ("centralized_sgd", "centralized_saga"):
        return 0
    raise ValueError(f"unknown algorithm {algorithm!r}")


def write_summary(path, summary_dict):
    with open(path, "w") as fh:
        json.dump(summary_dict, fh, indent=2, sort_keys=True)
        fh.write("\n")
