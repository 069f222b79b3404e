"""Network graphs and symmetric doubly stochastic combination matrices."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import TopologyError

# Retry bound for resampling disconnected random geometric draws.
MAX_GEOMETRIC_RETRIES = 1000

# Above this size the mixing rate falls back to power iteration.
DENSE_EIG_MAX_NODES = 512

_ROWSUM_TOL = 1e-12


@dataclass(frozen=True)
class Graph:
    """Undirected connected graph on agents 0..K-1."""

    node_count: int
    edges: frozenset  # frozenset of (l, k) tuples with l < k

    def __post_init__(self):
        if self.node_count < 1:
            raise ValueError("node_count must be positive")
        for (l, k) in self.edges:
            if l == k:
                raise ValueError(f"self-loop ({l},{k}) not allowed in edge set")
            if not (0 <= l < k < self.node_count):
                raise ValueError(f"edge ({l},{k}) out of range or unordered")
        if not self.is_connected():
            raise ValueError("graph must be connected")

    @property
    def adjacency(self):
        adj = [[] for _ in range(self.node_count)]
        for (l, k) in self.edges:
            adj[l].append(k)
            adj[k].append(l)
        return adj

    def degree(self, k):
        return sum(1 for e in self.edges if k in e)

    def is_connected(self):
        if self.node_count == 1:
            return True
        adj = self.adjacency
        seen = {0}
        stack = [0]
        while stack:
            node = stack.pop()
            for nb in adj[node]:
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        return len(seen) == self.node_count


def make_graph(node_count, edges):
    """Normalize an edge iterable into a Graph."""
    norm = frozenset((min(l, k), max(l, k)) for (l, k) in edges)
    return Graph(node_count=node_count, edges=norm)


def ring_graph(K):
    if K < 2:
        raise ValueError("ring needs K >= 2")
    return make_graph(K, [(k, (k + 1) % K) for k in range(K)])


def complete_graph(K):
    # K = 1 is allowed: a lone agent, which reduces the simulator to the
    # centralized method.
    if K < 1:
        raise ValueError("complete graph needs K >= 1")
    return make_graph(K, [(l, k) for l in range(K) for k in range(l + 1, K)])


def path_graph(K):
    if K < 2:
        raise ValueError("path needs K >= 2")
    return make_graph(K, [(k, k + 1) for k in range(K - 1)])


def build_random_geometric_graph(K, radius, seed):
    """Place K nodes uniformly in the unit square; join pairs closer than radius.

    Disconnected draws are resampled from the same stream up to
    MAX_GEOMETRIC_RETRIES times.
    """
    if K < 2:
        raise ValueError("need K >= 2 agents")
    if radius <= 0:
        raise ValueError("radius must be positive")
    rng = np.random.default_rng(seed)
    for _ in range(MAX_GEOMETRIC_RETRIES):
        pts = rng.random((K, 2))
        diff = pts[:, None, :] - pts[None, :, :]
        dist = np.sqrt((diff ** 2).sum(axis=2))
        edges = [(l, k) for l in range(K) for k in range(l + 1, K) if dist[l, k] < radius]
        norm = frozenset(edges)
        if _edges_connected(K, norm):
            return Graph(node_count=K, edges=norm)
    raise TopologyError(
        f"no connected geometric graph found for K={K}, radius={radius} "
        f"within {MAX_GEOMETRIC_RETRIES} draws (radius too small?)"
    )


def _edges_connected(K, edges):
    adj = [[] for _ in range(K)]
    for (l, k) in edges:
        adj[l].append(k)
        adj[k].append(l)
    seen = {0}
    stack = [0]
    while stack:
        node = stack.pop()
        for nb in adj[node]:
            if nb not in seen:
                seen.add(nb)
                stack.append(nb)
    return len(seen) == K


@dataclass(frozen=True)
class CombinationMatrix:
    """Symmetric doubly stochastic neighbor weights with mixing rate lambda."""

    weights: np.ndarray
    lam: float
    neighbor_lists: list = field(default_factory=list)

    @property
    def node_count(self):
        return self.weights.shape[0]

    def validate(self):
        A = self.weights
        K = A.shape[0]
        if A.shape != (K, K):
            raise ValueError("weights must be square")
        if np.any(A < 0):
            raise ValueError("weights must be nonnegative")
        if np.max(np.abs(A - A.T)) != 0.0:
            raise ValueError("weights must be exactly symmetric")
        if np.max(np.abs(A.sum(axis=0) - 1.0)) > _ROWSUM_TOL:
            raise ValueError("columns must sum to 1")
        if np.max(np.abs(A.sum(axis=1) - 1.0)) > _ROWSUM_TOL:
            raise ValueError("rows must sum to 1")
        if not np.any(np.diag(A) > 0):
            raise ValueError("need a_kk > 0 for at least one agent")
        if not (0.0 <= self.lam < 1.0):
            raise ValueError(f"mixing rate {self.lam} outside [0, 1)")

    def combine(self, states):
        """Apply one neighbor-weighted averaging round.

        `states` has agents on axis 0; returns the combined states.
        """
        states = np.asarray(states)
        return np.tensordot(self.weights, states, axes=([0], [0]))

    def to_json(self):
        K = self.node_count
        edges = sorted(
            (l, k)
            for l in range(K)
            for k in range(l + 1, K)
            if self.weights[l, k] > 0
        )
        return json.dumps(
            {
                "K": K,
                "edges": [list(e) for e in edges],
                "weights": [_float17(x) for x in self.weights.ravel(order="C")],
            }
        )

    @classmethod
    def from_json(cls, text):
        obj = json.loads(text)
        K = int(obj["K"])
        W = np.array([float(x) for x in obj["weights"]], dtype=float).reshape(K, K)
        mat = cls(weights=W, lam=mixing_rate(W), neighbor_lists=_neighbor_lists(W))
        mat.validate()
        return mat


def _float17(x):
    # 17 significant digits round-trips IEEE double exactly.
    return float(f"{float(x):.17g}")


def _neighbor_lists(W):
    K = W.shape[0]
    return [[l for l in range(K) if W[l, k] > 0] for k in range(K)]


def build_metropolis_weights(g: Graph) -> CombinationMatrix:
    """Metropolis-Hastings weights: a_lk = 1/(1 + max(deg l, deg k))."""
    K = g.node_count
    deg = np.zeros(K, dtype=int)
    for (l, k) in g.edges:
        deg[l] += 1
        deg[k] += 1
    W = np.zeros((K, K))
    for (l, k) in g.edges:
        W[l, k] = W[k, l] = 1.0 / (1.0 + max(deg[l], deg[k]))
    for k in range(K):
        W[k, k] = 1.0 - W[:, k].sum()
    mat = CombinationMatrix(weights=W, lam=mixing_rate(W), neighbor_lists=_neighbor_lists(W))
    mat.validate()
    return mat


def mixing_rate(A) -> float:
    """Second-largest eigenvalue magnitude of a symmetric doubly stochastic A.

    Raises if the result is not strictly below 1 (disconnected support).
    """
    A = np.asarray(A, dtype=float)
    K = A.shape[0]
    if K == 1:
        return 0.0
    if K <= DENSE_EIG_MAX_NODES:
        eig = np.linalg.eigvalsh(A)
        mags = np.sort(np.abs(eig))[::-1]
        lam = mags[1]
    else:
        lam = _power_iteration_rate(A)
    lam = max(0.0, float(lam))
    if lam >= 1.0 - _ROWSUM_TOL:
        raise ValueError("second eigenvalue magnitude is 1: underlying graph disconnected")
    return lam


def _power_iteration_rate(A, tol=1e-12, max_iter=100000):
    # Power iteration on A - (1/K) 11^T, which removes the Perron mode.
    K = A.shape[0]
    rng = np.random.default_rng(0)
    x = rng.standard_normal(K)
    x -= x.mean()
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(max_iter):
        y = A @ x
        y -= y.mean()
        nrm = np.linalg.norm(y)
        if nrm == 0.0:
            return 0.0
        y /= nrm
        new = abs(y @ (A @ y))
        if abs(new - lam) <= tol:
            return new
        lam = new
        x = y
    return lam


def graph_to_json(g: Graph):
    return json.dumps({"K": g.node_count, "edges": sorted(list(e) for e in g.edges)})


def graph_from_json(text):
    obj = json.loads(text)
    return make_graph(int(obj["K"]), [tuple(e) for e in obj["edges"]])
