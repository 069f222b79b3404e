"""Optimization drivers: naive consensus, VRD2, PVRD2, and oracle baselines.

All drivers share the same sampler so equal seeds give equal index streams,
which the reduction-equivalence tests rely on. Weight blocks start at zero
and score memories at zero, matching the algorithms' stated initialization.
"""

from __future__ import annotations

import logging

import numpy as np

from .data import stack_weights
from .diffusion import (
    PipelineQueue,
    ScoreMemory,
    commit_touch,
    local_scaled_scores,
    tracked_score_update,
)
from .errors import DivergenceError
from .trace import RunTrace, comm_per_edge_per_iter

log = logging.getLogger(__name__)

DIVERGENCE_NORM = 1e12

# The appendix step-size bounds are conservative by construction; the
# default factor widens them while default_step_size logs a warning.
DEFAULT_STEP_FACTOR = 16.0


class Sampler:
    """Shared-seed index stream; 'uniform' draws i.i.d., 'cyclic' sweeps."""

    def __init__(self, n_samples, seed, batch_size=1, scheme="uniform"):
        if batch_size < 1:
            raise ValueError("batch size must be >= 1")
        self.n_samples = n_samples
        self.batch_size = batch_size
        self.scheme = scheme
        self._rng = np.random.default_rng(seed)
        self._pos = 0
        if scheme not in ("uniform", "cyclic"):
            raise ValueError(f"unknown sampling scheme {scheme!r}")

    def draw(self):
        if self.scheme == "uniform":
            return self._rng.integers(0, self.n_samples, size=self.batch_size)
        idx = (self._pos + np.arange(self.batch_size)) % self.n_samples
        self._pos = (self._pos + self.batch_size) % self.n_samples
        return idx


def default_step_size(loss, reg, max_norm_sq, n_samples, factor=None):
    """Constant step size from the explicit convergence-analysis bounds.

    Takes the minimum of mu <= 1/(4 nu), 1/(2 nu N), nu/(48 eta^2), and
    nu/(8 L^2 + 20 delta^2 h^4), then scales it by `factor` (defaults to
    DEFAULT_STEP_FACTOR with a logged warning, since the bounds are far
    below what is stable in practice).
    """
    nu = reg.nu
    if nu <= 0:
        raise ValueError("default step size needs a strongly convex regularizer (coeff > 0)")
    eta = reg.eta
    delta = loss.delta if loss.delta is not None else 1.0
    L = delta * max_norm_sq + eta
    h4 = max_norm_sq ** 2
    bounds = [
        1.0 / (4.0 * nu),
        1.0 / (2.0 * nu * n_samples),
        nu / (48.0 * eta ** 2),
        nu / (8.0 * L ** 2 + 20.0 * delta ** 2 * h4),
    ]
    f = DEFAULT_STEP_FACTOR if factor is None else float(factor)
    mu = min(bounds) * f
    if f > 1.0:
        log.warning(
            "step size %.3g exceeds the conservative analysis bound %.3g (factor %.3g)",
            mu, min(bounds), f,
        )
    return mu


def rate_bound(lam, J, N, mu, nu):
    """Linear-rate factor max(1 - (1 - lam^J)/(2N), 1 - mu*nu/5)."""
    _check_rate_args(lam, N, mu, nu)
    if J < 1:
        raise ValueError("J must be >= 1")
    return max(1.0 - (1.0 - lam ** J) / (2.0 * N), 1.0 - mu * nu / 5.0)


def corollary_rate_bound(lam, N, mu, nu):
    """J=1 specialization: max(1 - (1 - lam)/(2N), 1 - mu*nu/4)."""
    _check_rate_args(lam, N, mu, nu)
    return max(1.0 - (1.0 - lam) / (2.0 * N), 1.0 - mu * nu / 4.0)


def rate_bound_branch(lam, J, N, mu, nu):
    """(rho, active branch) with branch 'network-limited' or
    'strong-convexity-limited'."""
    _check_rate_args(lam, N, mu, nu)
    if J < 1:
        raise ValueError("J must be >= 1")
    net = 1.0 - (1.0 - lam ** J) / (2.0 * N)
    sc = 1.0 - mu * nu / 5.0
    if net >= sc:
        return net, "network-limited"
    return sc, "strong-convexity-limited"


def _check_rate_args(lam, N, mu, nu):
    if not (0.0 <= lam < 1.0):
        raise ValueError("lambda must be in [0, 1)")
    if N < 1:
        raise ValueError("N must be >= 1")
    if mu * nu <= 0:
        raise ValueError("mu * nu must be positive")


# ---------------------------------------------------------------------------
# recording plumbing


class _Recorder:
    def __init__(self, trace, shards, loss, reg, reference, iters,
                 record_every, record_weights, checkpoints,
                 comm_net, comm_gross, comb_ops, grads_per_iter):
        self.trace = trace
        self.shards = shards
        self.loss = loss
        self.reg = reg
        self.reference = reference
        self.record_every = max(1, record_every)
        self.record_weights = record_weights
        self.comm_net = comm_net
        self.comm_gross = comm_gross
        self.comb_ops = comb_ops
        self.grads_per_iter = grads_per_iter
        self.last_iter = iters - 1
        if checkpoints > 0 and iters > 0:
            marks = np.unique(np.linspace(0, iters - 1, min(checkpoints, iters)).astype(int))
            self.checkpoints = set(int(m) for m in marks)
        else:
            self.checkpoints = set()
        self._window_unbias = None

    def note_unbias(self, value):
        if self._window_unbias is None or value > self._window_unbias:
            self._window_unbias = value

    def step(self, i, w_blocks, gradsum_drift_fn=None):
        at_checkpoint = i in self.checkpoints
        if i % self.record_every and not at_checkpoint and i not in (0, self.last_iter):
            return
        w_full = stack_weights(w_blocks)
        risk = empirical_risk(self.shards, w_blocks, self.loss, self.reg)
        fields = {
            "iteration": i,
            "risk": risk,
            "gradient_evals": (i + 1) * self.grads_per_iter,
            "combination_ops": (i + 1) * self.comb_ops,
            "comm_net": (i + 1) * self.comm_net,
            "comm_gross": (i + 1) * self.comm_gross,
        }
        if self.reference is not None:
            fields["excess_risk"] = risk - self.reference.risk_star
            fields["msd"] = max(
                float(np.sum((w_blocks[k] - blk) ** 2))
                for k, blk in enumerate(self.reference.blocks(self.shards))
            )
        if self._window_unbias is not None:
            fields["unbias_max"] = self._window_unbias
            self._window_unbias = None
        if at_checkpoint and gradsum_drift_fn is not None:
            fields["gradsum_drift"] = gradsum_drift_fn()
        self.trace.add(**fields)
        if self.record_weights:
            self.trace.weights.append(w_full)


def empirical_risk(shards, w_blocks, loss, reg):
    """R(w) = mean_n Q(sum_k h_nk^T w_k; y_n) + sum_k r(w_k)."""
    scores = aggregate_scores(shards, w_blocks)
    total = loss.mean_risk_term(scores, shards[0].labels)
    total += sum(reg.value(b) for b in w_blocks)
    return total


def aggregate_scores(shards, w_blocks):
    """True scores (N, C) from sharded features and weight blocks."""
    scores = shards[0].features @ w_blocks[0]
    for k in range(1, len(shards)):
        scores = scores + shards[k].features @ w_blocks[k]
    return scores


def _guard(w_blocks, i):
    sq = sum(float(np.sum(b * b)) for b in w_blocks)
    if not np.isfinite(sq) or sq > DIVERGENCE_NORM ** 2:
        raise DivergenceError(f"iterate norm exceeded {DIVERGENCE_NORM:g} at iteration {i}", iteration=i)


def _zero_blocks(shards, C):
    return [np.zeros((sh.block_size, C)) for sh in shards]


def _init_grad_sum(shards, loss, C):
    labels = shards[0].labels
    N = shards[0].n_samples
    g0 = loss.score_grad(np.zeros((N, C)), labels)  # (N, C)
    return [sh.features.T @ g0 for sh in shards]


def _gradsum_drift(shards, loss, mem, grad_sum):
    labels = shards[0].labels
    worst = 0.0
    for k, sh in enumerate(shards):
        fresh = sh.features.T @ loss.score_grad(mem.u[:, k, :], labels)
        denom = 1.0 + float(np.linalg.norm(fresh))
        worst = max(worst, float(np.linalg.norm(grad_sum[k] - fresh)) / denom)
    return worst


# ---------------------------------------------------------------------------
# drivers


def run_naive(shards, A, loss, reg, mu, iters, seed, *, reference=None,
              record_every=1, record_weights=False, sampling="uniform"):
    """Algorithm 1: one-shot combination of scaled local scores, SGD step."""
    K = len(shards)
    C = loss.n_classes
    N = shards[0].n_samples
    labels = shards[0].labels
    w = _zero_blocks(shards, C)
    sampler = Sampler(N, seed, 1, sampling)
    trace = RunTrace("naive")
    rec = _Recorder(trace, shards, loss, reg, reference, iters, record_every,
                    record_weights, 0,
                    comm_per_edge_per_iter("naive", C=C),
                    comm_per_edge_per_iter("naive", C=C),
                    comb_ops=1, grads_per_iter=1)
    for i in range(iters):
        n = int(sampler.draw()[0])
        z_hat = A.combine(local_scaled_scores(shards, w, n))  # (K, C)
        g = loss.score_grad(z_hat, labels[n])  # (K, C)
        for k in range(K):
            h = shards[k].features[n]
            w[k] = w[k] - mu * (np.outer(h, g[k]) + reg.grad(w[k]))
        _guard(w, i)
        rec.step(i, w)
    trace.final_weights = stack_weights(w)
    trace.n_iterations = iters
    return trace


def run_vrd2(shards, A, loss, reg, mu, iters, seed, *, reference=None,
             record_every=1, record_weights=False, checkpoints=10,
             sampling="uniform", fault_hook=None):
    """Algorithm 2: per-index dynamic-diffusion tracking + SAGA correction."""
    K = len(shards)
    C = loss.n_classes
    N = shards[0].n_samples
    labels = shards[0].labels
    w = _zero_blocks(shards, C)
    mem = ScoreMemory(N, K, C)
    grad_sum = _init_grad_sum(shards, loss, C)
    sampler = Sampler(N, seed, 1, sampling)
    trace = RunTrace("vrd2")
    rec = _Recorder(trace, shards, loss, reg, reference, iters, record_every,
                    record_weights, checkpoints,
                    comm_per_edge_per_iter("vrd2", C=C),
                    comm_per_edge_per_iter("vrd2", C=C, gross=True),
                    comb_ops=1, grads_per_iter=1)
    for i in range(iters):
        n = int(sampler.draw()[0])
        y = labels[n]
        z, local = tracked_score_update(A, shards, w, mem, n)
        g_new = loss.score_grad(z, y)          # (K, C)
        g_old = loss.score_grad(mem.u[n], y)   # (K, C)
        w_next = []
        for k in range(K):
            h = shards[k].features[n]
            grad_k = np.outer(h, g_new[k] - g_old[k]) + grad_sum[k] / N + reg.grad(w[k])
            w_next.append(w[k] - mu * grad_k)
        commit_touch(mem, n, z, local, i)
        for k in range(K):
            grad_sum[k] += np.outer(shards[k].features[n], g_new[k] - g_old[k])
        w = w_next
        if fault_hook is not None:
            fault_hook(i, mem, w)
        rec.note_unbias(mem.unbiasedness_residual(n))
        _guard(w, i)
        rec.step(i, w, gradsum_drift_fn=lambda: _gradsum_drift(shards, loss, mem, grad_sum))
    trace.final_weights = stack_weights(w)
    trace.n_iterations = iters
    return trace


def run_pvrd2(shards, A, loss, reg, mu, J, B, iters, seed, *, reference=None,
              record_every=1, record_weights=False, checkpoints=10,
              sampling="uniform", fault_hook=None):
    """Algorithm 3: VRD2 with a J-deep pipelined consensus on the scores."""
    if J < 1 or B < 1:
        raise ValueError("need J >= 1 and B >= 1")
    K = len(shards)
    C = loss.n_classes
    N = shards[0].n_samples
    labels = shards[0].labels
    w = _zero_blocks(shards, C)
    mem = ScoreMemory(N, K, C)
    grad_sum = _init_grad_sum(shards, loss, C)
    sampler = Sampler(N, seed, B, sampling)
    queue = PipelineQueue(J, K, B, C)
    trace = RunTrace("pvrd2")
    rec = _Recorder(trace, shards, loss, reg, reference, iters, record_every,
                    record_weights, checkpoints,
                    comm_per_edge_per_iter("pvrd2", J=J, C=C, B=B),
                    comm_per_edge_per_iter("pvrd2", J=J, C=C, B=B, gross=True),
                    comb_ops=J * B, grads_per_iter=B)
    for i in range(iters):
        ns = sampler.draw()
        in_flight = queue.indices_in_flight
        trace.collisions += int(np.isin(ns, in_flight).sum() + (len(ns) - len(np.unique(ns))))
        local = np.stack([local_scaled_scores(shards, w, int(n)) for n in ns])  # (B, K, C)
        z0 = (mem.u[ns] - mem.v[ns]) + local
        zJ, vtag, popped, _ = queue.push_pop(A, z0, local, ns, iteration=i)
        bracket = [np.zeros_like(w[k]) for k in range(K)]
        valid = [b for b in range(B) if popped[b] >= 0]
        for b in valid:
            n = int(popped[b])
            y = labels[n]
            g_new = loss.score_grad(zJ[b], y)
            g_old = loss.score_grad(mem.u[n], y)
            for k in range(K):
                bracket[k] += np.outer(shards[k].features[n], g_new[k] - g_old[k])
        w_next = []
        for k in range(K):
            grad_k = bracket[k] / B + grad_sum[k] / N + reg.grad(w[k])
            w_next.append(w[k] - mu * grad_k)
        # Memory rows are overwritten in pop order; grad_sum deltas use the
        # table contents at overwrite time so the online sum stays exact
        # even when the batch carries duplicate indices.
        for b in valid:
            n = int(popped[b])
            y = labels[n]
            g_before = loss.score_grad(mem.u[n], y)
            mem.u[n] = zJ[b]
            mem.v[n] = vtag[b]
            mem.last_update_iter[n] = i
            g_after = loss.score_grad(zJ[b], y)
            for k in range(K):
                grad_sum[k] += np.outer(shards[k].features[n], g_after[k] - g_before[k])
        w = w_next
        if fault_hook is not None:
            fault_hook(i, mem, w)
        if valid:
            rec.note_unbias(max(mem.unbiasedness_residual(int(popped[b])) for b in valid))
        _guard(w, i)
        rec.step(i, w, gradsum_drift_fn=lambda: _gradsum_drift(shards, loss, mem, grad_sum))
    trace.final_weights = stack_weights(w)
    trace.n_iterations = iters
    return trace


def run_centralized_sgd(dataset, loss, reg, mu, iters, seed, *, reference=None,
                        record_every=1, record_weights=False, sampling="uniform",
                        shards=None):
    """Single-agent stochastic gradient oracle sharing the sampler."""
    from .data import partition_features, shard as make_shards

    if shards is None:
        shards = make_shards(dataset, partition_features(dataset.n_features, 1))
    sh = shards[0]
    N = sh.n_samples
    C = loss.n_classes
    labels = sh.labels
    H = sh.features
    w = np.zeros((sh.block_size, C))
    sampler = Sampler(N, seed, 1, sampling)
    trace = RunTrace("centralized_sgd")
    rec = _Recorder(trace, shards, loss, reg, reference, iters, record_every,
                    record_weights, 0, 0, 0, comb_ops=0, grads_per_iter=1)
    for i in range(iters):
        n = int(sampler.draw()[0])
        z = (H[n] @ w)[None, :]  # (1, C) score
        g = loss.score_grad(z, labels[n])[0]
        w = w - mu * (np.outer(H[n], g) + reg.grad(w))
        _guard([w], i)
        rec.step(i, [w])
    trace.final_weights = w
    trace.n_iterations = iters
    return trace


def run_centralized_saga(dataset, loss, reg, mu, iters, seed, *, reference=None,
                         record_every=1, record_weights=False, checkpoints=10,
                         sampling="uniform", shards=None):
    """Vanilla SAGA oracle with a zero-initialized score memory."""
    from .data import partition_features, shard as make_shards

    if shards is None:
        shards = make_shards(dataset, partition_features(dataset.n_features, 1))
    sh = shards[0]
    N = sh.n_samples
    C = loss.n_classes
    labels = sh.labels
    H = sh.features
    w = np.zeros((sh.block_size, C))
    u = np.zeros((N, C))
    grad_sum = H.T @ loss.score_grad(np.zeros((N, C)), labels)
    sampler = Sampler(N, seed, 1, sampling)
    trace = RunTrace("centralized_saga")
    rec = _Recorder(trace, shards, loss, reg, reference, iters, record_every,
                    record_weights, checkpoints, 0, 0, comb_ops=0, grads_per_iter=1)
    for i in range(iters):
        n = int(sampler.draw()[0])
        y = labels[n]
        z = (H[n] @ w)[None, :]
        g_new = loss.score_grad(z, y)[0]
        g_old = loss.score_grad(u[n][None, :], y)[0]
        w = w - mu * (np.outer(H[n], g_new - g_old) + grad_sum / N + reg.grad(w))
        u[n] = z[0]
        grad_sum += np.outer(H[n], g_new - g_old)
        _guard([w], i)
        rec.step(i, [w])
    trace.final_weights = w
    trace.n_iterations = iters
    return trace


def run_deterministic_baseline(shards, A, loss, reg, mu, iters, *, reference=None,
                               record_every=1, record_weights=False):
    """Full-gradient feature-distributed baseline: one dynamic-diffusion
    tracking step over all N score signals per iteration, then a
    full-gradient weight update. O(N) gradient work per iteration."""
    K = len(shards)
    C = loss.n_classes
    N = shards[0].n_samples
    labels = shards[0].labels
    w = _zero_blocks(shards, C)

    def all_local(blocks):
        return np.stack([K * (shards[k].features @ blocks[k]) for k in range(K)], axis=1)  # (N, K, C)

    d_prev = all_local(w)
    x = d_prev.copy()
    trace = RunTrace("deterministic_baseline")
    rec = _Recorder(trace, shards, loss, reg, reference, iters, record_every,
                    record_weights, 0, N * C, N * C, comb_ops=N, grads_per_iter=N)
    for i in range(iters):
        d_new = all_local(w)
        x = np.einsum("lk,nlc->nkc", A.weights, x + d_new - d_prev)
        d_prev = d_new
        w_next = []
        for k in range(K):
            G = loss.score_grad(x[:, k, :], labels)  # (N, C)
            grad_k = shards[k].features.T @ G / N + reg.grad(w[k])
            w_next.append(w[k] - mu * grad_k)
        w = w_next
        _guard(w, i)
        rec.step(i, w)
    trace.final_weights = stack_weights(w)
    trace.n_iterations = iters
    return trace
