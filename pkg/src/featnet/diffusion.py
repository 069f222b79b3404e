"""Consensus and score-tracking kernels shared by the optimization drivers.

Everything here works on length-C score vectors so multi-class losses flow
through unchanged. Array layouts put the agent axis where the combination
matrix applies: per-round states are (K, C), memory tables are (N, K, C).
"""

from __future__ import annotations

import numpy as np


def consensus_step(A, states):
    """One neighbor-weighted averaging round: out_k = sum_l a_lk s_l."""
    return A.combine(states)


def dynamic_diffusion_step(A, x_states, d_new, d_old):
    """Tracking update x' = A (x + d_new - d_old).

    The caller initializes x to d at the first step; the aggregate
    sum_k x_k then equals sum_k d_k at every iteration.
    """
    x = np.asarray(x_states, dtype=float)
    return A.combine(x + (np.asarray(d_new) - np.asarray(d_old)))


class ScoreMemory:
    """Per-sample tracked-score table u and last-contribution table v.

    u[n, k] holds agent k's tracked consensus estimate of the scaled score
    of sample n; v[n, k] holds the scaled local score agent k last fed in.
    Both start at zero. The aggregate invariant sum_k u[n] == sum_k v[n]
    holds after every touch.
    """

    def __init__(self, n_samples, n_agents, n_classes=1):
        self.u = np.zeros((n_samples, n_agents, n_classes))
        self.v = np.zeros((n_samples, n_agents, n_classes))
        self.last_update_iter = np.full(n_samples, -1, dtype=np.int64)

    @property
    def n_samples(self):
        return self.u.shape[0]

    def unbiasedness_residual(self, n):
        """Relative |sum_k u[n] - sum_k v[n]| for one sample row."""
        su = self.u[n].sum(axis=0)
        sv = self.v[n].sum(axis=0)
        return float(np.max(np.abs(su - sv) / (1.0 + np.abs(sv))))


def local_scaled_scores(shards, w_blocks, n):
    """K h_{n,k}^T w_k for every agent; returns (K, C)."""
    K = len(shards)
    return np.stack([K * (shards[k].features[n] @ w_blocks[k]) for k in range(K)])


def tracked_score_update(A, shards, w_blocks, memory: ScoreMemory, n):
    """One stochastic per-index tracking step for sample n.

    Returns z_hat (K, C). The caller commits the touch afterwards with
    `commit_touch`, overwriting u[n] with z_hat and v[n] with the scaled
    local scores, so this function has no side effects.
    """
    local = local_scaled_scores(shards, w_blocks, n)
    # (u - v) first: the difference is exactly zero on untouched rows.
    return A.combine((memory.u[n] - memory.v[n]) + local), local


def commit_touch(memory: ScoreMemory, n, z_hat, local, iteration):
    memory.u[n] = z_hat
    memory.v[n] = local
    memory.last_update_iter[n] = iteration


class PipelineQueue:
    """J-deep queue of in-flight consensus stages across all agents.

    Each pushed group carries a batch of B entries: the consensus-stage
    scores z (B, K, C), the untouched v tags (B, K, C), and the sample
    indices (B,), -1 for the zero-filled groups that pad iterations i < J.
    A group pushed at iteration i receives one combine per round and pops
    J-1 iterations later having absorbed A^J.
    """

    def __init__(self, depth, n_agents, batch_size=1, n_classes=1):
        if depth < 1:
            raise ValueError("pipeline depth must be >= 1")
        self.depth = int(depth)
        self.n_agents = n_agents
        self.batch_size = batch_size
        self.n_classes = n_classes
        zero = lambda: np.zeros((batch_size, n_agents, n_classes))
        # Pre-fill with depth-1 zero groups so the first push makes J slots.
        self._z = [zero() for _ in range(self.depth - 1)]
        self._v = [zero() for _ in range(self.depth - 1)]
        self._n = [np.full(batch_size, -1, dtype=np.int64) for _ in range(self.depth - 1)]
        self._pushed_at = [None] * (self.depth - 1)

    def __len__(self):
        return len(self._z)

    @property
    def indices_in_flight(self):
        """Sample indices of every in-flight group, -1 for zero padding."""
        if not self._n:
            return np.empty(0, dtype=np.int64)
        return np.concatenate(self._n)

    def push_pop(self, A, z0, v_tag, indices, iteration=None):
        """Push one group, advance every stage one combine, pop the oldest.

        Returns (z_J, v_tag, indices, pushed_at) of the popped group; the
        v tags pass through unmodified.
        """
        self._z.append(np.array(z0, dtype=float))
        self._v.append(np.array(v_tag, dtype=float))
        self._n.append(np.asarray(indices, dtype=np.int64))
        self._pushed_at.append(iteration)
        # All stages advance in the same exchange round.
        stacked = np.stack(self._z)  # (J, B, K, C)
        mixed = np.einsum("lk,jblc->jbkc", A.weights, stacked)
        for j in range(len(self._z)):
            self._z[j] = mixed[j]
        return (
            self._z.pop(0),
            self._v.pop(0),
            self._n.pop(0),
            self._pushed_at.pop(0),
        )


def pipeline_push_pop(queue: PipelineQueue, A, z0, v_tag, indices, iteration=None):
    """Module-level alias matching the operation name."""
    return queue.push_pop(A, z0, v_tag, indices, iteration=iteration)
