"""Loss functions on the aggregated score, regularizers, and their constants.

Scores are length-C vectors; scalar-score losses are the C=1 case so all
drivers handle both uniformly. Labels are +/-1 for the logistic loss,
integers in 0..C-1 for softmax, and reals for the squared (ridge) loss.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit, logsumexp


class LossModel:
    """Loss Q(z; y) on a length-C score with its score-gradient.

    Subclasses implement `loss` and `score_grad`, both broadcasting over a
    leading batch axis: z has shape (..., C) and y is scalar or (...,).
    `delta` is the declared Lipschitz constant of the score-gradient.
    """

    name = "loss"
    n_classes = 1
    delta = None

    def loss(self, z, y):
        raise NotImplementedError

    def score_grad(self, z, y):
        raise NotImplementedError

    def mean_risk_term(self, scores, labels):
        """Average loss over samples; scores (N, C), labels (N,)."""
        return float(np.mean(self.loss(scores, labels)))


class LogisticLoss(LossModel):
    """ln(1 + exp(-y z)) with labels y in {-1, +1}."""

    name = "logistic"
    n_classes = 1
    delta = 0.25

    def loss(self, z, y):
        z = np.asarray(z, dtype=float)[..., 0]
        y = np.asarray(y, dtype=float)
        return np.logaddexp(0.0, -y * z)

    def score_grad(self, z, y):
        z = np.asarray(z, dtype=float)[..., 0]
        y = np.asarray(y, dtype=float)
        g = -y * expit(-y * z)
        return g[..., None]


class SquaredLoss(LossModel):
    """0.5 (z - y)^2; analytically solvable test model (ridge)."""

    name = "ridge"
    n_classes = 1
    delta = 1.0

    def loss(self, z, y):
        z = np.asarray(z, dtype=float)[..., 0]
        return 0.5 * (z - np.asarray(y, dtype=float)) ** 2

    def score_grad(self, z, y):
        z = np.asarray(z, dtype=float)[..., 0]
        return (z - np.asarray(y, dtype=float))[..., None]


class SoftmaxLoss(LossModel):
    """Multinomial cross-entropy on a length-C score vector."""

    name = "softmax"
    delta = 0.5

    def __init__(self, n_classes):
        if n_classes < 2:
            raise ValueError("softmax needs C >= 2")
        self.n_classes = int(n_classes)

    def loss(self, z, y):
        z = np.asarray(z, dtype=float)
        y = np.broadcast_to(np.asarray(y, dtype=int), z.shape[:-1])
        lse = logsumexp(z, axis=-1)
        picked = np.take_along_axis(z, y[..., None], axis=-1)[..., 0]
        return lse - picked

    def score_grad(self, z, y):
        z = np.asarray(z, dtype=float)
        y = np.broadcast_to(np.asarray(y, dtype=int), z.shape[:-1])
        p = np.exp(z - logsumexp(z, axis=-1, keepdims=True))
        onehot = np.zeros_like(p)
        np.put_along_axis(onehot, y[..., None], 1.0, axis=-1)
        return p - onehot


def logistic_loss(z, y):
    """Scalar logistic loss ln(1 + exp(-y z))."""
    return float(np.logaddexp(0.0, -y * z))


def logistic_score_grad(z, y):
    """d/dz of logistic_loss: -y / (1 + exp(y z))."""
    return float(-y * expit(-y * z))


def softmax_prob(z, gamma):
    """exp(z[gamma]) / sum_c exp(z[c]), max-subtracted for stability."""
    z = np.asarray(z, dtype=float)
    e = np.exp(z - z.max())
    return float(e[gamma] / e.sum())


def softmax_column_grads(z, gamma, h_block, W_block, coeff):
    """Per-column weight gradients of the softmax risk term at one sample.

    Column gamma gets (prob - 1) h + coeff * W[:, gamma]; every other
    column c gets prob(z, c) h + coeff * W[:, c]. Returns an array shaped
    like W_block.
    """
    z = np.asarray(z, dtype=float)
    h = np.asarray(h_block, dtype=float)
    W = np.asarray(W_block, dtype=float)
    C = z.shape[0]
    if W.shape != (h.shape[0], C):
        raise ValueError(f"weight block shape {W.shape} does not match ({h.shape[0]}, {C})")
    e = np.exp(z - z.max())
    p = e / e.sum()
    p = p.copy()
    p[gamma] -= 1.0
    return np.outer(h, p) + coeff * W


class L2Regularizer:
    """coeff * ||w_k||^2 applied per agent block; additive across blocks."""

    def __init__(self, coefficient):
        if coefficient < 0:
            raise ValueError("coefficient must be nonnegative")
        self.coefficient = float(coefficient)
        self.eta = 2.0 * self.coefficient
        # Strong-convexity modulus contributed by the regularizer alone.
        self.nu = 2.0 * self.coefficient

    def value(self, w_block):
        w = np.asarray(w_block, dtype=float)
        return self.coefficient * float(np.sum(w * w))

    def grad(self, w_block):
        return 2.0 * self.coefficient * np.asarray(w_block, dtype=float)


def l2_regularizer(coefficient):
    return L2Regularizer(coefficient)


def make_loss(name, n_classes=1):
    """Loss factory used by configs: 'logistic' | 'softmax' | 'ridge'."""
    if name == "logistic":
        return LogisticLoss()
    if name == "ridge":
        return SquaredLoss()
    if name == "softmax":
        return SoftmaxLoss(n_classes)
    raise ValueError(f"unknown loss {name!r}")


def central_difference_score_grad(loss_model, z, y, eps=1e-6):
    """Finite-difference gradient of loss_model.loss in z (test oracle)."""
    z = np.asarray(z, dtype=float)
    g = np.zeros_like(z)
    for c in range(z.shape[-1]):
        zp = z.copy()
        zm = z.copy()
        zp[..., c] += eps
        zm[..., c] -= eps
        g[..., c] = (loss_model.loss(zp[None, :], y)[0] - loss_model.loss(zm[None, :], y)[0]) / (2 * eps)
    return g
