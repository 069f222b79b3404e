"""Scikit-learn style estimators wrapping the feature-distributed drivers.

These exist so the solvers compose with pipelines and model selection; the
feature axis of X is what gets partitioned across the simulated agents.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from . import algorithms, model
from .data import Dataset, partition_features, shard
from .harness import build_topology


class _FeatureDistributedBase(BaseEstimator):
    def __init__(self, algorithm="vrd2", n_agents=4, topology="ring", radius=0.5,
                 topology_seed=0, mu=None, step_factor=None, depth=1, batch=1,
                 iters=2000, reg_coeff=1e-4, seed=0):
        self.algorithm = algorithm
        self.n_agents = n_agents
        self.topology = topology
        self.radius = radius
        self.topology_seed = topology_seed
        self.mu = mu
        self.step_factor = step_factor
        self.depth = depth
        self.batch = batch
        self.iters = iters
        self.reg_coeff = reg_coeff
        self.seed = seed

    def _combination_matrix(self):
        return build_topology({
            "kind": self.topology,
            "n_agents": self.n_agents,
            "radius": self.radius,
            "seed": self.topology_seed,
        })

    def _run(self, dataset, loss):
        reg = model.l2_regularizer(self.reg_coeff)
        A = self._combination_matrix()
        part = partition_features(dataset.n_features, self.n_agents)
        shards = shard(dataset, part)
        mu = self.mu
        if mu is None:
            mu = algorithms.default_step_size(loss, reg,
                                              float(np.max(shards[0].full_norms_sq)),
                                              dataset.n_samples, factor=self.step_factor)
        kwargs = dict(record_every=max(1, self.iters // 20))
        if self.algorithm == "naive":
            trace = algorithms.run_naive(shards, A, loss, reg, mu, self.iters, self.seed, **kwargs)
        elif self.algorithm == "vrd2":
            trace = algorithms.run_vrd2(shards, A, loss, reg, mu, self.iters, self.seed, **kwargs)
        elif self.algorithm == "pvrd2":
            trace = algorithms.run_pvrd2(shards, A, loss, reg, mu, self.depth, self.batch,
                                         self.iters, self.seed, **kwargs)
        else:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        self.trace_ = trace
        self.mixing_rate_ = A.lam
        self.mu_ = mu
        return trace.final_weights  # (M, C)


class FeatureDistributedClassifier(_FeatureDistributedBase, ClassifierMixin):
    """Binary (logistic) or multi-class (softmax) classifier trained by the
    feature-distributed simulator."""

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        self.classes_ = np.unique(y)
        if X.shape[1] < self.n_agents:
            raise ValueError(f"need at least n_agents={self.n_agents} features")
        if len(self.classes_) < 2:
            raise ValueError("need at least two classes")
        if len(self.classes_) == 2:
            labels = np.where(y == self.classes_[1], 1.0, -1.0)
            loss = model.LogisticLoss()
        else:
            labels = np.searchsorted(self.classes_, y).astype(np.int64)
            loss = model.SoftmaxLoss(len(self.classes_))
        dataset = Dataset(features=np.asarray(X, dtype=float), labels=labels)
        self.coef_ = self._run(dataset, loss)
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X)
        scores = X @ self.coef_
        return scores[:, 0] if len(self.classes_) == 2 else scores

    def predict(self, X):
        scores = self.decision_function(X)
        if len(self.classes_) == 2:
            return np.where(scores >= 0, self.classes_[1], self.classes_[0])
        return self.classes_[np.argmax(scores, axis=1)]


class FeatureDistributedRegressor(_FeatureDistributedBase, RegressorMixin):
    """Ridge (squared-loss) regressor trained by the simulator."""

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        if X.shape[1] < self.n_agents:
            raise ValueError(f"need at least n_agents={self.n_agents} features")
        dataset = Dataset(features=np.asarray(X, dtype=float),
                          labels=np.asarray(y, dtype=float))
        self.coef_ = self._run(dataset, model.SquaredLoss())
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X)
        return (X @ self.coef_)[:, 0]
