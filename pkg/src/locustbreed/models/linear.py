"""Linear baselines over flattened features: logistic regression and a linear SVM."""
from __future__ import annotations

import math

import numpy as np

from ..tensorkit import Tensor, add, concat, hinge, matmul, mul, no_grad, sum_
from ..tensorkit.init import zeros
from .base import BreedingModel, ModelConfig, make_batch


def _two_class(z: Tensor) -> Tensor:
    """[N,1] score -> logits [0, z] so that softmax gives sigmoid(z) for class 1."""
    return concat([Tensor(np.zeros(z.shape)), z], axis=1)


class LogisticRegression(BreedingModel):
    architecture = "logreg"

    def __init__(self, config: ModelConfig):
        super().__init__(config)
        self.weight = zeros((config.flat_length, 1))
        self.bias = zeros((1,))

    def decision(self, flat) -> Tensor:
        return add(matmul(flat, self.weight), self.bias)

    def logits(self, batch):
        return _two_class(self.decision(batch["flat"]))


class LinearSVM(BreedingModel):
    """L2-regularised hinge loss; probabilities from a Platt sigmoid on the margin.

    The objective is ``l2/2 * ||w||^2 + mean(hinge)`` with ``l2 = 1 / (C * n_train)``,
    i.e. the usual ``||w||^2/2 + C * sum(hinge)`` divided by ``C * n_train``.
    """

    architecture = "svm"

    def __init__(self, config: ModelConfig):
        super().__init__(config)
        self.weight = zeros((config.flat_length, 1))
        self.bias = zeros((1,))
        self.platt = Tensor(np.array([1.0, 0.0]))  # slope, intercept; fixed, not trained
        self.l2 = 0.0

    def margin(self, flat) -> Tensor:
        return add(matmul(flat, self.weight), self.bias)

    def logits(self, batch):
        m = self.margin(batch["flat"])
        a, b = self.platt.data
        return _two_class(add(mul(m, a), b))

    def loss(self, batch):
        obj = hinge(self.margin(batch["flat"]), batch["label"])
        if self.l2:
            obj = add(obj, mul(sum_(mul(self.weight, self.weight)), 0.5 * self.l2))
        return obj

    def fit_begin(self, train_set):
        self.l2 = 1.0 / (self.config.hyper["C"] * max(len(train_set), 1))

    def fit_end(self, val_set):
        if len(val_set) and len(set(val_set.labels.tolist())) == 2:
            with no_grad():
                m = self.margin(make_batch(val_set, "flat")["flat"]).data.ravel()
            self.platt.data = np.array(platt_fit(m, val_set.labels))


def platt_fit(margins, labels, iters: int = 100) -> tuple[float, float]:
    """Fit ``P(y=1|m) = sigmoid(a*m + b)`` by Newton's method on Platt's smoothed targets."""
    m = np.asarray(margins, dtype=np.float64)
    y = np.asarray(labels).astype(bool)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    t = np.where(y, (n_pos + 1.0) / (n_pos + 2.0), 1.0 / (n_neg + 2.0))
    a, b = 1.0, 0.0
    for _ in range(iters):
        p = np.exp(-np.logaddexp(0.0, -(a * m + b)))
        r = p - t
        grad = np.array([np.dot(r, m), r.sum()])
        w = p * (1 - p) + 1e-12
        hess = np.array([[np.dot(w, m * m), np.dot(w, m)], [np.dot(w, m), w.sum()]])
        hess += 1e-12 * np.eye(2)
        step = np.linalg.solve(hess, grad)
        a, b = a - step[0], b - step[1]
        if np.abs(step).max() < 1e-12:
            break
    return float(a), float(b)


def svm_objective(w, b, x, y, l2: float) -> float:
    s = np.where(np.asarray(y) > 0, 1.0, -1.0)
    return 0.5 * l2 * float(np.dot(w, w)) + float(np.maximum(0.0, 1.0 - s * (x @ w + b)).mean())


def svm_train(x, y, C: float = 1.0, iters: int = 5000, lr: float = 0.5, seed: int = 0) -> LinearSVM:
    """Full-batch sub-gradient descent (step ``lr/sqrt(t)``), keeping the best iterate."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y)
    s = np.where(y > 0, 1.0, -1.0)
    n, d = x.shape
    l2 = 1.0 / (C * n)
    w, b = np.zeros(d), 0.0
    best = (svm_objective(w, b, x, y, l2), w.copy(), b)
    for t in range(1, iters + 1):
        viol = s * (x @ w + b) < 1.0
        gw = l2 * w - (s[viol, None] * x[viol]).sum(axis=0) / n
        gb = -s[viol].sum() / n
        step = lr / math.sqrt(t)
        w, b = w - step * gw, b - step * gb
        obj = svm_objective(w, b, x, y, l2)
        if obj < best[0]:
            best = (obj, w.copy(), b)
    cfg = ModelConfig("svm", {"flat": (d,)}, {"C": C}, seed)
    model = LinearSVM(cfg)
    model.weight.data = best[1].reshape(d, 1)
    model.bias.data = np.array([best[2]])
    model.l2 = l2
    return model
