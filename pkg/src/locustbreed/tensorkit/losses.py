"""Scalar training objectives."""
from __future__ import annotations

import numpy as np

from .tensor import ShapeError, Tensor, as_tensor, log_softmax, mean, mul, relu, sub, sum_

IGNORE = 255


class EmptyMask(ValueError):
    pass


def cross_entropy(logits, labels) -> Tensor:
    """Mean of ``-log softmax(logits)[label]`` over the batch; ``logits`` [N,K] or [K]."""
    logits = as_tensor(logits)
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if logits.ndim == 1:
        logits = logits.reshape(1, -1)
    if labels.shape != (logits.shape[0],):
        raise ShapeError(f"cross_entropy: {labels.shape[0]} labels for logits {logits.shape}")
    logp = log_softmax(logits, axis=1)
    picked = logp[np.arange(labels.shape[0]), labels]
    return mul(mean(picked), -1.0)


def masked_pixel_cross_entropy(logits, mask) -> Tensor:
    """Per-pixel cross-entropy averaged over pixels whose mask is not ``IGNORE``.

    ``logits`` [N,K,H,W] (or [K,H,W]), ``mask`` [N,H,W] holding class ids or ``IGNORE``.
    """
    logits = as_tensor(logits)
    mask = np.asarray(mask)
    if logits.ndim == 3:
        logits = logits.reshape((1,) + logits.shape)
        mask = mask[None]
    n, k, h, w = logits.shape
    if mask.shape != (n, h, w):
        raise ShapeError(f"mask {mask.shape} does not match logits {logits.shape}")
    labeled = mask != IGNORE
    count = int(labeled.sum())
    if count == 0:
        raise EmptyMask("mask has no labelled pixels")
    onehot = np.zeros((n, k, h, w))
    nn_, hh, ww = np.nonzero(labeled)
    onehot[nn_, mask[labeled].astype(np.int64), hh, ww] = 1.0
    logp = log_softmax(logits, axis=1)
    return mul(sum_(mul(logp, onehot)), -1.0 / count)


def hinge(scores, labels, margin: float = 1.0) -> Tensor:
    """Mean of ``max(0, margin - y * score)`` with labels in {0,1} mapped to {-1,+1}."""
    scores = as_tensor(scores)
    y = np.where(np.asarray(labels) > 0, 1.0, -1.0).reshape(scores.shape)
    return mean(relu(sub(margin, mul(scores, y))))
