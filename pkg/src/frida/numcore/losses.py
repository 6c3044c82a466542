"""Likelihood losses returning ``(loss, dloss/dlogits)``."""
import numpy as np

from frida.errors import NumericError, ShapeError


def log_softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def softmax(logits):
    return np.exp(log_softmax(logits))


def softmax_xent(logits, targets):
    """Mean negative log-likelihood of integer ``targets`` under ``softmax(logits)``."""
    logits = np.asarray(logits, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.int64)
    if not np.all(np.isfinite(logits)):
        raise NumericError("non-finite logits")
    n, c = logits.shape
    if targets.shape != (n,):
        raise ShapeError(f"expected {n} targets, got shape {targets.shape}")
    if n and (targets.min() < 0 or targets.max() >= c):
        raise ShapeError(f"target index outside [0, {c})")
    logp = log_softmax(logits)
    rows = np.arange(n)
    loss = -logp[rows, targets].mean()
    grad = np.exp(logp)
    grad[rows, targets] -= 1.0
    return float(loss), grad / n


def sigmoid_xent(logits, targets):
    """Mean binary negative log-likelihood for one logit per row.

    ``targets`` is a scalar or per-row array of 0/1 labels.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise NumericError("non-finite logits")
    n = logits.shape[0]
    t = np.broadcast_to(np.asarray(targets, dtype=np.float64).reshape(-1, 1), logits.shape)
    # -log sigmoid(l) = softplus(-l);  -log(1 - sigmoid(l)) = softplus(l)
    signed = np.where(t > 0.5, -logits, logits)
    loss = np.logaddexp(0.0, signed).mean()
    sig = 0.5 * (1.0 + np.tanh(0.5 * logits))
    return float(loss), (sig - t) / n
