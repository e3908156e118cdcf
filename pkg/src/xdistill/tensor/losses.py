"""Training objectives. Every loss is a mean over the batch axis."""

import numpy as np

from xdistill.errors import DimensionError, UsageError, ValidationError
from xdistill.tensor import ops
from xdistill.tensor.core import Tensor, as_tensor, make_node, accumulate

LOG_FLOOR = 1e-12


def cross_entropy_loss(logits, labels):
    """Mean of ``-log softmax(logits)[label]``.

    ``logits`` is ``(u,)`` with an int label, or ``(N, u)`` with ``N`` labels.
    """
    logits = as_tensor(logits)
    single = logits.ndim == 1
    if single:
        logits = ops.reshape(logits, (1, -1))
    labels = np.atleast_1d(np.asarray(labels))
    if labels.shape != (logits.shape[0],):
        raise DimensionError(f"{labels.shape[0]} labels for a batch of {logits.shape[0]} logits")
    u = logits.shape[1]
    if not np.issubdtype(labels.dtype, np.integer) or labels.min() < 0 or labels.max() >= u:
        raise UsageError(f"labels must be integers in [0, {u}), got {labels.tolist()[:10]}")
    logp = ops.log_softmax(logits)
    n = logits.shape[0]
    rows = np.arange(n)
    picked = logp.data[rows, labels]

    def _bw(g):
        grad = np.zeros_like(logp.data)
        grad[rows, labels] = -g / n
        accumulate(logp, grad)

    return make_node(-picked.mean(), (logp,), _bw, "cross_entropy")


def mae_loss(pred, target):
    """Mean absolute error over every element."""
    pred = as_tensor(pred)
    target = as_tensor(target, like=pred)
    if pred.shape != target.shape:
        raise DimensionError(f"mae_loss: prediction {pred.shape} vs target {target.shape}")
    return ops.mean(ops.abs_diff(pred, target))


def _check_distribution(p, what, atol=1e-5):
    if np.any(p < -atol):
        raise ValidationError(f"{what} has negative entries")
    sums = p.sum(axis=-1)
    if not np.allclose(sums, 1.0, atol=atol):
        raise ValidationError(f"{what} rows must sum to 1, got {np.atleast_1d(sums)[:4].tolist()}")


def kd_loss(teacher_probs, student_probs, tau=1.0):
    """``-tau^2 * sum_u p_t log p_s``, averaged over the batch.

    Both arguments are probability vectors produced with the same
    temperature. The student log is clamped below at 1e-12.
    """
    teacher = teacher_probs.data if isinstance(teacher_probs, Tensor) else np.asarray(teacher_probs)
    student_probs = as_tensor(student_probs)
    if teacher.shape != student_probs.shape:
        raise DimensionError(f"kd_loss: teacher {teacher.shape} vs student {student_probs.shape}")
    _check_distribution(teacher, "teacher probabilities")
    _check_distribution(student_probs.data, "student probabilities")
    logs = ops.clamped_log(student_probs, LOG_FLOOR)
    cross = ops.mul(logs, Tensor(teacher.astype(logs.dtype)))
    batch = teacher.shape[0] if teacher.ndim == 2 else 1
    return ops.mul(ops.sum(cross), -(tau ** 2) / batch)


def l2_penalty(weight, lam):
    """``lam * ||weight||^2`` (sum of squared entries)."""
    return ops.mul(ops.sum(ops.square(weight)), lam)


def entropy(p):
    p = np.asarray(p, dtype=np.float64)
    return float(-(p * np.log(np.maximum(p, LOG_FLOOR))).sum())
