"""Joint embedding/label ground cost for the coupling step."""

import numba
import numpy as np

from deepjdot.errors import InvalidInputError, ShapeError

PROB_EPS = 1e-12


def _as_matrix(a, name):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be a 2-d array, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError(f"{name} contains non-finite entries")
    return a


def onehot(classes, num_classes):
    classes = np.asarray(classes, dtype=np.int64)
    if classes.ndim != 1:
        raise ShapeError("class labels must be a 1-d array")
    if classes.size and (classes.min() < 0 or classes.max() >= num_classes):
        raise InvalidInputError(f"class labels must lie in [0, {num_classes})")
    y = np.zeros((classes.size, num_classes))
    y[np.arange(classes.size), classes] = 1.0
    return y


def pairwise_sq_euclidean(a, b):
    """Squared Euclidean distance between every row of ``a`` and every row of ``b``.

    Differences are formed per pair rather than through the
    ``|a|^2 + |b|^2 - 2ab`` expansion, which loses precision for nearby points.
    """
    a = _as_matrix(a, "a")
    b = _as_matrix(b, "b")
    if a.shape[1] != b.shape[1]:
        raise ShapeError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    return _sq_dist(np.ascontiguousarray(a), np.ascontiguousarray(b))


@numba.njit(cache=True)
def _sq_dist(a, b):
    n1, d = a.shape
    n2 = b.shape[0]
    out = np.empty((n1, n2))
    for i in range(n1):
        for j in range(n2):
            acc = 0.0
            for k in range(d):
                t = a[i, k] - b[j, k]
                acc += t * t
            out[i, j] = acc
    return out


def cross_entropy(y, p):
    """``-sum_k y_k log(clamp(p_k, 1e-12, 1))`` for a single label/probability pair."""
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    p = np.asarray(p, dtype=np.float64).reshape(-1)
    if y.shape != p.shape:
        raise ShapeError(f"length mismatch: {y.size} vs {p.size}")
    return float(-np.sum(y * np.log(np.clip(p, PROB_EPS, 1.0))))


def label_loss_matrix(src_classes, tgt_probs):
    """Entry (i, j) is the cross-entropy of target prediction j against source label i."""
    tgt_probs = _as_matrix(tgt_probs, "tgt_probs")
    src_classes = np.asarray(src_classes, dtype=np.int64)
    k = tgt_probs.shape[1]
    if src_classes.size and (src_classes.min() < 0 or src_classes.max() >= k):
        raise ShapeError(f"source labels exceed the {k} predicted classes")
    neg_log = -np.log(np.clip(tgt_probs, PROB_EPS, 1.0))
    return neg_log[:, src_classes].T


def build_joint_cost(src_emb, src_labels, tgt_emb, tgt_pred, alpha, lambda_t):
    """Ground cost ``alpha * |g_s_i - g_t_j|^2 + lambda_t * CE(y_s_i, p_t_j)``.

    ``src_labels`` holds integer classes; ``tgt_pred`` holds class
    probabilities whose column count fixes the number of classes.
    """
    if alpha < 0 or lambda_t < 0:
        raise InvalidInputError("alpha and lambda_t must be nonnegative")
    tgt_pred = _as_matrix(tgt_pred, "tgt_pred")
    src_labels = np.asarray(src_labels)
    if src_labels.ndim == 2:
        if src_labels.shape[1] != tgt_pred.shape[1]:
            raise ShapeError("source label classes and predicted classes differ")
        src_labels = src_labels.argmax(axis=1)
    src_emb = _as_matrix(src_emb, "src_emb")
    tgt_emb = _as_matrix(tgt_emb, "tgt_emb")
    if src_labels.shape[0] != src_emb.shape[0]:
        raise ShapeError("source labels and embeddings disagree in length")
    if tgt_pred.shape[0] != tgt_emb.shape[0]:
        raise ShapeError("target predictions and embeddings disagree in length")
    cost = alpha * pairwise_sq_euclidean(src_emb, tgt_emb)
    if lambda_t != 0:
        cost = cost + lambda_t * label_loss_matrix(src_labels, tgt_pred)
    return cost
