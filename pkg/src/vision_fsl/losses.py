"""Episode objectives: label-smoothed cross-entropy and support-query contrastive loss."""

from __future__ import annotations

import numpy as np

from . import ndmath as nd
from .errors import ContractError


def smoothed_targets(truth, n_way: int, eps: float) -> np.ndarray:
    truth = np.asarray(truth, dtype=np.int64)
    if not 0.0 <= eps < 1.0:
        raise ContractError(f"label smoothing must lie in [0, 1), got {eps}")
    if truth.size and (truth.min() < 0 or truth.max() >= n_way):
        raise ContractError(f"truth labels must lie in [0, {n_way}), got {truth.tolist()}")
    if n_way == 1:
        return np.ones((len(truth), 1))
    y = np.full((len(truth), n_way), eps / (n_way - 1))
    y[np.arange(len(truth)), truth] = 1.0 - eps
    return y


def ce_label_smoothing_loss(logits, truth, eps: float = 0.1):
    """Cross-entropy against smoothed one-hot targets, averaged over queries."""
    logits = nd.as_value(logits)
    y = smoothed_targets(truth, logits.shape[1], eps)
    return -nd.vsum(nd.log_softmax(logits, axis=1) * y) * (1.0 / len(y))


def contrastive_loss(heads, support_idx, support_labels, query_idx, truth, tau: float = 0.5):
    """Per head, the log share of a query's similarity mass that falls on its own class.

    Embeddings are unit-normalized per head before the dot products.
    Averaged over heads and queries.
    """
    if tau <= 0:
        raise ContractError(f"contrastive temperature must be positive, got {tau}")
    support_labels = np.asarray(support_labels)
    truth = np.asarray(truth)
    same = truth[:, None] == support_labels[None, :]
    if not same.any(axis=1).all():
        raise ContractError("a query class has no support members")
    total = None
    for e in heads:
        e = nd.l2_normalize(e)
        sims = nd.matmul(nd.take_rows(e, query_idx), nd.transpose(nd.take_rows(e, support_idx))) * (1.0 / tau)
        term = nd.vsum(nd.logsumexp(sims, axis=1, mask=same) - nd.logsumexp(sims, axis=1))
        total = term if total is None else total + term
    return -total * (1.0 / (len(heads) * len(query_idx)))
