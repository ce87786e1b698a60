"""LightGCN-style propagation, pooling, scoring and the BPR objective."""
from __future__ import annotations

import numpy as np

from .graph import AggregationMatrix, InteractionGraph, history_likelihood, normalizer, spmm, spmm_t


def init_embeddings(num_nodes: int, dim: int, rng: np.random.Generator,
                    std: float = 0.1) -> np.ndarray:
    return rng.normal(0.0, std, size=(num_nodes, dim))


def propagate(weights: AggregationMatrix, e0: np.ndarray, layers: int) -> list[np.ndarray]:
    """Layer snapshots ``[E0, W E0, W^2 E0, ...]`` of length ``layers + 1``."""
    if layers < 0:
        raise ValueError("layer count must be non-negative")
    snaps = [e0]
    for _ in range(layers):
        snaps.append(spmm(weights, snaps[-1]))
    return snaps


def pool(snapshots: list[np.ndarray]) -> np.ndarray:
    if not snapshots:
        raise ValueError("need at least one snapshot")
    return np.sum(snapshots, axis=0) / len(snapshots)


def forward(weights: AggregationMatrix, e0: np.ndarray, layers: int) -> np.ndarray:
    return pool(propagate(weights, e0, layers))


def score(pooled: np.ndarray, num_users: int, u: int, i: int) -> float:
    return float(pooled[u] @ pooled[num_users + i])


def expected_aggregation(graph: InteractionGraph, emb: np.ndarray, v: int) -> np.ndarray:
    """One aggregation step for ``v`` written as F(v) * E_{x~p(x|v)}[e_x]."""
    f = normalizer(graph, v)
    return sum(f * history_likelihood(graph, v, x) * emb[x] for x in graph.neighbors(v))


def log_sigmoid(x):
    """Numerically stable log(sigmoid(x))."""
    return -np.logaddexp(0.0, -np.asarray(x, dtype=np.float64))


def _margins(pooled, users, pos, neg):
    pu = pooled[users]
    return pu, np.einsum("bk,bk->b", pu, pooled[pos] - pooled[neg])


def bpr_loss(triplets: np.ndarray, pooled: np.ndarray, num_users: int, gamma: float,
             reg_sq_norm: float) -> float:
    """Sum of -ln sigmoid(score(u,i) - score(u,j)) plus gamma times the regularizer norm.

    ``triplets`` holds (user, positive item, negative item) in item indices;
    ``reg_sq_norm`` is ||Theta||^2 of the regularized parameters.
    """
    t = np.asarray(triplets, dtype=np.int64).reshape(-1, 3)
    _, margin = _margins(pooled, t[:, 0], t[:, 1] + num_users, t[:, 2] + num_users)
    return float(-np.sum(log_sigmoid(margin)) + gamma * reg_sq_norm)


def bpr_backward(triplets: np.ndarray, e0: np.ndarray, weights: AggregationMatrix,
                 layers: int, gamma: float, snapshots=None) -> tuple[float, np.ndarray]:
    """BPR loss with Theta = E0, and its gradient w.r.t. E0 through pooling and propagation."""
    t = np.asarray(triplets, dtype=np.int64).reshape(-1, 3)
    m = weights.num_users
    if snapshots is None:
        snapshots = propagate(weights, e0, layers)
    pooled = pool(snapshots)
    users, pos, neg = t[:, 0], t[:, 1] + m, t[:, 2] + m
    pu, margin = _margins(pooled, users, pos, neg)
    loss = float(-np.sum(log_sigmoid(margin)) + gamma * np.sum(e0 * e0))

    # d/dmargin of -ln sigmoid(margin) = -sigmoid(-margin)
    coef = -np.exp(log_sigmoid(-margin))[:, None]
    g_pooled = np.zeros_like(pooled)
    np.add.at(g_pooled, users, coef * (pooled[pos] - pooled[neg]))
    np.add.at(g_pooled, pos, coef * pu)
    np.add.at(g_pooled, neg, -coef * pu)

    # pooled = mean_l W^l E0  =>  dE0 = mean_l (W^T)^l dpooled
    g_layer = g_pooled / (layers + 1)
    grad = g_layer.copy()
    for _ in range(layers):
        g_layer = spmm_t(weights, g_layer)
        grad += g_layer
    grad += 2.0 * gamma * e0
    return loss, grad


def sample_triplets(user_items: list[np.ndarray], num_items: int, rng: np.random.Generator,
                    user_sets: list[set[int]] | None = None) -> np.ndarray:
    """One uniform negative per train positive, rejection-sampled against the user's train set.

    Users who interacted with every item have no negatives and are skipped.
    """
    user_items = [x if len(x) < num_items else x[:0] for x in user_items]
    users = np.repeat(np.arange(len(user_items)), [len(x) for x in user_items])
    pos = np.concatenate(user_items) if len(users) else np.zeros(0, dtype=np.int64)
    neg = rng.integers(0, num_items, size=len(users))
    if user_sets is None:
        user_sets = [set(x.tolist()) for x in user_items]
    bad = np.array([neg[k] in user_sets[users[k]] for k in range(len(users))], dtype=bool)
    while bad.any():
        idx = np.flatnonzero(bad)
        neg[idx] = rng.integers(0, num_items, size=len(idx))
        bad[idx] = [neg[k] in user_sets[users[k]] for k in idx]
    return np.stack([users, pos.astype(np.int64), neg], axis=1)
