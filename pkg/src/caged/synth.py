"""Synthetic long-tail interaction data for desk-scale experiments."""
from __future__ import annotations

import numpy as np


def synth_interactions(num_users: int, num_items: int, num_interactions: int,
                       zipf_exponent: float, seed: int = 0, group_affinity: float = 4.0,
                       activity_sigma: float = 0.5) -> np.ndarray:
    """Sample distinct (user, item) pairs, sorted by user then item.

    Item popularity follows rank^-zipf_exponent over a shuffled item order,
    user activity is lognormal, and users prefer items from their own latent
    group by ``group_affinity``. Pairs are drawn without replacement with
    probability proportional to activity * popularity * affinity (Gumbel top-k).
    """
    if min(num_users, num_items, num_interactions) < 1:
        raise ValueError("counts must be >= 1")
    if zipf_exponent <= 0:
        raise ValueError("zipf_exponent must be > 0")
    if num_interactions > num_users * num_items:
        raise ValueError(f"{num_interactions} interactions exceed {num_users}x{num_items} pairs")

    rng = np.random.default_rng(seed)
    ranks = rng.permutation(num_items) + 1
    log_pop = -zipf_exponent * np.log(ranks)
    log_act = rng.normal(0.0, activity_sigma, size=num_users)
    user_group = rng.integers(0, 2, size=num_users)
    item_group = rng.integers(0, 2, size=num_items)
    same = user_group[:, None] == item_group[None, :]
    logits = log_act[:, None] + log_pop[None, :] + np.where(same, np.log(group_affinity), 0.0)
    keys = logits + rng.gumbel(size=logits.shape)
    flat = np.argpartition(-keys.ravel(), num_interactions - 1)[:num_interactions]
    pairs = np.stack(np.unravel_index(np.sort(flat), logits.shape), axis=1)
    return pairs.astype(np.int64)


def write_interactions(path, pairs: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for u, i in pairs:
            fh.write(f"u{u}\ti{i}\n")
