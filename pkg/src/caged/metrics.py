"""Top-K ranking metrics, popularity strata and inverse-item-popularity histograms."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .graph import AggregationMatrix, InteractionGraph

STRATA = ("all", "niche", "popular")


def topk(scores: np.ndarray, k: int, mask=()) -> list[int]:
    """Indices of the ``k`` highest scores, masked entries excluded, ties to the lower index."""
    if k < 1:
        raise ValueError("k must be >= 1")
    s = np.asarray(scores, dtype=np.float64).copy()
    masked = np.zeros(len(s), dtype=bool)
    masked[list(mask)] = True
    candidates = np.flatnonzero(~masked)
    # lexsort: last key is primary; stable on index for equal scores
    order = np.lexsort((candidates, -s[candidates]))
    return candidates[order[:k]].tolist()


def recall_at_k(ranked, relevant, k: int) -> float:
    rel = set(relevant)
    if not rel:
        raise ValueError("relevant set is empty")
    return sum(1 for i in ranked[:k] if i in rel) / len(rel)


def ndcg_at_k(ranked, relevant, k: int) -> float:
    rel = set(relevant)
    if not rel:
        raise ValueError("relevant set is empty")
    dcg = sum(1.0 / math.log2(p + 2) for p, i in enumerate(ranked[:k]) if i in rel)
    idcg = sum(1.0 / math.log2(p + 2) for p in range(min(k, len(rel))))
    return dcg / idcg


def popularity_split(graph: InteractionGraph, fraction: float = 0.2) -> tuple[set[int], set[int]]:
    """(popular, niche) item sets over items with train degree >= 1; top ``fraction`` by degree."""
    deg = graph.item_degrees
    active = np.flatnonzero(deg > 0)
    order = active[np.lexsort((active, -deg[active]))]
    n_pop = math.ceil(fraction * len(active))
    return set(order[:n_pop].tolist()), set(order[n_pop:].tolist())


def iip(graph: InteractionGraph, item: int) -> float:
    d = int(graph.item_degrees[item])
    if d < 1:
        raise ValueError(f"item {item} has zero train degree")
    return 1.0 / math.sqrt(d)


def _histogram(values: np.ndarray, bins: int) -> list[int]:
    if bins < 1:
        raise ValueError("bins must be >= 1")
    # right-closed bins over [0, 1]; the first bin also takes 0, values above 1 land in the last
    idx = np.ceil(np.asarray(values) * bins).astype(np.int64) - 1
    idx = np.clip(idx, 0, bins - 1)
    return np.bincount(idx, minlength=bins).tolist()


def iip_histogram(graph: InteractionGraph, bins: int = 10) -> list[int]:
    deg = graph.item_degrees
    return _histogram(1.0 / np.sqrt(deg[deg > 0]), bins)


def weight_iip(graph: InteractionGraph, weights: AggregationMatrix) -> np.ndarray:
    """Per user->item edge IIP read off the aggregation weights: W[u, i] * sqrt(deg(u)).

    Under the initial normalization this is exactly 1/sqrt(deg(i)).
    """
    m = graph.num_users
    end = graph.indptr[m]
    rows = graph.edge_rows[:end]
    return weights.data[:end] * np.sqrt(graph.degrees[rows].astype(np.float64))


def weight_iip_histogram(graph: InteractionGraph, weights: AggregationMatrix,
                         bins: int = 10) -> list[int]:
    return _histogram(weight_iip(graph, weights), bins)


def bin_edges(bins: int) -> list[tuple[float, float]]:
    return [(b / bins, (b + 1) / bins) for b in range(bins)]


def mass_above(counts: list[int], threshold: float = 0.5) -> float:
    """Fraction of histogram mass in bins whose left edge is >= ``threshold``."""
    bins = len(counts)
    total = sum(counts)
    if total == 0:
        return 0.0
    return sum(c for (lo, _), c in zip(bin_edges(bins), counts) if lo >= threshold - 1e-12) / total


def write_histogram_csv(path, counts: list[int]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["bin_left", "bin_right", "count"])
        for (lo, hi), c in zip(bin_edges(len(counts)), counts):
            w.writerow([f"{lo:.6g}", f"{hi:.6g}", c])


@dataclass
class EvalReport:
    k: int
    recall: dict[str, float]
    ndcg: dict[str, float]
    per_user: dict[str, dict[str, list[float]]] = field(default_factory=dict)
    iip_bins: int = 10
    iip_counts: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        out = {"k": self.k}
        for s in STRATA:
            out[s] = {"recall": self.recall[s], "ndcg": self.ndcg[s],
                      "users": len(self.per_user.get(s, {}).get("recall", []))}
        out["iip_histogram"] = {"bins": self.iip_bins, "counts": list(self.iip_counts)}
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=False)


def evaluate(pooled: np.ndarray, graph: InteractionGraph, heldout: list[list[int]], k: int = 20,
             train_items: list[set[int]] | None = None, bins: int = 10,
             weights: AggregationMatrix | None = None) -> EvalReport:
    """Stratified Recall@K / NDCG@K for the held-out item lists of every user.

    Rankings run over all items minus the user's train items and items unseen
    in train; strata only filter which held-out items count as hits.
    """
    m = graph.num_users
    popular, niche = popularity_split(graph)
    if train_items is None:
        train_items = graph.user_item_sets()
    dead = np.flatnonzero(graph.item_degrees == 0)
    scores = pooled[:m] @ pooled[m:].T

    per_user = {s: {"recall": [], "ndcg": []} for s in STRATA}
    for u in range(m):
        rel = set(heldout[u]) if u < len(heldout) else set()
        if not rel:
            continue
        mask = list(train_items[u]) + dead.tolist()
        ranked = topk(scores[u], k, mask)
        for s, subset in (("all", rel), ("niche", rel & niche), ("popular", rel & popular)):
            if subset:
                per_user[s]["recall"].append(recall_at_k(ranked, subset, k))
                per_user[s]["ndcg"].append(ndcg_at_k(ranked, subset, k))

    def avg(xs):
        return float(np.mean(xs)) if xs else 0.0

    counts = (weight_iip_histogram(graph, weights, bins) if weights is not None
              else iip_histogram(graph, bins))
    return EvalReport(
        k=k,
        recall={s: avg(per_user[s]["recall"]) for s in STRATA},
        ndcg={s: avg(per_user[s]["ndcg"]) for s in STRATA},
        per_user=per_user, iip_bins=bins, iip_counts=counts,
    )
