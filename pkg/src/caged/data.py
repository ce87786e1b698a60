"""Interaction loading, binarization and the 7:1:2 train/validation/test split."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

logger = logging.getLogger(__name__)

# named input formats accepted by ``load_interactions``
FORMATS = {"tsv": "\t", "csv": ",", "movielens": "::", "space": None}


class MalformedLineError(ValueError):
    def __init__(self, path, lineno: int, line: str):
        super().__init__(f"{path}:{lineno}: expected at least 2 fields, got {line!r}")
        self.lineno = lineno


@dataclass(frozen=True)
class RawInteraction:
    user_id: str
    item_id: str
    rating: float | None = None
    timestamp: int | None = None

    def __post_init__(self):
        if not self.user_id or not self.item_id:
            raise ValueError("user_id and item_id must be non-empty")
        if self.rating is not None and not math.isfinite(self.rating):
            raise ValueError(f"non-finite rating {self.rating!r}")


@dataclass(frozen=True)
class IndexedDataset:
    num_users: int
    num_items: int
    train: list[tuple[int, int]]
    validation: list[tuple[int, int]]
    test: list[tuple[int, int]]
    user_index_map: dict[str, int] = field(default_factory=dict)
    item_index_map: dict[str, int] = field(default_factory=dict)

    @property
    def num_interactions(self) -> int:
        return len(self.train) + len(self.validation) + len(self.test)

    def user_items(self, split: str) -> list[list[int]]:
        """Per-user item lists for one of ``train``, ``validation``, ``test``."""
        out: list[list[int]] = [[] for _ in range(self.num_users)]
        for u, i in getattr(self, split):
            out[u].append(i)
        return out


def _resolve_delimiter(fmt: str | None) -> str | None:
    if fmt is None:
        return "\t"
    return FORMATS.get(fmt, fmt)


def load_interactions(path, fmt: str | None = "tsv") -> list[RawInteraction]:
    """Read one interaction per non-empty line: ``user item [rating] [timestamp]``.

    ``fmt`` is either a named format from ``FORMATS`` or a literal delimiter.
    Duplicate (user, item) pairs are kept here.
    """
    delim = _resolve_delimiter(fmt)
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = [p.strip() for p in (line.split(delim) if delim else line.split())]
            if len(parts) < 2 or not parts[0] or not parts[1]:
                raise MalformedLineError(path, lineno, line)
            try:
                rating = float(parts[2]) if len(parts) > 2 and parts[2] else None
                timestamp = int(parts[3]) if len(parts) > 3 and parts[3] else None
                records.append(RawInteraction(parts[0], parts[1], rating, timestamp))
            except ValueError as exc:
                raise MalformedLineError(path, lineno, line) from exc
    return records


def binarize(records: list[RawInteraction], keep_threshold: float) -> list[RawInteraction]:
    """Keep records rated at least ``keep_threshold``; unrated records are implicit positives."""
    if not math.isfinite(keep_threshold):
        raise ValueError("keep_threshold must be finite")
    return [r for r in records if r.rating is None or r.rating >= keep_threshold]


def deduplicate(records: list[RawInteraction]) -> list[RawInteraction]:
    seen = set()
    out = []
    for r in records:
        key = (r.user_id, r.item_id)
        if key not in seen:
            seen.add(key)
            out.append(r)
    return out


def split_sizes(total: int, ratios=(7, 1, 2)) -> tuple[int, int, int]:
    """Cumulative-boundary partition sizes; the test split takes the remainder."""
    s = float(sum(ratios))
    b1 = math.floor(total * ratios[0] / s)
    b2 = math.floor(total * (ratios[0] + ratios[1]) / s)
    return b1, b2 - b1, total - b2


def split(records: list[RawInteraction], ratios=(7, 1, 2), seed: int = 0) -> IndexedDataset:
    if not records:
        raise ValueError("cannot split an empty interaction list")
    if len(ratios) != 3 or any(r <= 0 for r in ratios):
        raise ValueError(f"ratios must be three positive numbers, got {ratios!r}")
    records = deduplicate(records)

    users: dict[str, int] = {}
    items: dict[str, int] = {}
    pairs = np.empty((len(records), 2), dtype=np.int64)
    for n, r in enumerate(records):
        pairs[n, 0] = users.setdefault(r.user_id, len(users))
        pairs[n, 1] = items.setdefault(r.item_id, len(items))

    perm = np.random.default_rng(seed).permutation(len(records))
    n_train, n_val, _ = split_sizes(len(records), ratios)
    parts = [perm[:n_train].tolist(), perm[n_train:n_train + n_val].tolist(),
             perm[n_train + n_val:].tolist()]

    # A user absent from train gets its first held-out record swapped with the
    # latest train record of a user that keeps another train record, so split
    # sizes stay put. Without such a donor the record is simply promoted.
    train_count = np.bincount(pairs[parts[0], 0], minlength=len(users))
    train = parts[0]
    donor = len(train) - 1
    for held in (parts[1], parts[2]):
        for k in range(len(held)):
            u = pairs[held[k], 0]
            if train_count[u]:
                continue
            while donor >= 0 and train_count[pairs[train[donor], 0]] < 2:
                donor -= 1
            rec = held[k]
            if donor >= 0:
                logger.info("split repair: user %d swapped record %d with train record %d",
                            u, rec, train[donor])
                train_count[pairs[train[donor], 0]] -= 1
                held[k], train[donor] = train[donor], rec
                donor -= 1
            else:
                logger.info("split repair: user %d moved record %d into train", u, rec)
                train.append(rec)
                held[k] = None
            train_count[u] += 1
    for held in (parts[1], parts[2]):
        held[:] = [n for n in held if n is not None]

    def as_list(idx):
        return [(int(pairs[n, 0]), int(pairs[n, 1])) for n in idx]

    return IndexedDataset(
        num_users=len(users), num_items=len(items),
        train=as_list(parts[0]), validation=as_list(parts[1]), test=as_list(parts[2]),
        user_index_map=users, item_index_map=items,
    )


def density(num_users: int, num_items: int, num_interactions: int) -> float:
    return num_interactions / (num_users * num_items)


def save_dataset(dataset: IndexedDataset, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name in ("train", "validation", "test"):
        with open(out / f"{name}.tsv", "w", encoding="utf-8") as fh:
            for u, i in getattr(dataset, name):
                fh.write(f"{u}\t{i}\n")
    with open(out / "index_map.json", "w", encoding="utf-8") as fh:
        json.dump({"users": dataset.user_index_map, "items": dataset.item_index_map}, fh,
                  indent=1, ensure_ascii=False)


def load_dataset(in_dir) -> IndexedDataset:
    src = Path(in_dir)
    with open(src / "index_map.json", encoding="utf-8") as fh:
        maps = json.load(fh)

    def read(name):
        rows = []
        with open(src / f"{name}.tsv", encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    u, i = line.split("\t")
                    rows.append((int(u), int(i)))
        return rows

    return IndexedDataset(
        num_users=len(maps["users"]), num_items=len(maps["items"]),
        train=read("train"), validation=read("validation"), test=read("test"),
        user_index_map=maps["users"], item_index_map=maps["items"],
    )
