"""Desk-scale experiment shared by the acceptance suite and scripts/."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field, replace

from .data import IndexedDataset, RawInteraction, split
from .metrics import mass_above
from .synth import synth_interactions
from .trainer import DivergenceError, TrainConfig, run

log = logging.getLogger(__name__)

# Seeds 1-3 were used to pick DESK_CONFIG; these three were fixed afterwards.
DESK_SEEDS = (0, 4, 5)


@dataclass(frozen=True)
class DeskData:
    users: int = 500
    items: int = 300
    interactions: int = 15000
    zipf: float = 1.2


DESK_CONFIG = TrainConfig(dim=64, layers=3, eta1=1e-3, eta2=1e-2, gamma=1e-4, lam=1.0,
                          beta=1.0, epsilon=1e-2, max_epochs=200, patience=20)


def desk_dataset(seed: int, spec: DeskData = DeskData()) -> IndexedDataset:
    pairs = synth_interactions(spec.users, spec.items, spec.interactions, spec.zipf, seed)
    return split([RawInteraction(f"u{u}", f"i{i}") for u, i in pairs], seed=seed)


@dataclass
class SeedOutcome:
    seed: int
    reports: dict = field(default_factory=dict)  # variant -> EvalReport, or None if diverged
    iip_before: float = 0.0
    iip_after: float = 0.0
    updates: int = 0
    seconds: float = 0.0

    def recall(self, variant: str, stratum: str) -> float | None:
        rep = self.reports.get(variant)
        return None if rep is None else rep.recall[stratum]


def run_variant(config: TrainConfig, dataset: IndexedDataset, variant: str):
    cfg = {"vanilla": replace(config, use_caged=False), "caged": config}.get(variant)
    if cfg is None:
        cfg = config.with_ablation(variant)
    return run(cfg, dataset)


def desk_seed(seed: int, variants=("vanilla", "caged"), config: TrainConfig = DESK_CONFIG,
              spec: DeskData = DeskData()) -> SeedOutcome:
    t0 = time.perf_counter()
    ds = desk_dataset(seed, spec)
    out = SeedOutcome(seed)
    for variant in variants:
        try:
            res = run_variant(replace(config, seed=seed), ds, variant)
        except DivergenceError as exc:
            log.warning("seed %d %s diverged at epoch %d", seed, variant, exc.epoch)
            out.reports[variant] = None
            continue
        out.reports[variant] = res.test_report
        if variant == "caged":
            out.iip_before = mass_above(res.iip_stages[0][1])
            out.iip_after = mass_above(res.iip_stages[-1][1])
            out.updates = len(res.state.update_log)
    out.seconds = time.perf_counter() - t0
    return out


def format_outcome(o: SeedOutcome) -> str:
    parts = [f"seed {o.seed}"]
    for variant, rep in o.reports.items():
        if rep is None:
            parts.append(f"{variant}: diverged")
        else:
            parts.append(f"{variant}: all {rep.recall['all']:.4f} niche {rep.recall['niche']:.4f}"
                         f" popular {rep.recall['popular']:.4f}")
    parts.append(f"iip>0.5 {o.iip_before:.4f}->{o.iip_after:.4f} ({o.updates} updates)")
    parts.append(f"{o.seconds:.0f}s")
    return " | ".join(parts)
