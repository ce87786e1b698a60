"""Two-stage training with validation-gated momentum updates of the aggregation matrix."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import backbone, estimator
from .data import IndexedDataset
from .graph import AggregationMatrix, InteractionGraph, build_graph, normalized_adjacency
from .metrics import EvalReport, evaluate, weight_iip_histogram, write_histogram_csv
from .optim import AdamState, ParamStore, adam_step

logger = logging.getLogger(__name__)

ABLATIONS = {
    "wo-ts": {"two_stage": False},
    "wo-uc": {"update_condition": False},
    "wo-mu": {"momentum": False},
}

# random stream ids mixed into per-epoch seeds
_INIT, _BPR, _CAGED, _PRETRAIN = 0, 1, 2, 3


class DivergenceError(FloatingPointError):
    def __init__(self, epoch: int, reason: str, history=None):
        super().__init__(f"training diverged at epoch {epoch}: {reason}")
        self.epoch = epoch
        self.reason = reason
        self.history = history or []


@dataclass
class TrainConfig:
    dim: int = 256
    layers: int = 3
    eta1: float = 1e-3
    eta2: float = 1e-3
    gamma: float = 1e-4
    lam: float = 1.0
    beta: float = 0.0
    epsilon: float = 1e-2
    batch_size: int = 2048
    caged_batch_size: int = 2048
    caged_epochs: int = 1
    pretrain_caged_epochs: int = 10
    max_epochs: int = 500
    patience: int = 20
    seed: int = 0
    k: int = 20
    iip_bins: int = 10
    init_std: float = 0.1
    caged_init_scale: float = 1.0
    use_caged: bool = True
    two_stage: bool = True
    update_condition: bool = True
    momentum: bool = True

    def __post_init__(self):
        for name in ("eta1", "eta2"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if not 0 < self.epsilon <= 1:
            raise ValueError("epsilon must lie in (0, 1]")
        if self.lam < 0 or self.beta < 0 or self.gamma < 0:
            raise ValueError("lam, beta and gamma must be >= 0")
        for name in ("dim", "layers", "batch_size", "caged_batch_size", "k", "iip_bins"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.max_epochs < 0 or self.patience < 0 or self.caged_epochs < 0:
            raise ValueError("max_epochs, patience and caged_epochs must be >= 0")

    @classmethod
    def field_names(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def with_ablation(self, name: str | None) -> "TrainConfig":
        if not name:
            return self
        if name not in ABLATIONS:
            raise ValueError(f"unknown ablation {name!r}; choose from {sorted(ABLATIONS)}")
        return TrainConfig(**{**asdict(self), **ABLATIONS[name]})


@dataclass
class TrainState:
    graph: InteractionGraph
    weights: AggregationMatrix
    params: ParamStore  # "embedding" plus the CAGED encoder/decoder arrays
    backbone_adam: AdamState
    caged_adam: AdamState
    best_val_recall: float = -np.inf
    epoch: int = 0
    update_log: list[int] = field(default_factory=list)

    @property
    def embedding(self) -> np.ndarray:
        return self.params["embedding"]

    def caged_params(self) -> ParamStore:
        return ParamStore({n: v for n, v in self.params.items() if n != "embedding"})

    def pooled(self, layers: int) -> np.ndarray:
        return backbone.forward(self.weights, self.embedding, layers)


@dataclass
class RunResult:
    state: TrainState
    history: list[dict]
    val_reports: list[EvalReport]
    test_report: EvalReport | None
    iip_stages: list[tuple[int, list[int]]]
    best_embedding: np.ndarray
    best_weights: AggregationMatrix


def _rng(seed: int, epoch: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed, epoch, stream])


def init_state(config: TrainConfig, graph: InteractionGraph) -> TrainState:
    rng = _rng(config.seed, 0, _INIT)
    params = ParamStore({"embedding": backbone.init_embeddings(graph.num_nodes, config.dim, rng,
                                                               config.init_std)})
    for name, arr in estimator.init_params(config.dim, rng, config.caged_init_scale).items():
        params.register(name, arr)
    caged_names = [n for n in params if n != "embedding"]
    return TrainState(
        graph=graph,
        weights=normalized_adjacency(graph),
        params=params,
        backbone_adam=AdamState(m={"embedding": np.zeros_like(params["embedding"])},
                                v={"embedding": np.zeros_like(params["embedding"])}),
        caged_adam=AdamState(m={n: np.zeros_like(params[n]) for n in caged_names},
                             v={n: np.zeros_like(params[n]) for n in caged_names}),
    )


def momentum_update(current: AggregationMatrix, w_caged: AggregationMatrix,
                    epsilon: float) -> AggregationMatrix:
    """Entrywise (1 - epsilon) * current + epsilon * w_caged on a shared sparsity pattern."""
    if not current.same_pattern(w_caged):
        raise ValueError("aggregation matrices have different sparsity patterns")
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    if epsilon == 0.0:
        return current.with_data(current.data.copy())
    if epsilon == 1.0:
        return current.with_data(w_caged.data.copy())
    return current.with_data((1.0 - epsilon) * current.data + epsilon * w_caged.data)


def _user_item_arrays(graph: InteractionGraph) -> list[np.ndarray]:
    m = graph.num_users
    return [graph.neighbors(u) - m for u in range(m)]


def train_epoch_backbone(state: TrainState, config: TrainConfig, epoch: int | None = None,
                         user_sets: list[set[int]] | None = None) -> float:
    """One BPR pass over every train positive with freshly sampled negatives; mean batch loss."""
    epoch = state.epoch if epoch is None else epoch
    rng = _rng(config.seed, epoch, _BPR)
    g = state.graph
    triplets = backbone.sample_triplets(_user_item_arrays(g), g.num_items, rng, user_sets)
    triplets = triplets[rng.permutation(len(triplets))]
    losses = []
    with np.errstate(over="ignore", invalid="ignore"):
        for lo in range(0, len(triplets), config.batch_size):
            batch = triplets[lo:lo + config.batch_size]
            loss, grad = backbone.bpr_backward(batch, state.embedding, state.weights,
                                               config.layers, config.gamma)
            if not np.isfinite(loss) or not np.all(np.isfinite(grad)):
                raise DivergenceError(epoch, f"non-finite BPR loss ({loss})")
            adam_step(state.params, {"embedding": grad}, state.backbone_adam, config.eta1)
            losses.append(loss)
    return float(np.mean(losses)) if losses else 0.0


def update_condition(state: TrainState, current_val_recall: float, enabled: bool = True) -> bool:
    """Strict improvement of validation recall over the best seen; always true when disabled."""
    improved = current_val_recall > state.best_val_recall
    if improved:
        state.best_val_recall = current_val_recall
    return True if not enabled else improved


def train_epoch_caged(state: TrainState, config: TrainConfig, pooled: np.ndarray,
                      epoch: int | None = None, stream: int = _CAGED) -> float:
    """One pass of ELBO minimization over all directed edges; ``pooled`` stays fixed."""
    epoch = state.epoch if epoch is None else epoch
    rng = _rng(config.seed, epoch, stream)
    g = state.graph
    centers, nbrs = g.edge_rows, g.indices
    order = rng.permutation(len(nbrs))
    names = [n for n in state.params if n != "embedding"]
    view = ParamStore({n: state.params[n] for n in names})
    total, count = 0.0, 0
    with np.errstate(over="ignore", invalid="ignore"):
        for lo in range(0, len(order), config.caged_batch_size):
            idx = order[lo:lo + config.caged_batch_size]
            tau = rng.standard_normal((len(idx), config.dim))
            loss, grads = estimator.caged_backward(pooled[nbrs[idx]], pooled[centers[idx]], view,
                                                   tau, config.lam, config.beta)
            if not np.isfinite(loss):
                raise DivergenceError(epoch, f"non-finite ELBO ({loss})")
            adam_step(view, grads, state.caged_adam, config.eta2)
            total += loss * len(idx)
            count += len(idx)
    for n in names:
        state.params[n] = view[n]
    return total / count if count else 0.0


def validation_recall(state: TrainState, config: TrainConfig, dataset: IndexedDataset,
                      train_sets) -> EvalReport:
    pooled = state.pooled(config.layers)
    if not np.all(np.isfinite(pooled)):
        raise DivergenceError(state.epoch, "non-finite embeddings after propagation")
    return evaluate(pooled, state.graph, dataset.user_items("validation"), config.k, train_sets,
                    config.iip_bins, state.weights)


def _pretrain_for_ablation(config: TrainConfig, dataset: IndexedDataset, graph) -> ParamStore:
    """Converge a vanilla backbone, then fit CAGED once on its frozen pooled embeddings."""
    vanilla = TrainConfig(**{**asdict(config), "use_caged": False, "two_stage": True})
    pre = run(vanilla, dataset)
    state = init_state(config, graph)
    state.params["embedding"] = pre.best_embedding
    pooled = backbone.forward(state.weights, pre.best_embedding, config.layers)
    for e in range(config.pretrain_caged_epochs):
        elbo = train_epoch_caged(state, config, pooled, epoch=e, stream=_PRETRAIN)
        logger.info("pretrain CAGED epoch %d elbo %.6f", e, elbo)
    return state.caged_params()


def run(config: TrainConfig, dataset: IndexedDataset, out_dir=None) -> RunResult:
    """Alternate backbone and CAGED stages epoch by epoch, with early stopping.

    With ``out_dir`` set, writes ``progress.jsonl``, the initial and every updated
    aggregation matrix under ``checkpoints/``, and weight-IIP histograms per stage.
    """
    graph = build_graph(dataset)
    state = init_state(config, graph)
    train_sets = graph.user_item_sets()
    out = Path(out_dir) if out_dir is not None else None
    log_fh = None
    if out is not None:
        (out / "checkpoints").mkdir(parents=True, exist_ok=True)
        log_fh = open(out / "progress.jsonl", "w", encoding="utf-8")
        _write_checkpoint(out / "checkpoints" / "epoch_0000", state, config)

    frozen_caged = None
    if config.use_caged and not config.two_stage:
        frozen_caged = _pretrain_for_ablation(config, dataset, graph)
        for n, arr in frozen_caged.items():
            state.params[n] = arr

    history: list[dict] = []
    val_reports: list[EvalReport] = []
    iip_stages = [(0, weight_iip_histogram(graph, state.weights, config.iip_bins))]
    best_embedding = state.embedding.copy()
    best_weights = state.weights
    best_for_stop = -np.inf
    stale = 0

    try:
        for t in range(1, config.max_epochs + 1):
            state.epoch = t
            train_loss = train_epoch_backbone(state, config, t, train_sets)
            report = validation_recall(state, config, dataset, train_sets)
            val = report.recall["all"]
            val_reports.append(report)
            if val > best_for_stop:
                best_for_stop, stale = val, 0
                best_embedding, best_weights = state.embedding.copy(), state.weights
            else:
                stale += 1

            updated = False
            elbo = None
            if config.use_caged:
                go = update_condition(state, val, config.update_condition)
                if go:
                    pooled = state.pooled(config.layers)
                    if config.two_stage:
                        for _ in range(config.caged_epochs):
                            elbo = train_epoch_caged(state, config, pooled, t)
                    w = estimator.generate_weight_matrix(graph, pooled, state.caged_params(),
                                                         config.lam, config.beta)
                    eps = config.epsilon if config.momentum else 1.0
                    state.weights = momentum_update(state.weights, w, eps)
                    state.update_log.append(t)
                    updated = True
                    iip_stages.append((t, weight_iip_histogram(graph, state.weights,
                                                               config.iip_bins)))
                    if out is not None:
                        _write_checkpoint(out / "checkpoints" / f"epoch_{t:04d}", state, config)

            record = {"epoch": t, "train_loss": train_loss, "val_recall": val, "updated": updated,
                      "elbo": elbo}
            history.append(record)
            if log_fh is not None:
                log_fh.write(json.dumps(record) + "\n")
                log_fh.flush()
            logger.info("epoch %d loss %.6f val R@%d %.6f updated %s", t, train_loss, config.k,
                        val, updated)
            if stale > config.patience:
                break
    except DivergenceError as exc:
        exc.history = history
        raise
    finally:
        if log_fh is not None:
            log_fh.close()

    test_report = None
    if config.max_epochs > 0:
        pooled = backbone.forward(best_weights, best_embedding, config.layers)
        test_report = evaluate(pooled, graph, dataset.user_items("test"), config.k, train_sets,
                               config.iip_bins, best_weights)
    return RunResult(state, history, val_reports, test_report, iip_stages, best_embedding,
                     best_weights)


def _write_checkpoint(path: Path, state: TrainState, config: TrainConfig) -> None:
    path.mkdir(parents=True, exist_ok=True)
    state.weights.save(path / "aggregation.bin")
    state.params.save(path / "params.bin")
    write_histogram_csv(path / "iip_histogram.csv",
                        weight_iip_histogram(state.graph, state.weights, config.iip_bins))


def save_final(out_dir, result: RunResult, config: TrainConfig) -> Path:
    """Best-validation snapshot: aggregation matrix, parameters and resolved config."""
    path = Path(out_dir) / "final"
    path.mkdir(parents=True, exist_ok=True)
    result.best_weights.save(path / "aggregation.bin")
    params = result.state.params.copy()
    params["embedding"] = result.best_embedding
    params.save(path / "params.bin")
    write_config(path / "config.txt", config)
    return path


def write_config(path, config: TrainConfig) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for k, v in asdict(config).items():
            fh.write(f"{k}={v}\n")
