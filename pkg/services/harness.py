"""
Harness Service - Splits, cross-validation, early stopping and experiment grids

Seeds: every random stream is drawn from
    SeedSequence([master_seed, stream_key, fold])
where ``stream_key`` is 0 for the shared train-val/test split, the CRC-32 of
the cell id for a grid cell, and the CRC-32 of ``embedding:<choice>`` for the
random rows of an embedding matrix. A cell therefore reproduces on its own,
independently of where it sits in a grid.
"""
from __future__ import annotations

import logging
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from tqdm import tqdm

from services.balance import STRATEGY_LABELS, apply_balance
from services.config import ExperimentConfig
from services.dataset import SUBTASK_LABELS, TweetRecord, subtask_examples
from services.errors import DataError, NumericError, WorkbenchError
from services.metrics import EvaluationReport, report
from services.model import Model, ModelSpec, Variant, build_model, train_epoch
from services.optimizer import AdamState
from services.preprocess import PipelineResources, load_pipeline_resources, preprocess
from services.representation import (
    EMBEDDING_CHOICES,
    EmbeddingMatrix,
    Vocabulary,
    build_embedding_matrix,
    build_vocabulary,
    encode_corpus,
    load_embeddings,
)

logger = logging.getLogger(__name__)

SPLIT_STREAM = 0


def derive_seed(master: int, stream: int = 0, fold: int = 0) -> int:
    return int(np.random.SeedSequence([int(master), int(stream), int(fold)]).generate_state(1)[0])


def stream_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


# ── Splits ───────────────────────────────────────────────────

@dataclass(frozen=True)
class SplitPlan:
    train_val: np.ndarray
    test: np.ndarray
    seed: int


@dataclass(frozen=True)
class FoldPlan:
    k: int
    pairs: tuple[tuple[np.ndarray, np.ndarray], ...]

    def __len__(self) -> int:
        return len(self.pairs)

    def remap(self, positions: np.ndarray) -> "FoldPlan":
        """Translate fold indices (positions into a subset) to indices of the full dataset."""
        return FoldPlan(self.k, tuple((positions[tr], positions[va]) for tr, va in self.pairs))


def _class_members(labels: np.ndarray) -> list[tuple[int, np.ndarray]]:
    return [(int(c), np.flatnonzero(labels == c)) for c in np.unique(labels)]


def stratified_holdout(labels, ratio: float, seed: int) -> SplitPlan:
    """Per class, shuffle and send round(ratio * n_c) examples to train-val, the rest to test."""
    if not 0.0 < ratio < 1.0:
        raise DataError(f"ratio must lie in (0, 1), got {ratio}")
    labels = np.asarray(labels, dtype=np.int64)
    rng = np.random.default_rng(seed)
    train_val, test = [], []
    for cls, members in _class_members(labels):
        if len(members) < 2:
            raise DataError(f"class {cls} has {len(members)} example; a stratified split needs at least 2")
        shuffled = rng.permutation(members)
        n_train = int(np.clip(np.floor(ratio * len(members) + 0.5), 1, len(members) - 1))
        train_val.append(shuffled[:n_train])
        test.append(shuffled[n_train:])
    if not train_val:
        raise DataError("cannot split an empty label set")
    return SplitPlan(np.sort(np.concatenate(train_val)), np.sort(np.concatenate(test)), seed)


def stratified_kfold(labels, k: int, seed: int) -> FoldPlan:
    """Shuffle each class and deal its examples round-robin onto k folds.

    The dealing position carries over from one class to the next, so fold
    sizes also stay within one example of each other.
    """
    if k < 2:
        raise DataError(f"k must be >= 2, got {k}")
    labels = np.asarray(labels, dtype=np.int64)
    rng = np.random.default_rng(seed)
    assignment = np.empty(len(labels), dtype=np.int64)
    offset = 0
    for cls, members in _class_members(labels):
        if len(members) < k:
            raise DataError(f"class {cls} has {len(members)} examples, fewer than k={k} folds")
        shuffled = rng.permutation(members)
        assignment[shuffled] = (offset + np.arange(len(shuffled))) % k
        offset += len(shuffled)
    everything = np.arange(len(labels))
    pairs = tuple(
        (everything[assignment != fold], everything[assignment == fold]) for fold in range(k)
    )
    return FoldPlan(k, pairs)


# ── Results ──────────────────────────────────────────────────

@dataclass
class FoldResult:
    fold: int
    accuracy: float
    macro_f1: float
    best_epoch: int
    epochs_run: int
    history: list[float] = field(default_factory=list)
    test_accuracy: float | None = None
    test_macro_f1: float | None = None

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def _mean(values) -> float | None:
    values = [v for v in values if v is not None]
    return float(np.mean(values)) if values else None


@dataclass
class RunResult:
    mode: str
    folds: list[FoldResult]
    wall_time: float = 0.0
    best_model: Model | None = field(default=None, repr=False, compare=False)

    @property
    def mean_accuracy(self) -> float:
        return _mean(f.accuracy for f in self.folds)

    @property
    def mean_macro_f1(self) -> float:
        return _mean(f.macro_f1 for f in self.folds)

    @property
    def mean_test_accuracy(self) -> float | None:
        return _mean(f.test_accuracy for f in self.folds)

    @property
    def mean_test_macro_f1(self) -> float | None:
        return _mean(f.test_macro_f1 for f in self.folds)

    @property
    def score(self) -> tuple[float, float]:
        """(accuracy, macro F1) as reported: CV averages, or the test score of a holdout run."""
        if self.mode == "holdout" and self.mean_test_macro_f1 is not None:
            return self.mean_test_accuracy, self.mean_test_macro_f1
        return self.mean_accuracy, self.mean_macro_f1

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "folds": [f.to_dict() for f in self.folds],
            "mean_accuracy": self.mean_accuracy,
            "mean_macro_f1": self.mean_macro_f1,
            "mean_test_accuracy": self.mean_test_accuracy,
            "mean_test_macro_f1": self.mean_test_macro_f1,
            "wall_time": self.wall_time,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunResult":
        return cls(
            mode=data["mode"],
            folds=[FoldResult(**f) for f in data["folds"]],
            wall_time=data.get("wall_time", 0.0),
        )


# ── Early stopping ───────────────────────────────────────────

ModelBuilder = Callable[[ModelSpec, EmbeddingMatrix], Model]
Trainer = Callable[..., float]


def fit_with_early_stopping(
    spec: ModelSpec,
    embeddings: EmbeddingMatrix,
    X: np.ndarray,
    y: np.ndarray,
    folds: FoldPlan,
    balance: str = "none",
    patience: int = 10,
    epochs: int = 30,
    *,
    mode: str = "cv",
    learning_rate: float = 1e-3,
    batch_size: int = 64,
    seed: int = 0,
    k_neighbors: int = 5,
    X_test: np.ndarray | None = None,
    y_test: np.ndarray | None = None,
    early_stopping: bool = True,
    model_builder: ModelBuilder = build_model,
    trainer: Trainer = train_epoch,
) -> RunResult:
    """Train one model per fold, stopping on validation macro F1.

    After every epoch the validation macro F1 is measured; training stops
    once ``patience`` epochs pass without a strict improvement, and the
    parameters of the best epoch are restored. With ``early_stopping`` off,
    every fold trains exactly ``epochs`` epochs and the final-epoch model is
    scored. Balancing touches only the training partition of each fold.
    """
    if patience < 1 or epochs < 1:
        raise DataError(f"patience and epochs must be >= 1, got {patience} and {epochs}")
    X = np.asarray(X, dtype=np.int64)
    y = np.asarray(y, dtype=np.int64)
    num_classes = spec.num_classes
    vocab_size = len(embeddings)
    started = time.perf_counter()
    fold_results: list[FoldResult] = []
    best_model, best_model_f1 = None, -np.inf

    for fold, (train_idx, val_idx) in enumerate(folds.pairs):
        fold_seed = derive_seed(seed, 0, fold)
        X_train, y_train, weights = apply_balance(
            balance, X[train_idx], y[train_idx], num_classes, vocab_size,
            seed=fold_seed, k_neighbors=k_neighbors,
        )
        X_val, y_val = X[val_idx], y[val_idx]
        model = model_builder(spec.with_overrides(seed=fold_seed), embeddings)
        adam = AdamState(learning_rate=learning_rate)
        rng = np.random.default_rng(fold_seed)

        history: list[float] = []
        best_f1, best_acc, best_epoch, best_params = -np.inf, 0.0, 0, None
        for epoch in range(1, epochs + 1):
            try:
                loss = trainer(model, X_train, y_train, weights, adam, rng, batch_size)
            except NumericError as e:
                raise NumericError(f"fold {fold + 1}, epoch {epoch}: {e}") from e
            scores = report(y_val, model.predict(X_val), num_classes)
            history.append(scores.macro_f1)
            logger.debug("[TRAIN] fold %d epoch %d loss %.4f val macro F1 %.4f",
                         fold + 1, epoch, loss, scores.macro_f1)
            if not early_stopping:
                best_f1, best_acc, best_epoch = scores.macro_f1, scores.accuracy, epoch
            elif scores.macro_f1 > best_f1:
                best_f1, best_acc, best_epoch = scores.macro_f1, scores.accuracy, epoch
                best_params = model.get_parameters()
            elif epoch - best_epoch >= patience:
                break
        if early_stopping:
            model.set_parameters(best_params)

        result = FoldResult(fold + 1, best_acc, best_f1, best_epoch, len(history), history)
        if X_test is not None and y_test is not None and len(y_test):
            test_scores = report(y_test, model.predict(X_test), num_classes)
            result.test_accuracy, result.test_macro_f1 = test_scores.accuracy, test_scores.macro_f1
        fold_results.append(result)
        if best_f1 > best_model_f1:
            best_model, best_model_f1 = model, best_f1
        logger.info("[TRAIN] fold %d/%d: best epoch %d of %d, val acc %.4f, val macro F1 %.4f",
                    fold + 1, len(folds), best_epoch, len(history), best_acc, best_f1)

    return RunResult(mode, fold_results, time.perf_counter() - started, best_model)


# ── Data preparation ─────────────────────────────────────────

@dataclass
class PreparedData:
    ids: list[str]
    tokens: list[list[str]]
    X: np.ndarray
    y: np.ndarray
    vocab: Vocabulary
    split: SplitPlan
    folds: FoldPlan
    label_names: tuple[str, ...]


def prepare_data(config: ExperimentConfig, records: list[TweetRecord],
                 resources: PipelineResources | None = None) -> PreparedData:
    """Preprocess, split 80/20, build the vocabulary on train-val only, encode, plan folds."""
    kept, labels = subtask_examples(records, config.subtask)
    if not kept:
        raise DataError(f"no records carry a subtask {config.subtask} label")
    if resources is None:
        resources = load_pipeline_resources(None, max(config.pipeline.max_edit_distance, 0))
    tokens = [preprocess(r.text, config.pipeline, resources) for r in kept]
    y = np.asarray(labels, dtype=np.int64)

    split = stratified_holdout(y, 1.0 - config.test_ratio, derive_seed(config.seed, SPLIT_STREAM))
    vocab = build_vocabulary((tokens[i] for i in split.train_val), config.vocab_size, config.min_freq)
    X = encode_corpus(tokens, vocab, config.max_len)

    fold_seed = derive_seed(config.seed, SPLIT_STREAM, 1)
    if config.mode == "cv":
        folds = stratified_kfold(y[split.train_val], config.folds, fold_seed).remap(split.train_val)
    else:
        inner = stratified_holdout(y[split.train_val], 1.0 - config.validation_ratio, fold_seed)
        folds = FoldPlan(1, ((split.train_val[inner.train_val], split.train_val[inner.test]),))

    logger.info("[DATA] subtask %s: %d examples, %d train-val / %d test, vocabulary %d",
                config.subtask, len(y), len(split.train_val), len(split.test), len(vocab))
    return PreparedData(
        ids=[r.id for r in kept], tokens=tokens, X=X, y=y, vocab=vocab, split=split,
        folds=folds, label_names=SUBTASK_LABELS[config.subtask],
    )


def embedding_matrix_for(config: ExperimentConfig, choice: str, vocab: Vocabulary) -> EmbeddingMatrix:
    """Load the pretrained vectors for ``choice`` (``none`` is random init)."""
    source = config.embedding_sources[choice]
    table = {}
    if EMBEDDING_CHOICES[choice][0] is not None:
        if not source.path or not Path(source.path).is_file():
            raise DataError(f"embedding file for {choice} not found: {source.path}")
        table = load_embeddings(source.path, source.dim, keep=vocab.index_to_token)
    return build_embedding_matrix(vocab, table, source.dim, derive_seed(config.seed, stream_key(f"embedding:{choice}")))


def model_spec_for(config: ExperimentConfig, variant: str, embedding: str | None = None,
                   dropout: float | None | str = "config") -> ModelSpec:
    overrides = dict(config.model)
    if dropout != "config":
        overrides["spatial_dropout_rate"] = 0.0 if dropout is None else dropout
    return ModelSpec(
        variant=Variant.parse(variant),
        embedding_dim=config.embedding_dim(embedding),
        num_classes=len(SUBTASK_LABELS[config.subtask]),
        seed=config.seed,
        **overrides,
    )


# ── Single training run ──────────────────────────────────────

@dataclass
class TrainingOutcome:
    result: RunResult
    model: Model
    data: PreparedData
    test_report: EvaluationReport


def train_model(config: ExperimentConfig, records: list[TweetRecord],
                resources: PipelineResources | None = None) -> TrainingOutcome:
    """Train the first configured variant; the best fold's model is scored on the test split."""
    data = prepare_data(config, records, resources)
    embeddings = embedding_matrix_for(config, config.embedding, data.vocab)
    spec = model_spec_for(config, config.variants[0])
    result = fit_with_early_stopping(
        spec, embeddings, data.X, data.y, data.folds, config.balance, config.patience, config.epochs,
        mode=config.mode, learning_rate=config.learning_rate, batch_size=config.batch_size,
        seed=derive_seed(config.seed, stream_key(f"train:{spec.variant.value}")),
        k_neighbors=config.k_neighbors,
        X_test=data.X[data.split.test], y_test=data.y[data.split.test],
    )
    test_report = report(data.y[data.split.test], result.best_model.predict(data.X[data.split.test]), spec.num_classes)
    return TrainingOutcome(result, result.best_model, data, test_report)


# ── Grids ────────────────────────────────────────────────────

@dataclass(frozen=True)
class GridCell:
    cell_id: str
    grid: str
    variant: str
    balance: str
    epochs: int
    dropout: float | None | str
    embedding: str

    @property
    def parameter(self) -> str:
        """The swept value as shown in a report row."""
        if self.grid == "balance":
            return STRATEGY_LABELS[self.balance]
        if self.grid == "epochs":
            return str(self.epochs)
        if self.grid == "dropout":
            return "none" if self.dropout is None else f"{self.dropout:g}"
        if self.grid == "embeddings":
            return self.embedding
        return ""


def expand_grid(config: ExperimentConfig) -> list[GridCell]:
    """Cells in grid order: variant-major, then the swept value."""
    cells = []
    prefix = f"{config.subtask}-{config.grid}"
    for variant in config.variants:
        base = dict(grid=config.grid, variant=variant, balance=config.balance,
                    epochs=config.epochs, dropout="config", embedding=config.embedding)
        if config.grid == "variants":
            cells.append(GridCell(cell_id=f"{prefix}-{variant}", **base))
            continue
        for value in config.sweeps[config.grid]:
            if config.grid == "balance":
                cell = {**base, "balance": value}
            elif config.grid == "epochs":
                cell = {**base, "epochs": value}
            elif config.grid == "dropout":
                cell = {**base, "dropout": value}
            else:
                cell = {**base, "embedding": value}
            tag = "none" if value is None else (f"{value:g}" if isinstance(value, float) else str(value))
            cells.append(GridCell(cell_id=f"{prefix}-{variant}-{tag}", **cell))
    return cells


def cell_config(config: ExperimentConfig, cell: GridCell) -> ExperimentConfig:
    """Narrow a grid config to one cell; running it reproduces that cell alone."""
    snapshot = config.snapshot()
    snapshot["variants"] = [cell.variant]
    if config.grid != "variants":
        sweep_value = {
            "balance": cell.balance, "epochs": cell.epochs,
            "dropout": cell.dropout, "embeddings": cell.embedding,
        }[config.grid]
        snapshot["sweeps"] = {**snapshot["sweeps"], config.grid: [sweep_value]}
    return ExperimentConfig.from_snapshot(snapshot)


@dataclass
class GridRow:
    cell: GridCell
    subtask: str
    status: str
    result: RunResult | None = None
    error: str | None = None
    config: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def to_dict(self) -> dict:
        return {
            "cell_id": self.cell.cell_id,
            "grid": self.cell.grid,
            "subtask": self.subtask,
            "variant": self.cell.variant,
            "balance": self.cell.balance,
            "epochs": self.cell.epochs,
            "dropout": self.cell.dropout,
            "embedding": self.cell.embedding,
            "status": self.status,
            "error": self.error,
            "result": self.result.to_dict() if self.result else None,
            "config": self.config,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "GridRow":
        cell = GridCell(
            cell_id=data["cell_id"], grid=data["grid"], variant=data["variant"],
            balance=data["balance"], epochs=data["epochs"], dropout=data["dropout"],
            embedding=data["embedding"],
        )
        result = RunResult.from_dict(data["result"]) if data.get("result") else None
        return cls(cell, data["subtask"], data["status"], result, data.get("error"), data.get("config", {}))


def _run_cell(config: ExperimentConfig, cell: GridCell, data: PreparedData,
              matrices: dict[str, EmbeddingMatrix | DataError]) -> GridRow:
    snapshot = cell_config(config, cell).snapshot()
    matrix = matrices[cell.embedding]
    if isinstance(matrix, DataError):
        logger.warning("[GRID] %s failed: %s", cell.cell_id, matrix)
        return GridRow(cell, config.subtask, "failed", error=str(matrix), config=snapshot)

    spec = model_spec_for(config, cell.variant, cell.embedding, cell.dropout)
    try:
        result = fit_with_early_stopping(
            spec, matrix, data.X, data.y, data.folds, cell.balance, config.patience, cell.epochs,
            mode=config.mode, learning_rate=config.learning_rate, batch_size=config.batch_size,
            seed=derive_seed(config.seed, stream_key(cell.cell_id)), k_neighbors=config.k_neighbors,
            X_test=data.X[data.split.test], y_test=data.y[data.split.test],
            early_stopping=config.grid != "epochs",
        )
    except WorkbenchError as e:
        e.args = (f"cell {cell.cell_id}: {e}",)
        raise
    acc, f1 = result.score
    logger.info("[GRID] %s: acc %.4f macro F1 %.4f (%.1fs)", cell.cell_id, acc, f1, result.wall_time)
    result.best_model = None
    return GridRow(cell, config.subtask, "ok", result, config=snapshot)


def run_grid(config: ExperimentConfig, records: list[TweetRecord],
             resources: PipelineResources | None = None, workers: int = 1,
             progress: bool = False, on_row: Callable[[GridRow], None] | None = None) -> list[GridRow]:
    """Run every cell of the configured grid; rows come back (and reach ``on_row``) in grid order."""
    cells = expand_grid(config)
    data = prepare_data(config, records, resources)

    matrices: dict[str, EmbeddingMatrix | DataError] = {}
    for choice in dict.fromkeys(cell.embedding for cell in cells):
        try:
            matrices[choice] = embedding_matrix_for(config, choice, data.vocab)
        except DataError as e:
            matrices[choice] = e

    logger.info("[GRID] %s grid for subtask %s: %d cells, %s, %d worker(s)",
                config.grid, config.subtask, len(cells), config.mode, workers)
    rows: list[GridRow] = []
    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        pending = pool.map(lambda cell: _run_cell(config, cell, data, matrices), cells)
        for row in tqdm(pending, total=len(cells), desc=f"{config.grid} grid", disable=not progress):
            rows.append(row)
            if on_row is not None:
                on_row(row)
    return rows


def ordering_summary(rows: list[GridRow]) -> dict[str, float | None]:
    """Mean macro F1 of recurrent-first versus convolution-first hybrids."""
    groups: dict[str, list[float]] = {"rnn-first": [], "cnn-first": []}
    for row in rows:
        if not row.ok:
            continue
        ordering = Variant.parse(row.cell.variant).ordering
        if ordering in groups:
            groups[ordering].append(row.result.score[1])
    summary = {name: _mean(values) for name, values in groups.items()}
    if summary["rnn-first"] is not None and summary["cnn-first"] is not None:
        summary["difference"] = summary["rnn-first"] - summary["cnn-first"]
    else:
        summary["difference"] = None
    return summary
