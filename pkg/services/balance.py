"""
Balance Service - Class weights and SMOTE oversampling

SMOTE works in the padded token-index space: synthetic rows are real-valued
interpolations between a minority row and one of its nearest same-class
neighbours, then rounded back onto valid token indices.
"""
from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy.spatial.distance import cdist

from services.errors import ConfigError, DataError

logger = logging.getLogger(__name__)

STRATEGIES = ("none", "smote", "class_weights")
STRATEGY_LABELS = {"none": "Imbalanced Data", "smote": "SMOTE", "class_weights": "Class Weights"}
MATCH_MAJORITY = "match majority"


@dataclass(frozen=True)
class ClassWeightTable:
    weights: dict[int, float]
    exact: dict[int, Fraction]

    def as_array(self, num_classes: int) -> np.ndarray:
        return np.array([self.weights[c] for c in range(num_classes)], dtype=np.float64)


@dataclass(frozen=True)
class SmoteConfig:
    k_neighbors: int = 5
    target_count: int | str = MATCH_MAJORITY
    seed: int = 0

    def __post_init__(self):
        if self.k_neighbors < 1:
            raise ConfigError(f"k_neighbors must be >= 1, got {self.k_neighbors}")
        if self.target_count != MATCH_MAJORITY and (
            not isinstance(self.target_count, int) or self.target_count < 1
        ):
            raise ConfigError(f"target_count must be a positive integer or {MATCH_MAJORITY!r}")


# ── Class weights ────────────────────────────────────────────

def class_weights(labels, num_classes: int) -> ClassWeightTable:
    """weight_c = N / (num_classes * N_c)."""
    counts = Counter(int(y) for y in labels)
    if any(c < 0 or c >= num_classes for c in counts):
        raise DataError(f"labels must lie in [0, {num_classes})")
    total = sum(counts.values())
    exact = {}
    for c in range(num_classes):
        if counts.get(c, 0) == 0:
            raise DataError(f"class {c} has no examples; its weight is undefined")
        exact[c] = Fraction(total, num_classes * counts[c])
    return ClassWeightTable(weights={c: float(w) for c, w in exact.items()}, exact=exact)


def uniform_weights(num_classes: int) -> ClassWeightTable:
    return ClassWeightTable(
        weights={c: 1.0 for c in range(num_classes)},
        exact={c: Fraction(1) for c in range(num_classes)},
    )


# ── SMOTE ────────────────────────────────────────────────────

def nearest_minority_neighbors(X: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k nearest other rows, ties broken by lower index."""
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if n < 2:
        raise DataError(f"need at least 2 rows to find neighbours, got {n}")
    if k < 1 or k >= n:
        raise DataError(f"k must lie in [1, {n - 1}], got {k}")
    dist = cdist(X, X, metric="sqeuclidean")
    np.fill_diagonal(dist, np.inf)
    return np.argsort(dist, axis=1, kind="stable")[:, :k]


def smote(X: np.ndarray, y, cfg: SmoteConfig, rng=None):
    """Oversample every class below the target count with synthetic rows.

    Returns (X', y'): original rows first and untouched, then synthetic rows
    grouped by ascending class.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if rng is None:
        rng = np.random.default_rng(cfg.seed)

    classes, counts = np.unique(y, return_counts=True)
    if len(classes) == 0:
        return X.copy(), y.copy()
    target = int(counts.max()) if cfg.target_count == MATCH_MAJORITY else int(cfg.target_count)
    if target < counts.max():
        raise ConfigError(f"target_count {target} is below the majority count {counts.max()}")

    new_rows, new_labels = [], []
    for cls, count in zip(classes, counts):
        need = target - int(count)
        if need == 0:
            continue
        if count < 2:
            raise DataError(f"class {cls} has a single example; SMOTE needs a neighbour")
        k = cfg.k_neighbors
        if k > count - 1:
            logger.warning("[SMOTE] class %d has %d rows; k reduced from %d to %d", cls, count, k, count - 1)
            k = int(count) - 1

        members = X[y == cls]
        neighbors = nearest_minority_neighbors(members, k)
        base = rng.integers(0, count, size=need)
        choice = rng.integers(0, k, size=need)
        gap = rng.random(need)
        partner = neighbors[base, choice]
        synthetic = members[base] + gap[:, None] * (members[partner] - members[base])
        new_rows.append(synthetic)
        new_labels.append(np.full(need, cls, dtype=np.int64))
        logger.debug("[SMOTE] class %d: %d -> %d rows", cls, count, target)

    if not new_rows:
        return X.copy(), y.copy()
    return np.vstack([X, *new_rows]), np.concatenate([y, *new_labels])


def round_to_token_space(X: np.ndarray, vocab_size: int) -> np.ndarray:
    return np.clip(np.rint(X), 0, vocab_size - 1).astype(np.int64)


# ── Strategy dispatch ────────────────────────────────────────

def apply_balance(strategy: str, X: np.ndarray, y, num_classes: int, vocab_size: int, seed: int = 0, k_neighbors: int = 5):
    """Balance one training partition; returns (X, y, ClassWeightTable)."""
    if strategy not in STRATEGIES:
        raise ConfigError(f"unknown balance strategy {strategy!r}; choose from {', '.join(STRATEGIES)}")
    y = np.asarray(y, dtype=np.int64)
    if strategy == "class_weights":
        return X, y, class_weights(y, num_classes)
    if strategy == "smote":
        X_new, y_new = smote(X, y, SmoteConfig(k_neighbors=k_neighbors, seed=seed))
        return round_to_token_space(X_new, vocab_size), y_new, uniform_weights(num_classes)
    return X, y, uniform_weights(num_classes)
