"""
Model Service - The 13 CNN/RNN layer-ordering variants

Data flow for every variant:
  embedding -> [conv+pool if CNN first] -> [recurrent block] -> [conv+pool if CNN after]
            -> spatial dropout -> dense (ReLU, reads the last timestep) -> softmax output
The standalone CNN takes a global max over time before the dropout.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, fields, replace
from enum import Enum

import numpy as np

from services.balance import ClassWeightTable
from services.errors import ConfigError, NumericError, ShapeError
from services.layers import (
    Conv1DLayer,
    DenseLayer,
    EmbeddingLayer,
    GlobalMaxPoolLayer,
    MaxPoolLayer,
    OutputLayer,
    RecurrentLayer,
    SpatialDropoutLayer,
)
from services.optimizer import AdamState, adam_update
from services.representation import PAD_INDEX, EmbeddingMatrix, EncodedBatch

logger = logging.getLogger(__name__)

PROB_FLOOR = 1e-12
DEFAULT_BATCH_SIZE = 64


class Variant(str, Enum):
    CNN = "CNN"
    LSTM = "LSTM"
    BILSTM = "BiLSTM"
    GRU = "GRU"
    BIGRU = "BiGRU"
    CNN_LSTM = "CNN-LSTM"
    CNN_BILSTM = "CNN-BiLSTM"
    CNN_GRU = "CNN-GRU"
    CNN_BIGRU = "CNN-BiGRU"
    LSTM_CNN = "LSTM-CNN"
    BILSTM_CNN = "BiLSTM-CNN"
    GRU_CNN = "GRU-CNN"
    BIGRU_CNN = "BiGRU-CNN"

    @classmethod
    def parse(cls, name) -> "Variant":
        if isinstance(name, Variant):
            return name
        try:
            return cls(name)
        except ValueError:
            raise ConfigError(f"unknown variant {name!r}; choose from {', '.join(v.value for v in cls)}")

    @property
    def blocks(self) -> list[str]:
        return self.value.split("-")

    @property
    def recurrent(self) -> str | None:
        for block in self.blocks:
            if block != "CNN":
                return block
        return None

    @property
    def rnn_kind(self) -> str | None:
        return None if self.recurrent is None else self.recurrent.removeprefix("Bi")

    @property
    def bidirectional(self) -> bool:
        return self.recurrent is not None and self.recurrent.startswith("Bi")

    @property
    def cnn_first(self) -> bool:
        return self.blocks[0] == "CNN"

    @property
    def cnn_after(self) -> bool:
        return len(self.blocks) == 2 and self.blocks[1] == "CNN"

    @property
    def ordering(self) -> str:
        if self.recurrent is None:
            return "cnn"
        if self.cnn_first:
            return "cnn-first"
        if self.cnn_after:
            return "rnn-first"
        return "rnn"


ALL_VARIANTS = tuple(Variant)


@dataclass(frozen=True)
class ModelSpec:
    variant: Variant = Variant.BILSTM_CNN
    embedding_dim: int = 100
    rnn_units: int = 100
    conv_filters: int = 64
    kernel_size: int = 3
    pool_size: int = 2
    dense_units: int = 64
    num_classes: int = 2
    spatial_dropout_rate: float = 0.20
    internal_rnn_dropout_rate: float = 0.35
    embedding_trainable: bool = True
    dense_dropout: bool = False
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant.parse(self.variant))
        for name in ("embedding_dim", "rnn_units", "conv_filters", "kernel_size", "pool_size", "dense_units"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        for name in ("spatial_dropout_rate", "internal_rnn_dropout_rate"):
            rate = getattr(self, name)
            if not 0.0 <= rate < 1.0:
                raise ConfigError(f"{name} must lie in [0, 1), got {rate}")

    def to_dict(self) -> dict:
        data = asdict(self)
        data["variant"] = self.variant.value
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "ModelSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown model fields: {', '.join(sorted(unknown))}")
        return cls(**data)

    def with_overrides(self, **overrides) -> "ModelSpec":
        return replace(self, **overrides)


# ── Model ────────────────────────────────────────────────────

class Model:
    def __init__(self, spec: ModelSpec, layers: list, params: dict[str, np.ndarray], trainable: list[str]):
        self.spec = spec
        self.layers = layers
        self.params = params
        self.trainable = trainable

    @property
    def layer_names(self) -> list[str]:
        return [layer.label for layer in self.layers]

    def parameter_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def get_parameters(self) -> dict[str, np.ndarray]:
        return {name: value.copy() for name, value in self.params.items()}

    def set_parameters(self, values: dict[str, np.ndarray]):
        if set(values) != set(self.params):
            raise ShapeError("parameter names do not match the model")
        for name, value in values.items():
            if value.shape != self.params[name].shape:
                raise ShapeError(f"{name}: expected shape {self.params[name].shape}, got {value.shape}")
            self.params[name][...] = value

    def forward(self, x: np.ndarray, training: bool = False, rng: np.random.Generator | None = None):
        """Probabilities plus the per-layer caches needed by ``backward``."""
        out = np.asarray(x, dtype=np.int64)
        caches = []
        for layer in self.layers:
            out, cache = layer.forward(out, self.params, training, rng)
            caches.append(cache)
        return out, caches

    def backward(self, dlogits: np.ndarray, caches) -> dict[str, np.ndarray]:
        grads = {name: np.zeros_like(self.params[name]) for name in self.trainable}
        grad = dlogits
        for layer, cache in zip(reversed(self.layers), reversed(caches)):
            grad = layer.backward(grad, cache, self.params, grads)
        return grads

    def loss_and_gradients(self, x, labels, weights=None, training: bool = True, rng=None):
        probs, caches = self.forward(x, training=training, rng=rng)
        labels = np.asarray(labels, dtype=np.int64)
        class_w = _weight_vector(weights, self.spec.num_classes)
        loss = weighted_cross_entropy(probs, labels, class_w)
        if not np.isfinite(loss):
            raise NumericError(f"non-finite loss {loss}")
        # softmax + weighted cross-entropy gradient w.r.t. the logits
        onehot = np.eye(self.spec.num_classes)[labels]
        dlogits = (class_w[labels] / len(labels))[:, None] * (probs - onehot)
        return loss, self.backward(dlogits, caches)

    def predict_proba(self, x, batch_size: int = 256) -> np.ndarray:
        x = np.asarray(x, dtype=np.int64)
        if len(x) == 0:
            return np.zeros((0, self.spec.num_classes))
        chunks = [self.forward(x[i:i + batch_size], training=False)[0] for i in range(0, len(x), batch_size)]
        return np.concatenate(chunks)

    def predict(self, x, batch_size: int = 256) -> np.ndarray:
        return self.predict_proba(x, batch_size).argmax(axis=1)


def build_model(spec: ModelSpec, embeddings: EmbeddingMatrix) -> Model:
    if embeddings.dim != spec.embedding_dim:
        raise ConfigError(
            f"embedding matrix has dimension {embeddings.dim}, spec expects {spec.embedding_dim}"
        )
    variant = spec.variant
    layers = [EmbeddingLayer("embedding", embeddings.values, PAD_INDEX)]
    channels = spec.embedding_dim

    def add(layer):
        nonlocal channels
        layers.append(layer)
        channels = layer.output_channels(channels)

    def add_cnn(prefix):
        add(Conv1DLayer(prefix, channels, spec.conv_filters, spec.kernel_size))
        add(MaxPoolLayer(f"{prefix}_pool", spec.pool_size))

    if variant.cnn_first:
        add_cnn("conv")
    if variant.recurrent is not None:
        add(RecurrentLayer(
            variant.recurrent.lower(), variant.rnn_kind, variant.bidirectional,
            channels, spec.rnn_units, spec.internal_rnn_dropout_rate,
        ))
    if variant.cnn_after:
        add_cnn("conv")
    if variant is Variant.CNN:
        add(GlobalMaxPoolLayer("global_pool"))
    add(SpatialDropoutLayer("spatial_dropout", spec.spatial_dropout_rate))
    add(DenseLayer("dense", channels, spec.dense_units))
    if spec.dense_dropout:
        add(SpatialDropoutLayer("dense_dropout", spec.spatial_dropout_rate))
    add(OutputLayer("output", channels, spec.num_classes))

    rng = np.random.default_rng(spec.seed)
    params: dict[str, np.ndarray] = {}
    for layer in layers:
        params.update(layer.init_params(rng))
    trainable = [
        name for name in params
        if spec.embedding_trainable or not name.startswith("embedding/")
    ]
    model = Model(spec, layers, params, trainable)
    logger.debug("[MODEL] %s: %s (%d parameters)", variant.value, " -> ".join(model.layer_names), model.parameter_count())
    return model


# ── Loss and training ────────────────────────────────────────

def _weight_vector(weights, num_classes: int) -> np.ndarray:
    if weights is None:
        return np.ones(num_classes)
    if isinstance(weights, ClassWeightTable):
        return weights.as_array(num_classes)
    return np.asarray(weights, dtype=np.float64)


def weighted_cross_entropy(probs: np.ndarray, labels, weights=None) -> float:
    """Mean over the batch of w[y] * -log p[y]; p[y] is floored at 1e-12."""
    labels = np.asarray(labels, dtype=np.int64)
    class_w = _weight_vector(weights, probs.shape[1])
    picked = np.maximum(probs[np.arange(len(labels)), labels], PROB_FLOOR)
    return float(np.mean(class_w[labels] * -np.log(picked)))


def train_step(model: Model, batch: EncodedBatch, weights, adam: AdamState, rng=None) -> float:
    """One Adam step on one batch; parameters and optimizer state update in place."""
    if len(batch) == 0:
        raise ShapeError("train_step needs a non-empty batch")
    loss, grads = model.loss_and_gradients(batch.sequences, batch.labels, weights, training=True, rng=rng)
    adam_update(model.params, grads, adam)
    return loss


def train_epoch(model: Model, X: np.ndarray, y: np.ndarray, weights, adam: AdamState,
                rng: np.random.Generator, batch_size: int = DEFAULT_BATCH_SIZE) -> float:
    """Shuffle once, run ``train_step`` per mini-batch; returns the mean batch loss."""
    order = rng.permutation(len(y))
    losses = []
    for start in range(0, len(order), batch_size):
        idx = order[start:start + batch_size]
        batch = EncodedBatch(sequences=X[idx], labels=y[idx], max_len=X.shape[1])
        losses.append(train_step(model, batch, weights, adam, rng))
    return float(np.mean(losses)) if losses else 0.0
