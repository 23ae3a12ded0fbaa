"""
Representation Service - Vocabulary, index encoding and pretrained embeddings

Token lists become fixed-length index sequences (post-padded, post-truncated)
and GloVe text files become an embedding matrix aligned to the vocabulary.
"""
from __future__ import annotations

import hashlib
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

import numpy as np

from services.errors import ConfigError, ParseError

logger = logging.getLogger(__name__)

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
PAD_INDEX = 0
UNK_INDEX = 1

DEFAULT_MAX_LEN = 50
DEFAULT_VOCAB_SIZE = 20_000
DEFAULT_MIN_FREQ = 1
UNKNOWN_ROW_SCALE = 0.05

# ── Embedding choices ────────────────────────────────────────
# name -> (environment variable holding the path, dimension, table label)
EMBEDDING_CHOICES = {
    "twitter-100d": ("GLOVE_TWITTER_100D", 100, "T - 100d"),
    "twitter-200d": ("GLOVE_TWITTER_200D", 200, "T - 200d"),
    "commoncrawl-300d": ("GLOVE_COMMONCRAWL_300D", 300, "CC - 300d"),
    "none": (None, None, "No Embs"),
}


# ── Vocabulary ───────────────────────────────────────────────

@dataclass(frozen=True)
class Vocabulary:
    index_to_token: tuple[str, ...]
    token_to_index: dict[str, int] = field(init=False, repr=False, compare=False)

    pad_index = PAD_INDEX
    unk_index = UNK_INDEX

    def __post_init__(self):
        if self.index_to_token[:2] != (PAD_TOKEN, UNK_TOKEN):
            raise ConfigError("vocabulary must start with the padding and unknown sentinels")
        mapping = {tok: i for i, tok in enumerate(self.index_to_token)}
        if len(mapping) != len(self.index_to_token):
            raise ConfigError("vocabulary contains duplicate tokens")
        object.__setattr__(self, "token_to_index", mapping)

    def __len__(self) -> int:
        return len(self.index_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_index

    def decode(self, indices: Iterable[int]) -> list[str]:
        return [self.index_to_token[int(i)] for i in indices]

    def fingerprint(self) -> str:
        """SHA-256 over the ordered tokens; identifies a vocabulary in checkpoints."""
        return hashlib.sha256("\n".join(self.index_to_token).encode("utf-8")).hexdigest()

    def save(self, path: Path | str):
        with open(path, "w", encoding="utf-8") as f:
            f.write("\n".join(self.index_to_token) + "\n")

    @classmethod
    def load(cls, path: Path | str) -> "Vocabulary":
        with open(path, "r", encoding="utf-8") as f:
            tokens = [line.rstrip("\n") for line in f if line.rstrip("\n")]
        return cls(tuple(tokens))


def build_vocabulary(corpus: Iterable[list[str]], max_size: int = DEFAULT_VOCAB_SIZE, min_freq: int = DEFAULT_MIN_FREQ) -> Vocabulary:
    """Sentinels first, then tokens by descending frequency (ties lexicographic)."""
    if max_size < 2:
        raise ConfigError(f"max_size must be >= 2, got {max_size}")
    if min_freq < 1:
        raise ConfigError(f"min_freq must be >= 1, got {min_freq}")

    counts = Counter()
    for tokens in corpus:
        counts.update(tokens)
    counts.pop(PAD_TOKEN, None)
    counts.pop(UNK_TOKEN, None)

    ranked = sorted(
        (tok for tok, n in counts.items() if n >= min_freq),
        key=lambda tok: (-counts[tok], tok),
    )
    return Vocabulary((PAD_TOKEN, UNK_TOKEN, *ranked[: max_size - 2]))


# ── Encoding ─────────────────────────────────────────────────

@dataclass(frozen=True)
class EncodedBatch:
    sequences: np.ndarray
    labels: np.ndarray
    max_len: int

    def __len__(self) -> int:
        return len(self.labels)


def encode(tokens: list[str], vocab: Vocabulary, max_len: int = DEFAULT_MAX_LEN) -> np.ndarray:
    if max_len < 1:
        raise ConfigError(f"max_len must be >= 1, got {max_len}")
    ids = [vocab.token_to_index.get(tok, UNK_INDEX) for tok in tokens[:max_len]]
    out = np.full(max_len, PAD_INDEX, dtype=np.int64)
    out[: len(ids)] = ids
    return out


def encode_corpus(corpus: list[list[str]], vocab: Vocabulary, max_len: int = DEFAULT_MAX_LEN) -> np.ndarray:
    if not corpus:
        return np.zeros((0, max_len), dtype=np.int64)
    return np.stack([encode(tokens, vocab, max_len) for tokens in corpus])


def encode_batch(corpus: list[list[str]], labels, vocab: Vocabulary, max_len: int = DEFAULT_MAX_LEN) -> EncodedBatch:
    return EncodedBatch(
        sequences=encode_corpus(corpus, vocab, max_len),
        labels=np.asarray(labels, dtype=np.int64),
        max_len=max_len,
    )


# ── Embeddings ───────────────────────────────────────────────

@dataclass(frozen=True)
class EmbeddingMatrix:
    values: np.ndarray
    coverage: float = 0.0

    @property
    def dim(self) -> int:
        return int(self.values.shape[1])

    def __len__(self) -> int:
        return int(self.values.shape[0])


def load_embeddings(path: Path | str, expected_dim: int, keep: Iterable[str] | None = None) -> dict[str, np.ndarray]:
    """Parse a GloVe text file: one ``token v1 ... vd`` per line, no header.

    Duplicate tokens keep their first vector. ``keep`` restricts the result
    to the given tokens; every line is still validated. When the first two
    lines agree on a width other than ``expected_dim`` the file does not
    match the configured dimension (ConfigError); any other wrong-width line
    is malformed (ParseError).
    """
    if expected_dim < 1:
        raise ConfigError(f"embedding dimension must be >= 1, got {expected_dim}")
    path = Path(path)
    wanted = set(keep) if keep is not None else None
    table: dict[str, np.ndarray] = {}

    def arity_error(line_no: int, width: int) -> ParseError:
        return ParseError(f"expected a token and {expected_dim} values, found {width} values", line=line_no, path=path)

    first_mismatch = None  # (line_no, width) of a wrong-width first line
    seen_valid = False
    with open(path, "r", encoding="utf-8") as f:
        for line_no, raw in enumerate(f, start=1):
            line = raw.rstrip("\n").rstrip()
            if not line:
                continue
            parts = line.split(" ")
            width = len(parts) - 1
            if first_mismatch is not None:
                if width == first_mismatch[1]:
                    raise ConfigError(
                        f"{path.name} holds {width}-dimensional vectors "
                        f"but the configured dimension is {expected_dim}"
                    )
                raise arity_error(*first_mismatch)
            if width != expected_dim:
                if not seen_valid:
                    first_mismatch = (line_no, width)
                    continue
                raise arity_error(line_no, width)
            seen_valid = True
            try:
                vector = np.array([float(v) for v in parts[1:]], dtype=np.float64)
            except ValueError as e:
                raise ParseError(f"non-numeric value ({e})", line=line_no, path=path)
            if not np.all(np.isfinite(vector)):
                raise ParseError("non-finite value", line=line_no, path=path)
            token = parts[0]
            if token in table or (wanted is not None and token not in wanted):
                continue
            table[token] = vector
    if first_mismatch is not None:
        raise arity_error(*first_mismatch)
    logger.info("[EMBED] loaded %d vectors (dim %d) from %s", len(table), expected_dim, path.name)
    return table


def build_embedding_matrix(vocab: Vocabulary, table: dict[str, np.ndarray], d: int, seed: int = 0) -> EmbeddingMatrix:
    """Rows from the table where present, small uniform noise otherwise, zero padding row."""
    rng = np.random.default_rng(seed)
    values = rng.uniform(-UNKNOWN_ROW_SCALE, UNKNOWN_ROW_SCALE, size=(len(vocab), d))
    found = 0
    for i, token in enumerate(vocab.index_to_token):
        if i in (PAD_INDEX, UNK_INDEX):
            continue
        vector = table.get(token)
        if vector is None:
            continue
        if len(vector) != d:
            raise ConfigError(f"vector for {token!r} has dimension {len(vector)}, expected {d}")
        values[i] = vector
        found += 1
    values[PAD_INDEX] = 0.0

    content = len(vocab) - 2
    coverage = found / content if content else 0.0
    logger.info("[EMBED] coverage %.1f%% (%d/%d tokens)", 100 * coverage, found, content)
    return EmbeddingMatrix(values=values, coverage=coverage)
