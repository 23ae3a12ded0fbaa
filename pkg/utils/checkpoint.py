"""
Checkpoint - Save and restore a trained model

Directory layout:
  manifest.json   model spec, subtask, label names, max_len, pipeline flags,
                  vocabulary fingerprint, tensor table
  tensors.bin     per tensor: name length (u16), name (utf-8), ndim (u8),
                  shape (u64 each), then little-endian float64 values
  vocab.txt       one token per line, index order
"""
from __future__ import annotations

import json
import logging
import struct
from dataclasses import asdict, dataclass
from datetime import datetime
from pathlib import Path

import numpy as np

from services.errors import CheckpointError, ConfigError, ShapeError
from services.model import Model, ModelSpec, build_model
from services.preprocess import PipelineConfig
from services.representation import EmbeddingMatrix, Vocabulary

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1
MANIFEST_FILE = "manifest.json"
TENSORS_FILE = "tensors.bin"
VOCAB_FILE = "vocab.txt"
EMBEDDING_KEY = "embedding/W"


@dataclass
class Checkpoint:
    model: Model
    vocab: Vocabulary
    subtask: str
    label_names: list[str]
    max_len: int
    pipeline: PipelineConfig
    manifest: dict


def write_tensors(path: Path, tensors: dict[str, np.ndarray]):
    with open(path, "wb") as f:
        for name, value in tensors.items():
            encoded = name.encode("utf-8")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<B", value.ndim))
            f.write(struct.pack(f"<{value.ndim}Q", *value.shape))
            f.write(np.ascontiguousarray(value, dtype="<f8").tobytes())


def _take(buffer: bytes, offset: int, size: int, path: Path) -> tuple[bytes, int]:
    if offset + size > len(buffer):
        raise CheckpointError(f"{path} is truncated")
    return buffer[offset:offset + size], offset + size


def read_tensors(path: Path) -> dict[str, np.ndarray]:
    buffer = path.read_bytes()
    tensors: dict[str, np.ndarray] = {}
    offset = 0
    while offset < len(buffer):
        raw, offset = _take(buffer, offset, 2, path)
        (name_len,) = struct.unpack("<H", raw)
        raw, offset = _take(buffer, offset, name_len, path)
        name = raw.decode("utf-8")
        raw, offset = _take(buffer, offset, 1, path)
        (ndim,) = struct.unpack("<B", raw)
        raw, offset = _take(buffer, offset, 8 * ndim, path)
        shape = struct.unpack(f"<{ndim}Q", raw)
        count = int(np.prod(shape)) if ndim else 1
        raw, offset = _take(buffer, offset, 8 * count, path)
        tensors[name] = np.frombuffer(raw, dtype="<f8").astype(np.float64).reshape(shape)
    return tensors


def save_checkpoint(directory: Path | str, model: Model, vocab: Vocabulary, *, subtask: str,
                    label_names, max_len: int, pipeline: PipelineConfig, extra: dict | None = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    params = model.get_parameters()
    manifest = {
        "format": FORMAT_VERSION,
        "created_at": datetime.now().strftime("%Y-%m-%d %H:%M"),
        "model_spec": model.spec.to_dict(),
        "subtask": subtask,
        "label_names": list(label_names),
        "max_len": max_len,
        "pipeline": asdict(pipeline),
        "vocab_size": len(vocab),
        "vocab_fingerprint": vocab.fingerprint(),
        "tensors": [{"name": name, "shape": list(value.shape)} for name, value in params.items()],
        **(extra or {}),
    }
    vocab.save(directory / VOCAB_FILE)
    write_tensors(directory / TENSORS_FILE, params)
    with open(directory / MANIFEST_FILE, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=2)
    logger.info("[CKPT] saved %s (%d tensors, %d parameters) to %s",
                model.spec.variant.value, len(params), model.parameter_count(), directory)
    return directory


def load_checkpoint(directory: Path | str) -> Checkpoint:
    directory = Path(directory)
    for name in (MANIFEST_FILE, TENSORS_FILE, VOCAB_FILE):
        if not (directory / name).is_file():
            raise CheckpointError(f"checkpoint {directory} is missing {name}")

    try:
        with open(directory / MANIFEST_FILE, "r", encoding="utf-8") as f:
            manifest = json.load(f)
    except json.JSONDecodeError as e:
        raise CheckpointError(f"unreadable manifest in {directory}: {e}")
    if manifest.get("format") != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint format {manifest.get('format')!r}")

    try:
        vocab = Vocabulary.load(directory / VOCAB_FILE)
    except ConfigError as e:
        raise CheckpointError(f"invalid vocabulary in {directory}: {e}")
    if vocab.fingerprint() != manifest["vocab_fingerprint"]:
        raise CheckpointError(
            f"vocabulary hash mismatch in {directory}: manifest has "
            f"{manifest['vocab_fingerprint'][:12]}, {VOCAB_FILE} hashes to {vocab.fingerprint()[:12]}"
        )

    tensors = read_tensors(directory / TENSORS_FILE)
    expected = {t["name"]: tuple(t["shape"]) for t in manifest["tensors"]}
    actual = {name: value.shape for name, value in tensors.items()}
    if expected != actual:
        raise CheckpointError(f"tensors in {directory} do not match the manifest table")
    if EMBEDDING_KEY not in tensors or tensors[EMBEDDING_KEY].shape[0] != len(vocab):
        raise CheckpointError(f"embedding rows do not match the {len(vocab)}-token vocabulary")

    try:
        spec = ModelSpec.from_dict(manifest["model_spec"])
        model = build_model(spec, EmbeddingMatrix(tensors[EMBEDDING_KEY]))
        model.set_parameters(tensors)
    except (ConfigError, ShapeError) as e:
        raise CheckpointError(f"checkpoint {directory} does not fit its model spec: {e}")

    return Checkpoint(
        model=model,
        vocab=vocab,
        subtask=manifest["subtask"],
        label_names=manifest["label_names"],
        max_len=manifest["max_len"],
        pipeline=PipelineConfig(**manifest["pipeline"]),
        manifest=manifest,
    )
