"""
Config Service - Environment settings and experiment files

Environment (.env is honoured through python-dotenv):
  WORKBENCH_LOG_LEVEL      root log level (INFO)
  WORKBENCH_RESULTS_DIR    default results store (results/)
  WORKBENCH_RESOURCES_DIR  contraction map / dictionary / lemma directory (data/)
  GLOVE_TWITTER_100D, GLOVE_TWITTER_200D, GLOVE_COMMONCRAWL_300D
                           embedding file per choice

Experiment files are flat INI text:
  [experiment]      subtask, grid, variants, balance, embedding, epochs, patience, seed, ...
  [model]           ModelSpec overrides (rnn_units, conv_filters, ...)
  [representation]  max_len, vocab_size, min_freq
  [preprocess]      one boolean per pipeline step, max_edit_distance
  [embeddings]      <choice> = path, <choice>.dim = dimension
  [sweep.<name>]    values = comma-separated list (epochs, dropout, embeddings, balance)
"""
from __future__ import annotations

import configparser
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from dotenv import load_dotenv

from services.balance import STRATEGIES
from services.dataset import check_subtask
from services.errors import ConfigError
from services.model import ALL_VARIANTS, Variant
from services.preprocess import PipelineConfig
from services.representation import (
    DEFAULT_MAX_LEN,
    DEFAULT_MIN_FREQ,
    DEFAULT_VOCAB_SIZE,
    EMBEDDING_CHOICES,
)

ROOT_DIR = Path(__file__).parent.parent
DEFAULT_RESULTS_DIR = "results"
DEFAULT_EMBEDDINGS_DIR = ROOT_DIR / "embeddings"
DEFAULT_EMBEDDING_FILES = {
    "twitter-100d": "glove.twitter.27B.100d.txt",
    "twitter-200d": "glove.twitter.27B.200d.txt",
    "commoncrawl-300d": "glove.42B.300d.txt",
}
NO_EMBEDDING_DIM = 100

GRIDS = ("variants", "balance", "epochs", "dropout", "embeddings")
MODES = ("cv", "holdout")
SWEEP_VARIANTS = (Variant.BILSTM_CNN, Variant.BIGRU_CNN)
BALANCE_VARIANTS = (Variant.BILSTM_CNN, Variant.BIGRU_CNN, Variant.BILSTM, Variant.BIGRU)
DEFAULT_SWEEPS = {
    "epochs": (5, 10, 20),
    "dropout": (0.20, 0.35, 0.50, None),
    "embeddings": ("twitter-100d", "twitter-200d", "commoncrawl-300d", "none"),
    "balance": STRATEGIES,
}


def default_variants(grid: str) -> tuple[Variant, ...]:
    if grid == "variants":
        return ALL_VARIANTS
    if grid == "balance":
        return BALANCE_VARIANTS
    return SWEEP_VARIANTS


# ModelSpec fields an experiment file may override
MODEL_OVERRIDES = {
    "rnn_units": int,
    "conv_filters": int,
    "kernel_size": int,
    "pool_size": int,
    "dense_units": int,
    "spatial_dropout_rate": float,
    "internal_rnn_dropout_rate": float,
    "embedding_trainable": bool,
    "dense_dropout": bool,
}


# ── Environment ──────────────────────────────────────────────

@dataclass(frozen=True)
class Settings:
    log_level: str
    results_dir: Path
    resources_dir: Path | None
    embedding_paths: dict[str, str]


def load_settings() -> Settings:
    load_dotenv()
    paths = {}
    for name, (env_var, _, _) in EMBEDDING_CHOICES.items():
        if env_var is None:
            continue
        paths[name] = os.getenv(env_var) or str(DEFAULT_EMBEDDINGS_DIR / DEFAULT_EMBEDDING_FILES[name])
    resources = os.getenv("WORKBENCH_RESOURCES_DIR")
    return Settings(
        log_level=os.getenv("WORKBENCH_LOG_LEVEL", "INFO").upper(),
        results_dir=Path(os.getenv("WORKBENCH_RESULTS_DIR", DEFAULT_RESULTS_DIR)),
        resources_dir=Path(resources) if resources else None,
        embedding_paths=paths,
    )


# ── Experiment configuration ─────────────────────────────────

@dataclass(frozen=True)
class EmbeddingSource:
    path: str | None
    dim: int


def default_embedding_sources(settings: Settings | None = None) -> dict[str, EmbeddingSource]:
    paths = settings.embedding_paths if settings else {}
    sources = {}
    for name, (_, dim, _) in EMBEDDING_CHOICES.items():
        sources[name] = EmbeddingSource(path=paths.get(name), dim=dim or NO_EMBEDDING_DIM)
    return sources


@dataclass
class ExperimentConfig:
    subtask: str = "A"
    grid: str = "variants"
    variants: tuple[str, ...] | None = None
    balance: str = "none"
    embedding: str = "twitter-100d"
    epochs: int = 30
    patience: int = 10
    seed: int = 0
    mode: str | None = None
    folds: int = 5
    test_ratio: float = 0.2
    validation_ratio: float = 0.2
    learning_rate: float = 1e-3
    batch_size: int = 64
    k_neighbors: int = 5
    max_len: int = DEFAULT_MAX_LEN
    vocab_size: int = DEFAULT_VOCAB_SIZE
    min_freq: int = DEFAULT_MIN_FREQ
    model: dict = field(default_factory=dict)
    pipeline: PipelineConfig = field(default_factory=PipelineConfig)
    embedding_sources: dict[str, EmbeddingSource] = field(default_factory=default_embedding_sources)
    sweeps: dict[str, tuple] = field(default_factory=lambda: dict(DEFAULT_SWEEPS))

    def __post_init__(self):
        self.subtask = check_subtask(self.subtask)
        if self.grid not in GRIDS:
            raise ConfigError(f"unknown grid {self.grid!r}; choose from {', '.join(GRIDS)}")
        if self.variants is None:
            self.variants = tuple(v.value for v in default_variants(self.grid))
        self.variants = tuple(Variant.parse(v).value for v in self.variants)
        if not self.variants:
            raise ConfigError("at least one variant is required")
        if self.balance not in STRATEGIES:
            raise ConfigError(f"unknown balance strategy {self.balance!r}; choose from {', '.join(STRATEGIES)}")
        if self.embedding not in EMBEDDING_CHOICES:
            raise ConfigError(f"unknown embedding {self.embedding!r}; choose from {', '.join(EMBEDDING_CHOICES)}")
        if self.mode is None:
            # subtasks B and C are scored on a single holdout split
            self.mode = "cv" if self.subtask == "A" else "holdout"
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; choose from {', '.join(MODES)}")

        for name in ("epochs", "patience", "batch_size", "k_neighbors", "max_len", "min_freq"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.folds < 2:
            raise ConfigError(f"folds must be >= 2, got {self.folds}")
        if self.vocab_size < 2:
            raise ConfigError(f"vocab_size must be >= 2, got {self.vocab_size}")
        for name in ("test_ratio", "validation_ratio"):
            if not 0.0 < getattr(self, name) < 1.0:
                raise ConfigError(f"{name} must lie in (0, 1), got {getattr(self, name)}")
        if self.learning_rate <= 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")

        unknown = set(self.model) - set(MODEL_OVERRIDES)
        if unknown:
            raise ConfigError(f"unknown [model] keys: {', '.join(sorted(unknown))}")
        missing = set(EMBEDDING_CHOICES) - set(self.embedding_sources)
        if missing:
            raise ConfigError(f"no embedding source for {', '.join(sorted(missing))}")
        self.sweeps = {**DEFAULT_SWEEPS, **{k: tuple(v) for k, v in self.sweeps.items()}}
        _validate_sweeps(self.sweeps)

    def embedding_dim(self, choice: str | None = None) -> int:
        return self.embedding_sources[choice or self.embedding].dim

    def snapshot(self) -> dict:
        """JSON-ready copy that ``from_snapshot`` turns back into an equal config."""
        data = asdict(self)
        data["variants"] = list(self.variants)
        data["sweeps"] = {k: list(v) for k, v in self.sweeps.items()}
        return data

    @classmethod
    def from_snapshot(cls, data: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown snapshot fields: {', '.join(sorted(unknown))}")
        data = dict(data)
        if "pipeline" in data:
            data["pipeline"] = PipelineConfig(**data["pipeline"])
        if "embedding_sources" in data:
            data["embedding_sources"] = {
                name: EmbeddingSource(**src) for name, src in data["embedding_sources"].items()
            }
        if "variants" in data:
            data["variants"] = tuple(data["variants"])
        return cls(**data)


def _validate_sweeps(sweeps: dict[str, tuple]):
    unknown = set(sweeps) - set(DEFAULT_SWEEPS)
    if unknown:
        raise ConfigError(f"unknown sweeps: {', '.join(sorted(unknown))}")
    for epochs in sweeps["epochs"]:
        if not isinstance(epochs, int) or epochs < 1:
            raise ConfigError(f"sweep.epochs values must be positive integers, got {epochs!r}")
    for rate in sweeps["dropout"]:
        if rate is not None and not 0.0 <= rate < 1.0:
            raise ConfigError(f"sweep.dropout values must lie in [0, 1) or be none, got {rate!r}")
    for choice in sweeps["embeddings"]:
        if choice not in EMBEDDING_CHOICES:
            raise ConfigError(f"sweep.embeddings: unknown choice {choice!r}")
    for strategy in sweeps["balance"]:
        if strategy not in STRATEGIES:
            raise ConfigError(f"sweep.balance: unknown strategy {strategy!r}")


# ── INI parsing ──────────────────────────────────────────────

EXPERIMENT_KEYS = {
    "subtask": str,
    "grid": str,
    "variants": "list",
    "balance": str,
    "embedding": str,
    "epochs": int,
    "patience": int,
    "seed": int,
    "mode": str,
    "folds": int,
    "test_ratio": float,
    "validation_ratio": float,
    "learning_rate": float,
    "batch_size": int,
    "k_neighbors": int,
}
REPRESENTATION_KEYS = {"max_len": int, "vocab_size": int, "min_freq": int}
PIPELINE_KEYS = {f.name: (int if f.name == "max_edit_distance" else bool) for f in fields(PipelineConfig)}
SECTIONS = {"experiment", "model", "representation", "preprocess", "embeddings"}


def _split_list(raw: str) -> list[str]:
    return [item.strip() for item in raw.split(",") if item.strip()]


def _typed(parser: configparser.ConfigParser, section: str, key: str, kind):
    try:
        if kind is bool:
            return parser.getboolean(section, key)
        if kind is int:
            return parser.getint(section, key)
        if kind is float:
            return parser.getfloat(section, key)
        if kind == "list":
            return _split_list(parser.get(section, key))
        return parser.get(section, key).strip()
    except ValueError as e:
        raise ConfigError(f"[{section}] {key}: {e}")


def _read_section(parser, section: str, schema: dict) -> dict:
    if not parser.has_section(section):
        return {}
    values = {}
    for key in parser.options(section):
        if key not in schema:
            raise ConfigError(f"[{section}] unknown key {key!r}")
        values[key] = _typed(parser, section, key, schema[key])
    return values


def _sweep_value(name: str, raw: str):
    if name == "epochs":
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(f"[sweep.epochs] not an integer: {raw!r}")
    if name == "dropout":
        if raw.lower() == "none":
            return None
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(f"[sweep.dropout] not a rate: {raw!r}")
    return raw


def _read_embeddings(parser, base_dir: Path, settings: Settings | None) -> dict[str, EmbeddingSource]:
    sources = default_embedding_sources(settings)
    if not parser.has_section("embeddings"):
        return sources
    paths, dims = {}, {}
    for key in parser.options("embeddings"):
        name, _, attr = key.partition(".")
        if name not in EMBEDDING_CHOICES or attr not in ("", "dim"):
            raise ConfigError(f"[embeddings] unknown key {key!r}")
        if attr == "dim":
            dims[name] = _typed(parser, "embeddings", key, int)
        else:
            path = Path(parser.get("embeddings", key).strip())
            paths[name] = str(path if path.is_absolute() else (base_dir / path))
    for name, src in sources.items():
        sources[name] = EmbeddingSource(path=paths.get(name, src.path), dim=dims.get(name, src.dim))
        if sources[name].dim < 1:
            raise ConfigError(f"[embeddings] {name}.dim must be >= 1")
    return sources


def parse_experiment_text(text: str, base_dir: Path | str = ".", settings: Settings | None = None) -> ExperimentConfig:
    """Parse experiment INI text; relative embedding paths resolve against ``base_dir``."""
    parser = configparser.ConfigParser(inline_comment_prefixes=("#", ";"), interpolation=None)
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"unreadable experiment file: {e}")

    for section in parser.sections():
        if section not in SECTIONS and not section.startswith("sweep."):
            raise ConfigError(f"unknown section [{section}]")

    values = _read_section(parser, "experiment", EXPERIMENT_KEYS)
    values.update(_read_section(parser, "representation", REPRESENTATION_KEYS))
    values["model"] = _read_section(parser, "model", MODEL_OVERRIDES)
    values["pipeline"] = PipelineConfig(**_read_section(parser, "preprocess", PIPELINE_KEYS))
    values["embedding_sources"] = _read_embeddings(parser, Path(base_dir), settings)

    sweeps = {}
    for section in parser.sections():
        if not section.startswith("sweep."):
            continue
        name = section.removeprefix("sweep.")
        if name not in DEFAULT_SWEEPS:
            raise ConfigError(f"unknown sweep [{section}]")
        extra = set(parser.options(section)) - {"values"}
        if extra:
            raise ConfigError(f"[{section}] unknown keys: {', '.join(sorted(extra))}")
        if parser.has_option(section, "values"):
            sweeps[name] = tuple(_sweep_value(name, raw) for raw in _split_list(parser.get(section, "values")))
    values["sweeps"] = sweeps
    if "variants" in values and values["variants"] == ["all"]:
        values["variants"] = [v.value for v in ALL_VARIANTS]
    return ExperimentConfig(**values)


def load_experiment_config(path: Path | str, settings: Settings | None = None) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"experiment file not found: {path}")
    return parse_experiment_text(path.read_text(encoding="utf-8"), path.parent, settings)
