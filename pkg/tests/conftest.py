from pathlib import Path

import numpy as np
import pytest

from services.dataset import ingest_tsv
from services.model import ModelSpec
from services.preprocess import load_pipeline_resources
from services.representation import EmbeddingMatrix, Vocabulary

ROOT = Path(__file__).parent.parent
FIXTURES = ROOT / "data" / "fixtures"
OLID_FIXTURE = FIXTURES / "olid_fixture.tsv"
RAW_FIXTURE = FIXTURES / "raw_fixture.tsv"
GLOVE_20D = FIXTURES / "glove_fixture_20d.txt"
GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture(scope="session")
def resources():
    return load_pipeline_resources()


@pytest.fixture(scope="session")
def fixture_records():
    return ingest_tsv(OLID_FIXTURE)


@pytest.fixture
def toy_vocab():
    return Vocabulary(("<pad>", "<unk>", *(f"w{i}" for i in range(8))))


@pytest.fixture
def toy_embeddings(toy_vocab):
    rng = np.random.default_rng(3)
    values = rng.uniform(-0.5, 0.5, size=(len(toy_vocab), 4))
    values[0] = 0.0
    return EmbeddingMatrix(values)


@pytest.fixture
def toy_spec():
    """Gradient-check sizes: d=4, H=3, K=2 filters, width 3, pool 2."""

    def make(variant, **overrides):
        base = dict(
            variant=variant,
            embedding_dim=4,
            rnn_units=3,
            conv_filters=2,
            kernel_size=3,
            pool_size=2,
            dense_units=4,
            num_classes=2,
            spatial_dropout_rate=0.0,
            internal_rnn_dropout_rate=0.0,
            seed=11,
        )
        base.update(overrides)
        return ModelSpec(**base)

    return make


def write_tsv(path: Path, rows, header="id\ttweet\tsubtask_a\tsubtask_b\tsubtask_c"):
    path.write_text(header + "\n" + "".join(r + "\n" for r in rows), encoding="utf-8")
    return path
