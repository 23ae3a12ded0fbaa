import csv
import io
import re

import pytest

from conftest import GLOVE_20D, GOLDEN
from services.config import EmbeddingSource, ExperimentConfig, default_embedding_sources
from services.errors import UsageError
from services.harness import FoldResult, GridCell, GridRow, RunResult, run_grid
from utils.results_store import ResultsStore
from utils.tables import FORMATS, TABLES, build_table, format_accuracy, format_f1, render


def cv_row(subtask, grid, variant, accuracies, f1s, tag=None, dropout="config", embedding="twitter-100d", epochs=30):
    cell_id = "-".join(p for p in (subtask, grid, variant, tag) if p)
    folds = [FoldResult(i + 1, a, f, 1, 1) for i, (a, f) in enumerate(zip(accuracies, f1s))]
    cell = GridCell(cell_id, grid, variant, "none", epochs, dropout, embedding)
    return GridRow(cell, subtask, "ok", RunResult("cv", folds))


def holdout_row(subtask, variant, balance, test_accuracy, test_f1):
    fold = FoldResult(1, 0.5, 0.5, 1, 1, test_accuracy=test_accuracy, test_macro_f1=test_f1)
    cell = GridCell(f"{subtask}-balance-{variant}-{balance}", "balance", variant, balance, 30, "config", "twitter-100d")
    return GridRow(cell, subtask, "ok", RunResult("holdout", [fold]))


def failed_row(subtask, grid, variant, tag=None, dropout="config", epochs=30):
    cell_id = "-".join(p for p in (subtask, grid, variant, tag) if p)
    cell = GridCell(cell_id, grid, variant, "none", epochs, dropout, "twitter-100d")
    return GridRow(cell, subtask, "failed", error="boom")


@pytest.fixture
def stored_rows(tmp_path):
    store = ResultsStore(tmp_path / "results")
    for row in (
        cv_row("A", "variants", "CNN", [0.70, 0.74], [0.60, 0.64]),
        failed_row("A", "variants", "LSTM"),
        cv_row("A", "variants", "BiLSTM-CNN", [0.8125], [0.7512]),
        cv_row("A", "variants", "CNN-BiLSTM", [0.75], [0.5]),
        holdout_row("B", "BiLSTM-CNN", "none", 0.875, 0.6),
        holdout_row("B", "BiLSTM-CNN", "smote", 0.8, 0.7),
        holdout_row("C", "BiGRU", "class_weights", 0.625, 0.4),
        cv_row("A", "dropout", "BiGRU-CNN", [0.5, 0.5], [0.5, 0.7], tag="0.35", dropout=0.35),
        failed_row("A", "dropout", "BiLSTM-CNN", tag="none", dropout=None),
        cv_row("A", "epochs", "BiLSTM-CNN", [0.6, 0.7], [0.55, 0.65], tag="10", epochs=10),
        failed_row("A", "epochs", "BiGRU-CNN", tag="20", epochs=20),
        cv_row("A", "embeddings", "BiGRU-CNN", [0.7], [0.4567], tag="commoncrawl-300d", embedding="commoncrawl-300d"),
    ):
        store.append(row)
    return store.rows()


def golden(name):
    return (GOLDEN / name).read_text(encoding="utf-8")


class TestFormatting:
    def test_two_decimals(self):
        assert format_accuracy(0.7) == "70.00%"
        assert format_f1(2 / 3) == "0.67"
        assert format_f1(None) == "n/a"


class TestGolden:
    def test_variants_markdown(self, stored_rows):
        assert render(build_table("2", stored_rows), "md") == golden("table_2.md")

    def test_balance_csv(self, stored_rows):
        assert render(build_table("3", stored_rows), "csv") == golden("table_3.csv")

    def test_dropout_markdown(self, stored_rows):
        assert render(build_table("6", stored_rows), "md") == golden("table_6.md")

    def test_subtask_c_balance_markdown(self, stored_rows):
        assert render(build_table("4", stored_rows), "md") == golden("table_4.md")

    def test_epochs_markdown(self, stored_rows):
        assert render(build_table("5", stored_rows), "md") == golden("table_5.md")

    def test_embeddings_markdown(self, stored_rows):
        assert render(build_table("7", stored_rows), "md") == golden("table_7.md")

    def test_fixture_grid_through_the_store(self, tmp_path, fixture_records, resources):
        sources = {**default_embedding_sources(), "twitter-100d": EmbeddingSource(str(GLOVE_20D), 20)}
        config = ExperimentConfig(
            subtask="A", grid="epochs", variants=("CNN",), epochs=2, patience=1, seed=3, folds=2,
            max_len=12, vocab_size=500, batch_size=32, model={"conv_filters": 4, "dense_units": 4},
            embedding_sources=sources, sweeps={"epochs": (1, 2)},
        )
        store = ResultsStore(tmp_path / "results")
        rows = run_grid(config, fixture_records, resources, on_row=store.append)
        stored = render(build_table("5", store.rows()), "md")
        assert stored == render(build_table("5", rows), "md")
        assert stored == render(build_table("5", run_grid(config, fixture_records, resources)), "md")
        # scores depend on the fixture; the layout and the filled cells do not
        assert re.sub(r"\b\d\.\d\d\b", "#.##", stored) == golden("table_5_fixture_grid.md")


class TestTables:
    def test_every_table_renders_from_an_empty_store(self):
        for table_id in TABLES:
            for fmt in FORMATS:
                assert render(build_table(table_id, []), fmt)

    def test_subtask_c_balance(self, stored_rows):
        table = build_table("4", stored_rows)
        bigru = next(row for row in table.rows if row[0] == "BiGRU")
        assert bigru[-2:] == ["62.50%", "0.40"]
        assert bigru[1:5] == ["n/a"] * 4

    def test_embedding_sweep_labels(self):
        rows = [cv_row("A", "embeddings", "BiLSTM-CNN", [0.5], [0.25], tag="none", embedding="none")]
        table = build_table("7", rows)
        assert [row[0] for row in table.rows] == ["T - 100d", "T - 200d", "CC - 300d", "No Embs"]
        assert table.rows[-1][1] == "0.25"

    def test_unswept_value_gets_its_own_row(self):
        cell = GridCell("A-epochs-BiGRU-CNN-40", "epochs", "BiGRU-CNN", "none", 40, "config", "twitter-100d")
        rows = [GridRow(cell, "A", "ok", RunResult("cv", [FoldResult(1, 0.5, 0.3, 1, 1)]))]
        table = build_table("5", rows)
        assert [row[0] for row in table.rows] == ["5", "10", "20", "40"]
        assert table.rows[-1] == ["40", "n/a", "0.30"]

    def test_ordering(self, stored_rows):
        table = build_table("ordering", stored_rows)
        assert table.rows[0] == ["RNN first", "BiLSTM-CNN", "0.75"]
        assert table.rows[1] == ["CNN first", "CNN-BiLSTM", "0.50"]
        assert table.rows[2] == ["Difference", "", "0.25"]

    def test_csv_parses_back(self, stored_rows):
        parsed = list(csv.reader(io.StringIO(render(build_table("2", stored_rows), "csv"))))
        assert parsed[0] == ["Models (Subtask A)", "Avg Acc", "Avg Macro F1"]
        assert len(parsed) == 14

    def test_html_is_a_plotly_page(self, stored_rows):
        html = render(build_table("2", stored_rows), "html")
        assert "plotly" in html.lower()
        assert "Subtask A" in html

    def test_unknown_table(self):
        with pytest.raises(UsageError):
            build_table("8", [])

    def test_unknown_format(self):
        with pytest.raises(UsageError):
            render(build_table("2", []), "pdf")
