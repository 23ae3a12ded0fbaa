import json

import pytest

from services.errors import DataError
from services.harness import FoldResult, GridCell, GridRow, RunResult
from utils.results_store import INDEX_FILE, ResultsStore


def make_row(cell_id, subtask="A", grid="variants", variant="CNN", f1=0.5, status="ok"):
    cell = GridCell(cell_id, grid, variant, "none", 30, "config", "twitter-100d")
    result = RunResult("cv", [FoldResult(1, 0.75, f1, 3, 8, history=[0.1, f1])]) if status == "ok" else None
    error = None if status == "ok" else "embedding file for twitter-100d not found: x"
    return GridRow(cell, subtask, status, result, error, {"seed": 0})


@pytest.fixture
def store(tmp_path):
    return ResultsStore(tmp_path / "results")


class TestResultsStore:
    def test_append_then_read(self, store):
        row = make_row("A-variants-CNN")
        store.append(row)
        [back] = store.rows()
        assert back.cell == row.cell
        assert back.result == row.result
        assert back.config == {"seed": 0}
        assert "A-variants-CNN" in store

    def test_append_order_is_kept(self, store):
        for variant in ("LSTM", "CNN", "GRU"):
            store.append(make_row(f"A-variants-{variant}", variant=variant))
        assert [r.cell.variant for r in store.rows()] == ["LSTM", "CNN", "GRU"]

    def test_duplicate_cell_is_rejected(self, store):
        store.append(make_row("A-variants-CNN"))
        with pytest.raises(DataError, match="already"):
            store.append(make_row("A-variants-CNN", f1=0.9))
        assert store.rows()[0].result.mean_macro_f1 == 0.5

    def test_overwrite_replaces_in_place(self, store):
        store.append(make_row("A-variants-CNN"))
        store.append(make_row("A-variants-LSTM", variant="LSTM"))
        store.append(make_row("A-variants-CNN", f1=0.9), overwrite=True)
        rows = store.rows()
        assert [r.cell.cell_id for r in rows] == ["A-variants-CNN", "A-variants-LSTM"]
        assert rows[0].result.mean_macro_f1 == 0.9
        assert len(json.loads((store.directory / INDEX_FILE).read_text(encoding="utf-8"))) == 2

    def test_failed_rows_keep_their_error(self, store):
        store.append(make_row("A-variants-GRU", variant="GRU", status="failed"))
        [row] = store.rows()
        assert not row.ok and row.result is None
        assert "not found" in row.error

    def test_filters(self, store):
        store.append(make_row("A-variants-CNN"))
        store.append(make_row("B-balance-BiGRU-smote", subtask="B", grid="balance", variant="BiGRU"))
        store.append(make_row("A-epochs-BiGRU-CNN-5", grid="epochs", variant="BiGRU-CNN"))
        assert [r.cell.cell_id for r in store.rows(subtask="A")] == ["A-variants-CNN", "A-epochs-BiGRU-CNN-5"]
        assert [r.cell.cell_id for r in store.rows(grid="balance")] == ["B-balance-BiGRU-smote"]
        assert store.rows(subtask="C") == []

    def test_missing_directory(self, store):
        with pytest.raises(DataError):
            store.rows()
        assert "anything" not in store

    def test_unreadable_index(self, store):
        store.ensure_dirs()
        store.index_path.write_text("{not json", encoding="utf-8")
        with pytest.raises(DataError):
            store.rows()

    def test_missing_cell_file(self, store):
        store.append(make_row("A-variants-CNN"))
        store.cell_path("A-variants-CNN").unlink()
        with pytest.raises(DataError, match="no cell"):
            store.rows()
