"""
Results Store - Append-only record of experiment grid cells

Layout:
  <results>/index.json          one entry per cell, in append order
  <results>/cells/<cell_id>.json  config snapshot + run result for that cell
"""
import json
import logging
import os
import threading
from datetime import datetime
from pathlib import Path

from services.errors import DataError
from services.harness import GridRow

logger = logging.getLogger(__name__)

INDEX_FILE = "index.json"
CELLS_DIR = "cells"


class ResultsStore:
    def __init__(self, directory):
        self.directory = Path(directory)
        self.index_path = self.directory / INDEX_FILE
        self._lock = threading.Lock()

    def ensure_dirs(self):
        """Ensure store directories exist."""
        (self.directory / CELLS_DIR).mkdir(parents=True, exist_ok=True)

    def cell_path(self, cell_id: str) -> Path:
        return self.directory / CELLS_DIR / f"{cell_id}.json"

    def load_index(self) -> list:
        if not self.index_path.exists():
            return []
        try:
            with open(self.index_path, "r", encoding="utf-8") as f:
                return json.load(f)
        except json.JSONDecodeError as e:
            raise DataError(f"results index {self.index_path} is unreadable: {e}")

    def _save_index(self, index: list):
        tmp = self.index_path.with_suffix(".json.tmp")
        with open(tmp, "w", encoding="utf-8") as f:
            json.dump(index, f, indent=2)
        os.replace(tmp, self.index_path)

    def append(self, row: GridRow, overwrite: bool = False) -> str:
        """Record one cell. A cell id already in the index is an error unless ``overwrite``."""
        cell_id = row.cell.cell_id
        with self._lock:
            self.ensure_dirs()
            index = self.load_index()
            existing = next((e for e in index if e["cell_id"] == cell_id), None)
            if existing and not overwrite:
                raise DataError(f"cell {cell_id!r} is already in {self.directory}; use --overwrite to replace it")

            record = row.to_dict()
            record["recorded_at"] = datetime.now().strftime("%Y-%m-%d %H:%M:%S")
            with open(self.cell_path(cell_id), "w", encoding="utf-8") as f:
                json.dump(record, f, indent=2)

            entry = {
                "cell_id": cell_id,
                "subtask": row.subtask,
                "grid": row.cell.grid,
                "variant": row.cell.variant,
                "status": row.status,
                "recorded_at": record["recorded_at"],
            }
            if existing:
                index[index.index(existing)] = entry
            else:
                index.append(entry)
            self._save_index(index)
        logger.debug("[STORE] %s %s", "replaced" if existing else "appended", cell_id)
        return cell_id

    def load_row(self, cell_id: str) -> GridRow:
        path = self.cell_path(cell_id)
        if not path.exists():
            raise DataError(f"results store has no cell {cell_id!r}")
        with open(path, "r", encoding="utf-8") as f:
            return GridRow.from_dict(json.load(f))

    def rows(self, subtask: str | None = None, grid: str | None = None) -> list[GridRow]:
        """Stored rows in append order, optionally filtered."""
        if not self.directory.exists():
            raise DataError(f"results directory not found: {self.directory}")
        selected = []
        for entry in self.load_index():
            if subtask and entry["subtask"] != subtask:
                continue
            if grid and entry["grid"] != grid:
                continue
            selected.append(self.load_row(entry["cell_id"]))
        return selected

    def __contains__(self, cell_id: str) -> bool:
        return any(e["cell_id"] == cell_id for e in self.load_index())
