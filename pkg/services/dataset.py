"""
Dataset Service - OLID-format TSV ingestion and per-subtask views

Canonical header: id<TAB>tweet<TAB>subtask_a<TAB>subtask_b<TAB>subtask_c.
The literal NULL marks an absent label. Label hierarchy:
  subtask_b only when subtask_a = OFF; subtask_c only when subtask_b = TIN.
"""
from __future__ import annotations

import csv
import logging
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

from services.errors import ConfigError, DataError, HierarchyError, ParseError

logger = logging.getLogger(__name__)

LABELLED_HEADER = ("id", "tweet", "subtask_a", "subtask_b", "subtask_c")
RAW_HEADER = ("id", "tweet")
ABSENT = "NULL"

SUBTASKS = ("A", "B", "C")
SUBTASK_LABELS = {
    "A": ("NOT", "OFF"),
    "B": ("TIN", "UNT"),
    "C": ("IND", "GRP", "OTH"),
}


@dataclass(frozen=True)
class TweetRecord:
    id: str
    text: str
    label_a: str | None = None
    label_b: str | None = None
    label_c: str | None = None

    def __post_init__(self):
        if self.label_b is not None and self.label_a != "OFF":
            raise HierarchyError(f"subtask_b={self.label_b} requires subtask_a=OFF, got {self.label_a}", self.id)
        if self.label_c is not None and self.label_b != "TIN":
            raise HierarchyError(f"subtask_c={self.label_c} requires subtask_b=TIN, got {self.label_b}", self.id)

    def label(self, subtask: str) -> str | None:
        return {"A": self.label_a, "B": self.label_b, "C": self.label_c}[subtask]


def check_subtask(subtask: str) -> str:
    subtask = str(subtask).upper()
    if subtask not in SUBTASKS:
        raise ConfigError(f"unknown subtask {subtask!r}; choose from {', '.join(SUBTASKS)}")
    return subtask


def _label(value: str, allowed: tuple[str, ...], column: str, line_no: int, path: Path) -> str | None:
    value = value.strip()
    if value == ABSENT:
        return None
    if value not in allowed:
        raise ParseError(f"{column} must be one of {', '.join(allowed)} or {ABSENT}, got {value!r}", line=line_no, path=path)
    return value


def ingest_tsv(path: Path | str, require_labels: bool = True) -> list[TweetRecord]:
    """Parse one OLID-format file.

    With ``require_labels=False`` the two-column ``id<TAB>tweet`` header is
    also accepted (raw input for prediction); label columns, when present,
    are still validated.
    """
    path = Path(path)
    if not path.exists():
        raise DataError(f"data file not found: {path}")

    records: list[TweetRecord] = []
    seen: set[str] = set()
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f, delimiter="\t", quoting=csv.QUOTE_NONE)
        header = tuple(next(reader, ()))
        accepted = (LABELLED_HEADER,) if require_labels else (LABELLED_HEADER, RAW_HEADER)
        if header not in accepted:
            raise ParseError(f"expected header {' | '.join(LABELLED_HEADER)}, got {' | '.join(header) or 'nothing'}", line=1, path=path)
        labelled = header == LABELLED_HEADER

        for row in reader:
            line_no = reader.line_num
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(header):
                raise ParseError(f"expected {len(header)} tab-separated fields, found {len(row)}", line=line_no, path=path)
            record_id = row[0].strip()
            if not record_id:
                raise ParseError("empty id", line=line_no, path=path)
            if record_id in seen:
                raise DataError(f"{path}: duplicate id {record_id!r} at line {line_no}")
            seen.add(record_id)

            if labelled:
                label_a = _label(row[2], SUBTASK_LABELS["A"], "subtask_a", line_no, path)
                if label_a is None and require_labels:
                    raise ParseError("subtask_a is required", line=line_no, path=path)
                records.append(TweetRecord(
                    id=record_id,
                    text=row[1],
                    label_a=label_a,
                    label_b=_label(row[3], SUBTASK_LABELS["B"], "subtask_b", line_no, path),
                    label_c=_label(row[4], SUBTASK_LABELS["C"], "subtask_c", line_no, path),
                ))
            else:
                records.append(TweetRecord(id=record_id, text=row[1]))

    logger.info("[DATA] %s: %d records", path.name, len(records))
    return records


def combine_datasets(datasets: Iterable[list[TweetRecord]]) -> list[TweetRecord]:
    """Concatenate several files (train + trial); a repeated id is an error."""
    combined: list[TweetRecord] = []
    seen: set[str] = set()
    for records in datasets:
        for record in records:
            if record.id in seen:
                raise DataError(f"duplicate id {record.id!r} across combined datasets")
            seen.add(record.id)
            combined.append(record)
    return combined


def load_datasets(paths: Iterable[Path | str], require_labels: bool = True) -> list[TweetRecord]:
    return combine_datasets(ingest_tsv(p, require_labels) for p in paths)


def subtask_examples(records: list[TweetRecord], subtask: str) -> tuple[list[TweetRecord], list[int]]:
    """Records that carry a label for ``subtask`` and their class indices."""
    subtask = check_subtask(subtask)
    names = SUBTASK_LABELS[subtask]
    kept, labels = [], []
    for record in records:
        value = record.label(subtask)
        if value is not None:
            kept.append(record)
            labels.append(names.index(value))
    return kept, labels


def label_distribution(records: list[TweetRecord]) -> dict[str, int]:
    counts = Counter()
    for record in records:
        for value in (record.label_a, record.label_b, record.label_c):
            if value is not None:
                counts[value] += 1
    return dict(counts)


# ── Token files ──────────────────────────────────────────────

def write_token_file(path: Path | str, rows: Iterable[tuple[str, list[str]]]):
    """``id<TAB>space-joined tokens`` per line."""
    with open(path, "w", encoding="utf-8", newline="") as f:
        for record_id, tokens in rows:
            f.write(f"{record_id}\t{' '.join(tokens)}\n")


def read_token_file(path: Path | str) -> list[tuple[str, list[str]]]:
    path = Path(path)
    rows = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, raw in enumerate(f, start=1):
            line = raw.rstrip("\n")
            if not line:
                continue
            record_id, sep, joined = line.partition("\t")
            if not sep:
                raise ParseError("expected 'id<TAB>tokens'", line=line_no, path=path)
            rows.append((record_id, joined.split()))
    return rows
