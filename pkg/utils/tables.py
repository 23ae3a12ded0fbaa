"""
Tables - Render stored grid results as the six report tables

  2  subtask A, every variant, CV averages        (Models | Avg Acc | Avg Macro F1)
  3  subtask B, balance strategies, holdout        (Acc / Macro F1 per strategy)
  4  subtask C, balance strategies, holdout
  5  epoch sweep, macro F1                         (Epochs x BiLSTM-CNN / BiGRU-CNN)
  6  spatial dropout sweep, macro F1
  7  embedding sweep, macro F1
  ordering  mean macro F1 of recurrent-first versus convolution-first hybrids
"""
import csv
import io
from dataclasses import dataclass

import plotly.graph_objects as go

from services.balance import STRATEGIES, STRATEGY_LABELS
from services.config import BALANCE_VARIANTS, DEFAULT_SWEEPS, SWEEP_VARIANTS
from services.errors import UsageError
from services.harness import GridRow, ordering_summary
from services.model import ALL_VARIANTS, Variant
from services.representation import EMBEDDING_CHOICES

TABLES = ("2", "3", "4", "5", "6", "7", "ordering")
FORMATS = ("md", "csv", "html")
MISSING = "n/a"
FAILED = "failed"


@dataclass
class Table:
    title: str
    headers: list[str]
    rows: list[list[str]]


def format_accuracy(value: float | None) -> str:
    return MISSING if value is None else f"{value * 100:.2f}%"


def format_f1(value: float | None) -> str:
    return MISSING if value is None else f"{value:.2f}"


def _cell_scores(row: GridRow | None) -> tuple[str, str]:
    if row is None:
        return MISSING, MISSING
    if not row.ok:
        return FAILED, FAILED
    acc, f1 = row.result.score
    return format_accuracy(acc), format_f1(f1)


def _select(rows: list[GridRow], subtask: str, grid: str) -> list[GridRow]:
    return [r for r in rows if r.subtask == subtask and r.cell.grid == grid]


# ── Builders ─────────────────────────────────────────────────

def variants_table(rows: list[GridRow]) -> Table:
    by_variant = {r.cell.variant: r for r in _select(rows, "A", "variants")}
    body = [[v.value, *_cell_scores(by_variant.get(v.value))] for v in ALL_VARIANTS]
    return Table(
        "Average accuracy and macro F1-score per architecture (k-fold = 5) - Subtask A",
        ["Models (Subtask A)", "Avg Acc", "Avg Macro F1"],
        body,
    )


def balance_table(rows: list[GridRow], subtask: str) -> Table:
    by_key = {(r.cell.variant, r.cell.balance): r for r in _select(rows, subtask, "balance")}
    headers = [f"Models (Subtask {subtask})"]
    for strategy in STRATEGIES:
        headers += [f"{STRATEGY_LABELS[strategy]} Acc", f"{STRATEGY_LABELS[strategy]} Macro F1"]
    body = []
    for variant in BALANCE_VARIANTS:
        line = [variant.value]
        for strategy in STRATEGIES:
            line.extend(_cell_scores(by_key.get((variant.value, strategy))))
        body.append(line)
    return Table(
        f"Class-imbalance techniques, accuracy and macro F1-score (holdout method) - Subtask {subtask}",
        headers,
        body,
    )


def _sweep_values(selected: list[GridRow], grid: str, value_of) -> list:
    values = list(DEFAULT_SWEEPS[grid])
    for row in selected:
        value = value_of(row)
        if value not in values:
            values.append(value)
    return values


def sweep_table(rows: list[GridRow], grid: str) -> Table:
    value_of = {
        "epochs": lambda r: r.cell.epochs,
        "dropout": lambda r: r.cell.dropout,
        "embeddings": lambda r: r.cell.embedding,
    }[grid]
    label_of, first_header, title = {
        "epochs": (str, "Epochs", "Macro F1-score by number of training epochs - Subtask A"),
        "dropout": (
            lambda v: "No Dropout" if v is None else f"{v * 100:g}%",
            "Dropout",
            "Macro F1-score by spatial dropout rate - Subtask A",
        ),
        "embeddings": (
            lambda v: EMBEDDING_CHOICES[v][2],
            "Embeddings",
            "Macro F1-score with and without pretrained embeddings (T - GloVe Twitter, CC - GloVe Common Crawl) - Subtask A",
        ),
    }[grid]

    selected = _select(rows, "A", grid)
    by_key = {(r.cell.variant, value_of(r)): r for r in selected}
    variants = [v.value for v in SWEEP_VARIANTS]
    for row in selected:
        if row.cell.variant not in variants:
            variants.append(row.cell.variant)

    body = []
    for value in _sweep_values(selected, grid, value_of):
        body.append([label_of(value), *(_cell_scores(by_key.get((v, value)))[1] for v in variants)])
    return Table(title, [first_header, *variants], body)


def ordering_table(rows: list[GridRow]) -> Table:
    selected = _select(rows, "A", "variants")
    summary = ordering_summary(selected)
    members = {"rnn-first": [], "cnn-first": []}
    for row in selected:
        ordering = Variant.parse(row.cell.variant).ordering
        if row.ok and ordering in members:
            members[ordering].append(row.cell.variant)
    body = [
        ["RNN first", ", ".join(members["rnn-first"]) or MISSING, format_f1(summary["rnn-first"])],
        ["CNN first", ", ".join(members["cnn-first"]) or MISSING, format_f1(summary["cnn-first"])],
        ["Difference", "", format_f1(summary["difference"])],
    ]
    return Table("Layer ordering: mean macro F1-score of hybrid variants - Subtask A",
                 ["Ordering", "Variants", "Mean Macro F1"], body)


def build_table(table_id: str, rows: list[GridRow]) -> Table:
    if table_id == "2":
        return variants_table(rows)
    if table_id in ("3", "4"):
        return balance_table(rows, "B" if table_id == "3" else "C")
    if table_id in ("5", "6", "7"):
        return sweep_table(rows, {"5": "epochs", "6": "dropout", "7": "embeddings"}[table_id])
    if table_id == "ordering":
        return ordering_table(rows)
    raise UsageError(f"unknown table {table_id!r}; choose from {', '.join(TABLES)}")


# ── Renderers ────────────────────────────────────────────────

def to_markdown(table: Table) -> str:
    lines = [
        f"### {table.title}",
        "",
        "| " + " | ".join(table.headers) + " |",
        "|" + "|".join("---" for _ in table.headers) + "|",
    ]
    lines += ["| " + " | ".join(row) + " |" for row in table.rows]
    return "\n".join(lines) + "\n"


def to_csv(table: Table) -> str:
    buffer = io.StringIO()
    writer = csv.writer(buffer, lineterminator="\n")
    writer.writerow(table.headers)
    writer.writerows(table.rows)
    return buffer.getvalue()


def to_html(table: Table) -> str:
    columns = [list(col) for col in zip(*table.rows)] if table.rows else [[] for _ in table.headers]
    fig = go.Figure(data=[go.Table(
        header=dict(values=table.headers, fill_color="#1e293b", font=dict(color="white", size=13), align="left"),
        cells=dict(values=columns, fill_color="#f8fafc", align="left", height=28),
    )])
    fig.update_layout(
        title=table.title,
        margin=dict(l=20, r=20, t=60, b=20),
        height=120 + 30 * len(table.rows),
    )
    return fig.to_html(full_html=True, include_plotlyjs="cdn")


def render(table: Table, fmt: str) -> str:
    if fmt == "md":
        return to_markdown(table)
    if fmt == "csv":
        return to_csv(table)
    if fmt == "html":
        return to_html(table)
    raise UsageError(f"unknown format {fmt!r}; choose from {', '.join(FORMATS)}")
