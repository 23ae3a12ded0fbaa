"""
Offensive Language Workbench - Main Entry Point
Tweet classification experiments with CNN/RNN layer-ordering variants

Subcommands: preprocess, train, evaluate, predict, experiment, report.
Exit codes: 0 success, 1 usage/configuration, 2 data, 3 numeric failure.
"""
import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from services.config import Settings, load_experiment_config, load_settings
from services.dataset import ingest_tsv, load_datasets, subtask_examples, write_token_file
from services.errors import EXIT_DATA, EXIT_OK, DataError, UsageError, WorkbenchError
from services.harness import expand_grid, run_grid, train_model
from services.metrics import report
from services.preprocess import PipelineConfig, load_pipeline_resources, preprocess
from services.representation import encode_corpus
from utils.checkpoint import load_checkpoint, save_checkpoint
from utils.results_store import ResultsStore
from utils.tables import FORMATS, TABLES, build_table, render

logger = logging.getLogger("workbench")

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s %(message)s"
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


class WorkbenchArgumentParser(argparse.ArgumentParser):
    """Argument errors raise UsageError instead of exiting with argparse's code 2."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def configure_logging(level: str):
    if level.upper() not in LOG_LEVELS:
        raise UsageError(f"unknown log level {level!r}; choose from {', '.join(LOG_LEVELS)}")
    logging.basicConfig(level=level.upper(), format=LOG_FORMAT, stream=sys.stderr, force=True)


def _resources(settings: Settings, cfg: PipelineConfig):
    directory = str(settings.resources_dir) if settings.resources_dir else None
    return load_pipeline_resources(directory, cfg.max_edit_distance)


def _write_text(path, text: str):
    if path is None:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
        return
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")
    logger.info("[CLI] wrote %s", path)


# ── Commands ─────────────────────────────────────────────────

def cmd_preprocess(args, settings: Settings) -> int:
    cfg = load_experiment_config(args.config, settings).pipeline if args.config else PipelineConfig()
    resources = _resources(settings, cfg)
    records = ingest_tsv(args.input, require_labels=False)
    write_token_file(args.out, ((r.id, preprocess(r.text, cfg, resources)) for r in records))
    logger.info("[CLI] preprocessed %d records into %s", len(records), args.out)
    return EXIT_OK


def cmd_train(args, settings: Settings) -> int:
    config = load_experiment_config(args.config, settings)
    records = load_datasets(args.data)
    outcome = train_model(config, records, _resources(settings, config.pipeline))

    out = Path(args.out)
    save_checkpoint(
        out, outcome.model, outcome.data.vocab,
        subtask=config.subtask, label_names=outcome.data.label_names,
        max_len=config.max_len, pipeline=config.pipeline,
        extra={"experiment": config.snapshot()},
    )
    names = list(outcome.data.label_names)
    summary = {
        "run": outcome.result.to_dict(),
        "test": outcome.test_report.to_dict(names),
    }
    with open(out / "report.json", "w", encoding="utf-8") as f:
        json.dump(summary, f, indent=2)
    text = outcome.test_report.to_text(names)
    (out / "report.txt").write_text(text + "\n", encoding="utf-8")
    print(text)
    return EXIT_OK


def cmd_evaluate(args, settings: Settings) -> int:
    ckpt = load_checkpoint(args.ckpt)
    records, labels = subtask_examples(load_datasets(args.data), ckpt.subtask)
    if not records:
        raise DataError(f"no records in {', '.join(args.data)} carry a subtask {ckpt.subtask} label")
    resources = _resources(settings, ckpt.pipeline)
    X = encode_corpus([preprocess(r.text, ckpt.pipeline, resources) for r in records], ckpt.vocab, ckpt.max_len)
    result = report(labels, ckpt.model.predict(X), len(ckpt.label_names))
    if args.format == "json":
        print(json.dumps(result.to_dict(ckpt.label_names), indent=2))
    else:
        print(result.to_text(ckpt.label_names))
    return EXIT_OK


def cmd_predict(args, settings: Settings) -> int:
    ckpt = load_checkpoint(args.ckpt)
    records = ingest_tsv(args.input, require_labels=False)
    resources = _resources(settings, ckpt.pipeline)
    X = encode_corpus([preprocess(r.text, ckpt.pipeline, resources) for r in records], ckpt.vocab, ckpt.max_len)
    predicted = ckpt.model.predict(X) if records else []
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with open(out, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["id", "label"])
        for record, label in zip(records, predicted):
            writer.writerow([record.id, ckpt.label_names[int(label)]])
    logger.info("[CLI] wrote %d predictions to %s", len(records), out)
    return EXIT_OK


def cmd_experiment(args, settings: Settings) -> int:
    config = load_experiment_config(args.config, settings)
    store = ResultsStore(args.results or settings.results_dir)
    if not args.overwrite:
        taken = [cell.cell_id for cell in expand_grid(config) if cell.cell_id in store]
        if taken:
            raise DataError(f"{len(taken)} cell(s) already recorded (first: {taken[0]}); use --overwrite")

    records = load_datasets(args.data)
    recorded = []

    def record(row):
        store.append(row, overwrite=args.overwrite)
        recorded.append(row.cell.cell_id)

    try:
        rows = run_grid(
            config, records, _resources(settings, config.pipeline),
            workers=args.workers, progress=not args.no_progress, on_row=record,
        )
    except WorkbenchError:
        if recorded:
            logger.warning("[CLI] grid aborted; %d cell(s) stay recorded in %s, rerun with --overwrite",
                           len(recorded), store.directory)
        raise
    failed = [row.cell.cell_id for row in rows if not row.ok]
    logger.info("[CLI] %d cell(s) recorded in %s, %d failed", len(rows), store.directory, len(failed))
    for cell_id in failed:
        logger.warning("[CLI] failed cell: %s", cell_id)
    return EXIT_OK


def cmd_report(args, settings: Settings) -> int:
    store = ResultsStore(args.results or settings.results_dir)
    table = build_table(args.table, store.rows())
    _write_text(args.out, render(table, args.format))
    return EXIT_OK


# ── Parser ───────────────────────────────────────────────────

def build_parser() -> argparse.ArgumentParser:
    parser = WorkbenchArgumentParser(
        prog="workbench",
        description="Offensive-language classification workbench (OLID-format tweets).",
    )
    parser.add_argument("--log-level", default=None,
                        help="DEBUG, INFO, WARNING or ERROR (default: $WORKBENCH_LOG_LEVEL or INFO)")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=WorkbenchArgumentParser)

    p = sub.add_parser("preprocess", help="run the normalisation pipeline, write id<TAB>tokens")
    p.add_argument("--in", dest="input", required=True, help="OLID or id<TAB>tweet TSV")
    p.add_argument("--out", required=True, help="token file to write")
    p.add_argument("--config", help="experiment file whose [preprocess] section to use")
    p.set_defaults(handler=cmd_preprocess)

    p = sub.add_parser("train", help="train one model (first configured variant), save a checkpoint")
    p.add_argument("--config", required=True, help="experiment file")
    p.add_argument("--data", required=True, nargs="+", help="one or more OLID TSV files, combined")
    p.add_argument("--out", required=True, help="checkpoint directory")
    p.set_defaults(handler=cmd_train)

    p = sub.add_parser("evaluate", help="score a checkpoint on labelled data")
    p.add_argument("--ckpt", required=True, help="checkpoint directory")
    p.add_argument("--data", required=True, nargs="+", help="OLID TSV file(s)")
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.set_defaults(handler=cmd_evaluate)

    p = sub.add_parser("predict", help="label raw tweets, write id,label CSV")
    p.add_argument("--ckpt", required=True, help="checkpoint directory")
    p.add_argument("--in", dest="input", required=True, help="id<TAB>tweet TSV")
    p.add_argument("--out", required=True, help="CSV file to write")
    p.set_defaults(handler=cmd_predict)

    p = sub.add_parser("experiment", help="run an experiment grid into a results store")
    p.add_argument("--config", required=True, help="experiment file")
    p.add_argument("--data", required=True, nargs="+", help="one or more OLID TSV files, combined")
    p.add_argument("--results", help="results directory (default: $WORKBENCH_RESULTS_DIR or results/)")
    p.add_argument("--workers", type=int, default=1, help="grid cells trained concurrently (default 1)")
    p.add_argument("--overwrite", action="store_true", help="replace cells already in the store; a grid that aborts keeps the cells "
                        "it finished, so rerun it with this flag")
    p.add_argument("--no-progress", action="store_true", help="hide the progress bar")
    p.set_defaults(handler=cmd_experiment)

    p = sub.add_parser("report", help="render a results table")
    p.add_argument("--results", help="results directory (default: $WORKBENCH_RESULTS_DIR or results/)")
    p.add_argument("--table", required=True, choices=TABLES)
    p.add_argument("--format", choices=FORMATS, default="md")
    p.add_argument("--out", help="file to write (default: stdout)")
    p.set_defaults(handler=cmd_report)
    return parser


def main(argv=None) -> int:
    settings = load_settings()
    try:
        args = build_parser().parse_args(argv)
        configure_logging(args.log_level or settings.log_level)
        if getattr(args, "workers", 1) < 1:
            raise UsageError("--workers must be >= 1")
        return args.handler(args, settings)
    except WorkbenchError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
