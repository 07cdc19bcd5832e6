"""``vaxwatch`` command line.

Exit codes: 0 success, 1 runtime failure, 2 usage or config error. Errors
go to stderr as one line of JSON.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from .config import ConfigError, PipelineConfig, load_config
from .corpus import Concern, Platform, SentimentLabel, StoreError, ValidationError
from .ingest import FixtureError, IngestAborted
from .pipeline import (
    CLASSIFY_STAGES,
    StageError,
    open_store,
    run_pipeline,
    stage_classify,
    stage_ingest,
    stage_normalize,
    stage_report,
    stage_topics,
    train_model,
)
from .providers import ProviderError, TemplateError
from .report import ReportError
from .sentiment import TrainingError
from .topics import TopicError
from .trends import TrendError, topic_table

RUNTIME_ERRORS = (
    StageError,
    StoreError,
    ValidationError,
    FixtureError,
    IngestAborted,
    ProviderError,
    TemplateError,
    ReportError,
    TrainingError,
    TopicError,
    TrendError,
    OSError,
)


class UsageError(Exception):
    pass


def _sentiment_filter(value: str) -> frozenset[SentimentLabel]:
    try:
        return frozenset(SentimentLabel(v.strip()) for v in value.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected labels from {[s.value for s in SentimentLabel]}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vaxwatch", description="Vaccine concern surveillance pipeline.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def with_config(p: argparse.ArgumentParser) -> argparse.ArgumentParser:
        p.add_argument("--config", required=True, type=Path, help="pipeline config JSON")
        return p

    p = with_config(sub.add_parser("ingest", help="fetch posts into the store"))
    p.add_argument("--source", choices=[pl.value for pl in Platform])
    src = p.add_mutually_exclusive_group()
    src.add_argument("--fixture", type=Path, help="corpus-format JSONL file")
    src.add_argument("--trends", type=Path, help="Google Trends CSV (date,query,interest)")

    with_config(sub.add_parser("normalize", help="clean text and drop short posts"))

    p = with_config(sub.add_parser("classify", help="relevance, sentiment and concern labels"))
    p.add_argument("--stage", choices=CLASSIFY_STAGES)
    p.add_argument("--tau-s", type=float, help="override sentiment.tau_s")
    p.add_argument("--tau-r", type=float, help="override relevance.tau_r")

    topics = sub.add_parser("topics", help="topic modeling")
    tsub = topics.add_subparsers(dest="topics_command", required=True)
    p = with_config(tsub.add_parser("fit", help="fit topic models and print topic tables"))
    p.add_argument("--concern", choices=[c.value for c in Concern])
    p.add_argument("--sentiment-filter", type=_sentiment_filter, help="comma-separated labels, e.g. negative,neutral")

    with_config(sub.add_parser("report", help="render the report from stored results"))

    pipe = sub.add_parser("pipeline", help="end-to-end run")
    psub = pipe.add_subparsers(dest="pipeline_command", required=True)
    with_config(psub.add_parser("run", help="run every stage in order"))

    for name, task in (("train-sentiment", "sentiment"), ("train-relevance", "relevance")):
        p = with_config(sub.add_parser(name, help=f"train the {task} baseline model"))
        p.add_argument("--labeled", required=True, type=Path, help="JSONL records with a label field")
        p.set_defaults(task=task)
    return parser


def _emit(obj) -> None:
    print(json.dumps(obj, indent=1, ensure_ascii=False, default=str))


def _fail(kind: str, message: str, code: int, **extra) -> int:
    print(json.dumps({"error": kind, "message": message, **extra}, ensure_ascii=False), file=sys.stderr)
    return code


def _apply_overrides(cfg: PipelineConfig, args) -> PipelineConfig:
    for flag, section, attr in (("tau_s", "sentiment", "tau_s"), ("tau_r", "relevance", "tau_r")):
        value = getattr(args, flag, None)
        if value is None:
            continue
        if not 0.0 <= value <= 1.0:
            raise ConfigError(f"--{flag.replace('_', '-')}", "must lie in [0, 1]")
        cfg = replace(cfg, **{section: replace(getattr(cfg, section), **{attr: value})})
    return cfg


def dispatch(args, cfg: PipelineConfig) -> int:
    cmd = args.command
    if cmd == "pipeline":
        manifest = run_pipeline(cfg)
        _emit({"manifest": str(Path(cfg.report.out_dir) / "manifest.json"), "outputs": manifest["outputs"]})
        return 0
    if cmd in ("train-sentiment", "train-relevance"):
        print(train_model(cfg, args.labeled, args.task))
        return 0
    with open_store(cfg) as store:
        if cmd == "ingest":
            if (args.fixture or args.trends) and not args.source:
                raise UsageError("--fixture/--trends require --source")
            stats = stage_ingest(cfg, store, args.source, args.fixture, args.trends)
            _emit({k: v.to_dict() for k, v in stats.items()})
        elif cmd == "normalize":
            _emit(stage_normalize(cfg, store))
        elif cmd == "classify":
            _emit(stage_classify(cfg, store, args.stage))
        elif cmd == "topics":
            concern = Concern(args.concern) if args.concern else None
            outcome = stage_topics(cfg, store, concern, args.sentiment_filter)
            for group, model in sorted(outcome.models.items()):
                table = topic_table(model)
                print(f"# {group}  ({outcome.files[group]})")
                print("S.No\tTopic of Discussion\tComments Count")
                for row in table.rows:
                    print(f"{row.serial}\t{row.label}\t{row.count}")
                print(f"outliers\t{table.outliers}")
            for group, size in sorted(outcome.skipped.items()):
                print(f"# {group} skipped: {size} posts below min_topic_size {cfg.topics.min_topic_size}")
        elif cmd == "report":
            _emit(stage_report(cfg, store))
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits 2 with usage on bad flags
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _apply_overrides(load_config(args.config), args)
    except ConfigError as exc:
        return _fail("config", str(exc), 2, field=exc.field)
    try:
        return dispatch(args, cfg)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        return _fail("usage", str(exc), 2)
    except IngestAborted as exc:
        return _fail("ingest_aborted", str(exc), 1, stats=exc.stats.to_dict())
    except RUNTIME_ERRORS as exc:
        return _fail(type(exc).__name__, str(exc), 1)


if __name__ == "__main__":
    raise SystemExit(main())
