"""Stage orchestration shared by the CLI commands."""

from __future__ import annotations

import json
import logging
import random
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence, TypeVar

from .config import PipelineConfig
from .corpus import (
    Concern,
    CorpusStore,
    Platform,
    PostFilter,
    ProcessedPost,
    Relevance,
    SentimentLabel,
    VaccineTag,
)
from .ingest import (
    FetchJob,
    FixtureAdapter,
    IngestStats,
    RecordedAdapter,
    Window,
    load_fixture,
    load_trends_series,
    run_job,
)
from .normalize import clean
from .providers import HttpProvider, MockProvider, ProviderClient, ResponseCache, load_templates
from .relevance import EnsemblePolicy, VaccineLexicon, classify_relevance, tag_vaccines
from .report import ReportInputs, render_report
from .sentiment import (
    SENTIMENT_LABELS,
    BaselineModel,
    FallbackPolicy,
    ModelError,
    RoutingLog,
    classify_with_fallback,
    train,
)
from .topics import ClusterParams, ConcernTaxonomy, FitParams, TopicModel, categorize_concern, fit_topics
from .trends import bucket_counts, sentiment_distribution, topic_table

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

LATEST_TOPICS = "topics-latest.json"


class StageError(RuntimeError):
    pass


def _pmap(fn: Callable[[T], R], items: Sequence[T], workers: int) -> list[R]:
    if workers <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _merge(total: RoutingLog, parts: Iterable[RoutingLog]) -> RoutingLog:
    for part in parts:
        total.baseline += part.baseline
        total.provider_calls += part.provider_calls
        total.degraded += part.degraded
        total.warnings.extend(part.warnings)
    return total


def _log_dict(log: RoutingLog, **extra) -> dict:
    return {**extra, "baseline": log.baseline, "provider_calls": log.provider_calls, "degraded": log.degraded}


def build_provider(cfg: PipelineConfig, store_root: Path | None = None) -> ProviderClient | None:
    if cfg.mock_provider is not None:
        provider = MockProvider.from_file(cfg.mock_provider)
    elif cfg.providers:
        pc = next((p for p in cfg.providers if p.id == cfg.provider), cfg.providers[0])
        provider = HttpProvider(pc.id, pc.endpoint, pc.model, pc.credential_env, pc.rate_limit)
    else:
        return None
    cache = ResponseCache(store_root if store_root is not None else cfg.store)
    return ProviderClient(provider, load_templates(cfg.prompts), cache, seed=cfg.seed)


def open_store(cfg: PipelineConfig, writable: bool = True) -> CorpusStore:
    return CorpusStore(cfg.store, writable=writable)


# -- ingest ------------------------------------------------------------------


def stage_ingest(
    cfg: PipelineConfig,
    store: CorpusStore,
    source: Platform | None = None,
    fixture: Path | None = None,
    trends: Path | None = None,
) -> dict[str, IngestStats]:
    """Run one job per configured source (or the single source given by flags)."""
    window = Window(cfg.ingest.since, cfg.ingest.until)
    jobs = []
    if source is not None and (fixture is not None or trends is not None):
        jobs.append((Platform(source), fixture, trends, None, ""))
    else:
        for s in cfg.ingest.sources:
            if source is None or s.source == Platform(source):
                jobs.append((s.source, s.fixture, s.trends, s.recorded, s.query))
    if not jobs:
        raise StageError("no ingest source configured" + (f" for {Platform(source).value}" if source else ""))
    results: dict[str, IngestStats] = {}
    for n, (platform, fix, trn, rec, query) in enumerate(jobs):
        if trn is not None:
            adapter = FixtureAdapter(load_trends_series(trn), Platform.GOOGLE_TRENDS, cfg.ingest.page_size)
        elif rec is not None:
            adapter = RecordedAdapter(rec, cfg.ingest.author_salt)
        else:
            adapter = FixtureAdapter(load_fixture(fix, cfg.ingest.author_salt), platform, cfg.ingest.page_size)
        job = FetchJob(platform, query, window, cfg.ingest.rate_limit, cfg.ingest.max_pages)
        stats = run_job(job, adapter, store, rng=random.Random(cfg.seed + n))
        key = platform.value if platform.value not in results else f"{platform.value}#{n}"
        results[key] = stats
    return results


# -- normalize ---------------------------------------------------------------


def stage_normalize(cfg: PipelineConfig, store: CorpusStore) -> dict:
    processed = kept = 0
    updates = []
    for post in store.query():
        processed += 1
        result = clean(post.text, cfg.clean)
        kept += result.kept
        if post.clean_text == result.clean_text and post.kept == result.kept:
            continue
        # clean text changed (or first pass): any downstream labels are stale
        updates.append(post.evolve(clean_text=result.clean_text, kept=result.kept, relevance=None,
                                   vaccine_tags=frozenset(), sentiment=None, concerns=frozenset(), topic_id=None))
    store.write_versions(updates)
    return {"processed": processed, "kept": kept, "dropped": processed - kept}


# -- classify ----------------------------------------------------------------


def _load_model(path: Path | None, what: str) -> BaselineModel:
    if path is None:
        raise StageError(f"{what}.model is not configured")
    try:
        return BaselineModel.load(path)
    except FileNotFoundError:
        raise StageError(f"{what} model not found: {path}") from None
    except (ValueError, KeyError, ModelError) as exc:
        raise StageError(f"{what} model {path} is unreadable: {exc}") from None


def _is_relevant(post: ProcessedPost) -> bool:
    return post.kept and post.relevance is not None and post.relevance is not Relevance.UNRELATED


def classify_relevance_stage(cfg: PipelineConfig, store: CorpusStore, provider: ProviderClient | None) -> dict:
    model = _load_model(cfg.relevance.model, "relevance")
    lexicon = VaccineLexicon.load(cfg.relevance.lexicon)
    policy = EnsemblePolicy(cfg.relevance.tau_r)
    use = cfg.relevance.use_provider and provider is not None
    posts = list(store.query(PostFilter(kept=True)))

    def work(post: ProcessedPost):
        log, tag_log = RoutingLog(), RoutingLog()
        res = classify_relevance(post, model, provider if use else None, policy, log)
        if res.label is Relevance.UNRELATED:
            new = post.evolve(relevance=res.label, vaccine_tags=frozenset(), sentiment=None,
                              concerns=frozenset(), topic_id=None)
        else:
            new = post.evolve(relevance=res.label)
            new = new.evolve(vaccine_tags=tag_vaccines(new, lexicon, provider, use, tag_log))
        return new, log, tag_log

    out = _pmap(work, posts, cfg.workers)
    log = _merge(RoutingLog(), (o[1] for o in out))
    tag_log = _merge(RoutingLog(), (o[2] for o in out))
    changed = [new for (new, _, _), old in zip(out, posts) if new != old]
    store.write_versions(changed)
    by_label = {r.value: sum(1 for n, _, _ in out if n.relevance is r) for r in Relevance}
    return {
        **_log_dict(log, input=len(posts)),
        "labels": by_label,
        "relevant": len(posts) - by_label[Relevance.UNRELATED.value],
        "vaccine_tag_provider_calls": tag_log.provider_calls,
        "warnings": log.warnings + tag_log.warnings,
    }


def sentiment_routing(
    cfg: PipelineConfig, posts: Sequence[ProcessedPost], model: BaselineModel, provider: ProviderClient | None
) -> tuple[list[ProcessedPost], RoutingLog]:
    policy = FallbackPolicy(cfg.sentiment.tau_s)
    client = provider if cfg.sentiment.use_provider else None

    def work(post: ProcessedPost):
        log = RoutingLog()
        return post.evolve(sentiment=classify_with_fallback(model, client, policy, post.clean_text or "", log)), log

    out = _pmap(work, posts, cfg.workers)
    return [p for p, _ in out], _merge(RoutingLog(), (log for _, log in out))


def classify_sentiment_stage(cfg: PipelineConfig, store: CorpusStore, provider: ProviderClient | None) -> dict:
    model = _load_model(cfg.sentiment.model, "sentiment")
    if tuple(model.labels) != SENTIMENT_LABELS:
        raise StageError(f"sentiment model labels {model.labels} differ from {SENTIMENT_LABELS}")
    posts = [p for p in store.query(PostFilter(kept=True)) if _is_relevant(p)]
    new, log = sentiment_routing(cfg, posts, model, provider)
    store.write_versions(n for n, o in zip(new, posts) if n != o)
    labels = {s.value: sum(1 for p in new if p.sentiment.label is s) for s in SentimentLabel}
    return {**_log_dict(log, input=len(posts)), "labels": labels, "warnings": log.warnings}


def classify_concern_stage(cfg: PipelineConfig, store: CorpusStore, provider: ProviderClient | None) -> dict:
    taxonomy = ConcernTaxonomy.load(cfg.concerns.taxonomy)
    use = cfg.concerns.use_provider and provider is not None
    posts = [p for p in store.query(PostFilter(kept=True)) if _is_relevant(p)]

    def work(post: ProcessedPost):
        log = RoutingLog()
        return post.evolve(concerns=categorize_concern(post, taxonomy, provider, use, log)), log

    out = _pmap(work, posts, cfg.workers)
    log = _merge(RoutingLog(), (lg for _, lg in out))
    store.write_versions(n for (n, _), o in zip(out, posts) if n != o)
    counts = {c.value: sum(1 for n, _ in out if c in n.concerns) for c in Concern}
    return {
        "input": len(posts),
        "provider_calls": log.provider_calls,
        "degraded": log.degraded,
        "with_concern": sum(1 for n, _ in out if n.concerns),
        "concerns": counts,
        "warnings": log.warnings,
    }


CLASSIFY_STAGES = ("relevance", "sentiment", "concern")


def stage_classify(cfg: PipelineConfig, store: CorpusStore, stage: str | None = None,
                   provider: ProviderClient | None = None) -> dict:
    provider = provider if provider is not None else build_provider(cfg)
    stages = CLASSIFY_STAGES if stage is None else (stage,)
    out = {}
    for name in stages:
        if name == "relevance":
            out[name] = classify_relevance_stage(cfg, store, provider)
        elif name == "sentiment":
            out[name] = classify_sentiment_stage(cfg, store, provider)
        elif name == "concern":
            out[name] = classify_concern_stage(cfg, store, provider)
        else:
            raise StageError(f"unknown classify stage {name!r}")
    return out


# -- topics ------------------------------------------------------------------


@dataclass
class TopicsOutcome:
    models: dict[str, TopicModel]
    files: dict[str, Path]
    skipped: dict[str, int]
    input: int
    warnings: list[str] = field(default_factory=list)


def topic_candidates(store: CorpusStore, sentiment_filter=None) -> list[ProcessedPost]:
    posts = [p for p in store.query(PostFilter(kept=True)) if _is_relevant(p)]
    if sentiment_filter:
        posts = [p for p in posts if p.sentiment is not None and p.sentiment.label in sentiment_filter]
    return posts


def stage_topics(
    cfg: PipelineConfig,
    store: CorpusStore,
    concern: Concern | None = None,
    sentiment_filter: frozenset[SentimentLabel] | None = None,
    provider: ProviderClient | None = None,
) -> TopicsOutcome:
    provider = provider if provider is not None else build_provider(cfg)
    sfilter = sentiment_filter if sentiment_filter is not None else cfg.topics.sentiment_filter
    posts = topic_candidates(store, sfilter)
    if not posts:
        raise StageError("no classified posts to fit topics on (run normalize and classify first)")
    params = FitParams(
        cluster=ClusterParams(cfg.topics.distance_threshold, cfg.topics.min_topic_size),
        label_k=cfg.topics.label_k,
        use_provider=cfg.topics.use_provider and provider is not None,
    )
    grouping = cfg.topics.concern_grouping or concern is not None
    log = RoutingLog()
    result = fit_topics(posts, params, grouping, provider, log, [concern] if concern is not None else None)
    model_dir = Path(cfg.store) / "models"
    files = {group: model.dump(model_dir) for group, model in result.models.items()}
    (model_dir).mkdir(parents=True, exist_ok=True)
    (model_dir / LATEST_TOPICS).write_text(
        json.dumps({g: f.name for g, f in sorted(files.items())}, indent=1) + "\n", encoding="utf-8"
    )
    # a post's topic_id is its topic in the first group (concern enum order) it was fit in
    topic_of: dict[str, int] = {}
    for group in result.models:
        for key, tid in result.models[group].assignments.items():
            topic_of.setdefault(key, tid)
    updates = []
    for post in store.query(PostFilter(kept=True)):
        tid = topic_of.get(post.key)
        if tid != post.topic_id:
            updates.append(post.evolve(topic_id=tid))
    store.write_versions(updates)
    return TopicsOutcome(result.models, files, result.skipped, len(posts), log.warnings)


def load_latest_topics(cfg: PipelineConfig) -> dict[str, TopicModel]:
    model_dir = Path(cfg.store) / "models"
    latest = model_dir / LATEST_TOPICS
    if not latest.exists():
        return {}
    names = json.loads(latest.read_text(encoding="utf-8"))
    return {
        group: TopicModel.from_dict(json.loads((model_dir / name).read_text(encoding="utf-8")))
        for group, name in names.items()
    }


# -- report ------------------------------------------------------------------


def stage_report(cfg: PipelineConfig, store: CorpusStore) -> list[dict]:
    posts = list(store.query())
    by_key = {p.key: p for p in posts}
    with_sentiment = [p for p in posts if p.sentiment is not None]
    models = load_latest_topics(cfg)
    gran = cfg.report.granularity

    inputs = ReportInputs(
        metadata={
            "config_digest": cfg.digest[:16],
            "records": str(len(posts)),
            "kept": str(sum(p.kept for p in posts)),
            "relevant": str(sum(_is_relevant(p) for p in posts)),
            "covid19_tagged": str(sum(VaccineTag.COVID19 in p.vaccine_tags for p in posts)),
            "granularity": gran.value,
        },
        distribution=sentiment_distribution(with_sentiment) if with_sentiment else None,
    )
    for group in sorted(models):
        inputs.tables.append(topic_table(models[group]))
    for c in Concern:
        series = bucket_counts(posts, gran, f"concern {c.value}", lambda p, c=c: c in p.concerns)
        if series.buckets:
            inputs.series.append(series)
    for group in sorted(models):
        model = models[group]
        for topic in sorted(model.topics, key=lambda t: (-t.size, t.label))[: cfg.report.max_series_topics]:
            members = [by_key[k] for k, tid in model.assignments.items() if tid == topic.id and k in by_key]
            inputs.series.append(bucket_counts(members, gran, f"{group} topic {topic.id} {topic.label}"))
    return render_report(inputs, cfg.report.out_dir, cfg.report.formats)


# -- training ----------------------------------------------------------------


def load_labeled(path: Path, cfg: PipelineConfig, labels: Sequence[str]) -> list[tuple[str, str]]:
    """Labeled fixture: corpus records with an extra ``label`` field."""
    examples = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                text, label = rec["text"], rec["label"]
            except (ValueError, KeyError, TypeError) as exc:
                logger.warning("%s: line %d: unusable labeled record (%s)", path, lineno, exc)
                continue
            if label not in labels:
                logger.warning("%s: line %d: label %r not in %s", path, lineno, label, list(labels))
                continue
            examples.append((clean(text, cfg.clean).clean_text, label))
    return examples


def train_model(cfg: PipelineConfig, labeled: Path, task: str = "sentiment") -> Path:
    from .relevance import RELEVANCE_LABELS

    labels = SENTIMENT_LABELS if task == "sentiment" else RELEVANCE_LABELS
    target = cfg.sentiment.model if task == "sentiment" else cfg.relevance.model
    if target is None:
        raise StageError(f"{task}.model path is not configured")
    examples = load_labeled(labeled, cfg, labels)
    model = train(examples, cfg.sentiment.alpha, labels)
    return model.save(target)


# -- full run ----------------------------------------------------------------


def run_pipeline(cfg: PipelineConfig) -> dict:
    """All stages in order; writes and returns the run manifest."""
    timings: dict[str, float] = {}
    counts: dict[str, dict] = {}
    warnings: list[str] = []

    def timed(name: str, fn):
        t0 = time.perf_counter()
        value = fn()
        timings[name] = round(time.perf_counter() - t0, 6)
        return value

    with open_store(cfg) as store:
        provider = build_provider(cfg)
        ingest = timed("ingest", lambda: stage_ingest(cfg, store))
        counts["ingest"] = {
            "fetched": sum(s.fetched for s in ingest.values()),
            "stored": sum(s.stored for s in ingest.values()),
            "duplicates": sum(s.duplicates for s in ingest.values()),
            "skipped_invalid": sum(s.skipped_invalid for s in ingest.values()),
            "store_records": len(store),
        }
        for s in ingest.values():
            warnings.extend(s.warnings)
        counts["normalize"] = timed("normalize", lambda: stage_normalize(cfg, store))
        for name in CLASSIFY_STAGES:
            res = timed(name, lambda name=name: stage_classify(cfg, store, name, provider)[name])
            warnings.extend(res.pop("warnings", []))
            counts[name] = res
        topics = timed("topics", lambda: stage_topics(cfg, store, provider=provider))
        warnings.extend(topics.warnings)
        counts["topics"] = {
            "input": topics.input,
            "models": {g: {"topics": len(m.topics), "outliers": m.outliers} for g, m in sorted(topics.models.items())},
            "skipped_groups": dict(sorted(topics.skipped.items())),
        }
        outputs = timed("report", lambda: stage_report(cfg, store))
    manifest = {
        "config_digest": cfg.digest,
        "stage_counts": counts,
        "stage_timings": timings,
        "warnings": warnings,
        "outputs": outputs,
    }
    out = Path(cfg.report.out_dir) / "manifest.json"
    out.write_text(json.dumps(manifest, indent=1, ensure_ascii=False) + "\n", encoding="utf-8")
    return manifest
