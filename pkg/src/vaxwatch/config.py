"""Pipeline configuration: one JSON file, paths relative to the file."""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field
from datetime import datetime
from pathlib import Path

from .corpus import Platform, SentimentLabel, parse_ts
from .normalize import CleanConfig
from .report import FORMATS
from .trends import Granularity


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class SourceConfig:
    source: Platform
    fixture: Path | None = None
    trends: Path | None = None
    recorded: Path | None = None
    query: str = ""


@dataclass
class IngestConfig:
    sources: list[SourceConfig] = field(default_factory=list)
    since: datetime = parse_ts("2000-01-01T00:00:00Z")
    until: datetime = parse_ts("2100-01-01T00:00:00Z")
    rate_limit: int = 60
    page_size: int = 100
    max_pages: int | None = None
    author_salt: str = ""


@dataclass
class RelevanceConfig:
    model: Path | None = None
    tau_r: float = 0.75
    use_provider: bool = False
    lexicon: Path | None = None


@dataclass
class SentimentConfig:
    model: Path | None = None
    tau_s: float = 0.70
    use_provider: bool = False
    alpha: float = 1.0


@dataclass
class ConcernConfig:
    taxonomy: Path | None = None
    use_provider: bool = False


@dataclass
class TopicsConfig:
    distance_threshold: float = 0.6
    min_topic_size: int = 10
    concern_grouping: bool = True
    sentiment_filter: frozenset[SentimentLabel] | None = None
    use_provider: bool = False
    label_k: int = 4


@dataclass
class ProviderConfig:
    id: str
    endpoint: str
    model: str
    credential_env: str | None = None
    rate_limit: int = 60


@dataclass
class ReportConfig:
    granularity: Granularity = Granularity.MONTHLY
    formats: tuple[str, ...] = FORMATS
    out_dir: Path = Path("out")
    max_series_topics: int = 3


@dataclass
class PipelineConfig:
    path: Path | None
    digest: str
    store: Path
    clean: CleanConfig = CleanConfig()
    ingest: IngestConfig = field(default_factory=IngestConfig)
    relevance: RelevanceConfig = field(default_factory=RelevanceConfig)
    sentiment: SentimentConfig = field(default_factory=SentimentConfig)
    concerns: ConcernConfig = field(default_factory=ConcernConfig)
    topics: TopicsConfig = field(default_factory=TopicsConfig)
    providers: list[ProviderConfig] = field(default_factory=list)
    provider: str | None = None
    mock_provider: Path | None = None
    prompts: Path | None = None
    report: ReportConfig = field(default_factory=ReportConfig)
    seed: int = 0
    workers: int = field(default_factory=lambda: os.cpu_count() or 1)

    @property
    def any_provider_use(self) -> bool:
        return (
            self.relevance.use_provider
            or self.sentiment.use_provider
            or self.concerns.use_provider
            or self.topics.use_provider
        )


class _Reader:
    """Typed access into a nested dict, naming the dotted field on failure."""

    def __init__(self, data: dict, prefix: str, base: Path):
        if not isinstance(data, dict):
            raise ConfigError(prefix or "config", "expected a JSON object")
        self.data = data
        self.prefix = prefix
        self.base = base

    def name(self, key: str) -> str:
        return f"{self.prefix}.{key}" if self.prefix else key

    def sub(self, key: str) -> _Reader:
        return _Reader(self.data.get(key, {}) or {}, self.name(key), self.base)

    def get(self, key: str, kind, default=None):
        value = self.data.get(key, default)
        if value is None:
            return None
        if kind is bool:
            if not isinstance(value, bool):
                raise ConfigError(self.name(key), "expected true or false")
            return value
        if kind is int and (isinstance(value, bool) or not isinstance(value, int)):
            raise ConfigError(self.name(key), "expected an integer")
        if kind is float and (isinstance(value, bool) or not isinstance(value, (int, float))):
            raise ConfigError(self.name(key), "expected a number")
        if kind is str and not isinstance(value, str):
            raise ConfigError(self.name(key), "expected a string")
        return kind(value)

    def unit(self, key: str, default: float) -> float:
        value = self.get(key, float, default)
        if not 0.0 <= value <= 1.0:
            raise ConfigError(self.name(key), f"must lie in [0, 1], got {value}")
        return value

    def positive(self, key: str, kind, default):
        value = self.get(key, kind, default)
        if value is not None and value <= 0:
            raise ConfigError(self.name(key), "must be positive")
        return value

    def path(self, key: str, must_exist: bool = True, default: str | None = None) -> Path | None:
        value = self.get(key, str, default)
        if value is None:
            return None
        path = Path(value)
        if not path.is_absolute():
            path = self.base / path
        if must_exist and not path.exists():
            raise ConfigError(self.name(key), f"file not found: {path}")
        return path

    def enum(self, key: str, kind, default=None):
        value = self.data.get(key, default)
        if value is None:
            return None
        try:
            return kind(value)
        except ValueError:
            raise ConfigError(self.name(key), f"unknown value {value!r}") from None


def parse_config(data: dict, base: Path, path: Path | None = None) -> PipelineConfig:
    r = _Reader(data, "", base)
    raw = json.dumps(data, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
    digest = hashlib.sha256(raw.encode("utf-8")).hexdigest()

    store = r.path("store", must_exist=False)
    if store is None:
        raise ConfigError("store", "missing")

    c = r.sub("clean")
    punct = c.get("allowed_punct", str, ".,!?'-")
    clean = CleanConfig(
        min_tokens=c.positive("min_tokens", int, 4),
        allowed_punct=frozenset(punct),
        collapse_repeat_punct=c.get("collapse_repeat_punct", bool, True),
    )

    i = r.sub("ingest")
    sources = []
    for n, entry in enumerate(i.data.get("sources", []) or []):
        s = _Reader(entry, f"ingest.sources[{n}]", base)
        src = SourceConfig(
            source=s.enum("source", Platform),
            fixture=s.path("fixture"),
            trends=s.path("trends"),
            recorded=s.path("recorded"),
            query=s.get("query", str, ""),
        )
        if src.source is None:
            raise ConfigError(s.name("source"), "missing")
        if sum(x is not None for x in (src.fixture, src.trends, src.recorded)) != 1:
            raise ConfigError(s.prefix, "exactly one of fixture, trends, recorded is required")
        sources.append(src)
    try:
        since = parse_ts(i.get("since", str, "2000-01-01T00:00:00Z"))
        until = parse_ts(i.get("until", str, "2100-01-01T00:00:00Z"))
    except ValueError as exc:
        raise ConfigError("ingest.since", str(exc)) from None
    if not since < until:
        raise ConfigError("ingest.until", "must be later than ingest.since")
    ingest = IngestConfig(
        sources=sources,
        since=since,
        until=until,
        rate_limit=i.positive("rate_limit", int, 60),
        page_size=i.positive("page_size", int, 100),
        max_pages=i.positive("max_pages", int, None),
        author_salt=i.get("author_salt", str, ""),
    )

    rel = r.sub("relevance")
    relevance = RelevanceConfig(
        model=rel.path("model", must_exist=False),
        tau_r=rel.unit("tau_r", 0.75),
        use_provider=rel.get("use_provider", bool, False),
        lexicon=rel.path("lexicon"),
    )
    sen = r.sub("sentiment")
    sentiment = SentimentConfig(
        model=sen.path("model", must_exist=False),
        tau_s=sen.unit("tau_s", 0.70),
        use_provider=sen.get("use_provider", bool, False),
        alpha=sen.positive("alpha", float, 1.0),
    )
    con = r.sub("concerns")
    concerns = ConcernConfig(taxonomy=con.path("taxonomy"), use_provider=con.get("use_provider", bool, False))

    t = r.sub("topics")
    sfilter = t.data.get("sentiment_filter")
    if sfilter is not None:
        try:
            sfilter = frozenset(SentimentLabel(x) for x in sfilter)
        except (ValueError, TypeError):
            raise ConfigError("topics.sentiment_filter", f"expected labels from {[s.value for s in SentimentLabel]}") from None
    threshold = t.get("distance_threshold", float, 0.6)
    if not 0.0 <= threshold <= 2.0:
        raise ConfigError("topics.distance_threshold", "must lie in [0, 2]")
    topics = TopicsConfig(
        distance_threshold=threshold,
        min_topic_size=t.positive("min_topic_size", int, 10),
        concern_grouping=t.get("concern_grouping", bool, True),
        sentiment_filter=sfilter,
        use_provider=t.get("use_provider", bool, False),
        label_k=t.positive("label_k", int, 4),
    )

    providers = []
    for n, entry in enumerate(data.get("providers", []) or []):
        p = _Reader(entry, f"providers[{n}]", base)
        for key in ("id", "endpoint", "model"):
            if p.get(key, str) is None:
                raise ConfigError(p.name(key), "missing")
        providers.append(
            ProviderConfig(
                id=p.get("id", str),
                endpoint=p.get("endpoint", str),
                model=p.get("model", str),
                credential_env=p.get("credential_env", str),
                rate_limit=p.positive("rate_limit", int, 60),
            )
        )
    provider = r.get("provider", str)
    if provider is not None and provider not in {p.id for p in providers}:
        raise ConfigError("provider", f"no provider with id {provider!r}")

    rep = r.sub("report")
    formats = rep.data.get("formats", list(FORMATS))
    if not isinstance(formats, list) or not formats or any(f not in FORMATS for f in formats):
        raise ConfigError("report.formats", f"expected a non-empty subset of {list(FORMATS)}")
    report = ReportConfig(
        granularity=rep.enum("granularity", Granularity, "monthly"),
        formats=tuple(f for f in FORMATS if f in formats),
        out_dir=rep.path("out_dir", must_exist=False, default="out"),
        max_series_topics=rep.positive("max_series_topics", int, 3),
    )

    cfg = PipelineConfig(
        path=path,
        digest=digest,
        store=store,
        clean=clean,
        ingest=ingest,
        relevance=relevance,
        sentiment=sentiment,
        concerns=concerns,
        topics=topics,
        providers=providers,
        provider=provider,
        mock_provider=r.path("mock_provider"),
        prompts=r.path("prompts"),
        report=report,
        seed=r.get("seed", int, 0),
        workers=r.positive("workers", int, os.cpu_count() or 1),
    )
    if cfg.any_provider_use and cfg.mock_provider is None and not cfg.providers:
        raise ConfigError("providers", "a stage has use_provider=true but no provider or mock_provider is configured")
    return cfg


def load_config(path: str | Path) -> PipelineConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError("config", f"file not found: {path}") from None
    except ValueError as exc:
        raise ConfigError("config", f"invalid JSON: {exc}") from None
    return parse_config(data, path.resolve().parent, path)
