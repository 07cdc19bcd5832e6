"""Source adapters and fetch jobs feeding the corpus store."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import random
from dataclasses import dataclass, field
from datetime import date, datetime, timezone
from pathlib import Path
from typing import Protocol

from .corpus import (
    CorpusStore,
    Platform,
    RawPost,
    ValidationError,
    author_digest,
    dedup_key,
    raw_from_dict,
)
from .retry import BackoffPolicy, Clock, RateLimiter, SystemClock, with_retries

logger = logging.getLogger(__name__)


class FixtureError(ValueError):
    pass


class TransportError(RuntimeError):
    """Raised by adapters for retryable transport failures."""


class IngestAborted(RuntimeError):
    def __init__(self, message: str, stats: IngestStats):
        super().__init__(message)
        self.stats = stats


@dataclass(frozen=True)
class Window:
    since: datetime  # inclusive
    until: datetime  # exclusive

    def __post_init__(self):
        if not self.since < self.until:
            raise ValueError("window requires since < until")

    def contains(self, ts: datetime) -> bool:
        return self.since <= ts < self.until


@dataclass
class Page:
    posts: list[RawPost]
    next_cursor: str | None = None


class SourceAdapter(Protocol):
    platform: Platform

    def fetch(self, query: str, window: Window, cursor: str | None) -> Page: ...


@dataclass
class FetchJob:
    source: Platform
    query: str
    window: Window
    rate_limit: int = 60
    max_pages: int | None = None

    def __post_init__(self):
        if self.rate_limit < 1:
            raise ValueError("rate_limit must be >= 1")
        if self.max_pages is not None and self.max_pages < 1:
            raise ValueError("max_pages must be positive")


@dataclass
class IngestStats:
    fetched: int = 0
    stored: int = 0
    duplicates: int = 0
    skipped_invalid: int = 0
    pages: int = 0
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "fetched": self.fetched,
            "stored": self.stored,
            "duplicates": self.duplicates,
            "skipped_invalid": self.skipped_invalid,
        }


def _post_id(platform: str, platform_id: str) -> str:
    return hashlib.sha256(f"{platform}:{platform_id}".encode("utf-8")).hexdigest()[:16]


def record_to_post(data: dict, salt: str = "") -> RawPost:
    """Parse a corpus-format record.

    Records carrying a native ``author_id`` instead of ``author_hash`` are
    anonymized with ``salt``; a missing ``id`` is derived from the dedup key.
    """
    if isinstance(data, dict):
        data = dict(data)
        if "author_hash" not in data and "author_id" in data:
            data["author_hash"] = author_digest(str(data.pop("author_id")), salt)
        if "id" not in data and "platform" in data and "platform_id" in data:
            data["id"] = _post_id(str(data["platform"]), str(data["platform_id"]))
    return raw_from_dict(data)


def load_fixture(path: str | Path, salt: str = "") -> list[RawPost]:
    path = Path(path)
    if not path.is_file():
        raise FixtureError(f"fixture not found: {path}")
    posts: list[RawPost] = []
    bad = 0
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                posts.append(record_to_post(json.loads(line), salt))
            except (ValueError, ValidationError) as exc:
                bad += 1
                logger.warning("%s: line %d: unparseable record (%s)", path, lineno, exc)
    if bad and not posts:
        raise FixtureError(f"{path}: no parseable records in {bad} lines; wrong format?")
    return posts


def load_trends_series(path: str | Path) -> list[RawPost]:
    """Map a Google Trends export (``date,query,interest``) onto synthetic posts."""
    path = Path(path)
    if not path.is_file():
        raise FixtureError(f"trends file not found: {path}")
    posts: list[RawPost] = []
    with path.open(encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["date", "query", "interest"]:
            raise FixtureError(f"{path}: expected header 'date,query,interest', got {header!r}")
        for lineno, row in enumerate(reader, start=2):
            if not row or not any(cell.strip() for cell in row):
                continue
            if len(row) != 3:
                logger.warning("%s: line %d: expected 3 columns", path, lineno)
                continue
            day, query, interest = (cell.strip() for cell in row)
            try:
                value = int(interest)
            except ValueError:
                try:
                    value = float(interest)
                except ValueError:
                    logger.warning("%s: line %d: non-numeric interest %r", path, lineno, interest)
                    continue
            try:
                created = datetime.combine(date.fromisoformat(day), datetime.min.time(), tzinfo=timezone.utc)
            except ValueError:
                logger.warning("%s: line %d: bad date %r", path, lineno, day)
                continue
            if not query:
                logger.warning("%s: line %d: empty query", path, lineno)
                continue
            platform_id = f"{day}:{query}"
            posts.append(
                RawPost(
                    id=_post_id(Platform.GOOGLE_TRENDS.value, platform_id),
                    platform=Platform.GOOGLE_TRENDS,
                    platform_id=platform_id,
                    author_hash=author_digest("google_trends", ""),
                    created_at=created,
                    fetched_at=created,
                    text=query,
                    lang="und",
                    source_query=f"{query}#interest={value}",
                )
            )
    return posts


class FixtureAdapter:
    """Serves the ``platform`` posts of a fixture file in fixed-size pages.

    Cursors are decimal offsets into the window-filtered post list (file
    order), so repeated fetches are deterministic.
    """

    def __init__(self, posts: list[RawPost], platform: Platform, page_size: int = 100):
        self.platform = Platform(platform)
        self.page_size = page_size
        self._posts = [p for p in posts if p.platform == self.platform]
        self.requests = 0

    @classmethod
    def from_file(cls, path: str | Path, platform: Platform, page_size: int = 100, salt: str = "") -> FixtureAdapter:
        return cls(load_fixture(path, salt), platform, page_size)

    def fetch(self, query: str, window: Window, cursor: str | None) -> Page:
        self.requests += 1
        matching = [p for p in self._posts if window.contains(p.created_at)]
        start = int(cursor) if cursor else 0
        end = start + self.page_size
        return Page(matching[start:end], str(end) if end < len(matching) else None)


class RecordedAdapter:
    """Replays a directory of recorded responses.

    ``meta.json`` holds ``{"platform": ..., "cursors": [c1, c2, ...]}`` where
    ``cursors[i]`` is the cursor returned with ``page-{i+1:02d}.jsonl``; the
    last page's cursor is null. Posts outside the window are filtered out.
    """

    def __init__(self, directory: str | Path, salt: str = ""):
        self.directory = Path(directory)
        meta = json.loads((self.directory / "meta.json").read_text(encoding="utf-8"))
        self.platform = Platform(meta["platform"])
        self.cursors: list[str | None] = list(meta["cursors"])
        self.salt = salt
        self.requests = 0

    def fetch(self, query: str, window: Window, cursor: str | None) -> Page:
        self.requests += 1
        idx = 0 if cursor is None else self.cursors.index(cursor) + 1
        path = self.directory / f"page-{idx + 1:02d}.jsonl"
        if not path.exists():
            raise TransportError(f"no recorded response {path.name}")
        posts = [p for p in load_fixture(path, self.salt) if window.contains(p.created_at)]
        return Page(posts, self.cursors[idx] if idx < len(self.cursors) else None)


def run_job(
    job: FetchJob,
    adapter: SourceAdapter,
    store: CorpusStore,
    *,
    clock: Clock | None = None,
    backoff: BackoffPolicy = BackoffPolicy(),
    rng: random.Random | None = None,
) -> IngestStats:
    """Follow the adapter's cursor chain and upsert every valid post.

    Raises :class:`IngestAborted` (carrying the partial stats) once a page
    keeps failing after all retry attempts.
    """
    if Platform(adapter.platform) != Platform(job.source):
        raise ValueError(f"adapter serves {adapter.platform.value}, job wants {Platform(job.source).value}")
    clock = clock or SystemClock()
    rng = rng or random.Random(0)
    limiter = RateLimiter(job.rate_limit, clock)
    stats = IngestStats()
    cursor: str | None = None
    while job.max_pages is None or stats.pages < job.max_pages:
        try:
            page = with_retries(
                lambda: adapter.fetch(job.query, job.window, cursor),
                (TransportError,),
                backoff,
                clock,
                rng,
                before_attempt=limiter.acquire,
            )
        except TransportError as exc:
            raise IngestAborted(f"{job.source.value}: page {stats.pages + 1} failed: {exc}", stats) from exc
        stats.pages += 1
        valid = []
        for post in page.posts:
            stats.fetched += 1
            try:
                post.validate()
                if post.platform != job.source:
                    raise ValidationError("platform", f"{post.platform.value} post from {job.source.value} job")
                if not job.window.contains(post.created_at):
                    raise ValidationError("created_at", "outside job window")
            except ValidationError as exc:
                stats.skipped_invalid += 1
                stats.warnings.append(f"{dedup_key(post)}: {exc}")
                continue
            valid.append(post)
        for outcome in store.upsert_many(valid):
            if outcome == "stored":
                stats.stored += 1
            else:
                stats.duplicates += 1
        if page.next_cursor is None:
            break
        cursor = page.next_cursor
    return stats

