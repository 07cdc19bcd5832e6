"""Sentiment distributions, topic tables and calendar-bucketed series."""

from __future__ import annotations

import enum
from collections import Counter
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction
from typing import Callable, Iterable

from .corpus import ProcessedPost, SentimentLabel
from .topics import TopicModel


class Granularity(str, enum.Enum):
    DAILY = "daily"
    WEEKLY = "weekly"
    MONTHLY = "monthly"


class TrendError(ValueError):
    pass


def percent(count: int, total: int) -> Decimal:
    """``100 * count / total`` rounded half-up to two decimals, computed exactly."""
    exact = Fraction(100 * count, total)
    return (Decimal(exact.numerator) / Decimal(exact.denominator)).quantize(Decimal("0.01"), rounding=ROUND_HALF_UP)


@dataclass(frozen=True)
class SentimentDistribution:
    n_total: int
    n_negative: int
    n_neutral: int
    n_positive: int

    @property
    def pct_negative(self) -> Decimal:
        return percent(self.n_negative, self.n_total)

    @property
    def pct_neutral(self) -> Decimal:
        return percent(self.n_neutral, self.n_total)

    @property
    def pct_positive(self) -> Decimal:
        return percent(self.n_positive, self.n_total)

    def rows(self) -> list[tuple[str, int, Decimal]]:
        return [
            ("negative", self.n_negative, self.pct_negative),
            ("neutral", self.n_neutral, self.pct_neutral),
            ("positive", self.n_positive, self.pct_positive),
        ]


def sentiment_distribution(posts: Iterable[ProcessedPost]) -> SentimentDistribution:
    counts: Counter[SentimentLabel] = Counter()
    for post in posts:
        if post.sentiment is None:
            raise TrendError(f"{post.key} has no sentiment label")
        counts[post.sentiment.label] += 1
    total = sum(counts.values())
    if total == 0:
        raise TrendError("sentiment distribution of an empty stream is undefined")
    return SentimentDistribution(
        total, counts[SentimentLabel.NEGATIVE], counts[SentimentLabel.NEUTRAL], counts[SentimentLabel.POSITIVE]
    )


@dataclass(frozen=True)
class TableRow:
    serial: int
    label: str
    count: int


@dataclass(frozen=True)
class TopicTable:
    group: str
    rows: list[TableRow]
    outliers: int


def topic_table(model: TopicModel) -> TopicTable:
    ordered = sorted(model.topics, key=lambda t: (-t.size, t.label))
    rows = [TableRow(i, t.label, t.size) for i, t in enumerate(ordered, start=1)]
    return TopicTable(model.group, rows, model.outliers)


def bucket_start(ts: datetime, granularity: Granularity) -> datetime:
    ts = ts.astimezone(timezone.utc)
    day = datetime(ts.year, ts.month, ts.day, tzinfo=timezone.utc)
    if granularity is Granularity.DAILY:
        return day
    if granularity is Granularity.WEEKLY:
        return day - timedelta(days=day.weekday())
    return day.replace(day=1)


def next_bucket(start: datetime, granularity: Granularity) -> datetime:
    if granularity is Granularity.DAILY:
        return start + timedelta(days=1)
    if granularity is Granularity.WEEKLY:
        return start + timedelta(days=7)
    if start.month == 12:
        return start.replace(year=start.year + 1, month=1)
    return start.replace(month=start.month + 1)


@dataclass(frozen=True)
class TrendSeries:
    subject: str
    granularity: Granularity
    buckets: list[tuple[datetime, int]]

    @property
    def total(self) -> int:
        return sum(n for _, n in self.buckets)


def bucket_counts(
    posts: Iterable[ProcessedPost],
    granularity: Granularity | str,
    subject: str = "all",
    predicate: Callable[[ProcessedPost], bool] | None = None,
) -> TrendSeries:
    """Count matching posts per UTC calendar bucket, zero-filling interior gaps."""
    granularity = Granularity(granularity)
    counts: Counter[datetime] = Counter()
    for post in posts:
        if predicate is None or predicate(post):
            counts[bucket_start(post.created_at, granularity)] += 1
    if not counts:
        return TrendSeries(subject, granularity, [])
    start, last = min(counts), max(counts)
    buckets = []
    while start <= last:
        buckets.append((start, counts.get(start, 0)))
        start = next_bucket(start, granularity)
    return TrendSeries(subject, granularity, buckets)
