"""Post records and the append-only, line-delimited corpus store."""

from __future__ import annotations

import enum
import hashlib
import json
import logging
import os
from dataclasses import dataclass, fields, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Iterator

from filelock import FileLock

logger = logging.getLogger(__name__)

SEGMENT_MAX_BYTES = 64 * 1024 * 1024


class Platform(str, enum.Enum):
    X = "x"
    REDDIT = "reddit"
    YOUTUBE = "youtube"
    FACEBOOK = "facebook"
    GOOGLE_TRENDS = "google_trends"


class Relevance(str, enum.Enum):
    GENERAL_DISCUSSION = "general_discussion"
    PERSONAL_EXPERIENCE = "personal_experience"
    UNRELATED = "unrelated"


class VaccineTag(str, enum.Enum):
    COVID19 = "covid19"
    SHINGRIX = "shingrix"
    RSV = "rsv"
    HPV = "hpv"
    OTHER = "other"


class Concern(str, enum.Enum):
    SAFETY = "safety"
    SIDE_EFFECTS = "side_effects"
    MISINFORMATION = "misinformation"
    TRUST_IN_AUTHORITIES = "trust_in_authorities"
    PREVIOUS_NEGATIVE_EXPERIENCE = "previous_negative_experience"


class SentimentLabel(str, enum.Enum):
    NEGATIVE = "negative"
    NEUTRAL = "neutral"
    POSITIVE = "positive"


class ValidationError(ValueError):
    """A record violates the post schema; ``field`` names the offending field."""

    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


class StoreError(RuntimeError):
    pass


def format_ts(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


def parse_ts(value: str) -> datetime:
    if not isinstance(value, str):
        raise ValueError(f"timestamp must be a string, got {type(value).__name__}")
    text = value[:-1] + "+00:00" if value.endswith("Z") else value
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc).replace(microsecond=0)


@dataclass(frozen=True)
class SentimentResult:
    label: SentimentLabel
    confidence: float
    source: str  # "baseline" | "fallback"

    def to_dict(self) -> dict:
        return {"label": self.label.value, "confidence": self.confidence, "source": self.source}

    @classmethod
    def from_dict(cls, data: dict) -> SentimentResult:
        return cls(SentimentLabel(data["label"]), float(data["confidence"]), data["source"])


@dataclass(frozen=True)
class RawPost:
    id: str
    platform: Platform
    platform_id: str
    author_hash: str
    created_at: datetime
    fetched_at: datetime
    text: str
    lang: str = "und"
    source_query: str = ""

    def validate(self) -> None:
        if not isinstance(self.id, str) or not self.id:
            raise ValidationError("id", "must be a non-empty string")
        if not isinstance(self.platform, Platform):
            raise ValidationError("platform", f"unknown platform {self.platform!r}")
        if not isinstance(self.platform_id, str) or not self.platform_id:
            raise ValidationError("platform_id", "must be non-empty")
        if not isinstance(self.author_hash, str) or not self.author_hash or any(c not in "0123456789abcdef" for c in self.author_hash):
            raise ValidationError("author_hash", "must be a lowercase hex digest")
        if self.created_at > self.fetched_at:
            raise ValidationError("created_at", "later than fetched_at")
        if not isinstance(self.text, str) or not self.text:
            raise ValidationError("text", "must be non-empty")

    @property
    def key(self) -> str:
        return dedup_key(self)


@dataclass(frozen=True)
class ProcessedPost(RawPost):
    clean_text: str | None = None
    kept: bool = False
    relevance: Relevance | None = None
    vaccine_tags: frozenset[VaccineTag] = frozenset()
    sentiment: SentimentResult | None = None
    concerns: frozenset[Concern] = frozenset()
    topic_id: int | None = None

    def validate(self) -> None:
        super().validate()
        if not self.kept and (
            self.relevance is not None or self.sentiment is not None or self.concerns or self.topic_id is not None
        ):
            raise ValidationError("kept", "dropped post carries classification fields")
        if self.relevance is Relevance.UNRELATED and self.vaccine_tags:
            raise ValidationError("vaccine_tags", "unrelated post must not carry vaccine tags")

    @classmethod
    def from_raw(cls, post: RawPost) -> ProcessedPost:
        if isinstance(post, ProcessedPost):
            return post
        return cls(**{f.name: getattr(post, f.name) for f in fields(RawPost)})

    def raw(self) -> RawPost:
        return RawPost(**{f.name: getattr(self, f.name) for f in fields(RawPost)})

    def evolve(self, **changes) -> ProcessedPost:
        return replace(self, **changes)


RAW_FIELDS = tuple(f.name for f in fields(RawPost))
PROCESSED_FIELDS = tuple(f.name for f in fields(ProcessedPost))


def dedup_key(post: RawPost) -> str:
    return f"{Platform(post.platform).value}:{post.platform_id}"


def post_to_dict(post: RawPost) -> dict:
    out = {
        "id": post.id,
        "platform": post.platform.value,
        "platform_id": post.platform_id,
        "author_hash": post.author_hash,
        "created_at": format_ts(post.created_at),
        "fetched_at": format_ts(post.fetched_at),
        "text": post.text,
        "lang": post.lang,
        "source_query": post.source_query,
    }
    if isinstance(post, ProcessedPost):
        out.update(
            clean_text=post.clean_text,
            kept=post.kept,
            relevance=post.relevance.value if post.relevance else None,
            vaccine_tags=sorted(t.value for t in post.vaccine_tags),
            sentiment=post.sentiment.to_dict() if post.sentiment else None,
            concerns=sorted(c.value for c in post.concerns),
            topic_id=post.topic_id,
        )
    return out


def _field(data: dict, name: str, conv):
    try:
        return conv(data[name])
    except KeyError:
        raise ValidationError(name, "missing") from None
    except (TypeError, ValueError) as exc:
        raise ValidationError(name, str(exc)) from None


def _opt(data: dict, name: str, conv, default=None):
    value = data.get(name)
    if value is None:
        return default
    try:
        return conv(value)
    except (TypeError, ValueError, KeyError) as exc:
        raise ValidationError(name, str(exc)) from None


def raw_from_dict(data: dict) -> RawPost:
    if not isinstance(data, dict):
        raise ValidationError("record", "not a JSON object")
    return RawPost(
        id=_field(data, "id", str),
        platform=_field(data, "platform", Platform),
        platform_id=_field(data, "platform_id", str),
        author_hash=_field(data, "author_hash", str),
        created_at=_field(data, "created_at", parse_ts),
        fetched_at=_field(data, "fetched_at", parse_ts),
        text=_field(data, "text", str),
        lang=_opt(data, "lang", str, "und"),
        source_query=_opt(data, "source_query", str, ""),
    )


def post_from_dict(data: dict) -> ProcessedPost:
    raw = raw_from_dict(data)
    return replace(
        ProcessedPost.from_raw(raw),
        clean_text=_opt(data, "clean_text", str),
        kept=bool(data.get("kept", False)),
        relevance=_opt(data, "relevance", Relevance),
        vaccine_tags=_opt(data, "vaccine_tags", lambda v: frozenset(VaccineTag(x) for x in v), frozenset()),
        sentiment=_opt(data, "sentiment", SentimentResult.from_dict),
        concerns=_opt(data, "concerns", lambda v: frozenset(Concern(x) for x in v), frozenset()),
        topic_id=_opt(data, "topic_id", int),
    )


def dumps_record(post: RawPost) -> str:
    return json.dumps(post_to_dict(post), ensure_ascii=False, separators=(",", ":"))


@dataclass
class PostFilter:
    """Conjunction of optional predicates; ``None`` means unconstrained."""

    since: datetime | None = None  # inclusive
    until: datetime | None = None  # exclusive
    platforms: set[Platform] | None = None
    vaccine_tags: set[VaccineTag] | None = None  # any-of
    sentiments: set[SentimentLabel] | None = None
    concerns: set[Concern] | None = None  # any-of
    kept: bool | None = None
    relevance: set[Relevance] | None = None

    def matches(self, post: ProcessedPost) -> bool:
        if self.since is not None and post.created_at < self.since:
            return False
        if self.until is not None and post.created_at >= self.until:
            return False
        if self.platforms is not None and post.platform not in self.platforms:
            return False
        if self.vaccine_tags is not None and not (post.vaccine_tags & self.vaccine_tags):
            return False
        if self.sentiments is not None and (post.sentiment is None or post.sentiment.label not in self.sentiments):
            return False
        if self.concerns is not None and not (post.concerns & self.concerns):
            return False
        if self.kept is not None and post.kept != self.kept:
            return False
        if self.relevance is not None and post.relevance not in self.relevance:
            return False
        return True


@dataclass
class _Location:
    segment: int
    offset: int
    created_at: str


class CorpusStore:
    """Append-only record store rooted at a directory.

    Layout: ``segments/NNNN.jsonl`` hold every record version ever written;
    ``index/keys.idx`` maps each dedup key to the offset of its latest version
    and is rebuilt from the segments whenever it is missing or stale.
    The index is loaded once at open, so readers see a snapshot.
    """

    def __init__(self, root: str | os.PathLike, writable: bool = True):
        self.root = Path(root)
        self.writable = writable
        self.skipped_malformed = 0
        self._lock: FileLock | None = None
        self._index: dict[str, _Location] = {}
        self._sizes: dict[int, int] = {}
        try:
            (self.root / "segments").mkdir(parents=True, exist_ok=True)
            (self.root / "index").mkdir(exist_ok=True)
            if writable:
                self._lock = FileLock(str(self.root / ".write.lock"))
                self._lock.acquire(timeout=30)
        except OSError as exc:
            raise StoreError(f"cannot open store at {self.root}: {exc}") from exc
        self._load_index()

    # -- lifecycle -------------------------------------------------------

    def close(self) -> None:
        if self._lock is not None:
            self._lock.release()
            self._lock = None

    def __enter__(self) -> CorpusStore:
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    def __len__(self) -> int:
        return len(self._index)

    def __contains__(self, key: str) -> bool:
        return key in self._index

    # -- index -----------------------------------------------------------

    def _segment_paths(self) -> list[Path]:
        return sorted((self.root / "segments").glob("[0-9][0-9][0-9][0-9].jsonl"))

    def _current_sizes(self) -> dict[int, int]:
        return {int(p.stem): p.stat().st_size for p in self._segment_paths()}

    def _load_index(self) -> None:
        sizes = self._current_sizes()
        idx_path = self.root / "index" / "keys.idx"
        if idx_path.exists():
            try:
                with idx_path.open(encoding="utf-8") as fh:
                    header = json.loads(fh.readline())
                    if {int(k): v for k, v in header["sizes"].items()} == sizes:
                        for line in fh:
                            key, seg, off, created = line.rstrip("\n").split("\t")
                            self._index[key] = _Location(int(seg), int(off), created)
                        self._sizes = sizes
                        return
            except (ValueError, KeyError, OSError):
                logger.warning("index at %s unreadable; rebuilding", idx_path)
            self._index.clear()
        self._rebuild_index(sizes)

    def _rebuild_index(self, sizes: dict[int, int]) -> None:
        self._index.clear()
        for seg, path in ((int(p.stem), p) for p in self._segment_paths()):
            with path.open("rb") as fh:
                offset = 0
                for line in fh:
                    try:
                        data = json.loads(line)
                        key = f"{Platform(data['platform']).value}:{data['platform_id']}"
                        created = data["created_at"]
                    except (ValueError, KeyError, TypeError):
                        if line.strip():
                            self.skipped_malformed += 1
                            logger.warning("skipping malformed record in segment %04d at offset %d", seg, offset)
                    else:
                        self._index[key] = _Location(seg, offset, created)
                    offset += len(line)
        self._sizes = sizes
        if self.writable:
            self._write_index()

    def _write_index(self) -> None:
        idx_path = self.root / "index" / "keys.idx"
        tmp = idx_path.with_suffix(".tmp")
        with tmp.open("w", encoding="utf-8", newline="\n") as fh:
            fh.write(json.dumps({"sizes": {str(k): v for k, v in sorted(self._sizes.items())}}) + "\n")
            for key in sorted(self._index):
                loc = self._index[key]
                fh.write(f"{key}\t{loc.segment}\t{loc.offset}\t{loc.created_at}\n")
        os.replace(tmp, idx_path)

    # -- writes ----------------------------------------------------------

    def _require_writable(self) -> None:
        if not self.writable:
            raise StoreError("store opened read-only")

    def _append(self, posts: Iterable[RawPost]) -> int:
        self._require_writable()
        lines = [(p, (dumps_record(p) + "\n").encode("utf-8")) for p in posts]
        if not lines:
            return 0
        seg = max(self._sizes, default=0)
        if seg == 0:
            seg = 1
        path = self.root / "segments" / f"{seg:04d}.jsonl"
        try:
            if self._sizes.get(seg, 0) >= SEGMENT_MAX_BYTES:
                seg += 1
                path = self.root / "segments" / f"{seg:04d}.jsonl"
            offset = path.stat().st_size if path.exists() else 0
            with path.open("ab") as fh:
                for post, data in lines:
                    fh.write(data)
                    self._index[dedup_key(post)] = _Location(seg, offset, format_ts(post.created_at))
                    offset += len(data)
                fh.flush()
                os.fsync(fh.fileno())
            self._sizes[seg] = offset
            self._write_index()
        except OSError as exc:
            raise StoreError(f"write to {path} failed: {exc}") from exc
        return len(lines)

    def upsert(self, post: RawPost) -> str:
        """Insert ``post`` unless its dedup key is already present.

        Returns ``"stored"`` or ``"duplicate"``.
        """
        return self.upsert_many([post])[0]

    def upsert_many(self, posts: Iterable[RawPost]) -> list[str]:
        self._require_writable()
        outcomes, fresh, seen = [], [], set()
        for post in posts:
            post.validate()
            key = dedup_key(post)
            if key in self._index or key in seen:
                outcomes.append("duplicate")
            else:
                seen.add(key)
                fresh.append(ProcessedPost.from_raw(post))
                outcomes.append("stored")
        self._append(fresh)
        return outcomes

    def write_versions(self, posts: Iterable[ProcessedPost]) -> int:
        """Append new versions of already-stored posts."""
        batch = []
        for post in posts:
            post.validate()
            if dedup_key(post) not in self._index:
                raise StoreError(f"no stored record for {dedup_key(post)}")
            batch.append(post)
        return self._append(batch)

    # -- reads -----------------------------------------------------------

    def get(self, key: str) -> ProcessedPost | None:
        loc = self._index.get(key)
        if loc is None:
            return None
        return self._read_at(loc)

    def _read_at(self, loc: _Location, fh=None) -> ProcessedPost | None:
        path = self.root / "segments" / f"{loc.segment:04d}.jsonl"
        own = fh is None
        if own:
            fh = path.open("rb")
        try:
            fh.seek(loc.offset)
            line = fh.readline()
        finally:
            if own:
                fh.close()
        try:
            return post_from_dict(json.loads(line))
        except (ValueError, ValidationError) as exc:
            self.skipped_malformed += 1
            logger.warning("skipping malformed record in segment %04d at offset %d: %s", loc.segment, loc.offset, exc)
            return None

    def query(self, flt: PostFilter | None = None) -> Iterator[ProcessedPost]:
        """Latest version of every matching record, by (created_at, key)."""
        flt = flt or PostFilter()
        order = sorted(self._index.items(), key=lambda kv: (kv[1].created_at, kv[0]))
        handles: dict[int, object] = {}
        try:
            for _key, loc in order:
                if flt.since is not None and loc.created_at < format_ts(flt.since):
                    continue
                if flt.until is not None and loc.created_at >= format_ts(flt.until):
                    continue
                if loc.segment not in handles:
                    handles[loc.segment] = (self.root / "segments" / f"{loc.segment:04d}.jsonl").open("rb")
                post = self._read_at(loc, handles[loc.segment])
                if post is not None and flt.matches(post):
                    yield post
        finally:
            for fh in handles.values():
                fh.close()


def author_digest(native_author_id: str, salt: str) -> str:
    return hashlib.sha256(f"{salt}\x00{native_author_id}".encode("utf-8")).hexdigest()
