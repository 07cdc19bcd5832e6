"""Concern grouping and per-group topic extraction.

Documents are embedded as L2-normalized TF-IDF vectors, grouped by
average-linkage agglomerative clustering under cosine distance, and each
cluster is described by its class-based TF-IDF term weights.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .corpus import Concern, ProcessedPost, Relevance, dedup_key
from .normalize import TOPIC_TOKENIZER, TokenizerConfig, features
from .providers import LabelRequest, ProviderClient, ProviderError
from .relevance import load_phrase_map
from .sentiment import RoutingLog

logger = logging.getLogger(__name__)

OUTLIER = -1
CONCERN_LABELS = tuple(c.value for c in Concern)


class TopicError(ValueError):
    pass


# -- concerns --------------------------------------------------------------


class ConcernTaxonomy(dict):
    """Concern -> lowercase trigger phrases; every concern must be present."""

    @classmethod
    def load(cls, path: str | Path | None = None) -> ConcernTaxonomy:
        data = load_phrase_map(path, "concerns.v1.json")
        taxonomy = cls({Concern(k): tuple(v) for k, v in data.items()})
        missing = [c.value for c in Concern if c not in taxonomy]
        if missing:
            raise ValueError(f"concern taxonomy lacks {missing}")
        return taxonomy

    def match(self, clean_text: str) -> set[Concern]:
        text = clean_text.lower()
        return {c for c, phrases in self.items() if any(p in text for p in phrases)}


def categorize_concern(
    post: ProcessedPost,
    taxonomy: ConcernTaxonomy,
    provider: ProviderClient | None,
    use_provider: bool,
    log: RoutingLog | None = None,
) -> frozenset[Concern]:
    if not post.kept or post.relevance is Relevance.UNRELATED:
        raise ValueError(f"{post.key}: concerns requested for a dropped or unrelated post")
    found = taxonomy.match(post.clean_text or "")
    if found or not use_provider or provider is None:
        return frozenset(found)
    log = log if log is not None else RoutingLog()
    log.provider_calls += 1
    request = LabelRequest("concern.v1", post.clean_text or "", CONCERN_LABELS, "concern.v1")
    try:
        response = provider.call(request)
    except ProviderError as exc:
        log.degraded += 1
        msg = f"{post.key}: concern provider failed, no concerns assigned: {exc}"
        log.warnings.append(msg)
        logger.warning(msg)
        return frozenset()
    return frozenset(Concern(c) for c in response.label)


# -- vectors ---------------------------------------------------------------


@dataclass(frozen=True)
class DocVector:
    weights: dict[int, float]
    norm: float

    @classmethod
    def of(cls, weights: dict[int, float]) -> DocVector:
        return cls(weights, math.sqrt(math.fsum(w * w for w in weights.values())))

    def dot(self, other: DocVector) -> float:
        a, b = (self.weights, other.weights) if len(self.weights) <= len(other.weights) else (other.weights, self.weights)
        return math.fsum(w * b[i] for i, w in a.items() if i in b)


def vectorize(docs: Sequence[str], tokenizer: TokenizerConfig = TOPIC_TOKENIZER, min_df: int = 2) -> tuple[list[DocVector], list[str]]:
    """TF-IDF vectors (raw tf, idf = ln(N/df)), L2-normalized, plus the sorted feature list."""
    if not docs:
        raise TopicError("no documents to vectorize")
    counts = [Counter(features(d, tokenizer)) for d in docs]
    if not any(counts):
        raise TopicError("every document is empty after tokenization")
    df: Counter[str] = Counter()
    for c in counts:
        df.update(c.keys())
    terms = sorted(t for t, n in df.items() if n >= min_df)
    index = {t: i for i, t in enumerate(terms)}
    n_docs = len(docs)
    idf = {t: math.log(n_docs / df[t]) for t in terms}
    vectors = []
    for c in counts:
        raw = {index[t]: n * idf[t] for t, n in c.items() if t in index and idf[t] > 0}
        norm = math.sqrt(math.fsum(w * w for w in raw.values()))
        vectors.append(DocVector.of({i: w / norm for i, w in raw.items()}) if norm > 0 else DocVector({}, 0.0))
    return vectors, terms


# -- clustering ------------------------------------------------------------


@dataclass(frozen=True)
class ClusterParams:
    distance_threshold: float = 0.6
    min_topic_size: int = 10

    def to_dict(self) -> dict:
        return {"distance_threshold": self.distance_threshold, "min_topic_size": self.min_topic_size}


def _dense(vectors: Sequence[DocVector]) -> np.ndarray:
    dim = 1 + max((max(v.weights) for v in vectors if v.weights), default=-1)
    mat = np.zeros((len(vectors), max(dim, 1)))
    for r, v in enumerate(vectors):
        for i, w in v.weights.items():
            mat[r, i] = w / v.norm
    return mat


def cluster(vectors: Sequence[DocVector], params: ClusterParams = ClusterParams()) -> list[int]:
    """Average-linkage agglomerative clustering under cosine distance.

    Merges the closest pair while its distance is below the threshold,
    lowest-index pair first on ties. Identical vectors are collapsed into
    one weighted point beforehand (they are at distance 0 and would merge
    first anyway). Zero vectors never merge. Clusters smaller than
    ``min_topic_size`` become outliers; the rest are numbered by size,
    largest first, ties by first member.
    """
    n = len(vectors)
    if n == 0:
        return []
    uniq: dict[tuple, int] = {}
    point_of = []
    reps: list[DocVector] = []
    for v in vectors:
        if v.norm == 0:
            point_of.append(len(reps))
            reps.append(v)
            continue
        sig = tuple(sorted((i, round(w, 12)) for i, w in v.weights.items()))
        if sig not in uniq:
            uniq[sig] = len(reps)
            reps.append(v)
        point_of.append(uniq[sig])
    m = len(reps)
    weight = np.bincount(point_of, minlength=m).astype(float)

    mat = _dense(reps)
    dist = np.clip(1.0 - mat @ mat.T, 0.0, 2.0)
    zero = np.array([v.norm == 0 for v in reps])
    dist[zero, :] = np.inf
    dist[:, zero] = np.inf
    np.fill_diagonal(dist, np.inf)

    members = {i: [i] for i in range(m)}
    active = np.ones(m, dtype=bool)
    row_min = dist.min(axis=1)
    row_arg = dist.argmin(axis=1)
    while True:
        a = int(np.argmin(row_min))
        d = row_min[a]
        if not d < params.distance_threshold:
            break
        b = int(row_arg[a])
        wa, wb = weight[a], weight[b]
        merged = (wa * dist[a] + wb * dist[b]) / (wa + wb)
        merged[a] = np.inf
        merged[~active] = np.inf
        merged[b] = np.inf
        dist[a, :] = merged
        dist[:, a] = merged
        dist[b, :] = np.inf
        dist[:, b] = np.inf
        weight[a] = wa + wb
        active[b] = False
        members[a].extend(members.pop(b))
        row_min[b] = np.inf
        # rows whose nearest neighbour was a or b must be rescanned; others can only improve via a
        stale = np.flatnonzero(active & ((row_arg == a) | (row_arg == b)))
        for r in stale:
            row_arg[r] = int(np.argmin(dist[r]))
            row_min[r] = dist[r, row_arg[r]]
        for r in np.flatnonzero(active & (merged < row_min)):
            row_min[r] = merged[r]
            row_arg[r] = a
        for r in np.flatnonzero(active & (merged == row_min) & (a < row_arg)):
            row_arg[r] = a
        row_arg[a] = int(np.argmin(dist[a]))
        row_min[a] = dist[a, row_arg[a]]

    doc_members: dict[int, list[int]] = {}
    rep_cluster = {}
    for root, pts in members.items():
        for p in pts:
            rep_cluster[p] = root
    for doc, p in enumerate(point_of):
        doc_members.setdefault(rep_cluster[p], []).append(doc)
    big = [docs for docs in doc_members.values() if len(docs) >= params.min_topic_size]
    big.sort(key=lambda docs: (-len(docs), docs[0]))
    assignments = [OUTLIER] * n
    for topic_id, docs in enumerate(big):
        for doc in docs:
            assignments[doc] = topic_id
    return assignments


# -- class-based TF-IDF ----------------------------------------------------


@dataclass
class CTfidfWeights:
    tf: dict[int, Counter]  # class -> term -> count
    term_freq: Counter  # f_t, summed over classes
    avg_words: float  # A
    weights: dict[int, dict[str, float]]

    def top_terms(self, cls: int, n: int = 10) -> list[tuple[str, float]]:
        ranked = sorted(((t, w) for t, w in self.weights[cls].items() if w > 0), key=lambda tw: (-tw[1], tw[0]))
        return ranked[:n]


def ctfidf(
    docs: Sequence[str | Sequence[str]],
    assignments: Sequence[int],
    tokenizer: TokenizerConfig = TOPIC_TOKENIZER,
) -> CTfidfWeights:
    """Class-based TF-IDF: ``W[t, c] = tf[t, c] * ln(1 + A / f[t])``.

    Docs may be strings (tokenized with ``tokenizer``) or pre-split token
    lists. Outlier documents are ignored.
    """
    if len(docs) != len(assignments):
        raise TopicError("docs and assignments differ in length")
    tf: dict[int, Counter] = {}
    for doc, cls in zip(docs, assignments):
        if cls == OUTLIER:
            continue
        toks = features(doc, tokenizer) if isinstance(doc, str) else list(doc)
        tf.setdefault(cls, Counter()).update(toks)
    if not tf:
        raise TopicError("no non-outlier class to weight")
    term_freq: Counter = Counter()
    for counts in tf.values():
        term_freq.update(counts)
    total_words = sum(term_freq.values())
    avg = total_words / len(tf)
    weights = {
        cls: {t: n * math.log(1.0 + avg / term_freq[t]) for t, n in counts.items()} for cls, counts in sorted(tf.items())
    }
    return CTfidfWeights(tf, term_freq, avg, weights)


def label_topic(
    top_terms: Sequence[tuple[str, float]],
    k: int = 4,
    provider: ProviderClient | None = None,
    use_provider: bool = False,
    log: RoutingLog | None = None,
) -> str:
    terms = [t for t, w in top_terms if w > 0]
    if not terms:
        raise TopicError("topic has no positively weighted term")
    default = ", ".join(terms[:k])
    if not use_provider or provider is None:
        return default
    log = log if log is not None else RoutingLog()
    log.provider_calls += 1
    keywords = terms[:10]
    request = LabelRequest("topic_name.v1", ", ".join(keywords), tuple(keywords), "topic_name.v1")
    try:
        return str(provider.call(request).label)
    except ProviderError as exc:
        log.degraded += 1
        msg = f"topic naming failed, using keywords: {exc}"
        log.warnings.append(msg)
        logger.warning(msg)
        return default


# -- fitting ---------------------------------------------------------------


@dataclass
class Topic:
    id: int
    top_terms: list[tuple[str, float]]
    label: str
    size: int


@dataclass
class TopicModel:
    group: str
    assignments: dict[str, int]  # post key -> topic id
    ctfidf: CTfidfWeights | None
    topics: list[Topic]
    params: ClusterParams
    corpus_digest: str

    @property
    def outliers(self) -> int:
        return sum(1 for t in self.assignments.values() if t == OUTLIER)

    def to_dict(self) -> dict:
        return {
            "group": self.group,
            "params": self.params.to_dict(),
            "corpus_digest": self.corpus_digest,
            "assignments": dict(sorted(self.assignments.items())),
            "topics": [
                {"id": t.id, "label": t.label, "size": t.size, "top_terms": [[term, w] for term, w in t.top_terms]}
                for t in self.topics
            ],
            "weights": {} if self.ctfidf is None else {
                str(c): dict(sorted(w.items())) for c, w in self.ctfidf.weights.items()
            },
        }

    @classmethod
    def from_dict(cls, data: dict) -> TopicModel:
        topics = [Topic(t["id"], [(a, b) for a, b in t["top_terms"]], t["label"], t["size"]) for t in data["topics"]]
        return cls(
            group=data["group"],
            assignments=dict(data["assignments"]),
            ctfidf=None,
            topics=topics,
            params=ClusterParams(**data["params"]),
            corpus_digest=data["corpus_digest"],
        )

    def dump(self, directory: str | Path) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        path = directory / f"topics-{self.group}-{self.corpus_digest[:12]}.json"
        path.write_text(json.dumps(self.to_dict(), ensure_ascii=False, indent=1) + "\n", encoding="utf-8")
        return path


@dataclass(frozen=True)
class FitParams:
    cluster: ClusterParams = ClusterParams()
    top_n: int = 10
    label_k: int = 4
    use_provider: bool = False


def corpus_digest(posts: Sequence[ProcessedPost]) -> str:
    h = hashlib.sha256()
    for post in posts:
        h.update(dedup_key(post).encode("utf-8"))
        h.update(b"\x00")
        h.update((post.clean_text or "").encode("utf-8"))
        h.update(b"\x01")
    return h.hexdigest()


def fit_group(
    group: str,
    posts: Sequence[ProcessedPost],
    params: FitParams = FitParams(),
    provider: ProviderClient | None = None,
    log: RoutingLog | None = None,
    embed: Callable[[Sequence[str]], list[DocVector]] | None = None,
) -> TopicModel:
    """One topic model over ``posts``; ``embed`` may replace TF-IDF vectors."""
    docs = [p.clean_text or "" for p in posts]
    vectors = embed(docs) if embed is not None else vectorize(docs)[0]
    assignments = cluster(vectors, params.cluster)
    topics: list[Topic] = []
    weights = None
    sizes = Counter(a for a in assignments if a != OUTLIER)
    if sizes:
        weights = ctfidf(docs, assignments)
        for tid in range(len(sizes)):
            terms = weights.top_terms(tid, params.top_n)
            label = label_topic(terms, params.label_k, provider, params.use_provider, log) if terms else f"topic {tid}"
            topics.append(Topic(tid, terms, label, sizes[tid]))
    return TopicModel(
        group=group,
        assignments={dedup_key(p): a for p, a in zip(posts, assignments)},
        ctfidf=weights,
        topics=topics,
        params=params.cluster,
        corpus_digest=corpus_digest(posts),
    )


@dataclass
class FitResult:
    models: dict[str, TopicModel] = field(default_factory=dict)
    skipped: dict[str, int] = field(default_factory=dict)  # group -> size


def fit_topics(
    posts: Sequence[ProcessedPost],
    params: FitParams = FitParams(),
    concern_grouping: bool = True,
    provider: ProviderClient | None = None,
    log: RoutingLog | None = None,
    concerns: Sequence[Concern] | None = None,
) -> FitResult:
    """Fit one model per concern group (posts join every group they belong to), or one overall."""
    if not posts:
        raise TopicError("no posts to fit topics on")
    if concern_grouping:
        wanted = list(concerns) if concerns is not None else list(Concern)
        groups = {c.value: [p for p in posts if c in p.concerns] for c in wanted}
    else:
        groups = {"all": list(posts)}
    result = FitResult()
    for name, members in groups.items():
        if len(members) < params.cluster.min_topic_size:
            logger.info("skipping group %s: %d posts < min_topic_size %d", name, len(members), params.cluster.min_topic_size)
            result.skipped[name] = len(members)
            continue
        try:
            result.models[name] = fit_group(name, members, params, provider, log)
        except TopicError as exc:
            logger.info("skipping group %s: %s", name, exc)
            result.skipped[name] = len(members)
    return result
