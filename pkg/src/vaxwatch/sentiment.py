"""Multinomial naive-Bayes baseline with a confidence-gated provider fallback."""

from __future__ import annotations

import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import SentimentLabel, SentimentResult
from .normalize import SENTIMENT_TOKENIZER, TokenizerConfig, features
from .providers import LabelRequest, ProviderClient, ProviderError

logger = logging.getLogger(__name__)

MODEL_FORMAT = "vaxwatch.naive_bayes/1"
SENTIMENT_LABELS = tuple(label.value for label in SentimentLabel)


class TrainingError(ValueError):
    pass


class ModelError(RuntimeError):
    pass


@dataclass
class BaselineModel:
    labels: tuple[str, ...]
    vocabulary: dict[str, int]
    log_prior: np.ndarray  # (n_classes,)
    log_likelihood: np.ndarray  # (n_classes, |V|)
    alpha: float
    tokenizer: TokenizerConfig = SENTIMENT_TOKENIZER

    def to_dict(self) -> dict:
        terms = sorted(self.vocabulary, key=self.vocabulary.__getitem__)
        return {
            "format": MODEL_FORMAT,
            "labels": list(self.labels),
            "alpha": self.alpha,
            "tokenizer": self.tokenizer.to_dict(),
            "vocabulary": terms,
            "log_prior": [float(x) for x in self.log_prior],
            "log_likelihood": [[float(x) for x in row] for row in self.log_likelihood],
        }

    @classmethod
    def from_dict(cls, data: dict) -> BaselineModel:
        if data.get("format") != MODEL_FORMAT:
            raise ModelError(f"unsupported model format {data.get('format')!r}")
        terms = data["vocabulary"]
        return cls(
            labels=tuple(data["labels"]),
            vocabulary={t: i for i, t in enumerate(terms)},
            log_prior=np.asarray(data["log_prior"], dtype=float),
            log_likelihood=np.asarray(data["log_likelihood"], dtype=float).reshape(len(data["labels"]), len(terms)),
            alpha=float(data["alpha"]),
            tokenizer=TokenizerConfig.from_dict(data["tokenizer"]),
        )

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), separators=(",", ":")) + "\n", encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: str | Path) -> BaselineModel:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def train(
    examples: Iterable[tuple[str, str]],
    alpha: float = 1.0,
    labels: Sequence[str] | None = None,
    tokenizer: TokenizerConfig = SENTIMENT_TOKENIZER,
    min_df: int = 2,
    max_features: int = 50_000,
) -> BaselineModel:
    """Fit a multinomial model over ``(clean_text, label)`` pairs.

    ``labels`` fixes the class order (and requires every class to be
    present); otherwise classes are sorted. Vocabulary keeps features seen
    in at least ``min_df`` documents, capped at ``max_features`` by total
    count with lexicographic tie-break.
    """
    if alpha <= 0:
        raise TrainingError("alpha must be positive")
    docs = [(Counter(features(text, tokenizer)), label) for text, label in examples]
    present = sorted({label for _, label in docs})
    labels = tuple(labels) if labels is not None else tuple(present)
    for label in labels:
        if label not in present:
            raise TrainingError(f"no training examples for class {label!r}")
    unknown = set(present) - set(labels)
    if unknown:
        raise TrainingError(f"examples carry labels outside the label set: {sorted(unknown)}")

    df: Counter[str] = Counter()
    total: Counter[str] = Counter()
    for counts, _ in docs:
        df.update(counts.keys())
        total.update(counts)
    eligible = [t for t in df if df[t] >= min_df]
    eligible.sort(key=lambda t: (-total[t], t))
    terms = sorted(eligible[:max_features])
    vocab = {t: i for i, t in enumerate(terms)}

    class_idx = {label: i for i, label in enumerate(labels)}
    counts = np.zeros((len(labels), len(terms)))
    class_docs = np.zeros(len(labels))
    for doc, label in docs:
        c = class_idx[label]
        class_docs[c] += 1
        for term, n in doc.items():
            j = vocab.get(term)
            if j is not None:
                counts[c, j] += n
    log_prior = np.log(class_docs / class_docs.sum())
    denom = counts.sum(axis=1, keepdims=True) + alpha * len(terms)
    log_likelihood = np.log(counts + alpha) - np.log(denom)
    return BaselineModel(labels, vocab, log_prior, log_likelihood, float(alpha), tokenizer)


def log_posterior_terms(model: BaselineModel, clean_text: str) -> np.ndarray:
    """Unnormalized log posterior per class."""
    scores = model.log_prior.copy()
    for term, n in Counter(features(clean_text, model.tokenizer)).items():
        j = model.vocabulary.get(term)
        if j is not None:
            scores += n * model.log_likelihood[:, j]
    return scores


def predict(model: BaselineModel, clean_text: str) -> dict[str, float]:
    """Posterior probability of every class, normalized in log space."""
    if model is None:
        raise ModelError("model is not trained")
    scores = log_posterior_terms(model, clean_text)
    scores -= scores.max()
    probs = np.exp(scores)
    probs /= probs.sum()
    return {label: float(p) for label, p in zip(model.labels, probs)}


def top(posterior: dict[str, float]) -> tuple[str, float]:
    """Most probable label; ties go to the earlier class."""
    best = max(posterior.values())
    for label, p in posterior.items():
        if p == best:
            return label, p
    raise ValueError("empty posterior")


@dataclass(frozen=True)
class FallbackPolicy:
    tau_s: float = 0.70
    provider_task: str = "sentiment.v1"

    def __post_init__(self):
        if not 0.0 <= self.tau_s <= 1.0:
            raise ValueError("tau_s must lie in [0, 1]")


@dataclass
class RoutingLog:
    """Counters shared by the confidence-gated classifiers."""

    baseline: int = 0
    provider_calls: int = 0
    degraded: int = 0
    warnings: list[str] = field(default_factory=list)


def classify_with_fallback(
    model: BaselineModel,
    provider: ProviderClient | None,
    policy: FallbackPolicy,
    clean_text: str,
    log: RoutingLog | None = None,
) -> SentimentResult:
    log = log if log is not None else RoutingLog()
    label, confidence = top(predict(model, clean_text))
    if confidence >= policy.tau_s or provider is None:
        log.baseline += 1
        return SentimentResult(SentimentLabel(label), confidence, "baseline")
    log.provider_calls += 1
    request = LabelRequest(policy.provider_task, clean_text, SENTIMENT_LABELS, policy.provider_task)
    try:
        response = provider.call(request)
    except ProviderError as exc:
        log.degraded += 1
        msg = f"sentiment fallback unavailable, kept baseline label: {exc}"
        log.warnings.append(msg)
        logger.warning(msg)
        return SentimentResult(SentimentLabel(label), confidence, "baseline")
    conf = response.confidence if response.confidence is not None else confidence
    return SentimentResult(SentimentLabel(response.label), conf, "fallback")
