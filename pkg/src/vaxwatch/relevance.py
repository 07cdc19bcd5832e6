"""Relevance cascade: baseline/provider ensemble, then vaccine tagging."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .corpus import ProcessedPost, Relevance, VaccineTag
from .providers import LabelRequest, ProviderClient, ProviderError
from .sentiment import BaselineModel, ModelError, RoutingLog, predict, top

logger = logging.getLogger(__name__)

RELEVANCE_LABELS = tuple(r.value for r in Relevance)
VACCINE_LABELS = tuple(t.value for t in VaccineTag)


@dataclass(frozen=True)
class RelevanceResult:
    label: Relevance
    confidence: float
    source: str  # "baseline" | "ensemble_override"


@dataclass(frozen=True)
class EnsemblePolicy:
    tau_r: float = 0.75
    provider_task: str = "relevance.v1"

    def __post_init__(self):
        if not 0.0 <= self.tau_r <= 1.0:
            raise ValueError("tau_r must lie in [0, 1]")


def load_phrase_map(path: str | Path | None, default_name: str) -> dict[str, list[str]]:
    if path is None:
        text = (resources.files("vaxwatch") / "data" / "lexicons" / default_name).read_text(encoding="utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    data = json.loads(text)
    for key, phrases in data.items():
        if not phrases:
            raise ValueError(f"{default_name}: empty phrase list for {key!r}")
        for phrase in phrases:
            if phrase != phrase.lower():
                raise ValueError(f"{default_name}: phrase {phrase!r} is not lowercase")
    return data


class VaccineLexicon(dict):
    """Tag -> lowercase trigger phrases."""

    @classmethod
    def load(cls, path: str | Path | None = None) -> VaccineLexicon:
        data = load_phrase_map(path, "vaccines.v1.json")
        return cls({VaccineTag(k): tuple(v) for k, v in data.items()})

    def match(self, clean_text: str) -> set[VaccineTag]:
        text = clean_text.lower()
        return {tag for tag, phrases in self.items() if any(p in text for p in phrases)}


def baseline_relevance(clean_text: str, model: BaselineModel | None) -> tuple[Relevance, float]:
    if model is None:
        raise ModelError("relevance model is not trained")
    label, confidence = top(predict(model, clean_text))
    return Relevance(label), confidence


def classify_relevance(
    post: ProcessedPost,
    model: BaselineModel,
    provider: ProviderClient | None,
    policy: EnsemblePolicy,
    log: RoutingLog | None = None,
) -> RelevanceResult:
    """Baseline answers when confident; otherwise the provider's label overrides it."""
    if not post.kept:
        raise ValueError(f"{post.key}: relevance requested for a dropped post")
    log = log if log is not None else RoutingLog()
    label, confidence = baseline_relevance(post.clean_text or "", model)
    if confidence >= policy.tau_r or provider is None:
        log.baseline += 1
        return RelevanceResult(label, confidence, "baseline")
    log.provider_calls += 1
    request = LabelRequest(policy.provider_task, post.clean_text or "", RELEVANCE_LABELS, policy.provider_task)
    try:
        response = provider.call(request)
    except ProviderError as exc:
        log.degraded += 1
        msg = f"{post.key}: relevance provider unavailable, kept baseline label: {exc}"
        log.warnings.append(msg)
        logger.warning(msg)
        return RelevanceResult(label, confidence, "baseline")
    return RelevanceResult(Relevance(response.label), confidence, "ensemble_override")


def tag_vaccines(
    post: ProcessedPost,
    lexicon: VaccineLexicon,
    provider: ProviderClient | None,
    use_provider: bool,
    log: RoutingLog | None = None,
) -> frozenset[VaccineTag]:
    if post.relevance is Relevance.UNRELATED:
        raise ValueError(f"{post.key}: vaccine tagging requested for an unrelated post")
    tags = lexicon.match(post.clean_text or "")
    if tags:
        return frozenset(tags)
    if not use_provider or provider is None:
        return frozenset({VaccineTag.OTHER})
    log = log if log is not None else RoutingLog()
    log.provider_calls += 1
    request = LabelRequest("vaccine_tag.v1", post.clean_text or "", VACCINE_LABELS, "vaccine_tag.v1")
    try:
        response = provider.call(request)
    except ProviderError as exc:
        log.degraded += 1
        msg = f"{post.key}: vaccine tag provider failed, tagged 'other': {exc}"
        log.warnings.append(msg)
        logger.warning(msg)
        return frozenset({VaccineTag.OTHER})
    return frozenset(VaccineTag(t) for t in response.label)
