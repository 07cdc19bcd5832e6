"""External labeling services behind one contract.

A provider turns ``(system, prompt)`` into raw text. :func:`call` wraps any
provider with prompt rendering, a content-addressed response cache, retries
and label parsing. :class:`MockProvider` answers from a JSON table so every
downstream stage runs offline and reproducibly.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import random
import re
import threading
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Protocol, Sequence

import httpx

from .retry import BackoffPolicy, Clock, RateLimiter, SystemClock, with_retries

logger = logging.getLogger(__name__)

OUTPUT_FORMATS = ("single_label", "label_set", "free_text")
REPROMPT_SUFFIX = "\n\nAnswer with exactly one of: {labels}"


class TemplateError(ValueError):
    pass


class ProviderError(RuntimeError):
    pass


class ProviderUnavailable(ProviderError):
    pass


class UnparseableResponse(ProviderError):
    def __init__(self, raw: str, label_set: Sequence[str]):
        super().__init__(f"no label from {list(label_set)} in response {raw[:80]!r}")
        self.raw = raw


class TransportFailure(ProviderError):
    """Retryable failure talking to a provider."""


@dataclass(frozen=True)
class PromptTemplate:
    id: str
    version: int
    system_text: str
    user_template: str
    output_format: str = "single_label"

    def __post_init__(self):
        for placeholder in ("{text}", "{labels}"):
            n = self.user_template.count(placeholder)
            if n != 1:
                raise TemplateError(f"template {self.id!r}: {placeholder} must occur exactly once, found {n}")
        if self.output_format not in OUTPUT_FORMATS:
            raise TemplateError(f"template {self.id!r}: unknown output_format {self.output_format!r}")

    @classmethod
    def from_dict(cls, data: dict) -> PromptTemplate:
        return cls(
            id=data["id"],
            version=int(data["version"]),
            system_text=data.get("system_text", ""),
            user_template=data["user_template"],
            output_format=data.get("output_format", "single_label"),
        )


def load_templates(directory: str | Path | None = None) -> dict[str, PromptTemplate]:
    """Templates keyed by id; defaults to the bundled ``prompts/`` directory."""
    if directory is None:
        root = resources.files("vaxwatch") / "data" / "prompts"
        entries = [e for e in root.iterdir() if e.name.endswith(".json")]
    else:
        entries = sorted(Path(directory).glob("*.json"))
    out = {}
    for entry in sorted(entries, key=lambda e: e.name):
        tpl = PromptTemplate.from_dict(json.loads(entry.read_text(encoding="utf-8")))
        out[tpl.id] = tpl
    return out


def format_labels(labels: Sequence[str]) -> str:
    return ", ".join(f'"{label}"' for label in labels)


_PLACEHOLDER_RE = re.compile(r"\{text\}|\{labels\}")


def render_prompt(template: PromptTemplate, text: str, labels: Sequence[str]) -> str:
    rendered_labels = format_labels(labels)
    # single pass so placeholders inside ``text`` are left alone
    return _PLACEHOLDER_RE.sub(lambda m: text if m.group() == "{text}" else rendered_labels, template.user_template)


def _label_pattern(label: str) -> re.Pattern:
    parts = [re.escape(p) for p in re.split(r"[_\s]+", label) if p]
    return re.compile(r"(?<!\w)" + r"[_\s-]+".join(parts) + r"(?!\w)", re.IGNORECASE)


def find_labels(raw: str, label_set: Sequence[str]) -> list[tuple[int, str]]:
    """(position, label) for every label occurring as a whole word in ``raw``.

    Underscores in a label also match spaces or hyphens, so
    ``general_discussion`` is found in "General discussion".
    """
    hits = []
    for label in label_set:
        m = _label_pattern(label).search(raw)
        if m:
            hits.append((m.start(), label))
    return hits


def parse_label(raw: str, label_set: Sequence[str], output_format: str = "single_label"):
    """Single label (earliest in ``raw``) or, for ``label_set``, a tuple in label-set order."""
    hits = find_labels(raw, label_set)
    if not hits:
        raise UnparseableResponse(raw, label_set)
    if output_format == "label_set":
        found = {label for _, label in hits}
        return tuple(label for label in label_set if label in found)
    return min(hits, key=lambda h: (h[0], -len(h[1])))[1]


_CONFIDENCE_RE = re.compile(r"confidence\s*[:=]\s*(0(?:\.\d+)?|1(?:\.0+)?)\b", re.IGNORECASE)


def parse_confidence(raw: str) -> float | None:
    m = _CONFIDENCE_RE.search(raw)
    return float(m.group(1)) if m else None


@dataclass(frozen=True)
class LabelRequest:
    task_id: str
    text: str
    label_set: tuple[str, ...]
    template_id: str

    def __post_init__(self):
        object.__setattr__(self, "label_set", tuple(self.label_set))
        if not self.label_set:
            raise ValueError("label_set must be non-empty")
        if len(set(self.label_set)) != len(self.label_set):
            raise ValueError("label_set entries must be unique")


@dataclass(frozen=True)
class LabelResponse:
    label: str | tuple[str, ...]
    confidence: float | None
    raw: str
    provider_id: str
    cached: bool = False

    def to_dict(self) -> dict:
        label = list(self.label) if isinstance(self.label, tuple) else self.label
        return {"label": label, "confidence": self.confidence, "raw": self.raw, "provider_id": self.provider_id}

    @classmethod
    def from_dict(cls, data: dict, cached: bool = True) -> LabelResponse:
        label = data["label"]
        return cls(tuple(label) if isinstance(label, list) else label, data["confidence"], data["raw"], data["provider_id"], cached)


class Provider(Protocol):
    provider_id: str

    def complete(self, request: LabelRequest, system: str, prompt: str) -> str: ...


def cache_digest(provider_id: str, template: PromptTemplate, prompt: str) -> str:
    h = hashlib.sha256()
    for part in (provider_id, template.id, str(template.version), prompt):
        h.update(part.encode("utf-8"))
        h.update(b"\x00")
    return h.hexdigest()


class ResponseCache:
    """Content-addressed response files under ``<root>/cache/``.

    ``root=None`` keeps entries in memory only.
    """

    def __init__(self, root: str | Path | None = None):
        self.dir = Path(root) / "cache" if root is not None else None
        self._mem: dict[str, LabelResponse] = {}
        self._lock = threading.Lock()
        if self.dir is not None:
            self.dir.mkdir(parents=True, exist_ok=True)

    def get(self, digest: str) -> LabelResponse | None:
        hit = self._mem.get(digest)
        if hit is not None:
            return LabelResponse(hit.label, hit.confidence, hit.raw, hit.provider_id, True)
        if self.dir is not None:
            path = self.dir / f"{digest}.json"
            if path.exists():
                try:
                    resp = LabelResponse.from_dict(json.loads(path.read_text(encoding="utf-8")))
                except (ValueError, KeyError):
                    logger.warning("ignoring corrupt cache entry %s", path.name)
                    return None
                self._mem[digest] = resp
                return resp
        return None

    def put(self, digest: str, response: LabelResponse) -> None:
        with self._lock:
            self._mem[digest] = response
            if self.dir is not None:
                path = self.dir / f"{digest}.json"
                tmp = path.with_suffix(f".{os.getpid()}.{threading.get_ident()}.tmp")
                tmp.write_text(json.dumps(response.to_dict(), ensure_ascii=False, sort_keys=True), encoding="utf-8")
                os.replace(tmp, path)


class MockProvider:
    """Deterministic offline provider.

    ``table`` maps either the sha256 hex digest of a rendered prompt or the
    exact request text to a raw response. Unmatched requests get ``default``
    if set, otherwise a label chosen by hashing the request text, so
    answers are stable across runs. Every call is appended to ``calls``.
    """

    def __init__(self, table: dict[str, str] | None = None, default: str | None = None, provider_id: str = "mock"):
        self.table = dict(table or {})
        self.default = default
        self.provider_id = provider_id
        self.calls: list[LabelRequest] = []
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str | Path) -> MockProvider:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if "responses" in data:
            return cls(data["responses"], data.get("default"), data.get("provider_id", "mock"))
        return cls(data)

    def complete(self, request: LabelRequest, system: str, prompt: str) -> str:
        with self._lock:
            self.calls.append(request)
        digest = hashlib.sha256(prompt.encode("utf-8")).hexdigest()
        for key in (digest, request.text):
            if key in self.table:
                return self.table[key]
        if self.default is not None:
            return self.default
        h = int(hashlib.sha256(f"{request.task_id}\x00{request.text}".encode("utf-8")).hexdigest(), 16)
        return request.label_set[h % len(request.label_set)]


class FailingProvider:
    """Provider whose transport always fails; models an outage."""

    def __init__(self, provider_id: str = "down"):
        self.provider_id = provider_id
        self.attempts = 0

    def complete(self, request: LabelRequest, system: str, prompt: str) -> str:
        self.attempts += 1
        raise TransportFailure(f"{self.provider_id} unreachable")


class HttpProvider:
    """Remote model behind ``POST endpoint`` with ``{model, system, prompt}`` -> ``{text}``."""

    def __init__(
        self,
        provider_id: str,
        endpoint: str,
        model: str,
        credential_env: str | None = None,
        rate_limit: int = 60,
        timeout: float = 30.0,
        client: httpx.Client | None = None,
        clock: Clock | None = None,
    ):
        self.provider_id = provider_id
        self.endpoint = endpoint
        self.model = model
        self.credential_env = credential_env
        self.limiter = RateLimiter(rate_limit, clock)
        self.client = client or httpx.Client(timeout=timeout)

    def _headers(self) -> dict[str, str]:
        if not self.credential_env:
            return {}
        token = os.environ.get(self.credential_env)
        if not token:
            raise ProviderUnavailable(f"{self.provider_id}: credential variable {self.credential_env} is not set")
        return {"Authorization": f"Bearer {token}"}

    def complete(self, request: LabelRequest, system: str, prompt: str) -> str:
        self.limiter.acquire()
        body = {"model": self.model, "system": system, "prompt": prompt}
        try:
            resp = self.client.post(self.endpoint, json=body, headers=self._headers())
        except httpx.HTTPError as exc:
            raise TransportFailure(f"{self.provider_id}: {exc}") from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransportFailure(f"{self.provider_id}: HTTP {resp.status_code}")
        if resp.status_code >= 400:
            raise ProviderUnavailable(f"{self.provider_id}: HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            return str(resp.json()["text"])
        except (ValueError, KeyError, TypeError) as exc:
            raise TransportFailure(f"{self.provider_id}: malformed response body") from exc


class ProviderClient:
    """Provider plus the machinery :func:`call` needs: templates, cache, retry policy."""

    def __init__(
        self,
        provider: Provider,
        templates: dict[str, PromptTemplate] | None = None,
        cache: ResponseCache | None = None,
        backoff: BackoffPolicy = BackoffPolicy(),
        clock: Clock | None = None,
        seed: int = 0,
    ):
        self.provider = provider
        self.templates = templates if templates is not None else load_templates()
        self.cache = cache if cache is not None else ResponseCache()
        self.backoff = backoff
        self.clock = clock or SystemClock()
        self._rng = random.Random(seed)
        self.network_calls = 0

    def call(self, request: LabelRequest) -> LabelResponse:
        return call(self.provider, request, self.cache, self)


def _complete(provider: Provider, request: LabelRequest, system: str, prompt: str, client: ProviderClient) -> str:
    def attempt() -> str:
        client.network_calls += 1
        return provider.complete(request, system, prompt)

    try:
        return with_retries(attempt, (TransportFailure,), client.backoff, client.clock, client._rng)
    except TransportFailure as exc:
        raise ProviderUnavailable(f"{provider.provider_id}: retries exhausted: {exc}") from exc


def call(provider: Provider, request: LabelRequest, cache: ResponseCache, client: ProviderClient | None = None) -> LabelResponse:
    """Label ``request`` with ``provider``, consulting ``cache`` first."""
    client = client or ProviderClient(provider, cache=cache)
    try:
        template = client.templates[request.template_id]
    except KeyError:
        raise TemplateError(f"unknown template {request.template_id!r}") from None
    prompt = render_prompt(template, request.text, request.label_set)
    digest = cache_digest(provider.provider_id, template, prompt)
    hit = cache.get(digest)
    if hit is not None:
        return hit

    raw = _complete(provider, request, template.system_text, prompt, client)
    if template.output_format == "free_text":
        label = raw.strip().splitlines()[0].strip().strip('"') if raw.strip() else ""
        if not label:
            raise UnparseableResponse(raw, request.label_set)
    else:
        try:
            label = parse_label(raw, request.label_set, template.output_format)
        except UnparseableResponse:
            reprompt = prompt + REPROMPT_SUFFIX.format(labels=format_labels(request.label_set))
            raw = _complete(provider, request, template.system_text, reprompt, client)
            label = parse_label(raw, request.label_set, template.output_format)
    response = LabelResponse(label, parse_confidence(raw), raw, provider.provider_id, cached=False)
    cache.put(digest, response)
    return response
