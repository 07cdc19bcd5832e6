"""Text cleaning: drop links, mentions and special characters, then short posts.

Also home of the feature tokenizer shared by the classifiers and topic model,
so that every stage sees the same tokens for a given ``clean_text``.
"""

from __future__ import annotations

import re
import unicodedata
from dataclasses import dataclass, field
from functools import lru_cache

URL_RE = re.compile(r"(?:[A-Za-z][A-Za-z0-9+.\-]*://|[Ww][Ww][Ww]\.)\S*")
MENTION_RE = re.compile(r"@\w+")
_WS_RE = re.compile(r"\s+")

DEFAULT_PUNCT = frozenset(".,!?'-")


@dataclass(frozen=True)
class CleanConfig:
    min_tokens: int = 4
    allowed_punct: frozenset[str] = DEFAULT_PUNCT
    collapse_repeat_punct: bool = True

    def __post_init__(self):
        if self.min_tokens < 1:
            raise ValueError("min_tokens must be >= 1")
        object.__setattr__(self, "allowed_punct", frozenset(self.allowed_punct))


@dataclass(frozen=True)
class CleanResult:
    clean_text: str
    kept: bool
    removed_urls: int
    removed_mentions: int
    token_count: int


def is_word_char(ch: str) -> bool:
    """Letters (with their combining marks) and digits, by Unicode category."""
    return unicodedata.category(ch)[0] in "LMN"


def _strip_special(text: str, allowed: frozenset[str]) -> str:
    return "".join(ch if (is_word_char(ch) or ch.isspace() or ch in allowed) else " " for ch in text)


@lru_cache(maxsize=32)
def _repeat_re(allowed: frozenset[str]) -> re.Pattern | None:
    if not allowed:
        return None
    chars = "".join(re.escape(c) for c in sorted(allowed))
    return re.compile(rf"([{chars}])\1+")


def _one_pass(text: str, cfg: CleanConfig) -> tuple[str, int, int]:
    text, n_urls = URL_RE.subn(" ", text)
    text, n_mentions = MENTION_RE.subn(" ", text)
    text = _strip_special(text, cfg.allowed_punct)
    if cfg.collapse_repeat_punct:
        pattern = _repeat_re(cfg.allowed_punct)
        if pattern is not None:
            text = pattern.sub(r"\1", text)
    text = _WS_RE.sub(" ", text).strip()
    return text, n_urls, n_mentions


def clean(text: str, cfg: CleanConfig = CleanConfig()) -> CleanResult:
    """Strip URLs, mentions and special characters; decide keep/drop.

    Removed spans become spaces so no two surviving words are glued
    together. The rule sequence is repeated until the text stops changing,
    which makes ``clean`` idempotent for any ``allowed_punct``.
    """
    urls = mentions = 0
    current = text
    while True:
        nxt, n_urls, n_mentions = _one_pass(current, cfg)
        urls += n_urls
        mentions += n_mentions
        if nxt == current:
            break
        current = nxt
    tokens = current.split(" ") if current else []
    return CleanResult(current, len(tokens) >= cfg.min_tokens, urls, mentions, len(tokens))


STOPWORDS = frozenset(
    """a about above after again all am an and any are as at be because been before being below between both
    but by can could did do does doing down during each few for from further had has have having he her here
    hers herself him himself his how i if in into is it its itself just me more most my myself of off on once
    only or other our ours ourselves out over own same she should so some such than that the their theirs them
    themselves then there these they this those through to too under until up very was we were what when where
    which while who whom why will with would you your yours yourself yourselves im ive its dont get got one also
    s t""".split()
)


@dataclass(frozen=True)
class TokenizerConfig:
    lowercase: bool = True
    ngram_max: int = 1
    stopwords: frozenset[str] = field(default=frozenset())

    def to_dict(self) -> dict:
        return {"lowercase": self.lowercase, "ngram_max": self.ngram_max, "stopwords": sorted(self.stopwords)}

    @classmethod
    def from_dict(cls, data: dict) -> TokenizerConfig:
        return cls(bool(data["lowercase"]), int(data["ngram_max"]), frozenset(data.get("stopwords", ())))


SENTIMENT_TOKENIZER = TokenizerConfig(ngram_max=2)
TOPIC_TOKENIZER = TokenizerConfig(ngram_max=1, stopwords=STOPWORDS)


def words(clean_text: str, lowercase: bool = True) -> list[str]:
    """Whitespace tokens of ``clean_text`` with edge punctuation stripped."""
    out = []
    for tok in clean_text.split():
        tok = tok.strip(".,!?'-\"")
        if tok:
            out.append(tok.lower() if lowercase else tok)
    return out


def features(clean_text: str, cfg: TokenizerConfig) -> list[str]:
    """Unigram (and optionally higher n-gram) features, n-grams space-joined."""
    toks = [w for w in words(clean_text, cfg.lowercase) if w not in cfg.stopwords]
    out = list(toks)
    for n in range(2, cfg.ngram_max + 1):
        out.extend(" ".join(toks[i : i + n]) for i in range(len(toks) - n + 1))
    return out
