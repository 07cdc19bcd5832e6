"""Seeded synthetic corpora for demos and tests.

Posts are assembled from templates with a known relevance and sentiment,
then decorated with the noise real feeds carry (links, mentions, emoji,
shouting punctuation) and a share of throwaway short replies.
"""

from __future__ import annotations

import argparse
import json
import random
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from pathlib import Path

from .corpus import author_digest, format_ts

PLATFORMS = ("x", "reddit", "youtube", "facebook")

VACCINES = {
    "covid19": ["covid vaccine", "pfizer booster", "moderna shot", "covid booster", "covid jab", "novavax dose"],
    "shingrix": ["shingrix jab", "shingles vaccine", "shingrix shot"],
    "rsv": ["rsv vaccine", "arexvy shot", "abrysvo jab"],
    "hpv": ["gardasil shot", "hpv vaccine"],
    "other": ["flu shot", "vaccine", "whooping cough jab"],
}
VACCINE_WEIGHTS = {"covid19": 0.6, "shingrix": 0.15, "rsv": 0.1, "hpv": 0.07, "other": 0.08}

PERSONAL = {
    "negative": [
        "i got my {v} yesterday and had a terrible fever and chills all night",
        "after my {v} my arm was sore and swollen for days, awful",
        "my period was late and really heavy after the {v}, so worried",
        "had my {v} last week and ended up in hospital with chest pain",
        "never again, my last {v} left me sick and exhausted for a week",
        "my mum had a bad reaction to her {v} and is still recovering",
        "got the {v} and my menstrual cycle has been irregular ever since",
        "i had myocarditis after my {v}, scary and painful",
        "still recovering from the {v}, worst headache and nausea of my life",
    ],
    "neutral": [
        "got my {v} today, mild headache and a bit tired, nothing else",
        "had the {v} this morning at the pharmacy, sore arm as expected",
        "booked my {v} for next tuesday at the local clinic",
        "second {v} done, slight fatigue this evening",
        "my dad got the {v} at his gp, took ten minutes",
        "had my {v} and my period came a few days late this month",
    ],
    "positive": [
        "got my {v} today and felt totally fine, so grateful to the nurses",
        "no side effects at all from the {v}, really relieved and happy",
        "just had my {v}, easy and painless, thank you to the clinic staff",
        "my nan had her {v} and she feels great, so glad she is protected",
        "had the {v} while pregnant and baby is healthy, best decision",
    ],
}

GENERAL = {
    "negative": [
        "i don't trust the government on the {v}, they rushed it",
        "big pharma covered up the deaths from the {v}, total disgrace",
        "the {v} is dangerous and not safe, the long term effects are unknown",
        "officials keep lying about blood clots from the {v}",
        "the {v} mandates were a disaster and destroyed public trust",
        "they are hiding the truth about the {v} and miscarriage risk",
        "people say the {v} has a microchip, this misinformation is everywhere",
    ],
    "neutral": [
        "does anyone know if the {v} causes a fever in older people",
        "new study on the {v} and myocarditis published this week",
        "where can i book the {v} for over 65s in melbourne",
        "is it safe to get the {v} during pregnancy, any advice",
        "the health department updated the {v} eligibility rules today",
        "can you get the {v} and the flu shot on the same day",
        "question about the {v} and irregular menstrual cycles, any data on this",
    ],
    "positive": [
        "the {v} has saved so many lives, great work by the researchers",
        "really pleased the {v} is now free for older adults",
        "the {v} is safe and effective, trust the science",
        "great news, the {v} rollout for pregnant women is going well",
        "so thankful for the {v}, it protects the most vulnerable",
    ],
}

UNRELATED = [
    "best pizza dough recipe ever, so crispy and light",
    "the weather in melbourne is lovely today, going for a walk",
    "footy finals tickets sold out again, so annoying",
    "anyone watching the new series tonight, the finale was great",
    "traffic on the monash freeway is terrible this morning",
    "my cat knocked the coffee off the table again",
    "new cafe opened on smith street, great coffee and cake",
    "the train was late again, public transport in this city",
]

# clause pairs of opposite polarity; the post's overall label is neutral
MIXED = [
    ("had a terrible fever after the {v}", "but honestly glad i got it"),
    ("my arm was sore and swollen from the {v}", "still grateful to the nurses though"),
    ("the {v} has saved lives", "but i don't trust the government on the rollout"),
    ("great that the {v} is free now", "though the side effects worry me a bit"),
    ("booked my {v}", "a bit worried about the chest pain stories"),
    ("my mum had the {v} and feels great", "but my period was really heavy after mine"),
]

# everyday chatter that brushes against vaccines; labelled by whether the
# writer reports their own dose
BORDER = [
    ("traffic was terrible on the way to my {v}", "personal_experience"),
    ("the cafe next to the clinic does great coffee, {v} day", "personal_experience"),
    ("footy tonight then {v} tomorrow", "personal_experience"),
    ("my cat ignored me all day, anyway what about the {v}", "general_discussion"),
    ("weather is lovely, pharmacy had a {v} sign up", "general_discussion"),
    ("the news tonight was all about the {v} again", "general_discussion"),
]

SHORT = ["ok thanks", "lol", "same here", "this!!", "wow", "so true", "yep", "agreed 100"]
EMOJI = ["\U0001F637", "\U0001F489", "\U0001F622", "\U0001F44D", "\U0001F621", "❤️", "\U0001F914"]
HANDLES = ["@health_vic", "@saefvic", "@dr_jones", "@newsdesk", "@mum_of_3", "@anon123"]
LINKS = ["https://t.co/x1Yz9", "http://bit.ly/3abcd", "www.health.gov.au/vaccines", "https://example.org/news?id=42"]


@dataclass(frozen=True)
class Sample:
    text: str
    relevance: str
    sentiment: str | None
    vaccine: str | None


def _pick_vaccine(rng: random.Random) -> tuple[str, str]:
    tags = list(VACCINE_WEIGHTS)
    tag = rng.choices(tags, weights=[VACCINE_WEIGHTS[t] for t in tags])[0]
    return tag, rng.choice(VACCINES[tag])


def sample_text(rng: random.Random, unrelated_share: float = 0.15, personal_share: float = 0.4,
                sentiment_weights: tuple[float, float, float] = (0.25, 0.5, 0.25),
                mixed_share: float = 0.1, border_share: float = 0.06) -> Sample:
    u = rng.random()
    if u < unrelated_share:
        return Sample(rng.choice(UNRELATED), "unrelated", None, None)
    sentiment = rng.choices(["negative", "neutral", "positive"], weights=sentiment_weights)[0]
    tag, phrase = _pick_vaccine(rng)
    if rng.random() < border_share:
        template, relevance = rng.choice(BORDER)
        return Sample(template.format(v=phrase), relevance, "neutral", tag)
    if rng.random() < mixed_share:
        first, second = rng.choice(MIXED)
        relevance = "personal_experience" if first.startswith(("had", "my", "booked")) else "general_discussion"
        return Sample(f"{first.format(v=phrase)}, {second}", relevance, "neutral", tag)
    if u < unrelated_share + personal_share:
        template, relevance = rng.choice(PERSONAL[sentiment]), "personal_experience"
    else:
        template, relevance = rng.choice(GENERAL[sentiment]), "general_discussion"
    return Sample(template.format(v=phrase), relevance, sentiment, tag)


def decorate(text: str, rng: random.Random) -> str:
    """Add feed noise: links, mentions, emoji, repeated punctuation, casing."""
    if rng.random() < 0.3:
        text = f"{rng.choice(HANDLES)} {text}"
    if rng.random() < 0.3:
        text = f"{text} {rng.choice(LINKS)}"
    if rng.random() < 0.25:
        text = f"{text} {rng.choice(EMOJI)}"
    if rng.random() < 0.2:
        text = text + rng.choice(["!!!", "??", "...", "!!"])
    if rng.random() < 0.2:
        text = text[:1].upper() + text[1:]
    return text


def _record(platform: str, n: int, text: str, created: datetime, query: str, rng: random.Random) -> dict:
    author = f"user{rng.randrange(400)}"
    return {
        "id": f"{platform[:2]}{n:06d}",
        "platform": platform,
        "platform_id": f"{platform}-{n:06d}",
        "author_hash": author_digest(author, "synthetic"),
        "created_at": format_ts(created),
        "fetched_at": format_ts(created + timedelta(hours=rng.randrange(1, 48))),
        "text": text,
        "lang": "en",
        "source_query": query,
    }


def generate_posts(
    n: int,
    seed: int = 7,
    start: datetime = datetime(2023, 8, 1, tzinfo=timezone.utc),
    end: datetime = datetime(2024, 8, 1, tzinfo=timezone.utc),
    short_share: float = 0.08,
) -> list[tuple[dict, Sample | None]]:
    """``n`` raw post records, each paired with its ground truth (``None`` for short replies)."""
    rng = random.Random(seed)
    span = int((end - start).total_seconds())
    out = []
    for i in range(n):
        created = start + timedelta(seconds=rng.randrange(span))
        platform = rng.choice(PLATFORMS)
        if rng.random() < short_share:
            sample = None
            text = decorate(rng.choice(SHORT), rng)
        else:
            sample = sample_text(rng)
            text = decorate(sample.text, rng)
        query = "vaccine side effects" if sample is None or sample.vaccine is None else f"{sample.vaccine} vaccine"
        out.append((_record(platform, i, text, created, query, rng), sample))
    return out


def generate_labeled(n: int, task: str, seed: int = 11, label_noise: float = 0.1) -> list[dict]:
    """Training records (corpus format plus ``label``) for ``sentiment`` or ``relevance``.

    A ``label_noise`` fraction of records carries a random label, as hand
    annotation would.
    """
    rng = random.Random(seed)
    choices = ["negative", "neutral", "positive"] if task == "sentiment" else [
        "general_discussion", "personal_experience", "unrelated"]
    start = datetime(2023, 1, 1, tzinfo=timezone.utc)
    out = []
    while len(out) < n:
        sample = sample_text(rng, unrelated_share=0.0 if task == "sentiment" else 0.3)
        label = sample.sentiment if task == "sentiment" else sample.relevance
        rec = _record("reddit", len(out), decorate(sample.text, rng), start + timedelta(hours=len(out)), "train", rng)
        rec["label"] = rng.choice(choices) if rng.random() < label_noise else label
        out.append(rec)
    return out


def class_vocab_corpus(
    n_train: int = 600,
    n_test: int = 300,
    seed: int = 2024,
    noise: float = 0.10,
    doc_len: int = 14,
    vocab_per_class: int = 40,
    noise_vocab: int = 60,
) -> tuple[list[tuple[str, str]], list[tuple[str, str]]]:
    """Three-class corpus where each token comes from the class vocabulary,
    except a ``noise`` fraction drawn from a shared vocabulary."""
    rng = random.Random(seed)
    labels = ["negative", "neutral", "positive"]
    vocab = {lbl: [f"{lbl[:3]}w{i}" for i in range(vocab_per_class)] for lbl in labels}
    shared = [f"noise{i}" for i in range(noise_vocab)]

    def doc(label: str) -> str:
        return " ".join(rng.choice(shared) if rng.random() < noise else rng.choice(vocab[label]) for _ in range(doc_len))

    def batch(n: int) -> list[tuple[str, str]]:
        return [(doc(labels[i % 3]), labels[i % 3]) for i in range(n)]

    return batch(n_train), batch(n_test)


def write_jsonl(path: Path, records) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(json.dumps(rec, ensure_ascii=False, separators=(",", ":")) + "\n")


def write_trends(path: Path, seed: int = 3) -> None:
    rng = random.Random(seed)
    day = datetime(2023, 8, 1)
    lines = ["date,query,interest"]
    while day < datetime(2024, 8, 1):
        for query in ("covid vaccine", "shingles vaccine"):
            lines.append(f"{day:%Y-%m-%d},{query},{rng.randint(20, 100)}")
        day += timedelta(days=7)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="Write the synthetic demo corpus.")
    parser.add_argument("out", type=Path)
    parser.add_argument("--posts", type=int, default=1000)
    args = parser.parse_args(argv)
    write_jsonl(args.out / "posts.jsonl", [rec for rec, _ in generate_posts(args.posts)])
    write_jsonl(args.out / "labeled-sentiment.jsonl", generate_labeled(600, "sentiment"))
    write_jsonl(args.out / "labeled-relevance.jsonl", generate_labeled(600, "relevance"))
    write_trends(args.out / "trends.csv")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
