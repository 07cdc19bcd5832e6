import sys
from datetime import datetime, timedelta, timezone
from pathlib import Path

import pytest

from vaxwatch.corpus import Platform, ProcessedPost, RawPost, author_digest

FIXTURES = Path(__file__).parent / "fixtures"
DEMO = Path(__file__).resolve().parents[1] / "demo"

T0 = datetime(2024, 1, 1, tzinfo=timezone.utc)


def make_post(pid="p1", platform=Platform.REDDIT, text="vaccine side effects worry me a lot",
              created=T0, **extra) -> RawPost:
    platform = Platform(platform)
    return RawPost(
        id=f"{platform.value}-{pid}",
        platform=platform,
        platform_id=pid,
        author_hash=author_digest("someone", "salt"),
        created_at=created,
        fetched_at=created + timedelta(hours=1),
        text=text,
        lang="en",
        **extra,
    )


def make_processed(pid="p1", clean_text=None, kept=True, **fields) -> ProcessedPost:
    created = fields.pop("created", T0)
    platform = fields.pop("platform", Platform.REDDIT)
    text = fields.pop("text", "vaccine side effects worry me a lot")
    base = make_post(pid, platform, text, created)
    return ProcessedPost.from_raw(base).evolve(clean_text=clean_text or text, kept=kept, **fields)


@pytest.fixture
def store(tmp_path):
    from vaxwatch.corpus import CorpusStore

    with CorpusStore(tmp_path / "store") as s:
        yield s


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for line in sorted(mod.RESULTS, key=lambda s: int(s.split()[1].rstrip("."))):
        terminalreporter.write_line(line)
