import re

from hypothesis import given, settings
from hypothesis import strategies as st

from vaxwatch.normalize import (
    MENTION_RE,
    STOPWORDS,
    TOPIC_TOKENIZER,
    URL_RE,
    CleanConfig,
    TokenizerConfig,
    clean,
    features,
    is_word_char,
    words,
)


def test_links_mentions_and_repeats_removed():
    r = clean("Check https://t.co/ab @user vaccine side effects worry me!!")
    # "Check" survives: only the link and mention are removed, which leaves six tokens
    assert r.clean_text == "Check vaccine side effects worry me!"
    assert (r.kept, r.removed_urls, r.removed_mentions, r.token_count) == (True, 1, 1, 6)


def test_clean_text_unchanged():
    r = clean("Vaccines are safe and effective")
    assert r.clean_text == "Vaccines are safe and effective"
    assert r.kept and r.token_count == 5


def test_short_post_dropped():
    r = clean("ok thanks")
    assert r.clean_text == "ok thanks" and not r.kept and r.token_count == 2


def test_empty_input():
    r = clean("")
    assert r.clean_text == "" and r.token_count == 0 and not r.kept


def test_emoji_and_symbols_become_spaces():
    assert clean("jab\U0001F489done #sore arm & fever").clean_text == "jab done sore arm fever"


def test_www_links_and_mentions_inside_urls():
    r = clean("see www.health.gov.au/x?@who=1 and http://a.b/@c now")
    assert r.clean_text == "see and now"
    assert (r.removed_urls, r.removed_mentions) == (2, 0)


def test_non_latin_scripts_survive():
    assert clean("疫苗 副作用 vacuna segura, ok").clean_text == "疫苗 副作用 vacuna segura, ok"
    assert clean("café naïve").clean_text == "café naïve"


def test_min_tokens_configurable():
    assert clean("one two", CleanConfig(min_tokens=2)).kept
    assert not clean("one", CleanConfig(min_tokens=2)).kept


def test_collapse_can_be_disabled():
    assert clean("wow!!! ok", CleanConfig(collapse_repeat_punct=False)).clean_text == "wow!!! ok"


def test_words_and_features():
    assert words("I'm SO tired... 'really'") == ["i'm", "so", "tired", "really"]
    assert features("sore arm today", TokenizerConfig(ngram_max=2)) == [
        "sore", "arm", "today", "sore arm", "arm today"]
    assert features("the arm and the fever", TOPIC_TOKENIZER) == ["arm", "fever"]
    assert {"the", "and"} <= STOPWORDS


# -- properties ---------------------------------------------------------------

_noisy = st.text(
    alphabet=st.one_of(
        st.characters(blacklist_categories=("Cs",)),
        st.sampled_from(list("@#:/.!?,'- \t\nwhtps")),
    ),
    max_size=80,
)
_punct = st.frozensets(st.sampled_from(list(".,!?'-:;@/#\"")), max_size=6)


@settings(max_examples=400)
@given(_noisy, _punct)
def test_idempotent(text, punct):
    cfg = CleanConfig(allowed_punct=punct)
    once = clean(text, cfg).clean_text
    assert clean(once, cfg).clean_text == once


@settings(max_examples=300)
@given(_noisy)
def test_output_alphabet(text):
    cfg = CleanConfig()
    for ch in clean(text, cfg).clean_text:
        assert is_word_char(ch) or ch == " " or ch in cfg.allowed_punct


@settings(max_examples=300)
@given(_noisy, _punct)
def test_no_url_or_mention_survives(text, punct):
    out = clean(text, CleanConfig(allowed_punct=punct)).clean_text
    assert not URL_RE.search(out)
    assert not MENTION_RE.search(out)


@settings(max_examples=300)
@given(_noisy)
def test_alphanumeric_tokens_come_from_input(text):
    out = clean(text).clean_text
    for tok in re.findall(r"[^\W_]+", out):
        assert tok in text


@settings(max_examples=200)
@given(_noisy, st.integers(1, 8))
def test_kept_iff_enough_tokens(text, min_tokens):
    r = clean(text, CleanConfig(min_tokens=min_tokens))
    assert r.kept == (r.token_count >= min_tokens)
    assert r.token_count == len(r.clean_text.split())
