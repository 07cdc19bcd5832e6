import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import make_processed
from vaxwatch.corpus import Relevance, VaccineTag
from vaxwatch.normalize import SENTIMENT_TOKENIZER
from vaxwatch.providers import FailingProvider, MockProvider, ProviderClient, ResponseCache
from vaxwatch.relevance import (
    RELEVANCE_LABELS,
    EnsemblePolicy,
    VaccineLexicon,
    baseline_relevance,
    classify_relevance,
    load_phrase_map,
    tag_vaccines,
)
from vaxwatch.retry import VirtualClock
from vaxwatch.sentiment import BaselineModel, ModelError, RoutingLog, train

NINE = [
    ("my arm was sore after my covid shot", "personal_experience"),
    ("i got my covid shot and my arm was sore", "personal_experience"),
    ("after my booster my arm was sore all day", "personal_experience"),
    ("the covid vaccine rollout is in the news", "general_discussion"),
    ("news says the covid vaccine is safe", "general_discussion"),
    ("is the vaccine safe for older people", "general_discussion"),
    ("best pizza recipe for the weekend", "unrelated"),
    ("weekend pizza and a walk in the park", "unrelated"),
    ("new recipe for pizza dough", "unrelated"),
]


def _client(provider):
    return ProviderClient(provider, cache=ResponseCache(), clock=VirtualClock())


def _stub(probs):
    return BaselineModel(RELEVANCE_LABELS, {}, np.log(np.array(probs)), np.zeros((3, 0)), 1.0, SENTIMENT_TOKENIZER)


def test_nine_doc_first_person_text():
    label, conf = baseline_relevance("my arm was sore after my covid shot", train(NINE))
    assert label is Relevance.PERSONAL_EXPERIENCE
    assert conf > 0.99


def test_nine_doc_pizza_hand_posterior():
    # in-vocabulary evidence is "pizza" and "recipe"; |V| = 28 and the class
    # token totals are 23 (general), 37 (personal), 16 (unrelated)
    unrelated = (4 / 44) * (3 / 44)
    general = (1 / 51) ** 2
    personal = (1 / 65) ** 2
    expected = unrelated / (unrelated + general + personal)
    label, conf = baseline_relevance("best pizza dough recipe", train(NINE))
    assert label is Relevance.UNRELATED
    assert conf == pytest.approx(expected, abs=1e-12)
    assert conf == pytest.approx(0.908915, abs=1e-6)


def test_no_vocabulary_gives_max_prior():
    model = train(NINE + [("pizza night again with the park crew", "unrelated")])
    label, conf = baseline_relevance("zebra", model)
    assert label is Relevance.UNRELATED and conf == pytest.approx(0.4)


def test_untrained_model_errors():
    with pytest.raises(ModelError):
        baseline_relevance("x", None)


def test_confident_baseline_answers():
    mock = MockProvider(default="unrelated")
    r = classify_relevance(make_processed(), _stub([0.04, 0.92, 0.04]), _client(mock), EnsemblePolicy(0.75))
    assert (r.label, r.source) == (Relevance.PERSONAL_EXPERIENCE, "baseline")
    assert mock.calls == []


def test_uncertain_baseline_overridden():
    mock = MockProvider(default="unrelated")
    r = classify_relevance(make_processed(), _stub([0.51, 0.30, 0.19]), _client(mock), EnsemblePolicy(0.75))
    assert (r.label, r.source) == (Relevance.UNRELATED, "ensemble_override")
    assert r.confidence == pytest.approx(0.51)
    assert mock.calls[0].task_id == "relevance.v1"


def test_provider_down_keeps_baseline_with_warning():
    log = RoutingLog()
    r = classify_relevance(make_processed(), _stub([0.51, 0.30, 0.19]), _client(FailingProvider()), EnsemblePolicy(), log)
    assert (r.label, r.source) == (Relevance.GENERAL_DISCUSSION, "baseline")
    assert log.degraded == 1 and len(log.warnings) == 1


def test_dropped_post_rejected():
    with pytest.raises(ValueError):
        classify_relevance(make_processed(kept=False), _stub([0.5, 0.3, 0.2]), None, EnsemblePolicy())


@pytest.mark.parametrize("text, tags", [
    ("got my shingrix jab yesterday, arm sore", {VaccineTag.SHINGRIX}),
    ("pfizer booster then moderna later", {VaccineTag.COVID19}),
    ("vaccines in general scare me", {VaccineTag.OTHER}),
    ("covid booster and gardasil on the same day", {VaccineTag.COVID19, VaccineTag.HPV}),
])
def test_lexicon_tags(text, tags):
    post = make_processed(clean_text=text, relevance=Relevance.GENERAL_DISCUSSION)
    assert tag_vaccines(post, VaccineLexicon.load(), None, use_provider=False) == tags


def test_provider_tags_when_lexicon_silent():
    post = make_processed(clean_text="the new jab for babies worries me", relevance=Relevance.GENERAL_DISCUSSION)
    mock = MockProvider(default="rsv")
    assert tag_vaccines(post, VaccineLexicon.load(), _client(mock), use_provider=True) == {VaccineTag.RSV}
    garbled = MockProvider(default="no idea")
    log = RoutingLog()
    assert tag_vaccines(post, VaccineLexicon.load(), _client(garbled), True, log) == {VaccineTag.OTHER}
    assert log.warnings


def test_unrelated_post_not_tagged():
    with pytest.raises(ValueError):
        tag_vaccines(make_processed(relevance=Relevance.UNRELATED), VaccineLexicon.load(), None, False)


def test_phrase_map_validation(tmp_path):
    (tmp_path / "bad.json").write_text(json.dumps({"covid19": ["Pfizer"]}), encoding="utf-8")
    with pytest.raises(ValueError):
        load_phrase_map(tmp_path / "bad.json", "vaccines.v1.json")
    (tmp_path / "empty.json").write_text(json.dumps({"covid19": []}), encoding="utf-8")
    with pytest.raises(ValueError):
        load_phrase_map(tmp_path / "empty.json", "vaccines.v1.json")


_texts = st.lists(st.text(alphabet="abcdefghijklmnopqrstuvwxyz ", min_size=1, max_size=40), min_size=1, max_size=15)


@settings(max_examples=20, deadline=None)
@given(_texts)
def test_tau_extremes(texts):
    model = train(NINE)
    for tau, expect_none in ((0.0, True), (1.0, False)):
        mock = MockProvider(default="unrelated")
        for t in texts:
            classify_relevance(make_processed(clean_text=t), model, _client(mock), EnsemblePolicy(tau))
        if expect_none:
            assert mock.calls == []
        else:
            below_one = {t for t in texts if baseline_relevance(t, model)[1] < 1.0}
            assert {r.text for r in mock.calls} == below_one


@settings(max_examples=60)
@given(st.text(alphabet="abcdefghijklmnopqrstuvwxyz ", max_size=60),
       st.sampled_from([t for t in VaccineTag if t is not VaccineTag.OTHER]),
       st.text(alphabet="abcdefghijklmnopqrstuvwxyz ", min_size=1, max_size=6))
def test_lexicon_monotone(text, tag, phrase):
    base = VaccineLexicon.load()
    grown = VaccineLexicon({**base, tag: base[tag] + (phrase,)})
    before = base.match(text)
    assert before <= grown.match(text)
