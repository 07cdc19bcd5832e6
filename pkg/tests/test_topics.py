import json
import math
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import ctfidf_brute, tfidf_brute, upgma_brute

from conftest import make_processed
from vaxwatch.corpus import Concern, Relevance
from vaxwatch.normalize import TOPIC_TOKENIZER, features
from vaxwatch.providers import FailingProvider, MockProvider, ProviderClient, ResponseCache
from vaxwatch.retry import VirtualClock
from vaxwatch.sentiment import RoutingLog
from vaxwatch.topics import (
    OUTLIER,
    ClusterParams,
    ConcernTaxonomy,
    DocVector,
    FitParams,
    TopicError,
    TopicModel,
    categorize_concern,
    cluster,
    ctfidf,
    fit_topics,
    label_topic,
    vectorize,
)


def _client(provider):
    return ProviderClient(provider, cache=ResponseCache(), clock=VirtualClock())


def _post(text, **kw):
    return make_processed(clean_text=text, relevance=Relevance.GENERAL_DISCUSSION, **kw)


# -- concerns -------------------------------------------------------------------

@pytest.mark.parametrize("text, expected", [
    ("i don't trust the government on boosters", {Concern.TRUST_IN_AUTHORITIES}),
    ("fever and chills after dose two", {Concern.SIDE_EFFECTS}),
    ("nice weather today", set()),
])
def test_concern_taxonomy_examples(text, expected):
    assert categorize_concern(_post(text), ConcernTaxonomy.load(), None, use_provider=False) == expected


def test_concern_provider_when_taxonomy_silent():
    post = _post("something feels off about all this")
    mock = MockProvider(default="misinformation and safety")
    got = categorize_concern(post, ConcernTaxonomy.load(), _client(mock), use_provider=True)
    assert got == {Concern.MISINFORMATION, Concern.SAFETY}
    log = RoutingLog()
    got = categorize_concern(post, ConcernTaxonomy.load(), _client(MockProvider(default="???")), True, log)
    assert got == set() and log.warnings


def test_concern_requires_relevant_kept_post():
    with pytest.raises(ValueError):
        categorize_concern(make_processed(relevance=Relevance.UNRELATED), ConcernTaxonomy.load(), None, False)


def test_taxonomy_must_cover_every_concern(tmp_path):
    (tmp_path / "t.json").write_text(json.dumps({"safety": ["unsafe"]}), encoding="utf-8")
    with pytest.raises(ValueError):
        ConcernTaxonomy.load(tmp_path / "t.json")


# -- vectors --------------------------------------------------------------------

def test_disjoint_docs_are_orthogonal():
    vecs, _ = vectorize(["clot leg", "fever chills", "clot leg", "fever chills"])
    assert vecs[0].dot(vecs[1]) == 0.0
    assert vecs[0].dot(vecs[2]) == pytest.approx(1.0)


def test_term_in_every_doc_has_zero_weight():
    vecs, terms = vectorize(["vaccine clot", "vaccine fever", "vaccine clot"])
    j = terms.index("vaccine")
    assert all(v.weights.get(j, 0.0) == 0.0 for v in vecs)


def test_three_doc_toy_matches_brute_force():
    docs = ["clot clot leg pain", "leg pain fever", "fever chills clot"]
    vecs, terms = vectorize(docs)
    want = tfidf_brute([features(d, TOPIC_TOKENIZER) for d in docs])
    for v, w in zip(vecs, want):
        got = {terms[i]: x for i, x in v.weights.items()}
        for t in set(got) | set(w):
            assert got.get(t, 0.0) == pytest.approx(w.get(t, 0.0), abs=1e-9)
        assert v.norm == pytest.approx(math.sqrt(sum(x * x for x in v.weights.values())), abs=1e-9)
    # doc 0: clot tf 2, leg tf 1, pain tf 1, each with idf ln(3/2)
    assert {terms[i]: x for i, x in vecs[0].weights.items()}["clot"] == pytest.approx(2 / math.sqrt(6), abs=1e-12)


def test_vectorize_errors():
    with pytest.raises(TopicError):
        vectorize([])
    with pytest.raises(TopicError):
        vectorize(["", "the and"])


# -- clustering -----------------------------------------------------------------

def test_two_groups_of_copies_form_two_clusters():
    a, b = DocVector.of({0: 1.0}), DocVector.of({1: 1.0})
    assignments = cluster([a] * 12 + [b] * 12, ClusterParams(0.6, 10))
    assert assignments == [0] * 12 + [1] * 12


def test_orthogonal_vectors_are_all_outliers():
    vecs = [DocVector.of({i: 1.0}) for i in range(24)]
    assert cluster(vecs, ClusterParams(0.6, 10)) == [OUTLIER] * 24


def test_zero_vectors_never_merge():
    vecs = [DocVector({}, 0.0)] * 12 + [DocVector.of({0: 1.0})] * 10
    assert cluster(vecs, ClusterParams(0.6, 10)) == [OUTLIER] * 12 + [0] * 10


def _random_vectors(n, dim, seed, density=0.4):
    rng = random.Random(seed)
    out = []
    for _ in range(n):
        w = {i: rng.random() for i in range(dim) if rng.random() < density}
        out.append(DocVector.of(w) if w else DocVector({}, 0.0))
    return out


def test_sixty_vector_fixture_is_deterministic():
    vecs = _random_vectors(60, 12, seed=60)
    params = ClusterParams(0.6, 5)
    first, second = cluster(vecs, params), cluster(list(vecs), params)
    assert first == second
    sizes = {t: first.count(t) for t in set(first) if t != OUTLIER}
    assert all(s >= 5 for s in sizes.values())
    assert first.count(OUTLIER) + sum(sizes.values()) == 60


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 18), st.integers(2, 6), st.integers(0, 10**6), st.floats(0.05, 1.2), st.integers(1, 4))
def test_cluster_matches_naive_average_linkage(n, dim, seed, threshold, min_size):
    vecs = _random_vectors(n, dim, seed, density=0.6)
    rows = [[v.weights.get(i, 0.0) for i in range(dim)] for v in vecs]
    assert cluster(vecs, ClusterParams(threshold, min_size)) == upgma_brute(rows, threshold, min_size)


# -- c-TF-IDF -------------------------------------------------------------------

def test_ctfidf_toy_example():
    w = ctfidf([["clot", "clot", "pain"], ["fever"]], [0, 1])
    assert w.avg_words == 2.0
    assert w.weights[0]["clot"] == pytest.approx(2 * math.log(2), abs=1e-12)
    assert w.weights[0]["clot"] == pytest.approx(1.386294, abs=1e-6)
    assert w.weights[0].get("fever", 0.0) == 0.0


def test_ctfidf_duplication_doubles_weights():
    docs = [["clot", "clot", "pain"], ["fever", "pain"], ["clot", "leg"]]
    classes = [0, 1, 0]
    once = ctfidf(docs, classes)
    twice = ctfidf(docs + docs, classes + classes)
    for c in once.weights:
        for t, w in once.weights[c].items():
            assert twice.weights[c][t] == pytest.approx(2 * w, abs=1e-12)
        assert [t for t, _ in once.top_terms(c)] == [t for t, _ in twice.top_terms(c)]
    brute = ctfidf_brute({0: [docs[0], docs[2]] * 2, 1: [docs[1]] * 2})
    for c in brute:
        for t, w in brute[c].items():
            assert twice.weights[c][t] == pytest.approx(w, abs=1e-12)


def test_ctfidf_ignores_outliers_and_needs_a_class():
    w = ctfidf([["a"], ["b"]], [0, OUTLIER])
    assert set(w.weights) == {0} and "b" not in w.term_freq
    with pytest.raises(TopicError):
        ctfidf([["a"]], [OUTLIER])


def test_top_terms_tie_break_lexicographic():
    w = ctfidf([["b", "a", "c", "c"]], [0])
    assert [t for t, _ in w.top_terms(0)] == ["c", "a", "b"]


_vocab = st.sampled_from(["clot", "leg", "pain", "fever", "rash", "chills", "arm", "trust", "gov"])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.lists(_vocab, min_size=1, max_size=8), st.integers(-1, 4)), min_size=1, max_size=20))
def test_ctfidf_support_and_oracle(rows):
    docs = [d for d, _ in rows]
    classes = [c for _, c in rows]
    if all(c == OUTLIER for c in classes):
        return
    got = ctfidf(docs, classes)
    grouped = {}
    for d, c in rows:
        if c != OUTLIER:
            grouped.setdefault(c, []).append(d)
    want = ctfidf_brute(grouped)
    for c in want:
        for t in set(want[c]) | set(got.weights[c]):
            assert got.weights[c].get(t, 0.0) == pytest.approx(want[c].get(t, 0.0), abs=1e-9)
            assert (got.weights[c].get(t, 0.0) > 0) == (got.tf[c][t] > 0)


# -- labelling and fitting ------------------------------------------------------

TERMS = [("clot", 3.0), ("blood", 2.0), ("leg", 1.5), ("pain", 1.0), ("swelling", 0.5)]


def test_default_label_joins_top_k():
    assert label_topic(TERMS, k=4) == "clot, blood, leg, pain"
    assert label_topic(TERMS[:2], k=4) == "clot, blood"


def test_provider_label_used():
    mock = MockProvider(default="Blood Clot Concerns and Experiences")
    assert label_topic(TERMS, 4, _client(mock), use_provider=True) == "Blood Clot Concerns and Experiences"
    assert mock.calls[0].task_id == "topic_name.v1"


def test_provider_failure_falls_back_to_keywords():
    log = RoutingLog()
    assert label_topic(TERMS, 4, _client(FailingProvider()), True, log) == "clot, blood, leg, pain"
    assert log.degraded == 1


def test_label_needs_positive_term():
    with pytest.raises(TopicError):
        label_topic([("x", 0.0)])


def _grouped_fixture():
    side = [_post(f"fever chills headache after dose {i % 3}", pid=f"s{i}",
                  concerns=frozenset({Concern.SIDE_EFFECTS})) for i in range(40)]
    trust = [_post(f"government officials lied about mandates again {i % 2}", pid=f"t{i}",
                   concerns=frozenset({Concern.TRUST_IN_AUTHORITIES})) for i in range(40)]
    return side, trust


def test_fit_topics_per_concern_group():
    side, trust = _grouped_fixture()
    result = fit_topics(side + trust, FitParams(), concern_grouping=True)
    assert set(result.models) == {"side_effects", "trust_in_authorities"}
    assert set(result.models["side_effects"].assignments) == {p.key for p in side}
    assert set(result.models["trust_in_authorities"].assignments) == {p.key for p in trust}
    assert result.skipped["safety"] == 0


def test_fit_topics_without_grouping():
    side, trust = _grouped_fixture()
    result = fit_topics(side + trust, FitParams(), concern_grouping=False)
    assert list(result.models) == ["all"]
    model = result.models["all"]
    assert len(model.assignments) == 80
    assert [t.size for t in model.topics] == [40, 40]
    assert model.outliers + sum(t.size for t in model.topics) == 80


def test_small_group_skipped():
    side, _ = _grouped_fixture()
    result = fit_topics(side[:5], FitParams(ClusterParams(0.6, 10)), concern_grouping=True)
    assert result.models == {} and result.skipped["side_effects"] == 5


def test_topic_model_dump_round_trip(tmp_path):
    side, trust = _grouped_fixture()
    model = fit_topics(side + trust, FitParams(), concern_grouping=False).models["all"]
    path = model.dump(tmp_path)
    assert path.name.startswith("topics-all-") and path.suffix == ".json"
    again = TopicModel.from_dict(json.loads(path.read_text()))
    assert again.assignments == model.assignments
    assert [(t.id, t.label, t.size) for t in again.topics] == [(t.id, t.label, t.size) for t in model.topics]
