import json
from collections import Counter

import pytest
from hypothesis import given, settings, strategies as st

from conftest import toy_table
from polyroute.errors import InvalidInput, ParseError
from polyroute.harness.dataset import (
    DatasetRecord,
    load_dataset,
    read_records,
    split,
    to_tasks,
    write_records,
)
from polyroute.langsim import PivotResolver


def squad(qas, language="hi"):
    return {"language": language, "data": [{"paragraphs": [{"context": "Some passage.", "qas": qas}]}]}


def qa(i, answers=None):
    return {"id": f"q{i}", "question": f"question {i}?", "answers": answers or [{"text": f"a{i}"}]}


def records(n, langs=("hi", "ta", "fr")):
    return [DatasetRecord(f"r{i:03d}", langs[i % len(langs)], f"ctx {i}", f"q {i}?", (f"a{i}",)) for i in range(n)]


def test_load_five_records(tmp_path):
    p = tmp_path / "d.json"
    p.write_text(json.dumps(squad([qa(i) for i in range(5)])), encoding="utf-8")
    recs = load_dataset(p)
    assert [r.id for r in recs] == [f"q{i}" for i in range(5)]
    assert all(r.language == "hi" and r.context == "Some passage." for r in recs)


def test_fixture_loads(mini_squad):
    recs = load_dataset(mini_squad)
    assert len(recs) == 20
    assert sorted({r.language for r in recs}) == ["en", "fr", "hi", "sw", "ta"]


@pytest.mark.parametrize("bad,match", [
    ({"id": "q1", "question": "x?"}, "answers"),
    ({"id": "q1", "question": "x?", "answers": []}, "non-empty"),
    ({"id": "q1", "question": "", "answers": ["a"]}, "question"),
    ({"id": "q1", "question": "x?", "answers": [{"text": " "}]}, "answer without text"),
])
def test_malformed_records_report_locus(tmp_path, bad, match):
    p = tmp_path / "d.json"
    p.write_text(json.dumps(squad([qa(0), bad])), encoding="utf-8")
    with pytest.raises(ParseError, match=match) as exc:
        load_dataset(p)
    assert "qas[1]" in str(exc.value)


def test_duplicate_ids_rejected(tmp_path):
    p = tmp_path / "d.json"
    p.write_text(json.dumps(squad([qa(1), qa(1)])), encoding="utf-8")
    with pytest.raises(ParseError, match="duplicate"):
        load_dataset(p)


def test_language_required(tmp_path):
    p = tmp_path / "d.json"
    doc = squad([qa(1)])
    del doc["language"]
    p.write_text(json.dumps(doc), encoding="utf-8")
    with pytest.raises(ParseError, match="language"):
        load_dataset(p)


def test_jsonl_round_trip(tmp_path):
    recs = records(7)
    path = write_records(recs, tmp_path / "r.jsonl")
    assert read_records(path) == recs
    assert load_dataset(path, "jsonl") == recs
    with pytest.raises(InvalidInput):
        load_dataset(path, "csv")


def test_hundred_records_split_sixty_twenty_twenty():
    parts = split(records(100))
    assert [len(p) for p in parts] == [60, 20, 20]
    ids = [r.id for p in parts for r in p]
    assert len(set(ids)) == 100


def test_split_is_stratified_and_deterministic():
    recs = records(200, langs=("hi", "ta", "fr", "sw"))
    a, b = split(recs, seed=3), split(recs, seed=3)
    assert a == b
    assert [len(p) for p in a] == [120, 40, 40]
    for part, frac in zip(a, (0.6, 0.2, 0.2)):
        counts = Counter(r.language for r in part)
        assert all(abs(counts[lang] - 50 * frac) <= 1 for lang in ("hi", "ta", "fr", "sw"))
    assert split(recs, seed=4) != a


def test_split_rejects_bad_fractions():
    with pytest.raises(InvalidInput):
        split(records(10), (0.5, 0.2, 0.2))
    with pytest.raises(InvalidInput):
        split(records(10), (1.2, -0.2, 0.0))


def test_exclude_langs_only_affects_offline():
    recs = records(90)
    offline, online, test = split(recs, exclude_langs=("ta",))
    assert all(r.language != "ta" for r in offline)
    assert any(r.language == "ta" for r in online) and any(r.language == "ta" for r in test)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 120), st.integers(0, 5), st.sampled_from([(0.6, 0.2, 0.2), (0.5, 0.25, 0.25), (1.0, 0.0, 0.0)]),
       st.booleans())
def test_split_partitions_exactly(n, seed, fractions, stratify):
    recs = records(n)
    parts = split(recs, fractions, seed, stratify)
    ids = sorted(r.id for p in parts for r in p)
    assert ids == sorted(r.id for r in recs)
    for part, f in zip(parts, fractions):
        assert abs(len(part) - n * f) < 1 + 1e-9


def test_to_tasks_uses_same_language_exemplars(mini_squad):
    recs = load_dataset(mini_squad)
    tasks = to_tasks(recs, PivotResolver(toy_table()), max_exemplars=3)
    for t in tasks:
        assert all(ex.language == t.language.code and ex.id != t.id for ex in t.exemplars)
        assert len(t.exemplars) <= 3
    assert to_tasks(recs, gold_context=False)[0].context is None
    assert to_tasks(recs, seed=1) == to_tasks(recs, seed=1)
