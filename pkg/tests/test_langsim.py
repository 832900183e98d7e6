import pytest
from hypothesis import given, strategies as st

from conftest import HINDI, TAMIL, toy_table
from polyroute.config_space import LanguageTag
from polyroute.errors import IneligibleLanguage, UnknownLanguage
from polyroute.langsim import (
    DistanceTable,
    PivotResolver,
    SimilarityParams,
    pick_pivot,
    relevance_score,
    scored_candidates,
    similar_languages,
)


def test_relevance_score_examples():
    assert relevance_score(0.4, 4, True) == pytest.approx(0.09)
    assert relevance_score(0.4, 4, False) == pytest.approx(0.10)
    assert relevance_score(0.0, 5, True) == 0.0
    with pytest.raises(IneligibleLanguage):
        relevance_score(0.4, 0, True)


def test_similarity_params_defaults():
    p = SimilarityParams()
    assert (p.w_latin, p.cls_threshold, p.dist_threshold) == (0.9, 3, 0.5)


def test_hand_traced_sets(table):
    profiles = table.languages.values()
    # hi: bn (class 3, d=.2 -> .0667), fr (class 5 latin, d=.6 -> .108); sw class 2 excluded
    assert {t.code for t in similar_languages(HINDI, table, profiles)} == {"bn", "fr"}
    # bn: hi (class 4, .2 -> .05), fr (.5 -> .09)
    assert {t.code for t in similar_languages(LanguageTag("bn", "non_latin", 3), table, profiles)} == {"hi", "fr"}
    # ta has no distances at all -> nothing eligible
    assert similar_languages(TAMIL, table, profiles) == set()


def test_threshold_can_exclude():
    table = toy_table()
    strict = SimilarityParams(dist_threshold=0.08)
    codes = {t.code for t in similar_languages(HINDI, table, table.languages.values(), strict)}
    assert codes == {"bn"}


def test_pick_pivot_argmin_and_ties(table):
    profiles = table.languages.values()
    cands = similar_languages(HINDI, table, profiles)
    assert pick_pivot(HINDI, cands, table, profiles).code == "bn"
    assert pick_pivot(HINDI, set(), table, profiles) is None
    tie = DistanceTable.from_json({
        "features": ["syntactic", "genetic", "geographic"],
        "languages": [{"code": c, "class": 4, "script": "latin"} for c in ("aa", "zz", "mm")],
        "distances": {f: {"mm|aa": 0.3, "mm|zz": 0.3} for f in ("syntactic", "genetic", "geographic")},
    })
    src = tie.languages["mm"]
    cands = similar_languages(src, tie, tie.languages.values())
    assert pick_pivot(src, cands, tie, tie.languages.values()).code == "aa"


def test_unknown_source_and_missing_feature():
    table = toy_table()
    with pytest.raises(UnknownLanguage):
        similar_languages(LanguageTag("xx"), table, table.languages.values())
    partial = DistanceTable.from_json({
        "features": ["syntactic", "genetic", "geographic"],
        "languages": [{"code": "aa", "class": 4, "script": "latin"}, {"code": "bb", "class": 4, "script": "latin"}],
        "distances": {"syntactic": {"aa|bb": 0.1}, "genetic": {"aa|bb": 0.1}, "geographic": {}},
    })
    assert partial.mean_distance("aa", "bb") is None
    assert scored_candidates(partial.languages["aa"], partial, partial.languages.values()) == {}


def test_resolver_real_data_and_fixture_without_pivot():
    real = PivotResolver()
    assert real.pivot(real.profile("hi")) is not None
    assert real.pivot(LanguageTag("xx")) is None
    fixture = PivotResolver(toy_table())
    assert fixture.pivot(TAMIL) is None
    assert fixture.pivot(HINDI).code == "bn"


def test_packaged_table_is_symmetric_and_bounded():
    t = DistanceTable.packaged()
    assert tuple(t.features) == ("syntactic", "genetic", "geographic")
    codes = sorted(t.languages)
    for a in codes[:8]:
        for b in codes[:8]:
            for f in t.features:
                d = t.distance(a, b, f)
                if d is not None:
                    assert 0.0 <= d <= 1.0
                    assert d == t.distance(b, a, f)
        assert t.distance(a, a, "genetic") == 0.0


@given(st.floats(0.05, 1.6))
def test_uniform_scaling_keeps_pivot(factor):
    base = toy_table()
    scaled = DistanceTable(base.features, {k: v * factor for k, v in base._d.items()}, base.languages.values())
    loose = SimilarityParams(dist_threshold=1e9)
    p1 = pick_pivot(HINDI, similar_languages(HINDI, base, base.languages.values(), loose), base,
                    base.languages.values(), loose)
    p2 = pick_pivot(HINDI, similar_languages(HINDI, scaled, scaled.languages.values(), loose), scaled,
                    scaled.languages.values(), loose)
    assert p1 == p2
    s1 = scored_candidates(HINDI, base, base.languages.values())
    s2 = scored_candidates(HINDI, scaled, scaled.languages.values())
    for code in s1:
        assert s2[code] == pytest.approx(s1[code] * factor)


def test_no_returned_language_violates_rules():
    real = PivotResolver()
    p = SimilarityParams()
    for code, prof in real.profiles.items():
        for cand in similar_languages(prof, real.table, real.profiles.values()):
            assert cand.resource_class >= p.cls_threshold
            assert cand.code != code
