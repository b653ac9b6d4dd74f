import json

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from babelkit.corpus_filter import (
    REASON_BELOW_THRESHOLD,
    REASON_TOO_MANY_DIGITS,
    REASON_TOO_SHORT,
    REASON_UNSCORED,
    Document,
    FilterRules,
    load_score_sidecar,
    normalize_filter,
    score_gate,
)
from babelkit.errors import ValidationError


def doc(text, **kw):
    return Document(id=kw.pop("id", "x"), text=text, **kw)


def test_99_chars_rejected_100_kept():
    r99 = normalize_filter(doc("a" * 99))
    assert not r99.kept and r99.reason == REASON_TOO_SHORT
    assert normalize_filter(doc("a" * 100)).kept


def test_digit_ratio_boundary():
    base = "a" * 140  # 200 chars total in each case below
    exactly_30 = normalize_filter(doc(base + "1" * 60))
    assert exactly_30.kept  # 30.0% is not "more than 30%"
    over = normalize_filter(doc("a" * 139 + "1" * 61))
    assert not over.kept and over.reason == REASON_TOO_MANY_DIGITS


def test_characters_are_unicode_scalars_after_nfc():
    # decomposed e + combining acute collapses to one scalar under NFC
    decomposed = "é" + "x" * 98
    assert len(decomposed) == 100
    r = normalize_filter(doc(decomposed))
    assert not r.kept and r.reason == REASON_TOO_SHORT
    assert normalize_filter(doc(decomposed + "x")).kept


def test_surrounding_whitespace_is_trimmed():
    r = normalize_filter(doc("   " + "a" * 99 + "\n\t"))
    assert not r.kept and r.reason == REASON_TOO_SHORT


def test_non_ascii_decimal_digits_count():
    # Arabic-Indic digits are category Nd
    text = "١" * 61 + "ا" * 139
    r = normalize_filter(doc(text))
    assert not r.kept and r.reason == REASON_TOO_MANY_DIGITS


def test_empty_text_is_too_short_even_with_zero_min():
    r = normalize_filter(doc("   "), FilterRules(min_chars=0))
    assert not r.kept and r.reason == REASON_TOO_SHORT


def test_first_failed_rule_wins():
    r = normalize_filter(doc("123"))  # both too short and 100% digits
    assert r.reason == REASON_TOO_SHORT


def test_rules_validation():
    with pytest.raises(ValidationError):
        FilterRules(min_chars=-1).validate()
    with pytest.raises(ValidationError):
        FilterRules(max_digit_ratio=1.5).validate()


# ------------------------------------------------------------- score gate


def test_score_gate_basic():
    docs = [doc("t", id="a", score=0.9), doc("t", id="b", score=0.2)]
    kept, rejected, counts = score_gate(docs, 0.5)
    assert [d.id for d in kept] == ["a"]
    assert rejected[0]["id"] == "b" and rejected[0]["reason"] == REASON_BELOW_THRESHOLD
    assert counts == {REASON_BELOW_THRESHOLD: 1}


def test_score_gate_zero_threshold_keeps_all_scored():
    docs = [doc("t", id="a", score=0.0), doc("t", id="b", score=1.0)]
    kept, rejected, _ = score_gate(docs, 0.0)
    assert len(kept) == 2 and not rejected


def test_score_gate_unscored_rejected():
    kept, rejected, counts = score_gate([doc("t", id="a")], 0.5, sidecar={"other": 0.9})
    assert not kept
    assert rejected[0]["reason"] == REASON_UNSCORED
    assert counts == {REASON_UNSCORED: 1}


def test_score_gate_sidecar_lookup():
    kept, _, _ = score_gate([doc("t", id="a")], 0.5, sidecar={"a": 0.7})
    assert [d.id for d in kept] == ["a"]


def test_sidecar_duplicate_ids_rejected(tmp_path):
    path = tmp_path / "scores.jsonl"
    path.write_text('{"id": "a", "score": 0.5}\n{"id": "a", "score": 0.6}\n')
    with pytest.raises(ValidationError, match="duplicate id"):
        load_score_sidecar(path)


def test_sidecar_malformed_line_rejected(tmp_path):
    path = tmp_path / "scores.jsonl"
    path.write_text('{"id": "a"}\n')
    with pytest.raises(ValidationError, match="malformed sidecar"):
        load_score_sidecar(path)


def test_document_round_trip():
    d = Document(id="a", text="hello", lang="sw", source="textbook", score=0.5)
    assert Document.from_dict(json.loads(json.dumps(d.to_dict()))) == d
    with pytest.raises(ValueError):
        Document.from_dict({"text": "no id"})


def test_document_lang_must_be_registry_code_or_und():
    assert Document.from_dict({"id": "a", "text": "t"}).lang == "und"
    assert Document.from_dict({"id": "a", "text": "t", "lang": "fil"}).lang == "fil"
    with pytest.raises(ValueError, match="language registry"):
        Document.from_dict({"id": "a", "text": "t", "lang": "pt-BR"})


# ------------------------------------------------------------- properties

text_strategy = st.text(
    alphabet=st.characters(blacklist_categories=("Cs",)), max_size=300
)


@settings(max_examples=200, deadline=None)
@given(
    text=text_strategy,
    min_chars=st.integers(0, 200),
    tighter_min=st.integers(0, 100),
    ratio=st.floats(0.0, 1.0),
    ratio_cut=st.floats(0.0, 1.0),
)
def test_tightening_rules_never_unrejects(text, min_chars, tighter_min, ratio, ratio_cut):
    d = doc(text)
    loose = normalize_filter(d, FilterRules(min_chars, max(ratio, ratio_cut)))
    tight = normalize_filter(
        d, FilterRules(min_chars + tighter_min, min(ratio, ratio_cut))
    )
    if not loose.kept:
        assert not tight.kept


@settings(max_examples=100, deadline=None)
@given(texts=st.lists(text_strategy, max_size=20))
def test_keep_reject_partition(texts):
    docs = [doc(t, id=f"d{i}") for i, t in enumerate(texts)]
    decisions = [normalize_filter(d) for d in docs]
    kept = [d for d, dec in zip(docs, decisions) if dec.kept]
    rejected = [d for d, dec in zip(docs, decisions) if not dec.kept]
    assert len(kept) + len(rejected) == len(docs)
    assert {d.id for d in kept} | {d.id for d in rejected} == {d.id for d in docs}
    # per-document purity: same decision regardless of neighbours
    for d, dec in zip(docs, decisions):
        assert normalize_filter(d) == dec
