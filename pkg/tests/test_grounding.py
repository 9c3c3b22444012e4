import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from groundpilot.grounding import REF_TOKEN, ref_token, split_sentences, strip_tokens, validate

TEN_SEVEN = (
    "The KOSPI rose 1.9% [ref:d1]. Chip makers led [ref:d2].\n"
    "Battery makers fell [ref:d3]. Foreign buying continued.\n"
    "The won strengthened [ref:d4]! Oil was flat.\n"
    "Did rates move? Not today [ref:d5].\n"
    "Shipbuilders extended gains [ref:d6] [ref:d7]. Volumes were light [ref:d1]."
)


def test_ten_sentences_seven_cited():
    report = validate(TEN_SEVEN, {f"d{i}" for i in range(1, 8)})
    assert report.total_sentences == 10
    assert report.grounded_sentences == 7
    assert report.groundedness == 0.7
    assert report.ungrounded_sentence_indices == (3, 5, 6)
    assert not report.passed


def test_unresolved_tokens_reported_once_in_order():
    text = "A [ref:x]. B [ref:y] [ref:a]. C [ref:x]."
    report = validate(text, {"a"})
    assert report.unresolved_tokens == ("x", "y")
    assert report.grounded_sentences == 1
    assert report.ungrounded_sentence_indices == (0, 2)


def test_empty_text_is_vacuously_grounded():
    report = validate("", {"a"})
    assert report.total_sentences == 0 and report.groundedness == 1.0 and report.passed


@pytest.mark.parametrize(
    "text, expected",
    [
        ("Up. [ref:a] Down.", ["Up. [ref:a]", "Down."]),
        ("One.\nTwo!  Three?", ["One.", "Two!", "Three?"]),
        ("Price 1.5 rose. Next", ["Price 1.5 rose.", "Next"]),
        ("Done. [ref:a][ref:b]", ["Done. [ref:a][ref:b]"]),
        ("Alpha. ... Beta.", ["Alpha. ...", "Beta."]),
        ("상승했다。 하락했다.", ["상승했다。", "하락했다."]),
        ("", []),
        ("\n\n", []),
    ],
)
def test_segmentation(text, expected):
    assert split_sentences(text) == expected


def test_trailing_token_after_period_attaches_to_previous_sentence():
    report = validate("Index rose. [ref:a]\nOil fell. [ref:b]", {"a", "b"})
    assert report.total_sentences == 2 and report.passed


def test_ref_token_grammar():
    assert ref_token("doc.1_a-b") == "[ref:doc.1_a-b]"
    for bad in ("", "a b", "a]b", "a:b"):
        with pytest.raises(ValueError):
            ref_token(bad)
    assert REF_TOKEN.findall("[ref:a] [ref: b] [REF:c] [ref:d]") == ["a", "d"]


def test_strip_tokens():
    assert strip_tokens("Rose 2% [ref:a].") == "Rose 2%."
    assert strip_tokens("[ref:a] Rose.\nFell [ref:b] [ref:c].") == "Rose.\nFell."
    assert strip_tokens("no tokens  here ") == "no tokens  here "
    assert strip_tokens("[ref:[ref:a]b]") == ""


ids = st.from_regex(r"[A-Za-z0-9._-]{1,8}", fullmatch=True)
words = st.text(alphabet=st.characters(whitelist_categories=("Ll", "Lu", "Nd")), min_size=1, max_size=8)


@settings(max_examples=300, deadline=None)
@given(st.lists(st.one_of(words, ids.map(ref_token), st.sampled_from([" ", ". ", "\n", "! "])), max_size=30))
def test_strip_is_idempotent_and_removes_every_token(parts):
    text = "".join(parts)
    once = strip_tokens(text)
    assert REF_TOKEN.search(once) is None
    assert strip_tokens(once) == once


@settings(max_examples=300, deadline=None)
@given(st.lists(st.tuples(words, st.lists(ids, max_size=2)), min_size=1, max_size=12), st.sets(ids, max_size=6))
def test_groundedness_bounds_and_count(sentences, evidence):
    text = "\n".join(f"{w} " + " ".join(ref_token(i) for i in refs) + "." for w, refs in sentences)
    report = validate(text, evidence)
    assert report.total_sentences == len(sentences)
    assert 0.0 <= report.groundedness <= 1.0
    expected = sum(1 for _, refs in sentences if any(r in evidence for r in refs))
    assert report.grounded_sentences == expected
