import json
from importlib import resources
from pathlib import Path

import jsonschema
import pytest
from hypothesis import given
from hypothesis import strategies as st

from slavner.corpus import CATEGORIES, EntitySpan, TaggedSentence, spans_to_bio
from slavner.evaluation import (
    Counts,
    EvalReport,
    EvaluationError,
    lemma_exact_match,
    lemma_report,
    mention_set_f1,
    merge_reports,
    parse_report,
    render_report,
    span_f1,
)

import conlleval_ref

ADVERSARIAL = Path(__file__).parent / "fixtures" / "adversarial.conll"
SCHEMA = json.loads(resources.files("slavner").joinpath("schemas/report.schema.json").read_text())


def load_adversarial():
    gold, pred, g, p = [], [], [], []
    for line in ADVERSARIAL.read_text().splitlines() + [""]:
        if not line.strip():
            if g:
                gold.append(g)
                pred.append(p)
                g, p = [], []
            continue
        _, gt, pt = line.split()
        g.append(gt)
        p.append(pt)
    return gold, pred


def tagged(tags):
    return TaggedSentence.from_lists([f"t{i}" for i in range(len(tags))], tags)


def from_spans(n, spans):
    return tagged(spans_to_bio(n, [EntitySpan(*s) for s in spans]))


class TestSpanF1:
    def test_identity(self):
        s = [from_spans(4, [(0, 2, "PER"), (3, 4, "LOC")])]
        r = span_f1(s, s)
        assert (r.precision, r.recall, r.f1) == (1.0, 1.0, 1.0)

    def test_empty_prediction(self):
        r = span_f1([from_spans(3, [(0, 1, "ORG")])], [from_spans(3, [])])
        assert r.recall == 0.0 and r.f1 == 0.0

    def test_forced_arithmetic(self):
        gold = [from_spans(7, [(0, 2, "PER"), (3, 4, "LOC")])]
        pred = [from_spans(7, [(0, 2, "PER"), (5, 6, "ORG")])]
        r = span_f1(gold, pred)
        assert (r.precision, r.recall, r.f1) == (0.5, 0.5, 0.5)
        assert r.per_category["ORG"] == Counts(0, 1, 0)
        assert r.per_category["LOC"] == Counts(0, 0, 1)

    def test_alignment_error_names_sentence(self):
        with pytest.raises(EvaluationError, match="sentence 1"):
            span_f1([tagged(["O"]), tagged(["O", "O"])], [tagged(["O"]), tagged(["O"])])
        with pytest.raises(EvaluationError):
            span_f1([tagged(["O"])], [])

    def test_adversarial_matches_reference(self):
        gold, pred = load_adversarial()
        assert len(gold) == 200
        ours = span_f1([tagged(g) for g in gold], [tagged(p) for p in pred]).f1
        ref = conlleval_ref.micro_f1(gold, pred)
        assert round(ours, 4) == round(ref, 4)

    def test_adversarial_counts_match_reference(self):
        gold, pred = load_adversarial()
        correct, found_correct, found_guessed = conlleval_ref.evaluate(gold, pred)
        micro = span_f1([tagged(g) for g in gold], [tagged(p) for p in pred]).micro
        assert (micro.tp, micro.support, micro.predicted) == (correct, found_correct, found_guessed)


class TestMentionF1:
    def test_case_fold(self):
        r = mention_set_f1({"d": [("brexit", "EVT")]}, {"d": [("Brexit", "EVT")]})
        assert r.micro.tp == 1 and r.f1 == 1.0 and r.metric == "mention_f1_ci"

    def test_case_sensitive(self):
        r = mention_set_f1({"d": [("brexit", "EVT")]}, {"d": [("Brexit", "EVT")]}, case_sensitive=True)
        assert r.micro.tp == 0 and r.f1 == 0.0 and r.metric == "mention_f1_cs"

    def test_duplicates_once(self):
        r = mention_set_f1({"d": [("Brexit", "EVT")]}, {"d": [("Brexit", "EVT"), ("Brexit", "EVT")]})
        assert r.micro == Counts(1, 0, 0)

    def test_category_must_match(self):
        r = mention_set_f1({"d": [("Brexit", "EVT")]}, {"d": [("Brexit", "PRO")]})
        assert r.micro == Counts(0, 1, 1)

    def test_documents_separate(self):
        r = mention_set_f1({"a": [("NATO", "ORG")], "b": []}, {"a": [], "b": [("NATO", "ORG")]})
        assert r.micro == Counts(0, 1, 1)

    def test_cyrillic_and_diacritics_fold(self):
        r = mention_set_f1({"d": [("ŁÓDŹ", "LOC"), ("НАТО", "ORG")]}, {"d": [("łódź", "LOC"), ("нато", "ORG")]})
        assert r.f1 == 1.0


class TestLemmaMatch:
    def test_case(self):
        assert lemma_exact_match([("Unia Europejska", "unia europejska")]) == 1.0

    def test_whitespace(self):
        assert lemma_exact_match([("Unia Europejska", "Unia  Europejska")]) == 1.0

    def test_quarter(self):
        assert lemma_exact_match([("a", "a"), ("a", "b"), ("c", "d"), ("e", "f")]) == 0.25

    def test_empty(self):
        with pytest.raises(EvaluationError):
            lemma_exact_match([])


class TestRender:
    def test_two_decimals(self):
        r = EvalReport("span_f1", per_category={"PER": Counts(8233, 1767, 1767)})
        assert r.f1 == pytest.approx(0.8233)
        assert "82.33" in render_report(r).decode()

    def test_dashes_for_empty_category(self):
        r = EvalReport("span_f1", per_category={"PER": Counts(1, 0, 0), "EVT": Counts()})
        lines = render_report(r).decode().splitlines()
        (evt,) = [line for line in lines if line.startswith("EVT")]
        assert evt.split() == ["EVT", "-", "-", "-", "0"]

    def test_zero_scores_not_dashed(self):
        r = EvalReport("span_f1", per_category={"PER": Counts(0, 2, 0)})
        (per,) = [line for line in render_report(r).decode().splitlines() if line.startswith("PER")]
        assert per.split() == ["PER", "0.00", "0.00", "0.00", "0"]

    def test_json_round_trip(self):
        r = mention_set_f1({"d": [("A", "PER"), ("B", "LOC")]}, {"d": [("A", "PER"), ("C", "ORG")]}, language="pl")
        data = render_report(r, "json")
        jsonschema.validate(json.loads(data), SCHEMA)
        assert parse_report(data) == r

    def test_lemma_json_round_trip(self):
        r = lemma_report([("a", "a"), ("b", "c")], language="cs")
        data = render_report(r, "json")
        jsonschema.validate(json.loads(data), SCHEMA)
        assert parse_report(data) == r
        assert "exact match: 50.00" in render_report(r).decode()

    def test_deterministic(self):
        r = span_f1([from_spans(3, [(0, 1, "PER")])], [from_spans(3, [(0, 1, "PER")])])
        assert render_report(r) == render_report(r) and render_report(r, "json") == render_report(r, "json")

    def test_unknown_format(self):
        with pytest.raises(EvaluationError):
            render_report(EvalReport("span_f1"), "xml")

    def test_bad_version(self):
        with pytest.raises(EvaluationError):
            parse_report(b'{"version": 9}')

    def test_merge_sums_counts(self):
        a = EvalReport("span_f1", "pl", per_category={"PER": Counts(1, 2, 3)})
        b = EvalReport("span_f1", "cs", per_category={"PER": Counts(4, 5, 6), "LOC": Counts(1, 0, 0)})
        m = merge_reports([a, b])
        assert m.per_category == {"PER": Counts(5, 7, 9), "LOC": Counts(1, 0, 0)}
        assert m.micro == Counts(6, 7, 9)


tag = st.sampled_from(["O"] + [f"{p}-{c}" for p in "BI" for c in CATEGORIES])
tag_pairs = st.integers(1, 12).flatmap(
    lambda n: st.tuples(st.lists(tag, min_size=n, max_size=n), st.lists(tag, min_size=n, max_size=n))
)


@given(st.lists(tag_pairs, min_size=1, max_size=6))
def test_span_f1_properties(pairs):
    gold = [tagged(g) for g, _ in pairs]
    pred = [tagged(p) for _, p in pairs]
    r = span_f1(gold, pred)
    assert 0 <= r.f1 <= max(r.precision, r.recall) <= 1
    if r.precision + r.recall:
        assert r.f1 == pytest.approx(2 * r.precision * r.recall / (r.precision + r.recall))
    ref = conlleval_ref.micro_f1([g for g, _ in pairs], [p for _, p in pairs])
    assert r.f1 == pytest.approx(ref, abs=1e-12)
    if r.micro.support:
        assert span_f1(gold, gold).f1 == 1.0


mention = st.tuples(st.sampled_from(["nato", "Nato", "NATO", "Brexit", "łódź", "Łódź"]), st.sampled_from(CATEGORIES))


@given(st.lists(mention, max_size=6), st.lists(mention, max_size=6), st.booleans())
def test_mention_f1_swap_and_casing(gold, pred, cs):
    r = mention_set_f1({"d": gold}, {"d": pred}, case_sensitive=cs)
    s = mention_set_f1({"d": pred}, {"d": gold}, case_sensitive=cs)
    assert r.micro.tp == s.micro.tp
    assert (r.precision, r.recall) == (s.recall, s.precision)
    upper = mention_set_f1({"d": [(m.upper(), c) for m, c in gold]}, {"d": pred}, case_sensitive=False)
    assert upper.micro == mention_set_f1({"d": gold}, {"d": pred}).micro
