"""Acceptance gate: one PASS/FAIL line per criterion, at its stated tolerance.

Run with ``pytest tests/test_acceptance.py -v``; the lines are repeated in
the terminal summary under "acceptance criteria".
"""

import random
import time
from collections import Counter
from pathlib import Path

import numpy as np
import pytest

from slavner import crf
from slavner.cli import main
from slavner.corpus import CATEGORIES, EntitySpan, TaggedSentence, bio_to_spans, parse_annotation_file, spans_to_bio
from slavner.evaluation import Counts, lemma_exact_match, mention_set_f1, span_f1
from slavner.lemmatizer import (
    LemmaConfig,
    assemble_training_set,
    build_source,
    language_token_ablation,
    predict_lemmas,
    train_lemmatizer,
)
from slavner.submission import parse_prediction, validate_submission
from slavner.synthetic import lemma_pairs, ner_corpus, split_heldout
from slavner.tagger import TrainConfig, evaluate_model, train

import conlleval_ref
import lemma_fixtures
from acceptance_log import record
from test_crf import check_gradient, random_instance
from test_evaluation import load_adversarial

FIXTURES = Path(__file__).parent / "fixtures"
SHARED = FIXTURES / "shared_task"


@pytest.mark.parametrize("backend", crf.available_backends())
def test_crf_oracle_equivalence(backend):
    crf.set_backend(backend)
    try:
        rng = np.random.default_rng(20230)
        t0 = time.perf_counter()
        worst, score_mismatch, path_mismatch = 0.0, 0, 0
        for _ in range(200):
            T, L = int(rng.integers(1, 7)), int(rng.integers(1, 5))
            em, params = random_instance(rng, T, L)
            logz, best, best_score = crf.brute_force_oracle(em, params)
            worst = max(worst, abs(crf.log_partition(em, params) - logz))
            path, score = crf.viterbi(em, params)
            score_mismatch += score != best_score
            path_mismatch += path != best
        elapsed = time.perf_counter() - t0
    finally:
        crf.set_backend("auto")
    ok = worst <= 1e-9 and not score_mismatch and not path_mismatch and elapsed < 30
    record(
        f"CRF oracle equivalence [{backend}]",
        ok,
        f"max |dlogZ| {worst:.2e} (<= 1e-9), score mismatches {score_mismatch}, "
        f"path mismatches {path_mismatch}, {elapsed:.1f}s (< 30s)",
    )
    assert ok


@pytest.mark.parametrize("backend", crf.available_backends())
def test_gradient_check(backend):
    crf.set_backend(backend)
    try:
        rng = np.random.default_rng(4242)
        t0 = time.perf_counter()
        worst = 0.0
        for _ in range(50):
            worst = max(worst, *check_gradient(rng, int(rng.integers(1, 6)), int(rng.integers(1, 5))))
        elapsed = time.perf_counter() - t0
    finally:
        crf.set_backend("auto")
    ok = worst < 1e-4 and elapsed < 60
    record(f"Gradient check [{backend}]", ok, f"max relative error {worst:.2e} (< 1e-4), {elapsed:.1f}s (< 60s)")
    assert ok


def random_span_set(rng, n):
    spans, i = [], 0
    while i < n:
        if rng.random() < 0.35:
            length = rng.randint(1, min(5, n - i))
            spans.append(EntitySpan(i, i + length, rng.choice(CATEGORIES)))
            i += length
        else:
            i += rng.randint(1, 2)
    return spans


def test_bio_round_trip():
    rng = random.Random(91)
    failures = 0
    for _ in range(10_000):
        n = rng.randint(0, 30)
        spans = random_span_set(rng, n)
        failures += bio_to_spans(spans_to_bio(n, spans)) != spans
    gold, pred = load_adversarial()
    seg_mismatch = sum(
        [(s.start, s.end, s.category) for s in bio_to_spans(tags)] != conlleval_ref.chunks(tags)
        for tags in gold + pred
    )
    ok = failures == 0 and seg_mismatch == 0 and len(gold) == 200
    record(
        "BIO round-trip",
        ok,
        f"{failures}/10000 round-trip failures, {seg_mismatch} segmentation mismatches "
        f"on {len(gold)} adversarial sentences (gold and pred columns)",
    )
    assert ok


def tagged(tags):
    return TaggedSentence.from_lists([f"t{i}" for i in range(len(tags))], tags)


def from_spans(n, spans):
    return tagged(spans_to_bio(n, [EntitySpan(*s) for s in spans]))


def trivial_metric_cases():
    s = [from_spans(4, [(0, 2, "PER"), (3, 4, "LOC")])]
    span_ok = [
        span_f1(s, s).f1 == 1.0,
        span_f1([from_spans(3, [(0, 1, "ORG")])], [from_spans(3, [])]).recall == 0.0,
        (lambda r: (r.precision, r.recall, r.f1) == (0.5, 0.5, 0.5))(
            span_f1(
                [from_spans(7, [(0, 2, "PER"), (3, 4, "LOC")])],
                [from_spans(7, [(0, 2, "PER"), (5, 6, "ORG")])],
            )
        ),
    ]
    gold, pred = {"d": [("brexit", "EVT")]}, {"d": [("Brexit", "EVT")]}
    mention_ok = [
        mention_set_f1(gold, pred).micro.tp == 1 and mention_set_f1(gold, pred).f1 == 1.0,
        mention_set_f1(gold, pred, case_sensitive=True).f1 == 0.0,
        mention_set_f1({"d": [("Brexit", "EVT")]}, {"d": [("Brexit", "EVT")] * 2}).micro == Counts(1, 0, 0),
    ]
    lemma_ok = [
        lemma_exact_match([("Unia Europejska", "unia europejska")]) == 1.0,
        lemma_exact_match([("Unia Europejska", "Unia  Europejska")]) == 1.0,
        lemma_exact_match([("a", "a"), ("a", "b"), ("c", "d"), ("e", "f")]) == 0.25,
    ]
    return span_ok + mention_ok + lemma_ok


def test_metric_fidelity():
    gold, pred = load_adversarial()
    ours = span_f1([tagged(g) for g in gold], [tagged(p) for p in pred]).f1
    ref = conlleval_ref.micro_f1(gold, pred)
    cases = trivial_metric_cases()
    ok = round(ours, 4) == round(ref, 4) and all(cases)
    record(
        "Metric fidelity",
        ok,
        f"span micro-F1 {ours:.4f} vs reference {ref:.4f}; trivial cases {sum(cases)}/{len(cases)} hold",
    )
    assert ok


def test_ner_overfit():
    corpus = ner_corpus(50, seed=0)
    cats = {s.category for ts in corpus for s in bio_to_spans(ts.tags)}
    t0 = time.perf_counter()
    model = train(corpus, TrainConfig(epochs=200), validation=corpus)
    elapsed = time.perf_counter() - t0
    f1 = evaluate_model(model, corpus)
    hit = next((i + 1 for i, v in enumerate(model.report.val_f1) if v == 1.0), None)
    t1 = time.perf_counter()
    no_crf = train(corpus, TrainConfig(epochs=200, crf_enabled=False))
    no_crf_f1 = evaluate_model(no_crf, corpus)
    no_crf_time = time.perf_counter() - t1
    ok = f1 == 1.0 and cats == set(CATEGORIES) and elapsed < 300
    record(
        "NER overfit",
        ok,
        f"train span-F1 {f1:.4f} (= 1.00) first reached at epoch {hit} of 200, {elapsed:.1f}s (< 300s); "
        f"no-CRF run completed: span-F1 {no_crf_f1:.4f} in {no_crf_time:.1f}s (reported only)",
    )
    assert ok


def test_lemmatizer_overfit():
    examples = lemma_pairs(100, seed=0)
    pairs = [(build_source(e.language, e.surface), e.lemma) for e in examples]
    identity = lemma_pairs(100, seed=1, identity=True)
    id_pairs = [(build_source(e.language, e.surface), e.lemma) for e in identity]
    t0 = time.perf_counter()
    model = train_lemmatizer(pairs, LemmaConfig(), validation=pairs)
    em = lemma_exact_match(
        zip((t for _, t in pairs), predict_lemmas(model, [(e.language, e.surface) for e in examples]))
    )
    elapsed = time.perf_counter() - t0
    t1 = time.perf_counter()
    id_model = train_lemmatizer(id_pairs, LemmaConfig(), validation=id_pairs)
    id_em = lemma_exact_match(
        zip((t for _, t in id_pairs), predict_lemmas(id_model, [(e.language, e.surface) for e in identity]))
    )
    id_elapsed = time.perf_counter() - t1
    ok = em >= 0.95 and id_em == 1.0 and elapsed < 300 and id_elapsed < 300
    record(
        "Lemmatizer overfit",
        ok,
        f"100-pair exact match {em:.4f} (>= 0.95) in {elapsed:.1f}s; identity task {id_em:.4f} (= 1.00) "
        f"in {id_elapsed:.1f}s (each < 300s)",
    )
    assert ok


def test_language_token_ablation():
    # large enough that held-out exact match is off the floor for both arms
    examples = lemma_pairs(600, seed=5)
    train_set, heldout = split_heldout(examples, fraction=0.2, seed=5)
    report = language_token_ablation(train_set, heldout, LemmaConfig(epochs=25, batch_size=32))
    data = report.to_dict()
    keys_ok = all(set(row) == {"with_token", "without_token", "delta", "n_heldout"} for row in data.values())
    counts_ok = sum(row["n_heldout"] for row in data.values()) == len(heldout)
    ok = sorted(data) == ["cs", "pl", "ru"] and keys_ok and counts_ok
    deltas = ", ".join(
        f"{lang} {row['with_token']:.3f}/{row['without_token']:.3f} ({row['delta']:+.3f})" for lang, row in data.items()
    )
    record(
        "Language-token ablation harness",
        ok,
        f"report schema valid; held-out EM with/without token (delta, not asserted): {deltas}",
    )
    assert ok


def run(*argv):
    return main([str(a) for a in argv])


def test_end_to_end(tmp_path):
    steps = [
        ("convert", SHARED, tmp_path / "train.conll", "--lemma-examples", tmp_path / "lemmas.tsv"),
        ("train-ner", "--train", tmp_path / "train.conll", "--out", tmp_path / "ner", "--epochs", 100),
        ("train-lemma", "--examples", tmp_path / "lemmas.tsv", "--out", tmp_path / "lem", "--tier", "original",
         "--validate-on-train"),
        ("predict", SHARED / "raw", "--out", tmp_path / "pred", "--preset", "system2",
         "--ner-model", tmp_path / "ner", "--lemma-model", tmp_path / "lem"),
        ("evaluate", SHARED / "annotated", tmp_path / "pred", "--mention-f1", "--case-sensitive",
         "--out", tmp_path / "reports"),
        ("evaluate", SHARED / "annotated", tmp_path / "pred", "--lemma-em", "--out", tmp_path / "reports"),
        ("package-submission", tmp_path / "pred", "--preset", "system2", "--out", tmp_path / "submission.zip",
         "--raw-dir", SHARED / "raw"),
    ]
    codes = [run(*s) for s in steps]
    valid = codes[-1] == 0 and validate_submission((tmp_path / "submission.zip").read_bytes()) == []
    mismatched = []
    for gold_path in sorted((SHARED / "annotated").rglob("*.out")):
        doc_id, gold = parse_annotation_file(gold_path.read_bytes())
        pred_path = tmp_path / "pred" / gold_path.relative_to(SHARED / "annotated")
        if not pred_path.exists():
            mismatched.append(doc_id)
            continue
        _, pred = parse_prediction(pred_path.read_bytes())
        if Counter((m.form, m.lemma, m.category) for m in gold) != Counter((r.form, r.lemma, r.category) for r in pred):
            mismatched.append(doc_id)
    ok = all(c == 0 for c in codes) and valid and not mismatched
    record(
        "End-to-end",
        ok,
        f"exit codes {codes}; archive valid: {valid}; documents differing from gold: {mismatched or 'none'}",
    )
    assert ok


def test_tier_chain():
    shared = lemma_fixtures.shared_task_examples()
    external = lemma_fixtures.external_examples()
    sets = {t: Counter(assemble_training_set(shared, external, tier=t)) for t in ("original", "poleval", "lexicon")}
    sizes = {t: sum(c.values()) for t, c in sets.items()}
    chain = sets["original"] <= sets["poleval"] <= sets["lexicon"]
    ok = chain and sizes == lemma_fixtures.TIER_SIZES
    record(
        "Tier chain",
        ok,
        f"sizes {sizes} vs fixture counts {lemma_fixtures.TIER_SIZES}; original <= poleval <= lexicon: {chain}",
    )
    assert ok
