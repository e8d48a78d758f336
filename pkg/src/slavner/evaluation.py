"""Span-level and mention-level F1, lemma exact match, and report rendering."""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

from .corpus import CATEGORIES, TaggedSentence, bio_to_spans

PLAIN = "plain"
JSON = "json"
REPORT_VERSION = 1


class EvaluationError(ValueError):
    pass


@dataclass
class Counts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    @property
    def support(self) -> int:
        return self.tp + self.fn

    @property
    def predicted(self) -> int:
        return self.tp + self.fp

    @property
    def precision(self) -> float:
        return self.tp / self.predicted if self.predicted else 0.0

    @property
    def recall(self) -> float:
        return self.tp / self.support if self.support else 0.0

    @property
    def f1(self) -> float:
        # from counts: one rounding step, so f1 never exceeds max(p, r)
        return 2 * self.tp / (2 * self.tp + self.fp + self.fn) if self.tp else 0.0

    def __iadd__(self, other: "Counts") -> "Counts":
        self.tp += other.tp
        self.fp += other.fp
        self.fn += other.fn
        return self


@dataclass
class EvalReport:
    metric: str
    language: str = "all"
    case_sensitive: bool = True
    per_category: dict[str, Counts] = field(default_factory=dict)
    # lemma exact match only
    accuracy: Optional[float] = None
    n_pairs: int = 0

    @property
    def micro(self) -> Counts:
        total = Counts()
        for c in self.per_category.values():
            total += c
        return total

    @property
    def precision(self) -> float:
        return self.micro.precision

    @property
    def recall(self) -> float:
        return self.micro.recall

    @property
    def f1(self) -> float:
        return self.micro.f1

    def to_dict(self) -> dict:
        out = {
            "version": REPORT_VERSION,
            "metric": self.metric,
            "language": self.language,
            "case_sensitive": self.case_sensitive,
            "categories": {
                cat: {
                    "tp": c.tp,
                    "fp": c.fp,
                    "fn": c.fn,
                    "precision": _pct(c.precision),
                    "recall": _pct(c.recall),
                    "f1": _pct(c.f1),
                }
                for cat, c in self.per_category.items()
            },
        }
        m = self.micro
        out["micro"] = {
            "tp": m.tp,
            "fp": m.fp,
            "fn": m.fn,
            "precision": _pct(m.precision),
            "recall": _pct(m.recall),
            "f1": _pct(m.f1),
        }
        if self.accuracy is not None:
            out["accuracy"] = self.accuracy
            out["n_pairs"] = self.n_pairs
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> "EvalReport":
        if data.get("version") != REPORT_VERSION:
            raise EvaluationError(f"unsupported report version {data.get('version')!r}")
        return cls(
            metric=data["metric"],
            language=data["language"],
            case_sensitive=data["case_sensitive"],
            per_category={
                cat: Counts(v["tp"], v["fp"], v["fn"]) for cat, v in data["categories"].items()
            },
            accuracy=data.get("accuracy"),
            n_pairs=data.get("n_pairs", 0),
        )


def _pct(x: float) -> float:
    return round(100.0 * x, 2)


def _empty_categories() -> dict[str, Counts]:
    return {c: Counts() for c in CATEGORIES}


def span_f1(
    gold: Sequence[TaggedSentence], pred: Sequence[TaggedSentence], language: str = "all"
) -> EvalReport:
    if len(gold) != len(pred):
        raise EvaluationError(f"{len(gold)} gold sentences vs {len(pred)} predicted")
    per_cat = _empty_categories()
    for idx, (g, p) in enumerate(zip(gold, pred)):
        if len(g.tags) != len(p.tags):
            raise EvaluationError(
                f"sentence {idx}: {len(g.tags)} gold tokens vs {len(p.tags)} predicted"
            )
        # spans from bio_to_spans never repeat, so one-to-one matching is set logic
        g_spans = {(s.start, s.end, s.category) for s in bio_to_spans(g.tags)}
        p_spans = {(s.start, s.end, s.category) for s in bio_to_spans(p.tags)}
        for *_, cat in g_spans & p_spans:
            per_cat.setdefault(cat, Counts()).tp += 1
        for *_, cat in p_spans - g_spans:
            per_cat.setdefault(cat, Counts()).fp += 1
        for *_, cat in g_spans - p_spans:
            per_cat.setdefault(cat, Counts()).fn += 1
    return EvalReport("span_f1", language, True, per_cat)


def _fold(text: str, case_sensitive: bool) -> str:
    text = " ".join(text.split())
    return text if case_sensitive else text.casefold()


def mention_set_f1(
    gold: Mapping[str, Iterable[tuple[str, str]]],
    pred: Mapping[str, Iterable[tuple[str, str]]],
    case_sensitive: bool = False,
    language: str = "all",
) -> EvalReport:
    """Strict matching of per-document (surface, category) sets."""
    per_cat = _empty_categories()
    for doc_id in sorted(set(gold) | set(pred)):
        g = {(_fold(s, case_sensitive), c) for s, c in gold.get(doc_id, ())}
        p = {(_fold(s, case_sensitive), c) for s, c in pred.get(doc_id, ())}
        for _, cat in g & p:
            per_cat.setdefault(cat, Counts()).tp += 1
        for _, cat in p - g:
            per_cat.setdefault(cat, Counts()).fp += 1
        for _, cat in g - p:
            per_cat.setdefault(cat, Counts()).fn += 1
    metric = "mention_f1_cs" if case_sensitive else "mention_f1_ci"
    return EvalReport(metric, language, case_sensitive, per_cat)


def normalize_lemma(text: str) -> str:
    return " ".join(text.split()).casefold()


def lemma_exact_match(pairs: Iterable[tuple[str, str]]) -> float:
    pairs = list(pairs)
    if not pairs:
        raise EvaluationError("no lemma pairs to score")
    hits = sum(normalize_lemma(g) == normalize_lemma(p) for g, p in pairs)
    return hits / len(pairs)


def lemma_report(pairs: Iterable[tuple[str, str]], language: str = "all") -> EvalReport:
    pairs = list(pairs)
    return EvalReport(
        "lemma_em", language, False, {}, accuracy=lemma_exact_match(pairs), n_pairs=len(pairs)
    )


def _fmt(value: float, support: int, predicted: int) -> str:
    return "-" if support == 0 and predicted == 0 else f"{100.0 * value:.2f}"


def render_report(report: EvalReport, fmt: str = PLAIN) -> bytes:
    if fmt == JSON:
        return (json.dumps(report.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n").encode()
    if fmt != PLAIN:
        raise EvaluationError(f"unknown report format {fmt!r}; use {PLAIN!r} or {JSON!r}")
    lines = [
        f"metric: {report.metric}  language: {report.language}  "
        f"case_sensitive: {str(report.case_sensitive).lower()}"
    ]
    if report.accuracy is not None:
        lines.append(f"exact match: {100.0 * report.accuracy:.2f}  pairs: {report.n_pairs}")
    else:
        lines.append(f"{'category':<10}{'P':>8}{'R':>8}{'F1':>8}{'support':>9}")
        rows = list(report.per_category.items()) + [("micro", report.micro)]
        for name, c in rows:
            lines.append(
                f"{name:<10}"
                f"{_fmt(c.precision, c.support, c.predicted):>8}"
                f"{_fmt(c.recall, c.support, c.predicted):>8}"
                f"{_fmt(c.f1, c.support, c.predicted):>8}"
                f"{c.support:>9}"
            )
    return ("\n".join(lines) + "\n").encode()


def parse_report(data: bytes) -> EvalReport:
    return EvalReport.from_dict(json.loads(data.decode("utf-8")))


def merge_reports(reports: Iterable[EvalReport], language: str = "all") -> EvalReport:
    """Sum counts across reports of the same metric (e.g. per-language)."""
    reports = list(reports)
    if not reports:
        raise EvaluationError("nothing to merge")
    per_cat: dict[str, Counts] = defaultdict(Counts)
    for r in reports:
        for cat, c in r.per_category.items():
            per_cat[cat] += c
    return EvalReport(reports[0].metric, language, reports[0].case_sensitive, dict(per_cat))
