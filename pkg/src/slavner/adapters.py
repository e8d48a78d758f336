"""Readers for external NER corpora and lemma resources, with label harmonization.

Column layouts (one token per line, blank line between sentences):

``collection3``
    ``token label`` separated by whitespace; BIO labels over
    PER/LOC/ORG or PERSON/LOCATION/ORGANIZATION.
``multinerd``
    ``index<TAB>token<TAB>label``, BIO over the MultiNERD label set
    (PER, LOC, ORG, ANIM, BIO, CEL, DIS, EVE, FOOD, INST, MEDIA, MYTH,
    PLANT, TIME, VEHI).
``polyglot``
    ``token<TAB>label``; labels are ``O`` or ``I-``/``B-`` over PER, LOC, ORG
    (the distribution uses IO tags).
``wikineural``
    ``index<TAB>token<TAB>label``, BIO over PER, LOC, ORG, MISC.

Lemma resources:

``sejf`` / ``sejfek``
    DELAF-style lexicon rows ``inflected,lemma.TAGS`` where ``\\,`` and
    ``\\.`` escape literal commas and dots.
``poleval2019`` / ``translated`` / ``shared_task``
    ``surface<TAB>lemma`` or ``id<TAB>surface<TAB>lemma``.
"""

from __future__ import annotations

import math
import random
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Optional, Sequence

from .corpus import (
    CATEGORIES,
    LANGUAGES,
    EntitySpan,
    MentionAnnotation,
    TaggedSentence,
    spans_to_bio,
)

DROP = "DROP"
NER_FORMATS = ("collection3", "multinerd", "polyglot", "wikineural")
LEMMA_ORIGINS = ("shared_task", "sejf", "sejfek", "poleval2019", "translated")

DEFAULT_MAPPINGS: dict[str, dict[str, str]] = {
    "collection3": {
        "PER": "PER", "LOC": "LOC", "ORG": "ORG",
        "PERSON": "PER", "LOCATION": "LOC", "ORGANIZATION": "ORG",
    },
    "multinerd": {
        "PER": "PER", "LOC": "LOC", "ORG": "ORG", "EVE": "EVT",
        "MEDIA": "PRO", "VEHI": "PRO", "INST": "PRO",
        "ANIM": DROP, "BIO": DROP, "CEL": DROP, "DIS": DROP, "FOOD": DROP,
        "MYTH": DROP, "PLANT": DROP, "TIME": DROP,
    },
    "polyglot": {"PER": "PER", "LOC": "LOC", "ORG": "ORG"},
    "wikineural": {"PER": "PER", "LOC": "LOC", "ORG": "ORG", "MISC": DROP},
}

# Collection3 totals as published for the corpus
COLLECTION3_TOTALS = {"PER": 11_000, "LOC": 7_000, "ORG": 8_000}


class AdapterError(ValueError):
    pass


@dataclass(frozen=True)
class LemmaExample:
    language: str
    surface: str
    lemma: str
    origin: str = "shared_task"

    def __post_init__(self):
        if self.language not in LANGUAGES:
            raise AdapterError(f"unsupported language {self.language!r}")
        if not self.surface or not self.lemma:
            raise AdapterError("surface and lemma must be nonempty")
        if self.origin not in LEMMA_ORIGINS:
            raise AdapterError(f"unknown origin {self.origin!r}")


@dataclass
class SourceSentence:
    """Tokens with raw source labels split into (prefix, category)."""

    tokens: list[str]
    labels: list[tuple[str, Optional[str]]]


@dataclass
class Collection3Report:
    entities: Counter = field(default_factory=Counter)

    def within_tolerance(self, expected=COLLECTION3_TOTALS, rel: float = 0.05) -> bool:
        return all(
            abs(self.entities.get(cat, 0) - n) <= rel * n for cat, n in expected.items()
        )


def _split_label(label: str, where: str) -> tuple[str, Optional[str]]:
    if label == "O":
        return "O", None
    prefix, sep, cat = label.partition("-")
    if not sep or prefix not in ("B", "I") or not cat:
        raise AdapterError(f"{where}: malformed label {label!r}")
    return prefix, cat


def _read_columns(data: bytes, token_col: int, label_col: int, n_cols: Optional[int], where: str):
    sentences = []
    tokens: list[str] = []
    labels: list[tuple[str, Optional[str]]] = []
    text = data.decode("utf-8").replace("\r\n", "\n")
    for lineno, line in enumerate(text.split("\n"), start=1):
        if not line.strip():
            if tokens:
                sentences.append(SourceSentence(tokens, labels))
                tokens, labels = [], []
            continue
        cols = line.split("\t") if n_cols else line.split()
        if cols[0] == "-DOCSTART-":
            continue
        if (n_cols and len(cols) != n_cols) or len(cols) <= max(token_col, label_col):
            raise AdapterError(f"{where}: line {lineno}: unexpected column count {len(cols)}")
        tokens.append(cols[token_col])
        labels.append(_split_label(cols[label_col].strip(), f"{where}: line {lineno}"))
    if tokens:
        sentences.append(SourceSentence(tokens, labels))
    return sentences


_LAYOUTS = {
    # format: (token column, label column, exact tab-separated column count or None)
    "collection3": (0, -1, None),
    "multinerd": (1, 2, 3),
    "polyglot": (0, 1, 2),
    "wikineural": (1, 2, 3),
}


def read_ner_source(files: Sequence[tuple[str, bytes]], source_format: str) -> list[SourceSentence]:
    """Read ``(name, content)`` pairs in one of the supported layouts."""
    if source_format not in _LAYOUTS:
        raise AdapterError(f"unknown format {source_format!r}; valid: {', '.join(NER_FORMATS)}")
    tok, lab, n = _LAYOUTS[source_format]
    out = []
    for name, data in files:
        out.extend(_read_columns(data, tok, lab, n, name))
    return out


def load_collection3(files: Sequence[tuple[str, bytes]]) -> tuple[list[SourceSentence], Collection3Report]:
    records = read_ner_source(files, "collection3")
    if not records:
        raise AdapterError("Collection3 input contains no sentences")
    report = Collection3Report()
    mapping = DEFAULT_MAPPINGS["collection3"]
    for rec in records:
        for *_, cat in _source_spans(rec.labels):
            report.entities[mapping.get(cat, cat)] += 1
    return records, report


def _source_spans(labels: Sequence[tuple[str, Optional[str]]]) -> list[tuple[int, int, str]]:
    # same repair convention as corpus.bio_to_spans, over raw source categories
    spans = []
    start = category = None
    for i, (prefix, cat) in enumerate(labels):
        if start is not None and (prefix != "I" or cat != category):
            spans.append((start, i, category))
            start = None
        if prefix == "B" or (prefix == "I" and start is None):
            start, category = i, cat
    if start is not None:
        spans.append((start, len(labels), category))
    return spans


def adapt_ner_corpus(
    source_files: Sequence[tuple[str, bytes]],
    source_format: str,
    mapping: Optional[Mapping[str, str]] = None,
    language: Optional[str] = None,
) -> list[TaggedSentence]:
    """Read an external corpus and map its labels onto the task categories.

    Spans are decoded over source labels first, then mapped; spans whose
    category maps to ``DROP`` become ``O`` so no dangling ``I-`` tags remain.
    """
    if language is not None and language not in LANGUAGES:
        raise AdapterError(f"unsupported language {language!r}")
    if source_format == "collection3":
        records, _ = load_collection3(source_files)
    else:
        records = read_ner_source(source_files, source_format)
    if not records:
        raise AdapterError(f"{source_format} input contains no sentences")
    return map_sentences(records, mapping if mapping is not None else DEFAULT_MAPPINGS[source_format])


def map_sentences(records: Iterable[SourceSentence], mapping: Mapping[str, str]) -> list[TaggedSentence]:
    for target in mapping.values():
        if target != DROP and target not in CATEGORIES:
            raise AdapterError(f"mapping target {target!r} is not a task category or DROP")
    out = []
    for rec in records:
        spans = []
        for s, e, cat in _source_spans(rec.labels):
            if cat not in mapping:
                raise AdapterError(f"label {cat!r} has no mapping")
            if mapping[cat] != DROP:
                spans.append(EntitySpan(s, e, mapping[cat]))
        out.append(TaggedSentence.from_lists(rec.tokens, spans_to_bio(len(rec.tokens), spans)))
    return out


def parse_mapping(data: bytes) -> dict[str, str]:
    """``source<TAB>target`` lines; ``#`` starts a comment."""
    mapping = {}
    for lineno, line in enumerate(data.decode("utf-8").splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise AdapterError(f"mapping line {lineno}: expected 'source target'")
        mapping[parts[0]] = parts[1]
    return mapping


def _split_unescaped(text: str, sep: str) -> tuple[str, Optional[str]]:
    i = 0
    while i < len(text):
        if text[i] == "\\":
            i += 2
            continue
        if text[i] == sep:
            return text[:i], text[i + 1 :]
        i += 1
    return text, None


def _unescape(text: str) -> str:
    out = []
    i = 0
    while i < len(text):
        if text[i] == "\\" and i + 1 < len(text):
            out.append(text[i + 1])
            i += 2
        else:
            out.append(text[i])
            i += 1
    return "".join(out)


@dataclass
class SkipReport:
    skipped: int = 0
    duplicates: int = 0
    lines: list[int] = field(default_factory=list)


def load_lemma_resource(
    files: Sequence[tuple[str, bytes]],
    origin: str,
    language: str,
    report: Optional[SkipReport] = None,
) -> list[LemmaExample]:
    if origin not in LEMMA_ORIGINS:
        raise AdapterError(f"unknown origin {origin!r}; valid: {', '.join(LEMMA_ORIGINS)}")
    if report is None:
        report = SkipReport()
    seen = set()
    out = []
    for name, data in files:
        for lineno, line in enumerate(data.decode("utf-8").splitlines(), start=1):
            if not line.strip() or line.startswith("#"):
                continue
            if origin in ("sejf", "sejfek"):
                surface, rest = _split_unescaped(line.rstrip("\n"), ",")
                lemma = _split_unescaped(rest, ".")[0] if rest is not None else ""
                surface, lemma = _unescape(surface).strip(), _unescape(lemma).strip()
            else:
                cols = line.rstrip("\n").split("\t")
                if len(cols) == 3:
                    cols = cols[1:]
                surface = cols[0].strip()
                lemma = cols[1].strip() if len(cols) == 2 else ""
            if not surface or not lemma:
                report.skipped += 1
                report.lines.append(lineno)
                continue
            key = (surface, lemma)
            if key in seen:
                report.duplicates += 1
                continue
            seen.add(key)
            out.append(LemmaExample(language, surface, lemma, origin))
    return out


def extract_shared_task_lemma_pairs(
    annotations: Iterable[MentionAnnotation], language: str
) -> list[LemmaExample]:
    seen = set()
    out = []
    for ann in annotations:
        key = (ann.form, ann.lemma)
        if key in seen or not ann.lemma:
            continue
        seen.add(key)
        out.append(LemmaExample(language, ann.form, ann.lemma, "shared_task"))
    return out


def write_lemma_examples(examples: Iterable[LemmaExample]) -> bytes:
    """``language<TAB>surface<TAB>lemma<TAB>origin`` rows."""
    return "".join(
        f"{e.language}\t{e.surface}\t{e.lemma}\t{e.origin}\n" for e in examples
    ).encode("utf-8")


def read_lemma_examples(data: bytes) -> list[LemmaExample]:
    out = []
    for lineno, line in enumerate(data.decode("utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        cols = line.split("\t")
        if len(cols) != 4:
            raise AdapterError(f"line {lineno}: expected 4 columns, got {len(cols)}")
        out.append(LemmaExample(*cols))
    return out


class MergedSentence(NamedTuple):
    origin: str
    sentence: TaggedSentence


def merge_corpora(
    corpora: Mapping[str, Sequence[TaggedSentence]],
    weights: Mapping[str, float],
    seed: int = 0,
) -> list[MergedSentence]:
    """Weighted, seeded mix of named corpora.

    Corpus ``i`` contributes ``round(w_i * |c_i|)`` sentences (half rounds
    up): whole copies for the integer part of the weight plus a seeded
    sample without replacement for the rest. The result is shuffled with
    the same seed.
    """
    if set(weights) - set(corpora):
        raise AdapterError(f"weights for unknown corpora: {sorted(set(weights) - set(corpora))}")
    ws = {name: float(weights.get(name, 1.0)) for name in corpora}
    if any(w < 0 or not math.isfinite(w) for w in ws.values()):
        raise AdapterError("weights must be finite and nonnegative")
    if not any(w > 0 for w in ws.values()):
        raise AdapterError("at least one weight must be positive")
    rng = random.Random(seed)
    out: list[MergedSentence] = []
    for name in corpora:
        items = list(corpora[name])
        target = math.floor(ws[name] * len(items) + 0.5)
        whole, rest = divmod(target, len(items)) if items else (0, 0)
        picked = items * whole + rng.sample(items, rest)
        out.extend(MergedSentence(name, s) for s in picked)
    rng.shuffle(out)
    return out
