"""Shared-task documents, tokenization, mention projection and CoNLL I/O."""

from __future__ import annotations

import re
import unicodedata
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

CATEGORIES = ("PER", "LOC", "ORG", "EVT", "PRO")
LANGUAGES = ("pl", "cs", "ru")
LABELS = ("O",) + tuple(f"{p}-{c}" for c in CATEGORIES for p in ("B", "I"))

_TAG_RE = re.compile(r"^(?:O|[BI]-(?:%s))$" % "|".join(CATEGORIES))
_SENTENCE_END = frozenset(".!?…")


class CorpusError(ValueError):
    """Raised for malformed documents, annotation files or CoNLL input."""


@dataclass(frozen=True)
class RawDocument:
    doc_id: str
    language: str
    title: str
    body: str
    source_path: str = ""

    def __post_init__(self):
        if not self.doc_id:
            raise CorpusError("document id is empty")
        if self.language not in LANGUAGES:
            raise CorpusError(f"unsupported language {self.language!r}")
        if not self.body:
            raise CorpusError(f"document {self.doc_id!r} has an empty body")


@dataclass(frozen=True)
class MentionAnnotation:
    form: str
    lemma: str
    category: str
    cl_id: Optional[str] = None

    def __post_init__(self):
        if not self.form:
            raise CorpusError("mention form is empty")
        if self.category not in CATEGORIES:
            raise CorpusError(
                f"unknown category {self.category!r}; valid: {', '.join(CATEGORIES)}"
            )


@dataclass(frozen=True)
class Sentence:
    tokens: tuple[str, ...]
    # None when the source format carries no offsets (CoNLL input)
    char_offsets: Optional[tuple[tuple[int, int], ...]] = None

    def __post_init__(self):
        object.__setattr__(self, "tokens", tuple(self.tokens))
        if self.char_offsets is not None:
            offsets = tuple(tuple(o) for o in self.char_offsets)
            object.__setattr__(self, "char_offsets", offsets)
            if len(offsets) != len(self.tokens):
                raise CorpusError("token and offset counts differ")
            prev_end = -1
            for start, end in offsets:
                if start < prev_end or end <= start:
                    raise CorpusError("token offsets overlap or are not increasing")
                prev_end = end

    def __len__(self):
        return len(self.tokens)


@dataclass(frozen=True)
class TaggedSentence:
    sentence: Sentence
    tags: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "tags", tuple(self.tags))
        if len(self.tags) != len(self.sentence.tokens):
            raise CorpusError(
                f"{len(self.tags)} tags for {len(self.sentence.tokens)} tokens"
            )
        for tag in self.tags:
            if not _TAG_RE.match(tag):
                raise CorpusError(f"invalid tag {tag!r}")

    @property
    def tokens(self) -> tuple[str, ...]:
        return self.sentence.tokens

    @classmethod
    def from_lists(cls, tokens: Sequence[str], tags: Sequence[str]) -> "TaggedSentence":
        return cls(Sentence(tuple(tokens)), tuple(tags))


@dataclass(frozen=True, order=True)
class EntitySpan:
    start: int
    end: int
    category: str
    surface: str = field(default="", compare=False)

    def __post_init__(self):
        if not 0 <= self.start < self.end:
            raise CorpusError(f"invalid span bounds ({self.start}, {self.end})")


@dataclass(frozen=True)
class DocumentLayout:
    """Line layout of a raw shared-task file.

    ``metadata_lines`` header lines come first (``id_line`` and, if set,
    ``language_line`` index into them), then an optional title line, then
    the body. The default matches the BSNLP distribution: id, language,
    date, URL, title, text.
    """

    metadata_lines: int = 4
    id_line: int = 0
    language_line: Optional[int] = 1
    has_title: bool = True

    def __post_init__(self):
        if self.metadata_lines < 1 or not 0 <= self.id_line < self.metadata_lines:
            raise CorpusError("layout id_line must index a metadata line")
        if self.language_line is not None and not (
            0 <= self.language_line < self.metadata_lines
        ):
            raise CorpusError("layout language_line must index a metadata line")

    @classmethod
    def parse(cls, text: str) -> "DocumentLayout":
        """Parse ``key=value`` pairs separated by commas, e.g. ``metadata_lines=1,language_line=none``."""
        kwargs: dict = {}
        for item in filter(None, (s.strip() for s in text.split(","))):
            key, _, value = item.partition("=")
            key = key.strip()
            value = value.strip().lower()
            if key in ("metadata_lines", "id_line"):
                kwargs[key] = int(value)
            elif key == "language_line":
                kwargs[key] = None if value in ("none", "") else int(value)
            elif key == "has_title":
                kwargs[key] = value in ("1", "true", "yes")
            else:
                raise CorpusError(f"unknown layout key {key!r}")
        return cls(**kwargs)


def _decode(data: bytes, what: str) -> str:
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise UnicodeDecodeError(
            exc.encoding, exc.object, exc.start, exc.end, f"{what} is not valid UTF-8"
        ) from None
    if text.startswith("﻿"):
        text = text[1:]
    return text.replace("\r\n", "\n").replace("\r", "\n")


def parse_bsnlp_document(
    data: bytes,
    language: str,
    layout: DocumentLayout = DocumentLayout(),
    source_path: str = "",
) -> RawDocument:
    text = _decode(data, source_path or "document")
    lines = text.split("\n")
    n_header = layout.metadata_lines + (1 if layout.has_title else 0)
    if not text.strip():
        raise CorpusError(f"{source_path or 'document'}: empty file")
    if len(lines) <= n_header:
        raise CorpusError(
            f"{source_path or 'document'}: expected {n_header} header lines, "
            f"found only {len(lines)} lines (line {len(lines)})"
        )
    doc_id = lines[layout.id_line].strip()
    if not doc_id:
        raise CorpusError(f"{source_path or 'document'}: line {layout.id_line + 1}: empty document id")
    if layout.language_line is not None:
        declared = lines[layout.language_line].strip()
        if declared != language:
            raise CorpusError(
                f"{source_path or 'document'}: line {layout.language_line + 1}: "
                f"language {declared!r} does not match expected {language!r}"
            )
    title = lines[layout.metadata_lines].strip() if layout.has_title else ""
    body = "\n".join(lines[n_header:]).strip()
    if not body:
        raise CorpusError(f"{source_path or 'document'}: line {n_header + 1}: empty body")
    return RawDocument(doc_id, language, title, body, source_path)


def parse_annotation_file(data: bytes, source_path: str = "") -> tuple[str, list[MentionAnnotation]]:
    """Parse an annotation file into its document id and mention records.

    Records are ``form<TAB>lemma<TAB>category[<TAB>cl_id]``; order and
    duplicates are preserved.
    """
    where = source_path or "annotation file"
    lines = _decode(data, where).split("\n")
    if not lines or not lines[0].strip():
        raise CorpusError(f"{where}: line 1: missing document id")
    doc_id = lines[0].strip()
    mentions = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cols = line.split("\t")
        if len(cols) not in (3, 4):
            raise CorpusError(f"{where}: line {lineno}: expected 3 or 4 columns, got {len(cols)}")
        form, lemma, category = (c.strip() for c in cols[:3])
        cl_id = cols[3].strip() if len(cols) == 4 and cols[3].strip() else None
        try:
            mentions.append(MentionAnnotation(form, lemma, category, cl_id))
        except CorpusError as exc:
            raise CorpusError(f"{where}: line {lineno}: {exc}") from None
    return doc_id, mentions


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def _split_word(word: str, offset: int) -> list[tuple[str, int, int]]:
    """Split leading and trailing punctuation off a whitespace-delimited word."""
    lo, hi = 0, len(word)
    head = []
    while lo < hi and _is_punct(word[lo]):
        head.append((word[lo], offset + lo, offset + lo + 1))
        lo += 1
    tail = []
    while hi > lo and _is_punct(word[hi - 1]):
        tail.append((word[hi - 1], offset + hi - 1, offset + hi))
        hi -= 1
    core = [(word[lo:hi], offset + lo, offset + hi)] if hi > lo else []
    return head + core + tail[::-1]


def tokenize_text(text: str) -> list[tuple[str, int, int]]:
    out = []
    for m in re.finditer(r"\S+", text):
        out.extend(_split_word(m.group(), m.start()))
    return out


def tokenize(doc: RawDocument) -> list[Sentence]:
    """Split the body into sentences of punctuation-separated tokens.

    A sentence ends after a standalone ``.``, ``!``, ``?`` or ``…`` token and
    at blank lines.
    """
    body = doc.body
    sentences = []
    current: list[tuple[str, int, int]] = []

    def flush():
        if current:
            sentences.append(
                Sentence(tuple(t for t, _, _ in current), tuple((s, e) for _, s, e in current))
            )
            current.clear()

    prev_end = 0
    for tok, start, end in tokenize_text(body):
        if current and "\n\n" in body[prev_end:start].replace("\r", ""):
            flush()
        current.append((tok, start, end))
        prev_end = end
        if tok in _SENTENCE_END:
            flush()
    flush()
    return sentences


@dataclass
class ProjectionReport:
    unmatched: list[MentionAnnotation] = field(default_factory=list)
    located: int = 0


def project_annotations(
    sentences: Sequence[Sentence],
    annotations: Sequence[MentionAnnotation],
    report: Optional[ProjectionReport] = None,
) -> list[TaggedSentence]:
    """Tag every located occurrence of each annotated form.

    Candidates are whole-token, case-sensitive matches. They are accepted
    longest first, then leftmost, then by annotation order; a candidate that
    overlaps an accepted one is discarded. Annotations left without any
    accepted occurrence go to ``report.unmatched``.
    """
    if report is None:
        report = ProjectionReport()
    candidates = []
    for order, ann in enumerate(annotations):
        pattern = tuple(t for t, _, _ in tokenize_text(ann.form))
        n = len(pattern)
        if n == 0:
            continue
        for si, sent in enumerate(sentences):
            toks = sent.tokens
            for i in range(len(toks) - n + 1):
                if toks[i : i + n] == pattern:
                    candidates.append((-n, si, i, order))
    candidates.sort()

    taken: list[list[bool]] = [[False] * len(s) for s in sentences]
    spans: list[list[tuple[int, int, str]]] = [[] for _ in sentences]
    matched: set[int] = set()
    for neg_n, si, i, order in candidates:
        n = -neg_n
        if any(taken[si][i : i + n]):
            continue
        for k in range(i, i + n):
            taken[si][k] = True
        spans[si].append((i, i + n, annotations[order].category))
        matched.add(order)

    # an identical duplicate record counts as located with its twin
    seen = {(a.form, a.category) for k, a in enumerate(annotations) if k in matched}
    for k, ann in enumerate(annotations):
        if k in matched or (ann.form, ann.category) in seen:
            report.located += 1
        else:
            report.unmatched.append(ann)

    return [
        TaggedSentence(sent, spans_to_bio(len(sent), [EntitySpan(s, e, c) for s, e, c in sorted(sp)]))
        for sent, sp in zip(sentences, spans)
    ]


def spans_to_bio(length: int, spans: Iterable[EntitySpan]) -> list[str]:
    tags = ["O"] * length
    for span in sorted(spans):
        if span.end > length:
            raise CorpusError(f"span ({span.start}, {span.end}) exceeds length {length}")
        if any(t != "O" for t in tags[span.start : span.end]):
            raise CorpusError(f"span ({span.start}, {span.end}) overlaps another span")
        tags[span.start] = "B-" + span.category
        for k in range(span.start + 1, span.end):
            tags[k] = "I-" + span.category
    return tags


def bio_to_spans(tags: Sequence[str], tokens: Optional[Sequence[str]] = None) -> list[EntitySpan]:
    """Decode BIO tags into spans, repairing ill-formed input CoNLL-style.

    ``I-C`` continues a span only directly after ``B-C`` or ``I-C``;
    otherwise it opens a new span of category ``C``.
    """
    spans = []
    start = None
    category = None
    for i, tag in enumerate(tags):
        if tag == "O":
            prefix, cat = "O", None
        else:
            prefix, cat = tag[0], tag[2:]
        if start is not None and (prefix != "I" or cat != category):
            spans.append((start, i, category))
            start = None
        if prefix == "B" or (prefix == "I" and start is None):
            start, category = i, cat
    if start is not None:
        spans.append((start, len(tags), category))
    return [
        EntitySpan(s, e, c, " ".join(tokens[s:e]) if tokens is not None else "")
        for s, e, c in spans
    ]


def validate_tag(tag: str) -> bool:
    return bool(_TAG_RE.match(tag))


def read_conll(data: bytes) -> list[TaggedSentence]:
    text = _decode(data, "CoNLL input")
    sentences = []
    tokens: list[str] = []
    tags: list[str] = []
    for lineno, line in enumerate(text.split("\n"), start=1):
        cols = line.split()
        if not cols:
            if tokens:
                sentences.append(TaggedSentence.from_lists(tokens, tags))
                tokens, tags = [], []
            continue
        if cols[0] == "-DOCSTART-":
            continue
        if len(cols) < 2:
            raise CorpusError(f"line {lineno}: expected token and tag columns")
        if not _TAG_RE.match(cols[-1]):
            raise CorpusError(f"line {lineno}: invalid tag {cols[-1]!r}")
        tokens.append(cols[0])
        tags.append(cols[-1])
    if tokens:
        sentences.append(TaggedSentence.from_lists(tokens, tags))
    return sentences


def write_conll(sentences: Iterable[TaggedSentence]) -> bytes:
    lines = []
    for ts in sentences:
        for token, tag in zip(ts.tokens, ts.tags):
            if not token or any(ch.isspace() for ch in token):
                raise CorpusError(f"token {token!r} cannot be written as a CoNLL column")
            lines.append(f"{token} {tag}\n")
        lines.append("\n")
    return "".join(lines).encode("utf-8")


def same_content(a: Sequence[TaggedSentence], b: Sequence[TaggedSentence]) -> bool:
    """Compare corpora on tokens and tags only, ignoring offsets."""
    return len(a) == len(b) and all(
        x.tokens == y.tokens and x.tags == y.tags for x, y in zip(a, b)
    )
