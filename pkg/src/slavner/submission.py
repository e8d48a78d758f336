"""System presets, per-document prediction files and submission archives.

A prediction file (and each archive entry) is UTF-8::

    <doc id>
    form<TAB>lemma<TAB>category<TAB>cl_id

with one record per unique (form, category) in order of first
occurrence. Cross-lingual ids are not predicted; the placeholder ``0`` is
written. An archive is a zip of ``<lang>/<doc id>.out`` entries plus
``MANIFEST.json``; every entry carries a fixed timestamp so reruns are
byte-identical.
"""

from __future__ import annotations

import io
import json
import zipfile
from dataclasses import dataclass
from typing import Iterable, Mapping, Optional, Sequence

from .corpus import CATEGORIES, LANGUAGES

CL_ID_PLACEHOLDER = "0"
MANIFEST = "MANIFEST.json"
ARCHIVE_FORMAT = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


class SubmissionError(ValueError):
    pass


@dataclass(frozen=True)
class SystemPreset:
    """Model roles and training-data tiers per language.

    Roles name model slots (e.g. ``multilingual-large``); a run binds each
    role to a concrete checkpoint directory.
    """

    name: str
    ner: Mapping[str, str]
    ner_tier: Mapping[str, str]
    lemmatizer: Mapping[str, str]
    lemma_tier: Mapping[str, str]

    def __post_init__(self):
        for table in (self.ner, self.ner_tier, self.lemmatizer, self.lemma_tier):
            if set(table) != set(LANGUAGES):
                raise SubmissionError(f"preset {self.name}: every language needs exactly one entry")

    def roles(self) -> set[str]:
        return set(self.ner.values()) | set(self.lemmatizer.values())


_MONO = {"pl": "pl-monolingual-large", "cs": "cs-monolingual", "ru": "ru-monolingual"}
_MULTI = {lang: "multilingual-large" for lang in LANGUAGES}
_LEMMA = {"pl": "pl-t5-large", "cs": "mt5-large", "ru": "mt5-large"}
_LEMMA_TIER = {"pl": "lexicon", "cs": "poleval", "ru": "poleval"}

PRESETS: dict[str, SystemPreset] = {
    "system1": SystemPreset(
        "system1", _MONO, {"pl": "all", "cs": "original", "ru": "original"}, _LEMMA, _LEMMA_TIER
    ),
    "system2": SystemPreset(
        "system2", _MULTI, {lang: "original" for lang in LANGUAGES}, _LEMMA, _LEMMA_TIER
    ),
    "system3": SystemPreset("system3", _MULTI, {lang: "all" for lang in LANGUAGES}, _LEMMA, _LEMMA_TIER),
    "system4": SystemPreset("system4", _MONO, {lang: "all" for lang in LANGUAGES}, _LEMMA, _LEMMA_TIER),
}


def get_preset(name: str) -> SystemPreset:
    try:
        return PRESETS[name]
    except KeyError:
        raise SubmissionError(f"unknown preset {name!r}; valid: {', '.join(PRESETS)}") from None


@dataclass(frozen=True)
class Record:
    form: str
    lemma: str
    category: str
    cl_id: str = CL_ID_PLACEHOLDER


def unique_mentions(mentions: Iterable[tuple[str, str]]) -> list[tuple[str, str]]:
    """(surface, category) pairs, first occurrence kept."""
    seen: dict[tuple[str, str], None] = {}
    for m in mentions:
        seen.setdefault((m[0], m[1]), None)
    return list(seen)


def format_prediction(doc_id: str, records: Sequence[Record]) -> bytes:
    lines = [doc_id + "\n"]
    for r in records:
        fields = (r.form, r.lemma, r.category, r.cl_id)
        if any("\t" in f or "\n" in f for f in fields):
            raise SubmissionError(f"{doc_id}: record field contains a tab or newline: {fields!r}")
        lines.append("\t".join(fields) + "\n")
    return "".join(lines).encode("utf-8")


def parse_prediction(data: bytes, where: str = "prediction") -> tuple[str, list[Record]]:
    problems: list[str] = []
    doc_id, records = _parse_checked(data, where, problems)
    if problems:
        raise SubmissionError(problems[0])
    return doc_id, records


def _parse_checked(data: bytes, where: str, problems: list[str]) -> tuple[str, list[Record]]:
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError:
        problems.append(f"{where}: not UTF-8")
        return "", []
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines or not lines[0].strip() or "\t" in lines[0]:
        problems.append(f"{where}: line 1: missing document id")
        return "", []
    records = []
    seen = set()
    for lineno, line in enumerate(lines[1:], start=2):
        cols = line.split("\t")
        if len(cols) != 4:
            problems.append(f"{where}: line {lineno}: expected 4 TAB-separated fields, got {len(cols)}")
            continue
        form, lemma, category, cl_id = cols
        if not form or not lemma or not cl_id:
            problems.append(f"{where}: line {lineno}: empty field")
            continue
        if category not in CATEGORIES:
            problems.append(f"{where}: line {lineno}: unknown category {category!r}")
            continue
        if (form, category) in seen:
            problems.append(f"{where}: line {lineno}: duplicate mention {form!r} ({category})")
            continue
        seen.add((form, category))
        records.append(Record(form, lemma, category, cl_id))
    return lines[0].strip(), records


def build_archive(entries: Mapping[str, bytes], preset: str) -> bytes:
    """Zip ``entries`` (archive path -> prediction file) with a manifest."""
    get_preset(preset)
    if not entries:
        raise SubmissionError("no prediction files to package")
    manifest = {
        "format_version": ARCHIVE_FORMAT,
        "preset": preset,
        "documents": sorted(entries),
    }
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w", zipfile.ZIP_DEFLATED) as zf:
        for name in sorted(entries):
            _write_entry(zf, name, entries[name])
        _write_entry(zf, MANIFEST, (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode())
    return buf.getvalue()


def _write_entry(zf: zipfile.ZipFile, name: str, data: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def validate_submission(data: bytes, expected_ids: Optional[Iterable[str]] = None) -> list[str]:
    """Problems found in an archive; an empty list means it is valid."""
    problems: list[str] = []
    try:
        zf = zipfile.ZipFile(io.BytesIO(data))
    except zipfile.BadZipFile:
        return ["not a zip archive"]
    with zf:
        names = zf.namelist()
        if MANIFEST not in names:
            problems.append(f"missing {MANIFEST}")
            manifest = {}
        else:
            try:
                manifest = json.loads(zf.read(MANIFEST))
            except ValueError:
                manifest = {}
                problems.append(f"{MANIFEST} is not valid JSON")
        if manifest:
            if manifest.get("format_version") != ARCHIVE_FORMAT:
                problems.append(f"{MANIFEST}: unsupported format_version")
            if manifest.get("preset") not in PRESETS:
                problems.append(f"{MANIFEST}: unknown preset {manifest.get('preset')!r}")
        docs = [n for n in names if n != MANIFEST]
        if not docs:
            problems.append("archive contains no documents")
        if manifest and sorted(manifest.get("documents", [])) != sorted(docs):
            problems.append(f"{MANIFEST}: document list does not match archive entries")
        ids = {}
        for name in docs:
            if not name.endswith(".out"):
                problems.append(f"{name}: entries must end in .out")
                continue
            doc_id, _ = _parse_checked(zf.read(name), name, problems)
            if doc_id in ids:
                problems.append(f"{name}: document id {doc_id!r} also in {ids[doc_id]}")
            ids[doc_id] = name
        if expected_ids is not None:
            missing = sorted(set(expected_ids) - set(ids))
            if missing:
                problems.append(f"missing documents: {', '.join(missing)}")
    return problems
