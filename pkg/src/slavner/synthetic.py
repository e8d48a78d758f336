"""Deterministic desk-scale corpora: tagged sentences, lemma pairs, shared-task documents."""

from __future__ import annotations

import random
from pathlib import Path
from typing import Optional

from .adapters import LemmaExample
from .corpus import CATEGORIES, TaggedSentence

# category -> [(lemma, [inflected forms])]; forms include the lemma itself
LEXICON = {
    "pl": {
        "PER": [
            ("Andrzej Duda", ["Andrzej Duda", "Andrzeja Dudy", "Andrzejem Dudą"]),
            ("Mateusz Morawiecki", ["Mateusz Morawiecki", "Mateusza Morawieckiego"]),
            ("Donald Tusk", ["Donald Tusk", "Donalda Tuska"]),
        ],
        "LOC": [
            ("Polska", ["Polska", "Polski", "Polsce"]),
            ("Warszawa", ["Warszawa", "Warszawy", "Warszawie"]),
            ("Ukraina", ["Ukraina", "Ukrainy", "Ukrainie"]),
        ],
        "ORG": [
            ("Unia Europejska", ["Unia Europejska", "Unii Europejskiej"]),
            ("NATO", ["NATO"]),
            ("Parlament Europejski", ["Parlament Europejski", "Parlamentu Europejskiego"]),
        ],
        "EVT": [
            ("Brexit", ["Brexit", "Brexitu"]),
            ("Igrzyska Olimpijskie", ["Igrzyska Olimpijskie", "Igrzysk Olimpijskich"]),
        ],
        "PRO": [
            ("Nord Stream 2", ["Nord Stream 2"]),
            ("Facebook", ["Facebook", "Facebooka"]),
        ],
    },
    "cs": {
        "PER": [
            ("Andrej Babiš", ["Andrej Babiš", "Andreje Babiše"]),
            ("Petr Fiala", ["Petr Fiala", "Petra Fialy"]),
        ],
        "LOC": [
            ("Praha", ["Praha", "Prahy", "Praze"]),
            ("Ukrajina", ["Ukrajina", "Ukrajiny", "Ukrajině"]),
        ],
        "ORG": [
            ("Evropská unie", ["Evropská unie", "Evropské unie"]),
            ("NATO", ["NATO"]),
        ],
        "EVT": [("Brexit", ["Brexit", "Brexitu"])],
        "PRO": [("Nord Stream 2", ["Nord Stream 2"]), ("Facebook", ["Facebook", "Facebooku"])],
    },
    "ru": {
        "PER": [
            ("Владимир Путин", ["Владимир Путин", "Владимира Путина"]),
            ("Джо Байден", ["Джо Байден", "Джо Байдена"]),
        ],
        "LOC": [
            ("Москва", ["Москва", "Москвы", "Москве"]),
            ("Украина", ["Украина", "Украины", "Украине"]),
        ],
        "ORG": [
            ("Европейский союз", ["Европейский союз", "Европейского союза"]),
            ("НАТО", ["НАТО"]),
        ],
        "EVT": [("Брексит", ["Брексит", "Брексита"])],
        "PRO": [("Северный поток 2", ["Северный поток 2", "Северного потока 2"])],
    },
}

FILLER = {
    "pl": ["według", "mediów", "rozmowy", "trwały", "długo", "wczoraj", "rząd", "oświadczył", "że",
           "sprawa", "jest", "ważna", "dla", "wszystkich", "obywateli", "dziś", "w", "i", "o"],
    "cs": ["podle", "médií", "jednání", "trvala", "dlouho", "včera", "vláda", "uvedla", "že",
           "věc", "je", "důležitá", "pro", "všechny", "občany", "dnes", "v", "a", "o"],
    "ru": ["по", "данным", "СМИ", "переговоры", "шли", "долго", "вчера", "правительство",
           "заявило", "что", "вопрос", "важен", "для", "всех", "граждан", "сегодня", "в", "и", "о"],
}


def _entity(rng: random.Random, language: str, category: str) -> tuple[str, str]:
    lemma, forms = rng.choice(LEXICON[language][category])
    return rng.choice(forms), lemma


def ner_corpus(n_sentences: int = 50, seed: int = 0, languages=("pl", "cs", "ru")) -> list[TaggedSentence]:
    """Sentences of filler words with 1-3 entity mentions; all five categories appear."""
    rng = random.Random(seed)
    out = []
    for k in range(n_sentences):
        lang = languages[k % len(languages)]
        cats = [CATEGORIES[k % len(CATEGORIES)]] + rng.sample(CATEGORIES, rng.randint(0, 2))
        tokens: list[str] = []
        tags: list[str] = []
        for cat in cats:
            for _ in range(rng.randint(1, 3)):
                tokens.append(rng.choice(FILLER[lang]))
                tags.append("O")
            form, _ = _entity(rng, lang, cat)
            for i, tok in enumerate(form.split()):
                tokens.append(tok)
                tags.append(("B-" if i == 0 else "I-") + cat)
        tokens.append(".")
        tags.append("O")
        out.append(TaggedSentence.from_lists(tokens, tags))
    return out


# (language, lemma ending, surface endings) per paradigm; stems are random syllables
_PARADIGMS = {
    "pl": [("a", ["y", "ie", "ę", "ą"]), ("", ["a", "owi", "em", "u"]), ("o", ["a", "u", "em"])],
    "cs": [("a", ["y", "ě", "u", "ou"]), ("", ["a", "ovi", "em", "u", "y"]), ("o", ["a", "u", "em"])],
    "ru": [("а", ["ы", "е", "у", "ой"]), ("", ["а", "у", "ом", "е"]), ("о", ["а", "у", "ом"])],
}
_SYLLABLES = {
    "pl": ["ka", "ro", "mi", "szy", "wo", "le", "bra", "nie", "sta", "gó", "dzi", "pa"],
    "cs": ["ka", "ro", "mi", "ši", "vo", "le", "bra", "ně", "sta", "hů", "dí", "pa"],
    "ru": ["ка", "ро", "ми", "ши", "во", "ле", "бра", "не", "ста", "го", "ди", "па"],
}
_CONSONANTS = {"pl": "bdklmnprstwz", "cs": "bdklmnprstvz", "ru": "бдклмнпрствз"}


def _stem(rng: random.Random, language: str) -> str:
    s = "".join(rng.choice(_SYLLABLES[language]) for _ in range(rng.randint(1, 2)))
    return (s + rng.choice(_CONSONANTS[language])).capitalize()


def lemma_pairs(
    n: int = 100,
    seed: int = 0,
    languages=("pl", "cs", "ru"),
    identity: bool = False,
    origin: str = "shared_task",
) -> list[LemmaExample]:
    """Distinct inflected phrases with their base forms (or identity pairs)."""
    rng = random.Random(seed)
    seen = set()
    out = []
    while len(out) < n:
        lang = languages[len(out) % len(languages)]
        words_s, words_l = [], []
        for _ in range(rng.randint(1, 2)):
            stem = _stem(rng, lang)
            lemma_end, surface_ends = rng.choice(_PARADIGMS[lang])
            words_l.append(stem + lemma_end)
            words_s.append(stem + rng.choice(surface_ends))
        lemma = " ".join(words_l)
        surface = lemma if identity else " ".join(words_s)
        if surface in seen:
            continue
        seen.add(surface)
        out.append(LemmaExample(lang, surface, lemma, origin))
    return out


_TEMPLATES = {
    "pl": "{a} rozmawiał o sprawie {b} . Według mediów {c} jest ważna dla {d} .\n\nDziś {e} i {a} .",
    "cs": "{a} jednal o {b} . Podle médií {c} je důležitá pro {d} .\n\nDnes {e} a {a} .",
    "ru": "{a} говорил о {b} . По данным СМИ {c} важен для {d} .\n\nСегодня {e} и {a} .",
}


def shared_task_documents(seed: int = 0, per_language: int = 2):
    """Yield (language, doc_id, raw text, annotation text) in BSNLP layout."""
    rng = random.Random(seed)
    for lang in ("pl", "cs", "ru"):
        for k in range(per_language):
            cats = list(CATEGORIES)
            rng.shuffle(cats)
            mentions = {}
            slots = {}
            for slot, cat in zip("abcde", cats):
                form, lemma = _entity(rng, lang, cat)
                slots[slot] = form
                mentions.setdefault(form, (lemma, cat))
            body = _TEMPLATES[lang].format(**slots)
            doc_id = f"{lang}-synthetic-{k + 1}"
            raw = f"{doc_id}\n{lang}\n2023-01-0{k + 1}\nhttp://example.org/{doc_id}\nTitle {k + 1}\n{body}\n"
            ann = doc_id + "\n" + "".join(
                f"{form}\t{lemma}\t{cat}\t{lang.upper()}-{k}\n" for form, (lemma, cat) in mentions.items()
            )
            yield lang, doc_id, raw, ann


def write_shared_task_fixture(root, seed: int = 0, per_language: int = 2) -> list[str]:
    """Write ``raw/<lang>/<id>.txt`` and ``annotated/<lang>/<id>.out`` under ``root``."""
    root = Path(root)
    ids = []
    for lang, doc_id, raw, ann in shared_task_documents(seed, per_language):
        for sub, suffix, text in (("raw", ".txt", raw), ("annotated", ".out", ann)):
            p = root / sub / lang / (doc_id + suffix)
            p.parent.mkdir(parents=True, exist_ok=True)
            p.write_bytes(text.encode("utf-8"))
        ids.append(doc_id)
    return ids


def split_heldout(examples, fraction: float = 0.2, seed: int = 0, rng: Optional[random.Random] = None):
    rng = rng or random.Random(seed)
    items = list(examples)
    rng.shuffle(items)
    cut = int(round(len(items) * (1 - fraction)))
    return items[:cut], items[cut:]
