"""Text-to-text lemmatization of entity mentions with language tokens."""

from __future__ import annotations

import copy
import json
import logging
import os
import random
import shutil
import tempfile
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Protocol, Sequence

import torch
from torch import nn

from .adapters import LemmaExample
from .corpus import LANGUAGES
from .evaluation import lemma_exact_match

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = 1
LANG_TOKENS = {lang: f">>{lang}<<" for lang in LANGUAGES}
PAD, BOS, EOS, UNK = "<pad>", "<s>", "</s>", "<unk>"
FALLBACK_RATIO = 4

# dataset tiers of the lemma training data, by origin
TIERS = {
    "original": ("shared_task",),
    "poleval": ("shared_task", "poleval2019"),
    "lexicon": ("shared_task", "poleval2019", "sejf", "sejfek", "translated"),
}


class LemmatizerError(ValueError):
    pass


def build_source(language: str, mention: str, multilingual: bool = True) -> str:
    if not mention:
        raise LemmatizerError("mention is empty")
    if not multilingual:
        return mention
    if language not in LANG_TOKENS:
        raise LemmatizerError(f"unsupported language {language!r}")
    return f"{LANG_TOKENS[language]} {mention}"


def split_source(source: str) -> tuple[Optional[str], str]:
    """Inverse of build_source: (language token or None, mention)."""
    for tok in LANG_TOKENS.values():
        if source.startswith(tok + " "):
            return tok, source[len(tok) + 1 :]
    return None, source


def select_tier(examples: Iterable[LemmaExample], tier: str) -> list[LemmaExample]:
    if tier not in TIERS:
        raise LemmatizerError(f"unknown tier {tier!r}; valid: {', '.join(TIERS)}")
    return [e for e in examples if e.origin in TIERS[tier]]


def assemble_training_set(
    shared_task: Sequence[LemmaExample],
    external: Sequence[LemmaExample] = (),
    multilingual: bool = True,
    tier: str = "lexicon",
) -> list[tuple[str, str]]:
    """(source, target) pairs for the origins included in ``tier``."""
    examples = select_tier(list(shared_task) + list(external), tier)
    return [(build_source(e.language, e.surface, multilingual), e.lemma) for e in examples]


def write_pair_file(pairs: Iterable[tuple[str, str]]) -> bytes:
    out = []
    for src, tgt in pairs:
        if "\t" in src or "\n" in src or "\t" in tgt or "\n" in tgt:
            raise LemmatizerError(f"pair contains a tab or newline: {src!r}")
        out.append(f"{src}\t{tgt}\n")
    return "".join(out).encode("utf-8")


def read_pair_file(data: bytes) -> list[tuple[str, str]]:
    pairs = []
    for lineno, line in enumerate(data.decode("utf-8").splitlines(), start=1):
        if not line:
            continue
        cols = line.split("\t")
        if len(cols) != 2 or not cols[0] or not cols[1]:
            raise LemmatizerError(f"line {lineno}: expected 'source<TAB>target'")
        pairs.append((cols[0], cols[1]))
    return pairs


@dataclass
class LemmaConfig:
    seed: int = 13
    epochs: int = 300
    batch_size: int = 16
    learning_rate: float = 3e-3
    embedding_dim: int = 64
    hidden_dim: int = 128
    multilingual: bool = True
    beam_size: int = 1
    eval_every: int = 10
    clip_norm: float = 1.0

    def __post_init__(self):
        for name in ("epochs", "batch_size", "embedding_dim", "hidden_dim", "beam_size", "eval_every"):
            if getattr(self, name) <= 0:
                raise LemmatizerError(f"{name} must be positive")
        if self.beam_size != 1:
            raise LemmatizerError("only greedy decoding (beam_size=1) is implemented")


class Seq2SeqAdapter(Protocol):
    """Pluggable text-to-text model; ``generate`` is deterministic."""

    def fit(self, pairs: Sequence[tuple[str, str]], config: LemmaConfig, validation=None) -> None: ...

    def generate(self, source: str) -> str: ...


def _source_symbols(source: str) -> list[str]:
    tok, mention = split_source(source)
    return ([tok] if tok else []) + list(mention)


class _Net(nn.Module):
    def __init__(self, n_src: int, n_tgt: int, emb: int, hid: int):
        super().__init__()
        self.src_embed = nn.Embedding(n_src, emb, padding_idx=0)
        self.tgt_embed = nn.Embedding(n_tgt, emb, padding_idx=0)
        self.encoder = nn.GRU(emb, hid // 2, batch_first=True, bidirectional=True)
        self.bridge = nn.Linear(hid, hid)
        self.cell = nn.GRUCell(emb + hid, hid)
        self.attn = nn.Linear(hid, hid, bias=False)
        self.combine = nn.Linear(2 * hid, hid)
        self.out = nn.Linear(hid, n_tgt)
        self.hid = hid

    def encode(self, src, lengths):
        packed = nn.utils.rnn.pack_padded_sequence(
            self.src_embed(src), lengths, batch_first=True, enforce_sorted=False
        )
        mem, _ = self.encoder(packed)
        mem, _ = nn.utils.rnn.pad_packed_sequence(mem, batch_first=True, total_length=src.shape[1])
        mask = src != 0
        pooled = (mem * mask.unsqueeze(-1)).sum(1) / mask.sum(1, keepdim=True)
        return mem, mask, torch.tanh(self.bridge(pooled))

    def step(self, prev, h, feed, mem, mask):
        h = self.cell(torch.cat([self.tgt_embed(prev), feed], -1), h)
        scores = torch.bmm(mem, self.attn(h).unsqueeze(-1)).squeeze(-1)
        weights = torch.softmax(scores.masked_fill(~mask, -1e9), -1)
        ctx = torch.bmm(weights.unsqueeze(1), mem).squeeze(1)
        feed = torch.tanh(self.combine(torch.cat([h, ctx], -1)))
        return self.out(feed), h, feed, weights


class CharSeq2Seq:
    """Character-level attentional encoder-decoder.

    Language tokens are single source symbols. When the decoder emits the
    unknown symbol, the most-attended source character is copied instead.
    """

    def __init__(self, config: LemmaConfig = LemmaConfig()):
        self.config = config
        self.src_vocab: list[str] = []
        self.tgt_vocab: list[str] = []
        self.net: Optional[_Net] = None
        self.history: list[tuple[int, float]] = []
        self.best_epoch = 0

    def _build(self, pairs):
        src = sorted({s for p, _ in pairs for s in _source_symbols(p)})
        tgt = sorted({c for _, t in pairs for c in t})
        self.src_vocab = [PAD, UNK] + src
        self.tgt_vocab = [PAD, BOS, EOS, UNK] + tgt
        self._index()
        c = self.config
        self.net = _Net(len(self.src_vocab), len(self.tgt_vocab), c.embedding_dim, c.hidden_dim)

    def _index(self):
        self._src_idx = {s: i for i, s in enumerate(self.src_vocab)}
        self._tgt_idx = {s: i for i, s in enumerate(self.tgt_vocab)}

    def _encode_sources(self, sources):
        syms = [_source_symbols(s) for s in sources]
        lengths = [max(len(x), 1) for x in syms]
        src = torch.zeros(len(sources), max(lengths), dtype=torch.long)
        for b, x in enumerate(syms):
            src[b, : len(x)] = torch.tensor([self._src_idx.get(s, 1) for s in x], dtype=torch.long)
        return syms, src, lengths

    def _loss(self, sources, targets):
        _, src, lengths = self._encode_sources(sources)
        tgt_ids = [[self._tgt_idx.get(c, 3) for c in t] + [2] for t in targets]
        T = max(len(t) for t in tgt_ids)
        gold = torch.zeros(len(targets), T, dtype=torch.long)
        for b, t in enumerate(tgt_ids):
            gold[b, : len(t)] = torch.tensor(t)
        mem, mask, h = self.net.encode(src, lengths)
        feed = torch.zeros_like(h)
        prev = torch.full((len(targets),), 1, dtype=torch.long)
        logits = []
        for t in range(T):
            out, h, feed, _ = self.net.step(prev, h, feed, mem, mask)
            logits.append(out)
            prev = gold[:, t]
        logits = torch.stack(logits, 1)
        return nn.functional.cross_entropy(
            logits.reshape(-1, logits.shape[-1]), gold.reshape(-1), ignore_index=0
        )

    def fit(self, pairs, config: Optional[LemmaConfig] = None, validation=None) -> None:
        if config is not None:
            self.config = config
        c = self.config
        pairs = list(pairs)
        if not pairs:
            raise LemmatizerError("no training pairs")
        torch.manual_seed(c.seed)
        rng = random.Random(c.seed)
        self._build(pairs)
        optim = torch.optim.Adam(self.net.parameters(), lr=c.learning_rate)
        val = list(validation) if validation else None
        best_em, best_state = -1.0, None
        order = list(range(len(pairs)))
        self.history = []
        for epoch in range(1, c.epochs + 1):
            self.net.train()
            rng.shuffle(order)
            for k in range(0, len(order), c.batch_size):
                batch = [pairs[i] for i in order[k : k + c.batch_size]]
                loss = self._loss([s for s, _ in batch], [t for _, t in batch])
                optim.zero_grad()
                loss.backward()
                nn.utils.clip_grad_norm_(self.net.parameters(), c.clip_norm)
                optim.step()
            if val and (epoch % c.eval_every == 0 or epoch == c.epochs):
                preds = self.generate_batch([s for s, _ in val])
                em = lemma_exact_match([(t, p) for (_, t), p in zip(val, preds)])
                self.history.append((epoch, em))
                if em > best_em:
                    best_em, best_state = em, copy.deepcopy(self.net.state_dict())
                    self.best_epoch = epoch
                if em == 1.0:
                    break
        if best_state is not None:
            self.net.load_state_dict(best_state)
        else:
            self.best_epoch = c.epochs
        self.net.eval()

    @torch.no_grad()
    def generate_batch(self, sources: Sequence[str]) -> list[str]:
        if self.net is None:
            raise LemmatizerError("model is not trained")
        self.net.eval()
        out = []
        for k in range(0, len(sources), 64):
            out.extend(self._greedy(sources[k : k + 64]))
        return out

    def _greedy(self, sources):
        syms, src, lengths = self._encode_sources(sources)
        mem, mask, h = self.net.encode(src, lengths)
        feed = torch.zeros_like(h)
        B = len(sources)
        prev = torch.full((B,), 1, dtype=torch.long)
        limits = [FALLBACK_RATIO * len(split_source(s)[1]) + 1 for s in sources]
        result: list[list[str]] = [[] for _ in range(B)]
        done = [False] * B
        for _ in range(max(limits)):
            logits, h, feed, weights = self.net.step(prev, h, feed, mem, mask)
            prev = logits.argmax(-1)
            for b in range(B):
                if done[b]:
                    continue
                i = int(prev[b])
                if i == 2:
                    done[b] = True
                elif i == 3:
                    j = int(weights[b, : len(syms[b])].argmax())
                    result[b].append(syms[b][j] if len(syms[b][j]) == 1 else "")
                else:
                    result[b].append(self.tgt_vocab[i])
                if len(result[b]) >= limits[b]:
                    done[b] = True
            if all(done):
                break
        return ["".join(r) for r in result]

    def generate(self, source: str) -> str:
        return self.generate_batch([source])[0]

    def save(self, path: Path) -> None:
        torch.save(self.net.state_dict(), path / "seq2seq.pt")
        (path / "vocab.json").write_text(
            json.dumps({"source": self.src_vocab, "target": self.tgt_vocab}, ensure_ascii=False)
        )

    @classmethod
    def load(cls, path: Path, config: LemmaConfig) -> "CharSeq2Seq":
        self = cls(config)
        vocab = json.loads((path / "vocab.json").read_text())
        self.src_vocab, self.tgt_vocab = vocab["source"], vocab["target"]
        self._index()
        self.net = _Net(len(self.src_vocab), len(self.tgt_vocab), config.embedding_dim, config.hidden_dim)
        self.net.load_state_dict(torch.load(path / "seq2seq.pt"))
        self.net.eval()
        return self


@dataclass
class FallbackReport:
    calls: int = 0
    fallbacks: int = 0
    mentions: list[str] = field(default_factory=list)


@dataclass
class LemmaModel:
    adapter: Seq2SeqAdapter
    multilingual: bool = True
    config: LemmaConfig = field(default_factory=LemmaConfig)


def train_lemmatizer(
    pairs: Sequence[tuple[str, str]],
    config: LemmaConfig = LemmaConfig(),
    validation: Optional[Sequence[tuple[str, str]]] = None,
    adapter: Optional[Seq2SeqAdapter] = None,
) -> LemmaModel:
    """Fit the seq2seq model; with ``validation`` the best-EM checkpoint is kept."""
    if not pairs:
        raise LemmatizerError("no training pairs")
    adapter = adapter if adapter is not None else CharSeq2Seq(config)
    adapter.fit(list(pairs), config, validation)
    return LemmaModel(adapter, config.multilingual, config)


def _accept(mention: str, generated: str) -> bool:
    return bool(generated.strip()) and len(generated) <= FALLBACK_RATIO * len(mention)


def predict_lemma(
    model: LemmaModel, language: str, mention: str, report: Optional[FallbackReport] = None
) -> str:
    return predict_lemmas(model, [(language, mention)], report)[0]


def predict_lemmas(
    model: LemmaModel,
    items: Sequence[tuple[str, str]],
    report: Optional[FallbackReport] = None,
) -> list[str]:
    """Batch form of predict_lemma over (language, mention) items."""
    sources = [build_source(lang, m, model.multilingual) for lang, m in items]
    if hasattr(model.adapter, "generate_batch"):
        outs = model.adapter.generate_batch(sources)
    else:
        outs = [model.adapter.generate(s) for s in sources]
    result = []
    for (_, mention), gen in zip(items, outs):
        if report is not None:
            report.calls += 1
        if _accept(mention, gen):
            result.append(gen)
        else:
            if report is not None:
                report.fallbacks += 1
                report.mentions.append(mention)
            result.append(mention)
    return result


def save_lemmatizer(model: LemmaModel, path, metrics: Optional[dict] = None) -> None:
    if not isinstance(model.adapter, CharSeq2Seq):
        raise LemmatizerError("only CharSeq2Seq models can be saved")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=".tmp-", dir=path.parent))
    try:
        model.adapter.save(tmp)
        manifest = {
            "format_version": CHECKPOINT_FORMAT,
            "kind": "lemmatizer",
            "config": asdict(model.config),
            "multilingual": model.multilingual,
            "metrics": metrics or {},
        }
        (tmp / "manifest.json").write_text(json.dumps(manifest, indent=2, ensure_ascii=False) + "\n")
        if path.exists():
            shutil.rmtree(path)
        os.replace(tmp, path)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


def load_lemmatizer(path) -> LemmaModel:
    path = Path(path)
    if not (path / "manifest.json").exists():
        raise LemmatizerError(f"{path}: not a checkpoint directory (no manifest.json)")
    manifest = json.loads((path / "manifest.json").read_text())
    if manifest.get("format_version") != CHECKPOINT_FORMAT or manifest.get("kind") != "lemmatizer":
        raise LemmatizerError(f"{path}: unsupported checkpoint format")
    config = LemmaConfig(**manifest["config"])
    return LemmaModel(CharSeq2Seq.load(path, config), manifest["multilingual"], config)


@dataclass
class AblationReport:
    with_token: dict[str, float]
    without_token: dict[str, float]
    n_heldout: dict[str, int]

    @property
    def delta(self) -> dict[str, float]:
        return {lang: self.with_token[lang] - self.without_token[lang] for lang in self.with_token}

    def to_dict(self) -> dict:
        return {
            lang: {
                "with_token": self.with_token[lang],
                "without_token": self.without_token[lang],
                "delta": self.delta[lang],
                "n_heldout": self.n_heldout[lang],
            }
            for lang in sorted(self.with_token)
        }


def language_token_ablation(
    train: Sequence[LemmaExample],
    heldout: Sequence[LemmaExample],
    config: LemmaConfig = LemmaConfig(),
) -> AblationReport:
    """Train with and without language tokens; per-language held-out exact match."""
    langs = sorted({e.language for e in heldout})
    scores = {}
    for flag in (True, False):
        cfg = LemmaConfig(**{**asdict(config), "multilingual": flag})
        pairs = [(build_source(e.language, e.surface, flag), e.lemma) for e in train]
        model = train_lemmatizer(pairs, cfg)
        scores[flag] = {}
        for lang in langs:
            items = [e for e in heldout if e.language == lang]
            preds = predict_lemmas(model, [(e.language, e.surface) for e in items])
            scores[flag][lang] = lemma_exact_match([(e.lemma, p) for e, p in zip(items, preds)])
    counts = {lang: sum(e.language == lang for e in heldout) for lang in langs}
    return AblationReport(scores[True], scores[False], counts)
