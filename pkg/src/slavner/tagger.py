"""Token encoder + CRF recognition model: training, prediction and checkpoints."""

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
from typing import Optional, Protocol, Sequence

import numpy as np
import torch
from torch import nn

from . import crf
from .corpus import LABELS, EntitySpan, RawDocument, TaggedSentence, bio_to_spans, tokenize
from .evaluation import span_f1

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT = 1
PAD, UNK = "<pad>", "<unk>"


class TaggerError(ValueError):
    pass


@dataclass
class TrainConfig:
    seed: int = 13
    epochs: int = 100
    batch_size: int = 8
    learning_rate: float = 5e-3
    max_pieces: int = 256
    encoder: str = "pieces-bilstm"
    crf_enabled: bool = True
    constraint_mask: bool = False
    piece_size: int = 4
    embedding_dim: int = 64
    hidden_dim: int = 128
    clip_norm: float = 5.0

    def __post_init__(self):
        for name in ("epochs", "batch_size", "max_pieces", "piece_size", "embedding_dim", "hidden_dim"):
            if getattr(self, name) <= 0:
                raise TaggerError(f"{name} must be positive")
        if self.learning_rate <= 0:
            raise TaggerError("learning_rate must be positive")
        if self.encoder != "pieces-bilstm":
            raise TaggerError(f"unknown encoder {self.encoder!r}")


@dataclass
class Encoding:
    pieces: list[str]
    piece_to_word: list[int]
    states: torch.Tensor  # (pieces, hidden)


class EncoderAdapter(Protocol):
    """What the tagger needs from a token encoder.

    ``encode`` returns subword pieces, a monotone piece-to-word map that
    covers every word, and one state vector of width ``hidden_size`` per
    piece. Pretrained transformer encoders fit behind the same surface.
    """

    hidden_size: int

    def encode(self, tokens: Sequence[str]) -> Encoding: ...

    def encode_batch(self, batch: Sequence[Sequence[str]]) -> list[Encoding]: ...


def first_piece_indices(piece_to_word: Sequence[int]) -> list[int]:
    firsts = []
    prev = -1
    for i, w in enumerate(piece_to_word):
        if w < prev:
            raise TaggerError("piece-to-word map is not monotone")
        if w > prev + 1:
            raise TaggerError(f"word {prev + 1} has no piece")
        if w == prev + 1:
            firsts.append(i)
        prev = w
    return firsts


def align_subwords(piece_to_word: Sequence[int], piece_scores, n_words: Optional[int] = None):
    """Word-level rows: each word takes the row of its first piece."""
    firsts = first_piece_indices(piece_to_word)
    if n_words is not None and len(firsts) != n_words:
        raise TaggerError(f"word {len(firsts)} has no piece")
    return piece_scores[firsts]


class PieceEncoder(nn.Module):
    """Desk-scale encoder: fixed-width character chunks, embedded, then a BiLSTM."""

    def __init__(self, vocab: Sequence[str], piece_size: int, embedding_dim: int, hidden_dim: int):
        super().__init__()
        self.vocab = list(vocab)
        self.index = {p: i for i, p in enumerate(self.vocab)}
        self.piece_size = piece_size
        self.hidden_size = hidden_dim
        self.embed = nn.Embedding(len(self.vocab), embedding_dim, padding_idx=0)
        self.lstm = nn.LSTM(embedding_dim, hidden_dim // 2, batch_first=True, bidirectional=True)

    @staticmethod
    def split(tokens: Sequence[str], piece_size: int) -> tuple[list[str], list[int]]:
        pieces, owner = [], []
        for w, tok in enumerate(tokens):
            for k in range(0, max(len(tok), 1), piece_size):
                pieces.append(tok[k : k + piece_size] if k == 0 else "##" + tok[k : k + piece_size])
                owner.append(w)
        return pieces, owner

    @classmethod
    def build_vocab(cls, corpus: Sequence[Sequence[str]], piece_size: int) -> list[str]:
        seen = {}
        for tokens in corpus:
            for p in cls.split(tokens, piece_size)[0]:
                seen.setdefault(p, None)
        return [PAD, UNK] + sorted(seen)

    def encode_batch(self, batch: Sequence[Sequence[str]]) -> list[Encoding]:
        split = [self.split(tokens, self.piece_size) for tokens in batch]
        lengths = [len(p) for p, _ in split]
        ids = torch.zeros(len(batch), max(lengths), dtype=torch.long)
        for b, (pieces, _) in enumerate(split):
            ids[b, : len(pieces)] = torch.tensor([self.index.get(p, 1) for p in pieces])
        packed = nn.utils.rnn.pack_padded_sequence(
            self.embed(ids), lengths, batch_first=True, enforce_sorted=False
        )
        out, _ = self.lstm(packed)
        out, _ = nn.utils.rnn.pad_packed_sequence(out, batch_first=True)
        return [Encoding(p, o, out[b, : len(p)]) for b, (p, o) in enumerate(split)]

    def encode(self, tokens: Sequence[str]) -> Encoding:
        return self.encode_batch([tokens])[0]


class _CrfNll(torch.autograd.Function):
    """CRF negative log-likelihood with the gradient from the compiled kernels."""

    @staticmethod
    def forward(ctx, emissions, transition, start, end, tags, tr_pen, st_pen):
        em = np.ascontiguousarray(emissions.detach().double().numpy())
        tr = np.ascontiguousarray(transition.detach().numpy() + tr_pen)
        st = np.ascontiguousarray(start.detach().numpy() + st_pen)
        en = np.ascontiguousarray(end.detach().numpy())
        value, g_em, g_tr, g_st, g_en = crf.nll_grad_arrays(em, tr, st, en, tags)
        ctx.save_for_backward(
            torch.from_numpy(g_em).to(emissions.dtype),
            torch.from_numpy(g_tr),
            torch.from_numpy(g_st),
            torch.from_numpy(g_en),
        )
        return emissions.new_tensor(max(value, 0.0), dtype=torch.float64)

    @staticmethod
    def backward(ctx, grad):
        g_em, g_tr, g_st, g_en = ctx.saved_tensors
        return g_em * grad.to(g_em.dtype), g_tr * grad, g_st * grad, g_en * grad, None, None, None


class NerModel(nn.Module):
    def __init__(self, encoder: PieceEncoder, config: TrainConfig, labels: Sequence[str] = LABELS):
        super().__init__()
        self.encoder = encoder
        self.config = config
        self.labels = tuple(labels)
        self.label_index = {lab: i for i, lab in enumerate(self.labels)}
        L = len(self.labels)
        self.projection = nn.Linear(encoder.hidden_size, L)
        init = crf.CrfParams.init_uniform(self.labels, config.seed, constrained=config.constraint_mask)
        self.transition = nn.Parameter(torch.from_numpy(init.transition.copy()))
        self.start = nn.Parameter(torch.from_numpy(init.start.copy()))
        self.end = nn.Parameter(torch.from_numpy(init.end.copy()))
        tr_mask, st_mask = init.masks()
        on = config.constraint_mask
        self._tr_pen = np.where(tr_mask, init.penalty, 0.0) if on else np.zeros((L, L))
        self._st_pen = np.where(st_mask, init.penalty, 0.0) if on else np.zeros(L)

    @property
    def crf_params(self) -> crf.CrfParams:
        return crf.CrfParams(
            self.transition.detach().numpy(),
            self.start.detach().numpy(),
            self.end.detach().numpy(),
            self.labels,
            constrained=self.config.constraint_mask,
        )

    def emissions(self, batch: Sequence[Sequence[str]]) -> list[torch.Tensor]:
        """Word-level emission matrices (words x labels), one per sentence."""
        out = []
        for enc in self.encoder.encode_batch(batch):
            n_words = enc.piece_to_word[-1] + 1 if enc.piece_to_word else 0
            out.append(align_subwords(enc.piece_to_word, self.projection(enc.states), n_words))
        return out

    def loss(self, batch: Sequence[Sequence[str]], tag_ids: Sequence[np.ndarray]) -> torch.Tensor:
        terms = []
        for em, y in zip(self.emissions(batch), tag_ids):
            if self.config.crf_enabled:
                terms.append(
                    _CrfNll.apply(em, self.transition, self.start, self.end, y, self._tr_pen, self._st_pen)
                )
            else:
                terms.append(nn.functional.cross_entropy(em, torch.from_numpy(y)).double())
        return torch.stack(terms).mean()

    def _fits(self, tokens: Sequence[str]) -> int:
        """Number of leading words whose pieces fit within max_pieces."""
        _, owner = PieceEncoder.split(tokens, self.config.piece_size)
        if len(owner) <= self.config.max_pieces:
            return len(tokens)
        return owner[self.config.max_pieces]

    @torch.no_grad()
    def predict_tags(self, batch: Sequence[Sequence[str]]) -> list[list[str]]:
        keep = [self._fits(tokens) for tokens in batch]
        live = [i for i, k in enumerate(keep) if k > 0]
        results: list[list[str]] = [["O"] * len(tokens) for tokens in batch]
        if not live:
            return results
        ems = self.emissions([list(batch[i][: keep[i]]) for i in live])
        params = self.crf_params
        tr, st, en = params.effective()
        for i, em in zip(live, ems):
            scores = np.ascontiguousarray(em.double().numpy())
            if self.config.crf_enabled:
                path, _ = crf.viterbi_arrays(scores, tr, st, en)
            else:
                path = np.argmax(scores, axis=1)
            results[i][: keep[i]] = [self.labels[j] for j in path]
        return results


@dataclass
class TrainReport:
    epoch_losses: list[float] = field(default_factory=list)
    val_f1: list[float] = field(default_factory=list)
    best_epoch: int = 0
    truncated: int = 0
    train_f1: Optional[float] = None


def _truncate(ts: TaggedSentence, max_pieces: int, piece_size: int) -> tuple[list[str], list[str], bool]:
    _, owner = PieceEncoder.split(ts.tokens, piece_size)
    if len(owner) <= max_pieces:
        return list(ts.tokens), list(ts.tags), False
    n = owner[max_pieces]
    return list(ts.tokens[:n]), list(ts.tags[:n]), True


def evaluate_model(model: NerModel, corpus: Sequence[TaggedSentence], batch_size: int = 32) -> float:
    model.eval()
    preds = []
    for k in range(0, len(corpus), batch_size):
        chunk = corpus[k : k + batch_size]
        for ts, tags in zip(chunk, model.predict_tags([list(s.tokens) for s in chunk])):
            preds.append(TaggedSentence(ts.sentence, tuple(tags)))
    return span_f1(list(corpus), preds).f1


def train(
    corpus: Sequence[TaggedSentence],
    config: TrainConfig = TrainConfig(),
    validation: Optional[Sequence[TaggedSentence]] = None,
) -> NerModel:
    """Fit a tagger; the returned model carries its ``report``.

    With a validation split the parameters with the best validation span F1
    are kept, otherwise those of the final epoch.
    """
    corpus = [ts for ts in corpus if len(ts.tokens)]
    if not corpus:
        raise TaggerError("training corpus is empty")
    report = TrainReport()
    data = []
    for ts in corpus:
        tokens, tags, cut = _truncate(ts, config.max_pieces, config.piece_size)
        report.truncated += cut
        if tokens:
            data.append((tokens, np.array([LABELS.index(t) for t in tags], dtype=np.int64)))
    if report.truncated:
        log.warning("truncated %d sentences to %d pieces", report.truncated, config.max_pieces)

    torch.manual_seed(config.seed)
    rng = random.Random(config.seed)
    vocab = PieceEncoder.build_vocab([t for t, _ in data], config.piece_size)
    encoder = PieceEncoder(vocab, config.piece_size, config.embedding_dim, config.hidden_dim)
    model = NerModel(encoder, config)
    optim = torch.optim.Adam(model.parameters(), lr=config.learning_rate)

    best_state, best_f1 = None, -1.0
    order = list(range(len(data)))
    for epoch in range(1, config.epochs + 1):
        model.train()
        rng.shuffle(order)
        total = 0.0
        for k in range(0, len(order), config.batch_size):
            idx = order[k : k + config.batch_size]
            loss = model.loss([data[i][0] for i in idx], [data[i][1] for i in idx])
            optim.zero_grad()
            loss.backward()
            nn.utils.clip_grad_norm_(model.parameters(), config.clip_norm)
            optim.step()
            total += loss.item() * len(idx)
        report.epoch_losses.append(total / len(data))
        if validation:
            f1 = evaluate_model(model, validation)
            report.val_f1.append(f1)
            if f1 > best_f1:
                best_f1, best_state = f1, copy.deepcopy(model.state_dict())
                report.best_epoch = epoch
    if best_state is not None:
        model.load_state_dict(best_state)
    else:
        report.best_epoch = config.epochs
    model.eval()
    model.report = report
    return model


def predict_document(model: NerModel, doc: RawDocument) -> list[tuple[EntitySpan, int]]:
    sentences = tokenize(doc)
    if not sentences:
        return []
    out = []
    for si, (sent, tags) in enumerate(zip(sentences, model.predict_tags([list(s.tokens) for s in sentences]))):
        for span in bio_to_spans(tags):
            lo = sent.char_offsets[span.start][0]
            hi = sent.char_offsets[span.end - 1][1]
            out.append((EntitySpan(span.start, span.end, span.category, doc.body[lo:hi]), si))
    return out


def save_model(model: NerModel, path, metrics: Optional[dict] = None) -> None:
    """Write a checkpoint directory atomically.

    Layout: ``manifest.json`` (format version, config, labels, piece
    vocabulary, metrics), ``encoder.pt`` (torch state dict of encoder and
    projection) and ``crf.npz`` (see ``slavner.crf``).
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=".tmp-", dir=path.parent))
    try:
        state = {k: v for k, v in model.state_dict().items() if k not in ("transition", "start", "end")}
        torch.save(state, tmp / "encoder.pt")
        model.crf_params.save(tmp / "crf.npz")
        manifest = {
            "format_version": CHECKPOINT_FORMAT,
            "kind": "ner",
            "config": asdict(model.config),
            "labels": list(model.labels),
            "vocab": model.encoder.vocab,
            "metrics": metrics or {},
        }
        (tmp / "manifest.json").write_text(json.dumps(manifest, indent=2, ensure_ascii=False) + "\n")
        if path.exists():
            shutil.rmtree(path)
        os.replace(tmp, path)
    except BaseException:
        shutil.rmtree(tmp, ignore_errors=True)
        raise


def load_model(path) -> NerModel:
    path = Path(path)
    manifest_path = path / "manifest.json"
    if not manifest_path.exists():
        raise TaggerError(f"{path}: not a checkpoint directory (no manifest.json)")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("format_version") != CHECKPOINT_FORMAT or manifest.get("kind") != "ner":
        raise TaggerError(f"{path}: unsupported checkpoint format")
    config = TrainConfig(**manifest["config"])
    encoder = PieceEncoder(manifest["vocab"], config.piece_size, config.embedding_dim, config.hidden_dim)
    model = NerModel(encoder, config, manifest["labels"])
    model.load_state_dict(torch.load(path / "encoder.pt"), strict=False)
    params = crf.CrfParams.load(path / "crf.npz")
    with torch.no_grad():
        model.transition.copy_(torch.from_numpy(params.transition))
        model.start.copy_(torch.from_numpy(params.start))
        model.end.copy_(torch.from_numpy(params.end))
    model.eval()
    return model
