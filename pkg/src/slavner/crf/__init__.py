"""Linear-chain CRF over BIO label sequences.

A path ``y`` over emissions ``E`` (T x L) scores

    start[y0] + E[0, y0] + sum_t (transition[y(t-1), y(t)] + E[t, y(t)]) + end[y(T-1)]

and every function here (including the brute-force oracle) accumulates in
exactly that left-to-right order, so equal paths give bitwise-equal scores.

The hot loops live in a compiled extension (``_ckernels``); the numpy
fallback in ``_pykernels`` is selected when the extension is not built or
``SLAVNER_CRF_BACKEND=python`` is set.

Parameter files are numpy ``.npz`` archives with keys ``transition``
(float64, L x L, row = previous label), ``start`` and ``end`` (float64, L),
``labels`` (unicode, L, label of each index), ``constrained`` (bool scalar)
and ``penalty`` (float64 scalar).
"""

from __future__ import annotations

import itertools
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import _pykernels

try:
    from . import _ckernels
except ImportError:  # extension not built
    _ckernels = None

DEFAULT_PENALTY = -1e4
MAX_ORACLE_PATHS = 10**6


class CrfError(ValueError):
    pass


def _select_backend(name: Optional[str] = None):
    name = name or os.environ.get("SLAVNER_CRF_BACKEND", "auto")
    if name == "python":
        return _pykernels
    if name in ("c", "cython"):
        if _ckernels is None:
            raise ImportError("compiled CRF kernels are not built")
        return _ckernels
    return _ckernels if _ckernels is not None else _pykernels


_backend = _select_backend()


def backend_name() -> str:
    return "cython" if _backend is _ckernels and _ckernels is not None else "python"


def set_backend(name: str) -> None:
    """Switch kernels at runtime: ``"python"``, ``"cython"`` or ``"auto"``."""
    global _backend
    _backend = _select_backend(name)


def available_backends() -> list[str]:
    return ["python"] + (["cython"] if _ckernels is not None else [])


def bio_allowed(prev: Optional[str], cur: str) -> bool:
    """Whether label ``cur`` may follow ``prev`` (``None`` = sequence start)."""
    if not cur.startswith("I-"):
        return True
    if prev is None or prev == "O":
        return False
    return prev[2:] == cur[2:]


@dataclass(frozen=True)
class CrfParams:
    transition: np.ndarray
    start: np.ndarray
    end: np.ndarray
    labels: tuple[str, ...]
    constrained: bool = False
    penalty: float = DEFAULT_PENALTY
    label_index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        labels = tuple(self.labels)
        L = len(labels)
        if L < 1 or len(set(labels)) != L:
            raise CrfError("labels must be a nonempty list of distinct names")
        tr = np.ascontiguousarray(self.transition, dtype=np.float64)
        st = np.ascontiguousarray(self.start, dtype=np.float64)
        en = np.ascontiguousarray(self.end, dtype=np.float64)
        if tr.shape != (L, L) or st.shape != (L,) or en.shape != (L,):
            raise CrfError(f"parameter shapes do not match {L} labels")
        for name, arr in (("transition", tr), ("start", st), ("end", en)):
            if not np.all(np.isfinite(arr)):
                raise CrfError(f"{name} scores must be finite")
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "transition", tr)
        object.__setattr__(self, "start", st)
        object.__setattr__(self, "end", en)
        object.__setattr__(self, "label_index", {lab: i for i, lab in enumerate(labels)})

    @property
    def num_labels(self) -> int:
        return len(self.labels)

    @classmethod
    def zeros(cls, labels: Sequence[str], **kwargs) -> "CrfParams":
        L = len(labels)
        return cls(np.zeros((L, L)), np.zeros(L), np.zeros(L), tuple(labels), **kwargs)

    @classmethod
    def init_uniform(cls, labels: Sequence[str], seed: int, scale: float = 0.1, **kwargs):
        rng = np.random.default_rng(seed)
        L = len(labels)
        return cls(
            rng.uniform(-scale, scale, (L, L)),
            rng.uniform(-scale, scale, L),
            rng.uniform(-scale, scale, L),
            tuple(labels),
            **kwargs,
        )

    def masks(self) -> tuple[np.ndarray, np.ndarray]:
        """Boolean forbidden-transition and forbidden-start masks for BIO labels."""
        L = self.num_labels
        tr = np.array(
            [[not bio_allowed(self.labels[i], self.labels[j]) for j in range(L)] for i in range(L)]
        )
        st = np.array([not bio_allowed(None, lab) for lab in self.labels])
        return tr, st

    def effective(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Transition, start and end scores with the constraint penalty applied."""
        if not self.constrained:
            return self.transition, self.start, self.end
        tr_mask, st_mask = self.masks()
        return (
            self.transition + self.penalty * tr_mask,
            self.start + self.penalty * st_mask,
            self.end,
        )

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            np.savez(
                fh,
                transition=self.transition,
                start=self.start,
                end=self.end,
                labels=np.array(self.labels, dtype=np.str_),
                constrained=np.array(self.constrained),
                penalty=np.array(self.penalty, dtype=np.float64),
            )

    @classmethod
    def load(cls, path) -> "CrfParams":
        with np.load(path, allow_pickle=False) as data:
            return cls(
                data["transition"],
                data["start"],
                data["end"],
                tuple(str(s) for s in data["labels"]),
                constrained=bool(data["constrained"]),
                penalty=float(data["penalty"]),
            )

    def __eq__(self, other):
        if not isinstance(other, CrfParams):
            return NotImplemented
        return (
            self.labels == other.labels
            and self.constrained == other.constrained
            and self.penalty == other.penalty
            and np.array_equal(self.transition, other.transition)
            and np.array_equal(self.start, other.start)
            and np.array_equal(self.end, other.end)
        )

    __hash__ = None


def _check_emissions(emissions, params: CrfParams) -> np.ndarray:
    em = np.ascontiguousarray(emissions, dtype=np.float64)
    if em.ndim != 2 or em.shape[0] < 1 or em.shape[1] != params.num_labels:
        raise CrfError(
            f"emissions must be T x {params.num_labels} with T >= 1, got {em.shape}"
        )
    if not np.all(np.isfinite(em)):
        raise CrfError("emission scores must be finite")
    return em


def _check_tags(tags, em: np.ndarray, params: CrfParams) -> np.ndarray:
    if len(tags) and isinstance(tags[0], str):
        try:
            tags = [params.label_index[t] for t in tags]
        except KeyError as exc:
            raise CrfError(f"unknown label {exc.args[0]!r}") from None
    arr = np.ascontiguousarray(tags, dtype=np.int64)
    if arr.shape != (em.shape[0],):
        raise CrfError(f"{len(arr)} tags for {em.shape[0]} positions")
    if arr.min() < 0 or arr.max() >= params.num_labels:
        raise CrfError("tag index out of range")
    return arr


def path_score(emissions, tags, params: CrfParams) -> float:
    em = _check_emissions(emissions, params)
    y = _check_tags(tags, em, params)
    tr, st, en = params.effective()
    return float(_backend.path_score(em, tr, st, en, y))


def log_partition(emissions, params: CrfParams) -> float:
    em = _check_emissions(emissions, params)
    tr, st, en = params.effective()
    return float(_backend.log_partition(em, tr, st, en))


def nll(emissions, tags, params: CrfParams) -> float:
    em = _check_emissions(emissions, params)
    y = _check_tags(tags, em, params)
    tr, st, en = params.effective()
    value = float(_backend.log_partition(em, tr, st, en)) - float(
        _backend.path_score(em, tr, st, en, y)
    )
    # rounding can leave -1e-16 when one path holds all the mass
    return max(value, 0.0)


@dataclass
class NllGradient:
    nll: float
    emissions: np.ndarray
    transition: np.ndarray
    start: np.ndarray
    end: np.ndarray


def nll_and_grad(emissions, tags, params: CrfParams) -> NllGradient:
    """nll and its analytic gradient from forward-backward marginals.

    The constraint penalty is additive, so gradients w.r.t. the raw
    transition and start scores equal those w.r.t. the effective ones.
    """
    em = _check_emissions(emissions, params)
    y = _check_tags(tags, em, params)
    tr, st, en = params.effective()
    value, g_em, g_tr, g_st, g_en = _backend.nll_grad(em, tr, st, en, y)
    return NllGradient(max(float(value), 0.0), g_em, g_tr, g_st, g_en)


def nll_grad_arrays(em, tr, st, en, tags):
    """Unchecked kernel call on contiguous float64 arrays and int64 tags."""
    return _backend.nll_grad(em, tr, st, en, tags)


def viterbi_arrays(em, tr, st, en):
    return _backend.viterbi(em, tr, st, en)


def viterbi(emissions, params: CrfParams) -> tuple[list[int], float]:
    em = _check_emissions(emissions, params)
    tr, st, en = params.effective()
    path, score = _backend.viterbi(em, tr, st, en)
    return [int(i) for i in path], float(score)


def viterbi_labels(emissions, params: CrfParams) -> list[str]:
    path, _ = viterbi(emissions, params)
    return [params.labels[i] for i in path]


def brute_force_oracle(emissions, params: CrfParams) -> tuple[float, list[int], float]:
    """Enumerate every path: (log partition, best path, best score).

    Ties among best paths follow Viterbi's rule: smallest last label, then
    smallest second-to-last, and so on.
    """
    em = np.asarray(emissions, dtype=np.float64)
    T, L = em.shape
    if L**T > MAX_ORACLE_PATHS:
        raise CrfError(f"{L}^{T} paths exceed the oracle limit of {MAX_ORACLE_PATHS}")
    tr, st, en = params.effective()
    paths = np.array(list(itertools.product(range(L), repeat=T)), dtype=np.int64)
    scores = st[paths[:, 0]] + em[0, paths[:, 0]]
    for t in range(1, T):
        scores = scores + tr[paths[:, t - 1], paths[:, t]]
        scores = scores + em[t, paths[:, t]]
    scores = scores + en[paths[:, -1]]
    m = scores.max()
    logz = float(m + np.log(np.sum(np.exp(scores - m))))
    best = np.flatnonzero(scores == m)
    chosen = min(best, key=lambda k: tuple(paths[k][::-1]))
    return logz, [int(i) for i in paths[chosen]], float(m)


__all__ = [
    "CrfError",
    "CrfParams",
    "NllGradient",
    "available_backends",
    "backend_name",
    "bio_allowed",
    "brute_force_oracle",
    "log_partition",
    "nll",
    "nll_and_grad",
    "path_score",
    "set_backend",
    "viterbi",
    "viterbi_labels",
]
