"""FM-index constrained beam search and span-to-item retrieval."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .corpus import EOS, Vocabulary
from .errors import InvariantError
from .fm_index import FIRST_REAL, FmIndex
from .model import ModelParams, encode_query, log_softmax, next_logits_batch

AGGREGATIONS = ("logsumexp", "max", "sum")


@dataclass
class DecodeConfig:
    beam: int = 100
    max_len: int | None = None  # None: bounded only by the longest identifier
    top_k: int | None = None  # None: no filtering (= V)
    top_p: float = 1.0
    lam: float = 1.0
    aggregation: str = "logsumexp"

    def __post_init__(self):
        if self.beam < 1:
            raise ValueError("beam size must be >= 1")
        if not 0.0 < self.top_p <= 1.0:
            raise ValueError("top_p must be in (0, 1]")
        if self.top_k is not None and self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if self.aggregation not in AGGREGATIONS:
            raise ValueError(f"aggregation must be one of {AGGREGATIONS}")


@dataclass
class BeamHypothesis:
    tokens: tuple[int, ...]
    lm_logprob: float
    complete: bool = False
    sp: int = 0
    ep: int = 0


@dataclass(frozen=True)
class ScoredSpan:
    tokens: tuple[int, ...]
    lm: float
    fm: float
    s: float


@dataclass
class RetrievedItem:
    item_id: int
    score: float
    support: list[int] = field(default_factory=list)  # indices into RetrievalResult.spans


@dataclass
class RetrievalResult:
    spans: list[ScoredSpan]
    items: list[RetrievedItem]

    @property
    def item_ids(self) -> list[int]:
        return [it.item_id for it in self.items]


def _filter(cand: np.ndarray, logp: np.ndarray, top_k: int | None, top_p: float) -> np.ndarray:
    """Apply top-k then nucleus filtering over the renormalized allowed distribution."""
    if top_k is None and top_p >= 1.0:
        return cand
    order = np.lexsort((cand, -logp[cand]))
    cand = cand[order]
    if top_k is not None:
        cand = cand[:top_k]
    if top_p < 1.0:
        p = np.exp(log_softmax(logp[cand]))
        keep = int(np.searchsorted(np.cumsum(p), top_p - 1e-12)) + 1
        cand = cand[:keep]
    return np.sort(cand)


def constrained_beam_search(
    params: ModelParams,
    index: FmIndex,
    query: Sequence[int],
    config: DecodeConfig,
) -> list[tuple[tuple[int, ...], float]]:
    """Beam search over whole identifiers, restricted to spans present in the index.

    Hypotheses are anchored at span starts, a token is a candidate only if the
    extended prefix still occurs, and EOS is a candidate only once the prefix is a
    complete identifier. Everything else is out of the candidate set (score -inf).
    """
    qv = encode_query(params, query)
    sp0, ep0 = 0, int(index.C[FIRST_REAL])
    live = [BeamHypothesis((), 0.0, False, sp0, ep0)]
    finished: list[BeamHypothesis] = []
    max_len = config.max_len
    while live:
        logp = log_softmax(next_logits_batch(params, qv, [h.tokens for h in live]))
        cands: list[tuple[float, tuple[int, ...], int, int]] = []  # (score, key, hyp, token)
        for i, h in enumerate(live):
            counts, end_ok = index.range_extensions(h.sp, h.ep)
            if max_len is not None and len(h.tokens) >= max_len:
                allowed = np.empty(0, dtype=np.int64)
            else:
                allowed = np.flatnonzero(counts)
            if end_ok and h.tokens:
                allowed = np.concatenate([[EOS], allowed])
            if len(allowed) == 0:
                continue
            allowed = _filter(allowed, logp[i], config.top_k, config.top_p)
            base = h.lm_logprob
            row = logp[i]
            for t in allowed.tolist():
                cands.append((base + float(row[t]), h.tokens + (t,), i, t))
        if not cands:
            break
        cands.sort(key=lambda c: (-c[0], c[1]))
        parents = live
        live = []
        for score, _, i, t in cands[: config.beam]:
            h = parents[i]
            if t == EOS:
                finished.append(BeamHypothesis(h.tokens, score, True, h.sp, h.ep))
            else:
                sp, ep = index.extend(h.sp, h.ep, t)
                live.append(BeamHypothesis(h.tokens + (t,), score, False, sp, ep))
    finished.sort(key=lambda h: (-h.lm_logprob, h.tokens))
    return [(h.tokens, h.lm_logprob) for h in finished[: config.beam]]


def score_spans(
    beams: Sequence[tuple[Sequence[int], float]], index: FmIndex, lam: float = 1.0
) -> list[ScoredSpan]:
    """Blend model and index scores: s = lm + lam * fm_score(span)."""
    out = []
    for tokens, lm in beams:
        fm = index.fm_score(tokens)
        if fm == -math.inf:
            raise InvariantError(f"decoded span {tuple(tokens)} does not occur in the index")
        out.append(ScoredSpan(tuple(tokens), float(lm), fm, float(lm) + lam * fm))
    return out


def _aggregate(scores: list[float], how: str) -> float:
    if how == "max":
        return max(scores)
    if how == "sum":
        return math.fsum(scores)
    m = max(scores)
    return m + math.log(math.fsum(math.exp(x - m) for x in scores))


def retrieve(
    spans: Sequence[ScoredSpan], index: FmIndex, K: int | None = None, aggregation: str = "logsumexp"
) -> RetrievalResult:
    """Map spans to every item containing them and rank items by aggregated span score."""
    support: dict[int, list[int]] = {}
    for j, sp in enumerate(spans):
        for item in index.locate_items(sp.tokens):
            support.setdefault(item, []).append(j)
    items = [
        RetrievedItem(item, _aggregate([spans[j].s for j in js], aggregation), js) for item, js in support.items()
    ]
    items.sort(key=lambda it: (-it.score, it.item_id))
    if K is not None:
        items = items[:K]
    return RetrievalResult(list(spans), items)


def search(
    params: ModelParams, index: FmIndex, query: Sequence[int], config: DecodeConfig, K: int | None = None
) -> RetrievalResult:
    beams = constrained_beam_search(params, index, query, config)
    return retrieve(score_spans(beams, index, config.lam), index, K, config.aggregation)


def result_to_json(query: str, result: RetrievalResult, vocab: Vocabulary) -> dict:
    return {
        "query": query,
        "spans": [
            {"tokens": vocab.decode(s.tokens), "lm": s.lm, "fm": s.fm, "s": s.s} for s in result.spans
        ],
        "items": [{"item_id": it.item_id, "score": it.score, "support": it.support} for it in result.items],
    }
