"""Offline Recall@K evaluation with five long-tail buckets by #items per query."""

from __future__ import annotations

import csv
import io
import json
import math
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

from .corpus import CLICKED, ClickEvent, Vocabulary
from .decode import DecodeConfig, search
from .errors import DataError
from .fm_index import FmIndex
from .model import ModelParams

BUCKETS = ("#item=1", "1<#item<=5", "5<#item<=20", "20<#item<=40", "#item>40")
CLICK_CLASSES = ("1", "2", "3", "4", "5-9", "10-19", "20-49", ">=50")


def bucketize(n_items: int) -> int:
    """Bucket number 1..5 for a query with ``n_items`` relevant items."""
    if n_items < 1:
        raise ValueError("a query needs at least one relevant item")
    if n_items == 1:
        return 1
    if n_items <= 5:
        return 2
    if n_items <= 20:
        return 3
    if n_items <= 40:
        return 4
    return 5


def recall_at_k(relevant: set[int], ranked: Sequence[int], k: int) -> float:
    if not relevant:
        raise ValueError("relevant set must be non-empty")
    return len(relevant.intersection(ranked[:k])) / len(relevant)


@dataclass(frozen=True)
class EvalQuery:
    query: str
    relevant: frozenset[int]
    bucket: int


def eval_queries(held_out: Iterable[ClickEvent]) -> list[EvalQuery]:
    """One EvalQuery per query with held-out clicks; relevant = distinct clicked items."""
    rel: dict[str, set[int]] = defaultdict(set)
    for c in held_out:
        if c.label == CLICKED:
            rel[c.query].add(c.item_id)
    return [EvalQuery(q, frozenset(r), bucketize(len(r))) for q, r in sorted(rel.items())]


@dataclass
class EvalReport:
    ks: list[int]
    rows: list[tuple[str, int, float, int]]  # bucket, K, recall, n_queries
    config: dict = field(default_factory=dict)
    per_query: list[dict] = field(default_factory=list)

    def recall(self, k: int, bucket: str = "all") -> float:
        for b, kk, r, _ in self.rows:
            if b == bucket and kk == k:
                return r
        raise KeyError((bucket, k))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["bucket", "K", "recall", "n_queries"])
        for b, k, r, n in self.rows:
            w.writerow([b, k, repr(r), n])
        return buf.getvalue()

    def to_json(self) -> str:
        return json.dumps(
            {
                "ks": self.ks,
                "recall": [{"bucket": b, "K": k, "recall": r, "n_queries": n} for b, k, r, n in self.rows],
                "config": self.config,
                "per_query": self.per_query,
            },
            indent=2,
            sort_keys=True,
        )


def summarize(queries: Sequence[EvalQuery], ranked: Sequence[Sequence[int]], ks: Sequence[int]) -> list[tuple[str, int, float, int]]:
    rows = []
    for k in ks:
        per_bucket: dict[int, list[float]] = defaultdict(list)
        everything = []
        for q, r in zip(queries, ranked):
            rec = recall_at_k(set(q.relevant), list(r), k)
            per_bucket[q.bucket].append(rec)
            everything.append(rec)
        for b in range(1, 6):
            vals = per_bucket.get(b, [])
            rows.append((BUCKETS[b - 1], k, math.fsum(vals) / len(vals) if vals else 0.0, len(vals)))
        rows.append(("all", k, math.fsum(everything) / len(everything), len(everything)))
    return rows


def run_eval(
    params: ModelParams,
    index: FmIndex,
    queries: Sequence[EvalQuery],
    vocab: Vocabulary,
    config: DecodeConfig,
    ks: Sequence[int] = (10, 50),
    details: bool = False,
) -> EvalReport:
    if not queries:
        raise DataError("no evaluation queries")
    kmax = max(ks)
    ranked = []
    per_query = []
    for q in queries:
        result = search(params, index, vocab.encode_query(q.query), config, K=kmax)
        ranked.append(result.item_ids)
        if details:
            per_query.append(
                {"query": q.query, "bucket": q.bucket, "relevant": sorted(q.relevant), "ranked": result.item_ids}
            )
    return EvalReport(list(ks), summarize(queries, ranked, ks), asdict(config), per_query)


def beam_sweep(
    params: ModelParams,
    index: FmIndex,
    queries: Sequence[EvalQuery],
    vocab: Vocabulary,
    config: DecodeConfig,
    beams: Sequence[int] = (1, 5, 20, 100),
    ks: Sequence[int] = (10, 50),
) -> dict[int, EvalReport]:
    out = {}
    for b in beams:
        cfg = DecodeConfig(**{**asdict(config), "beam": b})
        out[b] = run_eval(params, index, queries, vocab, cfg, ks)
    return out


def sweep_csv(sweep: dict[int, EvalReport]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["beam", "bucket", "K", "recall", "n_queries"])
    for b, rep in sorted(sweep.items()):
        for bucket, k, r, n in rep.rows:
            w.writerow([b, bucket, k, repr(r), n])
    return buf.getvalue()


def click_class(n: int) -> str:
    if n < 5:
        return str(n)
    if n < 10:
        return "5-9"
    if n < 20:
        return "10-19"
    if n < 50:
        return "20-49"
    return ">=50"


def query_distribution(clicks: Iterable[ClickEvent]) -> list[tuple[str, int, float]]:
    """(click class, n_queries, share) over queries with at least one click; empty log -> []."""
    per_query = Counter(c.query for c in clicks if c.label == CLICKED)
    if not per_query:
        return []
    classes = Counter(click_class(n) for n in per_query.values())
    total = len(per_query)
    return [(c, classes.get(c, 0), classes.get(c, 0) / total) for c in CLICK_CLASSES]


def share_below(clicks: Iterable[ClickEvent], threshold: int = 5) -> float:
    per_query = Counter(c.query for c in clicks if c.label == CLICKED)
    if not per_query:
        return 0.0
    return sum(1 for n in per_query.values() if n < threshold) / len(per_query)


def distribution_csv(hist: Sequence[tuple[str, int, float]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["clicks", "n_queries", "share"])
    for c, n, s in hist:
        w.writerow([c, n, repr(s)])
    return buf.getvalue()
