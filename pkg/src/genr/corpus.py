"""Catalog ingestion and title canonicalization into multi-span identifiers.

A title goes through tokenize -> segment -> canonical_sort -> build_spans.
Each clicked <query, item> event then expands into one <query, span> sample
per span of the item.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .errors import DataError, EmptyQuery, EmptyTitle

EOS = 0
UNK = 1
EOS_TOKEN = "<eos>"
UNK_TOKEN = "<unk>"

CLICKED = "clicked"
EXPOSED = "exposed_not_clicked"
_LABELS_IN = {"click": CLICKED, "expose": EXPOSED}
_LABELS_OUT = {v: k for k, v in _LABELS_IN.items()}

# letter runs or digit runs; everything else (whitespace, punctuation) separates
_TOKEN_RE = re.compile(r"[^\W\d_]+|\d+")


def tokenize(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def tokenize_title(text: str) -> list[str]:
    tokens = tokenize(text)
    if not tokens:
        raise EmptyTitle(f"title has no tokens: {text!r}")
    return tokens


def tokenize_query(text: str) -> list[str]:
    tokens = tokenize(text)
    if not tokens:
        raise EmptyQuery(f"query has no tokens: {text!r}")
    return tokens


Lexicon = frozenset[tuple[str, ...]]


def segment(tokens: Sequence[str], lexicon: Iterable[Sequence[str]]) -> list[list[str]]:
    """Greedy longest-match segmentation, left to right; uncovered tokens are unigrams."""
    phrases = {tuple(p) for p in lexicon if len(p) > 0}
    max_len = max((len(p) for p in phrases), default=1)
    out: list[list[str]] = []
    i = 0
    n = len(tokens)
    while i < n:
        step = 1
        for size in range(min(max_len, n - i), 1, -1):
            if tuple(tokens[i : i + size]) in phrases:
                step = size
                break
        out.append(list(tokens[i : i + step]))
        i += step
    return out


def canonical_sort(ngrams: Sequence[Sequence[str]]) -> list[list[str]]:
    return [list(g) for g in sorted(ngrams, key=tuple)]


def build_spans(sorted_tokens: Sequence, span_len: int) -> list[list]:
    """Chunk into pieces of ``span_len``; a trailing singleton joins the previous span."""
    if span_len < 2:
        raise ValueError("span length must be >= 2")
    tokens = list(sorted_tokens)
    if len(tokens) < 2:
        return [tokens]
    spans = [tokens[i : i + span_len] for i in range(0, len(tokens), span_len)]
    if len(spans) > 1 and len(spans[-1]) == 1:
        spans[-2].extend(spans.pop())
    return spans


def canonicalize(tokens: Sequence[str], lexicon: Iterable[Sequence[str]], span_len: int) -> list[list[str]]:
    ngrams = canonical_sort(segment(tokens, lexicon))
    flat = [t for g in ngrams for t in g]
    return build_spans(flat, span_len)


class Vocabulary:
    """Bijection token <-> id. Id 0 is EOS, id 1 is UNK, real tokens follow in sorted order."""

    def __init__(self, tokens: Iterable[str]):
        real = sorted(set(tokens) - {EOS_TOKEN, UNK_TOKEN})
        self.itos: list[str] = [EOS_TOKEN, UNK_TOKEN, *real]
        self.stoi: dict[str, int] = {t: i for i, t in enumerate(self.itos)}

    def __len__(self) -> int:
        return len(self.itos)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Vocabulary) and self.itos == other.itos

    def id(self, token: str) -> int:
        return self.stoi.get(token, UNK)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.stoi.get(t, UNK) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.itos[i] for i in ids]

    def encode_query(self, text: str) -> list[int]:
        return self.encode(tokenize_query(text))


@dataclass(frozen=True)
class SpanIdentifier:
    tokens: tuple[int, ...]
    span_index: int  # 1-based position j in 1..m


@dataclass(frozen=True)
class ItemRecord:
    item_id: int
    raw_title: str
    tokens: tuple[int, ...]
    spans: tuple[SpanIdentifier, ...]

    @property
    def canonical(self) -> tuple[int, ...]:
        return tuple(t for s in self.spans for t in s.tokens)

    @property
    def m(self) -> int:
        return len(self.spans)


@dataclass(frozen=True)
class ClickEvent:
    query: str
    item_id: int
    label: str
    timestamp: int


@dataclass
class Catalog:
    items: dict[int, ItemRecord]
    vocab: Vocabulary
    span_len: int
    lexicon: Lexicon = field(default_factory=frozenset)

    def __len__(self) -> int:
        return len(self.items)

    def __getitem__(self, item_id: int) -> ItemRecord:
        return self.items[item_id]

    def identifiers(self, task: str = "multi-span") -> dict[int, list[tuple[int, ...]]]:
        """Identifier token sequences per item for a task mode.

        ``multi-span`` uses the canonical spans; ``title`` uses the whole raw-order
        title as a single identifier (the query2title baseline).
        """
        if task == "multi-span":
            return {i: [s.tokens for s in it.spans] for i, it in self.items.items()}
        if task == "title":
            return {i: [it.tokens] for i, it in self.items.items()}
        raise ValueError(f"unknown task mode {task!r}")


def expand_pairs(click: ClickEvent, item: ItemRecord) -> list[tuple[str, tuple[int, ...]]]:
    return [(click.query, s.tokens) for s in item.spans]


def expand_samples(
    clicks: Iterable[ClickEvent],
    catalog: Catalog,
    task: str = "multi-span",
) -> list[tuple[str, tuple[int, ...]]]:
    """Expand every clicked event into <query, identifier> samples. Duplicates are kept."""
    idents = catalog.identifiers(task)
    out = []
    for c in clicks:
        if c.label != CLICKED:
            continue
        out.extend((c.query, ident) for ident in idents[c.item_id])
    return out


def load_lexicon(path: str | Path) -> Lexicon:
    phrases = set()
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            toks = tokenize(line)
            if len(toks) > 1:
                phrases.add(tuple(toks))
    return frozenset(phrases)


def build_catalog(
    rows: Iterable[tuple[int, str]],
    lexicon: Iterable[Sequence[str]] = (),
    span_len: int = 8,
) -> Catalog:
    lex = frozenset(tuple(p) for p in lexicon)
    raw: dict[int, tuple[str, list[str]]] = {}
    for item_id, title in rows:
        if item_id in raw:
            raise DataError(f"duplicate item_id {item_id}")
        raw[item_id] = (title, tokenize_title(title))
    vocab = Vocabulary(t for _, toks in raw.values() for t in toks)
    items = {}
    for item_id, (title, toks) in raw.items():
        spans = canonicalize(toks, lex, span_len)
        items[item_id] = ItemRecord(
            item_id=item_id,
            raw_title=title,
            tokens=tuple(vocab.encode(toks)),
            spans=tuple(SpanIdentifier(tuple(vocab.encode(s)), j + 1) for j, s in enumerate(spans)),
        )
    return Catalog(items=items, vocab=vocab, span_len=span_len, lexicon=lex)


def read_catalog_rows(path: str | Path) -> list[tuple[int, str]]:
    rows = []
    seen = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise DataError(f"{path}:{lineno}: invalid JSON ({e.msg})") from None
            if not isinstance(obj, dict) or "item_id" not in obj or "title" not in obj:
                raise DataError(f"{path}:{lineno}: expected object with item_id and title")
            item_id, title = obj["item_id"], obj["title"]
            if isinstance(item_id, bool) or not isinstance(item_id, int) or item_id < 0:
                raise DataError(f"{path}:{lineno}: item_id must be a non-negative integer")
            if not isinstance(title, str):
                raise DataError(f"{path}:{lineno}: title must be a string")
            if item_id in seen:
                raise DataError(f"{path}:{lineno}: duplicate item_id {item_id}")
            if not tokenize(title):
                raise EmptyTitle(f"{path}:{lineno}: title has no tokens")
            seen.add(item_id)
            rows.append((item_id, title))
    return rows


def ingest_catalog(
    path: str | Path,
    lexicon: Iterable[Sequence[str]] = (),
    span_len: int = 8,
) -> Catalog:
    return build_catalog(read_catalog_rows(path), lexicon, span_len)


def ingest_clicks(path: str | Path, catalog: Catalog | None = None) -> list[ClickEvent]:
    events = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 4:
                raise DataError(f"{path}:{lineno}: expected 4 tab-separated fields, got {len(parts)}")
            query, item_s, label_s, ts_s = parts
            try:
                item_id, ts = int(item_s), int(ts_s)
            except ValueError:
                raise DataError(f"{path}:{lineno}: item_id and timestamp must be integers") from None
            if label_s not in _LABELS_IN:
                raise DataError(f"{path}:{lineno}: label must be 'click' or 'expose', got {label_s!r}")
            if catalog is not None and item_id not in catalog.items:
                raise DataError(f"{path}:{lineno}: unknown item_id {item_id}")
            events.append(ClickEvent(query, item_id, _LABELS_IN[label_s], ts))
    return events


def write_clicks(path: str | Path, events: Iterable[ClickEvent]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in events:
            fh.write(f"{e.query}\t{e.item_id}\t{_LABELS_OUT[e.label]}\t{e.timestamp}\n")


def write_canonical_corpus(path: str | Path, catalog: Catalog) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for item_id in sorted(catalog.items):
            it = catalog.items[item_id]
            spans = [catalog.vocab.decode(s.tokens) for s in it.spans]
            fh.write(json.dumps({"item_id": item_id, "spans": spans}) + "\n")


def read_canonical_corpus(path: str | Path) -> dict[int, list[list[str]]]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                out[int(obj["item_id"])] = [list(s) for s in obj["spans"]]
            except (json.JSONDecodeError, KeyError, TypeError, ValueError):
                raise DataError(f"{path}:{lineno}: malformed corpus row") from None
    return out


def temporal_split(events: Sequence[ClickEvent], holdout: float = 0.2) -> tuple[list[ClickEvent], list[ClickEvent]]:
    """Split by timestamp: the last ``holdout`` fraction of events (by time) is held out."""
    order = sorted(range(len(events)), key=lambda i: (events[i].timestamp, i))
    cut = len(events) - int(round(holdout * len(events)))
    train = [events[i] for i in order[:cut]]
    test = [events[i] for i in order[cut:]]
    return train, test
