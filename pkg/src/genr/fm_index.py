"""Token-level FM-index over span identifiers.

The indexed text is ``span_1 SEP span_2 SEP ... span_k TERM`` where TERM=0 and
SEP=1 (the EOS/UNK vocabulary slots, which never occur inside identifiers), so
the alphabet is the vocabulary itself and every real token id is >= 2.

Two FM-indexes are kept: one over the text (counting, locating, the BWT you
would expect) and one over the reversed text. Backward search on the reversed
text extends a forward prefix to the right, which is what constrained decoding
needs: the candidate next tokens of a prefix are the symbols of the reversed
BWT inside the prefix's row range.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DataError

TERM = 0
SEP = 1
FIRST_REAL = 2

MAGIC = b"GFMI"
VERSION = 1
BLOCK = 64
NEG_INF = -math.inf


def suffix_array(text: np.ndarray) -> np.ndarray:
    """Suffix array by prefix doubling. ``text`` must end with a unique smallest symbol."""
    n = len(text)
    rank = text.astype(np.int64)
    if n == 1:
        return np.zeros(1, dtype=np.int64)
    k = 1
    while True:
        second = np.full(n, -1, dtype=np.int64)
        second[: n - k] = rank[k:]
        sa = np.lexsort((second, rank))
        r, s = rank[sa], second[sa]
        new = np.empty(n, dtype=np.int64)
        new[0] = 0
        np.cumsum((r[1:] != r[:-1]) | (s[1:] != s[:-1]), out=new[1:])
        rank = np.empty(n, dtype=np.int64)
        rank[sa] = new
        if new[-1] == n - 1:
            return sa
        k *= 2


class _Bwt:
    """BWT plus blocked rank checkpoints: ``cp[b, c]`` = count of c in bwt[0 : b*BLOCK]."""

    def __init__(self, bwt: np.ndarray, sigma: int, cp: np.ndarray | None = None):
        self.bwt = bwt.astype(np.int32)
        self.n = len(bwt)
        self.sigma = sigma
        if cp is None:
            nb = self.n // BLOCK + 1
            counts = np.zeros((nb, sigma), dtype=np.int32)
            np.add.at(counts, (np.arange(self.n) // BLOCK, self.bwt), 1)
            cp = np.zeros((nb + 1, sigma), dtype=np.int32)
            np.cumsum(counts, axis=0, out=cp[1:])
        self.cp = cp

    def occ(self, c: int, i: int) -> int:
        b = i // BLOCK
        return int(self.cp[b, c]) + int(np.count_nonzero(self.bwt[b * BLOCK : i] == c))

    def occ_all(self, i: int) -> np.ndarray:
        b = i // BLOCK
        return self.cp[b] + np.bincount(self.bwt[b * BLOCK : i], minlength=self.sigma)

    def occ_vec(self, c: np.ndarray, rows: np.ndarray) -> np.ndarray:
        b = rows // BLOCK
        idx = (b * BLOCK)[:, None] + np.arange(BLOCK)[None, :]
        inside = idx < rows[:, None]
        vals = self.bwt[np.minimum(idx, self.n - 1)]
        within = np.count_nonzero((vals == c[:, None]) & inside, axis=1)
        return self.cp[b, c] + within

    def range_counts(self, sp: int, ep: int) -> np.ndarray:
        if ep - sp <= 4 * BLOCK:
            return np.bincount(self.bwt[sp:ep], minlength=self.sigma)
        return self.occ_all(ep) - self.occ_all(sp)


@dataclass(frozen=True)
class SpanRef:
    item_id: int
    span_index: int


class FmIndex:
    """Immutable after construction; all queries are read-only."""

    def __init__(
        self,
        text: np.ndarray,
        sigma: int,
        span_starts: np.ndarray,
        span_items: np.ndarray,
        span_index: np.ndarray,
        sample_rate: int = 8,
    ):
        self.sigma = int(sigma)
        self.n = len(text)
        self.sample_rate = int(sample_rate)
        self.span_starts = span_starts.astype(np.int64)
        self.span_items = span_items.astype(np.int64)
        self.span_index = span_index.astype(np.int64)
        self.n_real = int(np.count_nonzero(text >= FIRST_REAL))

        counts = np.bincount(text, minlength=self.sigma).astype(np.int64)
        self.C = np.zeros(self.sigma + 1, dtype=np.int64)
        np.cumsum(counts, out=self.C[1:])

        sa = suffix_array(text)
        self.fwd = _Bwt(text[(sa - 1) % self.n], self.sigma)
        keep = sa % self.sample_rate == 0
        self.sample_rows = np.flatnonzero(keep).astype(np.int64)
        self.sample_pos = sa[keep].astype(np.int64)

        rtext = np.concatenate([text[:-1][::-1], [TERM]]).astype(np.int64)
        rsa = suffix_array(rtext)
        self.rev = _Bwt(rtext[(rsa - 1) % self.n], self.sigma)

    # -- construction -------------------------------------------------------

    @classmethod
    def build(
        cls,
        spans: Iterable[tuple[int, int, Sequence[int]]],
        vocab_size: int,
        sample_rate: int = 8,
    ) -> "FmIndex":
        """Build from ``(item_id, span_index, tokens)`` triples, in the given order."""
        parts: list[int] = []
        starts, items, idx = [], [], []
        for item_id, j, toks in spans:
            toks = list(toks)
            if not toks:
                raise DataError("empty span")
            if min(toks) < FIRST_REAL or max(toks) >= vocab_size:
                raise DataError(f"span token out of range for vocabulary of size {vocab_size}")
            if parts:
                parts.append(SEP)
            starts.append(len(parts))
            items.append(item_id)
            idx.append(j)
            parts.extend(toks)
        if not parts:
            raise DataError("cannot build an index over an empty corpus")
        parts.append(TERM)
        return cls(
            np.asarray(parts, dtype=np.int64),
            vocab_size,
            np.asarray(starts),
            np.asarray(items),
            np.asarray(idx),
            sample_rate,
        )

    @classmethod
    def from_identifiers(
        cls, identifiers: dict[int, list[Sequence[int]]], vocab_size: int, sample_rate: int = 8
    ) -> "FmIndex":
        triples = (
            (item_id, j + 1, toks)
            for item_id in sorted(identifiers)
            for j, toks in enumerate(identifiers[item_id])
        )
        return cls.build(triples, vocab_size, sample_rate)

    # -- basic properties ---------------------------------------------------

    @property
    def bwt(self) -> np.ndarray:
        return self.fwd.bwt

    @property
    def N(self) -> int:
        return self.n_real

    def occ(self, c: int, i: int) -> int:
        return self.fwd.occ(c, i)

    def _valid(self, pattern: Sequence[int]) -> bool:
        return all(FIRST_REAL <= c < self.sigma for c in pattern)

    # -- counting -----------------------------------------------------------

    def sa_range(self, pattern: Sequence[int]) -> tuple[int, int]:
        """Backward search on the forward index; returns the half-open SA row range."""
        if not self._valid(pattern):
            return 0, 0
        sp, ep = 0, self.n
        for c in reversed(pattern):
            sp = int(self.C[c]) + self.fwd.occ(c, sp)
            ep = int(self.C[c]) + self.fwd.occ(c, ep)
            if sp >= ep:
                return 0, 0
        return sp, ep

    def count(self, pattern: Sequence[int]) -> int:
        if len(pattern) == 0:
            return self.n_real
        sp, ep = self.sa_range(pattern)
        return ep - sp

    def fm_score(self, span: Sequence[int]) -> float:
        """Add-one smoothed log relative frequency; -inf for spans absent from the index."""
        c = self.count(span)
        if c == 0:
            return NEG_INF
        return math.log((c + 1) / (self.n_real + self.sigma))

    # -- right extension via the reversed text ------------------------------

    def prefix_range(self, prefix: Sequence[int], anchored: bool = False) -> tuple[int, int]:
        """Row range in the reversed index for ``prefix`` read left to right.

        With ``anchored`` the prefix must start at a span boundary.
        """
        if not self._valid(prefix):
            return 0, 0
        sp, ep = (0, int(self.C[FIRST_REAL])) if anchored else (0, self.n)
        for c in prefix:
            sp, ep = self.extend(sp, ep, c)
            if sp >= ep:
                return 0, 0
        return sp, ep

    def extend(self, sp: int, ep: int, c: int) -> tuple[int, int]:
        base = int(self.C[c])
        return base + self.rev.occ(c, sp), base + self.rev.occ(c, ep)

    def range_extensions(self, sp: int, ep: int) -> tuple[np.ndarray, bool]:
        """Counts of every next token for a reversed-index range, plus end_ok."""
        counts = self.rev.range_counts(sp, ep)
        end_ok = bool(counts[TERM] + counts[SEP] > 0)
        counts = counts.copy()
        counts[:FIRST_REAL] = 0
        return counts, end_ok

    def allowed_extensions(self, prefix: Sequence[int], anchored: bool = False) -> tuple[dict[int, int], bool]:
        """Map next-token -> count(prefix + token), and whether prefix can end a span."""
        if len(prefix) == 0 and not anchored:
            totals = np.diff(self.C)
            return {c: int(totals[c]) for c in range(FIRST_REAL, self.sigma) if totals[c] > 0}, False
        sp, ep = self.prefix_range(prefix, anchored)
        if sp >= ep:
            return {}, False
        counts, end_ok = self.range_extensions(sp, ep)
        if len(prefix) == 0:
            end_ok = False
        nz = np.flatnonzero(counts)
        return {int(c): int(counts[c]) for c in nz}, end_ok

    # -- locating -----------------------------------------------------------

    def _lf(self, rows: np.ndarray) -> np.ndarray:
        c = self.fwd.bwt[rows].astype(np.int64)
        return self.C[c] + self.fwd.occ_vec(c, rows)

    def locate(self, pattern: Sequence[int]) -> np.ndarray:
        """Sorted text positions where ``pattern`` starts."""
        if len(pattern) == 0:
            return np.empty(0, dtype=np.int64)
        sp, ep = self.sa_range(pattern)
        rows = np.arange(sp, ep, dtype=np.int64)
        steps = np.zeros(len(rows), dtype=np.int64)
        pos = np.full(len(rows), -1, dtype=np.int64)
        pending = np.arange(len(rows))
        while len(pending):
            r = rows[pending]
            k = np.searchsorted(self.sample_rows, r)
            k = np.minimum(k, len(self.sample_rows) - 1)
            hit = self.sample_rows[k] == r
            done = pending[hit]
            pos[done] = self.sample_pos[k[hit]] + steps[done]
            pending = pending[~hit]
            rows[pending] = self._lf(rows[pending])
            steps[pending] += 1
        return np.sort(pos)

    def doc_of(self, pos: int) -> SpanRef | None:
        """The span covering text position ``pos``, or None for a separator."""
        k = int(np.searchsorted(self.span_starts, pos, side="right")) - 1
        if k < 0:
            return None
        end = self.span_starts[k + 1] - 1 if k + 1 < len(self.span_starts) else self.n - 1
        if pos >= end:
            return None
        return SpanRef(int(self.span_items[k]), int(self.span_index[k]))

    def locate_items(self, span: Sequence[int]) -> set[int]:
        pos = self.locate(span)
        if len(pos) == 0:
            return set()
        k = np.searchsorted(self.span_starts, pos, side="right") - 1
        return {int(i) for i in np.unique(self.span_items[k])}

    # -- persistence --------------------------------------------------------

    def save(self, path: str | Path) -> None:
        arrays = [
            self.C,
            self.fwd.bwt,
            self.fwd.cp,
            self.rev.bwt,
            self.rev.cp,
            self.sample_rows,
            self.sample_pos,
            self.span_starts,
            self.span_items,
            self.span_index,
        ]
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<IQQQQQ", VERSION, self.sigma, self.n_real, self.n, self.sample_rate, BLOCK))
            for a in arrays:
                a = np.ascontiguousarray(a, dtype="<i8")
                fh.write(struct.pack("<QQ", a.ndim, a.shape[0]))
                if a.ndim == 2:
                    fh.write(struct.pack("<Q", a.shape[1]))
                fh.write(a.tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "FmIndex":
        data = Path(path).read_bytes()
        if data[:4] != MAGIC:
            raise DataError(f"{path}: not an FM-index snapshot (bad magic)")
        try:
            version, sigma, n_real, n, rate, block = struct.unpack_from("<IQQQQQ", data, 4)
            if version != VERSION:
                raise DataError(f"{path}: unsupported FM-index version {version}")
            if block != BLOCK:
                raise DataError(f"{path}: rank block size {block} unsupported")
            off = 4 + struct.calcsize("<IQQQQQ")
            arrays = []
            for _ in range(10):
                ndim, rows = struct.unpack_from("<QQ", data, off)
                off += 16
                shape: tuple[int, ...] = (rows,)
                if ndim == 2:
                    (cols,) = struct.unpack_from("<Q", data, off)
                    off += 8
                    shape = (rows, cols)
                size = int(np.prod(shape)) * 8
                if off + size > len(data):
                    raise DataError(f"{path}: truncated FM-index snapshot")
                arrays.append(np.frombuffer(data, dtype="<i8", count=size // 8, offset=off).reshape(shape).astype(np.int64))
                off += size
        except struct.error:
            raise DataError(f"{path}: truncated FM-index snapshot") from None
        if off != len(data):
            raise DataError(f"{path}: trailing bytes in FM-index snapshot")
        self = cls.__new__(cls)
        self.sigma, self.n_real, self.n, self.sample_rate = int(sigma), int(n_real), int(n), int(rate)
        (self.C, fbwt, fcp, rbwt, rcp, self.sample_rows, self.sample_pos,
         self.span_starts, self.span_items, self.span_index) = arrays
        self.fwd = _Bwt(fbwt, self.sigma, fcp.astype(np.int32))
        self.rev = _Bwt(rbwt, self.sigma, rcp.astype(np.int32))
        return self
