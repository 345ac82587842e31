"""Fixed-window conditional language model with exact hand-written gradients.

    q      = tanh(W_q @ mean(E[x]))
    ctx_j  = [q, E[i_{j-k}], ..., E[i_{j-1}]]      (left-padded with E[EOS])
    h_j    = tanh(ctx_j @ H + b_h)
    logits = h_j @ O + b_o

Every identifier is scored with a terminal EOS, so an identifier of length l
contributes l + 1 log-probability terms.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from .corpus import EOS
from .errors import DataError, EmptyQuery
from .rng import SplitMix64

MAGIC = b"GPM1"
VERSION = 1
BLOCKS = ("E", "W_q", "H", "b_h", "O", "b_o")

Example = tuple[Sequence[int], Sequence[int]]  # (query ids, target ids)


@dataclass
class ModelParams:
    E: np.ndarray  # V x d
    W_q: np.ndarray  # d x d
    H: np.ndarray  # (k+1)d x h
    b_h: np.ndarray  # h
    O: np.ndarray  # h x V
    b_o: np.ndarray  # V
    k: int = 3

    @property
    def V(self) -> int:
        return self.E.shape[0]

    @property
    def d(self) -> int:
        return self.E.shape[1]

    @property
    def h(self) -> int:
        return self.H.shape[1]

    def blocks(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in BLOCKS}

    def copy(self) -> "ModelParams":
        return ModelParams(**{n: a.copy() for n, a in self.blocks().items()}, k=self.k)

    def zeros_like(self) -> dict[str, np.ndarray]:
        return {n: np.zeros_like(a) for n, a in self.blocks().items()}


def init_params(V: int, d: int = 32, k: int = 3, h: int = 64, seed: int = 0, scale: float = 0.1) -> ModelParams:
    """Uniform in [-scale, scale] from SplitMix64, filled block by block in row-major order.

    ``scale=0`` gives the all-zero model (uniform next-token distribution).
    """
    rng = SplitMix64(seed)
    shapes = {"E": (V, d), "W_q": (d, d), "H": ((k + 1) * d, h), "b_h": (h,), "O": (h, V), "b_o": (V,)}
    arrays = {}
    for name in BLOCKS:
        shape = shapes[name]
        u = rng.random_array(int(np.prod(shape))).reshape(shape)
        arrays[name] = (2.0 * u - 1.0) * scale
    return ModelParams(**arrays, k=k)


def _logsumexp(z: np.ndarray) -> np.ndarray:
    m = z.max(axis=-1, keepdims=True)
    return (m + np.log(np.exp(z - m).sum(axis=-1, keepdims=True)))[..., 0]


def log_softmax(z: np.ndarray) -> np.ndarray:
    return z - _logsumexp(z)[..., None]


def encode_query(params: ModelParams, x: Sequence[int]) -> np.ndarray:
    if len(x) == 0:
        raise EmptyQuery("cannot encode an empty query")
    m = params.E[np.asarray(x)].mean(axis=0)
    return np.tanh(params.W_q @ m)


def _context(prefix: Sequence[int], k: int) -> list[int]:
    ctx = [EOS] * k + list(prefix)
    return ctx[len(ctx) - k :]


def next_logits(params: ModelParams, query_vec: np.ndarray, prefix: Sequence[int]) -> np.ndarray:
    return next_logits_batch(params, query_vec, [prefix])[0]


def next_logprobs(params: ModelParams, query_vec: np.ndarray, prefix: Sequence[int]) -> np.ndarray:
    return log_softmax(next_logits(params, query_vec, prefix))


def next_logits_batch(params: ModelParams, query_vec: np.ndarray, prefixes: Sequence[Sequence[int]]) -> np.ndarray:
    """Logits for several prefixes of the same query, shape (len(prefixes), V)."""
    ctx = np.array([_context(p, params.k) for p in prefixes], dtype=np.int64).reshape(len(prefixes), params.k)
    X = np.concatenate(
        [np.broadcast_to(query_vec, (len(prefixes), params.d)), params.E[ctx].reshape(len(prefixes), -1)], axis=1
    )
    Z = np.tanh(X @ params.H + params.b_h)
    return Z @ params.O + params.b_o


def _steps(batch: Sequence[Example], k: int):
    rows, ctxs, ys = [], [], []
    for s, (_, target) in enumerate(batch):
        full = [EOS] * k + list(target) + [EOS]
        for j in range(len(target) + 1):
            rows.append(s)
            ctxs.append(full[j : j + k])
            ys.append(full[j + k])
    return np.asarray(rows), np.asarray(ctxs, dtype=np.int64).reshape(len(rows), k), np.asarray(ys)


def logprob_and_grad(
    params: ModelParams,
    batch: Sequence[Example],
    weights: np.ndarray | None = None,
    need_grad: bool = True,
) -> tuple[np.ndarray, dict[str, np.ndarray] | None]:
    """Per-sequence log-probabilities and the gradient of ``sum_s weights[s] * logp[s]``."""
    S = len(batch)
    V, d, k = params.V, params.d, params.k
    q_tok = np.concatenate([np.asarray(x, dtype=np.int64) for x, _ in batch])
    q_len = np.array([len(x) for x, _ in batch])
    if np.any(q_len == 0):
        raise EmptyQuery("cannot encode an empty query")
    q_row = np.repeat(np.arange(S), q_len)

    M = np.zeros((S, d))
    np.add.at(M, q_row, params.E[q_tok])
    M /= q_len[:, None]
    Q = np.tanh(M @ params.W_q.T)

    rows, ctx, ys = _steps(batch, k)
    T = len(rows)
    X = np.concatenate([Q[rows], params.E[ctx].reshape(T, k * d)], axis=1)
    Z = np.tanh(X @ params.H + params.b_h)
    L = Z @ params.O + params.b_o
    lse = _logsumexp(L)
    tok_lp = L[np.arange(T), ys] - lse
    seq_lp = np.bincount(rows, weights=tok_lp, minlength=S)
    if not need_grad:
        return seq_lp, None

    w = np.ones(S) if weights is None else np.asarray(weights, dtype=np.float64)
    wt = w[rows]
    # d(sum w * logp)/dL = w * (onehot - softmax)
    dL = -np.exp(L - lse[:, None]) * wt[:, None]
    dL[np.arange(T), ys] += wt
    g = params.zeros_like()
    g["O"] = Z.T @ dL
    g["b_o"] = dL.sum(axis=0)
    dZp = (dL @ params.O.T) * (1.0 - Z * Z)
    g["H"] = X.T @ dZp
    g["b_h"] = dZp.sum(axis=0)
    dX = dZp @ params.H.T
    dQ = np.zeros((S, d))
    np.add.at(dQ, rows, dX[:, :d])
    np.add.at(g["E"], ctx.reshape(-1), dX[:, d:].reshape(T * k, d))
    dA = dQ * (1.0 - Q * Q)
    g["W_q"] = dA.T @ M
    dM = dA @ params.W_q
    np.add.at(g["E"], q_tok, (dM / q_len[:, None])[q_row])
    return seq_lp, g


def sequence_logprob(params: ModelParams, x: Sequence[int], target: Sequence[int]) -> float:
    lp, _ = logprob_and_grad(params, [(x, target)], need_grad=False)
    return float(lp[0])


def sequence_logprobs(params: ModelParams, batch: Sequence[Example]) -> np.ndarray:
    lp, _ = logprob_and_grad(params, batch, need_grad=False)
    return lp


def grad_nll(params: ModelParams, batch: Sequence[Example]) -> tuple[float, dict[str, np.ndarray]]:
    """Mean per-sequence negative log-likelihood and its gradient."""
    if len(batch) == 0:
        raise ValueError("empty batch")
    n = len(batch)
    lp, g = logprob_and_grad(params, batch, weights=np.full(n, -1.0 / n))
    return float(-lp.mean()), g


# -- snapshots ----------------------------------------------------------------

def to_bytes(params: ModelParams) -> bytes:
    body = bytearray(MAGIC)
    body += struct.pack("<IIIII", VERSION, params.V, params.d, params.k, params.h)
    for name in BLOCKS:
        body += np.ascontiguousarray(getattr(params, name), dtype="<f8").tobytes()
    body += hashlib.sha256(body).digest()
    return bytes(body)


def from_bytes(data: bytes, source: str = "<bytes>") -> ModelParams:
    if len(data) < 4 + 20 + 32 or data[:4] != MAGIC:
        raise DataError(f"{source}: not a model snapshot")
    body, digest = data[:-32], data[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise DataError(f"{source}: checksum mismatch (corrupt or truncated model snapshot)")
    version, V, d, k, h = struct.unpack_from("<IIIII", body, 4)
    if version != VERSION:
        raise DataError(f"{source}: unsupported model version {version}")
    shapes = {"E": (V, d), "W_q": (d, d), "H": ((k + 1) * d, h), "b_h": (h,), "O": (h, V), "b_o": (V,)}
    off = 24
    arrays = {}
    for name in BLOCKS:
        cnt = int(np.prod(shapes[name]))
        arrays[name] = np.frombuffer(body, dtype="<f8", count=cnt, offset=off).reshape(shapes[name]).astype(np.float64)
        off += cnt * 8
    if off != len(body):
        raise DataError(f"{source}: size does not match declared dimensions")
    return ModelParams(**arrays, k=k)


def save(params: ModelParams, path: str | Path) -> None:
    Path(path).write_bytes(to_bytes(params))


def load(path: str | Path) -> ModelParams:
    return from_bytes(Path(path).read_bytes(), str(path))


def params_equal(a: ModelParams, b: ModelParams) -> bool:
    return a.k == b.k and all(np.array_equal(getattr(a, f.name), getattr(b, f.name)) for f in fields(a) if f.name != "k")
