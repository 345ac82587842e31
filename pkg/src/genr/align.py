"""SFT and DPO training loops, and preference-pair construction from click logs."""

from __future__ import annotations

import csv
import json
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .corpus import CLICKED, EXPOSED, Catalog, ClickEvent, Vocabulary
from .errors import DataError
from .model import Example, ModelParams, grad_nll, logprob_and_grad, sequence_logprobs
from .rng import SplitMix64

log = logging.getLogger(__name__)

SFT_LR = 5e-5
DPO_LR = 6e-5
EXPOSED_VS_CLICKED = "exposed_vs_clicked"
RANDOM_VS_CLICKED = "random_vs_clicked"


@dataclass
class TrainConfig:
    lr: float = SFT_LR
    beta: float = 0.1
    batch_size: int = 32
    epochs: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")


class Adam:
    def __init__(self, params: ModelParams, lr: float, b1: float = 0.9, b2: float = 0.999, eps: float = 1e-8):
        self.lr, self.b1, self.b2, self.eps = lr, b1, b2, eps
        self.m = params.zeros_like()
        self.v = params.zeros_like()
        self.t = 0

    def step(self, params: ModelParams, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for name, p in params.blocks().items():
            g = grads[name]
            m, v = self.m[name], self.v[name]
            m *= self.b1
            m += (1.0 - self.b1) * g
            v *= self.b2
            v += (1.0 - self.b2) * g * g
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainLog:
    rows: list[tuple[int, int, float]] = field(default_factory=list)  # epoch, step, loss
    epoch_losses: list[float] = field(default_factory=list)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["epoch", "step", "loss"])
            for e, s, loss in self.rows:
                w.writerow([e, s, repr(float(loss))])


def _batches(n: int, size: int, rng: SplitMix64) -> list[list[int]]:
    order = list(range(n))
    rng.shuffle(order)
    return [order[i : i + size] for i in range(0, n, size)]


def mean_nll(params: ModelParams, samples: Sequence[Example], chunk: int = 1024) -> float:
    total = 0.0
    for i in range(0, len(samples), chunk):
        total -= sequence_logprobs(params, samples[i : i + chunk]).sum()
    return total / len(samples)


def train_sft(params: ModelParams, samples: Sequence[Example], config: TrainConfig) -> tuple[ModelParams, TrainLog]:
    """Adam on the mean identifier NLL. ``params`` is not modified.

    Row ``(0, 0, loss)`` of the log is the full-set loss before any update;
    ``epoch_losses[e]`` for e >= 1 is the sample-weighted mean batch loss of epoch e.
    """
    if len(samples) == 0:
        raise DataError("no SFT samples")
    params = params.copy()
    opt = Adam(params, config.lr)
    rng = SplitMix64(config.seed)
    tlog = TrainLog()
    initial = mean_nll(params, samples)
    tlog.rows.append((0, 0, initial))
    tlog.epoch_losses.append(initial)
    step = 0
    for epoch in range(1, config.epochs + 1):
        total = 0.0
        for idx in _batches(len(samples), config.batch_size, rng):
            loss, g = grad_nll(params, [samples[i] for i in idx])
            opt.step(params, g)
            step += 1
            total += loss * len(idx)
            tlog.rows.append((epoch, step, loss))
        tlog.epoch_losses.append(total / len(samples))
        log.info("sft epoch %d loss %.4f", epoch, tlog.epoch_losses[-1])
    return params, tlog


# -- preference pairs -----------------------------------------------------------

@dataclass(frozen=True)
class PreferencePair:
    query: str
    chosen: tuple[int, ...]
    rejected: tuple[int, ...]
    source: str


def build_preferences(
    clicks: Iterable[ClickEvent],
    catalog: Catalog,
    seed: int = 0,
    ratio: int = 1,
    task: str = "multi-span",
) -> list[PreferencePair]:
    """Span-level <rejected, chosen> pairs per query.

    For each distinct clicked item of a query, ``ratio * m`` pairs are drawn per
    source: an exposed-but-not-clicked item of the same query, and a uniformly
    random catalog item not clicked for the query. Chosen and rejected spans are
    drawn uniformly from their items' identifiers.
    """
    idents = catalog.identifiers(task)
    all_items = sorted(idents)
    clicked: dict[str, set[int]] = defaultdict(set)
    exposed: dict[str, set[int]] = defaultdict(set)
    for c in clicks:
        (clicked if c.label == CLICKED else exposed)[c.query].add(c.item_id)
    rng = SplitMix64(seed)
    pairs: list[PreferencePair] = []
    for query in sorted(clicked):
        pos = sorted(clicked[query])
        neg_exposed = sorted(exposed[query] - clicked[query])
        neg_random = [i for i in all_items if i not in clicked[query]]
        for item in pos:
            n_pairs = ratio * len(idents[item])
            for pool, source in ((neg_exposed, EXPOSED_VS_CLICKED), (neg_random, RANDOM_VS_CLICKED)):
                if not pool:
                    continue
                for _ in range(n_pairs):
                    y_w = rng.choice(idents[item])
                    y_l = rng.choice(idents[rng.choice(pool)])
                    if y_w == y_l:
                        continue
                    pairs.append(PreferencePair(query, tuple(y_w), tuple(y_l), source))
    return pairs


def write_pairs(path: str | Path, pairs: Iterable[PreferencePair], vocab: Vocabulary) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for p in pairs:
            row = {
                "query": p.query,
                "chosen": vocab.decode(p.chosen),
                "rejected": vocab.decode(p.rejected),
                "source": p.source,
            }
            fh.write(json.dumps(row) + "\n")


def read_pairs(path: str | Path, vocab: Vocabulary) -> list[PreferencePair]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                o = json.loads(line)
                out.append(
                    PreferencePair(o["query"], tuple(vocab.encode(o["chosen"])), tuple(vocab.encode(o["rejected"])), o["source"])
                )
            except (json.JSONDecodeError, KeyError, TypeError):
                raise DataError(f"{path}:{lineno}: malformed preference pair") from None
    return out


EncodedPair = tuple[Sequence[int], Sequence[int], Sequence[int]]  # (x, y_w, y_l)


def encode_pairs(pairs: Iterable[PreferencePair], vocab: Vocabulary) -> list[EncodedPair]:
    return [(vocab.encode_query(p.query), p.chosen, p.rejected) for p in pairs]


# -- DPO --------------------------------------------------------------------------

def _pair_logps(params: ModelParams, pairs: Sequence[EncodedPair], need_grad: bool = False, weights=None):
    batch = [(x, yw) for x, yw, _ in pairs] + [(x, yl) for x, _, yl in pairs]
    return logprob_and_grad(params, batch, weights=weights, need_grad=need_grad)


def dpo_loss_and_grad(
    policy: ModelParams,
    reference: ModelParams,
    pairs: Sequence[EncodedPair],
    beta: float,
    ref_logps: np.ndarray | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Mean of -log sigmoid(beta * (delta_w - delta_l)); gradient on ``policy`` only.

    ``ref_logps`` may carry precomputed reference log-probs laid out as
    ``[chosen..., rejected...]``.
    """
    B = len(pairs)
    if B == 0:
        raise ValueError("empty preference batch")
    if ref_logps is None:
        ref_logps, _ = _pair_logps(reference, pairs)
    pol, _ = _pair_logps(policy, pairs)
    delta = pol - ref_logps
    u = beta * (delta[:B] - delta[B:])
    loss = float(np.mean(np.logaddexp(0.0, -u)))
    # dloss/du = -sigmoid(-u) / B
    s = 0.5 * (1.0 - np.tanh(0.5 * u))
    w = np.concatenate([-s * beta / B, s * beta / B])
    _, g = _pair_logps(policy, pairs, need_grad=True, weights=w)
    return loss, g


def dpo_margins(policy: ModelParams, reference: ModelParams, pairs: Sequence[EncodedPair], beta: float) -> np.ndarray:
    """Per-pair sigmoid arguments beta * (delta_w - delta_l)."""
    B = len(pairs)
    pol, _ = _pair_logps(policy, pairs)
    ref, _ = _pair_logps(reference, pairs)
    delta = pol - ref
    return beta * (delta[:B] - delta[B:])


def preference_accuracy(params: ModelParams, pairs: Sequence[EncodedPair]) -> float:
    if not pairs:
        return math.nan
    lp, _ = _pair_logps(params, pairs)
    B = len(pairs)
    return float(np.mean(lp[:B] > lp[B:]))


def train_dpo(
    sft_params: ModelParams,
    pairs: Sequence[EncodedPair],
    config: TrainConfig,
    steps: int | None = None,
) -> tuple[ModelParams, TrainLog]:
    """Adam on the DPO loss against a frozen copy of ``sft_params``.

    Runs ``config.epochs`` passes, or exactly ``steps`` minibatch updates when given.
    Row ``(0, 0, loss)`` of the log is the full-set loss at initialization (ln 2).
    """
    if len(pairs) == 0:
        raise DataError("no preference pairs")
    reference = sft_params.copy()
    policy = sft_params.copy()
    opt = Adam(policy, config.lr)
    rng = SplitMix64(config.seed)
    ref_all, _ = _pair_logps(reference, pairs)
    B = len(pairs)
    tlog = TrainLog()
    init_loss, _ = dpo_loss_and_grad(policy, reference, pairs, config.beta, ref_logps=ref_all)
    tlog.rows.append((0, 0, init_loss))
    tlog.epoch_losses.append(init_loss)
    step, epoch = 0, 0
    total = steps if steps is not None else config.epochs * math.ceil(B / config.batch_size)
    while step < total:
        epoch += 1
        losses, sizes = [], []
        for idx in _batches(B, config.batch_size, rng):
            if step >= total:
                break
            sub = [pairs[i] for i in idx]
            ref = np.concatenate([ref_all[idx], ref_all[[B + i for i in idx]]])
            loss, g = dpo_loss_and_grad(policy, reference, sub, config.beta, ref_logps=ref)
            opt.step(policy, g)
            step += 1
            losses.append(loss)
            sizes.append(len(idx))
            tlog.rows.append((epoch, step, loss))
        tlog.epoch_losses.append(float(np.average(losses, weights=sizes)))
        log.info("dpo epoch %d loss %.4f", epoch, tlog.epoch_losses[-1])
    return policy, tlog
