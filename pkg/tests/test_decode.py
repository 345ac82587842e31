import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from genr import model as M
from genr.corpus import Vocabulary
from genr.decode import (
    DecodeConfig,
    ScoredSpan,
    constrained_beam_search,
    retrieve,
    score_spans,
    search,
)
from genr.errors import InvariantError
from genr.fm_index import FmIndex

from conftest import random_corpus

V5 = Vocabulary(["red", "shoe", "hat", "blue", "sock", "wool", "cap"])
FIVE = [["red", "shoe"], ["red", "hat"], ["blue", "sock"], ["wool", "sock", "cap"], ["blue", "cap"]]


def five_index():
    return FmIndex.build([(i, 1, V5.encode(s)) for i, s in enumerate(FIVE)], len(V5))


def test_red_corpus_soundness():
    v = Vocabulary(["red", "shoe", "hat"])
    index = FmIndex.build([(1, 1, v.encode(["red", "shoe"])), (2, 1, v.encode(["red", "hat"]))], len(v))
    for seed in range(5):
        p = M.init_params(len(v), d=4, k=2, h=5, seed=seed, scale=2.0)
        out = constrained_beam_search(p, index, v.encode(["red"]), DecodeConfig(beam=2))
        assert {tuple(v.decode(t)) for t, _ in out} <= {("red", "shoe"), ("red", "hat")}


def test_greedy_uniform_model_picks_least_span():
    index = five_index()
    zero = M.init_params(len(V5), d=4, k=2, h=5, scale=0.0)
    (out,) = constrained_beam_search(zero, index, [2], DecodeConfig(beam=1))
    assert out[0] == min(tuple(V5.encode(s)) for s in FIVE)


@pytest.mark.parametrize("seed", range(4))
def test_wide_beam_returns_every_span(seed):
    index = five_index()
    p = M.init_params(len(V5), d=4, k=2, h=5, seed=seed, scale=1.0)
    q = V5.encode(["red", "cap"])
    out = constrained_beam_search(p, index, q, DecodeConfig(beam=5))
    assert sorted(t for t, _ in out) == sorted(tuple(V5.encode(s)) for s in FIVE)
    for tokens, lm in out:
        assert lm == pytest.approx(M.sequence_logprob(p, q, tokens), abs=1e-10)
    expected = sorted(out, key=lambda x: (-x[1], x[0]))
    assert out == expected


def test_max_len_and_filters():
    index = five_index()
    p = M.init_params(len(V5), d=4, k=2, h=5, seed=1)
    out = constrained_beam_search(p, index, [2], DecodeConfig(beam=5, max_len=2))
    assert all(len(t) == 2 for t, _ in out)
    assert len(out) == 4
    # top_k=1 reduces search to a single greedy path
    assert len(constrained_beam_search(p, index, [2], DecodeConfig(beam=5, top_k=1))) == 1
    tiny_p = constrained_beam_search(p, index, [2], DecodeConfig(beam=5, top_p=1e-6))
    assert len(tiny_p) == 1


def test_decode_config_validation():
    with pytest.raises(ValueError):
        DecodeConfig(beam=0)
    with pytest.raises(ValueError):
        DecodeConfig(top_p=0.0)
    with pytest.raises(ValueError):
        DecodeConfig(top_p=1.5)
    with pytest.raises(ValueError):
        DecodeConfig(aggregation="mean")


def test_score_spans_examples():
    v = Vocabulary(["a", "b", "c"])
    a, b, c = v.encode(["a", "b", "c"])
    index = FmIndex.build([(0, 1, [a, b]), (1, 1, [a, c]), (2, 1, [a, b])], len(v))
    N, Vs = index.N, index.sigma
    assert (N, Vs) == (6, 5)
    beams = [((a, b), -1.0), ((a, c), -2.0), ((a,), -0.5)]
    lam = 0.7
    scored = score_spans(beams, index, lam)
    counts = {(a, b): 2, (a, c): 1, (a,): 3}
    for s, (tokens, lm) in zip(scored, beams):
        assert s.s == pytest.approx(lm + lam * math.log((counts[tokens] + 1) / (N + Vs)), abs=1e-12)
    with pytest.raises(InvariantError):
        score_spans([((b, a), -1.0)], index, lam)


def test_score_spans_lambda_effects():
    v = Vocabulary(["a", "b"])
    a, b = v.encode(["a", "b"])
    index = FmIndex.build([(i, 1, [a, a]) for i in range(5)] + [(9, 1, [b, b])], len(v))
    beams = [((b, b), -3.0), ((a, a), -3.0)]
    ranked = sorted(score_spans(beams, index, 0.5), key=lambda s: -s.s)
    assert ranked[0].tokens == (a, a)
    mixed = [((b, b), -1.0), ((a, a), -3.0)]
    zero = sorted(score_spans(mixed, index, 0.0), key=lambda s: -s.s)
    assert [s.tokens for s in zero] == [(b, b), (a, a)]


def test_retrieve_ties_and_support():
    v = Vocabulary(["a", "b", "c"])
    a, b, c = v.encode(["a", "b", "c"])
    index = FmIndex.build([(2, 1, [a, b]), (1, 1, [a, b])], len(v))
    res = retrieve([ScoredSpan((a, b), -1.0, 0.0, -1.0)], index, K=10)
    assert res.item_ids == [1, 2]
    assert res.items[0].score == res.items[1].score

    index = FmIndex.build([(5, 1, [a, b]), (5, 2, [c, c]), (3, 1, [a, b])], len(v))
    spans = [ScoredSpan((a, b), -1.0, 0.0, -1.0), ScoredSpan((c, c), -1.0, 0.0, -1.0)]
    res = retrieve(spans, index)
    assert res.item_ids == [5, 3]
    assert res.items[0].support == [0, 1]
    assert retrieve([], index).items == []
    assert retrieve(spans, index, K=1).item_ids == [5]


@pytest.mark.parametrize("agg", ["logsumexp", "max", "sum"])
def test_end_to_end_matches_brute_force(agg):
    rng = np.random.default_rng(7)
    V = 9
    triples = random_corpus(rng, 12, V, max_spans=3, max_len=4)
    index = FmIndex.build(triples, V)
    p = M.init_params(V, d=4, k=2, h=6, seed=3, scale=1.0)
    cfg = DecodeConfig(beam=6, lam=0.5, aggregation=agg)
    q = [3, 4]
    result = search(p, index, q, cfg, K=5)
    beams = constrained_beam_search(p, index, q, cfg)
    s = {t: lm + 0.5 * index.fm_score(t) for t, lm in beams}
    scores = {}
    for item in {i for i, _, _ in triples}:
        mine = [s[t] for t in s if any(t == tuple(sp[j : j + len(t)]) for i, _, sp in triples if i == item for j in range(len(sp)))]
        if not mine:
            continue
        if agg == "max":
            scores[item] = max(mine)
        elif agg == "sum":
            scores[item] = math.fsum(mine)
        else:
            scores[item] = math.log(math.fsum(math.exp(x) for x in mine))
    oracle = sorted(scores, key=lambda i: (-scores[i], i))[:5]
    assert result.item_ids == oracle
    for it in result.items:
        assert it.score == pytest.approx(scores[it.item_id], abs=1e-9)


@given(st.integers(0, 10_000), st.integers(1, 6), st.sampled_from([None, 1, 3]), st.sampled_from([1.0, 0.9, 0.5]))
def test_soundness_and_verifiability(seed, beam, top_k, top_p):
    rng = np.random.default_rng(seed)
    V = int(rng.integers(4, 12))
    triples = random_corpus(rng, int(rng.integers(1, 10)), V)
    index = FmIndex.build(triples, V)
    p = M.init_params(V, d=4, k=2, h=5, seed=seed, scale=float(rng.uniform(0, 3)))
    res = search(p, index, [int(rng.integers(1, V))], DecodeConfig(beam=beam, top_k=top_k, top_p=top_p))
    assert res.spans
    for sp in res.spans:
        assert index.count(sp.tokens) > 0
        assert any(tuple(t) == sp.tokens for _, _, t in triples)  # a whole identifier
    for it in res.items:
        for j in it.support:
            assert it.item_id in index.locate_items(res.spans[j].tokens)
    assert all(a.score >= b.score for a, b in zip(res.items, res.items[1:]))
