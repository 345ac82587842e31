import json
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from genr.config import load_config
from genr.fm_index import FIRST_REAL, FmIndex
from genr.synthetic import SyntheticConfig, generate, write

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

ROOT = Path(__file__).resolve().parents[1]

_ACCEPTANCE: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    return _ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


def naive_count(spans, pattern):
    """Occurrences of ``pattern`` inside any single span, by direct scan."""
    L = len(pattern)
    return sum(1 for s in spans for i in range(len(s) - L + 1) if tuple(s[i : i + L]) == tuple(pattern))


def naive_items(triples, pattern):
    L = len(pattern)
    return {
        item for item, _, s in triples if any(tuple(s[i : i + L]) == tuple(pattern) for i in range(len(s) - L + 1))
    }


def random_corpus(rng: np.random.Generator, n_items: int, V: int, max_spans: int = 4, max_len: int = 6):
    """(item_id, span_index, tokens) triples with tokens in [FIRST_REAL, V)."""
    triples = []
    for item in range(n_items):
        for j in range(int(rng.integers(1, max_spans + 1))):
            n = int(rng.integers(1, max_len + 1))
            triples.append((item, j + 1, tuple(int(t) for t in rng.integers(FIRST_REAL, V, size=n))))
    return triples


def index_of(triples, V):
    return FmIndex.build(triples, V)


@pytest.fixture()
def tiny_data(tmp_path):
    """A small synthetic dataset plus a matching key=value config."""
    data = generate(SyntheticConfig(n_items=60, n_queries=30, seed=3, noise_words=6))
    paths = write(data, tmp_path / "data")
    cfg_path = tmp_path / "tiny.json"
    cfg_path.write_text(
        json.dumps(
            {
                "catalog": str(paths["catalog"]),
                "clicks": str(paths["clicks"]),
                "lexicon": str(paths["lexicon"]),
                "artifacts": str(tmp_path / "artifacts"),
                "span_len": 4,
                "model": {"d": 8, "k": 2, "h": 16},
                "sft": {"lr": 0.01, "epochs": 2},
                "dpo": {"lr": 0.001, "epochs": 1},
                "decode": {"beam": 10, "lam": -1.0},
                "eval_ks": [5, 10],
            }
        )
    )
    return cfg_path


@pytest.fixture()
def tiny_config(tiny_data):
    return load_config(tiny_data)
