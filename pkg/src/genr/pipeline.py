"""Pipeline stages and their on-disk artifacts.

Every artifact has a ``<name>.meta.json`` sidecar holding the stage hash, which
chains the relevant config section, input file digests and the hashes of the
upstream artifacts. A stage recomputes the hash it expects for each input
artifact and refuses stale or foreign ones.
"""

from __future__ import annotations

import dataclasses
import json
import logging
from pathlib import Path
from typing import Any

from . import model as M
from .align import (
    TrainLog,
    build_preferences,
    encode_pairs,
    preference_accuracy,
    read_pairs,
    train_dpo,
    train_sft,
    write_pairs,
)
from .config import PipelineConfig, digest, file_digest
from .corpus import (
    Catalog,
    ItemRecord,
    SpanIdentifier,
    Vocabulary,
    expand_samples,
    ingest_catalog,
    ingest_clicks,
    load_lexicon,
    temporal_split,
    write_canonical_corpus,
)
from .decode import RetrievalResult, search
from .errors import DataError
from .evaluate import (
    EvalReport,
    beam_sweep,
    distribution_csv,
    eval_queries,
    query_distribution,
    run_eval,
    sweep_csv,
)
from .fm_index import FmIndex

log = logging.getLogger(__name__)

CATALOG_STATE = "catalog_state.json"
CORPUS = "corpus.jsonl"
INDEX = "index.gfmi"
SFT_MODEL = "model_sft.gpm"
SFT_LOG = "sft_log.csv"
PREFS = "prefs.jsonl"
PREFS_HELDOUT = "prefs_heldout.jsonl"
DPO_MODEL = "model_dpo.gpm"
DPO_LOG = "dpo_log.csv"
REPORT_CSV = "report.csv"
REPORT_JSON = "report.json"
SWEEP_CSV = "beam_sweep.csv"
DIST_CSV = "query_distribution.csv"


# -- stage hashes ---------------------------------------------------------------

def _require_file(path: str | Path, what: str) -> Path:
    p = Path(path)
    if not p.exists():
        raise DataError(f"missing {what}: {p}")
    return p


def corpus_hash(cfg: PipelineConfig) -> str:
    lex = file_digest(cfg.lexicon) if Path(cfg.lexicon).exists() else None
    return digest(
        {"stage": "corpus", "catalog": file_digest(_require_file(cfg.catalog, "catalog file")),
         "lexicon": lex, "span_len": cfg.span_len}
    )


def index_hash(cfg: PipelineConfig) -> str:
    return digest({"stage": "index", "corpus": corpus_hash(cfg), "task": cfg.task, "sample_rate": cfg.sample_rate})


def _clicks_digest(cfg: PipelineConfig) -> str:
    return file_digest(_require_file(cfg.clicks, "clicks file"))


def sft_hash(cfg: PipelineConfig) -> str:
    return digest(
        {"stage": "sft", "corpus": corpus_hash(cfg), "clicks": _clicks_digest(cfg), "task": cfg.task,
         "holdout": cfg.holdout, "model": dataclasses.asdict(cfg.model), "sft": dataclasses.asdict(cfg.sft),
         "seed": cfg.seed}
    )


def prefs_hash(cfg: PipelineConfig) -> str:
    return digest(
        {"stage": "prefs", "corpus": corpus_hash(cfg), "clicks": _clicks_digest(cfg), "task": cfg.task,
         "holdout": cfg.holdout, "ratio": cfg.pref_ratio, "seed": cfg.seed}
    )


def dpo_hash(cfg: PipelineConfig) -> str:
    return digest({"stage": "dpo", "sft": sft_hash(cfg), "prefs": prefs_hash(cfg), "dpo": dataclasses.asdict(cfg.dpo)})


def _write_meta(path: Path, stage: str, stage_hash: str, extra: dict | None = None) -> None:
    meta = {"artifact": path.name, "stage": stage, "hash": stage_hash, **(extra or {})}
    Path(str(path) + ".meta.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")


def _check(path: Path, what: str, expected: str, produced_by: str) -> Path:
    if not path.exists():
        raise DataError(f"missing {what} artifact {path}; run `{produced_by}` first")
    meta_path = Path(str(path) + ".meta.json")
    if not meta_path.exists():
        raise DataError(f"{what} artifact {path} has no metadata sidecar; rerun `{produced_by}`")
    got = json.loads(meta_path.read_text()).get("hash")
    if got != expected:
        raise DataError(
            f"{what} artifact {path} was built from a different config or input "
            f"(hash {got}, expected {expected}); rerun `{produced_by}`"
        )
    return path


# -- catalog state --------------------------------------------------------------

def save_catalog_state(path: Path, catalog: Catalog) -> None:
    state = {
        "span_len": catalog.span_len,
        "vocab": catalog.vocab.itos,
        "lexicon": sorted(" ".join(p) for p in catalog.lexicon),
        "items": [
            {"item_id": i, "title": it.raw_title, "tokens": list(it.tokens), "spans": [list(s.tokens) for s in it.spans]}
            for i, it in sorted(catalog.items.items())
        ],
    }
    path.write_text(json.dumps(state, separators=(",", ":")) + "\n", encoding="utf-8")


def load_catalog_state(path: Path) -> Catalog:
    state = json.loads(path.read_text(encoding="utf-8"))
    vocab = Vocabulary.__new__(Vocabulary)
    vocab.itos = list(state["vocab"])
    vocab.stoi = {t: i for i, t in enumerate(vocab.itos)}
    items = {}
    for row in state["items"]:
        spans = tuple(SpanIdentifier(tuple(s), j + 1) for j, s in enumerate(row["spans"]))
        items[row["item_id"]] = ItemRecord(row["item_id"], row["title"], tuple(row["tokens"]), spans)
    lex = frozenset(tuple(p.split()) for p in state["lexicon"])
    return Catalog(items=items, vocab=vocab, span_len=state["span_len"], lexicon=lex)


# -- stages ---------------------------------------------------------------------

class Pipeline:
    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.dir = cfg.artifacts_dir

    def path(self, name: str) -> Path:
        return self.dir / name

    # build-corpus
    def build_corpus(self) -> dict[str, Any]:
        cfg = self.cfg
        _require_file(cfg.catalog, "catalog file")
        lexicon = load_lexicon(cfg.lexicon) if Path(cfg.lexicon).exists() else frozenset()
        catalog = ingest_catalog(cfg.catalog, lexicon, cfg.span_len)
        self.dir.mkdir(parents=True, exist_ok=True)
        h = corpus_hash(cfg)
        save_catalog_state(self.path(CATALOG_STATE), catalog)
        write_canonical_corpus(self.path(CORPUS), catalog)
        _write_meta(self.path(CATALOG_STATE), "build-corpus", h)
        _write_meta(self.path(CORPUS), "build-corpus", h)
        ms = [it.m for it in catalog.items.values()]
        return {"items": len(catalog), "vocab": len(catalog.vocab), "mean_spans": sum(ms) / len(ms), "hash": h}

    def catalog(self) -> Catalog:
        p = _check(self.path(CATALOG_STATE), "corpus", corpus_hash(self.cfg), "build-corpus")
        return load_catalog_state(p)

    def clicks(self, catalog: Catalog):
        events = ingest_clicks(_require_file(self.cfg.clicks, "clicks file"), catalog)
        return temporal_split(events, self.cfg.holdout)

    # build-index
    def build_index(self) -> dict[str, Any]:
        catalog = self.catalog()
        index = FmIndex.from_identifiers(catalog.identifiers(self.cfg.task), len(catalog.vocab), self.cfg.sample_rate)
        h = index_hash(self.cfg)
        index.save(self.path(INDEX))
        _write_meta(self.path(INDEX), "build-index", h, {"task": self.cfg.task})
        return {"text_len": index.n, "real_tokens": index.N, "spans": len(index.span_starts), "hash": h}

    def index(self) -> FmIndex:
        return FmIndex.load(_check(self.path(INDEX), "index", index_hash(self.cfg), "build-index"))

    # train-sft
    def train_sft(self) -> dict[str, Any]:
        cfg = self.cfg
        catalog = self.catalog()
        train, _ = self.clicks(catalog)
        samples = [(catalog.vocab.encode_query(q), s) for q, s in expand_samples(train, catalog, cfg.task)]
        init = M.init_params(len(catalog.vocab), cfg.model.d, cfg.model.k, cfg.model.h, cfg.seed, cfg.model.init_scale)
        params, tlog = train_sft(init, samples, cfg.sft)
        h = sft_hash(cfg)
        M.save(params, self.path(SFT_MODEL))
        tlog.write_csv(self.path(SFT_LOG))
        _write_meta(self.path(SFT_MODEL), "train-sft", h)
        return {"samples": len(samples), "steps": len(tlog.rows) - 1, "loss_initial": tlog.epoch_losses[0],
                "loss_final": tlog.epoch_losses[-1], "hash": h}

    # build-prefs
    def build_prefs(self) -> dict[str, Any]:
        cfg = self.cfg
        catalog = self.catalog()
        train, test = self.clicks(catalog)
        pairs = build_preferences(train, catalog, cfg.seed, cfg.pref_ratio, cfg.task)
        held = build_preferences(test, catalog, cfg.seed + 1, cfg.pref_ratio, cfg.task)
        h = prefs_hash(cfg)
        write_pairs(self.path(PREFS), pairs, catalog.vocab)
        write_pairs(self.path(PREFS_HELDOUT), held, catalog.vocab)
        _write_meta(self.path(PREFS), "build-prefs", h)
        _write_meta(self.path(PREFS_HELDOUT), "build-prefs", h)
        return {"pairs": len(pairs), "heldout_pairs": len(held), "hash": h}

    def pairs(self, catalog: Catalog, heldout: bool = False):
        name = PREFS_HELDOUT if heldout else PREFS
        p = _check(self.path(name), "preference", prefs_hash(self.cfg), "build-prefs")
        return encode_pairs(read_pairs(p, catalog.vocab), catalog.vocab)

    # train-dpo
    def train_dpo(self) -> dict[str, Any]:
        catalog = self.catalog()
        sft = self.load_model("sft")
        pairs = self.pairs(catalog)
        held = self.pairs(catalog, heldout=True)
        params, tlog = train_dpo(sft, pairs, self.cfg.dpo)
        h = dpo_hash(self.cfg)
        M.save(params, self.path(DPO_MODEL))
        tlog.write_csv(self.path(DPO_LOG))
        _write_meta(self.path(DPO_MODEL), "train-dpo", h)
        return {
            "pairs": len(pairs),
            "steps": len(tlog.rows) - 1,
            "loss_initial": tlog.epoch_losses[0],
            "loss_final": tlog.epoch_losses[-1],
            "heldout_acc_sft": preference_accuracy(sft, held),
            "heldout_acc_dpo": preference_accuracy(params, held),
            "hash": h,
        }

    def load_model(self, which: str = "auto") -> M.ModelParams:
        if which == "auto":
            which = "dpo" if self.path(DPO_MODEL).exists() else "sft"
        if which == "sft":
            return M.load(_check(self.path(SFT_MODEL), "SFT model", sft_hash(self.cfg), "train-sft"))
        if which == "dpo":
            return M.load(_check(self.path(DPO_MODEL), "DPO model", dpo_hash(self.cfg), "train-dpo"))
        raise ValueError(f"unknown model {which!r}")

    # decode
    def retriever(self, which: str = "auto") -> "Retriever":
        index = self.index()
        catalog = self.catalog()
        return Retriever(self.load_model(which), index, catalog.vocab, self.cfg)

    # eval
    def evaluate(self, which: str = "auto", sweep: list[int] | None = None, details: bool = False) -> dict[str, Any]:
        cfg = self.cfg
        index = self.index()
        catalog = self.catalog()
        params = self.load_model(which)
        _, test = self.clicks(catalog)
        queries = eval_queries(test)
        dc = cfg.decode_config()
        report = run_eval(params, index, queries, catalog.vocab, dc, cfg.eval_ks, details)
        report.config = {"decode": dataclasses.asdict(dc), "task": cfg.task, "span_len": cfg.span_len,
                         "model": which, "seed": cfg.seed}
        self.path(REPORT_CSV).write_text(report.to_csv())
        self.path(REPORT_JSON).write_text(report.to_json() + "\n")
        all_clicks = ingest_clicks(cfg.clicks, catalog)
        self.path(DIST_CSV).write_text(distribution_csv(query_distribution(all_clicks)))
        out = {"queries": len(queries), **{f"recall@{k}": report.recall(k) for k in cfg.eval_ks}}
        if sweep:
            sw = beam_sweep(params, index, queries, catalog.vocab, dc, sweep, cfg.eval_ks)
            self.path(SWEEP_CSV).write_text(sweep_csv(sw))
            out["sweep"] = {b: {f"recall@{k}": r.recall(k) for k in cfg.eval_ks} for b, r in sw.items()}
        return out

    def report(self) -> EvalReport:
        obj = json.loads(self.path(REPORT_JSON).read_text())
        rows = [(r["bucket"], r["K"], r["recall"], r["n_queries"]) for r in obj["recall"]]
        return EvalReport(obj["ks"], rows, obj["config"], obj["per_query"])


class Retriever:
    """Loaded, read-only model + index + vocabulary; safe to share across threads."""

    def __init__(self, params: M.ModelParams, index: FmIndex, vocab: Vocabulary, cfg: PipelineConfig):
        self.params = params
        self.index = index
        self.vocab = vocab
        self.cfg = cfg

    def search(self, query: str, k: int | None = None, beam: int | None = None) -> RetrievalResult:
        dc = self.cfg.decode_config()
        if beam is not None:
            dc = dataclasses.replace(dc, beam=beam)
        return search(self.params, self.index, self.vocab.encode_query(query), dc, K=k)
