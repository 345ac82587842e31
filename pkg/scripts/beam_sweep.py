"""Recall@K against beam size, optionally for several FM-score weights.

Expects a trained artifacts directory (run the CLI stages or run_ablation.py
first). Writes one CSV row per (lambda, beam, bucket, K).

    python scripts/beam_sweep.py --data runs/ablation/data_seed0 \
        --artifacts runs/ablation/multi-span_seed0 --lam -1 0 1
"""

import argparse
import csv
import dataclasses
import sys
from pathlib import Path

from genr.config import load_config
from genr.evaluate import beam_sweep, eval_queries
from genr.pipeline import Pipeline

ROOT = Path(__file__).resolve().parents[1]


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("-c", "--config", default=str(ROOT / "configs" / "synthetic.json"))
    ap.add_argument("--artifacts")
    ap.add_argument("--data", help="directory holding catalog.jsonl, clicks.tsv and lexicon.txt")
    ap.add_argument("--beams", type=int, nargs="+", default=[1, 5, 20, 100])
    ap.add_argument("--lam", type=float, nargs="+", default=None, help="FM-score weights (default: config)")
    ap.add_argument("--model", choices=["auto", "sft", "dpo"], default="auto")
    ap.add_argument("--out", default=None)
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="must match the training run")
    args = ap.parse_args()

    overrides = dict(s.split("=", 1) for s in args.set)
    if args.artifacts:
        overrides["artifacts"] = args.artifacts
    if args.data:
        data = Path(args.data)
        overrides.update(catalog=str(data / "catalog.jsonl"), clicks=str(data / "clicks.tsv"),
                         lexicon=str(data / "lexicon.txt"))
    cfg = load_config(args.config, overrides)
    pipe = Pipeline(cfg)
    catalog = pipe.catalog()
    index = pipe.index()
    params = pipe.load_model(args.model)
    _, test = pipe.clicks(catalog)
    queries = eval_queries(test)

    out = Path(args.out) if args.out else cfg.artifacts_dir / "lambda_beam_sweep.csv"
    lams = args.lam if args.lam is not None else [cfg.decode.lam]
    with open(out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lam", "beam", "bucket", "K", "recall", "n_queries"])
        for lam in lams:
            dc = dataclasses.replace(cfg.decode_config(), lam=lam)
            sweep = beam_sweep(params, index, queries, catalog.vocab, dc, args.beams, cfg.eval_ks)
            for beam, rep in sorted(sweep.items()):
                for bucket, k, r, n in rep.rows:
                    w.writerow([lam, beam, bucket, k, repr(r), n])
            k0 = cfg.eval_ks[0]
            curve = "  ".join(f"b={b}:{sweep[b].recall(k0):.4f}" for b in args.beams)
            print(f"lam={lam:+.2f}  R@{k0}  {curve}")
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
