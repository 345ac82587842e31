"""Command-line entry point: one subcommand per pipeline stage.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal invariant violation.
Each successful command prints one JSON summary line.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import synthetic
from .config import load_config
from .decode import result_to_json
from .errors import DataError, InvariantError
from .pipeline import Pipeline


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.replace(",", " ").split()]


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", "-c", help="config file (JSON or key=value)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="config override")
    common.add_argument("--artifacts", help="artifacts directory (GENR_ARTIFACTS also works)")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="genr", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in ("build-corpus", "build-index", "train-sft", "build-prefs", "train-dpo"):
        sub.add_parser(name, parents=[common])

    d = sub.add_parser("decode", parents=[common])
    d.add_argument("--query", "-q", action="append", required=True)
    d.add_argument("--beam", type=int)
    d.add_argument("--k", type=int, default=None)
    d.add_argument("--model", choices=["auto", "sft", "dpo"], default="auto")
    d.add_argument("--out", help="also write JSON lines here")

    e = sub.add_parser("eval", parents=[common])
    e.add_argument("--model", choices=["auto", "sft", "dpo"], default="auto")
    e.add_argument("--sweep", type=_int_list, help="beam sizes, e.g. 1,5,20,100")
    e.add_argument("--details", action="store_true", help="include per-query rankings in report.json")

    s = sub.add_parser("serve", parents=[common])
    s.add_argument("--model", choices=["auto", "sft", "dpo"], default="auto")
    s.add_argument("--port", type=int, help="serve on a local TCP port instead of stdin/stdout")
    s.add_argument("--host", default="127.0.0.1")

    g = sub.add_parser("gen-synthetic", parents=[common])
    g.add_argument("--out", required=True)
    g.add_argument("--items", type=int, default=500)
    g.add_argument("--queries", type=int, default=200)
    g.add_argument("--seed", type=int, default=0)
    return p


def _overrides(args) -> dict:
    out = {}
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        out[k.strip()] = v.strip()
    if args.artifacts:
        out["artifacts"] = args.artifacts
    return out


def run(argv: list[str] | None = None) -> dict:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    if args.command == "gen-synthetic":
        cfg = synthetic.SyntheticConfig(n_items=args.items, n_queries=args.queries, seed=args.seed)
        data = synthetic.generate(cfg)
        paths = synthetic.write(data, args.out)
        return {"items": len(data.items), "events": len(data.clicks), **{f"{k}_path": str(v) for k, v in paths.items()}}

    try:
        cfg = load_config(args.config, _overrides(args))
    except (KeyError, ValueError) as e:
        raise UsageError(f"bad configuration: {e}") from None
    pipe = Pipeline(cfg)
    if args.command == "build-corpus":
        return pipe.build_corpus()
    if args.command == "build-index":
        return pipe.build_index()
    if args.command == "train-sft":
        return pipe.train_sft()
    if args.command == "build-prefs":
        return pipe.build_prefs()
    if args.command == "train-dpo":
        return pipe.train_dpo()
    if args.command == "decode":
        retriever = pipe.retriever(args.model)
        results = []
        for q in args.query:
            res = retriever.search(q, k=args.k, beam=args.beam)
            results.append(result_to_json(q, res, retriever.vocab))
        if args.out:
            Path(args.out).write_text("".join(json.dumps(r) + "\n" for r in results))
        for r in results:
            print(json.dumps(r))
        return {"queries": len(results)}
    if args.command == "eval":
        return pipe.evaluate(args.model, args.sweep, args.details)
    if args.command == "serve":
        from .serve import QueryServer, serve_stream

        retriever = pipe.retriever(args.model)
        if args.port is None:
            return {"requests": serve_stream(retriever)}
        with QueryServer(retriever, args.host, args.port) as server:
            print(json.dumps({"listening": server.server_address[1]}), flush=True)
            try:
                server.serve_forever()
            except KeyboardInterrupt:
                pass
        return {"stopped": True}
    raise UsageError(f"unknown command {args.command}")


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    command = next((a for a in argv if not a.startswith("-")), None)
    try:
        summary = run(argv)
    except UsageError as e:
        print(f"genr: usage error: {e}", file=sys.stderr)
        return 1
    except SystemExit as e:  # --help
        return int(e.code or 0)
    except DataError as e:
        print(f"genr: data error: {e}", file=sys.stderr)
        return 2
    except (OSError, UnicodeDecodeError) as e:
        print(f"genr: data error: {e}", file=sys.stderr)
        return 2
    except InvariantError as e:
        print(f"genr: internal invariant violated: {e}", file=sys.stderr)
        return 3
    print(json.dumps({"command": command, "status": "ok", **summary}, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
