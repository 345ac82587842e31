import io
import json
import socket

import pytest

from genr.cli import main
from genr.config import load_config, parse_text
from genr.pipeline import Pipeline
from genr.serve import QueryServer, handle_request, serve_stream

STAGES = ["build-corpus", "build-index", "train-sft", "build-prefs", "train-dpo"]


def run_cli(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def summary(out):
    return json.loads(out.strip().splitlines()[-1])


@pytest.fixture()
def built(tiny_data, capsys):
    for stage in STAGES:
        code, out, err = run_cli(capsys, stage, "-c", str(tiny_data))
        assert code == 0, err
        assert summary(out)["status"] == "ok"
    return tiny_data


def test_usage_errors(capsys, tiny_data):
    assert run_cli(capsys)[0] == 1
    assert run_cli(capsys, "no-such-command")[0] == 1
    assert run_cli(capsys, "build-corpus", "-c", str(tiny_data), "--set", "span_len")[0] == 1
    assert run_cli(capsys, "build-corpus", "-c", str(tiny_data), "--set", "bogus=1")[0] == 1
    assert run_cli(capsys, "decode", "-c", str(tiny_data))[0] == 1  # --query is required


def test_eval_before_index_is_a_data_error(capsys, tiny_data):
    assert run_cli(capsys, "build-corpus", "-c", str(tiny_data))[0] == 0
    code, _, err = run_cli(capsys, "eval", "-c", str(tiny_data))
    assert code == 2
    assert "missing index artifact" in err and "build-index" in err


def test_missing_catalog_is_a_data_error(capsys, tmp_path):
    code, _, err = run_cli(capsys, "build-corpus", "--set", f"catalog={tmp_path / 'nope.jsonl'}",
                           "--artifacts", str(tmp_path / "a"))
    assert code == 2 and "catalog" in err


def test_full_pipeline_and_report(built, capsys):
    code, out, _ = run_cli(capsys, "eval", "-c", str(built), "--sweep", "1,5,10", "--details")
    assert code == 0
    s = summary(out)
    assert s["command"] == "eval" and 0.0 <= s["recall@5"] <= s["recall@10"] <= 1.0
    cfg = load_config(built)
    rep = Pipeline(cfg).report()
    assert rep.recall(5) == s["recall@5"]
    assert rep.per_query
    art = cfg.artifacts_dir
    for name in ("report.csv", "report.json", "beam_sweep.csv", "query_distribution.csv", "sft_log.csv", "dpo_log.csv"):
        assert (art / name).exists()
    assert (art / "sft_log.csv").read_text().splitlines()[0] == "epoch,step,loss"


def test_decode_prints_json(built, capsys):
    code, out, _ = run_cli(capsys, "decode", "-c", str(built), "--query", "red shoe", "--beam", "10", "--k", "3")
    assert code == 0
    lines = out.strip().splitlines()
    res = json.loads(lines[0])
    assert res["query"] == "red shoe"
    assert len(res["items"]) <= 3
    assert all({"tokens", "lm", "fm", "s"} <= set(sp) for sp in res["spans"])
    assert summary(out)["queries"] == 1


def test_stale_artifact_is_refused(built, capsys):
    code, _, err = run_cli(capsys, "eval", "-c", str(built), "--set", "sft.lr=0.5", "--model", "sft")
    assert code == 2
    assert "different config" in err and "train-sft" in err
    # a changed span length invalidates the corpus itself
    code, _, err = run_cli(capsys, "build-index", "-c", str(built), "--set", "span_len=3")
    assert code == 2 and "build-corpus" in err


def test_artifacts_env_override(tiny_data, tmp_path, monkeypatch, capsys):
    target = tmp_path / "elsewhere"
    monkeypatch.setenv("GENR_ARTIFACTS", str(target))
    assert run_cli(capsys, "build-corpus", "-c", str(tiny_data))[0] == 0
    assert (target / "corpus.jsonl").exists()


def test_key_value_config(tmp_path, tiny_config):
    text = f"catalog = {tiny_config.catalog}\nspan_len=5  # comment\nsft.lr=0.02\neval_ks=1,3\ndecode.top_k=none\n"
    p = tmp_path / "c.conf"
    p.write_text(text)
    cfg = load_config(p)
    assert cfg.span_len == 5 and cfg.sft.lr == 0.02 and cfg.eval_ks == [1, 3]
    assert cfg.decode.top_k is None
    assert parse_text('{"seed": 4}') == {"seed": 4}
    with pytest.raises(ValueError):
        parse_text("no equals sign")


def test_gen_synthetic(tmp_path, capsys):
    code, out, _ = run_cli(capsys, "gen-synthetic", "--out", str(tmp_path / "d"), "--items", "20", "--queries", "8")
    assert code == 0
    s = summary(out)
    assert s["items"] == 20 and s["events"] > 0
    assert (tmp_path / "d" / "catalog.jsonl").exists()


def test_serve_stream(built):
    retriever = Pipeline(load_config(built)).retriever()
    inp = io.StringIO('{"query": "red shoe"}\n{"query": ""}\nnot json\n{"query": "red shoe"}\n{"query": "x", "k": 0}\n')
    out = io.StringIO()
    assert serve_stream(retriever, inp, out) == 5
    r1, r2, r3, r4, r5 = [json.loads(line) for line in out.getvalue().splitlines()]
    assert "error" in r2 and "error" in r3 and "error" in r5
    scores = [it["score"] for it in r1["items"]]
    assert scores == sorted(scores, reverse=True)
    assert [it["item_id"] for it in r1["items"]] == [it["item_id"] for it in r4["items"]]
    assert handle_request(retriever, "[1, 2]") == {"error": "request must be a JSON object"}


def test_serve_tcp(built):
    import threading

    retriever = Pipeline(load_config(built)).retriever()
    with QueryServer(retriever, port=0) as server:
        t = threading.Thread(target=server.serve_forever, daemon=True)
        t.start()
        try:
            with socket.create_connection(server.server_address, timeout=10) as sock:
                f = sock.makefile("rw")
                f.write('{"query": "red shoe", "k": 2}\n{"query": ""}\n')
                f.flush()
                ok = json.loads(f.readline())
                bad = json.loads(f.readline())
            assert len(ok["items"]) <= 2 and "error" in bad
        finally:
            server.shutdown()
