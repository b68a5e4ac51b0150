import json
import subprocess
import sys

import numpy as np
import pytest

from xgrain.cli import build_parser, main
from xgrain.store import Corpus, TokenSequence, write_corpus


def run(capsys, *argv):
    try:
        code = main([str(a) for a in argv])
    except SystemExit as exc:
        code = exc.code
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def synth(tmp_path_factory):
    d = tmp_path_factory.mktemp("synth")
    assert main(["gen-synth", "--out-dir", str(d), "--seed", "3"]) == 0
    return d


@pytest.fixture(scope="module")
def noiseless(tmp_path_factory):
    d = tmp_path_factory.mktemp("clean")
    assert main(["gen-synth", "--out-dir", str(d), "--num-pairs", "16", "--relevant-frac", "1",
                 "--noise-sigma", "0"]) == 0
    return d


def corpora(d):
    return ["--video-corpus", d / "videos.xgeb", "--text-corpus", d / "texts.xgeb", "--pairs", d / "pairs.tsv"]


def test_gen_synth_outputs(synth):
    assert {p.name for p in synth.iterdir()} == {"videos.xgeb", "texts.xgeb", "pairs.tsv", "masks.json"}
    masks = json.loads((synth / "masks.json").read_text())
    assert len(masks) == 64 and len(masks[0]["relevant_frames"]) == 3


def test_gen_synth_reproducible(tmp_path, capsys):
    for name in ("a", "b"):
        run(capsys, "gen-synth", "--out-dir", tmp_path / name, "--seed", 9, "--num-pairs", 4)
    for f in ("videos.xgeb", "texts.xgeb", "pairs.tsv", "masks.json"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_score_json_and_matrix(synth, capsys):
    code, out, _ = run(capsys, "score", *corpora(synth), "--json", "--matrix")
    assert code == 0
    doc = json.loads(out)
    assert len(doc["pairs"]) == 64 and np.array(doc["matrix"]).shape == (64, 64)
    assert doc["pairs"][0]["video_id"] == "v00000"
    assert doc["pairs"][5]["score"] == pytest.approx(doc["matrix"][5][5])
    assert doc["scale"] == 100 and doc["tau"] == 0.01 and doc["toggles"] == "vs,vw,fs,fw"


def test_score_noiseless_diagonal(noiseless, capsys):
    code, out, _ = run(capsys, "score", *corpora(noiseless), "--scale", 1, "--json")
    assert code == 0
    assert all(p["score"] == pytest.approx(1.0) for p in json.loads(out)["pairs"])


def test_score_single_pair(tmp_path, capsys):
    v = Corpus(2, (TokenSequence("v", np.array([[1.0, 0.0]])),))
    t = Corpus(2, (TokenSequence("t", np.array([[0.6, 0.8]])),))
    write_corpus(v, tmp_path / "v.xgeb")
    write_corpus(t, tmp_path / "t.xgeb")
    code, out, _ = run(capsys, "score", "--video-corpus", tmp_path / "v.xgeb", "--text-corpus", tmp_path / "t.xgeb",
                       "--scale", 1)
    assert code == 0
    lines = out.strip().splitlines()
    assert len(lines) == 1 and lines[0].split("\t")[:2] == ["v", "t"]
    assert float(lines[0].split("\t")[2]) == pytest.approx(0.6)


def test_score_chunk_and_threads_match(synth, capsys, monkeypatch):
    _, a, _ = run(capsys, "score", *corpora(synth), "--json", "--matrix", "--chunk", 16)
    monkeypatch.setenv("XGRAIN_THREADS", "3")
    _, b, _ = run(capsys, "score", *corpora(synth), "--json", "--matrix", "--chunk", 16)
    assert a == b


def test_missing_file_exit_1(synth, capsys):
    code, _, err = run(capsys, "score", "--video-corpus", synth / "nope.xgeb", "--text-corpus", synth / "texts.xgeb")
    assert code == 1 and "nope.xgeb" in err


def test_dim_mismatch_exit_1(tmp_path, synth, capsys):
    write_corpus(Corpus(3, (TokenSequence("v", np.ones((1, 3))),)), tmp_path / "v.xgeb")
    code, _, err = run(capsys, "score", "--video-corpus", tmp_path / "v.xgeb", "--text-corpus", synth / "texts.xgeb")
    assert code == 1 and "dim" in err


def test_usage_errors_exit_2(synth, capsys):
    assert run(capsys, "score", "--bogus")[0] == 2
    assert run(capsys, "sweep-tau", *corpora(synth), "--taus", "0.1,0")[0] == 2
    assert run(capsys, "score", *corpora(synth), "--tau", "-1")[0] == 2
    assert run(capsys, "score", *corpora(synth), "--toggles", "xx")[0] == 2
    assert run(capsys, "score", *corpora(synth), "--agg", "median")[0] == 2
    assert run(capsys, "gradcheck", "--seed", "-3")[0] == 2
    assert run(capsys)[0] == 2


def test_bad_thread_env_is_usage_error(synth, capsys, monkeypatch):
    monkeypatch.setenv("XGRAIN_THREADS", "zero")
    assert run(capsys, "score", *corpora(synth))[0] == 2


def test_ablate_table(synth, capsys):
    code, out, _ = run(capsys, "ablate-agg", *corpora(synth))
    assert code == 0
    rows = {line.split()[0]: line.split()[1:] for line in out.strip().splitlines()[2:]}
    assert set(rows) == {"attention", "mean_mean", "mean_max", "max_mean", "max_max"}
    assert all("." in cell and len(cell.split(".")[1]) == 1 for cell in rows["attention"])
    assert float(rows["attention"][0]) >= float(rows["mean_mean"][0])


def test_ablate_noiseless_all_perfect(noiseless, capsys):
    code, out, _ = run(capsys, "ablate-agg", *corpora(noiseless), "--json")
    assert code == 0
    for row in json.loads(out):
        assert row["t2v"]["r1"] == 100 and row["v2t"]["r1"] == 100


def test_ablate_single_pair(tmp_path, capsys):
    rng = np.random.default_rng(0)
    write_corpus(Corpus(4, (TokenSequence("v", rng.normal(size=(3, 4))),)), tmp_path / "v.xgeb")
    write_corpus(Corpus(4, (TokenSequence("t", rng.normal(size=(2, 4))),)), tmp_path / "t.xgeb")
    code, out, _ = run(capsys, "ablate-agg", "--video-corpus", tmp_path / "v.xgeb",
                       "--text-corpus", tmp_path / "t.xgeb", "--json")
    assert code == 0 and all(r["t2v"]["r1"] == 100 for r in json.loads(out))


def test_sweep_consistent_with_ablate(synth, capsys):
    _, sweep, _ = run(capsys, "sweep-tau", *corpora(synth), "--taus", "0.05", "--json")
    _, ablate, _ = run(capsys, "ablate-agg", *corpora(synth), "--tau", "0.05", "--json")
    s, a = json.loads(sweep)[0], json.loads(ablate)[0]
    assert s["t2v"] == a["t2v"] and s["v2t"] == a["v2t"]


def test_sweep_default_grid_and_limit(synth, capsys):
    _, out, _ = run(capsys, "sweep-tau", *corpora(synth), "--json")
    rows = json.loads(out)
    assert [r["tau"] for r in rows] == [1, 0.1, 0.01, 0.001]
    interior = max(r["t2v"]["r1"] for r in rows[1:3])
    assert interior >= rows[0]["t2v"]["r1"] and interior >= rows[3]["t2v"]["r1"]
    _, big, _ = run(capsys, "sweep-tau", *corpora(synth), "--taus", "1e6", "--json")
    _, ablate, _ = run(capsys, "ablate-agg", *corpora(synth), "--json")
    mm = next(r for r in json.loads(ablate) if r["method"] == "mean_mean")
    assert round(json.loads(big)[0]["t2v"]["r1"], 1) == round(mm["t2v"]["r1"], 1)


def test_eval_round_trip(synth, tmp_path, capsys):
    path = tmp_path / "s.json"
    assert run(capsys, "score", *corpora(synth), "--matrix", "--json", "--out", path)[0] == 0
    code, out, _ = run(capsys, "eval", path, "--json")
    assert code == 0
    doc = json.loads(out)
    assert [d["direction"] for d in doc] == ["t2v", "v2t"]
    code, out, _ = run(capsys, "eval", path)
    assert out.splitlines()[0].split() == ["direction", "R@1", "R@5", "R@10", "MdR", "MnR"]
    (tmp_path / "bad.json").write_text("{oops")
    assert run(capsys, "eval", tmp_path / "bad.json")[0] == 1


def test_config_file(synth, tmp_path, capsys):
    cfg = tmp_path / "run.cfg"
    cfg.write_text("# defaults\nagg = max_max\njson = true\n")
    _, out, _ = run(capsys, "score", "--config", cfg, *corpora(synth))
    doc = json.loads(out)
    assert doc["agg"] == "max_max"
    _, out, _ = run(capsys, "score", "--config", cfg, *corpora(synth), "--agg", "mean_mean")
    assert json.loads(out)["agg"] == "mean_mean"
    cfg.write_text("nonsense = 1\n")
    assert run(capsys, "score", "--config", cfg, *corpora(synth))[0] == 2


def test_ingest_validates_and_converts(tmp_path, capsys):
    rng = np.random.default_rng(1)
    np.savez(tmp_path / "in.npz", a=rng.normal(size=(5, 3)), b=rng.normal(size=(2, 3)))
    code, out, err = run(capsys, "ingest", tmp_path / "in.npz", "--max-tokens", 4)
    assert code == 1 and "--truncate" in err
    code, out, _ = run(capsys, "ingest", tmp_path / "in.npz", "--max-tokens", 4, "--truncate",
                       "--corpus-out", tmp_path / "c.xgeb", "--json")
    assert code == 0
    doc = json.loads(out)
    assert (doc["items"], doc["dim"], doc["max_tokens"]) == (2, 3, 4)
    code, out, _ = run(capsys, "ingest", tmp_path / "c.xgeb")
    assert code == 0 and "items: 2" in out
    (tmp_path / "junk.xgeb").write_bytes(b"XXXX" + bytes(30))
    code, _, err = run(capsys, "ingest", tmp_path / "junk.xgeb")
    assert code == 1 and "junk.xgeb" in err


def test_gradcheck_pass_and_negative_control(capsys):
    code, out, _ = run(capsys, "gradcheck", "--instances", 1, "--json")
    assert code == 0 and json.loads(out)["passed"]
    code, out, err = run(capsys, "gradcheck", "--instances", 1, "--corrupt-gradient")
    assert code == 1 and "head.video" in err
    assert run(capsys, "gradcheck", "--instances", 1, "--batch", 1)[0] == 0


def test_train_toy_and_score_with_checkpoint(synth, tmp_path, capsys):
    ckpt = tmp_path / "m.xgep"
    code, out, _ = run(capsys, "train-toy", "--epochs", 2, "--num-pairs", 16, "--layers", 1, "--save", ckpt)
    assert code == 0
    lines = [json.loads(x) for x in out.splitlines()]
    assert [d["epoch"] for d in lines] == [0, 1, 2]
    _, again, _ = run(capsys, "train-toy", "--epochs", 2, "--num-pairs", 16, "--layers", 1)
    assert again == out
    code, out, _ = run(capsys, "score", *corpora(synth), "--params", ckpt, "--json")
    assert code == 0 and len(json.loads(out)["pairs"]) == 64


def test_help_lists_every_flag(capsys):
    parser = build_parser()
    sub = parser._subparsers._group_actions[0].choices
    assert set(sub) == {"ingest", "score", "eval", "ablate-agg", "sweep-tau", "gen-synth", "train-toy", "gradcheck"}
    for name, p in sub.items():
        text = p.format_help()
        for action in p._actions:
            for opt in action.option_strings:
                assert opt in text, (name, opt)


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "xgrain", "--version"], capture_output=True, text=True)
    assert res.returncode == 0 and "xgrain" in res.stdout
