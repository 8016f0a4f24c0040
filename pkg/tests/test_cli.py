import json

import pytest

from mhmm import hmm
from mhmm.cli import main
from mhmm.predict import read_predictions


@pytest.fixture
def corpus_csv(tmp_path):
    path = tmp_path / "corpus.csv"
    assert main(["generate", "--users", "60", "--length", "9", "--artists", "14",
                 "--states", "3", "--seed", "4", "-o", str(path)]) == 0
    return path


FAST = ["--states", "3", "--max-iters", "8", "--k-user", "5", "--k-item", "5"]


def test_generate_writes_both_files(tmp_path, capsys):
    out = tmp_path / "c.csv"
    assert main(["generate", "--users", "972", "--length", "29", "--artists", "50",
                 "--states", "5", "--seed", "42", "-o", str(out)]) == 0
    model_path = tmp_path / "c.model.json"
    assert capsys.readouterr().out.split() == [str(out), str(model_path)]
    assert len(out.read_text().splitlines()) == 972
    assert hmm.load_model(model_path).n_states == 5
    first = out.read_bytes(), model_path.read_bytes()
    main(["generate", "--users", "972", "--length", "29", "--artists", "50",
          "--states", "5", "--seed", "42", "-o", str(out)])
    assert (out.read_bytes(), model_path.read_bytes()) == first


def test_generate_rejects_zero_users(tmp_path):
    with pytest.raises(SystemExit) as info:
        main(["generate", "--users", "0", "--length", "3", "--artists", "2", "--states", "1",
              "-o", str(tmp_path / "x.csv")])
    assert info.value.code == 2


def test_generate_unwritable_path(tmp_path, capsys):
    code = main(["generate", "--users", "2", "--length", "3", "--artists", "2", "--states", "1",
                 "-o", str(tmp_path / "missing" / "x.csv")])
    assert code == 2
    assert capsys.readouterr().err


def test_train_hmm(corpus_csv, tmp_path, capsys):
    out = tmp_path / "model.json"
    assert main(["train", "--model", "hmm", "--states", "3", "--corpus", str(corpus_csv),
                 "-o", str(out)]) == 0
    stdout = capsys.readouterr().out
    assert "iterations" in stdout and "converged" in stdout and "log_likelihood" in stdout
    doc = json.loads(out.read_text())
    assert doc["meta"]["config"]["states"] == 3
    assert hmm.load_model(out).vocab_size == 14


def test_train_cf_item_cache(corpus_csv, tmp_path):
    out = tmp_path / "sims.npz"
    assert main(["train", "--model", "cf-item", "--corpus", str(corpus_csv), "-o", str(out)]) == 0
    assert out.stat().st_size > 0


def test_train_rejects_negative_tol(corpus_csv, tmp_path):
    with pytest.raises(SystemExit) as info:
        main(["train", "--tol", "-1", "--corpus", str(corpus_csv), "-o", str(tmp_path / "m")])
    assert info.value.code == 2


def test_train_bad_corpus(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("1,2\n3\n")
    assert main(["train", "--corpus", str(bad), "-o", str(tmp_path / "m.json")]) == 2


def _predict(corpus_csv, out, *extra):
    return main(["predict", "--corpus", str(corpus_csv), "-o", str(out), *FAST, *extra])


def test_predict_mhmm_rows(corpus_csv, tmp_path):
    out = tmp_path / "p.csv"
    assert _predict(corpus_csv, out, "--model", "mhmm", "--n", "10", "--n1", "7", "--n2", "3") == 0
    rows = read_predictions(out)
    assert len(rows) == 60
    assert all(len(r) == 10 == len(set(r)) for r in rows)


def test_predict_rejects_bad_split(corpus_csv, tmp_path):
    assert _predict(corpus_csv, tmp_path / "p.csv", "--n1", "4", "--n2", "4", "--n", "10") == 2


def test_predict_degenerate_identity(corpus_csv, tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert _predict(corpus_csv, a, "--model", "hmm", "--n1", "10", "--n2", "0") == 0
    assert _predict(corpus_csv, b, "--model", "mhmm", "--n1", "10", "--n2", "0") == 0
    assert a.read_bytes() == b.read_bytes()


def test_predict_with_saved_model_and_cache(corpus_csv, tmp_path):
    model, sims = tmp_path / "m.json", tmp_path / "s.npz"
    main(["train", "--corpus", str(corpus_csv), "-o", str(model), "--states", "3",
          "--max-iters", "8"])
    main(["train", "--model", "cf-item", "--corpus", str(corpus_csv), "-o", str(sims)])
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert _predict(corpus_csv, a, "--model", "mhmm", "--cf-variant", "item") == 0
    assert _predict(corpus_csv, b, "--model", "mhmm", "--cf-variant", "item",
                    "--hmm", str(model), "--item-sims", str(sims)) == 0
    assert a.read_bytes() == b.read_bytes()


def test_predict_vocab_mismatch(corpus_csv, tmp_path, capsys):
    model = tmp_path / "m.json"
    hmm.save_model(hmm.init_random(2, 99, 0), model)
    assert _predict(corpus_csv, tmp_path / "p.csv", "--model", "hmm", "--hmm", str(model)) == 2
    err = capsys.readouterr().err
    assert "99" in err and "14" in err


def test_predict_numeric_failure(tmp_path):
    corpus = tmp_path / "c.csv"
    corpus.write_text("1,2\n2,1\n")
    model = tmp_path / "m.json"
    hmm.save_model(hmm.HmmModel([1.0], [[1.0]], [[1.0, 0.0]]), model)
    assert main(["predict", "--model", "hmm", "--corpus", str(corpus), "--hmm", str(model),
                 "--n", "2", "--n1", "2", "--n2", "0", "-o", str(tmp_path / "p.csv")]) == 3


def test_evaluate_holdout_and_targets(corpus_csv, tmp_path, capsys):
    preds = tmp_path / "p.csv"
    assert _predict(corpus_csv, preds, "--model", "hf-current", "--holdout") == 0
    capsys.readouterr()
    assert main(["evaluate", "--predictions", str(preds), "--corpus", str(corpus_csv),
                 "--format", "json"]) == 0
    score = json.loads(capsys.readouterr().out)["map_at_k"]
    targets = tmp_path / "t.txt"
    targets.write_text("\n".join(l.split(",")[-1] for l in corpus_csv.read_text().splitlines()))
    assert main(["evaluate", "--predictions", str(preds), "--targets", str(targets)]) == 0
    assert capsys.readouterr().out.strip() == f"MAP@10 {score:.5f}"


def test_bench_table_and_json(corpus_csv, tmp_path, capsys):
    out = tmp_path / "r.json"
    assert main(["bench", "--corpus", str(corpus_csv), *FAST, "-o", str(out)]) == 0
    table = capsys.readouterr().out
    for name in ("HF_corpus", "HF_current", "CF_user", "CF_item", "HMM", "MHMM"):
        assert f"| {name} " in table
    doc = json.loads(out.read_text())
    assert len(doc["per_model"]) == 6
    assert all(0 <= v <= 1 for v in doc["per_model"].values())
    assert doc["config"]["n_states"] == 3 and doc["config"]["corpus"] == str(corpus_csv)


def test_bench_fixture_hf_current_is_perfect(tmp_path, capsys):
    corpus = tmp_path / "c.csv"
    corpus.write_text("10,11,10,10\n12,12,13,12\n14,11,14,14\n13,13,10,13\n")
    assert main(["bench", "--corpus", str(corpus), "--states", "2", "--max-iters", "3",
                 "--format", "json"]) == 0
    assert json.loads(capsys.readouterr().out)["per_model"]["hf-current"] == 1.0


def test_bench_rerun_identical(corpus_csv, tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    main(["bench", "--corpus", str(corpus_csv), *FAST, "--seed", "42", "-o", str(a)])
    main(["bench", "--corpus", str(corpus_csv), *FAST, "--seed", "42", "--threads", "4",
          "-o", str(b)])
    assert a.read_bytes() == b.read_bytes()


def test_config_file_precedence(corpus_csv, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"states": 2, "max_iters": 4, "k_user": 3}))
    out = tmp_path / "r.json"
    assert main(["bench", "--corpus", str(corpus_csv), "--config", str(cfg), "--k-user", "4",
                 "--models", "hf-corpus", "-o", str(out)]) == 0
    config = json.loads(out.read_text())["config"]
    assert (config["n_states"], config["max_iters"], config["k_user"]) == (2, 4, 4)


def test_config_file_unknown_key(corpus_csv, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"bogus": 1}))
    with pytest.raises(SystemExit) as info:
        main(["bench", "--corpus", str(corpus_csv), "--config", str(cfg)])
    assert info.value.code == 2
