import json
from pathlib import Path

import pytest

from supportgen.cli import RunConfig, main
from supportgen.corpus import save_corpus
from supportgen.synth import make_synthetic_corpus

TINY_OVERRIDES = [
    "--set", "retrieval.dim=32",
    "--set", "model.d=8",
    "--set", "model.heads=2",
    "--set", "model.enc_layers=1",
    "--set", "model.dec_layers=1",
    "--set", "model.ffn_mult=1",
    "--set", "model.cog_state_cap=4",
    "--set", "train.max_epochs=1",
    "--set", "train.checkpoint_min_epoch=1",
    "--set", "train.max_steps=2",
    "--set", "train.lr=0.001",
]


def write_corpus(dir_path: Path, n=10, pairs=2, seed=0) -> Path:
    path = dir_path / "corpus.json"
    save_corpus(make_synthetic_corpus(n, pairs, seed=seed), path)
    return path


@pytest.fixture(scope="module")
def trained_run(tmp_path_factory):
    """One ingest + short train shared by the evaluate/chat tests."""
    root = tmp_path_factory.mktemp("cli-run")
    corpus = write_corpus(root)
    args = ["--out", str(root / "out")] + TINY_OVERRIDES
    assert main(args + ["ingest", "--corpus", str(corpus)]) == 0
    assert main(args + ["train"]) == 0
    return root, args


class TestIngest:
    def test_writes_all_artifacts(self, tmp_path, capsys):
        corpus = write_corpus(tmp_path)
        rc = main(["--out", str(tmp_path / "out"), "ingest", "--corpus", str(corpus)])
        assert rc == 0
        out = tmp_path / "out"
        for name in (
            "train_split.json", "valid_split.json", "test_split.json",
            "vocab.json", "retrieval_base.json", "index.bin",
        ):
            assert (out / name).exists()
        summary = json.loads(capsys.readouterr().out)
        assert summary["dialogues"] == 10
        assert summary["train"] + summary["valid"] + summary["test"] == 10

    def test_malformed_corpus_writes_nothing(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text('[{"id": "x", ')
        rc = main(["--out", str(tmp_path / "out"), "ingest", "--corpus", str(bad)])
        assert rc == 1
        assert "error:" in capsys.readouterr().err
        assert not (tmp_path / "out").exists()

    def test_idempotent_and_deterministic(self, tmp_path, capsys):
        corpus = write_corpus(tmp_path)
        args = ["--out", str(tmp_path / "out"), "ingest", "--corpus", str(corpus)]
        assert main(args) == 0
        first = {
            p.name: p.read_bytes() for p in (tmp_path / "out").iterdir() if p.is_file()
        }
        assert main(args) == 0
        second = {
            p.name: p.read_bytes() for p in (tmp_path / "out").iterdir() if p.is_file()
        }
        assert first == second

    def test_build_index_reconstructs_identical_file(self, tmp_path, capsys):
        corpus = write_corpus(tmp_path)
        out = tmp_path / "out"
        assert main(["--out", str(out), "ingest", "--corpus", str(corpus)]) == 0
        original = (out / "index.bin").read_bytes()
        (out / "index.bin").unlink()
        assert main(["--out", str(out), "build-index"]) == 0
        assert (out / "index.bin").read_bytes() == original


class TestRetrieve:
    def test_query_returns_scored_passages(self, trained_run, capsys):
        root, args = trained_run
        capsys.readouterr()
        rc = main(args + ["retrieve", "--query", "trouble with my job", "--top-s", "2"])
        assert rc == 0
        results = json.loads(capsys.readouterr().out)
        assert len(results) == 2
        assert results[0]["score"] >= results[1]["score"]
        assert {"passage_id", "score", "text"} <= set(results[0])

    def test_missing_index_is_an_error(self, tmp_path, capsys):
        rc = main(["--out", str(tmp_path / "nowhere"), "retrieve", "--query", "x"])
        assert rc == 1
        assert "missing artifact" in capsys.readouterr().err


class TestTrainEvaluate:
    def test_train_artifacts(self, trained_run):
        root, _ = trained_run
        run_dir = root / "out" / "run"
        assert (run_dir / "best.bin").exists()
        assert (run_dir / "train_log.jsonl").exists()
        assert (run_dir / "loss_curve.png").stat().st_size > 0
        assert (run_dir / "fusion_weights.png").stat().st_size > 0

    def test_evaluate_writes_report_files(self, trained_run, capsys):
        root, args = trained_run
        capsys.readouterr()
        rc = main(args + ["evaluate", "--split", "test"])
        assert rc == 0
        eval_dir = root / "out" / "eval-test"
        report = json.loads((eval_dir / "metrics.json").read_text())
        assert set(report) == {
            "acc", "acc_top_n", "ppl", "bleu", "distinct", "rouge_l", "s_norm",
        }
        assert report["ppl"] > 0
        tsv_lines = (eval_dir / "metrics.tsv").read_text().splitlines()
        assert len(tsv_lines) == 2  # header + one row
        assert (eval_dir / "top_n_accuracy.png").stat().st_size > 0
        assert (eval_dir / "generations.jsonl").read_text().strip()

    def test_evaluate_missing_checkpoint(self, tmp_path, capsys):
        corpus = write_corpus(tmp_path)
        out = tmp_path / "out"
        assert main(["--out", str(out), "ingest", "--corpus", str(corpus)]) == 0
        rc = main(["--out", str(out)] + TINY_OVERRIDES + ["evaluate"])
        assert rc == 1
        assert "checkpoint" in capsys.readouterr().err


class TestSNormCommand:
    def test_csv_table(self, tmp_path, capsys):
        table = tmp_path / "table.csv"
        table.write_text(
            "method,acc,ppl,b2\n"
            "alpha,30.0,16.0,8.0\n"
            "beta,-,18.0,6.0\n"
            "gamma,25.0,20.0,-\n"
        )
        json_out = tmp_path / "scores.json"
        rc = main(["s-norm", "--table", str(table), "--json-out", str(json_out)])
        assert rc == 0
        scores = json.loads(json_out.read_text())
        assert scores["alpha"] == pytest.approx(1.0)  # best on every present metric
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 3
        assert lines[0].startswith("alpha")

    def test_json_table(self, tmp_path, capsys):
        table = tmp_path / "table.json"
        table.write_text(json.dumps({"a": {"b1": 10.0}, "b": {"b1": 20.0}}))
        assert main(["s-norm", "--table", str(table)]) == 0
        out = capsys.readouterr().out
        assert "1.00" in out and "0.00" in out


class TestChat:
    def test_scripted_session(self, trained_run, capsys, monkeypatch):
        import io

        root, args = trained_run
        capsys.readouterr()
        script = "/show-lambda\ni am stressed about my job\n/reset\n/quit\n"
        monkeypatch.setattr("sys.stdin", io.StringIO(script))
        assert main(args + ["chat"]) == 0
        out = capsys.readouterr().out
        assert "strategy:" in out
        assert "supporter>" in out
        assert "(context cleared)" in out
        lam_line = out.splitlines()[1]
        assert len(lam_line.split()) == 5


class TestRunConfig:
    def test_set_overrides_nested_and_typed(self):
        cfg = RunConfig()
        cfg.apply_overrides(["model.d=32", "seed=9", "eval.greedy=false", "corpus_path=x.json"])
        assert cfg.model["d"] == 32
        assert cfg.seed == 9
        assert cfg.eval["greedy"] is False
        assert cfg.corpus_path == "x.json"

    def test_bad_override_format(self):
        with pytest.raises(ValueError):
            RunConfig().apply_overrides(["no-equals-sign"])

    def test_config_file_merges(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"seed": 5, "retrieval": {"top_s": 7}}))
        cfg = RunConfig.load(str(path))
        assert cfg.seed == 5
        assert cfg.retrieval["top_s"] == 7
        assert cfg.retrieval["dim"] == 256  # defaults preserved on merge

    def test_unknown_config_key_rejected(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"bogus": 1}))
        with pytest.raises(ValueError, match="unknown config keys"):
            RunConfig.load(str(path))

    def test_cli_seed_and_out_flags(self, tmp_path, capsys):
        corpus = write_corpus(tmp_path, seed=3)
        rc = main(["--out", str(tmp_path / "o1"), "--seed", "1", "ingest", "--corpus", str(corpus)])
        assert rc == 0
        assert (tmp_path / "o1" / "vocab.json").exists()
