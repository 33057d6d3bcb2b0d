"""CLI subcommands: exit codes, file outputs, manifests, idempotence."""

import json
import subprocess
import sys
from pathlib import Path

import pytest

from helpers import DATA_DIR


def run_cli(*args, cwd=None):
    return subprocess.run(
        [sys.executable, "-m", "radkit", *args],
        capture_output=True,
        text=True,
        cwd=cwd,
    )


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Run the file-based stage chain once and hand the paths to the tests."""
    work = tmp_path_factory.mktemp("pipeline")
    paths = {
        "index": work / "index.json",
        "train": work / "train.jsonl",
        "cands": work / "cands.jsonl",
        "model": work / "model.json",
        "retrieved": work / "retrieved.jsonl",
        "metrics": work / "metrics.json",
    }
    steps = [
        ("index", "--corpus", str(DATA_DIR / "corpus.jsonl"), "--out", str(paths["index"])),
        (
            "emit-train",
            "--index", str(paths["index"]),
            "--rationales", str(DATA_DIR / "rationales.jsonl"),
            "--out", str(paths["train"]),
            "--k", "1",
            "--template", "medqa",
        ),
        (
            "candidates",
            "--index", str(paths["index"]),
            "--rationales", str(DATA_DIR / "rationales.jsonl"),
            "--out", str(paths["cands"]),
            "--kappa1", "4",
            "--kappa2", "2",
        ),
        (
            "rerank-train",
            "--index", str(paths["index"]),
            "--candidates", str(paths["cands"]),
            "--out", str(paths["model"]),
            "--epochs", "10",
            "--dim", "64",
        ),
        (
            "rerank-infer",
            "--index", str(paths["index"]),
            "--questions", str(DATA_DIR / "rationales.jsonl"),
            "--model", str(paths["model"]),
            "--out", str(paths["retrieved"]),
            "--kappa-star", "10",
            "--k", "3",
        ),
        (
            "eval",
            "--index", str(paths["index"]),
            "--rationales", str(DATA_DIR / "rationales.jsonl"),
            "--retrieved", str(paths["retrieved"]),
            "--ks", "1,3",
            "--out", str(paths["metrics"]),
        ),
    ]
    results = []
    for step in steps:
        proc = run_cli(*step)
        assert proc.returncode == 0, f"{step[0]} failed: {proc.stderr}"
        results.append((step, proc))
    return paths, steps, results


class TestIndexCommand:
    def test_valid_corpus(self, tmp_path):
        out = tmp_path / "index.json"
        proc = run_cli("index", "--corpus", str(DATA_DIR / "corpus.jsonl"), "--out", str(out))
        assert proc.returncode == 0
        assert out.exists()
        assert "12 documents" in proc.stdout

    def test_duplicate_id_exits_one_and_names_id(self, tmp_path):
        corpus = tmp_path / "bad.jsonl"
        row = {"id": "dup-1", "title": "", "text": "alpha beta"}
        corpus.write_text(json.dumps(row) + "\n" + json.dumps(row) + "\n")
        proc = run_cli("index", "--corpus", str(corpus), "--out", str(tmp_path / "x.json"))
        assert proc.returncode == 1
        assert "dup-1" in proc.stderr

    def test_missing_file_exits_one_and_names_path(self, tmp_path):
        missing = tmp_path / "nope.jsonl"
        proc = run_cli("index", "--corpus", str(missing), "--out", str(tmp_path / "x.json"))
        assert proc.returncode == 1
        assert str(missing) in proc.stderr


class TestPipeline:
    def test_training_examples_parse_and_carry_knowledge(self, pipeline):
        paths, _, _ = pipeline
        rows = [json.loads(line) for line in paths["train"].read_text().splitlines()]
        assert len(rows) == 5  # filtering removed one wrong and one undeclared rationale
        for row in rows:
            assert row["input"].startswith("The following are multiple-choice questions")
            assert "\n\nKnowledge: " in row["input"]
            assert len(row["doc_ids"]) == 1

    def test_candidate_sets_shape(self, pipeline):
        paths, _, _ = pipeline
        rows = [json.loads(line) for line in paths["cands"].read_text().splitlines()]
        assert rows, "no candidate sets produced"
        for row in rows:
            assert len(row["doc_ids"]) == len(set(row["doc_ids"]))
            assert len(row["doc_ids"]) <= 6
            assert len(row["teacher_scores"]) == len(row["doc_ids"])

    def test_retrieved_lists_feed_metrics(self, pipeline):
        paths, _, _ = pipeline
        metrics = json.loads(paths["metrics"].read_text())
        assert set(metrics["hits"]) == {"1", "3"}
        for value in metrics["hits"].values():
            assert 0.0 <= value <= 1.0
        assert metrics["counts"]["examples"] == 4

    def test_manifests_record_digests(self, pipeline):
        paths, _, _ = pipeline
        manifest = json.loads((Path(str(paths["index"]) + ".manifest.json")).read_text())
        assert manifest["command"] == "index"
        assert manifest["version"]
        import hashlib

        digest = hashlib.sha256((DATA_DIR / "corpus.jsonl").read_bytes()).hexdigest()
        assert manifest["inputs"][str(DATA_DIR / "corpus.jsonl")] == digest
        assert str(paths["index"]) in manifest["outputs"]

    def test_rerun_is_byte_identical(self, pipeline, tmp_path):
        paths, steps, _ = pipeline
        for step in steps:
            args = list(step)
            out_at = args.index("--out") + 1
            original = Path(args[out_at])
            rerun_out = tmp_path / ("rerun-" + original.name)
            args[out_at] = str(rerun_out)
            proc = run_cli(*args)
            assert proc.returncode == 0, proc.stderr
            assert rerun_out.read_bytes() == original.read_bytes()


class TestRerankInferOptions:
    def test_external_score_file_overrides_model(self, pipeline, tmp_path):
        paths, _, _ = pipeline
        # force med-009 to the top for ex-01 regardless of the model
        score_rows = [{"id": "ex-01", "doc_id": "med-009", "score": 99.0}]
        score_file = tmp_path / "scores.jsonl"
        score_file.write_text("".join(json.dumps(r) + "\n" for r in score_rows))
        questions = tmp_path / "q.jsonl"
        questions.write_text(
            json.dumps({"id": "ex-01", "question": "thyroid hormone excess treatment"}) + "\n"
        )
        out = tmp_path / "ext.jsonl"
        proc = run_cli(
            "rerank-infer",
            "--index", str(paths["index"]),
            "--questions", str(questions),
            "--out", str(out),
            "--score-file", str(score_file),
            "--kappa-star", "10",
            "--k", "1",
        )
        assert proc.returncode == 0, proc.stderr
        row = json.loads(out.read_text())
        assert row["doc_ids"] == ["med-009"]


class TestEmitTrainOptions:
    def test_filter_none_keeps_every_rationale(self, pipeline, tmp_path):
        paths, _, _ = pipeline
        out = tmp_path / "train-all.jsonl"
        proc = run_cli(
            "emit-train", "--index", str(paths["index"]),
            "--rationales", str(DATA_DIR / "rationales.jsonl"),
            "--out", str(out), "--filter", "none",
        )
        assert proc.returncode == 0, proc.stderr
        assert len(out.read_text().splitlines()) == 7  # 3 + 1 + 2 + 1 rationales

    def test_verdict_file_filter(self, pipeline, tmp_path):
        paths, _, _ = pipeline
        verdicts = tmp_path / "verdicts.jsonl"
        verdicts.write_text(
            json.dumps({"id": "ex-01", "j": 0, "keep": True}) + "\n"
            + json.dumps({"id": "ex-02", "j": 0, "keep": False}) + "\n"
        )
        out = tmp_path / "train-verdict.jsonl"
        proc = run_cli(
            "emit-train", "--index", str(paths["index"]),
            "--rationales", str(DATA_DIR / "rationales.jsonl"),
            "--out", str(out), "--filter", f"verdict-file:{verdicts}",
        )
        assert proc.returncode == 0, proc.stderr
        rows = [json.loads(line) for line in out.read_text().splitlines()]
        assert [(r["id"], r["j"]) for r in rows] == [("ex-01", 0)]

    def test_no_knowledge_emits_plain_template(self, pipeline, tmp_path):
        paths, _, _ = pipeline
        out = tmp_path / "train-plain.jsonl"
        proc = run_cli(
            "emit-train", "--index", str(paths["index"]),
            "--rationales", str(DATA_DIR / "rationales.jsonl"),
            "--out", str(out), "--no-knowledge",
        )
        assert proc.returncode == 0, proc.stderr
        for line in out.read_text().splitlines():
            row = json.loads(line)
            assert "Knowledge:" not in row["input"]
            assert row["doc_ids"] == []

    def test_custom_manifest_path(self, pipeline, tmp_path):
        paths, _, _ = pipeline
        out = tmp_path / "train-m.jsonl"
        manifest = tmp_path / "custom-manifest.json"
        proc = run_cli(
            "emit-train", "--index", str(paths["index"]),
            "--rationales", str(DATA_DIR / "rationales.jsonl"),
            "--out", str(out), "--manifest-out", str(manifest),
        )
        assert proc.returncode == 0, proc.stderr
        assert json.loads(manifest.read_text())["command"] == "emit-train"


class TestEvalOptions:
    def test_all_silver_mode_not_above_any_mode(self, pipeline, tmp_path):
        paths, _, _ = pipeline
        strict_out = tmp_path / "metrics-strict.json"
        proc = run_cli(
            "eval", "--index", str(paths["index"]),
            "--rationales", str(DATA_DIR / "rationales.jsonl"),
            "--retrieved", str(paths["retrieved"]), "--ks", "1,3",
            "--all-silver", "--out", str(strict_out),
        )
        assert proc.returncode == 0, proc.stderr
        strict = json.loads(strict_out.read_text())
        loose = json.loads(paths["metrics"].read_text())
        assert strict["mode"] == "all"
        for k in ("1", "3"):
            assert strict["hits"][k] <= loose["hits"][k]


class TestEvalPredictions:
    def test_accuracy_from_predictions_file(self, tmp_path):
        preds = tmp_path / "preds.jsonl"
        rows = [
            {"id": "e1", "texts": ["x Answer: B", "y Answer: B"], "gold": "B"},
            {"id": "e2", "texts": ["no declaration"], "gold": "A"},
        ]
        preds.write_text("".join(json.dumps(r) + "\n" for r in rows))
        proc = run_cli("eval", "--predictions", str(preds))
        assert proc.returncode == 0
        report = json.loads(proc.stdout)
        assert report["accuracy"] == 0.5


class TestSimulateCommand:
    def test_default_small_run_prints_report(self):
        proc = run_cli(
            "simulate", "--N", "6", "--n", "12", "--d", "16", "--R", "4",
            "--eps", "0.2", "--trials", "5", "--tests", "20", "--quiet",
        )
        assert proc.returncode == 0
        report = json.loads(proc.stdout)
        assert report["config"]["N"] == 6
        assert 0.0 <= report["err_phi"] <= 1.0

    def test_sweep_emits_csv(self, tmp_path):
        out = tmp_path / "sweep.csv"
        proc = run_cli(
            "simulate", "--N", "4", "--n", "8", "--d", "12", "--eps", "0.2",
            "--trials", "3", "--tests", "10", "--sweep", "R=0:4:2", "--out", str(out),
        )
        assert proc.returncode == 0
        lines = out.read_text().splitlines()
        assert lines[0].startswith("param,value,m,")
        assert len(lines) == 4  # header + R in {0, 2, 4}

    def test_same_seed_same_output(self):
        args = ("simulate", "--N", "4", "--n", "8", "--d", "12", "--R", "2",
                "--eps", "0.2", "--trials", "4", "--tests", "25", "--seed", "77")
        assert run_cli(*args).stdout == run_cli(*args).stdout

    def test_eps_sweep(self, tmp_path):
        out = tmp_path / "sweep.csv"
        proc = run_cli(
            "simulate", "--N", "4", "--n", "8", "--d", "12", "--R", "2",
            "--trials", "3", "--tests", "10", "--sweep", "eps=0.1:0.3:0.1",
            "--out", str(out),
        )
        assert proc.returncode == 0, proc.stderr
        assert len(out.read_text().splitlines()) == 4
