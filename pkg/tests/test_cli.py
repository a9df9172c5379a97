import re

import pytest

from sentimix.cli import cli_dispatch
from sentimix.corpus import read_manifest


def run(argv):
    return cli_dispatch(argv)


def _pipeline(imdb_tree, out_dir, seed=7):
    """Desk-scale full pipeline over the synthetic corpus."""
    out = str(out_dir)
    steps = [
        ["prepare", str(imdb_tree), "--out-dir", out, "--valid-fraction", "0.25",
         "--seed", str(seed)],
        ["train-ngram", "--out-dir", out, "--order", "3"],
        ["train-rnn", "--out-dir", out, "--hidden", "8", "--epochs", "2",
         "--vocab-cap", "500", "--seed", str(seed)],
        ["train-nbsvm", "--out-dir", out, "--n-max", "1"],
        ["train-nbsvm", "--out-dir", out, "--n-max", "2"],
        ["train-nbsvm", "--out-dir", out, "--n-max", "3"],
        ["train-pv", "--out-dir", out, "--dim", "8", "--epochs", "8",
         "--min-count", "2", "--seed", str(seed), "--infer-steps", "5"],
    ]
    for model in ("ngram", "rnn", "nbsvm1", "nbsvm2", "nbsvm3", "pv"):
        for split in ("valid", "test"):
            steps.append(["score", model, split, "--out-dir", out])
    steps += [
        ["ensemble-search", "--out-dir", out, "--models", "ngram,pv,nbsvm3"],
        ["ablate", "--out-dir", out, "--models", "ngram,pv,nbsvm3"],
        ["inspect-errors", "--out-dir", out, "--models", "ngram,pv,nbsvm3"],
        ["report", "--out-dir", out],
    ]
    for argv in steps:
        assert run(argv) == 0, f"stage failed: {argv}"


@pytest.fixture(scope="module")
def pipeline_dir(imdb_tree, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    _pipeline(imdb_tree, out)
    return out


class TestPipeline:
    def test_artifacts_exist(self, pipeline_dir):
        expected = [
            "cache/train.tsv", "cache/valid.tsv", "cache/test.tsv",
            "labels/test.tsv", "vocab/full.tsv",
            "models/ngram-pos.arpa", "models/ngram-neg.arpa",
            "models/rnn-pos.bin", "models/rnn-neg.bin", "models/rnn.log",
            "models/nbsvm3.npz", "models/nbsvm3-features.tsv",
            "models/pv.npz", "vectors/pv-train.tsv", "vectors/pv-train.bin",
            "scores/ngram-test.tsv", "scores/ngram-test.jsonl",
            "scores/pv-test.jsonl", "scores/nbsvm3-test.jsonl",
            "ensemble/weights.txt", "ensemble/search.tsv",
            "ensemble/ablation.tsv", "ensemble/errors.tsv",
            "results/report.txt", "manifest.txt",
        ]
        for rel in expected:
            assert (pipeline_dir / rel).exists(), rel

    def test_report_table_order(self, pipeline_dir):
        text = (pipeline_dir / "results/report.txt").read_text()
        names = [l.split("\t")[0] for l in text.splitlines()
                 if "\t" in l and not l.startswith("models")]
        individual = [n for n in names
                      if n in ("N-gram", "RNN-LM", "Sentence Vectors", "NB-SVM")]
        assert individual == ["N-gram", "RNN-LM", "Sentence Vectors", "NB-SVM"]
        nb_rows = [n for n in names if n.startswith("Unigrams")]
        assert nb_rows == ["Unigrams", "Unigrams+Bigrams", "Unigrams+Bigrams+Trigrams"]

    def test_grid_containment_on_validation(self, pipeline_dir, capsys):
        search = (pipeline_dir / "ensemble/search.tsv").read_text().splitlines()[1]
        ensemble_valid_acc = float(search.split("\t")[2])
        for model in ("ngram", "pv", "nbsvm3"):
            assert run(["evaluate", str(pipeline_dir / f"scores/{model}-valid.jsonl"),
                        str(pipeline_dir / "labels/valid.tsv")]) == 0
            acc = float(capsys.readouterr().out.strip().split()[1])
            assert ensemble_valid_acc >= acc - 1e-9

    def test_ablation_shape(self, pipeline_dir):
        lines = (pipeline_dir / "ensemble/ablation.tsv").read_text().splitlines()
        assert len(lines) == 1 + 4  # header + K leave-one-out + full
        assert lines[-1].startswith("ngram,pv,nbsvm3\t")

    def test_synthetic_accuracy_sane(self, pipeline_dir, capsys):
        assert run(["evaluate", str(pipeline_dir / "scores/nbsvm2-test.jsonl"),
                    str(pipeline_dir / "labels/test.tsv")]) == 0
        acc = float(capsys.readouterr().out.strip().split()[1])
        assert acc >= 0.8  # the synthetic corpus is deliberately separable

    def test_manifest_records_stages(self, pipeline_dir):
        manifest = read_manifest(pipeline_dir / "manifest.txt")
        assert manifest["prepare.seed"] == "7"
        assert "train-ngram.wall_time_s" in manifest
        assert any(k.startswith("prepare.digest.") for k in manifest)

    def test_report_never_retrains(self, pipeline_dir, capsys):
        """report consumes stored artifacts only; models can be absent."""
        models_dir = pipeline_dir / "models"
        hidden = pipeline_dir / "models-hidden"
        models_dir.rename(hidden)
        try:
            assert run(["report", "--out-dir", str(pipeline_dir)]) == 0
            out = capsys.readouterr().out
            assert "N-gram" in out
        finally:
            hidden.rename(models_dir)

    def test_scores_reload_identical_accuracy(self, pipeline_dir, capsys):
        """Serialization fidelity: evaluating the stored file twice agrees."""
        args = ["evaluate", str(pipeline_dir / "scores/nbsvm3-test.jsonl"),
                str(pipeline_dir / "labels/test.tsv")]
        assert run(args) == 0
        first = capsys.readouterr().out
        assert run(args) == 0
        assert capsys.readouterr().out == first


class TestExitCodes:
    def test_score_before_train_is_3(self, imdb_tree, tmp_path, capsys):
        out = str(tmp_path / "fresh")
        assert run(["prepare", str(imdb_tree), "--out-dir", out, "--subset", "4"]) == 0
        capsys.readouterr()
        assert run(["score", "ngram", "test", "--out-dir", out]) == 3
        err = capsys.readouterr().err
        assert err.startswith("error: missing artifact:")
        assert "\n" not in err.strip()

    def test_unknown_subcommand_is_2(self):
        with pytest.raises(SystemExit) as exc:
            run(["frobnicate"])
        assert exc.value.code == 2

    def test_unknown_flag_is_2(self):
        with pytest.raises(SystemExit) as exc:
            run(["report", "--no-such-flag", "x", "--out-dir", "y"])
        assert exc.value.code == 2

    def test_evaluate_counting_format(self, tmp_path, capsys):
        """9,257 agreeing documents out of 10,000 prints 'accuracy 0.9257'."""
        import json
        scores = tmp_path / "s.jsonl"
        labels = tmp_path / "l.tsv"
        with open(scores, "w") as sf, open(labels, "w") as lf:
            for i in range(10000):
                truth = "positive" if i % 2 == 0 else "negative"
                correct = i >= 743
                p = (0.9 if truth == "positive" else 0.1) if correct else \
                    (0.1 if truth == "positive" else 0.9)
                sf.write(json.dumps({"id": f"d{i}", "model": "m", "p_pos": p}) + "\n")
                lf.write(f"d{i}\t{truth}\n")
        assert run(["evaluate", str(scores), str(labels)]) == 0
        out = capsys.readouterr().out
        assert out == "accuracy 0.9257\n"
        assert re.fullmatch(r"accuracy \d\.\d{4}\n", out)

    def test_missing_scores_file_is_3(self, tmp_path, capsys):
        assert run(["evaluate", str(tmp_path / "none.jsonl"),
                    str(tmp_path / "none.tsv")]) == 3


class TestUnsupPath:
    def test_prepare_and_train_pv_with_unsup(self, tmp_path, capsys):
        from synth import build_imdb_tree
        tree = build_imdb_tree(tmp_path / "imdb", n_per_leaf=10, seed=3, n_unsup=15)
        out = str(tmp_path / "run")
        assert run(["prepare", str(tree), "--out-dir", out, "--with-unsup"]) == 0
        assert (tmp_path / "run" / "cache" / "unsup.tsv").exists()
        assert run(["train-pv", "--out-dir", out, "--dim", "4", "--epochs", "2",
                    "--min-count", "2", "--use-unsup"]) == 0
        assert "31 documents" in capsys.readouterr().out  # 16 labeled train + 15 unsup

    def test_use_unsup_without_cache_is_3(self, imdb_tree, tmp_path, capsys):
        out = str(tmp_path / "run")
        assert run(["prepare", str(imdb_tree), "--out-dir", out, "--subset", "4"]) == 0
        assert run(["train-pv", "--out-dir", out, "--dim", "4", "--epochs", "1",
                    "--min-count", "1", "--use-unsup"]) == 3


class TestConfigFile:
    def test_config_supplies_defaults_flags_override(self, imdb_tree, tmp_path,
                                                     capsys):
        out = str(tmp_path / "cfg-run")
        cfg = tmp_path / "run.cfg"
        cfg.write_text("subset=3\nseed=5\n")
        assert run(["prepare", str(imdb_tree), "--out-dir", out,
                    "--config", str(cfg)]) == 0
        manifest = read_manifest(tmp_path / "cfg-run" / "manifest.txt")
        assert manifest["prepare.seed"] == "5"
        assert manifest["prepare.n_test"] == "6"  # 3 per class from config
        out2 = str(tmp_path / "cfg-run2")
        assert run(["prepare", str(imdb_tree), "--out-dir", out2,
                    "--config", str(cfg), "--seed", "9"]) == 0
        manifest2 = read_manifest(tmp_path / "cfg-run2" / "manifest.txt")
        assert manifest2["prepare.seed"] == "9"
