import json
import shutil
import zipfile
from pathlib import Path

import pytest

from slavner.cli import main
from slavner.corpus import read_conll
from slavner.submission import validate_submission

FIXTURES = Path(__file__).parent / "fixtures"
SHARED = FIXTURES / "shared_task"
EVAL = FIXTURES / "eval"


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """Converted fixture plus two briefly trained checkpoints."""
    root = tmp_path_factory.mktemp("cli")
    assert run("convert", SHARED, root / "train.conll", "--lemma-examples", root / "lemmas.tsv") == 0
    assert run("train-ner", "--train", root / "train.conll", "--out", root / "ner", "--epochs", 2) == 0
    assert run("train-lemma", "--examples", root / "lemmas.tsv", "--out", root / "lem", "--epochs", 2) == 0
    return root


class TestConvert:
    def test_output_readable(self, workdir):
        sents = read_conll((workdir / "train.conll").read_bytes())
        assert len(sents) > 0
        assert (workdir / "train.conll.unmatched.tsv").read_bytes() == b""

    def test_rerun_identical(self, workdir, tmp_path):
        assert run("convert", SHARED, tmp_path / "again.conll") == 0
        assert (tmp_path / "again.conll").read_bytes() == (workdir / "train.conll").read_bytes()

    def test_malformed_file_named(self, tmp_path, capsys):
        shutil.copytree(SHARED, tmp_path / "st")
        bad = tmp_path / "st" / "annotated" / "cs" / "cs-synthetic-2.out"
        bad.write_text("cs-synthetic-2\nPraha\tPraha\tCITY\n")
        assert run("convert", tmp_path / "st", tmp_path / "x.conll") == 1
        assert "cs-synthetic-2.out" in capsys.readouterr().err
        assert not (tmp_path / "x.conll").exists()

    def test_missing_dir(self, tmp_path, capsys):
        assert run("convert", tmp_path / "nope", tmp_path / "x.conll") == 1
        assert capsys.readouterr().err.startswith("error:")

    def test_output_root(self, tmp_path, monkeypatch):
        monkeypatch.setenv("SLAVNER_OUTPUT_ROOT", str(tmp_path))
        assert run("convert", SHARED, "rel.conll") == 0
        assert (tmp_path / "rel.conll").exists()


class TestAdapt:
    def test_ner(self, tmp_path):
        assert run("adapt", "wikineural", tmp_path / "w.conll", FIXTURES / "external" / "wikineural.tsv") == 0
        (s,) = read_conll((tmp_path / "w.conll").read_bytes())
        assert "B-MISC" not in s.tags and s.tags[3] == "O"

    def test_lemma_needs_language(self, tmp_path):
        assert run("adapt", "sejf", tmp_path / "s.tsv", FIXTURES / "external" / "sejf_pl.dic") == 1

    def test_lemma(self, tmp_path, capsys):
        path = FIXTURES / "external" / "poleval2019_pl.tsv"
        assert run("adapt", "poleval2019", tmp_path / "p.tsv", path, "--language", "pl") == 0
        assert "skipped 1, duplicates 1" in capsys.readouterr().out
        assert len((tmp_path / "p.tsv").read_text().splitlines()) == 4

    def test_missing_input(self, tmp_path):
        assert run("adapt", "polyglot", tmp_path / "x", tmp_path / "none.tsv") == 1


class TestTrain:
    def test_checkpoint_manifest(self, workdir):
        manifest = json.loads((workdir / "ner" / "manifest.json").read_text())
        assert manifest["config"]["epochs"] == 2 and manifest["metrics"]["seed"] == 13
        lem = json.loads((workdir / "lem" / "manifest.json").read_text())
        assert lem["metrics"]["tier"] == "lexicon" and lem["metrics"]["pairs"] == 24

    def test_missing_corpus_no_checkpoint(self, tmp_path):
        assert run("train-ner", "--train", tmp_path / "none.conll", "--out", tmp_path / "ner") == 1
        assert not (tmp_path / "ner").exists()

    def test_bad_config_before_training(self, workdir, tmp_path, capsys):
        assert run("train-ner", "--train", workdir / "train.conll", "--out", tmp_path / "n", "--epochs", 0) == 1
        assert "epochs" in capsys.readouterr().err
        assert not (tmp_path / "n").exists()

    def test_same_seed_same_metrics(self, workdir, tmp_path):
        for name in ("a", "b"):
            assert run("train-ner", "--train", workdir / "train.conll", "--out", tmp_path / name, "--epochs", 2) == 0
        metrics = [json.loads((tmp_path / n / "manifest.json").read_text())["metrics"] for n in "ab"]
        assert metrics[0] == metrics[1]

    def test_config_file(self, workdir, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text(f"# desk run\nepochs = 1\nbatch-size = 4\ntrain = {workdir / 'train.conll'}\n")
        assert run("train-ner", "--config", cfg, "--out", tmp_path / "n") == 0
        manifest = json.loads((tmp_path / "n" / "manifest.json").read_text())
        assert manifest["config"]["epochs"] == 1 and manifest["config"]["batch_size"] == 4

    def test_flag_beats_config(self, workdir, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("epochs = 5\n")
        assert run("train-ner", "--config", cfg, "--train", workdir / "train.conll", "--out", tmp_path / "n",
                   "--epochs", 1) == 0
        assert json.loads((tmp_path / "n" / "manifest.json").read_text())["config"]["epochs"] == 1

    def test_unknown_config_key(self, tmp_path, capsys):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("colour = blue\n")
        assert run("train-ner", "--config", cfg, "--out", tmp_path / "n") == 1
        assert "colour" in capsys.readouterr().err

    def test_unknown_tier(self, workdir, tmp_path):
        assert run("train-lemma", "--examples", workdir / "lemmas.tsv", "--out", tmp_path / "l", "--tier", "all") == 1


class TestPredict:
    def test_missing_checkpoint(self, tmp_path, capsys):
        assert run("predict", SHARED / "raw", "--out", tmp_path / "p", "--preset", "system2") == 1
        assert "multilingual-large" in capsys.readouterr().err

    def test_runs_and_packages(self, workdir, tmp_path):
        out = tmp_path / "pred"
        args = ("predict", SHARED / "raw", "--out", out, "--preset", "system2",
                "--ner-model", workdir / "ner", "--lemma-model", workdir / "lem")
        assert run(*args) == 0
        files = sorted(p.relative_to(out).as_posix() for p in out.rglob("*.out"))
        assert files == [f"{lang}/{lang}-synthetic-{k}.out" for lang in ("cs", "pl", "ru") for k in (1, 2)]
        for lang in ("pl", "cs", "ru"):
            first = (out / lang / f"{lang}-synthetic-1.out").read_text().splitlines()[0]
            assert first == f"{lang}-synthetic-1"
        zips = [tmp_path / "a.zip", tmp_path / "b.zip"]
        for z in zips:
            assert run("package-submission", out, "--preset", "system2", "--out", z, "--raw-dir", SHARED / "raw") == 0
        assert zips[0].read_bytes() == zips[1].read_bytes()
        assert validate_submission(zips[0].read_bytes()) == []
        assert run("validate-submission", zips[0]) == 0

    def test_role_binding_from_config(self, workdir, tmp_path):
        cfg = tmp_path / "roles.cfg"
        lines = [f"role.{r} = {workdir / 'ner'}" for r in ("pl-monolingual-large", "cs-monolingual", "ru-monolingual")]
        lines += [f"role.{r} = {workdir / 'lem'}" for r in ("pl-t5-large", "mt5-large")]
        cfg.write_text("\n".join(lines) + "\n")
        assert run("predict", SHARED / "raw", "--config", cfg, "--out", tmp_path / "p", "--preset", "system1") == 0


class TestEvaluate:
    def scores(self, tmp_path, *flags):
        assert run("evaluate", EVAL / "gold", EVAL / "pred", *flags, "--out", tmp_path) == 0
        return tmp_path

    def test_mention_case_insensitive(self, tmp_path, capsys):
        out = self.scores(tmp_path, "--mention-f1")
        report = json.loads((out / "mention_f1_ci-pl.json").read_text())
        assert report["micro"] == {"tp": 3, "fp": 2, "fn": 3, "precision": 60.0, "recall": 50.0, "f1": 54.55}
        assert report["categories"]["PRO"] == {"tp": 0, "fp": 0, "fn": 2, "precision": 0.0, "recall": 0.0, "f1": 0.0}
        assert "54.55" in capsys.readouterr().out

    def test_mention_case_sensitive(self, tmp_path):
        out = self.scores(tmp_path, "--mention-f1", "--case-sensitive")
        report = json.loads((out / "mention_f1_cs-pl.json").read_text())
        assert report["micro"] == {"tp": 2, "fp": 3, "fn": 4, "precision": 40.0, "recall": 33.33, "f1": 36.36}

    def test_lemma_em(self, tmp_path):
        out = self.scores(tmp_path, "--lemma-em")
        report = json.loads((out / "lemma_em-pl.json").read_text())
        assert report["n_pairs"] == 3 and round(100 * report["accuracy"], 2) == 66.67

    def test_identity(self, tmp_path, capsys):
        assert run("evaluate", EVAL / "gold", EVAL / "gold", "--mention-f1", "--format", "json") == 0
        assert json.loads(capsys.readouterr().out)["micro"]["f1"] == 100.0

    def test_span_f1(self, workdir, capsys):
        conll = workdir / "train.conll"
        assert run("evaluate", conll, conll, "--span-f1") == 0
        assert "100.00" in capsys.readouterr().out

    def test_empty_pred_dir(self, tmp_path):
        assert run("evaluate", EVAL / "gold", tmp_path, "--mention-f1") == 1

    def test_unmatched_ids_listed(self, tmp_path, capsys):
        shutil.copytree(EVAL / "pred", tmp_path / "pred")
        (tmp_path / "pred" / "pl" / "c.out").unlink()
        assert run("evaluate", EVAL / "gold", tmp_path / "pred", "--mention-f1") == 1
        assert "c" in capsys.readouterr().err.split(":")[-1]


class TestPackage:
    def test_missing_documents(self, tmp_path, capsys):
        shutil.copytree(EVAL / "pred", tmp_path / "pred")
        raw = tmp_path / "raw" / "pl"
        raw.mkdir(parents=True)
        for d in ("a", "b", "c", "d"):
            (raw / f"{d}.txt").write_text(f"{d}\npl\nx\ny\nT\nbody\n")
        assert run("package-submission", tmp_path / "pred", "--preset", "system1", "--out", tmp_path / "s.zip",
                   "--raw-dir", tmp_path / "raw") == 1
        assert "pl/d.out" in capsys.readouterr().err
        assert not (tmp_path / "s.zip").exists()

    def test_two_entries(self, tmp_path):
        pred = tmp_path / "pred" / "pl"
        pred.mkdir(parents=True)
        (pred / "a.out").write_text("a\n")
        (pred / "b.out").write_text("b\nNATO\tNATO\tORG\t0\n")
        assert run("package-submission", tmp_path / "pred", "--preset", "system3", "--out", tmp_path / "s.zip") == 0
        with zipfile.ZipFile(tmp_path / "s.zip") as zf:
            assert sorted(zf.namelist()) == ["MANIFEST.json", "pl/a.out", "pl/b.out"]

    def test_validate_rejects(self, tmp_path, capsys):
        bad = tmp_path / "bad.zip"
        bad.write_bytes(b"not a zip")
        assert run("validate-submission", bad) == 1
        assert "not a zip archive" in capsys.readouterr().err

    def test_no_preset(self, tmp_path):
        assert run("package-submission", EVAL / "pred", "--out", tmp_path / "s.zip") == 1
