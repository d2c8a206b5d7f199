"""End-to-end command-line tests on a small generated dataset."""

import json

import numpy as np
import pytest

from newscap.cli import main
from newscap.dataio import save_dataset, write_features
from newscap.embeddings import save_kb
from newscap.fixtures import make_mini_kb, make_news_dataset


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cliws")
    records, features = make_news_dataset(12, seed=3, image_dim=8)
    save_dataset(records, root / "data.jsonl")
    write_features(root / "features.jgft", features)
    save_kb(make_mini_kb(n_entities=5, n_docs=10, seed=0), root / "kb.jsonl")

    assert main(["preprocess", "--dataset", str(root / "data.jsonl"),
                 "--out", str(root / "vocab"), "--vocab-size", "360"]) == 0
    assert main(["train-nee", "--kb", str(root / "kb.jsonl"),
                 "--out", str(root / "emb.jgve"), "--dim", "12",
                 "--epochs", "2", "--negatives", "3"]) == 0
    train_args = ["train", "--dataset", str(root / "data.jsonl"),
                  "--vocab-dir", str(root / "vocab"),
                  "--embeddings", str(root / "emb.jgve"),
                  "--features", str(root / "features.jgft"),
                  "--out", str(root / "model.jgck"),
                  "--epochs", "2", "--d-model", "16", "--d-text", "16",
                  "--heads", "2", "--head-hidden", "16", "--max-len", "16",
                  "--seed", "0"]
    assert main(train_args) == 0
    return {"root": root, "train_args": train_args}


def gen_args(ws, *extra):
    root = ws["root"]
    return ["generate", "--checkpoint", str(root / "model.jgck"),
            "--dataset", str(root / "data.jsonl"),
            "--vocab-dir", str(root / "vocab"),
            "--embeddings", str(root / "emb.jgve"),
            "--features", str(root / "features.jgft"),
            "--split", "train", "--max-len", "8", *extra]


class TestGenerate:
    def test_manual_template_maps_to_fixed_order(self, workspace, capsys):
        assert main(gen_args(workspace, "--mode", "manual",
                             "--template", "who,context")) == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 12
        first = json.loads(lines[0])
        assert first["components"] == [1.0, 0.0, 0.0, 0.0, 1.0]
        assert first["mode"] == "manual"

    def test_oracle_components_match_gold_caption(self, workspace, capsys):
        assert main(gen_args(workspace, "--mode", "oracle")) == 0
        out = capsys.readouterr().out.strip().splitlines()
        from newscap.resources import default_annotator
        from newscap.template import extract_components
        ann = default_annotator()
        from newscap.dataio import load_dataset
        records = {r.id: r for r in load_dataset(workspace["root"] / "data.jsonl")}
        for line in out:
            obj = json.loads(line)
            _, spans, tags = ann.annotate(records[obj["id"]].caption)
            expected = extract_components(spans, tags).values.tolist()
            assert obj["components"] == expected

    def test_zero_out_and_beam_run(self, workspace, capsys):
        assert main(gen_args(workspace, "--mode", "auto", "--zero-out", "text",
                             "--beam", "2")) == 0
        assert len(capsys.readouterr().out.strip().splitlines()) == 12


class TestEvaluate:
    def test_references_against_themselves(self, workspace, capsys, tmp_path):
        from newscap.dataio import load_dataset
        records = load_dataset(workspace["root"] / "data.jsonl")
        gen = tmp_path / "gen.jsonl"
        gen.write_text("\n".join(json.dumps({"id": r.id, "caption": r.caption})
                                 for r in records) + "\n", encoding="utf-8")
        assert main(["evaluate", "--generated", str(gen),
                     "--dataset", str(workspace["root"] / "data.jsonl")]) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["bleu4"] == pytest.approx(1.0)
        assert report["cider_d"] == pytest.approx(10.0, abs=1e-6)

    def test_unknown_id_fails(self, workspace, tmp_path, capsys):
        gen = tmp_path / "gen.jsonl"
        gen.write_text(json.dumps({"id": "nope", "caption": "x"}) + "\n")
        assert main(["evaluate", "--generated", str(gen),
                     "--dataset", str(workspace["root"] / "data.jsonl")]) == 1
        assert capsys.readouterr().err.startswith("error:")


class TestStats:
    def test_tsv_tables(self, workspace, capsys):
        assert main(["stats", "--dataset", str(workspace["root"] / "data.jsonl")]) == 0
        out = capsys.readouterr().out
        assert out.startswith("component\tpercentage")
        assert "class_id\tcomponents\tpercentage" in out
        class_rows = [line for line in out.strip().splitlines()
                      if line and line[0].isdigit()]
        total = sum(float(line.split("\t")[2]) for line in class_rows)
        assert total == pytest.approx(100.0, abs=0.05)


class TestErrorPaths:
    def test_unknown_flag_is_usage_error(self, workspace, capsys):
        with pytest.raises(SystemExit) as err:
            main(gen_args(workspace, "--frobnicate"))
        assert err.value.code == 2
        assert capsys.readouterr().err.startswith("error:")

    def test_bad_template_component(self, workspace, capsys):
        assert main(gen_args(workspace, "--mode", "manual",
                             "--template", "who,banana")) == 2
        assert capsys.readouterr().err.startswith("error:")

    def test_missing_dataset_file(self, capsys):
        assert main(["stats", "--dataset", "/nonexistent/x.jsonl"]) == 1
        err = capsys.readouterr().err
        assert err.startswith("error:") and "\n" not in err.strip("\n")

    def test_manual_without_template(self, workspace, capsys):
        assert main(gen_args(workspace, "--mode", "manual")) == 1
        assert capsys.readouterr().err.startswith("error:")


class TestDeterminism:
    def test_train_twice_identical_checkpoint(self, workspace):
        root = workspace["root"]
        args = list(workspace["train_args"])
        out_a = str(root / "det_a.jgck")
        out_b = str(root / "det_b.jgck")
        a_args = [x if x != str(root / "model.jgck") else out_a for x in args]
        b_args = [x if x != str(root / "model.jgck") else out_b for x in args]
        assert main(a_args) == 0
        assert main(b_args) == 0
        assert (root / "det_a.jgck").read_bytes() == (root / "det_b.jgck").read_bytes()

    def test_generate_twice_identical(self, workspace, tmp_path):
        out_a = tmp_path / "a.jsonl"
        out_b = tmp_path / "b.jsonl"
        assert main(gen_args(workspace, "--mode", "oracle", "--out", str(out_a))) == 0
        assert main(gen_args(workspace, "--mode", "oracle", "--out", str(out_b))) == 0
        assert out_a.read_bytes() == out_b.read_bytes()


def test_data_dir_env_resolves_relative_paths(workspace, monkeypatch, capsys):
    monkeypatch.setenv("JOGANIC_DATA_DIR", str(workspace["root"]))
    monkeypatch.chdir(workspace["root"].parent)
    assert main(["stats", "--dataset", "data.jsonl"]) == 0
    assert capsys.readouterr().out.startswith("component")
