import csv
import json

import numpy as np
import pytest

from conceptgcn.cli import main
from conceptgcn.graph_data import load_json_graph, save_json_graph
from conceptgcn.synthetic import make_synthetic_graph

FAST = ["--epochs", "12", "--phase1-epochs", "6", "--hidden", "6", "--seed", "5",
        "--batch-size", "32", "--graph-size", "12", "--ratio-node", "0.4"]


def run_train(tmp_path, out_name="run", extra=()):
    out = tmp_path / out_name
    code = main(["train", "--dataset", "synthetic", "--out", str(out), *FAST, *extra])
    assert code == 0
    return out


def read_metrics_without_wall(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    drop = rows[0].index("wall_ms")
    return [tuple(v for i, v in enumerate(row) if i != drop) for row in rows]


class TestTrain:
    def test_writes_expected_artifacts(self, tmp_path):
        out = run_train(tmp_path)
        for name in ("manifest.json", "metrics.csv", "stage1.bin", "stage2.bin",
                     "concept_graph.json"):
            assert (out / name).is_file(), name

    def test_unknown_dataset_exits_2(self, tmp_path, capsys):
        code = main(["train", "--dataset", "nonexistent", "--out", str(tmp_path / "x")])
        assert code == 2
        assert "nonexistent" in capsys.readouterr().err

    def test_bad_config_exits_2(self, tmp_path):
        code = main(["train", "--dataset", "synthetic", "--out", str(tmp_path / "x"),
                     "--momentum", "1.5"])
        assert code == 2

    def test_manifest_holds_resolved_config_and_stats(self, tmp_path):
        out = run_train(tmp_path)
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["epochs"] == 12
        assert manifest["config"]["hidden"] == 6
        assert manifest["dataset_stats"]["nodes"] == 300
        assert manifest["model"] == "pipeline"
        assert set(manifest["final"]) == {"train_acc", "val_acc", "test_acc"}

    def test_metrics_row_count_equals_epochs(self, tmp_path):
        out = run_train(tmp_path)
        rows = read_metrics_without_wall(out / "metrics.csv")
        assert len(rows) - 1 == 12

    def test_idempotent_outputs(self, tmp_path):
        a = run_train(tmp_path, "a")
        b = run_train(tmp_path, "b")
        assert read_metrics_without_wall(a / "metrics.csv") == \
               read_metrics_without_wall(b / "metrics.csv")
        assert (a / "stage1.bin").read_bytes() == (b / "stage1.bin").read_bytes()
        assert (a / "stage2.bin").read_bytes() == (b / "stage2.bin").read_bytes()
        assert (a / "concept_graph.json").read_bytes() == (b / "concept_graph.json").read_bytes()
        ma = json.loads((a / "manifest.json").read_text())
        mb = json.loads((b / "manifest.json").read_text())
        for key in ("created_utc", "finished_utc"):
            ma.pop(key), mb.pop(key)
        assert ma == mb

    def test_baseline_model_mode(self, tmp_path):
        out = tmp_path / "bl"
        code = main(["train", "--dataset", "synthetic", "--out", str(out),
                     "--model", "baseline", "--epochs", "10", "--hidden", "6",
                     "--seed", "2", "--batch-size", "32"])
        assert code == 0
        assert (out / "baseline.bin").is_file()
        assert not (out / "stage1.bin").exists()

    def test_with_baseline_summary(self, tmp_path, capsys):
        run_train(tmp_path, "cmp", extra=["--with-baseline"])
        stdout = capsys.readouterr().out
        assert "pipeline test_acc=" in stdout
        assert "baseline test_acc=" in stdout

    def test_config_file_and_flag_precedence(self, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({"epochs": 9, "hidden": 5, "phase1_epochs": 4,
                                        "batch_size": 32, "graph_size": 12,
                                        "ratio_node": 0.4, "seed": 1}))
        out = tmp_path / "prec"
        code = main(["train", "--dataset", "synthetic", "--out", str(out),
                     "--config", str(cfg_path), "--hidden", "7"])
        assert code == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["epochs"] == 9      # from file
        assert manifest["config"]["hidden"] == 7      # flag beats file

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_numeric_blowup_exits_3(self, tmp_path):
        code = main(["train", "--dataset", "synthetic", "--out", str(tmp_path / "boom"),
                     "--epochs", "6", "--phase1-epochs", "3", "--hidden", "6",
                     "--seed", "1", "--batch-size", "32", "--graph-size", "10",
                     "--ratio-node", "0.4", "--learning-rate", "1e9"])
        assert code == 3

    def test_env_var_sets_data_root(self, tmp_path, monkeypatch):
        from conceptgcn.datasets import data_root
        monkeypatch.setenv("CONCEPTGCN_DATA_DIR", str(tmp_path / "elsewhere"))
        assert data_root() == tmp_path / "elsewhere"
        assert data_root("explicit") == __import__("pathlib").Path("explicit")

    def test_json_graph_path_as_dataset(self, tmp_path):
        g = make_synthetic_graph(n=80, m=16, c=3, seed=2)
        path = tmp_path / "toy.json"
        save_json_graph(g, path)
        out = tmp_path / "fromjson"
        code = main(["train", "--dataset", str(path), "--out", str(out),
                     "--epochs", "8", "--phase1-epochs", "4", "--hidden", "5",
                     "--seed", "1", "--batch-size", "32", "--graph-size", "10",
                     "--ratio-node", "0.3"])
        assert code == 0


class TestEval:
    def test_eval_prints_three_accuracies(self, tmp_path, capsys):
        out = run_train(tmp_path)
        capsys.readouterr()
        code = main(["eval", "--run", str(out)])
        assert code == 0
        text = capsys.readouterr().out
        for key in ("train_acc=", "val_acc=", "test_acc="):
            assert key in text

    def test_eval_json_keys_and_ranges(self, tmp_path, capsys):
        out = run_train(tmp_path)
        capsys.readouterr()
        assert main(["eval", "--run", str(out), "--json"]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert set(payload) == {"train_acc", "val_acc", "test_acc"}
        assert all(0.0 <= v <= 1.0 for v in payload.values())

    def test_eval_matches_training_summary(self, tmp_path, capsys):
        out = run_train(tmp_path)
        manifest = json.loads((out / "manifest.json").read_text())
        capsys.readouterr()
        main(["eval", "--run", str(out), "--json"])
        payload = json.loads(capsys.readouterr().out)
        for key, value in payload.items():
            assert abs(value - manifest["final"][key]) < 1e-12

    def test_eval_twice_identical(self, tmp_path, capsys):
        out = run_train(tmp_path)
        capsys.readouterr()
        main(["eval", "--run", str(out), "--json"])
        first = capsys.readouterr().out
        main(["eval", "--run", str(out), "--json"])
        second = capsys.readouterr().out
        assert first == second

    def test_missing_run_exits_2(self, tmp_path):
        assert main(["eval", "--run", str(tmp_path / "absent")]) == 2

    def test_missing_model_file_exits_2(self, tmp_path):
        out = run_train(tmp_path)
        (out / "stage2.bin").unlink()
        assert main(["eval", "--run", str(out)]) == 2


class TestExport:
    def test_embeddings_row_count(self, tmp_path):
        out = run_train(tmp_path)
        dest = tmp_path / "emb.csv"
        assert main(["export", "--run", str(out), "--what", "embeddings",
                     "--out", str(dest)]) == 0
        lines = dest.read_text().strip().splitlines()
        assert len(lines) - 1 == 300
        assert lines[0].startswith("node_name,label,pca_x,pca_y")

    def test_predictions_columns(self, tmp_path):
        out = run_train(tmp_path)
        dest = tmp_path / "pred.csv"
        assert main(["export", "--run", str(out), "--what", "predictions",
                     "--out", str(dest)]) == 0
        lines = dest.read_text().strip().splitlines()
        assert len(lines) - 1 == 300
        header = lines[0].split(",")
        assert header[:2] == ["node_name", "label"]
        assert len(header) == 2 + 4  # four classes

    def test_curves_svg_and_csv(self, tmp_path):
        out = run_train(tmp_path)
        dest = tmp_path / "curves.svg"
        assert main(["export", "--run", str(out), "--what", "curves",
                     "--out", str(dest)]) == 0
        assert dest.is_file() and dest.read_text().startswith("<svg")
        rows = read_metrics_without_wall(dest.with_suffix(".csv"))
        assert len(rows) - 1 == 12

    def test_concept_graph_validates_against_schema(self, tmp_path):
        out = run_train(tmp_path)
        dest = tmp_path / "cg.json"
        assert main(["export", "--run", str(out), "--what", "concept-graph",
                     "--out", str(dest)]) == 0
        doc = json.loads(dest.read_text())
        assert "edge_weights" in doc
        assert len(doc["edge_weights"]) == len(doc["edges"])
        loaded = load_json_graph(dest)  # neutral schema accepts it
        assert loaded.n == 300

    def test_unknown_kind_exits_2(self, tmp_path):
        out = run_train(tmp_path)
        with pytest.raises(SystemExit) as exc:
            main(["export", "--run", str(out), "--what", "everything",
                  "--out", str(tmp_path / "x")])
        assert exc.value.code == 2


class TestStats:
    def test_synthetic_stats(self, capsys):
        assert main(["stats", "--dataset", "synthetic"]) == 0
        text = capsys.readouterr().out
        assert "nodes=300" in text and "classes=4" in text
        assert "class 0:" in text

    def test_stats_json(self, capsys):
        assert main(["stats", "--dataset", "synthetic", "--json"]) == 0
        payload = json.loads(capsys.readouterr().out)
        assert payload["nodes"] == 300
        assert sum(payload["class_histogram"]) == 300

    def test_unknown_dataset(self, capsys):
        assert main(["stats", "--dataset", "wat"]) == 2
