import hashlib
import json

import pytest

from dgxplain.cli import main
from dgxplain.data import relevance_map_from_json


def sha(path):
    return hashlib.sha256(path.read_bytes()).hexdigest()


def run(*argv):
    return main(list(argv))


def synth(out, seed=0, extra=()):
    return run("synth", "--nodes", "8", "--steps", "3", "--seed", str(seed),
               "--out", str(out), *extra)


class TestSynth:
    def test_file_contract(self, tmp_path):
        out = tmp_path / "ds"
        assert synth(out) == 0
        for name in ("graph.json", "labels.json", "truth.json", "manifest.json"):
            assert (out / name).exists(), name
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["command"] == "synth"
        assert manifest["seeds"] == [0]
        assert manifest["outputs"] == ["graph.json", "labels.json", "truth.json"]
        assert "/" not in "".join(manifest["outputs"])

    def test_same_flags_same_bytes(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        synth(a, seed=5)
        synth(b, seed=5)
        for name in ("graph.json", "labels.json", "truth.json", "manifest.json"):
            assert sha(a / name) == sha(b / name), name

    def test_different_seed_different_graph(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        synth(a, seed=1)
        synth(b, seed=2)
        assert sha(a / "graph.json") != sha(b / "graph.json")

    def test_planted_out_of_range_fails(self, tmp_path, capsys):
        code = run("synth", "--nodes", "8", "--planted", "99",
                   "--out", str(tmp_path / "x"))
        assert code == 1
        assert "error:" in capsys.readouterr().err


class TestTrain:
    def test_epochs_zero_rejected(self, tmp_path, capsys):
        ds = tmp_path / "ds"
        synth(ds)
        code = run("train", "--dataset", str(ds), "--epochs", "0",
                   "--out", str(tmp_path / "m"))
        assert code == 1
        assert "error:" in capsys.readouterr().err

    def test_missing_dataset(self, tmp_path, capsys):
        code = run("train", "--dataset", str(tmp_path / "nope"),
                   "--out", str(tmp_path / "m"))
        assert code == 1


class TestExplain:
    def test_unknown_method_rejected_by_parser(self, tmp_path):
        with pytest.raises(SystemExit):
            run("explain", "--dataset", "x", "--weights", "y",
                "--method", "shapley", "--out", str(tmp_path))


class TestPipeline:
    def test_full_pipeline_and_determinism(self, tmp_path):
        ds = tmp_path / "ds"
        assert synth(ds, seed=3) == 0
        model = tmp_path / "model"
        assert run("train", "--dataset", str(ds), "--epochs", "15",
                   "--hidden", "8", "--gcn-dims", "8", "8",
                   "--out", str(model)) == 0
        assert (model / "weights.bin").exists()
        loss_lines = (model / "loss.csv").read_text().splitlines()
        assert loss_lines[0] == "epoch,loss" and len(loss_lines) == 16

        rel_dirs = {}
        for method in ("dgx", "sa", "gradinput"):
            out = tmp_path / f"rel_{method}"
            assert run("explain", "--dataset", str(ds),
                       "--weights", str(model / "weights.bin"),
                       "--method", method, "--out", str(out)) == 0
            rel_dirs[method] = out
            rmap = relevance_map_from_json((out / "relevance.json").read_text())
            assert rmap.method == method

        ev = tmp_path / "eval"
        assert run("evaluate", "--dataset", str(ds),
                   "--weights", str(model / "weights.bin"),
                   "--relevance",
                   *(str(d / "relevance.json") for d in rel_dirs.values()),
                   "--perturb-seeds", "2", "--out", str(ev)) == 0
        reports = sorted(p.name for p in ev.glob("report_*.json"))
        assert reports == ["report_dgx.json", "report_gradinput.json",
                           "report_sa.json"]

        rep = tmp_path / "summary"
        assert run("report", *(str(ev / r) for r in reports),
                   "--out", str(rep)) == 0
        md = (rep / "comparison.md").read_text().splitlines()
        assert md[0].startswith("| method |")
        assert [line.split("|")[1].strip() for line in md[2:]] == \
            ["dgx", "gradinput", "sa"]

        # rerunning the explain stage reproduces identical bytes
        again = tmp_path / "rel_again"
        assert run("explain", "--dataset", str(ds),
                   "--weights", str(model / "weights.bin"),
                   "--method", "dgx", "--out", str(again)) == 0
        for name in ("relevance.json", "relevance.csv"):
            assert sha(again / name) == sha(rel_dirs["dgx"] / name)

    def test_manifest_echoes_defaults(self, tmp_path):
        ds = tmp_path / "ds"
        synth(ds)
        model = tmp_path / "model"
        run("train", "--dataset", str(ds), "--epochs", "5", "--hidden", "4",
            "--gcn-dims", "4", "--out", str(model))
        train_manifest = json.loads((model / "manifest.json").read_text())
        assert train_manifest["config"]["lr"] == "0.01"
        assert train_manifest["config"]["optimizer"] == "adam"

        out = tmp_path / "rel"
        run("explain", "--dataset", str(ds),
            "--weights", str(model / "weights.bin"), "--out", str(out))
        explain_manifest = json.loads((out / "manifest.json").read_text())
        assert explain_manifest["config"]["epsilon"] == "0.0001"
        assert explain_manifest["config"]["stabilizer"] == "sign_aware"

        ev = tmp_path / "ev"
        run("evaluate", "--dataset", str(ds),
            "--weights", str(model / "weights.bin"),
            "--relevance", str(out / "relevance.json"),
            "--perturb-seeds", "1", "--out", str(ev))
        ev_manifest = json.loads((ev / "manifest.json").read_text())
        assert ev_manifest["config"]["keep_fractions"] == \
            ["0.90000000000000002", "0.80000000000000004",
             "0.69999999999999996", "0.59999999999999998", "0.5"]
        assert "graph.json" in ev_manifest["input_hashes"]
