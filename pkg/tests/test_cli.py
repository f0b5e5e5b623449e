import csv
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from afkit.cli import main


def run_cli(*args) -> int:
    return main([str(a) for a in args])


def read_tree(root: Path, skip=("run_meta.json",)) -> dict:
    out = {}
    for p in sorted(root.rglob("*")):
        if p.is_file() and p.name not in skip:
            out[str(p.relative_to(root))] = p.read_bytes()
    return out


@pytest.fixture(scope="module")
def tiny_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    rc = run_cli("gen", "--classes", "sr,af", "--subjects", "4", "--clips", "1",
                 "--dur", "12", "--snr", "30", "--seed", "5", "--out", root,
                 "--quiet")
    assert rc == 0
    return root


@pytest.fixture(scope="module")
def tiny_model(tiny_corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("model") / "model.json"
    rc = run_cli("train", "--corpus", tiny_corpus, "--loss", "ws",
                 "--epochs", "2", "--lr", "1e-3", "--seed", "3",
                 "--out", out, "--quiet")
    assert rc == 0
    return out


class TestGen:
    def test_layout(self, tiny_corpus):
        manifest = json.loads((tiny_corpus / "manifest.json").read_text())
        assert len(manifest["clips"]) == 8
        assert (tiny_corpus / manifest["clips"][0]["path"]).exists()

    def test_determinism(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert run_cli("gen", "--classes", "sr", "--subjects", "2",
                           "--clips", "1", "--dur", "12", "--seed", "9",
                           "--out", out, "--quiet") == 0
        assert read_tree(a) == read_tree(b)


class TestTrainInfer:
    def test_model_schema(self, tiny_model):
        doc = json.loads(tiny_model.read_text())
        assert set(doc) == {"arch", "params", "seed", "loss_kind"}

    def test_train_determinism(self, tiny_corpus, tmp_path):
        outs = []
        for name in ("m1.json", "m2.json"):
            out = tmp_path / name
            assert run_cli("train", "--corpus", tiny_corpus, "--loss", "sed",
                           "--epochs", "1", "--seed", "4", "--out", out,
                           "--quiet") == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]

    def test_infer(self, tiny_corpus, tiny_model, tmp_path):
        manifest = json.loads((tiny_corpus / "manifest.json").read_text())
        clip_path = tiny_corpus / manifest["clips"][0]["path"]
        out = tmp_path / "peaks.json"
        assert run_cli("infer", "--model", tiny_model, "--clip", clip_path,
                       "--out", out, "--quiet") == 0
        doc = json.loads(out.read_text())
        assert {"rate_hz", "clip_len", "peaks"} <= set(doc)
        assert doc["label"] in ("sr", "af")

    def test_infer_determinism(self, tiny_corpus, tiny_model, tmp_path):
        manifest = json.loads((tiny_corpus / "manifest.json").read_text())
        clip_path = tiny_corpus / manifest["clips"][0]["path"]
        outs = []
        for name in ("p1.json", "p2.json"):
            out = tmp_path / name
            assert run_cli("infer", "--model", tiny_model, "--clip", clip_path,
                           "--out", out, "--quiet") == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]


@pytest.fixture(scope="module")
def peaks_dir(tiny_corpus, tmp_path_factory):
    # ground-truth peaks as the peak files (read-out independent of model)
    out = tmp_path_factory.mktemp("peaks")
    manifest = json.loads((tiny_corpus / "manifest.json").read_text())
    for i, entry in enumerate(manifest["clips"]):
        doc = json.loads((tiny_corpus / entry["path"]).read_text())
        peaks_doc = {
            "rate_hz": doc["rate_hz"],
            "clip_len": len(doc["values"][0]),
            "peaks": doc["peaks"],
            "label": doc["label"],
            "subject_id": doc["subject_id"],
        }
        (out / f"{i}.json").write_text(json.dumps(peaks_doc, sort_keys=True))
    return out


class TestHrvClassify:
    def test_hrv_table(self, peaks_dir, tmp_path):
        out = tmp_path / "features.csv"
        assert run_cli("hrv", "--peaks-dir", peaks_dir, "--out", out, "--quiet") == 0
        with open(out) as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 8
        assert "rmssd_ms" in rows[0]
        assert "subject_id" in rows[0]
        assert "label" in rows[0]

    def test_hrv_determinism(self, peaks_dir, tmp_path):
        outs = []
        for name in ("f1.csv", "f2.csv"):
            out = tmp_path / name
            assert run_cli("hrv", "--peaks-dir", peaks_dir, "--out", out,
                           "--quiet") == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]

    def test_classify(self, peaks_dir, tmp_path):
        feats = tmp_path / "features.csv"
        assert run_cli("hrv", "--peaks-dir", peaks_dir, "--out", feats,
                       "--quiet") == 0
        report = tmp_path / "report.json"
        assert run_cli("classify", "--features", feats, "--task", "af-vs-sr",
                       "--folds", "4", "--seed", "2", "--out", report,
                       "--quiet") == 0
        doc = json.loads(report.read_text())
        assert {"per_fold", "pooled", "confusion", "fold_map", "seed"} <= set(doc)
        conf = doc["confusion"]
        total = sum(conf.values())
        assert total == 8
        acc = doc["pooled"]["accuracy"]
        assert acc == pytest.approx((conf["tp"] + conf["tn"]) / total)

    def test_classify_determinism(self, peaks_dir, tmp_path):
        feats = tmp_path / "features.csv"
        run_cli("hrv", "--peaks-dir", peaks_dir, "--out", feats, "--quiet")
        outs = []
        for name in ("r1.json", "r2.json"):
            out = tmp_path / name
            assert run_cli("classify", "--features", feats, "--task", "af-vs-sr",
                           "--folds", "4", "--seed", "2", "--out", out,
                           "--quiet") == 0
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]


class TestLossCurves:
    def test_outputs_and_selfcheck(self, tmp_path, capsys):
        out = tmp_path / "curves"
        assert run_cli("loss-curves", "--out", out, "--max-shift", "30",
                       "--length", "501") == 0
        text = capsys.readouterr().out
        assert "PASS" in text
        assert "FAIL" not in text
        for name in ("shift_sweep.csv", "sharpness_sweep.csv"):
            with open(out / name) as fh:
                reader = csv.reader(fh)
                header = next(reader)
                assert header == ["sweep_var", "sed", "kl", "js", "ws"]
                rows = list(reader)
            assert len(rows) > 3

    def test_ws_column_symmetric(self, tmp_path):
        out = tmp_path / "curves"
        run_cli("loss-curves", "--out", out, "--max-shift", "30",
                "--length", "501", "--quiet")
        with open(out / "shift_sweep.csv") as fh:
            rows = list(csv.DictReader(fh))
        ws = np.array([float(r["ws"]) for r in rows])
        assert np.allclose(ws, ws[::-1], atol=1e-9)

    def test_determinism(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            run_cli("loss-curves", "--out", out, "--max-shift", "20",
                    "--length", "301", "--quiet")
        assert read_tree(a) == read_tree(b)


class TestPipeline:
    def test_tiny_pipeline_and_determinism(self, tmp_path):
        corpus = tmp_path / "corpus"
        assert run_cli("gen", "--classes", "sr,af", "--subjects", "4",
                       "--clips", "1", "--dur", "20", "--snr", "30",
                       "--seed", "6", "--out", corpus, "--quiet") == 0
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert run_cli("pipeline", "--corpus", corpus, "--out", out,
                           "--clip-lengths", "10,20", "--tasks", "af-vs-sr",
                           "--epochs", "2", "--folds", "4", "--seed", "8",
                           "--clip-len", "256", "--quiet") == 0
        ta, tb = read_tree(a), read_tree(b)
        assert set(ta) == set(tb)
        assert ta == tb
        assert "metrics_by_length.csv" in ta
        assert "hr_ibi_errors.csv" in ta
        assert "model.json" in ta
        assert any(k.startswith("report_af-vs-sr") for k in ta)

    def test_report_contains_provenance_and_fold_map(self, tmp_path):
        corpus = tmp_path / "corpus"
        run_cli("gen", "--classes", "sr,af", "--subjects", "4", "--clips", "1",
                "--dur", "20", "--snr", "30", "--seed", "6", "--out", corpus,
                "--quiet")
        out = tmp_path / "p"
        assert run_cli("pipeline", "--corpus", corpus, "--out", out,
                       "--clip-lengths", "20", "--tasks", "af-vs-sr",
                       "--epochs", "2", "--folds", "4", "--seed", "8",
                       "--clip-len", "256", "--quiet") == 0
        doc = json.loads((out / "report_af-vs-sr_20s.json").read_text())
        assert doc["provenance"]["seed"] == 8
        assert "config_hash" in doc["provenance"]
        assert doc["task"] == "af-vs-sr"
        assert doc["fold_map"]


class TestConfigFile:
    def test_config_defaults_and_flag_override(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"classes": "sr", "subjects": 2, "clips": 1,
                                   "dur": 12.0, "seed": 11}))
        out = tmp_path / "c1"
        assert run_cli("gen", "--config", cfg, "--out", out, "--quiet") == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["seed"] == 11
        assert len(manifest["clips"]) == 2
        out2 = tmp_path / "c2"
        assert run_cli("gen", "--config", cfg, "--seed", "12", "--out", out2,
                       "--quiet") == 0
        assert json.loads((out2 / "manifest.json").read_text())["seed"] == 12


def test_console_entry_point():
    proc = subprocess.run([sys.executable, "-m", "afkit", "--version"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
