import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from lecseg.cli import main
from lecseg.config import RunConfig
from lecseg.datamodel import read_corpus
from lecseg.embedder import load_params
from lecseg.exceptions import ValidationError

SMALL_SYNTH = {
    "n_lectures": 4,
    "k_range": [3, 5],
    "clips_per_lecture": 30,
    "noise_sigma": 0.2,
    "dims": [8, 8, 8, 8],
    "n_courses": 2,
}
SMALL_MODEL = {"embed_dim": 16, "ocr_proj_dim": 8}
SMALL_TRAIN = {"batch_size": 8, "epochs": 2, "finetune_epochs": 2, "batches_per_epoch": 4, "lr": 1e-3}


def write_config(path, **sections):
    doc = {"synth": SMALL_SYNTH, "model": SMALL_MODEL, "train": SMALL_TRAIN}
    doc.update(sections)
    path.write_text(json.dumps(doc))
    return str(path)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """A small corpus plus a trained checkpoint shared by the read-only tests."""
    root = tmp_path_factory.mktemp("ws")
    cfg = write_config(root / "cfg.json")
    assert main(["synth", "--config", cfg, "--out", str(root / "corpus")]) == 0
    assert main(["train", "--config", cfg, "--corpus", str(root / "corpus"), "--out", str(root / "model")]) == 0
    return root, cfg


class TestRunConfig:
    def test_json_roundtrip(self):
        cfg = RunConfig()
        cfg.train.lr = 3e-4
        cfg.k_list = [5, 30]
        assert RunConfig.from_dict(json.loads(cfg.to_json())) == cfg

    def test_unknown_keys_rejected(self):
        with pytest.raises(ValidationError):
            RunConfig.from_dict({"bogus": 1})
        with pytest.raises(ValidationError):
            RunConfig.from_dict({"train": {"bogus": 1}})

    def test_schema_version(self):
        with pytest.raises(ValidationError):
            RunConfig.from_dict({"schema_version": 2})

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            RunConfig.load(tmp_path / "nope.json")

    def test_override(self):
        cfg = RunConfig()
        cfg.override("train.epochs", 3)
        cfg.override("train.lr", None)
        assert cfg.train.epochs == 3 and cfg.train.lr == 1e-4
        with pytest.raises(ValidationError):
            cfg.override("train.nope", 1)


class TestSynthCommand:
    def test_byte_identical(self, tmp_path):
        cfg = write_config(tmp_path / "c.json")
        for d in ("a", "b"):
            assert main(["synth", "--config", cfg, "--seed", "7", "--out", str(tmp_path / d)]) == 0
        files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
        assert files
        for rel in files:
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()

    def test_manifest_count_and_flag_precedence(self, tmp_path):
        cfg = write_config(tmp_path / "c.json")
        assert main(["synth", "--config", cfg, "--n-lectures", "3", "--out", str(tmp_path / "o")]) == 0
        lines = (tmp_path / "o" / "manifest.jsonl").read_text().splitlines()
        assert len(lines) == 3

    def test_zero_lectures_is_validation_error(self, tmp_path):
        cfg = write_config(tmp_path / "c.json")
        assert main(["synth", "--config", cfg, "--n-lectures", "0", "--out", str(tmp_path / "o")]) == 1

    def test_missing_config_exit_2(self, tmp_path):
        assert main(["synth", "--config", str(tmp_path / "none.json")]) == 2

    def test_usage_error_exit_1(self):
        with pytest.raises(SystemExit) as exc:
            main(["segment", "--method", "nope"])
        assert exc.value.code == 1


class TestClipifyCommand:
    def test_writes_clips(self, tmp_path, capsys):
        cues = [{"start_s": 5 * i, "end_s": 5 * i + 5, "text": f"w{i}"} for i in range(4)]
        (tmp_path / "talk.json").write_text(json.dumps(cues))
        assert main(["clipify", str(tmp_path / "talk.json"), "--out", str(tmp_path / "o")]) == 0
        doc = json.loads((tmp_path / "o" / "talk.clips.json").read_text())
        assert [(c["start_s"], c["end_s"]) for c in doc] == [(0, 10), (10, 20)]
        assert doc[1]["text"] == "w2 w3"

    def test_duration_preset(self, tmp_path):
        cues = [{"start_s": 5 * i, "end_s": 5 * i + 5, "text": "x"} for i in range(8)]
        (tmp_path / "t.json").write_text(json.dumps(cues))
        assert main(["clipify", str(tmp_path / "t.json"), "--duration", "20-25", "--out", str(tmp_path)]) == 0
        assert len(json.loads((tmp_path / "t.clips.json").read_text())) == 2


class TestTrainCommand:
    def test_loss_csv_one_row_per_epoch(self, workspace):
        root, _ = workspace
        rows = list(csv.reader((root / "model" / "pretrain_loss.csv").open()))
        assert rows[0] == ["epoch", "loss"] and len(rows) == 1 + SMALL_TRAIN["epochs"]
        assert (root / "model" / "pretrain.avle").exists()

    def test_two_stage_tags(self, workspace, tmp_path):
        root, cfg = workspace
        args = ["train", "--config", cfg, "--corpus", str(root / "corpus"), "--out", str(tmp_path)]
        assert main(args + ["--finetune-corpus", str(root / "corpus")]) == 0
        a, b = load_params(tmp_path / "pretrain.avle"), load_params(tmp_path / "finetune.avle")
        assert not a.equals(b)
        assert json.loads((tmp_path / "finetune_epoch002.json").read_text())["tag"] == "finetune"

    def test_resume_bit_exact(self, workspace, tmp_path):
        root, cfg = workspace
        base = ["train", "--config", cfg, "--corpus", str(root / "corpus")]
        assert main(base + ["--epochs", "3", "--out", str(tmp_path / "full")]) == 0
        assert main(base + ["--epochs", "3", "--out", str(tmp_path / "resumed"),
                            "--resume", str(root / "model" / "pretrain_epoch001.avle")]) == 0
        assert (tmp_path / "full" / "pretrain.avle").read_bytes() == (tmp_path / "resumed" / "pretrain.avle").read_bytes()
        full_csv = (tmp_path / "full" / "pretrain_loss.csv").read_text()
        assert full_csv == (tmp_path / "resumed" / "pretrain_loss.csv").read_text()

    def test_missing_corpus_exit_2(self, tmp_path):
        assert main(["train", "--corpus", str(tmp_path / "none"), "--out", str(tmp_path)]) == 2


class TestSegmentAndEval:
    def seg(self, root, cfg, out, *extra):
        args = ["segment", "--config", cfg, "--corpus", str(root / "corpus"),
                "--checkpoint", str(root / "model" / "pretrain.avle"), "--out", str(out)]
        return main(args + list(extra))

    def test_gt_k_source(self, workspace, tmp_path):
        root, cfg = workspace
        assert self.seg(root, cfg, tmp_path) == 0
        for lec in read_corpus(root / "corpus"):
            doc = json.loads((tmp_path / f"{lec.lecture_id}.json").read_text())
            assert doc["k"] == lec.gt.k and doc["method"] == "twfinch"
            assert doc["contiguous"] and doc["alpha_used"] >= 1.0

    def test_naive_needs_no_checkpoint(self, workspace, tmp_path):
        root, cfg = workspace
        args = ["baseline", "--config", cfg, "--corpus", str(root / "corpus"), "--out", str(tmp_path)]
        assert main(args + ["--method", "naive"]) == 0

    def test_missing_checkpoint_exit_2(self, workspace, tmp_path):
        root, cfg = workspace
        args = ["segment", "--config", cfg, "--corpus", str(root / "corpus"), "--out", str(tmp_path)]
        assert main(args + ["--checkpoint", str(tmp_path / "none.avle")]) == 2

    def test_text_only_differs_from_full(self, workspace, tmp_path):
        root, cfg = workspace
        assert self.seg(root, cfg, tmp_path / "full", "--k-source", "fixed:4") == 0
        assert self.seg(root, cfg, tmp_path / "text", "--k-source", "fixed:4", "--modalities", "text") == 0
        labels = {}
        for name in ("full", "text"):
            labels[name] = [json.loads(p.read_text())["labels"] for p in sorted((tmp_path / name).glob("*.json"))]
        assert labels["full"] != labels["text"]

    def test_bad_k_source_exit_1(self, workspace, tmp_path):
        root, cfg = workspace
        assert self.seg(root, cfg, tmp_path, "--k-source", "fixed:0") == 1

    @pytest.mark.parametrize("method", ["twfinch", "naive", "kmeans", "cte"])
    @pytest.mark.parametrize("k_source", ["gt", "second_last", "third_last", "fixed:3"])
    def test_every_combination_evaluates(self, workspace, tmp_path, method, k_source):
        root, cfg = workspace
        assert self.seg(root, cfg, tmp_path / "pred", "--method", method, "--k-source", k_source, "--repr", "raw") == 0
        args = ["eval", "--config", cfg, "--corpus", str(root / "corpus"), "--pred", str(tmp_path / "pred")]
        assert main(args + ["--out", str(tmp_path / "eval")]) == 0

    def test_gt_against_itself(self, workspace, tmp_path, capsys):
        root, cfg = workspace
        pred = tmp_path / "gt"
        pred.mkdir()
        corpus = read_corpus(root / "corpus")
        for lec in corpus:
            (pred / f"{lec.lecture_id}.json").write_text(
                json.dumps({"lecture_id": lec.lecture_id, "labels": lec.gt.labels.tolist()})
            )
        args = ["eval", "--config", cfg, "--corpus", str(root / "corpus"), "--pred", str(pred), "--name", "GT"]
        assert main(args + ["--by-course", "--out", str(tmp_path / "eval")]) == 0
        table = (tmp_path / "eval" / "table.txt").read_text()
        gt_rows = [line.split() for line in table.splitlines() if line.startswith("GT")]
        assert gt_rows and all(row[1:] == ["100.0"] * 5 for row in gt_rows)
        blocks = [line for line in table.splitlines() if line.startswith("[course ")]
        assert len(blocks) == len({lec.lecture_id[:3] for lec in corpus})

    def test_mean_equals_mean_of_rows(self, workspace, tmp_path):
        root, cfg = workspace
        assert self.seg(root, cfg, tmp_path / "pred", "--method", "kmeans", "--repr", "raw") == 0
        args = ["eval", "--config", cfg, "--corpus", str(root / "corpus"), "--pred", str(tmp_path / "pred")]
        assert main(args + ["--out", str(tmp_path / "eval")]) == 0
        doc = json.loads((tmp_path / "eval" / "report.json").read_text())
        for key in ("nmi", "mof", "iou", "f1"):
            rows = [r[key] for r in doc["per_lecture"].values()]
            assert doc["mean"][key] == pytest.approx(np.mean(rows), abs=1e-12)

    def test_report_combines(self, workspace, tmp_path, capsys):
        root, cfg = workspace
        for method in ("naive", "cte"):
            assert self.seg(root, cfg, tmp_path / method, "--method", method, "--repr", "raw") == 0
            args = ["eval", "--config", cfg, "--corpus", str(root / "corpus"), "--pred", str(tmp_path / method)]
            assert main(args + ["--out", str(tmp_path / f"eval_{method}")]) == 0
        capsys.readouterr()
        reports = [f"{m}={tmp_path / f'eval_{m}' / 'report.json'}" for m in ("naive", "cte")]
        assert main(["report", *reports, "--out", str(tmp_path)]) == 0
        lines = capsys.readouterr().out.splitlines()
        assert lines[0].split()[:2] == ["Method", "NMI"] and [l.split()[0] for l in lines[1:]] == ["naive", "cte"]


class TestEmbedAndRetrieve:
    def test_embed_then_segment_from_dumps(self, workspace, tmp_path):
        root, cfg = workspace
        ckpt = str(root / "model" / "pretrain.avle")
        assert main(["embed", "--config", cfg, "--corpus", str(root / "corpus"), "--checkpoint", ckpt,
                     "--out", str(tmp_path / "emb")]) == 0
        base = ["segment", "--config", cfg, "--corpus", str(root / "corpus")]
        assert main(base + ["--embeddings", str(tmp_path / "emb"), "--out", str(tmp_path / "a")]) == 0
        assert main(base + ["--checkpoint", ckpt, "--out", str(tmp_path / "b")]) == 0
        for p in (tmp_path / "a").glob("*.json"):
            assert p.read_text() == (tmp_path / "b" / p.name).read_text()

    def test_top_k_rows(self, workspace, tmp_path, capsys):
        root, cfg = workspace
        lec = read_corpus(root / "corpus")[0]
        np.save(tmp_path / "q.npy", lec.matrix("text")[0])
        capsys.readouterr()
        args = ["retrieve", "--config", cfg, "--corpus", str(root / "corpus"),
                "--checkpoint", str(root / "model" / "pretrain.avle"), "--query", str(tmp_path / "q.npy")]
        assert main(args + ["--top-k", "3", "--out", str(tmp_path)]) == 0
        assert len(capsys.readouterr().out.strip().splitlines()) == 3
        assert len(json.loads((tmp_path / "retrieval.json").read_text())) == 3

    def test_missing_checkpoint_exit_2(self, workspace, tmp_path):
        root, cfg = workspace
        (tmp_path / "q.json").write_text(json.dumps([0.0] * 8))
        args = ["retrieve", "--config", cfg, "--corpus", str(root / "corpus"),
                "--checkpoint", str(tmp_path / "none.avle"), "--query", str(tmp_path / "q.json")]
        assert main(args) == 2

    def test_trained_zero_noise_retrieves_own_clip(self, tmp_path):
        synth = dict(SMALL_SYNTH, noise_sigma=0.0, n_lectures=6)
        train = dict(SMALL_TRAIN, epochs=15, batches_per_epoch=20, lr=3e-3, lr_decay=1.0)
        cfg = write_config(tmp_path / "c.json", synth=synth, train=train)
        assert main(["synth", "--config", cfg, "--out", str(tmp_path / "corpus")]) == 0
        assert main(["train", "--config", cfg, "--corpus", str(tmp_path / "corpus"), "--out", str(tmp_path / "m")]) == 0
        lec = read_corpus(tmp_path / "corpus")[2]
        # zero noise makes clips of one segment identical; the tie-break favours the first one
        j = int(np.flatnonzero(lec.gt.labels == 1)[0])
        (tmp_path / "q.json").write_text(json.dumps(lec.matrix("text")[j].tolist()))
        args = ["retrieve", "--config", cfg, "--corpus", str(tmp_path / "corpus"),
                "--checkpoint", str(tmp_path / "m" / "pretrain.avle"), "--query", str(tmp_path / "q.json")]
        assert main(args + ["--top-k", "1", "--out", str(tmp_path)]) == 0
        top = json.loads((tmp_path / "retrieval.json").read_text())[0]
        assert (top["lecture_id"], top["clip_index"]) == (lec.lecture_id, j)


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "lecseg", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.strip()
