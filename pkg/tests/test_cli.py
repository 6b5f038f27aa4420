import json
import shutil
import subprocess
import sys
import time

import numpy as np
import pytest

from xdlf.cli import content_hash, git_blob_hash, main
from xdlf.config import to_text
from xdlf.datagen import CorpusIndex
from xdlf.inspection import read_pgm
from xdlf.model import load_model
from xdlf.training import TrainConfig, evaluate

TINY = TrainConfig(lr0=3e-3, t_max=4, epochs=2, mixup_prob=0.0, stem_channels=4, widths=(8, 12, 16),
                   fslr_pool=3, reduction=4)
CORPUS_CONF = "n_videos = 12\nclips_per_video = 2\nclip_len = 4\nimage_size = 32\nsplits = train:0.5,val:0.25,test:0.25\n"


def xdlf(*args):
    return subprocess.run([sys.executable, "-m", "xdlf", *args], capture_output=True, text=True)


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """Corpus plus trained checkpoint produced through the CLI itself."""
    root = tmp_path_factory.mktemp("cli")
    (root / "corpus.conf").write_text(CORPUS_CONF)
    (root / "train.conf").write_text(to_text(TINY))
    assert main(["gen-data", "--config", str(root / "corpus.conf"), "--out", str(root / "corpus")]) == 0
    assert main(["train", "--config", str(root / "train.conf"), "--corpus", str(root / "corpus"),
                 "--out", str(root / "run")]) == 0
    return root


def test_git_blob_hash_matches_git():
    # `printf 'hello\n' | git hash-object --stdin`
    assert git_blob_hash(b"hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a"


def test_gen_data_manifest_and_rerun_hash(workdir, tmp_path):
    m = json.loads((workdir / "corpus" / "gen-data.manifest.json").read_text())
    assert m["command"] == "gen-data" and m["seed"] == 0
    assert {"config", "version", "inputs", "outputs", "wall_clock_s"} <= m.keys()
    assert m["inputs"]["config"]["hash"] == content_hash(workdir / "corpus.conf")
    assert main(["gen-data", "--config", str(workdir / "corpus.conf"), "--out", str(tmp_path / "again")]) == 0
    assert content_hash(tmp_path / "again" / "index.csv") == content_hash(workdir / "corpus" / "index.csv")
    assert content_hash(tmp_path / "again") == content_hash(workdir / "corpus")


def test_gen_data_default_config_under_a_minute(tmp_path):
    t0 = time.time()
    assert main(["gen-data", "--out", str(tmp_path / "c")]) == 0
    assert time.time() - t0 < 60
    assert len(CorpusIndex.load(tmp_path / "c").videos()) == 32


def test_missing_config_file_exit_2(tmp_path):
    assert main(["gen-data", "--config", str(tmp_path / "missing.conf"), "--out", str(tmp_path / "x")]) == 2


def test_missing_out_is_usage_error():
    r = xdlf("gen-data")
    assert r.returncode == 2 and "--out" in r.stderr


def test_invalid_variant_lists_valid_names(workdir):
    r = xdlf("train", "--corpus", str(workdir / "corpus"), "--out", "x", "--variant", "bogus")
    assert r.returncode == 2
    for name in ("full", "no_fgfe", "no_time_2d", "rgb_rgb"):
        assert name in r.stderr


def test_unknown_config_key_exit_2(workdir, tmp_path):
    (tmp_path / "bad.conf").write_text("learning_rate = 1\n")
    rc = main(["train", "--config", str(tmp_path / "bad.conf"), "--corpus", str(workdir / "corpus"),
               "--out", str(tmp_path / "o")])
    assert rc == 2


def test_missing_checkpoint_exit_1(workdir, tmp_path):
    assert main(["eval", "--checkpoint", str(tmp_path / "none.ckpt"), "--corpus", str(workdir / "corpus")]) == 1


def test_train_outputs(workdir):
    run = workdir / "run"
    assert {"model.ckpt", "model.json", "metrics.csv", "train.manifest.json"} <= {p.name for p in run.iterdir()}
    assert len((run / "metrics.csv").read_text().strip().splitlines()) == 1 + TINY.epochs
    m = json.loads((run / "train.manifest.json").read_text())
    assert m["config"]["lr0"] == TINY.lr0 and m["inputs"]["corpus"]["hash"]


@pytest.mark.parametrize("variant", ["no_fgfe", "no_time_2d"])
def test_train_variants(workdir, tmp_path, variant):
    assert main(["train", "--config", str(workdir / "train.conf"), "--corpus", str(workdir / "corpus"),
                 "--out", str(tmp_path), "--variant", variant]) == 0
    assert load_model(tmp_path / "model.ckpt").config.variant == variant


def test_eval_report_matches_in_memory(workdir, tmp_path, capsys):
    assert main(["eval", "--checkpoint", str(workdir / "run" / "model.ckpt"), "--corpus",
                 str(workdir / "corpus"), "--split", "test", "--out", str(tmp_path)]) == 0
    printed = capsys.readouterr().out.strip().splitlines()
    lines = (tmp_path / "eval_test.jsonl").read_text().strip().splitlines()
    assert printed == lines[:2]
    clip, video = json.loads(lines[0]), json.loads(lines[1])
    assert clip["level"] == "clip" and video["level"] == "video"
    assert {"acc", "auc"} <= clip.keys() and {"acc", "auc"} <= video.keys()
    model = load_model(workdir / "run" / "model.ckpt")
    rep = evaluate(model, CorpusIndex.load(workdir / "corpus"), "test")
    scores = [json.loads(line)["prob"] for line in lines[2:]]
    assert scores == rep.video_probs
    assert (tmp_path / "eval_test.manifest.json").exists()


def test_eval_single_class_auc_undefined(workdir, tmp_path):
    idx = tmp_path / "idx"
    shutil.copytree(workdir / "corpus", idx)
    corpus = CorpusIndex.load(idx)
    CorpusIndex(idx, [e for e in corpus.entries if e.label == 0]).save()
    assert main(["eval", "--checkpoint", str(workdir / "run" / "model.ckpt"), "--corpus", str(idx),
                 "--split", "test", "--out", str(tmp_path / "r")]) == 0
    video = json.loads((tmp_path / "r" / "eval_test.jsonl").read_text().splitlines()[1])
    assert video["auc"] == "undefined"


def test_inspect_inventory(workdir, tmp_path):
    corpus = CorpusIndex.load(workdir / "corpus")
    fake = next(e for e in corpus.entries if e.label == 1)
    before = (workdir / "corpus" / fake.clip_path).read_bytes()
    assert main(["inspect", "--checkpoint", str(workdir / "run" / "model.ckpt"), "--clip",
                 str(workdir / "corpus" / fake.clip_path), "--out", str(tmp_path)]) == 0
    assert (workdir / "corpus" / fake.clip_path).read_bytes() == before
    names = {p.name for p in tmp_path.iterdir()}
    expected = {"fgfe_a.pgm", "fgfe_b.pgm", "band_low.pgm", "band_mid.pgm", "band_high.pgm",
                "values.csv", "inspect.manifest.json"}
    expected |= {f"cross_{lvl}_{s}.pgm" for lvl in ("low", "mid", "high") for s in "ab"}
    assert names == expected
    img = read_pgm(tmp_path / "band_low.pgm")
    assert img.shape == (32, 32) and img.dtype == np.uint8
    rows = dict(line.split(",") for line in (tmp_path / "values.csv").read_text().splitlines()[1:])
    assert set(rows) == {"alpha_low", "alpha_mid", "alpha_high", "lambda_low", "lambda_mid",
                         "lambda_high", "logit"}
    for k in ("alpha_low", "alpha_mid", "alpha_high", "lambda_low", "lambda_mid", "lambda_high"):
        assert 0 < float(rows[k]) < 1


def test_grad_check_command(capsys):
    t0 = time.time()
    assert main(["grad-check", "--module", "all"]) == 0
    assert time.time() - t0 < 60
    out = capsys.readouterr().out
    assert "all gradient checks passed" in out
    for suite in ("tensor", "frequency", "fgfe", "fusion", "model"):
        assert suite in out


def test_grad_check_exit_1_on_failure(monkeypatch):
    import xdlf.cli as cli
    from xdlf.gradcheck import GradResult

    monkeypatch.setattr(cli, "run_gradcheck",
                        lambda suites, seed, log: [GradResult("tensor", "c", "x", 1.0, 1, 1e-4)])
    assert main(["grad-check"]) == 1


def test_ablation_command(workdir, tmp_path):
    (tmp_path / "abl.conf").write_text(to_text(TrainConfig(**{**TINY.__dict__, "epochs": 1})))
    rc = main(["ablation", "--config", str(tmp_path / "abl.conf"), "--corpus", str(workdir / "corpus"),
               "--out", str(tmp_path / "abl"), "--variants", "full,no_fgfe", "--seeds", "0"])
    assert rc == 0
    rep = json.loads((tmp_path / "abl" / "ablation.json").read_text())
    assert [r["variant"] for r in rep["runs"]] == ["full", "no_fgfe"]
    assert "full-no_fgfe@all" in rep["margins"]
    assert main(["ablation", "--corpus", str(workdir / "corpus"), "--out", str(tmp_path / "x"),
                 "--variants", "full,bogus"]) == 2


def test_threads_env_validation(monkeypatch):
    monkeypatch.setenv("XDLF_THREADS", "zero")
    assert main(["grad-check", "--module", "tensor"]) == 2
