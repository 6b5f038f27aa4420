"""Train a desk-sized detector for a few minutes, then score the held-out split.

Uses the shipped overfit corpus and tiny training configs, so expect 2-3 minutes
on one core. Pass an output directory to keep the checkpoint for demo 05.
"""
import sys
import tempfile
from pathlib import Path

from xdlf.config import from_mapping, read_config
from xdlf.datagen import CorpusConfig, build_corpus
from xdlf.training import TrainConfig, evaluate, train

root = Path(__file__).resolve().parents[1]
out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="xdlf_train_"))

ccfg = from_mapping(CorpusConfig, read_config(root / "configs" / "corpus_overfit.conf"))
tcfg = from_mapping(TrainConfig, read_config(root / "configs" / "train_tiny.conf"))
index = build_corpus(out / "corpus", ccfg)
print(f"corpus: {len(index.entries)} clips from {len(index.videos())} videos")

res = train(tcfg, index, out / "run", log=print)
print(f"\n{res.steps} optimizer steps, checkpoint at {res.checkpoint}")

for split in ("train", "val"):
    rep = evaluate(res.model, index, split)
    auc = "undefined" if rep.video_auc is None else f"{rep.video_auc:.3f}"
    print(f"{split:5s} video ACC {rep.video_acc:.3f}  video AUC {auc}  {rep.confusion}")
