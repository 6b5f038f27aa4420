"""A one-seed, few-epoch version of the variant ablation.

The full protocol lives in tests/test_acceptance.py (three seeds, the ablation
configs, about 45 minutes). This demo finishes in a few minutes and is only
meant to show the report format. With only four held-out videos a margin can
be n/a when no fake of that artifact kind lands in the test split.
"""
import tempfile
from dataclasses import replace
from pathlib import Path

from xdlf.ablation import DEFAULT_VARIANTS, run_ablation
from xdlf.datagen import CorpusConfig, build_corpus
from xdlf.training import TrainConfig

out = Path(tempfile.mkdtemp(prefix="xdlf_ablation_"))
index = build_corpus(out / "corpus", CorpusConfig(n_videos=16, clip_len=4, image_size=32,
                                                  splits=(("train", 0.5), ("val", 0.25), ("test", 0.25))))
base = TrainConfig(lr0=3e-3, t_max=4, epochs=4, mixup_prob=0.0, stem_channels=4, widths=(8, 12, 16),
                   fslr_pool=3, reduction=4)
rep = run_ablation(index, base, DEFAULT_VARIANTS, seeds=(0,), split="test", out_dir=out / "runs", log=print)
print()
for name, m in rep.margins().items():
    print(f"{name:36s} {'n/a' if m is None else f'{m:+.3f}'}")
print(f"report: {out / 'runs' / 'ablation.json'}")
