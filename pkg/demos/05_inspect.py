"""Dump attention maps and band components for one fake clip.

    python demos/05_inspect.py RUN_DIR       # RUN_DIR as written by demo 04

Without an argument an untrained model is used, which still shows the plumbing.
"""
import sys
import tempfile
from pathlib import Path

import numpy as np
import torch

from xdlf.datagen import ArtifactSpec, ClipSpec, gen_fake_clip, gen_real_clip
from xdlf.inspection import inspect_clip, peak_in_box, write_inspection
from xdlf.model import BackboneConfig, ModelConfig, XdlfModel, load_model

if len(sys.argv) > 1:
    model = load_model(Path(sys.argv[1]) / "run" / "model.ckpt")
else:
    torch.manual_seed(0)
    model = XdlfModel(ModelConfig(BackboneConfig(4, (8, 12, 16)), fslr_pool=3, reduction=4))

size = 64 if len(sys.argv) > 1 else 32   # the shipped recipe trains at 64x64
real = gen_real_clip(ClipSpec("s0100_real", 8, size, size, motion_seed=100))
fake = gen_fake_clip(real, ArtifactSpec("temporal_flicker", region=3, intensity=1.0))
res = inspect_clip(model, torch.from_numpy(fake.frames), fake.landmarks)

print(f"logit {res.logit:+.3f}  (p(fake) = {1 / (1 + np.exp(-res.logit)):.3f})")
for k, v in res.values.items():
    print(f"  {k:12s} {v:.4f}")
for name, m in res.maps.items():
    print(f"  map {name:14s} {m.shape}")
print("fgfe_a peak inside the mouth box:", peak_in_box(res.maps["fgfe_a"], fake.boxes, 3, (size, size)))

out = Path(tempfile.mkdtemp(prefix="xdlf_inspect_"))
write_inspection(res, out)
print(f"PGM maps and values.csv in {out}")
