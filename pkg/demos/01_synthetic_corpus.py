"""Walk through the synthetic corpus: one real clip, its three fakes, and a small indexed corpus.

Run:  python demos/01_synthetic_corpus.py [out_dir]
"""
import sys
import tempfile
from pathlib import Path

import numpy as np

from xdlf.datagen import ARTIFACT_KINDS, ArtifactSpec, ClipSpec, CorpusConfig, build_corpus, gen_fake_clip, gen_real_clip
from xdlf.inspection import write_pgm

out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="xdlf_demo_"))
out.mkdir(parents=True, exist_ok=True)

real = gen_real_clip(ClipSpec("s0007_real", n_frames=8, height=64, width=64, motion_seed=7))
print(f"real clip {real.video_id}: frames {real.frames.shape}, landmarks {real.landmarks.shape}")
print("region boxes at frame 0 (y0, y1, x0, x1):")
for name, b in zip(("left eye", "right eye", "nose", "mouth"), real.boxes[0]):
    print(f"  {name:9s} {tuple(int(v) for v in b)}")
write_pgm(out / "real_f0.pgm", real.frames[:, 0].mean(axis=0))

# Each artifact kind touches exactly one region box and leaves every other pixel alone.
for region, kind in enumerate(ARTIFACT_KINDS):
    fake = gen_fake_clip(real, ArtifactSpec(kind, region=region, intensity=1.0))
    diff = np.abs(fake.frames - real.frames).max(axis=(0, 1))
    ys, xs = np.nonzero(diff)
    print(f"{kind:22s} region {region}: {len(ys):4d} pixels changed, "
          f"rows {ys.min()}..{ys.max()}, cols {xs.min()}..{xs.max()}")
    write_pgm(out / f"{kind}_diff.pgm", diff)

index = build_corpus(out / "corpus", CorpusConfig(n_videos=8, clips_per_video=2, clip_len=4, image_size=32))
print(f"\ncorpus at {index.root}: {len(index.entries)} clips, {len(index.videos())} videos")
for split in ("train", "val"):
    labels = [e.label for e in index.split(split)]
    print(f"  {split:5s} {len(labels)} clips, {sum(labels)} fake")
print(f"PGM previews in {out}")
