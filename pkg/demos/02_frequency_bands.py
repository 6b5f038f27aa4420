"""Split a frame into low / mid / high DCT bands and check they add back up to the input."""
import numpy as np
import torch

from xdlf.datagen import ArtifactSpec, ClipSpec, gen_fake_clip, gen_real_clip
from xdlf.frequency import band_components, build_band_filters, decompose
from xdlf.tensor import dct2d

h = w = 64
f = build_band_filters(h, w)
print(f"band thresholds for {h}x{w}: tau1={f.tau1}, tau2={f.tau2}")
print("coefficients per band:", {k: int(getattr(f, k).sum()) for k in ("f_low", "f_mid", "f_high")})

real = gen_real_clip(ClipSpec(height=h, width=w))
fake = gen_fake_clip(real, ArtifactSpec("frequency_checker", region=2, intensity=1.0))

for name, clip in (("real", real), ("checker fake", fake)):
    frame = torch.from_numpy(clip.frames[:, 0])
    comps = band_components(frame, f)
    energy = [float((c ** 2).sum()) for c in comps]
    total = sum(energy)
    print(f"{name:12s} band energy share: " + ", ".join(f"{e / total:.4f}" for e in energy))

# where does the checkerboard itself live?
delta = torch.from_numpy(fake.frames[:, 0] - real.frames[:, 0]).double()
spec = dct2d(delta) ** 2
share = [float((spec * torch.from_numpy(getattr(f, k))).sum() / spec.sum()) for k in ("f_low", "f_mid", "f_high")]
print(f"artifact energy by band: low {share[0]:.3f}, mid {share[1]:.3f}, high {share[2]:.3f}")

x = torch.from_numpy(real.frames[:, 0])
y = decompose(x, f)
err = (y[0:3] + y[3:6] + y[6:9] - x).abs().max().item()
print(f"9-channel map {tuple(y.shape)}; summing the bands back gives max error {err:.1e}")
