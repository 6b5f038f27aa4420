"""Synthetic face clips with forgery artifacts planted inside region boxes.

A real clip is an analytic rendering: static low-frequency background plus a
textured face layer that translates sinusoidally over time. Landmarks follow
the same translation plus a small per-point sinusoidal jitter. A fake clip is
the real clip with one artifact confined to one region box per frame:

``spatial_blur_boundary``
    blurred copy blended in, with a darker seam on the box border
``frequency_checker``
    Hann-windowed ``(-1)^(y+x)`` pattern (energy near the DCT corner)
``temporal_flicker``
    box brightness shifted across the frame mean on odd frames

Corpus layout on disk::

    <root>/index.csv
    <root>/<split>/<video_id>/clip_<k>.ten
    <root>/<split>/<video_id>/clip_<k>.landmarks.csv
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .errors import ConfigError
from .fslr import LANDMARK_GROUPS, extract_boxes, read_landmarks_csv, write_landmarks_csv
from .tensor import load_tensor, save_tensor

ARTIFACT_KINDS = ("spatial_blur_boundary", "frequency_checker", "temporal_flicker")
INDEX_HEADER = ("video_id", "split", "clip_path", "label", "artifact_kind", "region")

FLICKER_STEP = 0.56  # fraction of the clip's dynamic range, applied on odd frames
CHECKER_AMPLITUDE = 0.5
BLUR_SIGMA = 1.5
SEAM_DEPTH = 0.5


@dataclass(frozen=True)
class ClipSpec:
    """Geometry and motion of one real clip.

    ``motion_amplitude`` is the peak rigid face displacement in pixels;
    ``motion_period`` is in frames. All appearance parameters are drawn from
    ``motion_seed`` so clips of one video share them.
    """

    video_id: str = "s0000_real"
    n_frames: int = 8
    height: int = 64
    width: int = 64
    motion_seed: int = 0
    motion_amplitude: float = 1.5
    motion_period: float = 12.0
    jitter_amplitude: float = 0.4
    frame_start: int = 0

    @property
    def max_step(self) -> float:
        """Upper bound on face displacement between consecutive frames (pixels)."""
        return float(np.hypot(1.0, 0.7)) * 2 * np.pi * self.motion_amplitude / self.motion_period


@dataclass(frozen=True)
class ArtifactSpec:
    kind: str
    region: int
    intensity: float

    def __post_init__(self):
        if self.kind not in ARTIFACT_KINDS:
            raise ConfigError(f"unknown artifact kind {self.kind!r}")
        if not 0 <= self.region < 4:
            raise ConfigError(f"artifact region must be 0..3, got {self.region}")
        if not 0.0 < self.intensity <= 1.0:
            raise ConfigError(f"artifact intensity must lie in (0, 1], got {self.intensity}")


@dataclass
class Clip:
    frames: np.ndarray          # [3, d, h, w] float32
    landmarks: np.ndarray       # [d, 68, 2] (x, y)
    label: float
    video_id: str
    source_id: str
    frame_start: int = 0
    artifact: ArtifactSpec | None = None

    @property
    def n_frames(self) -> int:
        return self.frames.shape[1]

    @property
    def boxes(self) -> np.ndarray:
        h, w = self.frames.shape[-2:]
        return extract_boxes(self.landmarks, h, w)


def source_of(video_id: str) -> str:
    return video_id.rsplit("_", 1)[0]


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------

def canonical_landmarks(h: int, w: int) -> np.ndarray:
    """Neutral 68-point layout as ``(x, y)`` pixels for an ``h x w`` crop."""
    pts = np.zeros((68, 2))
    pts[0:17] = np.stack([np.linspace(0.18, 0.82, 17),
                          0.45 + 0.45 * np.sin(np.linspace(0, np.pi, 17))], 1)
    pts[17:22] = np.stack([np.linspace(0.22, 0.42, 5), np.full(5, 0.29)], 1)
    pts[22:27] = np.stack([np.linspace(0.58, 0.78, 5), np.full(5, 0.29)], 1)
    pts[27:31] = np.stack([np.full(4, 0.5), np.linspace(0.40, 0.55, 4)], 1)
    pts[31:36] = np.stack([np.linspace(0.44, 0.56, 5), np.full(5, 0.59)], 1)
    t6 = np.linspace(0, 2 * np.pi, 6, endpoint=False)
    pts[36:42] = np.stack([0.33 + 0.06 * np.cos(t6), 0.375 + 0.025 * np.sin(t6)], 1)
    pts[42:48] = np.stack([0.67 + 0.06 * np.cos(t6), 0.375 + 0.025 * np.sin(t6)], 1)
    t12 = np.linspace(0, 2 * np.pi, 12, endpoint=False)
    pts[48:60] = np.stack([0.5 + 0.11 * np.cos(t12), 0.74 + 0.045 * np.sin(t12)], 1)
    t8 = np.linspace(0, 2 * np.pi, 8, endpoint=False)
    pts[60:68] = np.stack([0.5 + 0.07 * np.cos(t8), 0.74 + 0.02 * np.sin(t8)], 1)
    return pts * np.array([w, h], dtype=np.float64)


@dataclass
class _Appearance:
    bg_base: np.ndarray
    bg_waves: list
    skin: np.ndarray
    texture: list
    region_offsets: np.ndarray
    eye_dark: float
    lip_color: np.ndarray
    phase: np.ndarray
    jitter_period: np.ndarray
    jitter_phase: np.ndarray


def _sample_appearance(rng: np.random.Generator) -> _Appearance:
    bg_waves = [(rng.uniform(0.5, 2.0, 2) * rng.choice([-1, 1], 2), rng.uniform(0, 2 * np.pi),
                 rng.uniform(0.03, 0.08)) for _ in range(3)]
    texture = [(rng.uniform(3.0, 6.0), rng.uniform(0, np.pi), rng.uniform(0, 2 * np.pi),
                rng.uniform(0.025, 0.045)) for _ in range(4)]
    return _Appearance(
        bg_base=rng.uniform(0.02, 0.1, 3),
        bg_waves=bg_waves,
        skin=rng.uniform(0.65, 0.82, 3),
        texture=texture,
        region_offsets=rng.uniform(-0.1, 0.1, 4),
        eye_dark=rng.uniform(0.25, 0.4),
        lip_color=np.array([0.12, -0.08, -0.06]) * rng.uniform(0.7, 1.3),
        phase=rng.uniform(0, 2 * np.pi, 2),
        jitter_period=rng.uniform(6.0, 16.0, (68, 2)),
        jitter_phase=rng.uniform(0, 2 * np.pi, (68, 2)),
    )


def _face_shift(spec: ClipSpec, app: _Appearance, t: np.ndarray) -> np.ndarray:
    """Rigid face displacement ``(dx, dy)`` in pixels for absolute frame indices ``t``."""
    w = 2 * np.pi * t / spec.motion_period
    return spec.motion_amplitude * np.stack([np.sin(w + app.phase[0]), np.sin(0.7 * w + app.phase[1])], -1)


def _render_frame(spec: ClipSpec, app: _Appearance, shift: np.ndarray, lm0: np.ndarray) -> np.ndarray:
    h, w = spec.height, spec.width
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    bg = np.zeros((h, w))
    for f, ph, amp in app.bg_waves:
        bg += amp * np.cos(2 * np.pi * (f[0] * xx / w + f[1] * yy / h) + ph)
    # face coordinates move with the face
    fx, fy = xx - shift[0], yy - shift[1]
    u, v = fx / w, fy / h
    mask = 1.0 / (1.0 + np.exp(-8.0 * (1 - ((u - 0.5) / 0.36) ** 2 - ((v - 0.56) / 0.44) ** 2)))
    tex = np.zeros((h, w))
    for wavelength, ang, ph, amp in app.texture:
        tex += amp * np.cos(2 * np.pi * (np.cos(ang) * fx + np.sin(ang) * fy) / wavelength + ph)
    shade = np.zeros((h, w))
    lip = np.zeros((h, w))
    scale = min(h, w)
    for r, idx in enumerate(LANDMARK_GROUPS):
        cx, cy = lm0[list(idx)].mean(axis=0)
        sx, sy = (0.06, 0.03) if r < 2 else ((0.035, 0.07) if r == 2 else (0.10, 0.04))
        g = np.exp(-0.5 * (((fx - cx) / (sx * scale)) ** 2 + ((fy - cy) / (sy * scale)) ** 2))
        env = np.exp(-0.5 * (((fx - cx) / (0.09 * scale)) ** 2 + ((fy - cy) / (0.09 * scale)) ** 2))
        shade += app.region_offsets[r] * env
        if r < 2:
            shade -= app.eye_dark * g
        elif r == 2:
            shade -= 0.08 * g
        else:
            lip += g
    img = np.empty((3, h, w))
    for ch in range(3):
        face = app.skin[ch] + tex + shade + app.lip_color[ch] * lip
        img[ch] = (app.bg_base[ch] + bg) * (1 - mask) + face * mask
    return np.clip(img, 0.0, 1.0)


def gen_real_clip(spec: ClipSpec, rng: np.random.Generator | None = None) -> Clip:
    """Render a real clip; deterministic given ``spec`` (or the supplied ``rng`` state)."""
    rng = np.random.default_rng(spec.motion_seed) if rng is None else rng
    app = _sample_appearance(rng)
    h, w = spec.height, spec.width
    lm0 = canonical_landmarks(h, w)
    t = np.arange(spec.frame_start, spec.frame_start + spec.n_frames, dtype=np.float64)
    shifts = _face_shift(spec, app, t)
    frames = np.stack([_render_frame(spec, app, s, lm0) for s in shifts], axis=1)
    jitter = spec.jitter_amplitude * np.sin(
        2 * np.pi * t[:, None, None] / app.jitter_period[None] + app.jitter_phase[None])
    lms = lm0[None] + shifts[:, None, :] + jitter
    lms[..., 0] = np.clip(lms[..., 0], 0, w - 1)
    lms[..., 1] = np.clip(lms[..., 1], 0, h - 1)
    return Clip(frames.astype(np.float32), lms, 0.0, spec.video_id, source_of(spec.video_id),
                spec.frame_start)


# ---------------------------------------------------------------------------
# artifacts
# ---------------------------------------------------------------------------

def checker_pattern(bh: int, bw: int) -> np.ndarray:
    """Hann-windowed ``(-1)^(i+j)`` patch; parity is taken relative to the patch origin."""
    win = np.outer(np.hanning(bh + 2)[1:-1], np.hanning(bw + 2)[1:-1])
    sign = np.where(np.add.outer(np.arange(bh), np.arange(bw)) % 2 == 0, 1.0, -1.0)
    return win * sign


def artifact_delta(real: Clip, artifact: ArtifactSpec) -> tuple[np.ndarray, np.ndarray]:
    """Additive change (float64, same shape as frames) and the per-frame boxes it lives in."""
    frames = real.frames.astype(np.float64)
    boxes = real.boxes
    delta = np.zeros_like(frames)
    s = artifact.intensity
    dynamic_range = float(frames.max() - frames.min())
    flicker_sign = 0.0
    if artifact.kind == "temporal_flicker":
        # push the box across the frame mean so whole-frame variance barely moves
        offs = [frames[:, t, b[0]:b[1], b[2]:b[3]].mean() - frames[:, t].mean()
                for t, b in enumerate(boxes[:, artifact.region])]
        flicker_sign = -1.0 if np.mean(offs) >= 0 else 1.0
    for t in range(frames.shape[1]):
        h1, h2, w1, w2 = boxes[t, artifact.region]
        patch = frames[:, t, h1:h2, w1:w2]
        if artifact.kind == "spatial_blur_boundary":
            blurred = ndimage.gaussian_filter(frames[:, t], sigma=(0, BLUR_SIGMA, BLUR_SIGMA))[:, h1:h2, w1:w2]
            d = s * (blurred - patch)
            seam = np.zeros((h2 - h1, w2 - w1), dtype=bool)
            seam[[0, -1], :] = True
            seam[:, [0, -1]] = True
            d[:, seam] -= s * SEAM_DEPTH
        elif artifact.kind == "frequency_checker":
            d = np.broadcast_to(s * CHECKER_AMPLITUDE * checker_pattern(h2 - h1, w2 - w1), patch.shape)
            # keep the absolute-grid parity so the pattern does not drift with the box
            if (h1 + w1) % 2:
                d = -d
        else:
            on = (real.frame_start + t) % 2 == 1
            d = np.full_like(patch, flicker_sign * s * FLICKER_STEP * dynamic_range if on else 0.0)
        delta[:, t, h1:h2, w1:w2] = d
    return delta, boxes


def gen_fake_clip(real: Clip, artifact: ArtifactSpec, rng: np.random.Generator | None = None) -> Clip:
    """Copy of ``real`` with ``artifact`` applied inside one region box per frame.

    Pixels outside the boxes are bit-identical to ``real``.
    """
    delta, boxes = artifact_delta(real, artifact)
    frames = real.frames.copy()
    r = artifact.region
    for t in range(frames.shape[1]):
        h1, h2, w1, w2 = boxes[t, r]
        frames[:, t, h1:h2, w1:w2] = (real.frames[:, t, h1:h2, w1:w2].astype(np.float64)
                                      + delta[:, t, h1:h2, w1:w2]).astype(np.float32)
    return Clip(frames, real.landmarks.copy(), 1.0, real.source_id + "_fake", real.source_id,
                real.frame_start, artifact)


# ---------------------------------------------------------------------------
# corpus
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CorpusConfig:
    n_videos: int = 32
    clips_per_video: int = 2
    clip_len: int = 8
    image_size: int = 64
    artifact_mix: tuple[tuple[str, float], ...] = tuple((k, 1.0) for k in ARTIFACT_KINDS)
    splits: tuple[tuple[str, float], ...] = (("train", 0.75), ("val", 0.25), ("test", 0.0))
    intensity_min: float = 0.6
    intensity_max: float = 1.0
    motion_amplitude: float = 1.5
    seed: int = 0

    def __post_init__(self):
        if self.n_videos < 4 or self.n_videos % 2:
            raise ConfigError(f"n_videos must be an even number >= 4, got {self.n_videos}")
        if abs(sum(f for _, f in self.splits) - 1.0) > 1e-9:
            raise ConfigError(f"split fractions must sum to 1, got {self.splits}")
        if any(f < 0 for _, f in self.splits):
            raise ConfigError("split fractions must be non-negative")
        for k, f in self.artifact_mix:
            if k not in ARTIFACT_KINDS or f < 0:
                raise ConfigError(f"bad artifact mix entry {k}:{f}")
        if not 0 < self.intensity_min <= self.intensity_max <= 1:
            raise ConfigError("need 0 < intensity_min <= intensity_max <= 1")
        if self.clips_per_video < 1 or self.clip_len < 1:
            raise ConfigError("clips_per_video and clip_len must be positive")


def largest_remainder(total: int, weights) -> list[int]:
    """Integer allocation of ``total`` proportional to ``weights``."""
    w = np.asarray(weights, dtype=np.float64)
    if w.sum() <= 0:
        raise ConfigError("allocation weights must have a positive sum")
    raw = total * w / w.sum()
    base = np.floor(raw).astype(int)
    order = np.argsort(-(raw - base), kind="stable")
    for i in order[: total - base.sum()]:
        base[i] += 1
    return base.tolist()


@dataclass(frozen=True)
class IndexEntry:
    video_id: str
    split: str
    clip_path: str
    label: int
    artifact_kind: str
    region: int

    @property
    def source_id(self) -> str:
        return source_of(self.video_id)

    @property
    def clip_index(self) -> int:
        return int(Path(self.clip_path).name.split("_")[1].split(".")[0])


@dataclass
class CorpusIndex:
    root: Path
    entries: list[IndexEntry] = field(default_factory=list)

    @classmethod
    def load(cls, root) -> "CorpusIndex":
        root = Path(root)
        with open(root / "index.csv", newline="") as fh:
            rd = csv.reader(fh)
            header = next(rd)
            if tuple(header) != INDEX_HEADER:
                raise ValueError(f"{root / 'index.csv'}: unexpected header {header}")
            entries = [IndexEntry(r[0], r[1], r[2], int(r[3]), r[4], int(r[5])) for r in rd if r]
        return cls(root, entries)

    def save(self) -> None:
        with open(self.root / "index.csv", "w", newline="") as fh:
            wr = csv.writer(fh, lineterminator="\n")
            wr.writerow(INDEX_HEADER)
            for e in self.entries:
                wr.writerow([e.video_id, e.split, e.clip_path, e.label, e.artifact_kind, e.region])

    def split(self, name: str) -> list[IndexEntry]:
        return [e for e in self.entries if e.split == name]

    def videos(self, split: str | None = None) -> list[str]:
        seen = dict.fromkeys(e.video_id for e in self.entries if split is None or e.split == split)
        return list(seen)

    def partner(self, entry: IndexEntry) -> IndexEntry | None:
        """The aligned clip of the opposite label (same source video, same clip index)."""
        for e in self.entries:
            if (e.source_id == entry.source_id and e.clip_index == entry.clip_index
                    and e.label != entry.label):
                return e
        return None

    def load_clip(self, entry: IndexEntry) -> Clip:
        path = self.root / entry.clip_path
        frames = load_tensor(path).numpy()
        lms = read_landmarks_csv(path.with_name(path.name.replace(".ten", ".landmarks.csv")))
        return Clip(frames, lms, float(entry.label), entry.video_id, entry.source_id,
                    entry.clip_index * frames.shape[1])


def _assign_splits(kinds: list[str], cfg: CorpusConfig, rng: np.random.Generator) -> list[str]:
    """Split per source, exact split totals, artifact kinds spread evenly across splits."""
    n = len(kinds)
    names = [s for s, _ in cfg.splits]
    quotas = largest_remainder(n, [f for _, f in cfg.splits])
    queues = {k: [i for i in rng.permutation(n) if kinds[i] == k] for k in ARTIFACT_KINDS}
    order = [k for k in ARTIFACT_KINDS if queues[k]]
    out = [""] * n
    cursor = 0
    # smallest splits first so held-out sets see every kind
    for si in sorted(range(len(names)), key=lambda i: quotas[i]):
        for _ in range(quotas[si]):
            for step in range(len(order)):
                k = order[(cursor + step) % len(order)]
                if queues[k]:
                    out[queues[k].pop()] = names[si]
                    cursor = (cursor + step + 1) % len(order)
                    break
    return out


def _write_clip(root: Path, split: str, clip: Clip, k: int) -> str:
    d = root / split / clip.video_id
    d.mkdir(parents=True, exist_ok=True)
    save_tensor(d / f"clip_{k}.ten", clip.frames)
    write_landmarks_csv(d / f"clip_{k}.landmarks.csv", clip.landmarks)
    return f"{split}/{clip.video_id}/clip_{k}.ten"


def _build_pair(root: Path, idx: int, kind: str, split: str, cfg: CorpusConfig) -> list[IndexEntry]:
    rng = np.random.default_rng([cfg.seed, idx])
    motion_seed = int(rng.integers(2 ** 31))
    region = int(rng.integers(4))
    intensity = float(rng.uniform(cfg.intensity_min, cfg.intensity_max))
    art = ArtifactSpec(kind, region, intensity)
    src = f"s{idx:04d}"
    rows = []
    for k in range(cfg.clips_per_video):
        spec = ClipSpec(f"{src}_real", cfg.clip_len, cfg.image_size, cfg.image_size, motion_seed,
                        cfg.motion_amplitude, frame_start=k * cfg.clip_len)
        real = gen_real_clip(spec)
        fake = gen_fake_clip(real, art)
        rows.append(IndexEntry(real.video_id, split, _write_clip(root, split, real, k), 0, "none", -1))
        rows.append(IndexEntry(fake.video_id, split, _write_clip(root, split, fake, k), 1, kind, region))
    return rows


def build_corpus(root, cfg: CorpusConfig | None = None, threads: int | None = None) -> CorpusIndex:
    """Generate ``cfg.n_videos`` videos (half real, half aligned fakes) under ``root``."""
    cfg = cfg or CorpusConfig()
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    n_pairs = cfg.n_videos // 2
    rng = np.random.default_rng(cfg.seed)
    counts = largest_remainder(n_pairs, [f for _, f in cfg.artifact_mix])
    kinds = [k for (k, _), c in zip(cfg.artifact_mix, counts) for _ in range(c)]
    kinds = [kinds[i] for i in rng.permutation(n_pairs)]
    splits = _assign_splits(kinds, cfg, rng)
    threads = threads or int(os.environ.get("XDLF_THREADS", "1"))
    jobs = [(root, i, kinds[i], splits[i], cfg) for i in range(n_pairs)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(lambda a: _build_pair(*a), jobs))
    else:
        results = [_build_pair(*a) for a in jobs]
    entries = [e for rows in results for e in rows]
    entries.sort(key=lambda e: (e.video_id, e.clip_path))
    index = CorpusIndex(root, entries)
    index.save()
    return index

