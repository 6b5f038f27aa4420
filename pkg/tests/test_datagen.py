import filecmp
from collections import Counter

import numpy as np
import pytest

from oracles import brute_auc
from xdlf.datagen import (ARTIFACT_KINDS, FLICKER_STEP, ArtifactSpec, ClipSpec, CorpusConfig, CorpusIndex,
                          build_corpus, gen_fake_clip, gen_real_clip, largest_remainder)
from xdlf.errors import ConfigError
from xdlf.fslr import extract_boxes
from xdlf.frequency import build_band_filters
from xdlf.tensor import dct2d

import torch


def real(seed=4, n=8, size=64, **kw):
    return gen_real_clip(ClipSpec(f"s{seed:04d}_real", n, size, size, motion_seed=seed, **kw))


def outside_mask(boxes, region, shape):
    keep = np.ones(shape, dtype=bool)
    for t, (h1, h2, w1, w2) in enumerate(boxes[:, region]):
        keep[:, t, h1:h2, w1:w2] = False
    return keep


# ---- real clips ---------------------------------------------------------------

def test_real_clip_deterministic():
    a, b = real(9), real(9)
    assert np.array_equal(a.frames, b.frames) and np.array_equal(a.landmarks, b.landmarks)
    assert not np.array_equal(a.frames, real(10).frames)
    assert a.frames.dtype == np.float32 and a.frames.shape == (3, 8, 64, 64)
    assert a.label == 0.0


def test_motion_bounded_by_amplitude():
    c = real(3, n=24, jitter_amplitude=0.0)
    spec = ClipSpec(motion_amplitude=1.5)
    step = np.linalg.norm(np.diff(c.landmarks, axis=0), axis=-1)
    assert step.max() <= spec.max_step + 1e-9
    assert spec.max_step <= spec.motion_amplitude
    mad = np.abs(np.diff(c.frames, axis=1)).mean(axis=(0, 2, 3))
    still = gen_real_clip(ClipSpec("s0003_real", 24, 64, 64, motion_seed=3, motion_amplitude=0.0))
    assert np.abs(np.diff(still.frames, axis=1)).max() == 0.0
    # first-order bound: pixel change <= displacement x mean gradient magnitude (with slack)
    gy, gx = np.gradient(c.frames.astype(np.float64), axis=(2, 3))
    grad = np.hypot(gx, gy).mean()
    assert mad.max() <= 1.5 * spec.max_step * grad


def test_boxes_valid_over_1000_seeds():
    for seed in range(1000):
        c = gen_real_clip(ClipSpec("s_real", 2, 64, 64, motion_seed=seed))
        b = extract_boxes(c.landmarks, 64, 64)
        assert b.shape == (2, 4, 4)
        assert np.all((c.landmarks >= 0) & (c.landmarks <= 63))


# ---- fakes ---------------------------------------------------------------------

@pytest.mark.parametrize("kind", ARTIFACT_KINDS)
@pytest.mark.parametrize("region", range(4))
def test_fake_differs_only_inside_box(kind, region):
    r = real(5)
    f = gen_fake_clip(r, ArtifactSpec(kind, region, 0.8))
    keep = outside_mask(r.boxes, region, r.frames.shape)
    assert np.array_equal(f.frames[keep], r.frames[keep])
    assert not np.array_equal(f.frames, r.frames)
    assert f.label == 1.0 and f.source_id == r.source_id and f.frame_start == r.frame_start


@pytest.mark.parametrize("kind", ARTIFACT_KINDS)
def test_vanishing_intensity_gives_real(kind):
    r = real(6)
    f = gen_fake_clip(r, ArtifactSpec(kind, 2, 1e-9))
    assert np.abs(f.frames - r.frames).max() <= 1e-7


def test_checker_energy_in_high_band():
    r = real(7)
    f = gen_fake_clip(r, ArtifactSpec("frequency_checker", 0, 1.0))
    delta = torch.tensor(f.frames.astype(np.float64) - r.frames.astype(np.float64))
    spec = dct2d(delta) ** 2
    high = torch.tensor(build_band_filters(64, 64).f_high)
    frac = (spec * high).sum() / spec.sum()
    assert frac.item() >= 0.90


def test_flicker_statistics():
    r = real(8)
    s = 0.9
    f = gen_fake_clip(r, ArtifactSpec("temporal_flicker", 3, s))
    dyn = float(r.frames.max() - r.frames.min())
    b = r.boxes[:, 3]
    means = [f.frames[:, t, h1:h2, w1:w2].mean() for t, (h1, h2, w1, w2) in enumerate(b)]
    assert np.all(np.abs(np.diff(means)) >= s * 0.5 * dyn)
    assert FLICKER_STEP >= 0.5
    for t in range(r.frames.shape[1]):
        v0, v1 = r.frames[:, t].var(), f.frames[:, t].var()
        assert abs(v1 - v0) / v0 < 0.10


def test_artifact_spec_validation():
    with pytest.raises(ConfigError):
        ArtifactSpec("glitter", 0, 0.5)
    with pytest.raises(ConfigError):
        ArtifactSpec("temporal_flicker", 4, 0.5)
    with pytest.raises(ConfigError):
        ArtifactSpec("temporal_flicker", 0, 0.0)
    with pytest.raises(ConfigError):
        ArtifactSpec("temporal_flicker", 0, 1.5)


# ---- corpus --------------------------------------------------------------------

def test_corpus_file_counts(tmp_path):
    build_corpus(tmp_path, CorpusConfig(n_videos=32, clips_per_video=2, clip_len=2, image_size=32))
    assert len(list(tmp_path.rglob("clip_*.ten"))) == 64
    assert len(list(tmp_path.rglob("clip_*.landmarks.csv"))) == 64
    assert (tmp_path / "index.csv").read_text().splitlines()[0] == \
        "video_id,split,clip_path,label,artifact_kind,region"


def test_corpus_splits_disjoint_and_paired(small_corpus):
    where = {}
    for e in small_corpus.entries:
        assert where.setdefault(e.video_id, e.split) == e.split
    by_source = {}
    for e in small_corpus.entries:
        assert by_source.setdefault(e.source_id, e.split) == e.split
    labels = Counter(e.label for e in small_corpus.entries)
    assert labels[0] == labels[1]
    per_split = Counter(small_corpus.entries[i].split for i in range(len(small_corpus.entries)))
    assert per_split == {"train": 16, "val": 8, "test": 8}


def test_corpus_histogram_matches_mix(small_corpus):
    fakes = {e.video_id: e.artifact_kind for e in small_corpus.entries if e.label == 1}
    hist = Counter(fakes.values())
    expected = largest_remainder(len(fakes), [1, 1, 1])
    for k, n in zip(ARTIFACT_KINDS, expected):
        assert abs(hist[k] - n) <= 1
    # every held-out split sees more than one artifact kind
    for split in ("val", "test"):
        assert len({e.artifact_kind for e in small_corpus.split(split) if e.label == 1}) >= 2


def test_corpus_deterministic(tmp_path):
    cfg = CorpusConfig(n_videos=8, clips_per_video=1, clip_len=2, image_size=32, seed=11)
    build_corpus(tmp_path / "a", cfg)
    build_corpus(tmp_path / "b", cfg, threads=3)
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    match, mismatch, errors = filecmp.cmpfiles(tmp_path / "a", tmp_path / "b", files, shallow=False)
    assert not mismatch and not errors and len(match) == len(files)


def test_corpus_outside_box_equality(small_corpus):
    for e in small_corpus.entries:
        if e.label != 1:
            continue
        fake = small_corpus.load_clip(e)
        partner = small_corpus.partner(e)
        r = small_corpus.load_clip(partner)
        keep = outside_mask(r.boxes, e.region, r.frames.shape)
        assert np.array_equal(fake.frames[keep], r.frames[keep])


def test_oracle_detector_separates(small_corpus):
    # score = artifact energy inside the declared box against the aligned real clip
    scores, labels = {}, {}
    for e in small_corpus.entries:
        if e.label == 1:
            clip = small_corpus.load_clip(e)
            ref = small_corpus.load_clip(small_corpus.partner(e))
            s = float(np.abs(clip.frames - ref.frames).sum())
        else:
            s = 0.0
        scores.setdefault(e.video_id, []).append(s)
        labels[e.video_id] = e.label
    vids = sorted(scores)
    assert brute_auc([labels[v] for v in vids], [np.mean(scores[v]) for v in vids]) == 1.0


def test_index_round_trip(small_corpus):
    back = CorpusIndex.load(small_corpus.root)
    assert back.entries == small_corpus.entries


def test_corpus_config_validation():
    with pytest.raises(ConfigError):
        CorpusConfig(n_videos=3)
    with pytest.raises(ConfigError):
        CorpusConfig(splits=(("train", 0.5), ("val", 0.2)))
    with pytest.raises(ConfigError):
        CorpusConfig(artifact_mix=(("glitter", 1.0),))


def test_largest_remainder():
    assert largest_remainder(16, [1, 1, 1]) == [6, 5, 5]
    assert sum(largest_remainder(17, [0.75, 0.25, 0])) == 17
