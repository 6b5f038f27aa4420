"""Attention-map dumps for a single clip: PGM heatmaps plus scalar weights."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .fslr import extract_boxes, project_boxes
from .frequency import band_components
from .model import LEVELS, XdlfModel


def write_pgm(path, img) -> None:
    """8-bit binary PGM (P5), min-max normalized; a constant image maps to 0."""
    a = np.asarray(img, dtype=np.float64)
    if a.ndim != 2:
        raise ValueError(f"PGM needs a 2-D array, got shape {a.shape}")
    lo, hi = a.min(), a.max()
    q = np.zeros(a.shape, np.uint8) if hi <= lo else np.round(255 * (a - lo) / (hi - lo)).astype(np.uint8)
    with open(Path(path), "wb") as fh:
        fh.write(f"P5\n{a.shape[1]} {a.shape[0]}\n255\n".encode("ascii"))
        fh.write(q.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    if maxval != 255:
        raise ValueError(f"{path}: only 8-bit PGMs are supported")
    return np.frombuffer(parts[4][: w * h], dtype=np.uint8).reshape(h, w)


@dataclass
class Inspection:
    maps: dict[str, np.ndarray]       # name -> 2-D heatmap
    values: dict[str, float]          # alpha_* / lambda_*
    logit: float


def inspect_clip(model: XdlfModel, frames: torch.Tensor, landmarks) -> Inspection:
    """Run ``model`` (eval mode) on one clip ``[3, d, h, w]`` and collect its maps.

    Attention maps are averaged over channels and time; band components are
    averaged over colour channels at the middle frame.
    """
    h, w = frames.shape[-2:]
    boxes = extract_boxes(landmarks, h, w)
    trace: dict = {}
    model.eval()
    dtype = next(model.parameters()).dtype
    with torch.no_grad():
        logit = model(frames.to(dtype), boxes, trace=trace)
    maps: dict[str, np.ndarray] = {}
    for stream in ("a", "b"):
        if f"fgfe_{stream}" in trace:
            maps[f"fgfe_{stream}"] = trace[f"fgfe_{stream}"][0].mean(dim=(0, 1)).numpy()
    for lvl in LEVELS:
        m = trace.get(f"cross_{lvl}")
        if m is not None:
            maps[f"cross_{lvl}_a"] = m[0, 0].mean(dim=0).numpy()
            maps[f"cross_{lvl}_b"] = m[0, 1].mean(dim=0).numpy()
    if model.uses_frequency:
        mid = frames[:, frames.shape[1] // 2].to(torch.float64)
        comps = band_components(mid, model.band_filters(h, w))
        for name, comp in zip(("low", "mid", "high"), comps):
            maps[f"band_{name}"] = comp.mean(dim=0).numpy()
    values = {}
    if model.band_weights is not None:
        values.update(zip(("alpha_low", "alpha_mid", "alpha_high"), model.band_weights.alpha.tolist()))
    values.update(zip(("lambda_low", "lambda_mid", "lambda_high"), model.ensemble.lambdas.tolist()))
    return Inspection(maps, values, float(logit))


def write_inspection(result: Inspection, out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, img in result.maps.items():
        p = out / f"{name}.pgm"
        write_pgm(p, img)
        paths.append(p)
    p = out / "values.csv"
    with open(p, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["name", "value"])
        for k, v in result.values.items():
            wr.writerow([k, repr(float(v))])
        wr.writerow(["logit", repr(result.logit)])
    paths.append(p)
    return paths


def peak_in_box(heatmap: np.ndarray, boxes: np.ndarray, region: int, image_hw: tuple[int, int]) -> bool:
    """Whether the heatmap argmax falls inside ``region``'s box in any frame.

    ``boxes`` are per-frame image-space boxes ``[d, 4, 4]``; they are projected
    onto the heatmap grid first.
    """
    hh, ww = heatmap.shape
    i, j = np.unravel_index(int(np.argmax(heatmap)), heatmap.shape)
    pb = project_boxes(boxes, image_hw, (hh, ww))[:, region]
    return bool(np.any((pb[:, 0] <= i) & (i < pb[:, 1]) & (pb[:, 2] <= j) & (j < pb[:, 3])))
