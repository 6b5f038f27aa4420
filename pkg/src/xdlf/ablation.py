"""Directional ablation protocol: train variants over seeds, compare held-out AUCs."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .datagen import ARTIFACT_KINDS, CorpusIndex
from .training import TrainConfig, evaluate, train

DEFAULT_VARIANTS = ("full", "no_fgfe", "rgb_rgb", "no_time_2d")

# (variant compared against full, artifact-kind subset or None for all fakes)
COMPARISONS = (
    ("no_fgfe", None),
    ("rgb_rgb", "frequency_checker"),
    ("no_time_2d", "temporal_flicker"),
)


@dataclass
class RunScore:
    variant: str
    seed: int
    video_auc: float | None
    kind_auc: dict[str, float | None]
    video_acc: float


def _mean(vals) -> float | None:
    vals = [v for v in vals if v is not None]
    return float(np.mean(vals)) if vals else None


@dataclass
class AblationReport:
    runs: list[RunScore]

    def mean_auc(self, variant: str, kind: str | None = None) -> float | None:
        rs = [r for r in self.runs if r.variant == variant]
        return _mean([r.video_auc if kind is None else r.kind_auc.get(kind) for r in rs])

    def margins(self) -> dict[str, float | None]:
        """Seed-averaged ``AUC(full) - AUC(variant)`` on each comparison's subset."""
        out = {}
        for variant, kind in COMPARISONS:
            a, b = self.mean_auc("full", kind), self.mean_auc(variant, kind)
            out[f"full-{variant}@{kind or 'all'}"] = None if a is None or b is None else a - b
        return out

    def to_json(self) -> str:
        return json.dumps({"runs": [asdict(r) for r in self.runs], "margins": self.margins(),
                           "full_kind_auc": {k: self.mean_auc("full", k) for k in ARTIFACT_KINDS}},
                          indent=2)


def run_ablation(corpus, base: TrainConfig, variants: Sequence[str] = DEFAULT_VARIANTS,
                 seeds: Sequence[int] = (0, 1, 2), split: str = "test", out_dir=None,
                 log: Callable[[str], None] | None = None) -> AblationReport:
    index = corpus if isinstance(corpus, CorpusIndex) else CorpusIndex.load(corpus)
    runs = []
    for seed in seeds:
        for v in variants:
            cfg = replace(base, variant=v, seed=seed, eval_split=split)
            run_dir = Path(out_dir) / f"{v}_s{seed}" if out_dir is not None else None
            res = train(cfg, index, run_dir)
            rep = evaluate(res.model, index, split)
            score = RunScore(v, seed, rep.video_auc, {k: rep.subset_auc(k) for k in ARTIFACT_KINDS},
                             rep.video_acc)
            runs.append(score)
            if log is not None:
                log(f"{v:12s} seed {seed} video AUC {score.video_auc} per kind {score.kind_auc}")
    report = AblationReport(runs)
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        (Path(out_dir) / "ablation.json").write_text(report.to_json())
    return report
