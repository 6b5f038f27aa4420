"""Optimization loop and video-level evaluation.

Recipe: binary cross-entropy on one logit, AdamW with decoupled weight decay,
cosine-annealed learning rate stepped per epoch, Mixup on aligned real/fake
pairs, and minority-class oversampling. Evaluation averages clip
probabilities per video before computing ACC and AUC.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch
import torch.nn.functional as F

from .datagen import Clip, CorpusIndex, IndexEntry
from .errors import ConfigError, TrainingError
from .metrics import accuracy, confusion, roc_auc
from .model import BackboneConfig, ModelConfig, XdlfModel, save_model
from .tensor import backward, zero_grad

METRICS_HEADER = ("epoch", "lr", "train_loss", "train_acc", "val_acc", "val_auc")


@dataclass(frozen=True)
class TrainConfig:
    lr0: float = 1e-4
    lr_min: float = 0.0
    weight_decay: float = 1e-4
    batch_size: int = 4
    t_max: int = 32
    epochs: int = 16
    max_steps: int = 0
    mixup_alpha: float = 0.5
    mixup_prob: float = 0.5
    oversample: bool = True
    seed: int = 0
    variant: str = "full"
    stem_channels: int = 8
    widths: tuple[int, ...] = (16, 32, 64)
    blocks: tuple[int, ...] = (1, 1, 1)
    fslr_pool: int = 7
    reduction: int = 16
    eval_split: str = "val"
    eval_batch: int = 8

    def __post_init__(self):
        if self.lr0 <= 0 or self.weight_decay < 0 or self.lr_min < 0:
            raise ConfigError("learning rates must be positive and weight decay non-negative")
        if self.batch_size < 1 or self.t_max < 1 or self.epochs < 1:
            raise ConfigError("batch_size, t_max and epochs must be positive")
        if self.mixup_alpha < 0 or not 0 <= self.mixup_prob <= 1:
            raise ConfigError("mixup_alpha must be >= 0 and mixup_prob in [0, 1]")
        if self.mixup_enabled and self.batch_size < 2:
            raise ConfigError("Mixup needs batch_size >= 2")
        self.model_config()  # validates variant and backbone

    @property
    def mixup_enabled(self) -> bool:
        return self.mixup_alpha > 0 and self.mixup_prob > 0

    def model_config(self) -> ModelConfig:
        bb = BackboneConfig(stem_channels=self.stem_channels, widths=tuple(self.widths),
                            blocks=tuple(self.blocks))
        return ModelConfig(backbone=bb, variant=self.variant, fslr_pool=self.fslr_pool,
                           reduction=self.reduction)


# ---------------------------------------------------------------------------
# optimizer and schedule
# ---------------------------------------------------------------------------

@dataclass
class AdamWState:
    step: int = 0
    m: list[torch.Tensor] = field(default_factory=list)
    v: list[torch.Tensor] = field(default_factory=list)


@torch.no_grad()
def adamw_step(params: Sequence[torch.Tensor], grads: Sequence[torch.Tensor | None],
               state: AdamWState, lr: float, beta1: float = 0.9, beta2: float = 0.999,
               eps: float = 1e-8, weight_decay: float = 0.0) -> AdamWState:
    """One in-place AdamW update.

    Weight decay is decoupled (``p -= lr * wd * p`` before the adaptive step);
    moments are bias-corrected. Parameters with ``None`` gradients are skipped
    entirely, decay included.
    """
    if not state.m:
        state.m = [torch.zeros_like(p) for p in params]
        state.v = [torch.zeros_like(p) for p in params]
    state.step += 1
    bc1 = 1 - beta1 ** state.step
    bc2 = 1 - beta2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            continue
        p.mul_(1 - lr * weight_decay)
        m.mul_(beta1).add_(g, alpha=1 - beta1)
        v.mul_(beta2).addcmul_(g, g, value=1 - beta2)
        p.sub_(lr * (m / bc1) / ((v / bc2).sqrt() + eps))
    return state


class AdamW:
    def __init__(self, params, weight_decay: float = 0.0, betas=(0.9, 0.999), eps: float = 1e-8):
        self.params = [p for p in params if p.requires_grad]
        self.weight_decay = weight_decay
        self.betas = betas
        self.eps = eps
        self.state = AdamWState()

    def zero_grad(self) -> None:
        zero_grad(self.params)

    def step(self, lr: float) -> None:
        adamw_step(self.params, [p.grad for p in self.params], self.state, lr, self.betas[0],
                   self.betas[1], self.eps, self.weight_decay)


def cosine_lr(t: int, lr0: float, t_max: int, lr_min: float = 0.0) -> float:
    """Cosine annealing with warm restarts.

    ``t = 0`` gives ``lr0`` and ``t = t_max`` gives ``lr_min``; the next step
    restarts the cycle.
    """
    if t < 0:
        raise ValueError(f"step must be >= 0, got {t}")
    phase = 0 if t == 0 else (t - 1) % t_max + 1
    return lr_min + (lr0 - lr_min) * (1 + math.cos(math.pi * phase / t_max)) / 2


# ---------------------------------------------------------------------------
# data handling
# ---------------------------------------------------------------------------

def mixup_pair(real: Clip, fake: Clip, alpha: float, rng: np.random.Generator,
               beta: float | None = None) -> tuple[Clip, float]:
    """Blend an aligned real/fake pair: ``beta * real + (1 - beta) * fake``.

    The soft label is ``1 - beta`` (fake = 1). Landmarks come from the real
    clip. ``beta`` is drawn from ``Beta(alpha, alpha)`` unless given.
    """
    if (real.source_id != fake.source_id or real.frame_start != fake.frame_start
            or real.frames.shape != fake.frames.shape):
        raise ValueError(
            f"unaligned pair: {real.video_id}@{real.frame_start} vs {fake.video_id}@{fake.frame_start}")
    if real.label != 0 or fake.label != 1:
        raise ValueError("mixup_pair expects (real, fake) in that order")
    if beta is None:
        beta = float(rng.beta(alpha, alpha))
    frames = (beta * real.frames.astype(np.float64)
              + (1 - beta) * fake.frames.astype(np.float64)).astype(real.frames.dtype)
    label = beta * 0.0 + (1 - beta) * 1.0
    mixed = Clip(frames, real.landmarks, label, real.video_id, real.source_id, real.frame_start)
    return mixed, label


def build_epoch_plan(labels: Sequence[int], batch_size: int, oversample: bool,
                     rng: np.random.Generator) -> list[list[int]]:
    """Shuffled batches of clip indices.

    With ``oversample`` the minority class keeps every clip once and is topped
    up by sampling with replacement until both classes have equal counts.
    """
    y = np.asarray(labels, dtype=np.int64)
    pos = np.nonzero(y == 1)[0]
    neg = np.nonzero(y == 0)[0]
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("epoch plan needs clips of both classes")
    order = np.concatenate([pos, neg])
    if oversample and len(pos) != len(neg):
        minority, majority = (pos, neg) if len(pos) < len(neg) else (neg, pos)
        extra = rng.choice(minority, size=len(majority) - len(minority), replace=True)
        order = np.concatenate([majority, minority, extra])
    order = rng.permutation(order)
    return [order[i:i + batch_size].tolist() for i in range(0, len(order), batch_size)]


class ClipStore:
    """In-memory cache of a corpus split: frames, boxes, labels, aligned partners."""

    def __init__(self, index: CorpusIndex, split: str):
        self.index = index
        self.entries: list[IndexEntry] = index.split(split)
        self.clips: list[Clip] = [index.load_clip(e) for e in self.entries]
        self.boxes = [c.boxes for c in self.clips]
        key = {(e.source_id, e.clip_index, e.label): i for i, e in enumerate(self.entries)}
        self.partner = [key.get((e.source_id, e.clip_index, 1 - e.label)) for e in self.entries]

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def labels(self) -> list[int]:
        return [e.label for e in self.entries]

    def batch(self, ids: Sequence[int]) -> tuple[torch.Tensor, np.ndarray, torch.Tensor]:
        frames = torch.from_numpy(np.stack([self.clips[i].frames for i in ids]))
        boxes = np.stack([self.boxes[i] for i in ids])
        labels = torch.tensor([float(self.entries[i].label) for i in ids])
        return frames, boxes, labels


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

@dataclass
class EvalReport:
    split: str
    clip_acc: float
    clip_auc: float | None
    video_acc: float
    video_auc: float | None
    confusion: dict[str, int]
    video_ids: list[str]
    video_labels: list[int]
    video_probs: list[float]
    video_kinds: list[str]
    clip_probs: list[float]

    def subset_auc(self, kind: str) -> float | None:
        """Video AUC on all real videos plus fakes of one artifact kind."""
        keep = [i for i, (y, k) in enumerate(zip(self.video_labels, self.video_kinds))
                if y == 0 or k == kind]
        return roc_auc([self.video_labels[i] for i in keep], [self.video_probs[i] for i in keep])

    def json_lines(self) -> list[str]:
        def fmt(v):
            return "undefined" if v is None else v

        out = [
            json.dumps({"level": "clip", "split": self.split, "acc": self.clip_acc,
                        "auc": fmt(self.clip_auc), "n": len(self.clip_probs)}),
            json.dumps({"level": "video", "split": self.split, "acc": self.video_acc,
                        "auc": fmt(self.video_auc), "n": len(self.video_ids), **self.confusion}),
        ]
        for vid, y, p, k in zip(self.video_ids, self.video_labels, self.video_probs, self.video_kinds):
            out.append(json.dumps({"level": "video_score", "video_id": vid, "label": y, "prob": p,
                                   "artifact_kind": k}))
        return out


def clip_probabilities(model: XdlfModel, store: ClipStore, batch_size: int = 8) -> np.ndarray:
    was_training = model.training
    model.eval()
    probs = []
    dtype = next(model.parameters()).dtype
    try:
        with torch.no_grad():
            for i in range(0, len(store), batch_size):
                frames, boxes, _ = store.batch(range(i, min(i + batch_size, len(store))))
                probs.append(torch.sigmoid(model(frames.to(dtype), boxes)).double().numpy())
    finally:
        model.train(was_training)
    return np.concatenate(probs) if probs else np.zeros(0)


def video_scores(entries: Sequence[IndexEntry], clip_probs: Sequence[float]):
    """Average clip probabilities per video, in first-appearance order."""
    groups: dict[str, list[int]] = {}
    for i, e in enumerate(entries):
        groups.setdefault(e.video_id, []).append(i)
    ids = list(groups)
    first = {vid: entries[groups[vid][0]] for vid in ids}
    probs = [float(np.mean([clip_probs[i] for i in groups[vid]])) for vid in ids]
    return ids, [first[v].label for v in ids], probs, [first[v].artifact_kind for v in ids]


def evaluate(model: XdlfModel, index: CorpusIndex | ClipStore, split: str = "test",
             batch_size: int = 8) -> EvalReport:
    store = index if isinstance(index, ClipStore) else ClipStore(index, split)
    probs = clip_probabilities(model, store, batch_size)
    labels = store.labels
    ids, vlabels, vprobs, kinds = video_scores(store.entries, probs)
    return EvalReport(
        split=split,
        clip_acc=accuracy(labels, probs),
        clip_auc=roc_auc(labels, probs),
        video_acc=accuracy(vlabels, vprobs),
        video_auc=roc_auc(vlabels, vprobs),
        confusion=confusion(vlabels, vprobs),
        video_ids=ids,
        video_labels=vlabels,
        video_probs=vprobs,
        video_kinds=kinds,
        clip_probs=probs.tolist(),
    )


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class TrainResult:
    model: XdlfModel
    rows: list[dict]
    checkpoint: Path | None
    metrics_csv: Path | None
    steps: int


def _mixed_batch(store: ClipStore, ids: Sequence[int], cfg: TrainConfig, rng: np.random.Generator):
    frames, boxes, labels = store.batch(ids)
    if not cfg.mixup_enabled:
        return frames, boxes, labels
    for j, i in enumerate(ids):
        p = store.partner[i]
        if p is None or rng.random() >= cfg.mixup_prob:
            continue
        real_i, fake_i = (i, p) if store.entries[i].label == 0 else (p, i)
        mixed, label = mixup_pair(store.clips[real_i], store.clips[fake_i], cfg.mixup_alpha, rng)
        frames[j] = torch.from_numpy(mixed.frames)
        boxes[j] = store.boxes[real_i]
        labels[j] = label
    return frames, boxes, labels


def train(cfg: TrainConfig, corpus, out_dir=None,
          log: Callable[[str], None] | None = None) -> TrainResult:
    """Train a model on the ``train`` split of ``corpus``.

    Writes ``model.ckpt`` (every epoch) and ``metrics.csv`` into ``out_dir``
    when it is given.
    """
    index = corpus if isinstance(corpus, CorpusIndex) else CorpusIndex.load(corpus)
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    model = XdlfModel(cfg.model_config())
    opt = AdamW(model.parameters(), weight_decay=cfg.weight_decay)
    train_store = ClipStore(index, "train")
    eval_store = ClipStore(index, cfg.eval_split)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    ckpt = out / "model.ckpt" if out is not None else None
    metrics_path = out / "metrics.csv" if out is not None else None
    rows: list[dict] = []
    step = 0
    for epoch in range(cfg.epochs):
        lr = cosine_lr(epoch, cfg.lr0, cfg.t_max, cfg.lr_min)
        model.train()
        losses = []
        for batch_id, ids in enumerate(build_epoch_plan(train_store.labels, cfg.batch_size,
                                                        cfg.oversample, rng)):
            frames, boxes, labels = _mixed_batch(train_store, ids, cfg, rng)
            opt.zero_grad()
            logits = model(frames, boxes)
            loss = F.binary_cross_entropy_with_logits(logits, labels)
            if not torch.isfinite(loss):
                msg = (f"non-finite loss {loss.item()} at epoch {epoch} batch {batch_id}; clips: "
                       + ", ".join(train_store.entries[i].clip_path for i in ids))
                if out is not None:
                    (out / "bad_batch.txt").write_text(msg + "\n")
                raise TrainingError(msg)
            backward(loss)
            opt.step(lr)
            losses.append(loss.item())
            step += 1
            if cfg.max_steps and step >= cfg.max_steps:
                break
        train_probs = clip_probabilities(model, train_store, cfg.eval_batch)
        report = evaluate(model, eval_store, cfg.eval_split, cfg.eval_batch)
        row = {
            "epoch": epoch,
            "lr": lr,
            "train_loss": float(np.mean(losses)),
            "train_acc": accuracy(train_store.labels, train_probs),
            "val_acc": report.video_acc,
            "val_auc": float("nan") if report.video_auc is None else report.video_auc,
        }
        rows.append(row)
        if log is not None:
            log(f"epoch {epoch} step {step} lr {lr:.3g} loss {row['train_loss']:.4f} "
                f"train_acc {row['train_acc']:.3f} val_acc {row['val_acc']:.3f} val_auc {row['val_auc']:.3f}")
        if out is not None:
            save_model(model, ckpt)
            write_metrics(metrics_path, rows)
        if cfg.max_steps and step >= cfg.max_steps:
            break
    model.eval()
    return TrainResult(model, rows, ckpt, metrics_path, step)


def write_metrics(path, rows: Sequence[dict]) -> None:
    with open(Path(path), "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(METRICS_HEADER)
        for r in rows:
            wr.writerow([r["epoch"]] + [repr(float(r[k])) for k in METRICS_HEADER[1:]])


def config_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)
