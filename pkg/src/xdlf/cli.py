"""``xdlf`` command line: gen-data, train, eval, inspect, grad-check, ablation.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
Every command that writes artifacts also writes one ``<command>.manifest.json``
next to them.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path

import torch

from . import __version__
from .ablation import DEFAULT_VARIANTS, run_ablation
from .config import from_mapping, read_config
from .datagen import CorpusConfig, CorpusIndex, build_corpus
from .errors import ConfigError, XdlfError
from .fslr import read_landmarks_csv
from .gradcheck import SUITES, run as run_gradcheck
from .inspection import inspect_clip, write_inspection
from .model import VARIANTS, config_path, load_model
from .tensor import load_tensor
from .training import TrainConfig, evaluate, train

MANIFEST_SUFFIX = ".manifest.json"


# ---------------------------------------------------------------------------
# manifests
# ---------------------------------------------------------------------------

def git_blob_hash(data: bytes) -> str:
    """Content hash in git's blob format (``sha1("blob <len>\\0" + data)``)."""
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def content_hash(path) -> str:
    """Blob hash of a file, or a tree-style hash over every file under a directory."""
    p = Path(path)
    if p.is_file():
        return git_blob_hash(p.read_bytes())
    lines = []
    for f in sorted(q for q in p.rglob("*") if q.is_file() and not q.name.endswith(MANIFEST_SUFFIX)):
        lines.append(f"{f.relative_to(p).as_posix()} {git_blob_hash(f.read_bytes())}\n")
    return git_blob_hash("".join(lines).encode("utf-8"))


def write_manifest(out_dir, command: str, config: dict, seed, inputs: dict, outputs, started: float,
                   name: str | None = None) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "command": command,
        "version": __version__,
        "config": config,
        "seed": seed,
        "inputs": {k: {"path": str(v), "hash": content_hash(v)} for k, v in inputs.items() if v is not None},
        "outputs": sorted(str(p) for p in outputs),
        "wall_clock_s": round(time.time() - started, 3),
    }
    p = out / ((name or command) + MANIFEST_SUFFIX)
    p.write_text(json.dumps(manifest, indent=2, default=str) + "\n")
    return p


def _load_config(cls, path, **overrides):
    mapping = read_config(path) if path else {}
    cfg = from_mapping(cls, mapping)
    overrides = {k: v for k, v in overrides.items() if v is not None}
    return replace(cfg, **overrides) if overrides else cfg


def _log(msg: str) -> None:
    print(msg, flush=True)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen_data(args) -> int:
    t0 = time.time()
    cfg = _load_config(CorpusConfig, args.config, seed=args.seed)
    index = build_corpus(args.out, cfg)
    outputs = [Path(args.out) / "index.csv"] + [Path(args.out) / e.clip_path for e in index.entries]
    write_manifest(args.out, "gen-data", asdict(cfg), cfg.seed, {"config": args.config}, outputs, t0)
    n_videos = len(index.videos())
    _log(f"wrote {len(index.entries)} clips from {n_videos} videos to {args.out}")
    return 0


def cmd_train(args) -> int:
    t0 = time.time()
    cfg = _load_config(TrainConfig, args.config, variant=args.variant, seed=args.seed)
    result = train(cfg, args.corpus, args.out, log=_log)
    outputs = [result.checkpoint, config_path(result.checkpoint), result.metrics_csv]
    write_manifest(args.out, "train", asdict(cfg), cfg.seed,
                   {"config": args.config, "corpus": args.corpus}, outputs, t0)
    return 0


def cmd_eval(args) -> int:
    t0 = time.time()
    model = load_model(args.checkpoint)
    index = CorpusIndex.load(args.corpus)
    report = evaluate(model, index, args.split)
    lines = report.json_lines()
    for line in lines[:2]:
        print(line)
    out_dir = Path(args.out) if args.out else Path(args.checkpoint).parent
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"eval_{args.split}.jsonl"
    path.write_text("\n".join(lines) + "\n")
    write_manifest(out_dir, "eval", {"split": args.split}, None,
                   {"checkpoint": args.checkpoint, "corpus": args.corpus}, [path], t0,
                   name=f"eval_{args.split}")
    return 0


def cmd_inspect(args) -> int:
    t0 = time.time()
    model = load_model(args.checkpoint)
    clip = Path(args.clip)
    frames = load_tensor(clip)
    lm_path = Path(args.landmarks) if args.landmarks else clip.with_name(clip.name.replace(".ten", ".landmarks.csv"))
    landmarks = read_landmarks_csv(lm_path)
    result = inspect_clip(model, frames, landmarks)
    paths = write_inspection(result, args.out)
    for k, v in result.values.items():
        _log(f"{k} = {v:.6f}")
    _log(f"wrote {len(paths)} files to {args.out}")
    write_manifest(args.out, "inspect", {}, None,
                   {"checkpoint": args.checkpoint, "clip": clip, "landmarks": lm_path}, paths, t0)
    return 0


def cmd_grad_check(args) -> int:
    suites = SUITES if args.module == "all" else (args.module,)
    results = run_gradcheck(suites, seed=args.seed, log=_log)
    ok = all(r.passed for r in results)
    _log("all gradient checks passed" if ok else "gradient check FAILED")
    return 0 if ok else 1


def cmd_ablation(args) -> int:
    t0 = time.time()
    cfg = _load_config(TrainConfig, args.config)
    variants = tuple(args.variants.split(",")) if args.variants else DEFAULT_VARIANTS
    bad = [v for v in variants if v not in VARIANTS]
    if bad:
        raise ConfigError(f"unknown variant(s) {', '.join(bad)}; valid: {', '.join(VARIANTS)}")
    seeds = tuple(int(s) for s in args.seeds.split(","))
    report = run_ablation(args.corpus, cfg, variants, seeds, args.split, args.out, log=_log)
    for k, v in report.margins().items():
        _log(f"margin {k}: {v}")
    write_manifest(args.out, "ablation", asdict(cfg), list(seeds), {"config": args.config, "corpus": args.corpus},
                   [Path(args.out) / "ablation.json"], t0)
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="xdlf", description="Two-stream deepfake detector toolkit")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic real/fake clip corpus")
    g.add_argument("--config", help="key = value file with corpus settings")
    g.add_argument("--out", required=True, help="output corpus directory")
    g.add_argument("--seed", type=int)
    g.set_defaults(func=cmd_gen_data)

    t = sub.add_parser("train", help="train a model on a corpus")
    t.add_argument("--config", help="key = value file with training settings")
    t.add_argument("--corpus", required=True)
    t.add_argument("--out", required=True)
    t.add_argument("--variant", choices=VARIANTS)
    t.add_argument("--seed", type=int)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score a corpus split with a checkpoint")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--corpus", required=True)
    e.add_argument("--split", default="test")
    e.add_argument("--out", help="report directory (default: next to the checkpoint)")
    e.set_defaults(func=cmd_eval)

    i = sub.add_parser("inspect", help="dump attention maps and band components for one clip")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--clip", required=True, help="clip .ten file")
    i.add_argument("--landmarks", help="landmark CSV (default: alongside the clip)")
    i.add_argument("--out", required=True)
    i.set_defaults(func=cmd_inspect)

    c = sub.add_parser("grad-check", help="finite-difference gradient suites")
    c.add_argument("--module", default="all", choices=("all",) + SUITES)
    c.add_argument("--seed", type=int, default=0)
    c.set_defaults(func=cmd_grad_check)

    a = sub.add_parser("ablation", help="train variants over seeds and compare held-out AUC")
    a.add_argument("--config", help="key = value file with training settings")
    a.add_argument("--corpus", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--variants", help=f"comma list (default {','.join(DEFAULT_VARIANTS)})")
    a.add_argument("--seeds", default="0,1,2")
    a.add_argument("--split", default="test")
    a.set_defaults(func=cmd_ablation)
    return p


def _apply_threads() -> None:
    raw = os.environ.get("XDLF_THREADS")
    if raw:
        try:
            n = int(raw)
        except ValueError:
            raise ConfigError(f"XDLF_THREADS must be an integer, got {raw!r}") from None
        if n < 1:
            raise ConfigError(f"XDLF_THREADS must be >= 1, got {n}")
        torch.set_num_threads(n)


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # usage errors exit with status 2
    try:
        _apply_threads()
        return args.func(args)
    except ConfigError as exc:
        print(f"xdlf {args.command}: configuration error: {exc}", file=sys.stderr)
        return 2
    except (XdlfError, OSError, ValueError, RuntimeError) as exc:
        print(f"xdlf {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
