#!/usr/bin/env python3
"""Directional desk-scale experiments.

For each seed, runs the full pipeline (pretrain -> prompt-tune -> zero-shot
ego adaptation) and compares zero-shot ego-test action accuracy against the
stage-1-only baseline (same pretrained backbone, no prompts, no ego tuning).
Optionally repeats the comparison with masks disabled and lambda = 0 (the
ablation configuration).

Usage:
    python3 scripts/directional_experiments.py --out runs/directional \
        [--seeds 0 1 2] [--ablation] [--override KEY VALUE ...]
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from crossview.config import parse_config  # noqa: E402
from crossview.pipeline import load_manifest, run_full_pipeline, _ckpt  # noqa: E402
from crossview.checkpoint import load_checkpoint  # noqa: E402
from crossview.evaluation import compute_metrics, predict_split  # noqa: E402


def stage1_baseline_accuracy(run_dir: Path) -> float:
    """Ego-test top-1 action accuracy of the pretrain checkpoint alone."""
    manifest = load_manifest(run_dir)
    ckpt = load_checkpoint(_ckpt(run_dir, "pretrain"))
    model = ckpt.build_model()
    model.eval()
    dump = predict_split(model, None, manifest.split("ego_test"), manifest.root)
    spec = manifest.spec
    return compute_metrics(dump, spec.num_verbs, spec.num_nouns)["action_top1"]


def run_seed(out_root: Path, seed: int, overrides: list[tuple[str, str]],
             tag: str) -> dict:
    cfg = parse_config(None, [("seed", str(seed))] + overrides)
    run_dir = out_root / f"{tag}-seed{seed}"
    t0 = time.time()
    reports = run_full_pipeline(cfg, run_dir, protocols=("zero_shot_xview",))
    full = reports["zero_shot_xview"].accuracies["action_top1"]
    baseline = stage1_baseline_accuracy(run_dir)
    row = {
        "tag": tag,
        "seed": seed,
        "stage1_baseline": baseline,
        "zero_shot_full": full,
        "improvement": full - baseline,
        "seconds": round(time.time() - t0, 1),
    }
    print(json.dumps(row), flush=True)
    return row


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, required=True)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--ablation", action="store_true",
                    help="also run with masks disabled and lambda = 0")
    ap.add_argument("--override", nargs=2, action="append", default=[],
                    metavar=("KEY", "VALUE"))
    args = ap.parse_args()
    overrides = [tuple(kv) for kv in args.override]
    rows = [run_seed(args.out, s, overrides, "full") for s in args.seeds]
    if args.ablation:
        ab = overrides + [("masks.enabled", "false"), ("stages.view_tune.lam", "0.0")]
        rows += [run_seed(args.out, s, ab, "ablation") for s in args.seeds]
    summary_path = args.out / "summary.jsonl"
    summary_path.parent.mkdir(parents=True, exist_ok=True)
    summary_path.write_text("".join(json.dumps(r) + "\n" for r in rows))
    for tag in sorted({r["tag"] for r in rows}):
        sub = [r for r in rows if r["tag"] == tag]
        mean_full = sum(r["zero_shot_full"] for r in sub) / len(sub)
        mean_base = sum(r["stage1_baseline"] for r in sub) / len(sub)
        wins = sum(r["improvement"] >= 0 for r in sub)
        print(f"{tag}: mean zero-shot {mean_full:.3f} vs stage-1 {mean_base:.3f} "
              f"({wins}/{len(sub)} seeds at-or-above)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
