"""Metrics, cross-view evaluation protocols, per-class breakdown, and
feature export.

Evaluation always runs the model with the joint prompt and never applies
masks (enforced by `masking.masks_forbidden`). Verb/noun accuracies are
derived from the action distribution, by marginalization by default or by
reading the components of the top-ranked actions behind the
"top_action_component" flag.
"""

from __future__ import annotations

import dataclasses
import json
import warnings
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import torch

from . import masking
from .checkpoint import Checkpoint, load_checkpoint
from .dataio import ClipRecord, Manifest, SplitLoader
from .errors import PrerequisiteError, ProtocolViolationError, ValidationError

PROTOCOLS = ("zero_shot_xview", "few_shot_xview", "third_to_ego", "hoi_xview_heldout")

# protocol -> (required checkpoint stage, evaluated split)
_PROTOCOL_PLAN = {
    "zero_shot_xview": ("ego_zero_shot", "ego_test"),
    "few_shot_xview": ("ego_few_shot", "ego_test"),
    "third_to_ego": ("view_tune", "ego_test"),
    "hoi_xview_heldout": ("view_tune", "heldout"),
}


def marginalize(
    action_probs: np.ndarray, num_verbs: int, num_nouns: int
) -> tuple[np.ndarray, np.ndarray]:
    """action_probs [..., V*N] -> (verb_probs [..., V], noun_probs [..., N])."""
    probs = np.asarray(action_probs, dtype=np.float64)
    sums = probs.sum(axis=-1)
    if not np.allclose(sums, 1.0, atol=1e-6):
        raise ValidationError("action probabilities must sum to 1")
    grid = probs.reshape(*probs.shape[:-1], num_verbs, num_nouns)
    return grid.sum(axis=-1), grid.sum(axis=-2)


def _topk_sets(probs: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k highest-probability classes, ties broken by lower
    class index; probs [batch, K] -> [batch, k]."""
    order = np.argsort(-probs, axis=-1, kind="stable")
    return order[:, :k]


def topk_accuracy(prob_batch: np.ndarray, labels: Sequence[int], k: int) -> float:
    probs = np.atleast_2d(np.asarray(prob_batch, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    if labels.min() < 0 or labels.max() >= probs.shape[-1]:
        raise ValidationError("label out of range")
    if k > probs.shape[-1]:
        warnings.warn(f"k={k} exceeds {probs.shape[-1]} classes; clamping")
        k = probs.shape[-1]
    top = _topk_sets(probs, k)
    hits = (top == labels[:, None]).any(axis=1)
    return float(hits.sum()) / len(labels)


def per_class_accuracy(dump: Sequence[dict]) -> list[dict]:
    """Rows of (class_id, n, top1) from a per-sample prediction dump."""
    if not dump:
        raise ValidationError("empty prediction dump")
    by_class: dict[int, list[int]] = {}
    for row in dump:
        probs = np.asarray(row["action_probs"], dtype=np.float64)
        pred = int(_topk_sets(probs[None, :], 1)[0, 0])
        by_class.setdefault(row["action_id"], []).append(int(pred == row["action_id"]))
    return [
        {"class_id": cid, "n": len(hits), "top1": float(np.mean(hits))}
        for cid, hits in sorted(by_class.items())
    ]


@dataclasses.dataclass
class MetricsReport:
    protocol: str
    accuracies: dict[str, float]  # e.g. "verb_top1" ... "action_top5"
    per_class: list[dict]
    sample_count: int
    seed: int
    config_hash: str

    def to_json(self) -> str:
        return json.dumps(dataclasses.asdict(self), sort_keys=True, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "MetricsReport":
        return cls(**json.loads(text))


def compute_metrics(
    dump: Sequence[dict],
    num_verbs: int,
    num_nouns: int,
    scoring: str = "marginal",
) -> dict[str, float]:
    if scoring not in ("marginal", "top_action_component"):
        raise ValidationError(f"unknown scoring rule {scoring!r}")
    action_probs = np.stack([np.asarray(r["action_probs"], dtype=np.float64) for r in dump])
    action_labels = [r["action_id"] for r in dump]
    verb_labels = [r["verb_id"] for r in dump]
    noun_labels = [r["noun_id"] for r in dump]
    out = {}
    for k, tag in ((1, "top1"), (5, "top5")):
        out[f"action_{tag}"] = topk_accuracy(action_probs, action_labels, k)
        if scoring == "marginal":
            verb_probs, noun_probs = marginalize(action_probs, num_verbs, num_nouns)
            out[f"verb_{tag}"] = topk_accuracy(verb_probs, verb_labels, k)
            out[f"noun_{tag}"] = topk_accuracy(noun_probs, noun_labels, k)
        else:
            vh = [
                ((_topk_sets(action_probs[i][None, :], k)[0] // num_nouns) == verb_labels[i]).any()
                for i in range(len(dump))
            ]
            nh = [
                ((_topk_sets(action_probs[i][None, :], k)[0] % num_nouns) == noun_labels[i]).any()
                for i in range(len(dump))
            ]
            out[f"verb_{tag}"] = float(np.mean(vh))
            out[f"noun_{tag}"] = float(np.mean(nh))
    return out


def predict_split(
    model,
    joint_prompt: Optional[torch.Tensor],
    records: Sequence[ClipRecord],
    root: Path,
    batch_size: int = 32,
) -> list[dict]:
    """Per-sample prediction dump: clip_id, labels, full action probabilities."""
    loader = SplitLoader(records, root, mode="labeled")
    dump = []
    with torch.no_grad(), masking.masks_forbidden("evaluation"):
        for start in range(0, len(loader), batch_size):
            idxs = list(range(start, min(start + batch_size, len(loader))))
            logits = model(loader.frames(idxs), view_prompts=joint_prompt)
            probs = torch.softmax(logits, dim=-1).cpu().numpy()
            for j, i in enumerate(idxs):
                r = loader.records[i]
                dump.append(
                    {
                        "clip_id": r.clip_id,
                        "verb_id": r.verb_id,
                        "noun_id": r.noun_id,
                        "action_id": r.action_id,
                        "action_probs": [float(x) for x in probs[j]],
                    }
                )
    return dump


def _find_checkpoints(checkpoint_dir: Path) -> dict[str, Path]:
    found = {}
    for stage in ("pretrain", "view_tune", "ego_zero_shot", "ego_few_shot"):
        p = Path(checkpoint_dir) / f"{stage}.ckpt"
        if p.exists():
            found[stage] = p
    return found


def evaluate_protocol(
    checkpoint_dir: Path,
    manifest: Manifest,
    protocol: str,
    scoring: str = "marginal",
    seed: int = 0,
) -> tuple[MetricsReport, list[dict]]:
    """Runs one evaluation protocol; returns the report and the prediction
    dump it was computed from."""
    if protocol not in PROTOCOLS:
        raise ValidationError(f"unknown protocol {protocol!r}")
    required_stage, split = _PROTOCOL_PLAN[protocol]
    found = _find_checkpoints(checkpoint_dir)
    if required_stage not in found:
        raise PrerequisiteError(
            f"protocol {protocol} requires a {required_stage} checkpoint "
            f"(have: {sorted(found) or 'none'})"
        )
    if protocol == "third_to_ego":
        ego = [s for s in ("ego_zero_shot", "ego_few_shot") if s in found]
        if ego:
            raise ProtocolViolationError(
                f"third_to_ego forbids egocentric checkpoints, found: {ego}"
            )
    ckpt = load_checkpoint(found[required_stage])
    if ckpt.stage != required_stage:
        raise ProtocolViolationError(
            f"checkpoint stage tag {ckpt.stage!r} != expected {required_stage!r}"
        )
    model = ckpt.build_model()
    model.eval()
    bank = ckpt.build_bank()
    joint = bank.joint_matrices().detach() if bank is not None else None
    records = manifest.split(split)
    dump = predict_split(model, joint, records, manifest.root)
    spec = manifest.spec
    accuracies = compute_metrics(dump, spec.num_verbs, spec.num_nouns, scoring)
    report = MetricsReport(
        protocol=protocol,
        accuracies=accuracies,
        per_class=per_class_accuracy(dump),
        sample_count=len(dump),
        seed=seed,
        config_hash=ckpt.config_hash,
    )
    return report, dump


def export_features(
    checkpoint_path: Path, manifest: Manifest, split: str, out_path: Path
) -> int:
    """Final-norm class-token features, one CSV row per clip. Returns the
    number of rows written."""
    ckpt = load_checkpoint(checkpoint_path)
    model = ckpt.build_model()
    model.eval()
    bank = ckpt.build_bank()
    joint = bank.joint_matrices().detach() if bank is not None else None
    records = manifest.split(split)
    loader = SplitLoader(records, manifest.root, mode="labeled")
    dim = model.config.embed_dim
    lines = ["clip_id,view_id,verb_id,noun_id,action_id,"
             + ",".join(f"f{i}" for i in range(dim))]
    with torch.no_grad(), masking.masks_forbidden("feature export"):
        for start in range(0, len(loader), 32):
            idxs = list(range(start, min(start + 32, len(loader))))
            frames = loader.frames(idxs)
            feats = _class_token_features(model, frames, joint).cpu().numpy()
            for j, i in enumerate(idxs):
                r = loader.records[i]
                vals = ",".join(repr(float(x)) for x in feats[j])
                lines.append(
                    f"{r.clip_id},{r.view_id},{r.verb_id},{r.noun_id},{r.action_id},{vals}"
                )
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text("\n".join(lines) + "\n")
    return len(records)


def _class_token_features(model, frames, view_prompts):
    seq = model.patch_tokens(frames)
    B = seq.shape[0]
    keep = 1 + model.config.video_token_count
    for b, (first, last) in enumerate(model.config.block_ranges()):
        seq = seq[:, :keep]
        if view_prompts is not None and view_prompts.shape[1] > 0:
            prompts = view_prompts[b].unsqueeze(0).expand(B, -1, -1)
            seq = torch.cat([seq, prompts.to(seq.dtype)], dim=1)
        for li in range(first - 1, last):
            seq = model.layers[li](seq)
    seq = seq[:, :keep]
    return model.final_norm(seq[:, 0])
