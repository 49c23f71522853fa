"""Three-stage training: full-parameter action pre-training with masking
prompts, prompt-only view-agnostic tuning, and egocentric adaptation in
zero-shot (prompt-only, information maximization) or few-shot
(full-parameter, cross-entropy) mode.

Every stage snapshots per-partition checksums before and after and runs a
freeze check against its allowed trainable set; a violation is a hard
failure, not a warning.
"""

from __future__ import annotations

import dataclasses
import json
import math
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from . import losses, masking
from .dataio import SplitLoader
from .errors import (
    ConfigurationError,
    FreezeViolationError,
    NumericError,
    ValidationError,
)
from .masking import MaskValueField, build_clip_masks
from .model import VideoTransformer, parameter_partition, partition_checksums
from .prompts import ViewPromptBank

STAGES = ("pretrain", "view_tune", "ego_zero_shot", "ego_few_shot")

TRAINABLE_SETS = {
    "pretrain": ("backbone", "head", "mask_prompt"),
    "view_tune": ("view_prompt",),
    "ego_zero_shot": ("view_prompt",),
    "ego_few_shot": ("backbone", "head", "view_prompt"),
}


@dataclasses.dataclass(frozen=True)
class StageConfig:
    stage: str
    epochs: int = 5
    batch_size: int = 16
    lr_start: float = 1e-3
    lr_end: float = 1e-5
    lam: float = 0.001  # view_tune only
    weight_decay: float = 0.01
    grad_clip: float = 1.0
    warmup_frac: float = 0.1  # linear warmup before the cosine decay
    seed: int = 0

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ConfigurationError(f"unknown stage {self.stage!r}")
        if self.epochs < 0 or self.batch_size < 1:
            raise ConfigurationError("epochs must be >= 0, batch_size >= 1")
        if self.lam < 0:
            raise ConfigurationError("lambda must be >= 0")

    @property
    def trainable_set(self) -> tuple[str, ...]:
        return TRAINABLE_SETS[self.stage]


@dataclasses.dataclass
class TrainingSnapshot:
    checksums: dict[str, str]
    step: int
    loss_history: list[float]


@dataclasses.dataclass
class FreezeReport:
    passed: bool
    violations: list[str]


def take_snapshot(
    model: VideoTransformer,
    bank: Optional[ViewPromptBank] = None,
    mask_fields: Optional[dict[str, MaskValueField]] = None,
    step: int = 0,
    loss_history: Optional[list[float]] = None,
) -> TrainingSnapshot:
    parts = parameter_partition(
        model, bank, list(mask_fields.values()) if mask_fields else None
    )
    return TrainingSnapshot(
        checksums=partition_checksums(parts),
        step=step,
        loss_history=list(loss_history or []),
    )


def freeze_check(
    before: TrainingSnapshot, after: TrainingSnapshot, allowed: tuple[str, ...]
) -> FreezeReport:
    violations = [
        part
        for part, ck in before.checksums.items()
        if part not in allowed and after.checksums[part] != ck
    ]
    return FreezeReport(passed=not violations, violations=violations)


class StepLogger:
    def __init__(self, path: Optional[Path]):
        self.path = Path(path) if path else None
        if self.path:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self.path.write_text("")

    def log(self, record: dict) -> None:
        if self.path:
            with self.path.open("a") as fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")


def _make_optimizer(params, cfg: StageConfig, total_steps: int):
    opt = torch.optim.AdamW(params, lr=cfg.lr_start, weight_decay=cfg.weight_decay)
    total_steps = max(1, total_steps)
    warmup_steps = int(cfg.warmup_frac * total_steps)
    cosine = torch.optim.lr_scheduler.CosineAnnealingLR(
        opt, T_max=max(1, total_steps - warmup_steps), eta_min=cfg.lr_end
    )
    if warmup_steps == 0:
        return opt, cosine
    warmup = torch.optim.lr_scheduler.LinearLR(
        opt, start_factor=1.0 / warmup_steps, end_factor=1.0, total_iters=warmup_steps
    )
    sched = torch.optim.lr_scheduler.SequentialLR(
        opt, [warmup, cosine], milestones=[warmup_steps]
    )
    return opt, sched


def _step(opt, sched, scalar_loss, params, cfg: StageConfig, stage: str, step: int,
          components: dict, logger: StepLogger, model=None, snapshot_path=None):
    if not torch.isfinite(scalar_loss):
        if snapshot_path:
            snapshot_path.parent.mkdir(parents=True, exist_ok=True)
            snapshot_path.write_text(json.dumps(
                {"stage": stage, "step": step, "components": components},
                sort_keys=True,
            ))
        raise NumericError(f"non-finite loss at {stage} step {step}: {components}")
    opt.zero_grad(set_to_none=True)
    scalar_loss.backward()
    grad_norm = torch.nn.utils.clip_grad_norm_(params, cfg.grad_clip)
    opt.step()
    sched.step()
    logger.log(
        {
            "stage": stage,
            "step": step,
            "lr": sched.get_last_lr()[0],
            "grad_norm": float(grad_norm),
            **{k: float(v) for k, v in components.items()},
            "loss": float(scalar_loss.detach()),
        }
    )


def _flip_batch(frames, annotations, rng, W):
    """Horizontal flip with probability .5 per sample, mirroring annotation x."""
    out_frames = frames.clone()
    out_ann = []
    for i, ann in enumerate(annotations):
        if rng.random() < 0.5:
            out_frames[i] = torch.flip(frames[i], dims=[2])
            centers = {
                role: [None if c is None else (W - 1 - c[0], c[1]) for c in cs]
                for role, cs in ann.centers.items()
            }
            ann = masking.InteractionAnnotation(centers=centers, box_size=ann.box_size)
        out_ann.append(ann)
    return out_frames, out_ann


def pretrain_action(
    model: VideoTransformer,
    mask_fields: Optional[dict[str, MaskValueField]],
    loader: SplitLoader,
    cfg: StageConfig,
    log_path: Optional[Path] = None,
    use_masks: bool = True,
    mask_scale: float = 1.0,
    augment: bool = True,
) -> TrainingSnapshot:
    """Stage 1: full-parameter cross-entropy with interactive masks applied
    to every batch. No view prompts are attached."""
    if cfg.stage != "pretrain":
        raise ConfigurationError(f"wrong stage config {cfg.stage!r}")
    logger = StepLogger(log_path)
    params = [p for _, p in parameter_partition(model)["backbone"]]
    params += [p for _, p in parameter_partition(model)["head"]]
    if mask_fields and use_masks:
        params += [f.values for f in mask_fields.values() if f.trainable]
    rng = np.random.default_rng(cfg.seed)
    total_steps = cfg.epochs * math.ceil(len(loader) / cfg.batch_size)
    opt, sched = _make_optimizer(params, cfg, total_steps)
    step = 0
    history = []
    W = model.config.width
    for _epoch in range(cfg.epochs):
        for idxs in loader.batches(cfg.batch_size, rng):
            frames = loader.frames(idxs)
            labels = loader.action_labels(idxs)
            annotations = loader.annotations(idxs)
            if augment:
                frames, annotations = _flip_batch(frames, annotations, rng, W)
            batch_masks = None
            if use_masks and mask_fields:
                batch_masks = torch.stack(
                    [build_clip_masks(a, mask_fields) for a in annotations]
                )
            logits = model(frames, masks=batch_masks, mask_scale=mask_scale)
            loss = losses.cross_entropy(logits, labels)
            _step(
                opt, sched, loss.scalar, params, cfg, "pretrain", step,
                loss.components, logger,
                snapshot_path=log_path.with_suffix(".abort.json") if log_path else None,
            )
            history.append(loss.item())
            step += 1
    return take_snapshot(model, mask_fields=mask_fields, step=step, loss_history=history)


def prompt_tune_view(
    model: VideoTransformer,
    bank: ViewPromptBank,
    loader: SplitLoader,
    cfg: StageConfig,
    mask_fields: Optional[dict[str, MaskValueField]] = None,
    log_path: Optional[Path] = None,
) -> TrainingSnapshot:
    """Stage 2: prompt-only tuning with view CE + lambda * cross-view KL.

    Backbone, head, and mask fields must come out bit-identical; masks are
    not applied in this stage."""
    if cfg.stage != "view_tune":
        raise ConfigurationError(f"wrong stage config {cfg.stage!r}")
    train_views = {r.view_id for r in loader.records}
    missing = train_views - set(bank.view_ids)
    if missing:
        raise ValidationError(f"bank missing train views: {sorted(missing)}")
    before = take_snapshot(model, bank, mask_fields)
    logger = StepLogger(log_path)
    rng = np.random.default_rng(cfg.seed)
    steps_per_epoch = sum(1 for _ in loader.batches_by_view(cfg.batch_size, rng))
    rng = np.random.default_rng(cfg.seed)
    opt, sched = _make_optimizer([bank.prompts], cfg, cfg.epochs * steps_per_epoch)
    frozen = [p for p in model.parameters()]
    for p in frozen:
        p.requires_grad_(False)
    step = 0
    history = []
    try:
        for _epoch in range(cfg.epochs):
            for view_id, idxs in loader.batches_by_view(cfg.batch_size, rng):
                frames = loader.frames(idxs)
                labels = loader.action_labels(idxs)
                loss = losses.stage2_loss(model, bank, frames, labels, view_id, cfg.lam)
                _step(
                    opt, sched, loss.scalar, [bank.prompts], cfg, "view_tune",
                    step, loss.components, logger,
                    snapshot_path=log_path.with_suffix(".abort.json") if log_path else None,
                )
                history.append(loss.item())
                step += 1
    finally:
        for p in frozen:
            p.requires_grad_(True)
    after = take_snapshot(model, bank, mask_fields, step=step, loss_history=history)
    report = freeze_check(before, after, cfg.trainable_set)
    if not report.passed:
        raise FreezeViolationError(
            f"non-prompt parameters changed during view_tune: {report.violations}"
        )
    return after


def ego_finetune(
    model: VideoTransformer,
    bank: ViewPromptBank,
    loader: SplitLoader,
    cfg: StageConfig,
    mask_fields: Optional[dict[str, MaskValueField]] = None,
    log_path: Optional[Path] = None,
) -> TrainingSnapshot:
    """Stage 3: egocentric adaptation with the joint prompt attached.

    ego_zero_shot: unlabeled loader, information-maximization objective,
    prompts only (freeze-checked). ego_few_shot: labeled loader,
    cross-entropy, backbone + head + prompts."""
    if cfg.stage not in ("ego_zero_shot", "ego_few_shot"):
        raise ConfigurationError(f"wrong stage config {cfg.stage!r}")
    zero_shot = cfg.stage == "ego_zero_shot"
    if zero_shot and loader.mode != "unlabeled":
        raise ConfigurationError("ego_zero_shot requires an unlabeled loader")
    if not zero_shot and loader.mode != "labeled":
        raise ConfigurationError("ego_few_shot requires a labeled loader")
    before = take_snapshot(model, bank, mask_fields)
    logger = StepLogger(log_path)
    rng = np.random.default_rng(cfg.seed)
    total_steps = cfg.epochs * math.ceil(len(loader) / cfg.batch_size)
    if zero_shot:
        params = [bank.prompts]
        frozen = list(model.parameters())
        for p in frozen:
            p.requires_grad_(False)
    else:
        params = list(model.parameters()) + [bank.prompts]
        frozen = []
    opt, sched = _make_optimizer(params, cfg, total_steps)
    step = 0
    history = []
    try:
        for _epoch in range(cfg.epochs):
            for idxs in loader.batches(cfg.batch_size, rng):
                if zero_shot and len(idxs) < 2:
                    continue  # IM loss degenerate on singleton batches
                frames = loader.frames(idxs)
                logits = model(frames, view_prompts=bank.joint_matrices())
                if zero_shot:
                    loss = losses.information_maximization(logits)
                else:
                    loss = losses.cross_entropy(logits, loader.action_labels(idxs))
                _step(
                    opt, sched, loss.scalar, params, cfg, cfg.stage, step,
                    loss.components, logger,
                    snapshot_path=log_path.with_suffix(".abort.json") if log_path else None,
                )
                history.append(loss.item())
                step += 1
    finally:
        for p in frozen:
            p.requires_grad_(True)
    after = take_snapshot(model, bank, mask_fields, step=step, loss_history=history)
    report = freeze_check(before, after, cfg.trainable_set)
    if not report.passed:
        raise FreezeViolationError(
            f"parameters outside {cfg.trainable_set} changed during {cfg.stage}: "
            f"{report.violations}"
        )
    return after
