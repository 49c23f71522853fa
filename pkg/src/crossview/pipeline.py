"""End-to-end orchestration over a run directory.

Layout under the run directory:
    config.json               echoed effective configuration + hash
    data/                     generated dataset (frames/, manifest.jsonl, world.json)
    checkpoints/<stage>.ckpt  one checkpoint per completed stage
    logs/<stage>.jsonl        one structured record per training step
    reports/<protocol>.json   metrics reports (+ prediction dumps, per-class)
    features/<split>.csv      exported class-token features
    manifests/<command>.json  per-command provenance (config hash, io checksums)
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Optional

import torch

from . import evaluation, masking, training
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .dataio import Manifest, SplitLoader, generate_dataset
from .errors import ConfigurationError, CorruptDataError, PrerequisiteError
from .masking import ROLES, init_value_field
from .model import VideoTransformer
from .prompts import ViewPromptBank


def _apply_determinism(cfg: RunConfig) -> None:
    if cfg.determinism:
        torch.set_num_threads(1)


def _file_checksum(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_run_manifest(run_dir: Path, command: str, cfg: RunConfig,
                        inputs: dict[str, Path], outputs: dict[str, Path]) -> None:
    mdir = run_dir / "manifests"
    mdir.mkdir(parents=True, exist_ok=True)
    record = {
        "command": command,
        "config_hash": cfg.hash(),
        "inputs": {k: _file_checksum(p) for k, p in inputs.items() if Path(p).exists()},
        "outputs": {k: _file_checksum(p) for k, p in outputs.items()},
    }
    (mdir / f"{command}.json").write_text(json.dumps(record, sort_keys=True, indent=1))


def _echo_config(run_dir: Path, cfg: RunConfig) -> None:
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.json").write_text(
        json.dumps({"hash": cfg.hash(), "config": cfg.data}, sort_keys=True, indent=1)
    )


def _data_dir(run_dir: Path) -> Path:
    return Path(run_dir) / "data"


def _ckpt(run_dir: Path, stage: str) -> Path:
    return Path(run_dir) / "checkpoints" / f"{stage}.ckpt"


def _require_ckpt(run_dir: Path, stage: str) -> Path:
    p = _ckpt(run_dir, stage)
    if not p.exists():
        raise PrerequisiteError(f"missing prerequisite checkpoint: {stage}")
    return p


def _guard_overwrite(path: Path, force: bool) -> None:
    if path.exists() and not force:
        raise ConfigurationError(f"{path} exists; pass --force to overwrite")


def load_manifest(run_dir: Path) -> Manifest:
    ddir = _data_dir(run_dir)
    if not (ddir / "manifest.jsonl").exists():
        raise PrerequisiteError(f"no dataset in {ddir}; run generate-data first")
    return Manifest.load(ddir)


def make_mask_fields(cfg: RunConfig):
    if not cfg.masks_enabled:
        return None
    mc = cfg.model_config()
    shape = (mc.frames, mc.height, mc.width)
    return {
        role: init_value_field(role, cfg.mask_kind, shape, cfg.seed + 100 + i)
        for i, role in enumerate(ROLES)
    }


# -- commands -----------------------------------------------------------


def cmd_generate_data(cfg: RunConfig, run_dir: Path, force: bool = False) -> Manifest:
    # regeneration is byte-idempotent (the dataset is a pure function of the
    # spec), so no overwrite guard here
    _apply_determinism(cfg)
    _echo_config(run_dir, cfg)
    manifest = generate_dataset(cfg.world_spec(), _data_dir(run_dir))
    _write_run_manifest(
        run_dir, "generate-data", cfg, {},
        {"manifest": _data_dir(run_dir) / "manifest.jsonl"},
    )
    return manifest


def cmd_pretrain(cfg: RunConfig, run_dir: Path, force: bool = False) -> Path:
    _apply_determinism(cfg)
    _echo_config(run_dir, cfg)
    out = _ckpt(run_dir, "pretrain")
    _guard_overwrite(out, force)
    manifest = load_manifest(run_dir)
    model = VideoTransformer(cfg.model_config())
    mask_fields = make_mask_fields(cfg)
    loader = SplitLoader(manifest.split("train"), manifest.root, mode="labeled")
    training.pretrain_action(
        model, mask_fields, loader, cfg.stage_config("pretrain"),
        log_path=run_dir / "logs" / "pretrain.jsonl",
        use_masks=cfg.masks_enabled,
        mask_scale=cfg.mask_scale,
    )
    save_checkpoint(out, "pretrain", model, mask_fields=mask_fields,
                    config_hash=cfg.hash())
    _write_run_manifest(
        run_dir, "pretrain", cfg,
        {"manifest": _data_dir(run_dir) / "manifest.jsonl"}, {"checkpoint": out},
    )
    return out


def cmd_prompt_tune(cfg: RunConfig, run_dir: Path, force: bool = False) -> Path:
    _apply_determinism(cfg)
    _echo_config(run_dir, cfg)
    out = _ckpt(run_dir, "view_tune")
    _guard_overwrite(out, force)
    src = _require_ckpt(run_dir, "pretrain")
    manifest = load_manifest(run_dir)
    ckpt = load_checkpoint(src)
    model = ckpt.build_model()
    mask_fields = ckpt.build_mask_fields()
    train_view_ids = [v.view_id for v in manifest.spec.train_views]
    bank = ViewPromptBank(
        train_view_ids, model.config.num_blocks, cfg.prompt_count,
        model.config.embed_dim, seed=cfg.seed + 1,
    )
    loader = SplitLoader(manifest.split("train"), manifest.root, mode="labeled")
    training.prompt_tune_view(
        model, bank, loader, cfg.stage_config("view_tune"),
        mask_fields=mask_fields,
        log_path=run_dir / "logs" / "view_tune.jsonl",
    )
    save_checkpoint(out, "view_tune", model, bank=bank, mask_fields=mask_fields,
                    config_hash=cfg.hash())
    _write_run_manifest(
        run_dir, "prompt-tune", cfg, {"pretrain": src}, {"checkpoint": out},
    )
    return out


def cmd_ego_finetune(cfg: RunConfig, run_dir: Path, mode: str,
                     force: bool = False) -> Path:
    if mode not in ("zero_shot", "few_shot"):
        raise ConfigurationError(f"mode must be zero_shot|few_shot, got {mode!r}")
    stage = f"ego_{mode}"
    _apply_determinism(cfg)
    _echo_config(run_dir, cfg)
    out = _ckpt(run_dir, stage)
    _guard_overwrite(out, force)
    _require_ckpt(run_dir, "pretrain")
    src = _require_ckpt(run_dir, "view_tune")
    manifest = load_manifest(run_dir)
    ckpt = load_checkpoint(src)
    model = ckpt.build_model()
    mask_fields = ckpt.build_mask_fields()
    bank = ckpt.build_bank()
    if bank is None:
        raise CorruptDataError("view_tune checkpoint has no prompt bank")
    loader = SplitLoader(
        manifest.split("ego_tune"), manifest.root,
        mode="unlabeled" if mode == "zero_shot" else "labeled",
    )
    training.ego_finetune(
        model, bank, loader, cfg.stage_config(stage),
        mask_fields=mask_fields,
        log_path=run_dir / "logs" / f"{stage}.jsonl",
    )
    save_checkpoint(out, stage, model, bank=bank, mask_fields=mask_fields,
                    config_hash=cfg.hash())
    _write_run_manifest(
        run_dir, f"ego-finetune-{mode}", cfg, {"view_tune": src}, {"checkpoint": out},
    )
    return out


def cmd_evaluate(cfg: RunConfig, run_dir: Path, protocol: str) -> evaluation.MetricsReport:
    _apply_determinism(cfg)
    _echo_config(run_dir, cfg)
    manifest = load_manifest(run_dir)
    report, dump = evaluation.evaluate_protocol(
        Path(run_dir) / "checkpoints", manifest, protocol,
        scoring=cfg.scoring, seed=cfg.seed,
    )
    rdir = Path(run_dir) / "reports"
    rdir.mkdir(parents=True, exist_ok=True)
    report_path = rdir / f"{protocol}.json"
    report_path.write_text(report.to_json())
    dump_path = rdir / f"{protocol}_predictions.jsonl"
    dump_path.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in dump))
    _write_run_manifest(
        run_dir, f"evaluate-{protocol}", cfg,
        {"manifest": _data_dir(run_dir) / "manifest.jsonl"},
        {"report": report_path, "predictions": dump_path},
    )
    return report


_EXPORT_PREFERENCE = ("ego_few_shot", "ego_zero_shot", "view_tune", "pretrain")


def cmd_export_features(cfg: RunConfig, run_dir: Path, split: str,
                        stage: Optional[str] = None) -> Path:
    _apply_determinism(cfg)
    _echo_config(run_dir, cfg)
    manifest = load_manifest(run_dir)
    if stage is None:
        for s in _EXPORT_PREFERENCE:
            if _ckpt(run_dir, s).exists():
                stage = s
                break
        else:
            raise PrerequisiteError("no checkpoint found to export features from")
    src = _require_ckpt(run_dir, stage)
    out = Path(run_dir) / "features" / f"{split}.csv"
    evaluation.export_features(src, manifest, split, out)
    _write_run_manifest(
        run_dir, f"export-features-{split}", cfg, {"checkpoint": src}, {"features": out},
    )
    return out


def run_full_pipeline(cfg: RunConfig, run_dir: Path,
                      protocols: tuple[str, ...] = ("zero_shot_xview",),
                      force: bool = True) -> dict[str, evaluation.MetricsReport]:
    """generate -> pretrain -> prompt-tune -> zero-shot ego -> evaluate."""
    run_dir = Path(run_dir)
    cmd_generate_data(cfg, run_dir, force=force)
    cmd_pretrain(cfg, run_dir, force=force)
    cmd_prompt_tune(cfg, run_dir, force=force)
    reports = {}
    for protocol in protocols:
        if protocol in ("third_to_ego", "hoi_xview_heldout"):
            reports[protocol] = cmd_evaluate(cfg, run_dir, protocol)
    if "zero_shot_xview" in protocols:
        cmd_ego_finetune(cfg, run_dir, "zero_shot", force=force)
        reports["zero_shot_xview"] = cmd_evaluate(cfg, run_dir, "zero_shot_xview")
    if "few_shot_xview" in protocols:
        cmd_ego_finetune(cfg, run_dir, "few_shot", force=force)
        reports["few_shot_xview"] = cmd_evaluate(cfg, run_dir, "few_shot_xview")
    return reports
