"""Stage mechanics: freeze contracts, loaders-to-losses wiring, abort paths."""

import json

import numpy as np
import pytest
import torch

from crossview import dataio, masking, training
from crossview.errors import (
    ConfigurationError,
    FreezeViolationError,
    NumericError,
)
from crossview.model import ModelConfig, VideoTransformer
from crossview.prompts import ViewPromptBank


def _spec():
    return dataio.WorldSpec(
        num_verbs=2, num_nouns=2, frames=2, height=16, width=16,
        clips_per_action_per_view=1, ego_tune_clips_per_action=1,
        ego_test_clips_per_action=1, heldout_clips_per_action=1, seed=0,
    )


def _model_cfg():
    return ModelConfig(
        frames=2, height=16, width=16, patch_size=8, embed_dim=16,
        num_layers=2, num_heads=2, mlp_ratio=1.0, num_verbs=2, num_nouns=2,
        block_schedule=(1, 2), seed=0,
    )


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    root = tmp_path_factory.mktemp("train_data")
    manifest = dataio.generate_dataset(_spec(), root)
    return root, manifest


def _fields(kind="soft"):
    return {
        r: masking.init_value_field(r, kind, (2, 16, 16), seed=i)
        for i, r in enumerate(masking.ROLES)
    }


def _bank(mc, views=("v1", "v2", "v3", "v4"), seed=1):
    return ViewPromptBank(views, mc.num_blocks, 2, mc.embed_dim, seed=seed)


def test_stage_config_validation():
    with pytest.raises(ConfigurationError):
        training.StageConfig(stage="warmup")
    with pytest.raises(ConfigurationError):
        training.StageConfig(stage="pretrain", epochs=-1)
    with pytest.raises(ConfigurationError):
        training.StageConfig(stage="view_tune", lam=-0.1)
    assert training.StageConfig(stage="pretrain").trainable_set == (
        "backbone", "head", "mask_prompt",
    )


def test_freeze_check_logic():
    a = training.TrainingSnapshot({"backbone": "x", "head": "y"}, 0, [])
    b = training.TrainingSnapshot({"backbone": "x", "head": "z"}, 1, [])
    ok = training.freeze_check(a, b, allowed=("head",))
    assert ok.passed
    bad = training.freeze_check(a, b, allowed=("backbone",))
    assert not bad.passed and bad.violations == ["head"]


def test_pretrain_updates_backbone_and_soft_masks(data, tmp_path):
    root, manifest = data
    loader = dataio.SplitLoader(manifest.split("train"), root)
    model = VideoTransformer(_model_cfg())
    fields = _fields("soft")
    before = training.take_snapshot(model, mask_fields=fields)
    cfg = training.StageConfig(stage="pretrain", epochs=1, batch_size=8, seed=0)
    log = tmp_path / "pre.jsonl"
    snap = training.pretrain_action(model, fields, loader, cfg, log, mask_scale=0.1)
    assert snap.step == 2  # 16 clips / batch 8
    assert len(snap.loss_history) == 2
    assert snap.checksums["backbone"] != before.checksums["backbone"]
    assert snap.checksums["head"] != before.checksums["head"]
    assert snap.checksums["mask_prompt"] != before.checksums["mask_prompt"]
    lines = [json.loads(l) for l in log.read_text().splitlines()]
    assert len(lines) == 2
    assert {"stage", "step", "lr", "grad_norm", "loss", "ce"} <= set(lines[0])


def test_pretrain_hard_masks_stay_fixed(data):
    root, manifest = data
    loader = dataio.SplitLoader(manifest.split("train"), root)
    model = VideoTransformer(_model_cfg())
    fields = _fields("hard")
    vals = {r: f.values.clone() for r, f in fields.items()}
    cfg = training.StageConfig(stage="pretrain", epochs=1, batch_size=16)
    training.pretrain_action(model, fields, loader, cfg, None, mask_scale=0.1)
    for r, f in fields.items():
        assert torch.equal(f.values, vals[r])


def test_pretrain_deterministic(data):
    root, manifest = data
    loader = dataio.SplitLoader(manifest.split("train"), root)
    cfg = training.StageConfig(stage="pretrain", epochs=1, batch_size=8, seed=3)
    snaps = []
    for _ in range(2):
        model = VideoTransformer(_model_cfg())
        snaps.append(
            training.pretrain_action(model, _fields("hard"), loader, cfg, None,
                                     mask_scale=0.1)
        )
    assert snaps[0].checksums == snaps[1].checksums
    assert snaps[0].loss_history == snaps[1].loss_history


def test_view_tune_only_moves_prompts(data):
    root, manifest = data
    mc = _model_cfg()
    loader = dataio.SplitLoader(manifest.split("train"), root)
    model = VideoTransformer(mc)
    bank = _bank(mc)
    fields = _fields("soft")
    before = training.take_snapshot(model, bank, fields)
    cfg = training.StageConfig(stage="view_tune", epochs=1, batch_size=8, lam=0.001)
    snap = training.prompt_tune_view(model, bank, loader, cfg, fields)
    assert snap.checksums["view_prompt"] != before.checksums["view_prompt"]
    for part in ("backbone", "head", "mask_prompt"):
        assert snap.checksums[part] == before.checksums[part]
    # requires_grad restored after the stage
    assert all(p.requires_grad for p in model.parameters())


def test_view_tune_rejects_missing_views(data):
    root, manifest = data
    mc = _model_cfg()
    loader = dataio.SplitLoader(manifest.split("train"), root)
    bank = _bank(mc, views=("v1", "v2"))
    cfg = training.StageConfig(stage="view_tune", epochs=1)
    with pytest.raises(Exception) as ei:
        training.prompt_tune_view(VideoTransformer(mc), bank, loader, cfg)
    assert "missing train views" in str(ei.value)


def test_ego_zero_shot_prompts_only_no_label_reads(data):
    root, manifest = data
    mc = _model_cfg()
    loader = dataio.SplitLoader(manifest.split("ego_tune"), root, mode="unlabeled")
    model = VideoTransformer(mc)
    bank = _bank(mc)
    before = training.take_snapshot(model, bank)
    cfg = training.StageConfig(stage="ego_zero_shot", epochs=2, batch_size=4)
    snap = training.ego_finetune(model, bank, loader, cfg)
    assert loader.label_reads == 0
    assert snap.checksums["view_prompt"] != before.checksums["view_prompt"]
    assert snap.checksums["backbone"] == before.checksums["backbone"]
    assert snap.checksums["head"] == before.checksums["head"]


def test_ego_zero_shot_requires_unlabeled(data):
    root, manifest = data
    mc = _model_cfg()
    labeled = dataio.SplitLoader(manifest.split("ego_tune"), root, mode="labeled")
    cfg = training.StageConfig(stage="ego_zero_shot", epochs=1)
    with pytest.raises(ConfigurationError):
        training.ego_finetune(VideoTransformer(mc), _bank(mc), labeled, cfg)
    unlabeled = dataio.SplitLoader(manifest.split("ego_tune"), root, mode="unlabeled")
    few = training.StageConfig(stage="ego_few_shot", epochs=1)
    with pytest.raises(ConfigurationError):
        training.ego_finetune(VideoTransformer(mc), _bank(mc), unlabeled, few)


def test_ego_few_shot_updates_backbone(data):
    root, manifest = data
    mc = _model_cfg()
    loader = dataio.SplitLoader(manifest.split("ego_tune"), root, mode="labeled")
    model = VideoTransformer(mc)
    bank = _bank(mc)
    before = training.take_snapshot(model, bank)
    cfg = training.StageConfig(stage="ego_few_shot", epochs=1, batch_size=4)
    snap = training.ego_finetune(model, bank, loader, cfg)
    assert snap.checksums["backbone"] != before.checksums["backbone"]
    assert snap.checksums["view_prompt"] != before.checksums["view_prompt"]
    assert loader.label_reads > 0


def test_zero_shot_skips_singleton_batches(data):
    root, manifest = data
    mc = _model_cfg()
    # 4 ego_tune clips, batch 3 -> one batch of 3 and one singleton (skipped)
    loader = dataio.SplitLoader(manifest.split("ego_tune"), root, mode="unlabeled")
    cfg = training.StageConfig(stage="ego_zero_shot", epochs=1, batch_size=3)
    snap = training.ego_finetune(VideoTransformer(mc), _bank(mc), loader, cfg)
    assert snap.step == 1


def test_nan_loss_aborts_with_snapshot(data, tmp_path):
    root, manifest = data
    loader = dataio.SplitLoader(manifest.split("train"), root)
    model = VideoTransformer(_model_cfg())
    with torch.no_grad():
        model.head.weight.fill_(float("nan"))
    cfg = training.StageConfig(stage="pretrain", epochs=1, batch_size=16)
    log = tmp_path / "boom.jsonl"
    with pytest.raises(NumericError):
        training.pretrain_action(model, None, loader, cfg, log, use_masks=False)
    abort = json.loads(log.with_suffix(".abort.json").read_text())
    assert abort["stage"] == "pretrain" and abort["step"] == 0


def test_flip_batch_mirrors_annotations():
    rng = np.random.default_rng(0)
    frames = torch.arange(2 * 2 * 4 * 4 * 3, dtype=torch.float32).reshape(2, 2, 4, 4, 3)
    ann = masking.InteractionAnnotation(
        centers={r: [(1, 2), None] for r in masking.ROLES}, box_size=3
    )
    flipped_any = False
    for _ in range(20):
        out, anns = training._flip_batch(frames, [ann, ann], rng, W=4)
        for i, a in enumerate(anns):
            if a is ann:
                assert torch.equal(out[i], frames[i])
            else:
                flipped_any = True
                assert torch.equal(out[i], torch.flip(frames[i], dims=[2]))
                assert a.centers["left"] == [(4 - 1 - 1, 2), None]
    assert flipped_any


def test_warmup_then_cosine_decay():
    p = torch.nn.Parameter(torch.zeros(1))
    cfg = training.StageConfig(stage="pretrain", lr_start=1e-3, lr_end=1e-5)
    opt, sched = training._make_optimizer([p], cfg, total_steps=100)
    lrs = []
    for _ in range(100):
        opt.step()
        sched.step()
        lrs.append(sched.get_last_lr()[0])
    # warmup: rising over the first 10 steps
    assert lrs[0] < lrs[5] < lrs[9]
    assert abs(lrs[9] - 1e-3) < 1e-8
    # cosine: decaying to lr_end
    assert lrs[20] > lrs[60] > lrs[-1]
    assert abs(lrs[-1] - 1e-5) < 1e-6
