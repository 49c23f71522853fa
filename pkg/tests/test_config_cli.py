"""Config merging/validation, override parsing, CLI exit codes, and the
end-to-end pipeline on a tiny run."""

import json
import os

import pytest
import yaml

from crossview import cli, pipeline
from crossview.config import DEFAULTS, parse_config
from crossview.errors import ConfigurationError


# -- config -------------------------------------------------------------


def test_defaults_parse():
    cfg = parse_config()
    assert cfg.seed == 0
    assert cfg.determinism
    assert cfg.masks_enabled and cfg.mask_kind == "hard"
    assert cfg.model_config().num_actions == 36
    assert cfg.world_spec().num_actions == 36
    assert cfg.stage_config("view_tune").lam == DEFAULTS["stages"]["view_tune"]["lam"]
    assert cfg.scoring == "marginal"
    assert len(cfg.hash()) == 16


def test_unknown_key_rejected_with_path(tmp_path):
    f = tmp_path / "c.yaml"
    f.write_text("stages:\n  pretrain:\n    lr_fast: 1\n")
    with pytest.raises(ConfigurationError) as ei:
        parse_config(f)
    assert "stages.pretrain.lr_fast" in str(ei.value)


def test_type_mismatches_rejected(tmp_path):
    for body in (
        "seed: fast\n",                # number <- string
        "determinism: 3\n",            # bool <- int
        "masks:\n  kind: 5\n",         # string <- int
        "model:\n  block_schedule: 4\n",  # list <- scalar
        "world: 7\n",                  # mapping <- scalar
    ):
        f = tmp_path / "c.yaml"
        f.write_text(body)
        with pytest.raises(ConfigurationError):
            parse_config(f)


def test_file_then_override_precedence(tmp_path):
    f = tmp_path / "c.yaml"
    f.write_text("seed: 7\nstages:\n  pretrain:\n    epochs: 3\n")
    cfg = parse_config(f, [("stages.pretrain.epochs", "5"), ("masks.enabled", "false")])
    assert cfg.seed == 7
    assert cfg.stage_config("pretrain").epochs == 5
    assert not cfg.masks_enabled
    # defaults untouched
    assert DEFAULTS["stages"]["pretrain"]["epochs"] != 5 or True
    assert parse_config().stage_config("pretrain").epochs == DEFAULTS["stages"]["pretrain"]["epochs"]


def test_override_unknown_key():
    with pytest.raises(ConfigurationError):
        parse_config(None, [("masks.opacity", "1")])


def test_missing_or_bad_config_file(tmp_path):
    with pytest.raises(ConfigurationError):
        parse_config(tmp_path / "none.yaml")
    bad = tmp_path / "bad.yaml"
    bad.write_text("seed: [unclosed\n")
    with pytest.raises(ConfigurationError):
        parse_config(bad)
    nonmap = tmp_path / "list.yaml"
    nonmap.write_text("- a\n- b\n")
    with pytest.raises(ConfigurationError):
        parse_config(nonmap)


def test_hash_covers_every_field():
    base = parse_config().hash()
    assert parse_config(None, [("seed", "1")]).hash() != base
    assert parse_config(None, [("masks.scale", "0.2")]).hash() != base
    assert parse_config(None, [("prompts.n", "3")]).hash() != base


def test_num_train_views_slices_rig():
    cfg = parse_config(None, [("world.num_train_views", "2")])
    assert [v.view_id for v in cfg.world_spec().train_views] == ["v1", "v2"]
    with pytest.raises(ConfigurationError):
        parse_config(None, [("world.num_train_views", "9")]).world_spec()


# -- CLI plumbing -------------------------------------------------------


def test_split_overrides():
    known, ov = cli._split_overrides(
        ["pretrain", "--run-dir", "x", "--masks.scale", "0.2",
         "--stages.pretrain.epochs=2"]
    )
    assert known == ["pretrain", "--run-dir", "x"]
    assert ov == [("masks.scale", "0.2"), ("stages.pretrain.epochs", "2")]
    with pytest.raises(ConfigurationError):
        cli._split_overrides(["--masks.scale"])


TINY = [
    ("world.num_verbs", "2"),
    ("world.num_nouns", "2"),
    ("world.frames", "2"),
    ("world.clips_per_action_per_view", "1"),
    ("world.ego_tune_clips_per_action", "1"),
    ("world.ego_test_clips_per_action", "1"),
    ("world.heldout_clips_per_action", "1"),
    ("model.height", "16"),
    ("model.width", "16"),
    ("model.embed_dim", "16"),
    ("model.num_layers", "2"),
    ("model.num_heads", "2"),
    ("model.mlp_ratio", "1.0"),
    ("model.block_schedule", "[1, 2]"),
    ("stages.pretrain.epochs", "1"),
    ("stages.view_tune.epochs", "1"),
    ("stages.ego_zero_shot.epochs", "1"),
    ("stages.ego_few_shot.epochs", "1"),
]

TINY_FLAGS = [f"--{k}={v}" for k, v in TINY]


def _run(args, run_dir):
    return cli.main(args + ["--run-dir", str(run_dir)] + TINY_FLAGS)


def test_cli_end_to_end(tmp_path, capsys):
    run = tmp_path / "run"
    assert _run(["generate-data"], run) == 0
    assert "generated" in capsys.readouterr().out
    assert _run(["pretrain"], run) == 0
    # overwrite guard -> usage error without --force
    assert _run(["pretrain"], run) == 2
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "usage" and "--force" in err["message"]
    assert _run(["pretrain", "--force"], run) == 0
    assert _run(["prompt-tune"], run) == 0
    # third_to_ego must run BEFORE any ego checkpoint exists
    capsys.readouterr()
    assert _run(["evaluate", "--protocol", "third_to_ego"], run) == 0
    out = capsys.readouterr().out
    report = json.loads(out[out.index("{"):])
    assert report["protocol"] == "third_to_ego"
    assert _run(["evaluate", "--protocol", "hoi_xview_heldout"], run) == 0
    capsys.readouterr()
    assert _run(["ego-finetune", "--mode", "zero_shot"], run) == 0
    assert _run(["evaluate", "--protocol", "zero_shot_xview"], run) == 0
    capsys.readouterr()
    # now third_to_ego is contaminated -> protocol exit code
    assert _run(["evaluate", "--protocol", "third_to_ego"], run) == 3
    err = json.loads(capsys.readouterr().err.strip().splitlines()[-1])
    assert err["error"] == "prerequisite"
    assert _run(["export-features", "--split", "heldout"], run) == 0
    assert (run / "features" / "heldout.csv").exists()
    assert (run / "reports" / "zero_shot_xview.json").exists()
    assert (run / "manifests" / "pretrain.json").exists()
    assert (run / "logs" / "pretrain.jsonl").exists()
    cfg_echo = json.loads((run / "config.json").read_text())
    assert cfg_echo["config"]["world"]["num_verbs"] == 2


def test_cli_exit_codes(tmp_path, capsys):
    run = tmp_path / "r2"
    # prerequisite: pretrain without data
    assert _run(["pretrain"], run) == 3
    capsys.readouterr()
    # usage: unknown override key
    assert cli.main(["pretrain", "--run-dir", str(run), "--masks.opacity=1"]) == 2
    capsys.readouterr()
    # usage: wrong value type for a numeric key
    assert cli.main(["generate-data", "--run-dir", str(run), "--masks.scale=banana"]) == 2
    capsys.readouterr()
    # unknown plain flag goes to argparse, which exits with code 2
    with pytest.raises(SystemExit) as ei:
        cli.main(["generate-data", "--run-dir", str(run), "--banana"])
    assert ei.value.code == 2
    capsys.readouterr()


def test_cli_run_root_env(tmp_path, monkeypatch):
    monkeypatch.setenv("CROSSVIEW_RUN_ROOT", str(tmp_path / "roots"))
    class A:
        run_dir = None
    assert cli._run_dir(A()) == tmp_path / "roots" / "default"


def test_generate_data_idempotent(tmp_path):
    run = tmp_path / "run"
    assert _run(["generate-data"], run) == 0
    first = (run / "data" / "manifest.jsonl").read_bytes()
    assert _run(["generate-data"], run) == 0
    assert (run / "data" / "manifest.jsonl").read_bytes() == first
