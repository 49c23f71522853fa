"""Run configuration: YAML file + dotted-flag overrides over defaults.

Unknown keys are rejected with their full path; the config hash covers every
field (they all affect outputs in determinism mode).
"""

from __future__ import annotations

import copy
import hashlib
import json
from pathlib import Path
from typing import Optional, Sequence

import yaml

from .dataio import WorldSpec
from .errors import ConfigurationError
from .model import ModelConfig
from .training import StageConfig

DEFAULTS: dict = {
    "seed": 0,
    "determinism": True,
    "world": {
        "num_verbs": 6,
        "num_nouns": 6,
        "frames": 4,
        "num_train_views": 4,
        "clips_per_action_per_view": 4,
        "ego_tune_clips_per_action": 2,
        "ego_test_clips_per_action": 10,
        "heldout_clips_per_action": 1,
    },
    "model": {
        "height": 32,
        "width": 32,
        "patch_size": 8,
        "embed_dim": 64,
        "num_layers": 6,
        "num_heads": 4,
        "mlp_ratio": 2.0,
        "block_schedule": [1, 2, 3, 5],
    },
    "masks": {"enabled": True, "kind": "hard", "size": 5, "scale": 0.1},
    "prompts": {"n": 4},
    "stages": {
        "pretrain": {"epochs": 60, "batch_size": 16, "lr_start": 1e-3, "lr_end": 1e-5},
        "view_tune": {
            "epochs": 10,
            "batch_size": 16,
            "lr_start": 1e-3,
            "lr_end": 1e-5,
            "lam": 0.1,
        },
        "ego_zero_shot": {"epochs": 20, "batch_size": 16, "lr_start": 1e-3, "lr_end": 1e-5},
        "ego_few_shot": {"epochs": 5, "batch_size": 16, "lr_start": 1e-4, "lr_end": 1e-6},
    },
    "evaluate": {"scoring": "marginal"},
}


def _merge(base: dict, update: dict, path: str = "") -> None:
    for key, value in update.items():
        full = f"{path}{key}"
        if key not in base:
            raise ConfigurationError(f"unknown config key: {full}")
        cur = base[key]
        if isinstance(cur, dict):
            if not isinstance(value, dict):
                raise ConfigurationError(f"config key {full} expects a mapping")
            _merge(cur, value, full + ".")
        else:
            if isinstance(cur, bool) != isinstance(value, bool):
                raise ConfigurationError(f"config key {full}: type mismatch")
            if isinstance(cur, (int, float)) and not isinstance(cur, bool):
                if not isinstance(value, (int, float)) or isinstance(value, bool):
                    raise ConfigurationError(
                        f"config key {full}: expected number, got {type(value).__name__}"
                    )
            elif isinstance(cur, str) and not isinstance(value, str):
                raise ConfigurationError(
                    f"config key {full}: expected string, got {type(value).__name__}"
                )
            elif isinstance(cur, list) and not isinstance(value, list):
                raise ConfigurationError(
                    f"config key {full}: expected list, got {type(value).__name__}"
                )
            base[key] = value


class RunConfig:
    def __init__(self, data: dict):
        self.data = data

    @property
    def seed(self) -> int:
        return int(self.data["seed"])

    @property
    def determinism(self) -> bool:
        return bool(self.data["determinism"])

    def hash(self) -> str:
        canon = json.dumps(self.data, sort_keys=True).encode()
        return hashlib.sha256(canon).hexdigest()[:16]

    def world_spec(self) -> WorldSpec:
        w = self.data["world"]
        m = self.data["model"]
        from .world import default_train_views

        n_train = int(w["num_train_views"])
        all_train = default_train_views(m["height"], m["width"])
        if not 1 <= n_train <= len(all_train):
            raise ConfigurationError(
                f"world.num_train_views must be 1..{len(all_train)}"
            )
        return WorldSpec(
            num_verbs=w["num_verbs"],
            num_nouns=w["num_nouns"],
            frames=w["frames"],
            height=m["height"],
            width=m["width"],
            train_views=tuple(all_train[:n_train]),
            clips_per_action_per_view=w["clips_per_action_per_view"],
            ego_tune_clips_per_action=w["ego_tune_clips_per_action"],
            ego_test_clips_per_action=w["ego_test_clips_per_action"],
            heldout_clips_per_action=w["heldout_clips_per_action"],
            mask_box_size=self.data["masks"]["size"],
            seed=self.seed,
        )

    def model_config(self) -> ModelConfig:
        w = self.data["world"]
        m = self.data["model"]
        return ModelConfig(
            frames=w["frames"],
            height=m["height"],
            width=m["width"],
            patch_size=m["patch_size"],
            embed_dim=m["embed_dim"],
            num_layers=m["num_layers"],
            num_heads=m["num_heads"],
            mlp_ratio=m["mlp_ratio"],
            num_verbs=w["num_verbs"],
            num_nouns=w["num_nouns"],
            block_schedule=tuple(m["block_schedule"]),
            seed=self.seed,
        )

    def stage_config(self, stage: str) -> StageConfig:
        if stage not in self.data["stages"]:
            raise ConfigurationError(f"unknown stage {stage!r}")
        s = self.data["stages"][stage]
        return StageConfig(stage=stage, seed=self.seed, **s)

    @property
    def masks_enabled(self) -> bool:
        return bool(self.data["masks"]["enabled"])

    @property
    def mask_kind(self) -> str:
        kind = self.data["masks"]["kind"]
        if kind not in ("hard", "soft"):
            raise ConfigurationError(f"masks.kind must be hard|soft, got {kind!r}")
        return kind

    @property
    def mask_scale(self) -> float:
        return float(self.data["masks"]["scale"])

    @property
    def prompt_count(self) -> int:
        return int(self.data["prompts"]["n"])

    @property
    def scoring(self) -> str:
        return self.data["evaluate"]["scoring"]


def parse_config(
    path: Optional[Path] = None, overrides: Sequence[tuple[str, str]] = ()
) -> RunConfig:
    """Defaults <- config file <- dotted overrides, strictly validated."""
    data = copy.deepcopy(DEFAULTS)
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigurationError(f"config file not found: {path}")
        try:
            loaded = yaml.safe_load(path.read_text())
        except yaml.YAMLError as e:
            raise ConfigurationError(f"config file {path} does not parse: {e}") from e
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigurationError(f"config file {path} must be a mapping")
        _merge(data, loaded)
    for dotted, raw in overrides:
        keys = dotted.split(".")
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError:
            value = raw
        node: dict = {}
        leaf = node
        for k in keys[:-1]:
            leaf[k] = {}
            leaf = leaf[k]
        leaf[keys[-1]] = value
        _merge(data, node)
    return RunConfig(data)
