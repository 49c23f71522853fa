import numpy as np
import pytest
import torch

from crossview.model import ModelConfig, VideoTransformer

torch.set_num_threads(1)


def tiny_config(**kw) -> ModelConfig:
    base = dict(
        frames=2,
        height=16,
        width=16,
        patch_size=8,
        embed_dim=16,
        num_layers=3,
        num_heads=2,
        mlp_ratio=1.0,
        num_verbs=3,
        num_nouns=2,
        block_schedule=(1, 2),
        seed=0,
    )
    base.update(kw)
    return ModelConfig(**base)


@pytest.fixture
def cfg() -> ModelConfig:
    return tiny_config()


@pytest.fixture
def model(cfg) -> VideoTransformer:
    return VideoTransformer(cfg)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(0)


def random_frames(cfg: ModelConfig, batch: int, seed: int = 0) -> torch.Tensor:
    g = torch.Generator().manual_seed(seed)
    return torch.rand(batch, cfg.frames, cfg.height, cfg.width, 3, generator=g)
