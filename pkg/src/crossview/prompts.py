"""Trainable block-scheduled view-aware prompt bank and joint-prompt ensembling."""

from __future__ import annotations

import math
from typing import Sequence

import torch
import torch.nn as nn

from .errors import ConfigurationError, ValidationError


def _trunc_normal_(t: torch.Tensor, std: float, generator: torch.Generator) -> None:
    # inverse-CDF truncated normal on (-2std, 2std), deterministic under generator
    a, b = -2.0, 2.0
    lo = 0.5 * (1 + math.erf(a / math.sqrt(2)))
    hi = 0.5 * (1 + math.erf(b / math.sqrt(2)))
    u = torch.rand(t.shape, generator=generator, dtype=torch.float64)
    u = lo + u * (hi - lo)
    samples = torch.erfinv(2 * u - 1) * math.sqrt(2) * std
    with torch.no_grad():
        t.copy_(samples.to(t.dtype))


class ViewPromptBank(nn.Module):
    """Prompt vectors indexed by (view, block): tensor [N, B, n, D].

    `select` returns shared-storage slices so gradients flow to the bank;
    `joint_matrices` is the per-block elementwise sum over views (a sum, not
    a mean, so its magnitude grows with the number of views).
    """

    def __init__(
        self,
        view_ids: Sequence[str],
        num_blocks: int,
        prompts_per_block: int,
        embed_dim: int,
        seed: int = 0,
        dtype: torch.dtype = torch.float32,
    ):
        super().__init__()
        view_ids = list(view_ids)
        if len(set(view_ids)) != len(view_ids):
            raise ConfigurationError("duplicate view ids in prompt bank")
        if num_blocks < 1 or embed_dim < 1 or prompts_per_block < 0:
            raise ConfigurationError(
                f"bad bank shape N={len(view_ids)} B={num_blocks} "
                f"n={prompts_per_block} d={embed_dim}"
            )
        self.view_ids = view_ids
        self.prompts = nn.Parameter(
            torch.empty(len(view_ids), num_blocks, prompts_per_block, embed_dim,
                        dtype=dtype)
        )
        g = torch.Generator().manual_seed(seed)
        _trunc_normal_(self.prompts, std=0.02, generator=g)

    @property
    def num_views(self) -> int:
        return len(self.view_ids)

    @property
    def prompts_per_block(self) -> int:
        return self.prompts.shape[2]

    def index_of(self, view_id: str) -> int:
        try:
            return self.view_ids.index(view_id)
        except ValueError:
            raise ValidationError(f"unknown view id {view_id!r}") from None

    def select(self, view_id: str) -> torch.Tensor:
        """Per-block prompt matrices [B, n, D] for one view (shared storage)."""
        return self.prompts[self.index_of(view_id)]

    def joint_matrices(self) -> torch.Tensor:
        """Joint prompt [B, n, D]: elementwise sum over all views (autograd-
        connected to the bank)."""
        return self.prompts.sum(dim=0)
