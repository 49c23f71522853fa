"""Small video vision transformer with prompt-token attachment at block boundaries.

The backbone is a plain pre-norm transformer over patch tokens from T frames.
Layers are grouped into blocks by a schedule of first-layer indices; at each
block boundary the previous block's prompt tokens are stripped and the next
block's prompts are attached, so the video-token count is constant throughout.
The classification head reads the class token after the final norm.
"""

from __future__ import annotations

import dataclasses
import hashlib
from typing import Optional, Sequence

import torch
import torch.nn as nn

from .errors import ConfigurationError, IntegrityError
from . import masking


@dataclasses.dataclass(frozen=True)
class ModelConfig:
    frames: int = 4
    height: int = 32
    width: int = 32
    patch_size: int = 8
    embed_dim: int = 64
    num_layers: int = 6
    num_heads: int = 4
    mlp_ratio: float = 2.0
    num_verbs: int = 6
    num_nouns: int = 6
    block_schedule: tuple[int, ...] = (1, 2, 3, 5)
    seed: int = 0

    def __post_init__(self):
        if self.height % self.patch_size or self.width % self.patch_size:
            raise ConfigurationError(
                f"patch_size {self.patch_size} must divide H={self.height}, W={self.width}"
            )
        if self.embed_dim % self.num_heads:
            raise ConfigurationError(
                f"num_heads {self.num_heads} must divide embed_dim {self.embed_dim}"
            )
        sched = tuple(self.block_schedule)
        if not sched or sched[0] != 1:
            raise ConfigurationError("block_schedule must start with layer 1")
        if list(sched) != sorted(set(sched)):
            raise ConfigurationError("block_schedule must be strictly ascending")
        if sched[-1] > self.num_layers:
            raise ConfigurationError(
                f"block_schedule {sched} exceeds num_layers {self.num_layers}"
            )
        object.__setattr__(self, "block_schedule", sched)

    @property
    def num_actions(self) -> int:
        return self.num_verbs * self.num_nouns

    @property
    def video_token_count(self) -> int:
        p = self.patch_size
        return self.frames * (self.height // p) * (self.width // p)

    @property
    def num_blocks(self) -> int:
        return len(self.block_schedule)

    def block_ranges(self) -> list[tuple[int, int]]:
        """1-based inclusive [first, last] layer range per block."""
        firsts = list(self.block_schedule)
        lasts = [f - 1 for f in firsts[1:]] + [self.num_layers]
        return list(zip(firsts, lasts))

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["block_schedule"] = list(d["block_schedule"])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        d["block_schedule"] = tuple(d["block_schedule"])
        return cls(**d)


class TransformerLayer(nn.Module):
    """Pre-norm self-attention + MLP with residuals."""

    def __init__(self, dim: int, heads: int, mlp_ratio: float):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.norm2 = nn.LayerNorm(dim)
        hidden = int(dim * mlp_ratio)
        self.mlp = nn.Sequential(
            nn.Linear(dim, hidden), nn.GELU(), nn.Linear(hidden, dim)
        )

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = self.norm1(x)
        a, _ = self.attn(h, h, h, need_weights=False)
        x = x + a
        x = x + self.mlp(self.norm2(x))
        return x


class VideoTransformer(nn.Module):
    """Patch-embedding video transformer with optional masks and view prompts.

    Construction is deterministic under ``config.seed`` (the global torch RNG
    state is forked, not consumed).
    """

    def __init__(self, config: ModelConfig, dtype: torch.dtype = torch.float32):
        super().__init__()
        self.config = config
        d = config.embed_dim
        patch_dim = config.patch_size * config.patch_size * 3
        with torch.random.fork_rng():
            torch.manual_seed(config.seed)
            self.patch_embed = nn.Linear(patch_dim, d)
            self.cls_token = nn.Parameter(torch.zeros(1, 1, d))
            self.pos_embed = nn.Parameter(
                torch.randn(1, 1 + config.video_token_count, d) * 0.02
            )
            self.layers = nn.ModuleList(
                TransformerLayer(d, config.num_heads, config.mlp_ratio)
                for _ in range(config.num_layers)
            )
            self.final_norm = nn.LayerNorm(d)
            self.head = nn.Linear(d, config.num_actions)
        self.to(dtype)

    # -- embedding -------------------------------------------------------

    def patch_tokens(self, frames: torch.Tensor) -> torch.Tensor:
        """frames [B,T,H,W,3] -> [B, 1+V, D] with positional embeddings added."""
        cfg = self.config
        if frames.dim() == 4:
            frames = frames.unsqueeze(0)
        B, T, H, W, C = frames.shape
        if (T, H, W, C) != (cfg.frames, cfg.height, cfg.width, 3):
            raise ConfigurationError(
                f"frame tensor {tuple(frames.shape[1:])} does not match config "
                f"({cfg.frames},{cfg.height},{cfg.width},3)"
            )
        p = cfg.patch_size
        x = frames.reshape(B, T, H // p, p, W // p, p, C)
        x = x.permute(0, 1, 2, 4, 3, 5, 6).reshape(B, cfg.video_token_count, p * p * C)
        x = self.patch_embed(x.to(self.pos_embed.dtype))
        cls = self.cls_token.expand(B, -1, -1)
        seq = torch.cat([cls, x], dim=1)
        return seq + self.pos_embed

    # -- forward ---------------------------------------------------------

    def _check_prompts(self, view_prompts: torch.Tensor) -> torch.Tensor:
        cfg = self.config
        if view_prompts.dim() != 3 or view_prompts.shape[0] != cfg.num_blocks:
            raise ConfigurationError(
                f"expected prompts [{cfg.num_blocks} blocks, n, {cfg.embed_dim}], "
                f"got {tuple(view_prompts.shape)}"
            )
        if view_prompts.shape[-1] != cfg.embed_dim:
            raise ConfigurationError(
                f"prompt dim {view_prompts.shape[-1]} != embed_dim {cfg.embed_dim}"
            )
        return view_prompts

    def forward(
        self,
        frames: torch.Tensor,
        view_prompts: Optional[torch.Tensor] = None,
        masks: Optional[torch.Tensor] = None,
        mask_scale: float = 1.0,
    ) -> torch.Tensor:
        """Returns action logits [B, num_verbs*num_nouns].

        view_prompts: [num_blocks, n, embed_dim] (shared across the batch).
        masks: [3,T,H,W] or [B,3,T,H,W], added to frames before embedding.
        """
        if masks is not None:
            frames = masking.apply_masks(frames, masks, scale=mask_scale)
        if view_prompts is not None:
            view_prompts = self._check_prompts(view_prompts)
        seq = self.patch_tokens(frames)
        B = seq.shape[0]
        keep = 1 + self.config.video_token_count
        for b, (first, last) in enumerate(self.config.block_ranges()):
            seq = seq[:, :keep]
            if view_prompts is not None and view_prompts.shape[1] > 0:
                prompts = view_prompts[b].unsqueeze(0).expand(B, -1, -1)
                seq = torch.cat([seq, prompts.to(seq.dtype)], dim=1)
            for li in range(first - 1, last):
                seq = self.layers[li](seq)
        seq = seq[:, :keep]
        cls_out = self.final_norm(seq[:, 0])
        return self.head(cls_out)


# -- parameter partition ------------------------------------------------


def parameter_partition(
    model: VideoTransformer,
    prompt_bank=None,
    mask_fields: Optional[Sequence] = None,
) -> dict[str, list[tuple[str, torch.Tensor]]]:
    """Disjoint, exhaustive split of all registered parameters.

    Returns a dict with keys backbone / head / view_prompt / mask_prompt,
    each a stably-ordered list of (name, tensor) pairs.
    """
    backbone, head = [], []
    for name, p in model.named_parameters():
        (head if name.startswith("head.") else backbone).append((name, p))
    view_prompt = []
    if prompt_bank is not None:
        view_prompt = [("prompts", prompt_bank.prompts)]
    mask_prompt = []
    if mask_fields:
        for f in mask_fields:
            if f.trainable:
                mask_prompt.append((f"soft_{f.role}", f.values))
    parts = {
        "backbone": backbone,
        "head": head,
        "view_prompt": view_prompt,
        "mask_prompt": mask_prompt,
    }
    seen = set()
    for entries in parts.values():
        for name, t in entries:
            if id(t) in seen:
                raise IntegrityError(f"parameter {name} registered twice")
            seen.add(id(t))
    for name, p in model.named_parameters():
        if id(p) not in seen:
            raise IntegrityError(f"unregistered model parameter {name}")
    return parts


def partition_checksum(entries: list[tuple[str, torch.Tensor]]) -> str:
    """SHA-256 over names and raw little-endian bytes, stable order."""
    h = hashlib.sha256()
    for name, t in entries:
        h.update(name.encode())
        arr = t.detach().cpu().numpy()
        if arr.dtype.byteorder == ">":
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        h.update(arr.tobytes())
    return h.hexdigest()


def partition_checksums(parts: dict[str, list[tuple[str, torch.Tensor]]]) -> dict[str, str]:
    return {k: partition_checksum(v) for k, v in parts.items()}
