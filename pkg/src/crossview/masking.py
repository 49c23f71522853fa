"""Frame-level interactive masking prompts.

A value field per role (left hand / right hand / object) holds a full T×H×W
grid of values, either fixed Gaussian samples ("hard") or trainable
parameters initialized to zero ("soft"). Per-clip masks are stamped from
the field inside a square region around each frame's annotated center and
added to the frames before patch embedding. Masks are a pre-training
device only; inference paths run under `masks_forbidden()`.
"""

from __future__ import annotations

import contextlib
import dataclasses
from typing import Optional

import torch

from .errors import ConfigurationError, ProtocolViolationError

ROLES = ("left", "right", "object")

# Guard state: evaluation paths forbid mask application entirely.
_FORBIDDEN_REASON: Optional[str] = None
_APPLY_CALLS = 0


@contextlib.contextmanager
def masks_forbidden(reason: str):
    """Inside this context any apply_masks call raises ProtocolViolationError."""
    global _FORBIDDEN_REASON
    prev = _FORBIDDEN_REASON
    _FORBIDDEN_REASON = reason
    try:
        yield
    finally:
        _FORBIDDEN_REASON = prev


def apply_call_count() -> int:
    return _APPLY_CALLS


@dataclasses.dataclass
class MaskValueField:
    role: str
    kind: str  # "hard" | "soft"
    values: torch.Tensor  # [T,H,W]; nn.Parameter iff soft

    @property
    def trainable(self) -> bool:
        return self.kind == "soft"


@dataclasses.dataclass
class InteractionAnnotation:
    """Per-frame interaction centers in pixel coordinates; None = absent."""

    centers: dict[str, list[Optional[tuple[int, int]]]]  # role -> [(x, y) | None] * T
    box_size: int

    def __post_init__(self):
        if self.box_size < 1:
            raise ConfigurationError(f"box_size must be >= 1, got {self.box_size}")


def init_value_field(
    role: str,
    kind: str,
    shape: tuple[int, int, int],
    seed: int,
    dtype: torch.dtype = torch.float32,
) -> MaskValueField:
    if role not in ROLES:
        raise ConfigurationError(f"unknown role {role!r}")
    if kind == "hard":
        g = torch.Generator().manual_seed(seed)
        values = torch.randn(shape, generator=g).to(dtype)
    elif kind == "soft":
        values = torch.nn.Parameter(torch.zeros(shape, dtype=dtype))
    else:
        raise ConfigurationError(f"unknown mask kind {kind!r}")
    return MaskValueField(role=role, kind=kind, values=values)


def build_mask(
    annotation: InteractionAnnotation, field: MaskValueField, frame_index: int
) -> torch.Tensor:
    """H×W mask slice: field values inside the clipped square region, else 0."""
    T, H, W = field.values.shape
    out = torch.zeros(H, W, dtype=field.values.dtype)
    center = annotation.centers[field.role][frame_index]
    if center is None:
        return out
    x_c, y_c = center
    r = annotation.box_size // 2
    y0, y1 = max(0, y_c - r), min(H - 1, y_c + r)
    x0, x1 = max(0, x_c - r), min(W - 1, x_c + r)
    if y0 > y1 or x0 > x1:
        return out
    out[y0 : y1 + 1, x0 : x1 + 1] = field.values[frame_index, y0 : y1 + 1, x0 : x1 + 1]
    return out


def build_clip_masks(
    annotation: InteractionAnnotation, fields: dict[str, MaskValueField]
) -> torch.Tensor:
    """Stack of role masks [3, T, H, W] in ROLES order, autograd-connected
    for soft fields."""
    per_role = []
    for role in ROLES:
        f = fields[role]
        T = f.values.shape[0]
        per_role.append(torch.stack([build_mask(annotation, f, t) for t in range(T)]))
    return torch.stack(per_role)


def apply_masks(
    frames: torch.Tensor, masks: torch.Tensor, scale: float = 1.0
) -> torch.Tensor:
    """frames + scale * sum of role masks, broadcast over RGB. Input left
    unmodified.

    frames [T,H,W,3] or [B,T,H,W,3]; masks [3,T,H,W] or [B,3,T,H,W].
    `scale` calibrates unit-variance mask values against the frame range.
    """
    global _APPLY_CALLS
    if _FORBIDDEN_REASON is not None:
        raise ProtocolViolationError(
            f"mask application forbidden here: {_FORBIDDEN_REASON}"
        )
    _APPLY_CALLS += 1
    if masks.dim() == 4:
        combined = masks.sum(dim=0)  # [T,H,W]; broadcasts over batched frames
    elif frames.dim() == 5 and masks.dim() == 5:
        combined = masks.sum(dim=1)  # [B,T,H,W]
    else:
        raise ConfigurationError(
            f"mask shape {tuple(masks.shape)} incompatible with frames "
            f"{tuple(frames.shape)}"
        )
    expected = frames.shape[:-1] if combined.dim() == frames.dim() - 1 else frames.shape[1:-1]
    if combined.shape != expected:
        raise ConfigurationError(
            f"mask spatial shape {tuple(combined.shape)} != frame shape "
            f"{tuple(frames.shape[:-1])}"
        )
    return frames + scale * combined.unsqueeze(-1).to(frames.dtype)
