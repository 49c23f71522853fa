"""Training objectives.

Stage 1 uses plain cross-entropy over action logits of mask-prompted frames.
Stage 2 combines that cross-entropy (with the sample's own view prompts)
with a cross-view alignment term: KL from the own-view action distribution
to the same frames forwarded under every other view's prompts. Egocentric
adaptation uses either an information-maximization objective (unlabeled) or
cross-entropy (labeled), both with the joint prompt.

All functions keep the scalar as a torch tensor so autodiff flows; the
`components` map holds detached floats for logging.
"""

from __future__ import annotations

import dataclasses

import torch
import torch.nn.functional as F

from .errors import ValidationError

KL_EPS = 1e-12

# count of KL evaluations that needed the epsilon clamp (training robustness
# diagnostics; tests can reset/read it)
_kl_clamp_warnings = 0


def kl_clamp_warning_count() -> int:
    return _kl_clamp_warnings


def reset_kl_clamp_warnings() -> None:
    global _kl_clamp_warnings
    _kl_clamp_warnings = 0


@dataclasses.dataclass
class LossValue:
    scalar: torch.Tensor
    components: dict[str, float]

    def item(self) -> float:
        return float(self.scalar.detach())


def softmax(logits: torch.Tensor, dim: int = -1) -> torch.Tensor:
    """Max-shifted softmax (torch.softmax is already computed stably)."""
    return torch.softmax(logits, dim=dim)


def cross_entropy(logits: torch.Tensor, labels: torch.Tensor) -> LossValue:
    """Batch-averaged -log p[label] over action logits."""
    if logits.dim() == 1:
        logits = logits.unsqueeze(0)
    labels = torch.as_tensor(labels, dtype=torch.long).reshape(-1)
    K = logits.shape[-1]
    if labels.numel() and (labels.min() < 0 or labels.max() >= K):
        raise ValidationError(
            f"label out of range [0, {K}): {labels.min()}..{labels.max()}"
        )
    loss = F.cross_entropy(logits, labels)
    return LossValue(loss, {"ce": float(loss.detach())})


def kl_divergence(p: torch.Tensor, q: torch.Tensor, exact: bool = False) -> torch.Tensor:
    """sum p (ln p - ln q) over the last dim, with 0 ln 0 := 0.

    Zero entries of q where p > 0 are clamped by KL_EPS (counted) unless
    `exact`, in which case they raise.
    """
    global _kl_clamp_warnings
    if p.shape != q.shape:
        raise ValidationError(f"KL shape mismatch {tuple(p.shape)} vs {tuple(q.shape)}")
    bad = (q <= 0) & (p > 0)
    if bad.any():
        if exact:
            raise ValidationError("KL undefined: q has zero mass where p > 0")
        _kl_clamp_warnings += int(bad.sum())
    q = q.clamp_min(KL_EPS)
    terms = torch.special.xlogy(p, p) - p * torch.log(q)
    return terms.sum(dim=-1)


def _forward_logits(model, frames, prompt_matrices):
    return model(frames, view_prompts=prompt_matrices)


def cross_view_alignment(model, bank, frames: torch.Tensor, view_id: str) -> LossValue:
    """Sum over other views j of KL(own-view distribution || P_j distribution).

    One forward per prompt set; gradients flow to both prompt sets (no
    stop-gradient). Empty sum (single view) gives 0.
    """
    p_own = softmax(_forward_logits(model, frames, bank.select(view_id)))
    total = p_own.new_zeros(())
    for other in bank.view_ids:
        if other == view_id:
            continue
        q = softmax(_forward_logits(model, frames, bank.select(other)))
        total = total + kl_divergence(p_own, q).mean()
    return LossValue(total, {"cross_kl": float(total.detach())})


def stage2_loss(
    model,
    bank,
    frames: torch.Tensor,
    action_labels: torch.Tensor,
    view_id: str,
    lam: float,
) -> LossValue:
    """View cross-entropy + lam * cross-view alignment, sharing the own-view
    forward between the two terms."""
    if lam < 0:
        raise ValidationError(f"lambda must be >= 0, got {lam}")
    logits_own = _forward_logits(model, frames, bank.select(view_id))
    ce = cross_entropy(logits_own, action_labels)
    p_own = softmax(logits_own)
    cross = p_own.new_zeros(())
    for other in bank.view_ids:
        if other == view_id:
            continue
        q = softmax(_forward_logits(model, frames, bank.select(other)))
        cross = cross + kl_divergence(p_own, q).mean()
    scalar = ce.scalar + lam * cross
    return LossValue(
        scalar,
        {"view_ce": float(ce.scalar.detach()), "cross_kl": float(cross.detach())},
    )


def information_maximization(logits: torch.Tensor) -> LossValue:
    """Mean per-sample entropy minus entropy of the batch-mean distribution
    (natural log). Minimum -ln K at confident, diverse predictions; bounded
    in [-ln K, ln K]."""
    if logits.dim() != 2:
        raise ValidationError(f"expected [batch, K] logits, got {tuple(logits.shape)}")
    if logits.shape[0] < 2:
        raise ValidationError("information maximization needs batch size >= 2")
    p = softmax(logits)
    per_sample_entropy = -torch.special.xlogy(p, p).sum(dim=-1).mean()
    mean_p = p.mean(dim=0)
    marginal_entropy = -torch.special.xlogy(mean_p, mean_p).sum()
    scalar = per_sample_entropy - marginal_entropy
    return LossValue(
        scalar,
        {
            "entropy": float(per_sample_entropy.detach()),
            "marginal_entropy": float(marginal_entropy.detach()),
        },
    )
