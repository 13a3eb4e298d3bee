"""Classification, alignment, integrity-ranking and prompt losses.

All similarities are cosine similarities of the concatenated (global, pooled)
features. Every loss is a plain sum over the batch.
"""
from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F

ALIGN_MODES = ("all_pairs", "diagonal_only", "hardest")


@dataclass
class LossParams:
    s: float = 30.0
    alpha: float = 0.6
    beta: float = 0.4
    gamma: float = 0.6
    tau_p: float = 10.0
    tau_n: float = 40.0
    tau_mid: float = 15.0
    lambda0: float = 1e-4
    lambda1: float = 1e-2
    th: float = 0.98
    align_mode: str = "all_pairs"

    def validate(self):
        for name in ("s", "tau_p", "tau_n", "tau_mid"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        for name in ("alpha", "beta", "gamma", "th"):
            if not -1 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in [-1, 1]")
        if self.align_mode not in ALIGN_MODES:
            raise ValueError(f"align_mode must be one of {ALIGN_MODES}")


@dataclass
class BatchFeatures:
    """Features of one batch. ``t_mid`` is (B, K_m, D), ``t_pmt`` is (B, K_p, D).

    ``pmt_groups`` holds integer group ids (B, K_p); prompts only compare
    within equal ids. Masks mark valid MID / prompt slots (``None`` = all).
    """

    v: torch.Tensor
    t: torch.Tensor
    labels: torch.Tensor
    t_mid: torch.Tensor | None = None
    t_pmt: torch.Tensor | None = None
    pmt_groups: torch.Tensor | None = None
    mid_mask: torch.Tensor | None = None
    pmt_mask: torch.Tensor | None = None

    @property
    def k_m(self) -> int:
        return 0 if self.t_mid is None else self.t_mid.shape[1]

    @property
    def k_p(self) -> int:
        return 0 if self.t_pmt is None else self.t_pmt.shape[1]


def cosine_sim(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Cosine similarity of two vectors."""
    na, nb = a.norm(), b.norm()
    if na == 0 or nb == 0:
        raise ValueError("cosine similarity of a zero vector is undefined")
    return (a @ b) / (na * nb)


def cosine_matrix(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    return F.normalize(a, dim=-1) @ F.normalize(b, dim=-1).transpose(-2, -1)


def softplus(x: torch.Tensor) -> torch.Tensor:
    """log(1 + e^x), exact for large x."""
    return torch.logaddexp(torch.zeros_like(x), x)


def _zero(ref: torch.Tensor) -> torch.Tensor:
    return ref.new_zeros(())


def _xent(x: torch.Tensor, w: torch.Tensor, labels: torch.Tensor, s: float) -> torch.Tensor:
    logits = s * cosine_matrix(x, w)
    return F.cross_entropy(logits, labels, reduction="sum")


def _check_labels(labels: torch.Tensor, n_classes: int):
    if labels.numel() and (labels.min() < 0 or labels.max() >= n_classes):
        raise ValueError(f"labels must lie in [0, {n_classes})")


def loss_cls(batch: BatchFeatures, w_v: torch.Tensor, w_t: torch.Tensor, p: LossParams) -> torch.Tensor:
    """Normalized-softmax cross entropy for images, captions and MIDs."""
    _check_labels(batch.labels, w_v.shape[0])
    out = _xent(batch.v, w_v, batch.labels, p.s) + _xent(batch.t, w_t, batch.labels, p.s)
    if batch.k_m == 0:
        return out
    B, K, D = batch.t_mid.shape
    mid_labels = batch.labels.repeat_interleave(K)
    logits = p.s * cosine_matrix(batch.t_mid.reshape(B * K, D), w_t)
    per = F.cross_entropy(logits, mid_labels, reduction="none")
    if batch.mid_mask is not None:
        per = per * batch.mid_mask.reshape(-1).to(per.dtype)
    return out + per.sum()


def _pair_terms(sim: torch.Tensor, same: torch.Tensor, p: LossParams, mode: str) -> torch.Tensor:
    pos = softplus(-p.tau_p * (sim - p.alpha))
    neg = softplus(p.tau_n * (sim - p.beta))
    if mode == "all_pairs":
        return (pos * same).sum() + (neg * ~same).sum()
    if mode == "diagonal_only":
        return pos.diagonal().sum() + (neg * ~same).sum()
    # hardest positive / negative per anchor, image->text rows and text->image columns
    inf = torch.finfo(sim.dtype).max
    total = _zero(sim)
    for s_, m in ((sim, same), (sim.T, same.T)):
        hard_pos = torch.where(m, s_, torch.full_like(s_, inf)).min(dim=1).values
        total = total + softplus(-p.tau_p * (hard_pos - p.alpha)).sum()
        has_neg = (~m).any(dim=1)
        hard_neg = torch.where(~m, s_, torch.full_like(s_, -inf)).max(dim=1).values
        total = total + (softplus(p.tau_n * (hard_neg - p.beta)) * has_neg).sum()
    return total


def loss_align(batch: BatchFeatures, p: LossParams) -> torch.Tensor:
    """Thresholded soft-margin alignment over cross-modal pairs and MID pairs.

    In the default ``all_pairs`` mode every (image a, text b) pair of the batch
    contributes once: as a positive when the labels agree, else as a negative.
    """
    sim = cosine_matrix(batch.v, batch.t)
    same = batch.labels[:, None] == batch.labels[None, :]
    out = _pair_terms(sim, same, p, p.align_mode)
    if batch.k_m == 0:
        return out
    s_mid = (F.normalize(batch.v, dim=-1)[:, None, :] * F.normalize(batch.t_mid, dim=-1)).sum(-1)
    per = softplus(-p.tau_mid * (s_mid - p.gamma))
    if batch.mid_mask is not None:
        per = per * batch.mid_mask.to(per.dtype)
    return out + per.sum()


def loss_int(batch: BatchFeatures) -> torch.Tensor:
    """Hinge keeping every MID no closer to its image than the full caption."""
    if batch.k_m == 0:
        return _zero(batch.v)
    vn = F.normalize(batch.v, dim=-1)
    s_full = (vn * F.normalize(batch.t, dim=-1)).sum(-1)
    s_mid = (vn[:, None, :] * F.normalize(batch.t_mid, dim=-1)).sum(-1)
    per = torch.relu(s_mid - s_full[:, None])
    if batch.mid_mask is not None:
        per = per * batch.mid_mask.to(per.dtype)
    return per.sum()


def build_prompt_sets(batch: BatchFeatures, p: LossParams) -> tuple[torch.Tensor, torch.Tensor]:
    """Positive / negative masks over flattened prompts, shape (B*K_p, B*K_p).

    Row ``i*K_p + k`` is the k-th prompt of sample i; column ``j*K_p + k'`` is
    a candidate. Candidates outside the row's group are in neither set.
    """
    B, K, D = batch.t_pmt.shape
    with torch.no_grad():
        flat = batch.t_pmt.detach().reshape(B * K, D)
        text_sim = cosine_matrix(flat, flat)
        groups = batch.pmt_groups.reshape(-1)
        labels = batch.labels.repeat_interleave(K)
        same_group = groups[:, None] == groups[None, :]
        if batch.pmt_mask is not None:
            valid = batch.pmt_mask.reshape(-1).bool()
            same_group = same_group & valid[:, None] & valid[None, :]
        same_id = labels[:, None] == labels[None, :]
        close = text_sim >= p.th
        pos = same_group & (same_id | close)
        neg = same_group & ~same_id & ~close
    return pos, neg


def loss_pmt(batch: BatchFeatures, sets, p: LossParams) -> torch.Tensor:
    """Prompt loss; prompt text features are treated as constants."""
    if batch.k_p == 0:
        return _zero(batch.v)
    pos, neg = sets
    B, K, D = batch.t_pmt.shape
    sim_vp = cosine_matrix(batch.v, batch.t_pmt.detach().reshape(B * K, D))  # (B, B*K)
    rows = sim_vp.repeat_interleave(K, dim=0)  # anchor image of row i*K+k is i
    pos_terms = softplus(-p.tau_p * (rows - p.alpha))
    neg_terms = softplus(p.tau_n * (rows - p.beta))
    return (pos_terms * pos).sum() + (neg_terms * neg).sum()


@dataclass
class LossBreakdown:
    cls: torch.Tensor
    align: torch.Tensor
    int: torch.Tensor
    pmt: torch.Tensor
    total: torch.Tensor

    def as_floats(self) -> dict[str, float]:
        return {"L_cls": float(self.cls.detach()), "L_align": float(self.align.detach()), "L_int": float(self.int.detach()),
                "L_pmt": float(self.pmt.detach()), "total": float(self.total.detach())}


def combine(l_cls, l_align, l_int, l_pmt, p: LossParams):
    return l_cls + l_align + p.lambda0 * l_int + p.lambda1 * l_pmt


def loss_total(batch: BatchFeatures, w_v: torch.Tensor, w_t: torch.Tensor, p: LossParams) -> LossBreakdown:
    l_cls = loss_cls(batch, w_v, w_t, p)
    l_align = loss_align(batch, p)
    l_int = loss_int(batch)
    if batch.k_p:
        l_pmt = loss_pmt(batch, build_prompt_sets(batch, p), p)
    else:
        l_pmt = _zero(batch.v)
    return LossBreakdown(l_cls, l_align, l_int, l_pmt, combine(l_cls, l_align, l_int, l_pmt, p))


def reference_loss(v, t, labels, w_v, w_t, p: LossParams) -> torch.Tensor:
    """Two-term classification + alignment objective with no MID or prompt parts."""
    l_cls = _xent(v, w_v, labels, p.s) + _xent(t, w_t, labels, p.s)
    sim = cosine_matrix(v, t)
    same = labels[:, None] == labels[None, :]
    return l_cls + _pair_terms(sim, same, p, p.align_mode)
