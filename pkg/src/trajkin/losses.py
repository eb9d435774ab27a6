"""Training objectives.

Four terms make up the total loss:

* ``position_loss`` -- tolerance-interval error summed over the K position
  candidates plus a variance penalty that keeps the candidate fan from
  spreading without bound.
* ``va_loss`` -- Huber loss between the heuristically selected velocity /
  acceleration candidates and their ground truth.
* ``cons1_loss`` -- MSE between each acceleration candidate and the
  acceleration implied by the like-indexed velocity candidate, grouping the
  two streams by candidate index.
* ``cons2_loss`` -- cross-entropy pulling the position candidates (via their
  implied velocity/acceleration) toward the selected candidate pair.

All losses are plain tensor functions; anything batched reduces with means so
magnitudes are comparable across horizon lengths.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import torch
import torch.nn.functional as F

from .kinematics import pseudo_accel
from .scoring import _as_float, _safe_sqrt


@dataclass
class LossConfig:
    epsilon: float = 0.05          # tolerance margin, position units
    alpha: float = 0.2             # weight of the tolerance term
    beta: float = 0.8              # weight of the variance term
    lam: float = 0.5               # weight of the consistency cross-entropy
    huber_delta: float = 1.0
    enable_pos: bool = True
    enable_va: bool = True
    enable_cons1: bool = True
    enable_cons2: bool = True
    pos_mode: str = "tolerance"    # "tolerance" | "mse" (best-of-K replacement)

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        for name in ("alpha", "beta", "lam", "huber_delta"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if self.pos_mode not in ("tolerance", "mse"):
            raise ValueError(f"unknown pos_mode {self.pos_mode!r}")
        if not (self.enable_pos or self.enable_va or self.enable_cons1 or self.enable_cons2):
            raise ValueError("at least one loss term must be enabled")


@dataclass
class LossReport:
    """Per-term loss values of one step. Fields are floats after
    :meth:`detached`; inside a train step they hold 0-d tensors."""

    pos: float = 0.0
    va: float = 0.0
    cons1: float = 0.0
    cons2: float = 0.0
    total: float = 0.0

    def detached(self) -> "LossReport":
        values = []
        for name in ("pos", "va", "cons1", "cons2", "total"):
            v = getattr(self, name)
            values.append(v.detach().item() if torch.is_tensor(v) else float(v))
        return LossReport(*values)


def diff_tolerance(pred, gt, epsilon: float) -> torch.Tensor:
    """Elementwise tolerance-interval error.

    Zero while ``pred`` lies in [gt - eps, gt + eps]; outside, the distance
    to the nearest interval edge. Continuous at both edges, and with the
    zero (interior) subgradient exactly on them.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    pred = _as_float(pred)
    gt = _as_float(gt)
    hi = gt + epsilon
    lo = gt - epsilon
    zero = torch.zeros_like(pred * gt)
    return torch.where(pred > hi, torch.abs(pred - hi), torch.where(pred < lo, torch.abs(pred - lo), zero))


def position_loss(preds: torch.Tensor, gt: torch.Tensor, cfg: LossConfig) -> torch.Tensor:
    """Position objective over K candidates.

    Args:
        preds: (..., K, T', 2) candidate position sequences.
        gt: (..., T', 2) ground-truth future.

    Per agent: ``alpha * sum_k mean(tolerance error)`` plus ``beta *
    mean(population variance across candidates)``, then averaged over
    agents. Tolerance errors and variances are per coordinate per timestep,
    mean-reduced so the scale is independent of the horizon. With
    ``pos_mode="mse"`` the whole expression is replaced by the best-of-K
    mean squared error.
    """
    preds = _as_float(preds)
    gt = _as_float(gt)
    if preds.ndim < 3 or preds.shape[-2:] != gt.shape[-2:] or preds.shape[:-3] != gt.shape[:-2]:
        raise ValueError(f"shape mismatch: preds {tuple(preds.shape)} vs gt {tuple(gt.shape)}")
    if cfg.pos_mode == "mse":
        per_candidate = ((preds - gt[..., None, :, :]) ** 2).mean(dim=(-2, -1))  # (..., K)
        return per_candidate.min(dim=-1).values.mean()
    diff = diff_tolerance(preds, gt[..., None, :, :], cfg.epsilon).mean(dim=(-2, -1))  # (..., K)
    var = preds.var(dim=-3, unbiased=False).mean(dim=(-2, -1))  # (...,)
    return (cfg.alpha * diff.sum(dim=-1) + cfg.beta * var).mean()


def va_loss(sel_vel, gt_vel, sel_acc, gt_acc, cfg: LossConfig) -> torch.Tensor:
    """Huber loss of the selected velocity and acceleration against ground
    truth; the two stream losses are summed."""
    sel_vel = _as_float(sel_vel)
    gt_vel = _as_float(gt_vel)
    sel_acc = _as_float(sel_acc)
    gt_acc = _as_float(gt_acc)
    if sel_vel.shape != gt_vel.shape or sel_acc.shape != gt_acc.shape:
        raise ValueError("selected/ground-truth shape mismatch")
    return F.huber_loss(sel_vel, gt_vel, delta=cfg.huber_delta) + F.huber_loss(
        sel_acc, gt_acc, delta=cfg.huber_delta
    )


def cons1_loss(pred_vels: torch.Tensor, pred_accs: torch.Tensor, last_obs_vel: torch.Tensor) -> torch.Tensor:
    """Velocity/acceleration self-consistency across like-indexed candidates.

    For every candidate k, the acceleration implied by the k-th velocity
    prediction (anchored on the last observed velocity) is compared to the
    k-th acceleration prediction with MSE; the result is averaged over
    agents and candidates. Sharing the index k is what groups the two
    streams into candidate pairs.
    """
    pred_vels = _as_float(pred_vels)
    pred_accs = _as_float(pred_accs)
    if pred_vels.shape != pred_accs.shape:
        raise ValueError(
            f"candidate mismatch between streams: {tuple(pred_vels.shape)} vs {tuple(pred_accs.shape)}"
        )
    last = _as_float(last_obs_vel)
    implied = pseudo_accel(pred_vels, last[..., None, :])  # broadcast anchor over K
    return F.mse_loss(implied, pred_accs)


def _stream_ce(pseudo: torch.Tensor, selected: torch.Tensor) -> torch.Tensor:
    # pseudo: (..., K, T', 2); selected: (..., T', 2)
    sq = ((pseudo - selected[..., None, :, :]) ** 2).sum(dim=(-2, -1))
    dist = _safe_sqrt(sq)  # (..., K)
    log_p = torch.log_softmax(-dist, dim=-1)
    target = torch.argmin(dist, dim=-1, keepdim=True).detach()
    return -torch.gather(log_p, -1, target).squeeze(-1)


def cons2_loss(pseudo_vels, pseudo_accs, sel_vel, sel_acc) -> torch.Tensor:
    """Cross-entropy that rewards position candidates whose implied motion
    matches the selected velocity/acceleration pair.

    Per stream, the L2 distances between the K implied sequences and the
    selected candidate are softmax-converted (negated, so the closest
    candidate has the largest probability) and scored against the one-hot
    of that closest candidate; the index choice itself carries no gradient.
    The two stream losses are averaged, then averaged over agents.
    """
    pseudo_vels = _as_float(pseudo_vels)
    pseudo_accs = _as_float(pseudo_accs)
    if pseudo_vels.ndim < 3 or pseudo_vels.shape[-3] < 1 or pseudo_accs.shape[-3] < 1:
        raise ValueError("candidate sets must be nonempty (..., K, T', 2)")
    ce_v = _stream_ce(pseudo_vels, _as_float(sel_vel))
    ce_a = _stream_ce(pseudo_accs, _as_float(sel_acc))
    return (0.5 * (ce_v + ce_a)).mean()


def total_loss(pos, va, cons1, cons2, cfg: LossConfig) -> LossReport:
    """Combine the four terms; disabled terms are zeroed in both the total
    and the reported values. Accepts floats or 0-d tensors."""
    zero = pos * 0.0 if torch.is_tensor(pos) else 0.0
    pos = pos if cfg.enable_pos else zero
    va = va if cfg.enable_va else zero
    cons1 = cons1 if cfg.enable_cons1 else zero
    cons2 = cons2 if cfg.enable_cons2 else zero
    return LossReport(pos=pos, va=va, cons1=cons1, cons2=cons2, total=pos + va + cons1 + cfg.lam * cons2)


def append_report(fh, step: int, report: LossReport) -> None:
    """Write one line-delimited JSON record per training step."""
    rec = report.detached()
    fh.write(
        json.dumps(
            {"step": step, "pos": rec.pos, "va": rec.va, "cons1": rec.cons1, "cons2": rec.cons2, "total": rec.total}
        )
        + "\n"
    )


def read_loss_log(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
