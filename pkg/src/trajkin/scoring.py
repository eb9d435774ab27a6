"""Heuristic evaluation and selection of velocity/acceleration candidates.

Two closed-form scores rank the K candidates of each agent: directional
consistency (cosine between the historical global velocity and the first
predicted velocity) and acceleration similarity (distance between the
mean/std statistics of historical vs. predicted acceleration magnitudes,
smaller = more similar). A learnable combination of the two softmax-
normalized score vectors picks one shared candidate index per agent.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
from torch import nn


def _as_float(x) -> torch.Tensor:
    t = torch.as_tensor(x)
    return t if t.is_floating_point() else t.to(torch.get_default_dtype())


def _safe_sqrt(x: torch.Tensor) -> torch.Tensor:
    # sqrt with a zero (not NaN) gradient at exactly zero input
    positive = x > 0
    return torch.sqrt(torch.where(positive, x, torch.ones_like(x))) * positive


def _magnitudes(vectors: torch.Tensor) -> torch.Tensor:
    return _safe_sqrt((vectors * vectors).sum(dim=-1))


class ScoreWeights(nn.Module):
    """Trainable scalars weighting the two candidate-score softmaxes."""

    def __init__(self, w_alpha: float = 0.5, w_beta: float = 0.5):
        super().__init__()
        self.w_alpha = nn.Parameter(torch.tensor(float(w_alpha)))
        self.w_beta = nn.Parameter(torch.tensor(float(w_beta)))


def directional_consistency(v_global, first_pred_vel) -> torch.Tensor:
    """Cosine of the angle between historical and first predicted velocity.

    Broadcasts over leading dimensions; returns values in [-1, 1]. A
    zero-norm input on either side yields 0 (neutral): stationary
    pedestrians occur in real data and carry no direction.
    """
    a = _as_float(v_global)
    b = _as_float(first_pred_vel)
    dot = (a * b).sum(dim=-1)
    norms = _magnitudes(a) * _magnitudes(b)
    cos = torch.where(norms > 0, dot / torch.where(norms > 0, norms, torch.ones_like(norms)), torch.zeros_like(dot))
    return cos.clamp(-1.0, 1.0)


def accel_similarity(hist_accel, pred_accel) -> torch.Tensor:
    """Distance between (mean, std) of acceleration magnitudes; 0 = identical.

    Statistics are taken over acceleration magnitudes (direction is already
    scored by the cosine), with population std. Lower values mean the
    candidate reproduces the historical speed-change pattern more closely.
    """
    h = _as_float(hist_accel)
    p = _as_float(pred_accel)
    if h.ndim < 2 or h.shape[-2] < 1:
        raise ValueError("hist_accel must be a nonempty (..., L, 2) sequence")
    if p.ndim < 2 or p.shape[-2] < 1:
        raise ValueError("pred_accel must be a nonempty (..., L, 2) sequence")
    mu_h, sigma_h = _mag_stats(h)
    mu_p, sigma_p = _mag_stats(p)
    return _safe_sqrt((mu_h - mu_p) ** 2 + (sigma_h - sigma_p) ** 2)


def _mag_stats(vectors: torch.Tensor):
    mags = _magnitudes(vectors)
    mu = mags.mean(dim=-1)
    var = ((mags - mu.unsqueeze(-1)) ** 2).mean(dim=-1)  # population variance
    return mu, _safe_sqrt(var)


def combined_scores(dc: torch.Tensor, sim: torch.Tensor, weights: ScoreWeights) -> torch.Tensor:
    """Weighted sum of softmax(dc) and softmax(-sim) over the candidate axis.

    Similarity is negated before its softmax so that smaller (more similar)
    values score higher, consistent with picking the best candidate by the
    largest combined score.
    """
    dc = _as_float(dc)
    sim = _as_float(sim)
    if dc.shape != sim.shape:
        raise ValueError(f"score shape mismatch: {tuple(dc.shape)} vs {tuple(sim.shape)}")
    if dc.shape[-1] < 1:
        raise ValueError("need at least one candidate")
    return weights.w_alpha * torch.softmax(dc, dim=-1) + weights.w_beta * torch.softmax(-sim, dim=-1)


def select_best(scores: torch.Tensor) -> torch.Tensor:
    """Index of the maximum score along the candidate axis (first on ties)."""
    s = _as_float(scores)
    if s.shape[-1] < 1:
        raise ValueError("empty score vector")
    if not torch.isfinite(s).all():
        raise ValueError("scores must be finite")
    return torch.argmax(s, dim=-1)


@dataclass
class CandidateScores:
    """Per-candidate scores of one batch of agents, plus the shared pick."""

    dc: torch.Tensor        # (..., K) cosine scores in [-1, 1]
    sim: torch.Tensor       # (..., K) nonnegative similarity distances
    combined: torch.Tensor  # (..., K) weighted softmax combination
    selected: torch.Tensor  # (...,) argmax index into the K candidates


def score_candidates(
    v_global: torch.Tensor,
    pred_velocities: torch.Tensor,
    hist_accel: torch.Tensor,
    pred_accels: torch.Tensor,
    weights: ScoreWeights,
) -> CandidateScores:
    """Score all K velocity/acceleration candidates of a batch of agents.

    Args:
        v_global: (..., 2) historical global velocity per agent.
        pred_velocities: (..., K, T', 2) velocity candidates.
        hist_accel: (..., L, 2) historical acceleration (unpadded).
        pred_accels: (..., K, T', 2) acceleration candidates.
        weights: learnable combination weights.
    """
    if pred_velocities.shape[-3] != pred_accels.shape[-3]:
        raise ValueError("velocity and acceleration streams disagree on K")
    dc = directional_consistency(v_global[..., None, :], pred_velocities[..., 0, :])
    sim = accel_similarity(hist_accel[..., None, :, :], pred_accels)
    combined = combined_scores(dc, sim, weights)
    return CandidateScores(dc=dc, sim=sim, combined=combined, selected=select_best(combined))
