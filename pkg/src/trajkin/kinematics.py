"""Finite-difference kinematics over 2-D trajectories.

All functions operate on tensors whose trailing dimensions are (L, 2):
a sequence of L planar points or displacement vectors. Any number of
leading batch dimensions is allowed. Velocities are one-step position
differences, accelerations one-step velocity differences; no smoothing
or time rescaling is applied (a "velocity" here is displacement per
frame step).
"""

from __future__ import annotations

from dataclasses import dataclass

import torch

FRAME_INTERVAL = 0.4  # seconds per step in the benchmark data


def _as_seq(x, name: str, min_len: int = 1) -> torch.Tensor:
    t = torch.as_tensor(x)
    if not t.is_floating_point():
        t = t.to(torch.get_default_dtype())
    if t.ndim < 2:
        raise ValueError(f"{name} must have shape (..., L, 2), got {tuple(t.shape)}")
    if t.shape[-2] < min_len:
        raise ValueError(f"{name} needs at least {min_len} steps, got {t.shape[-2]}")
    return t


def _as_point(x, name: str) -> torch.Tensor:
    t = torch.as_tensor(x)
    if not t.is_floating_point():
        t = t.to(torch.get_default_dtype())
    if t.ndim < 1:
        raise ValueError(f"{name} must have shape (..., 2), got {tuple(t.shape)}")
    return t


def derive_velocity(positions) -> torch.Tensor:
    """One-step displacements: out[j] = p[j+1] - p[j]. Length shrinks by 1."""
    p = _as_seq(positions, "positions", min_len=2)
    return p[..., 1:, :] - p[..., :-1, :]


def derive_accel(velocities) -> torch.Tensor:
    """One-step velocity changes: out[j] = v[j+1] - v[j]. Length shrinks by 1."""
    v = _as_seq(velocities, "velocities", min_len=2)
    return v[..., 1:, :] - v[..., :-1, :]


def pseudo_velocity(pred_positions, last_obs_position) -> torch.Tensor:
    """Velocity implied by a predicted position sequence.

    Anchored on the last observed position so the output keeps the
    prediction-horizon length: out[0] = pred[0] - last_obs, and
    out[j] = pred[j] - pred[j-1] for j > 0.
    """
    p = _as_seq(pred_positions, "pred_positions", min_len=1)
    anchor = _as_point(last_obs_position, "last_obs_position")
    first = p[..., :1, :] - anchor[..., None, :]
    if p.shape[-2] == 1:
        return first
    return torch.cat([first, p[..., 1:, :] - p[..., :-1, :]], dim=-2)


def pseudo_accel(pred_velocities, last_obs_velocity) -> torch.Tensor:
    """Acceleration implied by a predicted velocity sequence.

    Same anchored differencing as :func:`pseudo_velocity`, with the last
    observed velocity as the boundary value.
    """
    return pseudo_velocity(pred_velocities, last_obs_velocity)


def integrate_positions(velocities, start) -> torch.Tensor:
    """Cumulative sum of displacements from ``start``; inverse of derivation."""
    v = _as_seq(velocities, "velocities", min_len=1)
    s = _as_point(start, "start")
    return s[..., None, :] + torch.cumsum(v, dim=-2)


def global_velocity(positions) -> torch.Tensor:
    """Mean per-step displacement between the first and last observed frame."""
    p = _as_seq(positions, "positions", min_len=2)
    steps = p.shape[-2] - 1
    return (p[..., -1, :] - p[..., 0, :]) / steps


def pad_history(seq, length: int) -> torch.Tensor:
    """Left-pad a sequence to ``length`` by repeating its first element.

    Used to align derived velocity (T-1) and acceleration (T-2) with the
    T-step position history before encoding.
    """
    s = _as_seq(seq, "seq", min_len=1)
    missing = length - s.shape[-2]
    if missing < 0:
        raise ValueError(f"sequence longer ({s.shape[-2]}) than pad target ({length})")
    if missing == 0:
        return s
    lead = s[..., :1, :].expand(*s.shape[:-2], missing, s.shape[-1])
    return torch.cat([lead, s], dim=-2)


@dataclass
class KinematicTriple:
    """Aligned position / velocity / acceleration sequences of equal length."""

    position: torch.Tensor
    velocity: torch.Tensor
    accel: torch.Tensor

    def __post_init__(self):
        if not (self.position.shape[-2] == self.velocity.shape[-2] == self.accel.shape[-2]):
            raise ValueError(
                "triple members must share length, got "
                f"{self.position.shape[-2]}/{self.velocity.shape[-2]}/{self.accel.shape[-2]}"
            )


def observed_triple(positions) -> KinematicTriple:
    """Derive velocity and acceleration from a T-step history and left-pad
    both back to T, so the three encoder streams share sequence length."""
    p = _as_seq(positions, "positions", min_len=3)
    t = p.shape[-2]
    v = derive_velocity(p)
    a = derive_accel(v)
    return KinematicTriple(position=p, velocity=pad_history(v, t), accel=pad_history(a, t))
