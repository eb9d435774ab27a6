"""Displacement metrics and the best-of-K evaluation protocol."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import torch

from .data import SceneWindow, collate_windows


def ade(pred, gt) -> float:
    """Mean Euclidean distance over all timesteps."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {gt.shape}")
    return float(np.linalg.norm(pred - gt, axis=-1).mean())


def fde(pred, gt) -> float:
    """Euclidean distance at the final timestep."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {gt.shape}")
    if pred.shape[-2] < 1:
        raise ValueError("empty sequence")
    return float(np.linalg.norm(pred[..., -1, :] - gt[..., -1, :], axis=-1))


def min_of_k(preds, gt, metric: str = "ade") -> float:
    """Minimum of the metric over the K candidates."""
    preds = np.asarray(preds, dtype=np.float64)
    if preds.ndim != 3 or preds.shape[0] < 1:
        raise ValueError("preds must be a nonempty (K, T', 2) stack")
    fn = {"ade": ade, "fde": fde}.get(metric)
    if fn is None:
        raise ValueError(f"unknown metric {metric!r}")
    return min(fn(p, gt) for p in preds)


@dataclass
class EvalResult:
    ade: float
    fde: float
    per_scene: dict[str, dict] = field(default_factory=dict)
    k_used: int = 0
    t_prime_used: int = 0
    n_agents: int = 0

    def as_dict(self) -> dict:
        return {
            "ade": self.ade,
            "fde": self.fde,
            "per_scene": self.per_scene,
            "k_used": self.k_used,
            "t_prime_used": self.t_prime_used,
            "n_agents": self.n_agents,
        }

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.as_dict(), fh, indent=2)

    def format_table(self) -> str:
        lines = [
            f"best-of-{self.k_used} over {self.n_agents} agents, horizon {self.t_prime_used}",
            f"{'scene':<16}{'ADE':>10}{'FDE':>10}{'agents':>8}",
        ]
        for name in sorted(self.per_scene):
            s = self.per_scene[name]
            lines.append(f"{name:<16}{s['ade']:>10.4f}{s['fde']:>10.4f}{s['n_agents']:>8d}")
        lines.append(f"{'ALL':<16}{self.ade:>10.4f}{self.fde:>10.4f}{self.n_agents:>8d}")
        return "\n".join(lines)


def evaluate(
    model,
    windows: list[SceneWindow],
    k: int | None = None,
    t_prime: int | None = None,
    joint_min: bool = False,
    batch_size: int = 32,
) -> EvalResult:
    """Best-of-K ADE/FDE of a model over test windows, with per-scene stats.

    min-ADE and min-FDE are taken independently per agent unless
    ``joint_min`` is set, in which case the candidate with the lowest ADE
    supplies both numbers.
    """
    cfg = model.cfg
    k = k or cfg.K
    if k > cfg.K:
        raise ValueError(f"requested K={k} but the model only emits {cfg.K} candidates")
    if k < 1:
        raise ValueError("K must be positive")
    if not windows:
        raise ValueError("no windows to evaluate")
    horizon = windows[0].future.shape[1]
    if t_prime is not None and t_prime != horizon:
        raise ValueError(f"requested horizon {t_prime} but windows carry {horizon} future steps")
    if cfg.T_prime != horizon:
        raise ValueError(f"model horizon {cfg.T_prime} does not match window horizon {horizon}")

    model.eval()
    scenes: dict[str, list[tuple[float, float]]] = {}
    with torch.no_grad():
        for lo in range(0, len(windows), batch_size):
            chunk = windows[lo : lo + batch_size]
            obs_pos, obs_vel, obs_acc, future, valid = collate_windows(chunk)
            preds = model(obs_pos, obs_vel, obs_acc, valid).positions[:, :, :k]  # (B, N, k, T', 2)
            for i, w in enumerate(chunk):
                per_scene = scenes.setdefault(w.scene_id, [])
                cand = preds[i, : w.n_agents].numpy()
                gt = w.future.numpy()
                for a in range(w.n_agents):
                    if joint_min:
                        ades = [ade(c, gt[a]) for c in cand[a]]
                        best = int(np.argmin(ades))
                        per_scene.append((ades[best], fde(cand[a, best], gt[a])))
                    else:
                        per_scene.append(
                            (min_of_k(cand[a], gt[a], "ade"), min_of_k(cand[a], gt[a], "fde"))
                        )
    per_scene_stats = {}
    all_pairs = []
    for name, pairs in scenes.items():
        arr = np.asarray(pairs)
        per_scene_stats[name] = {
            "ade": float(arr[:, 0].mean()),
            "fde": float(arr[:, 1].mean()),
            "n_agents": len(pairs),
        }
        all_pairs.extend(pairs)
    arr = np.asarray(all_pairs)
    return EvalResult(
        ade=float(arr[:, 0].mean()),
        fde=float(arr[:, 1].mean()),
        per_scene=per_scene_stats,
        k_used=k,
        t_prime_used=horizon,
        n_agents=len(all_pairs),
    )
