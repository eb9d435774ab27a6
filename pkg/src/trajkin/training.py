"""Optimization loop wiring the model, scores, and losses together.

``train_step`` runs one forward pass, evaluates the candidate heuristics,
assembles the four loss terms, and applies one Adam update to every
trainable parameter including the two score-combination weights. The
selected-candidate pair used as the consistency target is gathered with a
straight-through softmax over the combined scores: the forward value is the
plain argmax pick, while the backward pass routes gradient into the score
weights, which an argmax alone would starve.
"""

from __future__ import annotations

import copy
import logging
import math
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F

from .data import SceneWindow, collate_windows
from .evaluation import evaluate
from .kinematics import derive_accel, derive_velocity, global_velocity, pseudo_accel, pseudo_velocity
from .losses import LossConfig, LossReport, append_report, cons1_loss, cons2_loss, position_loss, total_loss, va_loss
from .model import ModelConfig, ThreeStreamNet, save_checkpoint
from .scoring import ScoreWeights, score_candidates

log = logging.getLogger(__name__)

ABLATIONS = ("no_pos", "no_cons1", "no_va", "no_cons2", "no_injection", "mse_pos", "manual_va_select")


class NumericalAbort(RuntimeError):
    """A loss term went non-finite; the run cannot continue."""


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    head_lr_mult: float = 1.0  # extra rate on the (linear) decoder heads
    epochs: int = 500
    batch_size: int = 32
    seed: int = 0
    grad_clip: float = 1.0
    val_fraction: float = 0.1
    deterministic: bool = True
    manual_va_select: bool = False
    checkpoint_dir: str = "runs/default"
    log_path: str | None = None
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if min(self.learning_rate, self.grad_clip, self.head_lr_mult) <= 0 or min(self.epochs, self.batch_size) < 1:
            raise ValueError("learning_rate, head_lr_mult, grad_clip, epochs, batch_size must be positive")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must be in [0, 1)")


def train_config_from_dict(doc: dict) -> TrainConfig:
    doc = dict(doc)
    model = ModelConfig(**doc.pop("model", {}))
    loss = LossConfig(**doc.pop("loss", {}))
    return TrainConfig(model=model, loss=loss, **doc)


def train_config_to_dict(cfg: TrainConfig) -> dict:
    return asdict(cfg)


def ablation_variant(name: str, base: TrainConfig | None = None) -> TrainConfig:
    """Return a config with one loss term, the feature injection, or a
    selection mechanism removed or replaced."""
    if name not in ABLATIONS:
        raise ValueError(f"unknown ablation {name!r}; choose from {ABLATIONS}")
    cfg = copy.deepcopy(base) if base is not None else TrainConfig()
    if name == "no_pos":
        cfg.loss.enable_pos = False
    elif name == "no_cons1":
        cfg.loss.enable_cons1 = False
    elif name == "no_va":
        cfg.loss.enable_va = False
    elif name == "no_cons2":
        cfg.loss.enable_cons2 = False
    elif name == "no_injection":
        cfg.model.use_injection = False
    elif name == "mse_pos":
        cfg.loss.pos_mode = "mse"
    elif name == "manual_va_select":
        cfg.manual_va_select = True
    return cfg


def seed_everything(seed: int, deterministic: bool = True) -> None:
    random.seed(seed)
    np.random.seed(seed)
    torch.manual_seed(seed)
    if deterministic:
        torch.set_num_threads(1)


def make_optimizer(model: ThreeStreamNet, weights: ScoreWeights, cfg: TrainConfig) -> torch.optim.Adam:
    heads = [p for dec in (model.dec_pos, model.dec_vel, model.dec_acc) for p in dec.head.parameters()]
    head_ids = {id(p) for p in heads}
    trunk = [p for p in model.parameters() if id(p) not in head_ids] + list(weights.parameters())
    return torch.optim.Adam(
        [
            {"params": trunk, "lr": cfg.learning_rate},
            {"params": heads, "lr": cfg.learning_rate * cfg.head_lr_mult},
        ]
    )


def _gather_candidates(stream: torch.Tensor, idx: torch.Tensor) -> torch.Tensor:
    # stream: (M, K, T', 2); idx: (M,) -> (M, T', 2)
    return stream[torch.arange(stream.shape[0], device=stream.device), idx]


def _straight_through_pick(stream: torch.Tensor, scores: torch.Tensor, selected: torch.Tensor) -> torch.Tensor:
    """Select candidate ``selected`` from each agent's stream; the value is
    the hard pick exactly, the gradient treats the pick as softmax(scores)."""
    soft = torch.softmax(scores, dim=-1)
    hard = F.one_hot(selected, num_classes=stream.shape[-3]).to(stream.dtype)
    weight = hard + soft - soft.detach()
    return (weight[..., None, None] * stream).sum(dim=-3)


def _per_candidate_huber(stream: torch.Tensor, target: torch.Tensor, delta: float) -> torch.Tensor:
    # (M, K, T', 2) vs (M, T', 2) -> (M, K)
    per = F.huber_loss(stream, target[..., None, :, :].expand_as(stream), delta=delta, reduction="none")
    return per.mean(dim=(-2, -1))


def _check_finite(report: LossReport) -> None:
    for name in ("pos", "va", "cons1", "cons2", "total"):
        value = getattr(report, name)
        if torch.is_tensor(value):
            value = value.detach().item()
        if not math.isfinite(value):
            raise NumericalAbort(f"{name} loss is non-finite")


def train_step(
    batch: list[SceneWindow],
    model: ThreeStreamNet,
    weights: ScoreWeights,
    optimizer: torch.optim.Optimizer,
    cfg: TrainConfig,
) -> LossReport:
    """One optimization step over a batch of scene windows."""
    model.train()
    obs_pos, obs_vel, obs_acc, future, valid = collate_windows(batch)
    preds = model(obs_pos, obs_vel, obs_acc, valid)

    # Flatten to the real agents across the whole batch.
    pred_pos = preds.positions[valid]   # (M, K, T', 2)
    pred_vel = preds.velocities[valid]
    pred_acc = preds.accels[valid]
    fut = future[valid]                 # (M, T', 2)
    obs = obs_pos[valid]                # (M, T, 2)

    last_pos = obs[:, -1]
    hist_vel = derive_velocity(obs)     # unpadded (M, T-1, 2)
    last_vel = hist_vel[:, -1]
    hist_acc = derive_accel(hist_vel)   # (M, T-2, 2)
    v_glob = global_velocity(obs)
    gt_vel = pseudo_velocity(fut, last_pos)
    gt_acc = pseudo_accel(gt_vel, last_vel)

    lc = cfg.loss
    zero = pred_pos.sum() * 0.0

    pos_term = position_loss(pred_pos, fut, lc) if lc.enable_pos else zero

    scores = score_candidates(v_glob, pred_vel, hist_acc, pred_acc, weights)
    if cfg.manual_va_select:
        idx_vel = _per_candidate_huber(pred_vel, gt_vel, lc.huber_delta).argmin(dim=-1)
        idx_acc = _per_candidate_huber(pred_acc, gt_acc, lc.huber_delta).argmin(dim=-1)
    else:
        idx_vel = scores.dc.argmax(dim=-1)
        idx_acc = scores.sim.argmin(dim=-1)

    va_term = zero
    if lc.enable_va:
        va_term = va_loss(
            _gather_candidates(pred_vel, idx_vel), gt_vel, _gather_candidates(pred_acc, idx_acc), gt_acc, lc
        )

    cons1_term = cons1_loss(pred_vel, pred_acc, last_vel) if lc.enable_cons1 else zero

    cons2_term = zero
    if lc.enable_cons2:
        pseudo_v = pseudo_velocity(pred_pos, last_pos[:, None, :])
        pseudo_a = pseudo_accel(pseudo_v, last_vel[:, None, :])
        if cfg.manual_va_select:
            sel_vel = _gather_candidates(pred_vel, idx_vel)
            sel_acc = _gather_candidates(pred_acc, idx_acc)
        else:
            sel_vel = _straight_through_pick(pred_vel, scores.combined, scores.selected)
            sel_acc = _straight_through_pick(pred_acc, scores.combined, scores.selected)
        cons2_term = cons2_loss(pseudo_v, pseudo_a, sel_vel, sel_acc)

    report = total_loss(pos_term, va_term, cons1_term, cons2_term, lc)
    _check_finite(report)

    optimizer.zero_grad()
    report.total.backward()
    torch.nn.utils.clip_grad_norm_(
        [p for group in optimizer.param_groups for p in group["params"]], cfg.grad_clip
    )
    optimizer.step()
    return report.detached()


def split_train_val(windows: list[SceneWindow], fraction: float, seed: int):
    """Seeded shuffle split for checkpoint selection; tiny corpora fall back
    to validating on the training windows themselves."""
    n_val = int(len(windows) * fraction)
    if n_val < 1:
        return list(windows), list(windows)
    order = list(range(len(windows)))
    random.Random(seed).shuffle(order)
    val = [windows[i] for i in order[:n_val]]
    train = [windows[i] for i in order[n_val:]]
    return train, val


def fit(windows: list[SceneWindow], cfg: TrainConfig) -> Path:
    """Train for the configured epochs, logging per-step losses and keeping
    the checkpoint with the best validation min-ADE. Returns its path."""
    if not windows:
        raise ValueError("no training windows")
    seed_everything(cfg.seed, cfg.deterministic)
    train_windows, val_windows = split_train_val(windows, cfg.val_fraction, cfg.seed)

    model = ThreeStreamNet(cfg.model)
    weights = ScoreWeights()
    optimizer = make_optimizer(model, weights, cfg)

    ckpt_dir = Path(cfg.checkpoint_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    log_path = Path(cfg.log_path) if cfg.log_path else ckpt_dir / "loss_log.jsonl"
    best_path = ckpt_dir / "best.pt"
    best_ade = math.inf
    step = 0
    rng = random.Random(cfg.seed)

    with open(log_path, "w", encoding="utf-8") as log_fh:
        for epoch in range(cfg.epochs):
            order = list(range(len(train_windows)))
            rng.shuffle(order)
            for lo in range(0, len(order), cfg.batch_size):
                batch = [train_windows[i] for i in order[lo : lo + cfg.batch_size]]
                report = train_step(batch, model, weights, optimizer, cfg)
                append_report(log_fh, step, report)
                step += 1
            result = evaluate(model, val_windows, k=cfg.model.K)
            if result.ade < best_ade:
                best_ade = result.ade
                save_checkpoint(
                    best_path, model, weights, extra={"epoch": epoch, "val_ade": best_ade, "seed": cfg.seed}
                )
            log.info("epoch %d: val min-ADE %.4f (best %.4f)", epoch, result.ade, best_ade)
    save_checkpoint(ckpt_dir / "last.pt", model, weights, extra={"epoch": cfg.epochs - 1, "seed": cfg.seed})
    return best_path
