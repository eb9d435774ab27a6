"""Three-stream trajectory network.

One temporal transformer encoder per input stream (position, velocity,
acceleration), cross-attention feature injection between adjacent streams
(velocity into position, acceleration into velocity), and one social decoder
per stream that attends across the agents of a scene and emits K candidate
future sequences from K learnable queries.

Tensor layout everywhere: (B scenes, N agents, T steps, 2), padded to the
largest N in the batch with a boolean validity mask. Attention never crosses
scene rows, so batching scenes together cannot mix their agents.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import torch
from torch import nn

CHECKPOINT_SCHEMA = 1


@dataclass
class ModelConfig:
    d_model: int = 64
    n_heads: int = 4
    n_layers_enc: int = 4
    n_layers_dec: int = 4
    d_ff: int = 256
    K: int = 20
    T: int = 8
    T_prime: int = 12
    dropout: float = 0.1
    use_injection: bool = True

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ValueError("d_model must be divisible by n_heads")
        if self.K < 1:
            raise ValueError("need at least one candidate")
        if min(self.T, self.T_prime, self.n_layers_enc, self.n_layers_dec, self.d_ff) < 1:
            raise ValueError("sizes must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")


@dataclass
class PredictionSet:
    """K aligned candidate triples per agent; index k pairs the same decoder
    query across the three streams."""

    positions: torch.Tensor   # (B, N, K, T', 2)
    velocities: torch.Tensor  # (B, N, K, T', 2)
    accels: torch.Tensor      # (B, N, K, T', 2)

    def __post_init__(self):
        if not (self.positions.shape == self.velocities.shape == self.accels.shape):
            raise ValueError("prediction streams must share shape")


def sinusoidal_encoding(length: int, dim: int, dtype=None, device=None) -> torch.Tensor:
    pos = torch.arange(length, dtype=dtype or torch.float32, device=device).unsqueeze(1)
    idx = torch.arange(0, dim, 2, dtype=pos.dtype, device=device)
    angles = pos / torch.pow(torch.tensor(10000.0, dtype=pos.dtype, device=device), idx / dim)
    pe = torch.zeros(length, dim, dtype=pos.dtype, device=device)
    pe[:, 0::2] = torch.sin(angles)
    pe[:, 1::2] = torch.cos(angles[:, : dim // 2])
    return pe


class StreamEncoder(nn.Module):
    """Temporal self-attention over each agent's sequence, independently."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.embed = nn.Linear(2, cfg.d_model)
        self.dropout = nn.Dropout(cfg.dropout)
        layer = nn.TransformerEncoderLayer(
            cfg.d_model,
            cfg.n_heads,
            dim_feedforward=cfg.d_ff,
            dropout=cfg.dropout,
            batch_first=True,
            norm_first=True,  # pre-norm: stable without a warmup schedule
        )
        self.encoder = nn.TransformerEncoder(layer, cfg.n_layers_enc, enable_nested_tensor=False)

    def forward(self, seq: torch.Tensor) -> torch.Tensor:
        # seq: (B, N, T, 2) -> (B, N, T, d)
        if not torch.isfinite(seq).all():
            raise ValueError("non-finite values in encoder input")
        b, n, t, _ = seq.shape
        x = self.embed(seq.reshape(b * n, t, 2))
        x = x + sinusoidal_encoding(t, x.shape[-1], dtype=x.dtype, device=x.device)
        x = self.encoder(self.dropout(x))
        return x.reshape(b, n, t, -1)


class InjectionBlock(nn.Module):
    """Cross-attention residual: the source stream queries the target stream
    and the result is added back onto the target features."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.attn = nn.MultiheadAttention(cfg.d_model, cfg.n_heads, dropout=cfg.dropout, batch_first=True)

    def forward(self, target: torch.Tensor, source: torch.Tensor) -> torch.Tensor:
        if target.shape != source.shape:
            raise ValueError(f"stream shape mismatch: {tuple(target.shape)} vs {tuple(source.shape)}")
        b, n, t, d = target.shape
        tgt = target.reshape(b * n, t, d)
        src = source.reshape(b * n, t, d)
        fused, _ = self.attn(src, tgt, tgt, need_weights=False)
        return (tgt + fused).reshape(b, n, t, d)


class SocialDecoder(nn.Module):
    """Self-attention across the agents of a scene, once per learnable query.

    Each of the K query vectors is added to every agent's pooled feature,
    the stack attends along the agent dimension (padded agents masked out of
    the keys), and a linear head maps each agent to a T' x 2 sequence.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.queries = nn.Parameter(torch.randn(cfg.K, cfg.d_model) / math.sqrt(cfg.d_model))
        layer = nn.TransformerEncoderLayer(
            cfg.d_model,
            cfg.n_heads,
            dim_feedforward=cfg.d_ff,
            dropout=cfg.dropout,
            batch_first=True,
            norm_first=True,
        )
        self.layers = nn.TransformerEncoder(layer, cfg.n_layers_dec, enable_nested_tensor=False)
        self.head = nn.Linear(cfg.d_model, cfg.T_prime * 2)
        self.t_prime = cfg.T_prime

    def forward(self, agent_feats: torch.Tensor, valid: torch.Tensor) -> torch.Tensor:
        # agent_feats: (B, N, d); valid: (B, N) bool -> (B, N, K, T', 2)
        b, n, d = agent_feats.shape
        if not valid.any(dim=1).all():
            raise ValueError("scene with no valid agents")
        k = self.queries.shape[0]
        x = agent_feats.unsqueeze(1) + self.queries.view(1, k, 1, d)  # (B, K, N, d)
        x = x.reshape(b * k, n, d)
        pad = (~valid).unsqueeze(1).expand(b, k, n).reshape(b * k, n)
        x = self.layers(x, src_key_padding_mask=pad)
        out = self.head(x).reshape(b, k, n, self.t_prime, 2)
        return out.permute(0, 2, 1, 3, 4)


class ThreeStreamNet(nn.Module):
    """Full network: three encoders, two injections, three social decoders."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        self.enc_pos = StreamEncoder(cfg)
        self.enc_vel = StreamEncoder(cfg)
        self.enc_acc = StreamEncoder(cfg)
        self.inject_vel_to_pos = InjectionBlock(cfg)
        self.inject_acc_to_vel = InjectionBlock(cfg)
        self.dec_pos = SocialDecoder(cfg)
        self.dec_vel = SocialDecoder(cfg)
        self.dec_acc = SocialDecoder(cfg)

    def forward(
        self,
        obs_pos: torch.Tensor,
        obs_vel: torch.Tensor,
        obs_acc: torch.Tensor,
        valid: torch.Tensor | None = None,
        debug: bool = False,
    ) -> PredictionSet:
        """Predict K future triples per agent.

        Args:
            obs_pos: (B, N, T, 2) observed positions.
            obs_vel: (B, N, T, 2) observed velocities, left-padded to T.
            obs_acc: (B, N, T, 2) observed accelerations, left-padded to T.
            valid: (B, N) bool mask of real (non-padded) agents.
        """
        if obs_pos.shape[-2] < 2:
            raise ValueError("need at least two observed steps")
        if valid is None:
            valid = torch.ones(obs_pos.shape[:2], dtype=torch.bool, device=obs_pos.device)
        last_pos = obs_pos[..., -1, :]  # (B, N, 2)
        last_vel = obs_pos[..., -1, :] - obs_pos[..., -2, :]

        # Position inputs are made agent-centric; velocity/acceleration are
        # translation-invariant already.
        f_pos = self.enc_pos(obs_pos - last_pos[..., None, :])
        f_vel = self.enc_vel(obs_vel)
        f_acc = self.enc_acc(obs_acc)

        if self.cfg.use_injection:
            f_vel = self.inject_acc_to_vel(f_vel, f_acc)
            f_pos = self.inject_vel_to_pos(f_pos, f_vel)
        if debug:
            for name, f in (("pos", f_pos), ("vel", f_vel), ("acc", f_acc)):
                if not torch.isfinite(f).all():
                    raise RuntimeError(f"non-finite {name} features")

        pooled = (f_pos.mean(dim=2), f_vel.mean(dim=2), f_acc.mean(dim=2))
        # Heads emit residuals around inertial (constant-velocity) motion,
        # so the linear maps only learn deviations from it.
        steps = torch.arange(1, self.cfg.T_prime + 1, dtype=obs_pos.dtype, device=obs_pos.device)
        rollout = last_pos[:, :, None, None, :] + steps[None, None, None, :, None] * last_vel[:, :, None, None, :]
        positions = rollout + self.dec_pos(pooled[0], valid)
        velocities = last_vel[:, :, None, None, :] + self.dec_vel(pooled[1], valid)
        accels = self.dec_acc(pooled[2], valid)
        if debug:
            for name, f in (("positions", positions), ("velocities", velocities), ("accels", accels)):
                if not torch.isfinite(f).all():
                    raise RuntimeError(f"non-finite {name} output")
        return PredictionSet(positions=positions, velocities=velocities, accels=accels)


def save_checkpoint(path, model: ThreeStreamNet, score_weights=None, extra: dict | None = None) -> None:
    """Single-archive checkpoint: parameters keyed by hierarchical names plus
    the model configuration and a schema version."""
    payload = {
        "schema_version": CHECKPOINT_SCHEMA,
        "model_config": asdict(model.cfg),
        "model_state": model.state_dict(),
        "extra": extra or {},
    }
    if score_weights is not None:
        payload["score_weights_state"] = score_weights.state_dict()
    torch.save(payload, path)


def load_checkpoint(path):
    """Rebuild the network (and score weights, if stored) from a checkpoint.

    Returns (model, score_weights_or_None, extra_metadata).
    """
    from .scoring import ScoreWeights

    payload = torch.load(path, map_location="cpu")
    version = payload.get("schema_version")
    if version != CHECKPOINT_SCHEMA:
        raise ValueError(f"unsupported checkpoint schema {version!r}")
    model = ThreeStreamNet(ModelConfig(**payload["model_config"]))
    model.load_state_dict(payload["model_state"])
    weights = None
    if "score_weights_state" in payload:
        weights = ScoreWeights()
        weights.load_state_dict(payload["score_weights_state"])
    return model, weights, payload.get("extra", {})
