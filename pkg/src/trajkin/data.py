"""Trajectory ingest, scene windowing, splits, and synthetic data.

The canonical ingest format is UTF-8 text, one record per line, four
whitespace-separated fields ``frame_id agent_id x y`` with ``.`` as the
decimal radix and ``\\n`` line ends. Frames are assumed to sit on a uniform
lattice (0.4 s per step after decimation); both benchmark datasets are
converted to this layout offline.
"""

from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np
import torch
import yaml

from .kinematics import observed_triple

OBS_STEPS = 8      # 3.2 s of history at 0.4 s per frame
FUT_STEPS = 12     # 4.8 s of future

SYNTH_KINDS = ("constant_velocity", "constant_accel", "turn", "stop")


class ParseError(ValueError):
    """Malformed ingest data; message carries file and line number."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message)
        self.line = line


@dataclass
class RawTrack:
    agent_id: int
    frames: np.ndarray  # (L,) strictly increasing ints
    coords: np.ndarray  # (L, 2) float64

    def __post_init__(self):
        if len(self.frames) != len(self.coords):
            raise ValueError("frames and coords must align")
        if len(self.frames) > 1 and not (np.diff(self.frames) > 0).all():
            raise ValueError("frames must be strictly increasing")


@dataclass
class SceneWindow:
    """One temporal window of a scene.

    All agents listed are present at every one of the T + T' frames; the
    observed velocity/acceleration are derived from the positions and
    left-padded to T steps.
    """

    scene_id: str
    agent_ids: list[int]
    obs_pos: torch.Tensor   # (N, T, 2)
    obs_vel: torch.Tensor   # (N, T, 2)
    obs_acc: torch.Tensor   # (N, T, 2)
    future: torch.Tensor    # (N, T', 2)
    units: str = "meters"
    start_frame: int = 0

    def __post_init__(self):
        n = self.obs_pos.shape[0]
        if n < 1:
            raise ValueError("window needs at least one agent")
        if not (self.obs_vel.shape == self.obs_acc.shape == self.obs_pos.shape):
            raise ValueError("observed streams must share shape")
        if self.future.shape[0] != n or len(self.agent_ids) != n:
            raise ValueError("agent count mismatch across members")

    @property
    def n_agents(self) -> int:
        return self.obs_pos.shape[0]


@dataclass
class SplitSpec:
    """leave_one_out holds out one scene name; fixed uses explicit lists."""

    protocol: str = "leave_one_out"
    holdout: str | None = None
    train_scenes: list[str] = field(default_factory=list)
    test_scenes: list[str] = field(default_factory=list)

    def __post_init__(self):
        if self.protocol not in ("leave_one_out", "fixed"):
            raise ValueError(f"unknown split protocol {self.protocol!r}")
        if self.protocol == "leave_one_out" and not self.holdout:
            raise ValueError("leave_one_out requires a holdout scene name")
        if self.protocol == "fixed" and not (self.train_scenes and self.test_scenes):
            raise ValueError("fixed split requires train and test scene lists")


def load_tracks(path, fmt: str = "ethucy_txt") -> list[RawTrack]:
    """Parse a canonical-format trajectory file into per-agent tracks."""
    if fmt not in ("ethucy_txt", "sdd_txt"):
        raise ValueError(f"unknown format {fmt!r}")
    rows: dict[int, list[tuple[int, float, float]]] = {}
    seen: set[tuple[int, int]] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 4:
                raise ParseError(f"{path}:{lineno}: expected 4 fields, got {len(parts)}", line=lineno)
            try:
                frame = int(float(parts[0]))
                agent = int(float(parts[1]))
                x, y = float(parts[2]), float(parts[3])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: unparseable record {line!r}", line=lineno) from None
            if not (math.isfinite(x) and math.isfinite(y)):
                raise ParseError(f"{path}:{lineno}: non-finite coordinates", line=lineno)
            if (frame, agent) in seen:
                raise ParseError(f"{path}:{lineno}: duplicate entry for frame {frame}, agent {agent}", line=lineno)
            seen.add((frame, agent))
            rows.setdefault(agent, []).append((frame, x, y))
    tracks = []
    for agent in sorted(rows):
        entries = sorted(rows[agent])
        tracks.append(
            RawTrack(
                agent_id=agent,
                frames=np.array([e[0] for e in entries], dtype=np.int64),
                coords=np.array([[e[1], e[2]] for e in entries], dtype=np.float64),
            )
        )
    return tracks


def window_scenes(
    tracks: list[RawTrack],
    t_obs: int = OBS_STEPS,
    t_fut: int = FUT_STEPS,
    stride: int = 1,
    scene_id: str = "scene",
    units: str = "meters",
) -> list[SceneWindow]:
    """Slide fixed-length windows over the scene's frame lattice.

    Only agents observed at every one of the T + T' frames of a window are
    included; windows with no eligible agent are dropped. The lattice step
    is inferred as the smallest frame gap in the scene, and window starts
    advance by ``stride`` lattice steps.
    """
    total = t_obs + t_fut
    if not tracks:
        return []
    frames = sorted({int(f) for tr in tracks for f in tr.frames})
    if len(frames) < total:
        return []
    gaps = np.diff(frames)
    step = int(gaps.min()) if len(gaps) else 1
    index_of = {tr.agent_id: {int(f): i for i, f in enumerate(tr.frames)} for tr in tracks}

    windows = []
    for start in range(0, len(frames) - total + 1, stride):
        span = frames[start : start + total]
        if span[-1] - span[0] != (total - 1) * step:
            continue  # hole in the lattice
        ids, obs, fut = [], [], []
        for tr in tracks:
            lookup = index_of[tr.agent_id]
            idx = [lookup.get(f) for f in span]
            if any(i is None for i in idx):
                continue
            coords = tr.coords[idx]
            ids.append(tr.agent_id)
            obs.append(coords[:t_obs])
            fut.append(coords[t_obs:])
        if not ids:
            continue
        obs_t = torch.as_tensor(np.stack(obs), dtype=torch.float32)
        triple = observed_triple(obs_t)
        windows.append(
            SceneWindow(
                scene_id=scene_id,
                agent_ids=ids,
                obs_pos=triple.position,
                obs_vel=triple.velocity,
                obs_acc=triple.accel,
                future=torch.as_tensor(np.stack(fut), dtype=torch.float32),
                units=units,
                start_frame=span[0],
            )
        )
    return windows


def make_splits(windows: list[SceneWindow], spec: SplitSpec) -> tuple[list[SceneWindow], list[SceneWindow]]:
    """Partition windows by scene according to the split protocol."""
    names = {w.scene_id for w in windows}
    if spec.protocol == "leave_one_out":
        if spec.holdout not in names:
            raise ValueError(f"held-out scene {spec.holdout!r} absent from corpus {sorted(names)}")
        test = [w for w in windows if w.scene_id == spec.holdout]
        train = [w for w in windows if w.scene_id != spec.holdout]
    else:
        missing = [s for s in spec.test_scenes if s not in names]
        if missing:
            raise ValueError(f"test scenes absent from corpus: {missing}")
        train = [w for w in windows if w.scene_id in spec.train_scenes]
        test = [w for w in windows if w.scene_id in spec.test_scenes]
    if not train:
        raise ValueError("split leaves no training windows")
    if not test:
        raise ValueError("split leaves no test windows")
    return train, test


def _grid(x):
    # snap to 1/64 so cumulative sums and finite differences are exact in
    # float32; keeps zero-noise synthetic kinematics bitwise clean
    return np.round(np.asarray(x, dtype=np.float64) * 64.0) / 64.0


def synth_scene(
    kind: str,
    n_agents: int = 2,
    noise_sigma: float = 0.0,
    seed: int = 0,
    t_obs: int = OBS_STEPS,
    t_fut: int = FUT_STEPS,
    scene_id: str | None = None,
) -> SceneWindow:
    """Deterministic synthetic scene of straight, accelerating, turning, or
    stopping agents. ``turn`` slows and drifts over the last observed steps
    before switching heading at the prediction boundary (turns announce
    themselves, as real ones do); ``stop`` decays speed to zero."""
    if kind not in SYNTH_KINDS:
        raise ValueError(f"unknown synthetic kind {kind!r}; choose from {SYNTH_KINDS}")
    if n_agents < 1:
        raise ValueError("need at least one agent")
    rng = np.random.default_rng(seed)
    total = t_obs + t_fut
    positions = np.zeros((n_agents, total, 2), dtype=np.float64)
    for a in range(n_agents):
        start = _grid(rng.uniform(-8.0, 8.0, size=2))
        speed = rng.uniform(0.5, 1.5)
        theta = rng.uniform(0.0, 2.0 * np.pi)
        v0 = _grid(speed * np.array([np.cos(theta), np.sin(theta)]))
        vels = np.tile(v0, (total - 1, 1))
        if kind == "constant_accel":
            acc = _grid(rng.uniform(-0.05, 0.05, size=2))
            vels = v0[None, :] + np.arange(total - 1)[:, None] * acc[None, :]
        elif kind == "turn":
            dtheta = rng.choice([-1.0, 1.0]) * rng.uniform(np.pi / 6, 5 * np.pi / 12)

            def rot(angle):
                return np.array([[np.cos(angle), -np.sin(angle)], [np.sin(angle), np.cos(angle)]])

            # slow down and drift into the turn over the last observed
            # steps, then continue on the new heading: the observable
            # approach carries the direction cue real turns have
            vels[t_obs - 2 : t_obs] = _grid(0.6 * rot(0.15 * dtheta) @ v0)
            vels[t_obs:] = _grid(rot(dtheta) @ v0)
        elif kind == "stop":
            decay = 0.7 ** np.arange(total - 1)
            vels = _grid(v0[None, :] * decay[:, None])
        positions[a, 0] = start
        positions[a, 1:] = start + np.cumsum(vels, axis=0)
    if noise_sigma > 0:
        positions = positions + rng.normal(0.0, noise_sigma, size=positions.shape)

    obs = torch.as_tensor(positions[:, :t_obs], dtype=torch.float32)
    triple = observed_triple(obs)
    return SceneWindow(
        scene_id=scene_id or f"synth-{kind}-{seed}",
        agent_ids=list(range(n_agents)),
        obs_pos=triple.position,
        obs_vel=triple.velocity,
        obs_acc=triple.accel,
        future=torch.as_tensor(positions[:, t_obs:], dtype=torch.float32),
        units="meters",
        start_frame=0,
    )


def collate_windows(windows: list[SceneWindow]):
    """Stack windows into padded batch tensors.

    Returns (obs_pos, obs_vel, obs_acc, future, valid) with shapes
    (B, N_max, T, 2) x3, (B, N_max, T', 2), and a (B, N_max) bool mask.
    """
    if not windows:
        raise ValueError("empty batch")
    t = windows[0].obs_pos.shape[1]
    tp = windows[0].future.shape[1]
    if any(w.obs_pos.shape[1] != t or w.future.shape[1] != tp for w in windows):
        raise ValueError("windows disagree on horizon lengths")
    n_max = max(w.n_agents for w in windows)
    b = len(windows)
    obs_pos = torch.zeros(b, n_max, t, 2)
    obs_vel = torch.zeros(b, n_max, t, 2)
    obs_acc = torch.zeros(b, n_max, t, 2)
    future = torch.zeros(b, n_max, tp, 2)
    valid = torch.zeros(b, n_max, dtype=torch.bool)
    for i, w in enumerate(windows):
        n = w.n_agents
        obs_pos[i, :n] = w.obs_pos
        obs_vel[i, :n] = w.obs_vel
        obs_acc[i, :n] = w.obs_acc
        future[i, :n] = w.future
        valid[i, :n] = True
    return obs_pos, obs_vel, obs_acc, future, valid


@dataclass
class ManifestEntry:
    name: str
    path: str
    units: str = "meters"
    fmt: str = "ethucy_txt"


def load_manifest(path, data_root: str | None = None) -> list[ManifestEntry]:
    """Read a dataset manifest (YAML list of scene name/path/units entries).

    Relative paths resolve against ``data_root``, the TRAJKIN_DATA_ROOT
    environment variable, or the manifest's own directory, in that order.
    """
    with open(path, encoding="utf-8") as fh:
        doc = yaml.safe_load(fh)
    if not isinstance(doc, dict) or "scenes" not in doc:
        raise ValueError(f"{path}: manifest must be a mapping with a 'scenes' list")
    root = data_root or os.environ.get("TRAJKIN_DATA_ROOT") or os.path.dirname(os.path.abspath(path))
    entries = []
    for item in doc["scenes"]:
        entry = ManifestEntry(
            name=item["name"],
            path=item["path"],
            units=item.get("units", "meters"),
            fmt=item.get("format", "ethucy_txt"),
        )
        if not os.path.isabs(entry.path):
            entry.path = os.path.join(root, entry.path)
        entries.append(entry)
    return entries


def windows_from_manifest(
    entries: list[ManifestEntry], t_obs: int = OBS_STEPS, t_fut: int = FUT_STEPS, stride: int = 1
) -> list[SceneWindow]:
    windows = []
    for entry in entries:
        tracks = load_tracks(entry.path, fmt=entry.fmt)
        windows.extend(
            window_scenes(tracks, t_obs=t_obs, t_fut=t_fut, stride=stride, scene_id=entry.name, units=entry.units)
        )
    return windows
