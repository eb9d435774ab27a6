"""Operator entry points: train, eval, predict, plot, synth.

Exit codes: 0 success, 1 usage/config error, 2 data error, 3 numerical
abort. Dataset manifests resolve relative paths against TRAJKIN_DATA_ROOT
when set. Prediction records are line-delimited
``window_id agent_id candidate_id step x y``.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
import torch
import yaml
from matplotlib.collections import LineCollection

from .data import (
    SYNTH_KINDS,
    ParseError,
    load_manifest,
    load_tracks,
    synth_scene,
    window_scenes,
    windows_from_manifest,
)
from .evaluation import evaluate
from .kinematics import FRAME_INTERVAL
from .losses import read_loss_log
from .model import load_checkpoint
from .training import NumericalAbort, fit, train_config_from_dict

log = logging.getLogger("trajkin")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse would sys.exit(2); keep 2 for data errors
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="trajkin", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a model from a YAML run config")
    p.add_argument("--config", required=True, help="run config (training, model, loss, data sections)")

    p = sub.add_parser("eval", help="best-of-K ADE/FDE of a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True, help="dataset manifest")
    p.add_argument("--scene", default=None, help="restrict to one scene (e.g. the held-out one)")
    p.add_argument("--k", type=int, default=None, help="candidates to use (<= checkpoint K)")
    p.add_argument("--t-prime", type=int, default=None, help="expected horizon; must match the checkpoint")
    p.add_argument("--stride", type=int, default=None, help="window stride; default non-overlapping")
    p.add_argument("--joint-min", action="store_true", help="one candidate supplies both ADE and FDE")
    p.add_argument("--out", default=None, help="write the result as JSON")

    p = sub.add_parser("predict", help="emit K candidate trajectories per agent per window")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="canonical-format trajectory file")
    p.add_argument("--output", required=True, help="prediction record file to write")
    p.add_argument("--stride", type=int, default=None, help="window stride; default non-overlapping")

    p = sub.add_parser("plot", help="render trajectory fans or loss curves")
    p.add_argument("--records", default=None, help="prediction record file (fan plot)")
    p.add_argument("--input", default=None, help="source trajectory file for observed/ground-truth overlay")
    p.add_argument("--log", default=None, help="training loss log (curve plot)")
    p.add_argument("--window-id", default=None, help="window to draw; default first in the record file")
    p.add_argument("--color-mode", choices=("uniform", "speed"), default="uniform")
    p.add_argument("--out", required=True, help="image path; format from the extension")

    p = sub.add_parser("synth", help="generate synthetic scenes in canonical ingest format")
    p.add_argument("--kind", required=True, choices=SYNTH_KINDS)
    p.add_argument("--count", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--n-agents", type=int, default=2)
    p.add_argument("--noise", type=float, default=0.0)
    p.add_argument("--out-dir", required=True)
    return parser


def _load_run_config(path):
    try:
        with open(path, encoding="utf-8") as fh:
            doc = yaml.safe_load(fh) or {}
        data_spec = doc.pop("data", None)
        return train_config_from_dict(doc), data_spec
    except FileNotFoundError:
        raise
    except (yaml.YAMLError, TypeError, ValueError) as exc:
        raise UsageError(f"bad run config {path}: {exc}") from exc


def _windows_from_spec(data_spec, default_stride: int = 1):
    if not data_spec:
        raise UsageError("run config needs a 'data' section (manifest or synthetic)")
    if "synthetic" in data_spec:
        spec = data_spec["synthetic"]
        kinds = spec.get("kinds", ["constant_velocity", "turn", "stop"])
        count = int(spec.get("count", 20))
        return [
            synth_scene(
                kinds[i % len(kinds)],
                n_agents=int(spec.get("n_agents", 2)),
                noise_sigma=float(spec.get("noise", 0.0)),
                seed=int(spec.get("seed0", 0)) + i,
            )
            for i in range(count)
        ]
    entries = load_manifest(data_spec["manifest"], data_root=data_spec.get("data_root"))
    holdout = data_spec.get("holdout")
    if holdout is not None:
        entries = [e for e in entries if e.name != holdout]
        if not entries:
            raise ValueError(f"holding out {holdout!r} leaves no training scenes")
    return windows_from_manifest(entries, stride=int(data_spec.get("stride", default_stride)))


def cmd_train(args) -> int:
    cfg, data_spec = _load_run_config(args.config)
    windows = _windows_from_spec(data_spec)
    log.info("training on %d windows", len(windows))
    path = fit(windows, cfg)
    log.info("best checkpoint: %s", path)
    print(path)
    return EXIT_OK


def cmd_eval(args) -> int:
    model, _, extra = load_checkpoint(args.checkpoint)
    stride = args.stride or (model.cfg.T + model.cfg.T_prime)
    entries = load_manifest(args.manifest)
    if args.scene is not None:
        entries = [e for e in entries if e.name == args.scene]
        if not entries:
            raise ValueError(f"scene {args.scene!r} not in manifest")
    windows = windows_from_manifest(entries, t_obs=model.cfg.T, t_fut=model.cfg.T_prime, stride=stride)
    result = evaluate(model, windows, k=args.k, t_prime=args.t_prime, joint_min=args.joint_min)
    print(result.format_table())
    if args.out:
        result.save(args.out)
    return EXIT_OK


def write_predictions(path, rows) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for window_id, agent_id, cand, step, x, y in rows:
            fh.write(f"{window_id} {agent_id} {cand} {step} {x:.9f} {y:.9f}\n")


def read_predictions(path) -> dict:
    """Parse a prediction record file into
    {window_id: {agent_id: {candidate_id: (T', 2) array}}}."""
    table: dict = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 6:
                raise ParseError(f"{path}:{lineno}: expected 6 fields, got {len(parts)}", line=lineno)
            try:
                wid, agent, cand, step = parts[0], int(parts[1]), int(parts[2]), int(parts[3])
                x, y = float(parts[4]), float(parts[5])
            except ValueError:
                raise ParseError(f"{path}:{lineno}: unparseable record {line!r}", line=lineno) from None
            table.setdefault(wid, {}).setdefault(agent, {}).setdefault(cand, []).append((step, x, y))
    for wid, agents in table.items():
        for agent, cands in agents.items():
            for cand, pts in cands.items():
                pts.sort()
                cands[cand] = np.array([[x, y] for _, x, y in pts])
    return table


def cmd_predict(args) -> int:
    model, _, _ = load_checkpoint(args.checkpoint)
    cfg = model.cfg
    stride = args.stride or (cfg.T + cfg.T_prime)
    tracks = load_tracks(args.input)
    stem = Path(args.input).stem
    windows = window_scenes(tracks, t_obs=cfg.T, t_fut=cfg.T_prime, stride=stride, scene_id=stem)
    if not windows:
        raise ValueError(f"{args.input}: no complete windows of length {cfg.T + cfg.T_prime}")
    model.eval()
    rows = []
    with torch.no_grad():
        for w in windows:
            preds = model(
                w.obs_pos.unsqueeze(0), w.obs_vel.unsqueeze(0), w.obs_acc.unsqueeze(0)
            ).positions[0]
            wid = f"{w.scene_id}:{w.start_frame}"
            for a, agent_id in enumerate(w.agent_ids):
                for cand in range(cfg.K):
                    for step in range(cfg.T_prime):
                        x, y = preds[a, cand, step].tolist()
                        rows.append((wid, agent_id, cand, step, x, y))
    write_predictions(args.output, rows)
    log.info("wrote %d records for %d windows to %s", len(rows), len(windows), args.output)
    return EXIT_OK


def _plot_loss_curves(log_path, out_path) -> None:
    records = read_loss_log(log_path)
    if not records or "total" not in records[0]:
        raise ValueError(f"{log_path}: not a loss log")
    steps = [r["step"] for r in records]
    fig, ax = plt.subplots(figsize=(7, 4.5))
    for key in ("pos", "va", "cons1", "cons2", "total"):
        ax.plot(steps, [r[key] for r in records], label=key, linewidth=1.2 if key == "total" else 0.8)
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out_path)
    plt.close(fig)


def _speed_segments(ax, points: np.ndarray, cmap, norm):
    segs = np.stack([points[:-1], points[1:]], axis=1)
    speeds = np.linalg.norm(np.diff(points, axis=0), axis=-1) / FRAME_INTERVAL
    lc = LineCollection(segs, cmap=cmap, norm=norm, linewidths=1.5)
    lc.set_array(speeds)
    ax.add_collection(lc)
    return lc


def _plot_fan(args) -> None:
    table = read_predictions(args.records)
    if not table:
        raise ValueError(f"{args.records}: no prediction records")
    wid = args.window_id or next(iter(table))
    if wid not in table:
        raise ValueError(f"window {wid!r} not in {args.records}; have {list(table)[:5]}")
    context = {}
    if args.input:
        scene, start = wid.rsplit(":", 1)
        tracks = load_tracks(args.input)
        for w in window_scenes(tracks, stride=1, scene_id=scene):
            if w.start_frame == int(start):
                context = {
                    agent: (w.obs_pos[i].numpy(), w.future[i].numpy()) for i, agent in enumerate(w.agent_ids)
                }
                break

    fig, ax = plt.subplots(figsize=(6, 6))
    speed_artist = None
    if args.color_mode == "speed":
        all_pts = [
            np.vstack([ctx[0], ctx[1]]) for ctx in context.values()
        ] or [c for agents in table.values() for cands in agents.values() for c in cands.values()]
        top = max(float(np.linalg.norm(np.diff(p, axis=0), axis=-1).max()) for p in all_pts) / FRAME_INTERVAL
        norm = plt.Normalize(0.0, max(top, 1e-6))
    for agent, cands in table[wid].items():
        for cand, pts in sorted(cands.items()):
            ax.plot(pts[:, 0], pts[:, 1], color="tab:gray", alpha=0.35, linewidth=0.7)
        if agent in context:
            obs, fut = context[agent]
            if args.color_mode == "speed":
                speed_artist = _speed_segments(ax, np.vstack([obs, fut]), "coolwarm", norm)
            else:
                ax.plot(obs[:, 0], obs[:, 1], color="tab:blue", linewidth=1.8)
            ax.plot(fut[:, 0], fut[:, 1], color="tab:green", linestyle="--", linewidth=1.8)
            ax.scatter([obs[-1, 0]], [obs[-1, 1]], color="black", s=12, zorder=5)
    if speed_artist is not None:
        fig.colorbar(speed_artist, ax=ax, label="speed")
    ax.set_title(wid)
    ax.set_aspect("equal", adjustable="datalim")
    fig.tight_layout()
    fig.savefig(args.out)
    plt.close(fig)


def cmd_plot(args) -> int:
    if args.log:
        _plot_loss_curves(args.log, args.out)
    elif args.records:
        _plot_fan(args)
    else:
        raise UsageError("plot needs --log or --records")
    log.info("wrote %s", args.out)
    return EXIT_OK


def cmd_synth(args) -> int:
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(args.count):
        seed = args.seed + i
        w = synth_scene(args.kind, n_agents=args.n_agents, noise_sigma=args.noise, seed=seed)
        name = f"synth-{args.kind}-{seed}"
        path = out_dir / f"{name}.txt"
        coords = torch.cat([w.obs_pos, w.future], dim=1)  # (N, T+T', 2)
        with open(path, "w", encoding="utf-8") as fh:
            for step in range(coords.shape[1]):
                for a, agent_id in enumerate(w.agent_ids):
                    x, y = coords[a, step].tolist()
                    fh.write(f"{step} {agent_id} {x:.9f} {y:.9f}\n")
        entries.append({"name": name, "path": path.name, "units": w.units})
    with open(out_dir / "manifest.yaml", "w", encoding="utf-8") as fh:
        yaml.safe_dump({"scenes": entries}, fh, sort_keys=False)
    log.info("wrote %d scenes and manifest.yaml under %s", args.count, out_dir)
    print(out_dir / "manifest.yaml")
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "predict": cmd_predict,
    "plot": cmd_plot,
    "synth": cmd_synth,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalAbort as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ParseError, OSError, ValueError, KeyError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
