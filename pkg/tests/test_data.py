import os

import numpy as np
import pytest
import torch

from trajkin.data import (
    ParseError,
    RawTrack,
    SceneWindow,
    SplitSpec,
    collate_windows,
    load_manifest,
    load_tracks,
    make_splits,
    synth_scene,
    window_scenes,
    windows_from_manifest,
)
from trajkin.kinematics import derive_accel, derive_velocity


def write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def straight_track(agent_id, n, start_frame=0, step=1, origin=(0.0, 0.0), vel=(1.0, 0.0)):
    frames = np.arange(start_frame, start_frame + n * step, step)
    coords = np.array(origin) + np.arange(n)[:, None] * np.array(vel)
    return RawTrack(agent_id=agent_id, frames=frames, coords=coords)


class TestLoadTracks:
    def test_two_line_file(self, tmp_path):
        path = write(tmp_path, "a.txt", "0 1 0.5 0.5\n10 1 1.0 1.0\n")
        tracks = load_tracks(path)
        assert len(tracks) == 1
        assert tracks[0].agent_id == 1
        assert list(tracks[0].frames) == [0, 10]

    def test_empty_file(self, tmp_path):
        assert load_tracks(write(tmp_path, "empty.txt", "")) == []

    def test_duplicate_names_line(self, tmp_path):
        path = write(tmp_path, "dup.txt", "0 1 0.0 0.0\n10 2 1.0 1.0\n0 1 2.0 2.0\n")
        with pytest.raises(ParseError, match=":3"):
            load_tracks(path)

    def test_wrong_field_count(self, tmp_path):
        path = write(tmp_path, "bad.txt", "0 1 0.0\n")
        with pytest.raises(ParseError, match=":1"):
            load_tracks(path)

    def test_non_numeric(self, tmp_path):
        path = write(tmp_path, "bad.txt", "0 1 zero 0.0\n")
        with pytest.raises(ParseError):
            load_tracks(path)

    def test_unknown_format(self, tmp_path):
        path = write(tmp_path, "a.txt", "0 1 0.0 0.0\n")
        with pytest.raises(ValueError):
            load_tracks(path, fmt="csv")

    def test_float_ids_accepted(self, tmp_path):
        # the community-preprocessed files write ids as floats
        path = write(tmp_path, "a.txt", "10.0 3.0 1.25 -0.5\n")
        tracks = load_tracks(path)
        assert tracks[0].agent_id == 3
        assert tracks[0].frames[0] == 10

    def test_frames_sorted(self, tmp_path):
        path = write(tmp_path, "a.txt", "20 1 2.0 0.0\n0 1 0.0 0.0\n10 1 1.0 0.0\n")
        tracks = load_tracks(path)
        assert list(tracks[0].frames) == [0, 10, 20]
        assert tracks[0].coords[1].tolist() == [1.0, 0.0]


class TestWindowScenes:
    def test_exact_length_track(self):
        windows = window_scenes([straight_track(1, 20)], stride=20)
        assert len(windows) == 1
        assert windows[0].n_agents == 1
        assert windows[0].obs_pos.shape == (1, 8, 2)
        assert windows[0].future.shape == (1, 12, 2)

    def test_too_short_track(self):
        assert window_scenes([straight_track(1, 19)]) == []

    def test_two_agents_overlapping(self):
        tracks = [straight_track(1, 20), straight_track(2, 20, origin=(5.0, 5.0))]
        windows = window_scenes(tracks, stride=20)
        assert len(windows) == 1
        assert windows[0].n_agents == 2

    def test_partial_agent_excluded(self):
        tracks = [straight_track(1, 20), straight_track(2, 10)]
        windows = window_scenes(tracks, stride=20)
        assert windows[0].agent_ids == [1]

    def test_sliding_count(self):
        windows = window_scenes([straight_track(1, 25)], stride=1)
        assert len(windows) == 6  # 25 - 20 + 1

    def test_lattice_hole_skipped(self):
        frames = np.concatenate([np.arange(10), np.arange(15, 40)])  # gap 10..14
        coords = np.zeros((len(frames), 2))
        coords[:, 0] = np.arange(len(frames), dtype=float)
        track = RawTrack(agent_id=1, frames=frames, coords=coords)
        windows = window_scenes([track], stride=1)
        starts = {w.start_frame for w in windows}
        assert all(s >= 15 for s in starts)  # nothing may straddle the hole
        assert len(windows) == 6  # 25 contiguous frames from 15

    def test_decimated_frames(self):
        windows = window_scenes([straight_track(1, 20, step=10)], stride=20)
        assert len(windows) == 1

    def test_velocity_padding(self):
        w = window_scenes([straight_track(1, 20)], stride=20)[0]
        v = derive_velocity(w.obs_pos)
        assert torch.allclose(w.obs_vel[:, 1:], v)
        assert torch.equal(w.obs_vel[:, 0], w.obs_vel[:, 1])


class TestSplits:
    def make_corpus(self):
        windows = []
        for name in ("eth", "hotel", "univ"):
            offset = float(hash(name) % 7)
            tracks = [straight_track(1, 22, origin=(offset, 0.0))]
            windows += window_scenes(tracks, stride=1, scene_id=name)
        return windows

    def test_leave_one_out_isolates_scene(self):
        windows = self.make_corpus()
        train, test = make_splits(windows, SplitSpec(protocol="leave_one_out", holdout="eth"))
        assert {w.scene_id for w in test} == {"eth"}
        assert "eth" not in {w.scene_id for w in train}
        assert len(train) + len(test) == len(windows)

    def test_fixed_split(self):
        windows = self.make_corpus()
        spec = SplitSpec(protocol="fixed", train_scenes=["hotel", "univ"], test_scenes=["eth"])
        train, test = make_splits(windows, spec)
        assert {w.scene_id for w in train} == {"hotel", "univ"}
        assert {w.scene_id for w in test} == {"eth"}

    def test_absent_holdout(self):
        with pytest.raises(ValueError, match="absent"):
            make_splits(self.make_corpus(), SplitSpec(protocol="leave_one_out", holdout="zara9"))

    def test_single_scene_corpus_rejected(self):
        windows = window_scenes([straight_track(1, 22)], stride=1, scene_id="only")
        with pytest.raises(ValueError):
            make_splits(windows, SplitSpec(protocol="leave_one_out", holdout="only"))

    def test_spec_validation(self):
        with pytest.raises(ValueError):
            SplitSpec(protocol="leave_one_out")
        with pytest.raises(ValueError):
            SplitSpec(protocol="random")


class TestSynthScene:
    def test_deterministic(self):
        a = synth_scene("turn", n_agents=3, noise_sigma=0.1, seed=42)
        b = synth_scene("turn", n_agents=3, noise_sigma=0.1, seed=42)
        assert torch.equal(a.obs_pos, b.obs_pos)
        assert torch.equal(a.future, b.future)

    def test_seed_changes_scene(self):
        a = synth_scene("turn", seed=1)
        b = synth_scene("turn", seed=2)
        assert not torch.equal(a.obs_pos, b.obs_pos)

    def test_constant_velocity_zero_accel_exact(self):
        w = synth_scene("constant_velocity", n_agents=4, noise_sigma=0.0, seed=3)
        accel = derive_accel(derive_velocity(w.obs_pos))
        assert (accel == 0).all()
        full = torch.cat([w.obs_pos, w.future], dim=1)
        assert (derive_accel(derive_velocity(full)) == 0).all()

    def test_constant_accel_is_constant(self):
        w = synth_scene("constant_accel", n_agents=3, noise_sigma=0.0, seed=4)
        full = torch.cat([w.obs_pos, w.future], dim=1)
        accel = derive_accel(derive_velocity(full))
        assert torch.equal(accel, accel[:, :1].expand_as(accel))

    def test_turn_changes_heading(self):
        w = synth_scene("turn", n_agents=1, noise_sigma=0.0, seed=5)
        v_obs = (w.obs_pos[0, 1] - w.obs_pos[0, 0]) / 1.0
        v_fut = w.future[0, -1] - w.future[0, -2]
        cos = torch.dot(v_obs, v_fut) / (v_obs.norm() * v_fut.norm())
        assert cos < 0.9

    def test_stop_decays(self):
        w = synth_scene("stop", n_agents=1, noise_sigma=0.0, seed=6)
        final_step = (w.future[0, -1] - w.future[0, -2]).norm()
        first_step = (w.obs_pos[0, 1] - w.obs_pos[0, 0]).norm()
        assert final_step < 0.05 * max(first_step, 1e-9)

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            synth_scene("teleport")

    def test_horizon_override(self):
        w = synth_scene("constant_velocity", t_fut=24, seed=0)
        assert w.future.shape[1] == 24


class TestCollate:
    def test_padding_and_mask(self):
        a = synth_scene("constant_velocity", n_agents=1, seed=0)
        b = synth_scene("turn", n_agents=3, seed=1)
        obs_pos, obs_vel, obs_acc, future, valid = collate_windows([a, b])
        assert obs_pos.shape == (2, 3, 8, 2)
        assert future.shape == (2, 3, 12, 2)
        assert valid.tolist() == [[True, False, False], [True, True, True]]
        assert (obs_pos[0, 1:] == 0).all()

    def test_empty_batch(self):
        with pytest.raises(ValueError):
            collate_windows([])

    def test_horizon_mismatch(self):
        a = synth_scene("constant_velocity", seed=0)
        b = synth_scene("constant_velocity", t_fut=16, seed=0)
        with pytest.raises(ValueError):
            collate_windows([a, b])


class TestManifest:
    def test_load_and_window(self, tmp_path):
        track_text = "".join(f"{f} 1 {float(f)} 0.0\n" for f in range(20))
        write(tmp_path, "sceneA.txt", track_text)
        write(
            tmp_path,
            "manifest.yaml",
            "scenes:\n  - name: sceneA\n    path: sceneA.txt\n    units: meters\n",
        )
        entries = load_manifest(tmp_path / "manifest.yaml")
        assert entries[0].name == "sceneA"
        assert os.path.isabs(entries[0].path)
        windows = windows_from_manifest(entries, stride=20)
        assert len(windows) == 1
        assert windows[0].scene_id == "sceneA"

    def test_data_root_env(self, tmp_path, monkeypatch):
        data_dir = tmp_path / "elsewhere"
        data_dir.mkdir()
        write(data_dir, "s.txt", "0 1 0.0 0.0\n")
        manifest = write(tmp_path, "m.yaml", "scenes:\n  - name: s\n    path: s.txt\n")
        monkeypatch.setenv("TRAJKIN_DATA_ROOT", str(data_dir))
        entries = load_manifest(manifest)
        assert entries[0].path == str(data_dir / "s.txt")

    def test_malformed_manifest(self, tmp_path):
        path = write(tmp_path, "m.yaml", "- just\n- a list\n")
        with pytest.raises(ValueError):
            load_manifest(path)


def test_scene_window_validation():
    with pytest.raises(ValueError):
        SceneWindow(
            scene_id="x",
            agent_ids=[1],
            obs_pos=torch.zeros(1, 8, 2),
            obs_vel=torch.zeros(1, 8, 2),
            obs_acc=torch.zeros(1, 8, 2),
            future=torch.zeros(2, 12, 2),  # wrong agent count
        )


def test_windowing_order_independent():
    tracks = [straight_track(1, 24), straight_track(2, 24, origin=(3.0, 1.0))]
    a = window_scenes(tracks, stride=2)
    b = window_scenes(tracks[::-1], stride=2)
    assert len(a) == len(b)
    for wa, wb in zip(a, b):
        assert wa.start_frame == wb.start_frame
        assert sorted(wa.agent_ids) == sorted(wb.agent_ids)
        for agent in wa.agent_ids:
            ia, ib = wa.agent_ids.index(agent), wb.agent_ids.index(agent)
            assert torch.equal(wa.obs_pos[ia], wb.obs_pos[ib])
