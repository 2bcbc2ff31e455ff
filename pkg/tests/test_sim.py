import json

import numpy as np
import pytest

from slfm import dsp, sim
from slfm.errors import ConfigError, GeometryError
from slfm.rng import stream


def anechoic_scene(src_xz=(3.0, 5.0), room=(6.0, 8.0), beta=0.0, order=3, seed=0):
    tex = sim.make_texture(stream(seed, "tex"))
    return sim.Scene(room[0], room[1], beta, [sim.SourceSpec(*src_xz)], tex, order)


def scene_at_azimuth(theta_deg, distance=2.0, beta=0.0, seed=0):
    """Listener at room center heading 0; source placed at the requested azimuth."""
    room = (10.0, 10.0)
    cx, cz = room[0] / 2, room[1] / 2
    rad = np.radians(theta_deg)
    src = (cx - distance * np.sin(rad), cz + distance * np.cos(rad))
    scene = anechoic_scene(src_xz=src, room=room, beta=beta, seed=seed)
    return scene, sim.Pose(cx, cz, 0.0)


class TestGeometry:
    def test_wrap(self):
        assert sim.wrap_degrees(190.0) == pytest.approx(-170.0)
        assert sim.wrap_degrees(-180.0) == pytest.approx(180.0)
        assert sim.wrap_degrees(180.0) == pytest.approx(180.0)

    def test_azimuth_sign_convention(self):
        # source to the viewer's left (negative x from center, heading 0) -> positive azimuth
        scene, pose = scene_at_azimuth(40.0)
        assert scene.azimuth_deg(pose) == pytest.approx(40.0, abs=1e-9)

    def test_pair_consistency_theta_diff_equals_rotation(self):
        scene, pose = scene_at_azimuth(25.0)
        for dh in (-70.0, -15.0, 30.0, 85.0):
            pose_t = sim.Pose(pose.x, pose.z, pose.heading_deg + dh)
            th_s = scene.azimuth_deg(pose)
            th_t = scene.azimuth_deg(pose_t)
            assert sim.wrap_degrees(th_s - th_t) == pytest.approx(sim.wrap_degrees(dh), abs=1e-9)


class TestSignals:
    def test_noise_deterministic_and_rms(self):
        a = sim.synth_source_signal("noise", 1.0, stream(5, "s"))
        b = sim.synth_source_signal("noise", 1.0, stream(5, "s"))
        assert np.array_equal(a, b)
        r = dsp.rms(a)
        assert 0.1 <= r <= 0.5

    def test_speech_like_band_energy(self):
        x = sim.synth_source_signal("speech_like", 1.02, stream(3, "s"))
        spec = np.abs(np.fft.rfft(x.astype(np.float64))) ** 2
        freqs = np.fft.rfftfreq(len(x), 1 / 16000)
        band = (freqs >= 300) & (freqs <= 3400)
        assert spec[band].sum() / spec.sum() >= 0.90

    def test_music_like_and_validation(self):
        x = sim.synth_source_signal("music_like", 0.6, stream(4, "s"))
        assert np.max(np.abs(x)) == pytest.approx(0.9, rel=1e-5)
        with pytest.raises(ConfigError):
            sim.synth_source_signal("noise", 0.2, stream(4, "s"))
        with pytest.raises(ConfigError):
            sim.synth_source_signal("chirp", 1.0, stream(4, "s"))


class TestRenderer:
    def test_zero_azimuth_symmetric(self):
        scene, pose = scene_at_azimuth(0.0)
        sig = sim.synth_source_signal("noise", 1.02, stream(1, "n"))
        clip = sim.render_binaural(scene, pose, [sig])
        assert np.max(np.abs(clip.left - clip.right)) <= 1e-6 * np.max(np.abs(clip.left))

    def test_positive_azimuth_lag_and_level(self):
        scene, pose = scene_at_azimuth(30.0)
        sig = sim.synth_source_signal("noise", 1.02, stream(2, "n"))
        clip = sim.render_binaural(scene, pose, [sig])
        res = dsp.gcc_phat(clip.left, clip.right, max_lag=12)
        assert res.lag == 4  # (0.18/343)*sin(30deg)*16k = 4.2 samples
        assert dsp.rms(clip.left) > dsp.rms(clip.right)

    def test_front_back_pairs_identical(self):
        sig = sim.synth_source_signal("noise", 1.02, stream(6, "n"))
        for theta in (20.0, 55.0):
            sa, pa = scene_at_azimuth(theta)
            sb, pb = scene_at_azimuth(180.0 - theta)
            ca = sim.render_binaural(sa, pa, [sig])
            cb = sim.render_binaural(sb, pb, [sig])
            assert np.max(np.abs(ca.left - cb.left)) <= 1e-6
            assert np.max(np.abs(ca.right - cb.right)) <= 1e-6

    def test_source_too_close_rejected(self):
        scene = anechoic_scene(src_xz=(3.0, 4.0))
        with pytest.raises(GeometryError):
            sim.render_binaural(scene, sim.Pose(3.0, 4.1, 0.0), [np.ones(8000, np.float32)])

    def test_iid_sign_matches_geometry(self):
        sig = sim.synth_source_signal("noise", 1.02, stream(8, "n"))
        for theta in (-60.0, -20.0, 20.0, 60.0):
            scene, pose = scene_at_azimuth(theta)
            clip = sim.render_binaural(scene, pose, [sig])
            assert dsp.iid_sign(clip) == (1 if theta > 0 else -1)


class TestPanorama:
    def test_position_invariant(self):
        scene = anechoic_scene()
        a = sim.render_panorama_view(scene, sim.Pose(1.0, 1.0, 42.0))
        b = sim.render_panorama_view(scene, sim.Pose(4.0, 6.0, 42.0))
        assert np.array_equal(a, b)

    def test_adjacent_windows(self):
        scene = anechoic_scene(seed=2)
        a = sim.render_panorama_view(scene, sim.Pose(1, 1, 0.0))
        b = sim.render_panorama_view(scene, sim.Pose(1, 1, 60.0))
        # sample spacing is 60/64 deg; the two windows tile 120 deg contiguously
        merged_angles_last_a = 0.0 - 30 + (63 + 0.5) * 60 / 64
        merged_angles_first_b = 60.0 - 30 + 0.5 * 60 / 64
        assert merged_angles_first_b - merged_angles_last_a == pytest.approx(60 / 64)
        direct = sim.render_panorama_view(scene, sim.Pose(1, 1, 30.0))
        assert np.allclose(np.concatenate([a[32:], b[:32]]), direct, atol=1e-6)

    def test_strip_correlation_tracks_rotation(self):
        scene = anechoic_scene(seed=3)
        a = sim.render_panorama_view(scene, sim.Pose(1, 1, 0.0))
        b = sim.render_panorama_view(scene, sim.Pose(1, 1, 30.0))
        # brute-force shift search against fractionally shifted windows
        best, best_err = None, np.inf
        for k in range(-48, 49):
            shifted = sim.render_panorama_view(scene, sim.Pose(1, 1, k * 60.0 / 64))
            err = np.sum((shifted - b) ** 2)
            if err < best_err:
                best, best_err = k, err
        assert best == 32  # 30 deg = 32 strip samples


class TestRt60:
    def test_anechoic_zero(self):
        scene = anechoic_scene(beta=0.0)
        assert sim.estimate_rt60(scene).seconds == 0.0

    def test_monotone_in_beta(self):
        values = []
        for beta in (0.3, 0.5, 0.7):
            scene = anechoic_scene(src_xz=(2.0, 3.0), beta=beta, order=3, seed=4)
            values.append(sim.estimate_rt60(scene).seconds)
        assert values[0] < values[1] < values[2]

    def test_monotone_in_room_size(self):
        small = anechoic_scene(src_xz=(2.0, 3.0), room=(5.0, 5.0), beta=0.6, seed=5)
        big = anechoic_scene(src_xz=(4.0, 6.0), room=(10.0, 10.0), beta=0.6, seed=5)
        assert sim.estimate_rt60(big).seconds > sim.estimate_rt60(small).seconds


class TestDataset:
    def test_generate_counts_and_files(self, tmp_path):
        cfg = sim.SimConfig(scenes=10, seed=7, clip_seconds=0.6)
        manifest = sim.generate_dataset(cfg, tmp_path)
        assert len(manifest["entries"]) == 10
        loaded = sim.load_manifest(tmp_path)
        n_views = sum(len(e["views"]) for e in loaded["entries"])
        assert n_views == 40
        clip, strip = sim.load_view(loaded, loaded["entries"][0], loaded["entries"][0]["views"][0])
        assert strip.shape == (64,)
        assert clip.left.shape[0] == int(0.6 * 16000)

    def test_pairwise_rotations_in_range(self, tmp_path):
        cfg = sim.SimConfig(scenes=6, seed=11, clip_seconds=0.6)
        manifest = sim.generate_dataset(cfg, tmp_path)
        for entry in manifest["entries"]:
            for vs, vt in sim.view_pairs(entry):
                rot = abs(sim.rotation_deg(vs, vt))
                assert 10.0 <= rot <= 90.0

    def test_eval_split_front_hemisphere(self, tmp_path):
        cfg = sim.SimConfig(scenes=20, seed=13, clip_seconds=0.6)
        manifest = sim.generate_dataset(cfg, tmp_path)
        eval_entries = [e for e in manifest["entries"] if e["split"] == "eval"]
        assert eval_entries
        for entry in eval_entries:
            for view in entry["views"]:
                assert abs(view["azimuths_deg"][0]) < 90.0

    def test_splits_scene_disjoint(self, tmp_path):
        cfg = sim.SimConfig(scenes=10, seed=3, clip_seconds=0.6)
        manifest = sim.generate_dataset(cfg, tmp_path)
        seen = {}
        for entry in manifest["entries"]:
            assert entry["scene"] not in seen
            seen[entry["scene"]] = entry["split"]
        assert set(seen.values()) == {"train", "val", "eval"}

    def test_byte_identical_regeneration(self, tmp_path):
        cfg = sim.SimConfig(scenes=4, seed=21, clip_seconds=0.6)
        sim.generate_dataset(cfg, tmp_path / "a")
        sim.generate_dataset(cfg, tmp_path / "b", threads=2)
        man_a = (tmp_path / "a" / "manifest.json").read_bytes()
        man_b = (tmp_path / "b" / "manifest.json").read_bytes()
        assert man_a == man_b
        for rel in json.loads(man_a)["entries"][0]["views"]:
            assert (tmp_path / "a" / rel["wav"]).read_bytes() == (tmp_path / "b" / rel["wav"]).read_bytes()
            assert (tmp_path / "a" / rel["strip"]).read_bytes() == (tmp_path / "b" / rel["strip"]).read_bytes()

    def test_ground_truth_consistency(self, tmp_path):
        cfg = sim.SimConfig(scenes=4, seed=17, clip_seconds=0.6)
        manifest = sim.generate_dataset(cfg, tmp_path)
        for entry in manifest["entries"]:
            for vs, vt in sim.view_pairs(entry):
                phi = sim.rotation_deg(vs, vt)
                diff = sim.wrap_degrees(vs["azimuths_deg"][0] - vt["azimuths_deg"][0])
                assert diff == pytest.approx(phi, abs=1e-4)

    def test_two_source_dominance(self, tmp_path):
        cfg = sim.SimConfig(scenes=3, seed=9, sources=2, clip_seconds=0.6)
        manifest = sim.generate_dataset(cfg, tmp_path)
        for entry in manifest["entries"]:
            gains = entry["source_gains_db"]
            assert len(gains) == 2 and gains[0] - gains[1] >= 6.0

    def test_translation_radius(self, tmp_path):
        cfg = sim.SimConfig(scenes=3, seed=19, translation_radius=0.5, clip_seconds=0.6)
        manifest = sim.generate_dataset(cfg, tmp_path)
        for entry in manifest["entries"]:
            pts = np.array([[v["pose"]["x"], v["pose"]["z"]] for v in entry["views"]])
            dists = np.linalg.norm(pts[:, None] - pts[None, :], axis=-1)
            assert dists.max() <= 2 * 0.5 + 1e-6
            assert dists.max() > 0.0
