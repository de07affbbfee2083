"""
骨架数据测试：读写、切窗、合成、污染
"""
import json

import numpy as np
import pytest

from src.core.config import SynthConfig
from src.core.exceptions import ArgumentError, ArtifactIOError, DataError, ParseError, SchemaError
from src.motion.skeleton_data import (
    PoseSequence,
    SamplePair,
    corrupt_samples,
    load_sequence,
    remove_root_translation,
    save_sequence,
    synth_clean,
    synth_generate,
    window_split,
)


def _write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def _ramp(frames: int, joints: int = 1) -> PoseSequence:
    coords = np.arange(frames * joints * 3, dtype=float).reshape(frames, joints, 3)
    return PoseSequence(coords)


class TestLoadSequence:
    def test_csv_direct_transcription(self, tmp_path):
        path = _write(tmp_path, "a.csv", "0,0.0,1.0,2.0\n1,3.0,4.0,5.0")
        seq = load_sequence(path)
        assert (seq.frames, seq.joints) == (2, 1)
        np.testing.assert_array_equal(seq.coords, [[[0, 1, 2]], [[3, 4, 5]]])

    def test_csv_header_and_blank_lines_are_skipped(self, tmp_path):
        path = _write(tmp_path, "a.csv", "frame,x0,y0,z0\n\n0,1,2,3\n\n1,4,5,6\n")
        assert load_sequence(path).frames == 2

    def test_empty_file_is_parse_error(self, tmp_path):
        with pytest.raises(ParseError) as info:
            load_sequence(_write(tmp_path, "empty.csv", ""))
        assert info.value.line == 0

    def test_two_coordinate_fields_is_schema_error(self, tmp_path):
        with pytest.raises(SchemaError):
            load_sequence(_write(tmp_path, "bad.csv", "0,1.0,2.0\n"))

    def test_inconsistent_joint_count_is_schema_error(self, tmp_path):
        with pytest.raises(SchemaError) as info:
            load_sequence(_write(tmp_path, "bad.csv", "0,1,2,3\n1,1,2,3,4,5,6\n"))
        assert info.value.context["line"] == 2

    def test_malformed_number_names_the_line(self, tmp_path):
        with pytest.raises(ParseError) as info:
            load_sequence(_write(tmp_path, "bad.csv", "0,1,2,3\n1,1,abc,3\n"))
        assert info.value.line == 2
        assert info.value.to_dict()["context"]["line"] == 2

    def test_non_finite_value_is_data_error(self, tmp_path):
        with pytest.raises(DataError):
            load_sequence(_write(tmp_path, "bad.csv", "0,1,nan,3\n"))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ArtifactIOError):
            load_sequence(tmp_path / "missing.csv")

    def test_jsonl(self, tmp_path):
        lines = [json.dumps({"t": t, "joints": [[t, 1.0, 2.0], [3.0, 4.0, 5.0]]}) for t in range(3)]
        seq = load_sequence(_write(tmp_path, "a.jsonl", "\n".join(lines) + "\n"), "jsonl")
        assert (seq.frames, seq.joints) == (3, 2)
        assert seq.coords[2, 0, 0] == 2.0

    def test_jsonl_malformed_record(self, tmp_path):
        with pytest.raises(ParseError) as info:
            load_sequence(_write(tmp_path, "a.jsonl", '{"t": 0, "joints": [[1,2,3]]}\n{"t": 1}\n'), "jsonl")
        assert info.value.line == 2

    def test_jsonl_joint_with_two_coordinates(self, tmp_path):
        with pytest.raises(SchemaError):
            load_sequence(_write(tmp_path, "a.jsonl", '{"t": 0, "joints": [[1,2]]}\n'), "jsonl")

    def test_save_then_load_within_declared_precision(self, tmp_path):
        rng = np.random.default_rng(0)
        seq = PoseSequence(rng.normal(0, 300, size=(5, 3, 3)))
        loaded = load_sequence(save_sequence(seq, tmp_path / "out.csv"))
        np.testing.assert_allclose(loaded.coords, seq.coords, atol=1e-6)


class TestPoseSequence:
    def test_coords_are_read_only(self):
        seq = _ramp(3)
        with pytest.raises(ValueError):
            seq.coords[0, 0, 0] = 1.0

    def test_rejects_non_finite(self):
        with pytest.raises(DataError):
            PoseSequence(np.full((1, 1, 3), np.inf))

    def test_pair_requires_equal_joint_count(self):
        with pytest.raises(SchemaError):
            SamplePair(observed=_ramp(2, joints=1), future=_ramp(2, joints=2))


class TestWindowSplit:
    def test_stride_two(self):
        pairs = window_split(_ramp(10), 4, 6, stride=2)
        assert [p.start_frame for p in pairs] == [0, 2, 4]

    def test_exact_fit(self):
        assert len(window_split(_ramp(6), 4, 6)) == 1

    def test_too_short_is_empty(self):
        assert window_split(_ramp(5), 4, 6) == []

    @pytest.mark.parametrize("T,T_f,stride", [(0, 3, 1), (4, 4, 1), (4, 6, 0)])
    def test_invalid_arguments(self, T, T_f, stride):
        with pytest.raises(ArgumentError):
            window_split(_ramp(10), T, T_f, stride)

    def test_pairs_tile_the_source(self):
        seq = _ramp(23, joints=2)
        pairs = window_split(seq, 5, 8, stride=3)
        assert len(pairs) == (23 - 8) // 3 + 1
        for i, pair in enumerate(pairs):
            joined = np.concatenate([pair.observed.coords, pair.future.coords])
            np.testing.assert_array_equal(joined, seq.coords[i * 3:i * 3 + 8])

    def test_remove_root_translation(self):
        pair = window_split(_ramp(6, joints=2), 4, 6)[0]
        centred = remove_root_translation(pair)
        np.testing.assert_array_equal(centred.observed.coords[0, 0], [0.0, 0.0, 0.0])
        offset = pair.observed.coords[0, 0]
        np.testing.assert_array_equal(centred.future.coords, pair.future.coords - offset)


class TestSynth:
    def test_zero_noise_is_the_sinusoid(self):
        cfg = SynthConfig()
        np.testing.assert_array_equal(synth_generate(cfg).coords, synth_clean(cfg))

    def test_sinusoid_formula(self):
        cfg = SynthConfig(joints=1, duration_frames=5, base_frequencies=[1.0], amplitude_mm=[10.0])
        coords = synth_generate(cfg).coords
        # 相位：x 轴 0，关节 0
        expected = 10.0 * np.sin(2 * np.pi * 1.0 * np.arange(5) * 0.04)
        np.testing.assert_allclose(coords[:, 0, 0], expected, atol=1e-12)

    def test_same_seed_bit_identical(self):
        cfg = SynthConfig(noise_floor_mm=2.0, noise_growth_per_frame=0.5, seed=4)
        assert np.array_equal(synth_generate(cfg).coords, synth_generate(cfg).coords)

    def test_noise_grows_with_frame(self):
        cfg = SynthConfig(
            joints=1000,
            duration_frames=30,
            base_frequencies=[0.5] * 1000,
            amplitude_mm=[50.0] * 1000,
            noise_floor_mm=1.0,
            noise_growth_per_frame=0.5,
            seed=1,
        )
        deviation = np.abs(synth_generate(cfg).coords - synth_clean(cfg)).mean(axis=(1, 2))
        slope = np.polyfit(np.arange(cfg.duration_frames), deviation, 1)[0]
        assert slope > 0


class TestCorruptSamples:
    @pytest.fixture
    def pairs(self):
        return window_split(_ramp(15), 2, 6, stride=1)

    def test_fraction_zero_is_identity(self, pairs):
        out = corrupt_samples(pairs, 0.0, 50.0, seed=1)
        assert all(a is b for a, b in zip(out, pairs))
        assert not any(p.corrupted for p in out)

    def test_zero_noise_flags_everything(self, pairs):
        out = corrupt_samples(pairs, 1.0, 0.0, seed=1)
        assert all(p.corrupted for p in out)
        for a, b in zip(out, pairs):
            np.testing.assert_array_equal(a.future.coords, b.future.coords)

    def test_floor_count(self, pairs):
        out = corrupt_samples(pairs[:10], 0.3, 10.0, seed=2)
        assert sum(p.corrupted for p in out) == 3

    @pytest.mark.parametrize("fraction, n, expected", [(0.57, 100, 57), (0.29, 100, 29), (0.7, 10, 7), (0.25, 7, 1)])
    def test_floor_count_uses_decimal_fraction(self, fraction, n, expected):
        pairs = window_split(_ramp(n + 5), 2, 6, stride=1)[:n]
        assert len(pairs) == n
        out = corrupt_samples(pairs, fraction, 1.0, seed=0)
        assert sum(p.corrupted for p in out) == expected

    def test_only_future_frames_change(self, pairs):
        out = corrupt_samples(pairs, 0.5, 10.0, seed=3)
        for a, b in zip(out, pairs):
            np.testing.assert_array_equal(a.observed.coords, b.observed.coords)
            assert a.corrupted == (not np.array_equal(a.future.coords, b.future.coords))

    def test_deterministic_under_seed(self, pairs):
        a = corrupt_samples(pairs, 0.5, 10.0, seed=9)
        b = corrupt_samples(pairs, 0.5, 10.0, seed=9)
        for x, y in zip(a, b):
            assert np.array_equal(x.future.coords, y.future.coords)

    def test_invalid_fraction(self, pairs):
        with pytest.raises(ArgumentError):
            corrupt_samples(pairs, 1.5, 1.0, seed=0)
