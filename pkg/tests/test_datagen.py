import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stagegaze.datagen import (FORMAT_VERSION, PITCH_BOUND, YAW_BOUND, DataError, DataGenConfig, DistractorSpec,
                               FaceLayout, VideoSequence, decode_gaze_from_pixels, generate_dataset,
                               generate_sequence, load_dataset, read_manifest, write_dataset)

HEAVY = DistractorSpec(background_motion=1.5, expression_flicker=0.8, illumination_drift=0.05)


def test_same_inputs_give_bit_identical_sequences():
    a = generate_sequence(12, (32, 32), HEAVY, (0.05, -0.1), seed=4)
    b = generate_sequence(12, (32, 32), HEAVY, (0.05, -0.1), seed=4)
    assert np.array_equal(a.frames, b.frames) and np.array_equal(a.gaze, b.gaze) and np.array_equal(a.pog, b.pog)
    c = generate_sequence(12, (32, 32), HEAVY, (0.05, -0.1), seed=5)
    assert not np.array_equal(a.gaze, c.gaze)


def test_pixels_decode_to_labels():
    seq = generate_sequence(30, (64, 64), seed=11)
    err = np.abs(decode_gaze_from_pixels(seq.frames) - seq.gaze)
    assert err.max() < 0.02


def test_person_bias_shifts_the_rendering_not_the_labels():
    plain = generate_sequence(30, (64, 64), seed=3)
    biased = generate_sequence(30, (64, 64), person_bias=(0.1, 0.0), seed=3)
    assert np.array_equal(plain.gaze, biased.gaze)
    diff = decode_gaze_from_pixels(biased.frames) - biased.gaze
    assert np.all(np.abs(diff - [0.1, 0.0]) < 0.02)


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**31 - 2), size=st.sampled_from([(32, 32), (48, 40), (64, 64)]))
def test_decodability_property(seed, size):
    seq = generate_sequence(8, size, seed=seed)
    assert np.all(np.abs(decode_gaze_from_pixels(seq.frames) - seq.gaze) < 0.02)


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 2**31 - 2), motion=st.floats(0.1, 3.0), flicker=st.floats(0.1, 1.0),
       drift=st.floats(0.0, 0.1))
def test_distractors_leave_eye_region_untouched(seed, motion, flicker, drift):
    off = generate_sequence(6, (64, 64), seed=seed)
    on = generate_sequence(6, (64, 64), DistractorSpec(motion, flicker, drift), seed=seed)
    eye = FaceLayout(64, 64).eye_mask()
    assert np.max(np.abs(on.frames[:, eye] - off.frames[:, eye])) < 1e-6
    assert np.array_equal(on.gaze, off.gaze)
    assert not np.array_equal(on.frames[:, ~eye], off.frames[:, ~eye])


def test_zero_amplitudes_are_distractor_free():
    spec = DistractorSpec(0.0, 0.0, 0.0, seed=9)
    assert not spec.active
    a = generate_sequence(5, (32, 32), spec, seed=1)
    b = generate_sequence(5, (32, 32), None, seed=1)
    assert np.array_equal(a.frames, b.frames)


def test_distractor_spec_rejects_bad_amplitudes():
    with pytest.raises(ValueError):
        DistractorSpec(background_motion=-1.0)
    with pytest.raises(ValueError):
        DistractorSpec(expression_flicker=float("nan"))


def test_gaze_walk_is_bounded_and_smooth():
    seq = generate_sequence(200, (32, 32), seed=2)
    assert np.all(np.abs(seq.gaze[:, 0]) <= PITCH_BOUND) and np.all(np.abs(seq.gaze[:, 1]) <= YAW_BOUND)
    step = np.abs(np.diff(seq.gaze, axis=0)).mean(0)
    spread = seq.gaze.std(0)
    assert np.all(step < spread)
    assert np.all((seq.pog >= 0) & (seq.pog <= 1))
    assert np.all((seq.frames >= 0) & (seq.frames <= 1))


def test_generator_validates_inputs():
    with pytest.raises(ValueError):
        generate_sequence(1)
    with pytest.raises(ValueError):
        generate_sequence(4, (8, 8))


def test_video_sequence_validation():
    with pytest.raises(ValueError):
        VideoSequence(np.zeros((3, 4, 4, 3)), np.zeros((2, 2)))
    with pytest.raises(ValueError):
        VideoSequence(np.zeros((2, 4, 4, 3)), np.array([[2.0, 0.0], [0.0, 0.0]]))
    with pytest.raises(ValueError):
        VideoSequence(np.zeros((2, 4, 4, 3)), np.zeros((2, 2)), pog=np.full((2, 2), 1.5))


def test_dataset_splits_and_counts():
    cfg = DataGenConfig(persons=3, sequences_per_person=2, eval_sequences_per_person=1, frames=4,
                        image_size=(32, 32), seed=1)
    pairs = generate_dataset(cfg)
    assert [split for _, split in pairs].count("train") == 6
    assert [split for _, split in pairs].count("eval") == 3
    assert len({s.seq_id for s, _ in pairs}) == 9


def test_config_round_trip_and_unknown_keys():
    cfg = DataGenConfig(persons=2, distractors=HEAVY, person_bias=(0.1, 0.0))
    assert DataGenConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg
    with pytest.raises(ValueError):
        DataGenConfig.from_dict({"persons": 2, "bogus": 1})


@pytest.fixture
def small_dataset(tmp_path):
    cfg = DataGenConfig(persons=2, sequences_per_person=1, eval_sequences_per_person=1, frames=5,
                        image_size=(32, 32), seed=2)
    pairs = generate_dataset(cfg)
    write_dataset(pairs, tmp_path, meta={"seed": 2})
    return tmp_path, pairs


def test_dataset_round_trip(small_dataset):
    root, pairs = small_dataset
    loaded = list(load_dataset(root))
    assert len(loaded) == len(pairs)
    for (orig, _), got in zip(pairs, loaded):
        assert np.array_equal(orig.frames, got.frames) and np.array_equal(orig.gaze, got.gaze)
        assert orig.person_id == got.person_id and orig.seq_id == got.seq_id
    assert [s.seq_id for s in load_dataset(root, "eval")] == [s.seq_id for s, sp in pairs if sp == "eval"]
    assert read_manifest(root).format_version == FORMAT_VERSION


def test_missing_manifest(tmp_path):
    with pytest.raises(DataError, match="manifest missing"):
        list(load_dataset(tmp_path))


def test_truncated_sequence_file_names_path(small_dataset):
    root, _ = small_dataset
    rec = read_manifest(root).records[0]
    f = root / rec.path
    f.write_bytes(f.read_bytes()[:-8])
    with pytest.raises(DataError) as exc:
        list(load_dataset(root))
    assert rec.path.split("/")[-1] in str(exc.value)


def test_bad_magic_and_version(small_dataset):
    root, _ = small_dataset
    rec = read_manifest(root).records[0]
    f = root / rec.path
    raw = bytearray(f.read_bytes())
    raw[4] = 99
    f.write_bytes(bytes(raw))
    with pytest.raises(DataError, match="version"):
        list(load_dataset(root))
    raw[:4] = b"XXXX"
    f.write_bytes(bytes(raw))
    with pytest.raises(DataError, match="magic"):
        list(load_dataset(root))


def test_manifest_version_and_count_mismatch(small_dataset):
    root, _ = small_dataset
    doc = json.loads((root / "manifest.json").read_text())
    doc["records"][0]["n"] = 99
    (root / "manifest.json").write_text(json.dumps(doc))
    with pytest.raises(DataError, match="n=99"):
        list(load_dataset(root))
    doc["format_version"] = 7
    (root / "manifest.json").write_text(json.dumps(doc))
    with pytest.raises(DataError, match="version 7"):
        list(load_dataset(root))


def test_label_mismatch_detected(small_dataset):
    root, _ = small_dataset
    rec = read_manifest(root).records[0]
    lab = root / rec.label_path
    lines = lab.read_text().splitlines()
    parts = lines[1].split(",")
    parts[1] = "0.4242"
    lines[1] = ",".join(parts)
    lab.write_text("\n".join(lines) + "\n")
    with pytest.raises(DataError, match="label file"):
        list(load_dataset(root))
