import numpy as np
import pytest
from numpy.testing import assert_array_equal

from data import (AVPair, BatchingError, Dataset, GenerationError, LoadError, load_dataset,
                  load_features, load_labels, make_batches, save_dataset, split_indices,
                  stratified_split, synth_generate, write_avf, write_avl)
from engine import ContractViolation


# ---------- file formats ----------
def test_avf_golden_bytes(tmp_path, fixtures):
    out = write_avf(tmp_path / "x.avf", [[1, 2, 3], [4, 5, 6]], dtype="float32")
    assert out.read_bytes() == (fixtures / "golden.avf").read_bytes()


def test_avl_golden_bytes(tmp_path, fixtures):
    out = write_avl(tmp_path / "y.avl", [[1, 0, 0], [0, 1, 1]])
    assert out.read_bytes() == (fixtures / "golden.avl").read_bytes()


def test_load_features_avf_and_csv(fixtures):
    values = load_features(fixtures / "golden.avf", expected_dim=3)
    assert_array_equal(values, [[1, 2, 3], [4, 5, 6]])
    assert_array_equal(load_features(fixtures / "features.csv", expected_dim=2), [[1, 2], [3, 4]])
    assert_array_equal(load_labels(fixtures / "golden.avl"), [[1, 0, 0], [0, 1, 1]])


def test_avf_dimension_mismatch(fixtures):
    with pytest.raises(LoadError, match="dimension mismatch"):
        load_features(fixtures / "golden.avf", expected_dim=64)


def test_avf_corrupted_magic_and_truncated_payload(tmp_path, fixtures):
    raw = (fixtures / "golden.avf").read_bytes()
    bad = tmp_path / "bad.avf"
    bad.write_bytes(b"AVF2" + raw[4:])
    with pytest.raises(LoadError, match="magic"):
        load_features(bad)
    bad.write_bytes(raw[:-4])
    with pytest.raises(LoadError, match="row 1"):
        load_features(bad)


def test_avl_rejects_bad_entries(tmp_path, fixtures):
    raw = bytearray((fixtures / "golden.avl").read_bytes())
    raw[-1] = 2
    bad = tmp_path / "bad.avl"
    bad.write_bytes(bytes(raw))
    with pytest.raises(LoadError, match="row 1"):
        load_labels(bad)


def test_csv_non_finite_value_reports_row(tmp_path):
    path = tmp_path / "f.csv"
    path.write_text("1.0,2.0\n3.0,nan\n")
    with pytest.raises(LoadError, match="row 1"):
        load_features(path)


def test_avf_round_trip_float64(tmp_path, rng):
    values = rng.normal(size=(7, 5))
    write_avf(tmp_path / "r.avf", values, dtype="float64")
    assert_array_equal(load_features(tmp_path / "r.avf"), values)


def test_avf_round_trip_float32_is_exact_at_stored_precision(tmp_path, rng):
    values = rng.normal(size=(4, 3))
    write_avf(tmp_path / "r.avf", values)
    assert_array_equal(load_features(tmp_path / "r.avf"), values.astype(np.float32).astype(np.float64))


# ---------- types ----------
def test_avpair_label_contract():
    AVPair(np.zeros(2), np.zeros(3), np.array([0, 1]))
    with pytest.raises(ContractViolation):
        AVPair(np.zeros(2), np.zeros(3), np.array([0, 0]))
    with pytest.raises(ContractViolation):
        AVPair(np.zeros(2), np.zeros(3), np.array([0, 2]))


def test_dataset_is_read_only_and_aligned(small_dataset):
    assert len(small_dataset) == 18
    pair = small_dataset[4]
    assert_array_equal(pair.audio, small_dataset.audio[4])
    assert_array_equal(pair.visual, small_dataset.visual[4])
    assert_array_equal(pair.label, small_dataset.labels[4])
    with pytest.raises(ValueError):
        small_dataset.audio[0, 0] = 1.0
    with pytest.raises(ContractViolation):
        Dataset(np.zeros((2, 3)), np.zeros((3, 3)), np.eye(2))


# ---------- synthetic generation ----------
def test_zero_noise_samples_sit_on_their_centroid():
    ds = synth_generate(3, 4, audio_dim=6, visual_dim=8, noise_sigma=0.0, seed=2)
    for cls in range(3):
        rows = np.flatnonzero(ds.labels[:, cls])
        assert np.all(ds.audio[rows] == ds.audio[rows[0]])
        assert np.all(ds.visual[rows] == ds.visual[rows[0]])


def test_synth_is_deterministic():
    a = synth_generate(3, 5, audio_dim=4, visual_dim=6, seed=9)
    b = synth_generate(3, 5, audio_dim=4, visual_dim=6, seed=9)
    assert_array_equal(a.audio, b.audio)
    assert_array_equal(a.visual, b.visual)
    assert_array_equal(a.labels, b.labels)


def test_synth_labels_one_hot_and_paired():
    ds = synth_generate(4, 3, audio_dim=4, visual_dim=6, seed=1)
    assert_array_equal(ds.labels.sum(axis=1), 1)
    assert_array_equal(np.argmax(ds.labels, axis=1), np.repeat(np.arange(4), 3))


def test_well_separated_classes_are_closer_within_class():
    ds = synth_generate(3, 50, audio_dim=16, visual_dim=32, class_separation=10.0,
                        noise_sigma=1.0, seed=4)
    cls = np.argmax(ds.labels, axis=1)
    for feats in (ds.audio, ds.visual):
        unit = feats / np.linalg.norm(feats, axis=1, keepdims=True)
        sims = unit @ unit.T
        same = cls[:, None] == cls[None, :]
        np.fill_diagonal(same, False)
        diff = cls[:, None] != cls[None, :]
        for i in range(len(ds)):
            assert sims[i][same[i]].min() > sims[i][diff[i]].max()


def test_synth_single_class_warns(caplog):
    with caplog.at_level("WARNING"):
        ds = synth_generate(1, 3, audio_dim=2, visual_dim=2, seed=0)
    assert len(ds) == 3
    assert "inert" in caplog.text


def test_synth_rejects_bad_parameters():
    with pytest.raises(GenerationError):
        synth_generate(0, 3)
    with pytest.raises(GenerationError):
        synth_generate(2, 3, noise_sigma=-1.0)


def test_centroid_placement_gives_up():
    # 200 centroids at separation 10 drawn from N(0, 10) in one dimension cannot all fit
    with pytest.raises(GenerationError, match="centroid"):
        synth_generate(200, 1, audio_dim=1, visual_dim=1, class_separation=10.0, seed=0)


def test_stratified_split_covers_every_class(small_dataset):
    train, test = stratified_split(small_dataset, 0.5, seed=1)
    assert len(train) + len(test) == len(small_dataset)
    for part in (train, test):
        assert_array_equal(part.labels.sum(axis=0), 3)


def test_split_indices_are_disjoint_and_seeded(small_dataset):
    a_train, a_test = split_indices(small_dataset.labels, 0.8, 7)
    b_train, b_test = split_indices(small_dataset.labels, 0.8, 7)
    assert_array_equal(a_train, b_train)
    assert not set(a_train) & set(a_test)
    assert sorted(set(a_train) | set(a_test)) == list(range(len(small_dataset)))


def test_dataset_directory_round_trip(tmp_path, small_dataset):
    train_idx, test_idx = split_indices(small_dataset.labels, 0.5, 0)
    save_dataset(tmp_path, small_dataset, train_idx, test_idx, dtype="float64")
    train, test = load_dataset(tmp_path)
    assert_array_equal(train.audio, small_dataset.audio[train_idx])
    assert_array_equal(test.visual, small_dataset.visual[test_idx])
    assert_array_equal(test.labels, small_dataset.labels[test_idx])


def test_missing_dataset_directory():
    with pytest.raises(LoadError):
        load_dataset("does/not/exist")


# ---------- batching ----------
def test_batches_partition_the_index_set():
    batches = make_batches(4, 2, seed=0, epoch=0)
    assert [len(b) for b in batches] == [2, 2]
    assert sorted(np.concatenate(batches).tolist()) == [0, 1, 2, 3]


def test_short_batch_is_merged():
    batches = make_batches(5, 2, seed=0, epoch=0)
    assert [len(b) for b in batches] == [2, 3]
    assert sorted(np.concatenate(batches).tolist()) == list(range(5))


def test_batches_are_seeded_by_seed_and_epoch():
    a = make_batches(30, 4, seed=7, epoch=3)
    b = make_batches(30, 4, seed=7, epoch=3)
    c = make_batches(30, 4, seed=7, epoch=4)
    assert all(np.array_equal(x, y) for x, y in zip(a, b))
    assert not all(np.array_equal(x, y) for x, y in zip(a, c))


def test_batching_errors():
    with pytest.raises(BatchingError):
        make_batches(1, 2, seed=0, epoch=0)
    with pytest.raises(BatchingError):
        make_batches(10, 1, seed=0, epoch=0)
