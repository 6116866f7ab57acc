import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from smie.data import (ClassSplit, DataError, Dataset, SkeletonSequence, SynthConfig, drop_invalid_frames,
                       generate_synthetic, l2_normalize, load_manifest, make_splits, read_embedding,
                       read_skeleton, read_split, resample_time, write_embedding, write_skeleton, write_split)


def seq(values):
    return SkeletonSequence(np.asarray(values, dtype=np.float64))


# -- binary formats ---------------------------------------------------------

def test_skeleton_layout_is_byte_exact(tmp_path):
    s = seq(np.arange(6.0).reshape(2, 1, 3))
    write_skeleton(tmp_path / "a.smsk", s)
    raw = (tmp_path / "a.smsk").read_bytes()
    assert raw[:4] == bytes([0x53, 0x4D, 0x53, 0x4B])
    assert struct.unpack("<IIII", raw[4:20]) == (1, 2, 1, 3)
    assert np.array_equal(np.frombuffer(raw[20:], "<f4"), np.arange(6.0, dtype=np.float32))
    back = read_skeleton(tmp_path / "a.smsk")
    assert back.values.shape == (2, 1, 3)
    assert np.array_equal(back.values, s.values)


def test_skeleton_truncated(tmp_path):
    write_skeleton(tmp_path / "a.smsk", seq(np.ones((2, 1, 3))))
    raw = (tmp_path / "a.smsk").read_bytes()
    (tmp_path / "b.smsk").write_bytes(raw[:-4])
    with pytest.raises(DataError, match="truncated"):
        read_skeleton(tmp_path / "b.smsk")


def test_skeleton_bad_magic(tmp_path):
    (tmp_path / "a.smsk").write_bytes(b"XXXX" + bytes(16))
    with pytest.raises(DataError, match="magic"):
        read_skeleton(tmp_path / "a.smsk")


def test_skeleton_rejects_non_finite(tmp_path):
    raw = b"SMSK" + struct.pack("<IIII", 1, 1, 1, 2) + np.array([1.0, np.nan], "<f4").tobytes()
    (tmp_path / "a.smsk").write_bytes(raw)
    with pytest.raises(DataError, match="non-finite"):
        read_skeleton(tmp_path / "a.smsk")


finite32 = st.floats(-1e6, 1e6, width=32, allow_nan=False)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float32, st.tuples(st.integers(1, 5), st.integers(1, 4), st.integers(1, 3)), elements=finite32))
def test_skeleton_round_trip_bit_exact(tmp_path_factory, values):
    path = tmp_path_factory.mktemp("rt") / "x.smsk"
    write_skeleton(path, SkeletonSequence(values.astype(np.float64)))
    back = read_skeleton(path).values
    assert back.astype(np.float32).tobytes() == values.tobytes()


@settings(max_examples=50, deadline=None)
@given(arrays(np.float32, st.integers(1, 40), elements=finite32))
def test_embedding_round_trip_bit_exact(tmp_path_factory, values):
    path = tmp_path_factory.mktemp("rt") / "x.smem"
    write_embedding(path, values)
    raw = path.read_bytes()
    assert raw[:4] == bytes([0x53, 0x4D, 0x45, 0x4D])
    assert struct.unpack("<II", raw[4:12]) == (1, values.size)
    assert read_embedding(path).astype(np.float32).tobytes() == values.tobytes()


# -- manifest -------------------------------------------------------------

def _write_dataset(root, classes, samples):
    for c in classes:
        write_embedding(root / c["embedding"], np.ones(3))
    for s in samples:
        write_skeleton(root / s["skeleton"], seq(np.ones((2, 1, 3))))
    (root / "manifest.json").write_text(json.dumps({"classes": classes, "samples": samples}))


def test_manifest_two_classes_four_samples(tmp_path):
    classes = [{"id": i, "name": f"c{i}", "embedding": f"e{i}.smem"} for i in range(2)]
    samples = [{"id": i, "class_id": i % 2, "skeleton": f"s{i}.smsk"} for i in range(4)]
    _write_dataset(tmp_path, classes, samples)
    m = load_manifest(tmp_path / "manifest.json")
    assert len(m.classes) == 2 and len(m.samples) == 4
    assert m.to_json() == {"classes": classes, "samples": samples}


def test_manifest_dangling_class(tmp_path):
    classes = [{"id": 0, "name": "c0", "embedding": "e0.smem"}]
    samples = [{"id": 5, "class_id": 9, "skeleton": "s5.smsk"}]
    _write_dataset(tmp_path, classes, samples)
    with pytest.raises(DataError, match="sample 5"):
        load_manifest(tmp_path)


def test_manifest_duplicate_class(tmp_path):
    classes = [{"id": 1, "name": "a", "embedding": "e.smem"}, {"id": 1, "name": "b", "embedding": "e.smem"}]
    _write_dataset(tmp_path, classes, [])
    with pytest.raises(DataError, match="duplicate class_id 1"):
        load_manifest(tmp_path)


def test_manifest_no_classes(tmp_path):
    (tmp_path / "manifest.json").write_text(json.dumps({"classes": [], "samples": []}))
    with pytest.raises(DataError, match="no classes"):
        load_manifest(tmp_path)


def test_manifest_missing_file(tmp_path):
    with pytest.raises(DataError, match="not found"):
        load_manifest(tmp_path / "nope.json")
    classes = [{"id": 0, "name": "c0", "embedding": "e0.smem"}]
    (tmp_path / "manifest.json").write_text(json.dumps({"classes": classes, "samples": []}))
    with pytest.raises(DataError, match="class 0"):
        load_manifest(tmp_path)


# -- preprocessing ----------------------------------------------------------

def test_l2_normalize():
    np.testing.assert_allclose(l2_normalize([3.0, 4.0]).vector, [0.6, 0.8], atol=1e-15)
    unit = np.array([0.0, 1.0, 0.0])
    assert np.array_equal(l2_normalize(unit).vector, unit)
    with pytest.raises(DataError):
        l2_normalize([0.0, 0.0])


@given(arrays(np.float64, st.integers(1, 50), elements=st.floats(-1e3, 1e3)).filter(lambda v: np.any(np.abs(v) > 1e-3)))
def test_l2_normalize_unit_norm(v):
    assert abs(np.linalg.norm(l2_normalize(v).vector) - 1.0) < 1e-6


def test_drop_invalid_frames():
    x = np.array([1.0, 0.0, 2.0]).reshape(3, 1, 1)
    assert drop_invalid_frames(seq(x)).values.ravel().tolist() == [1.0, 2.0]
    y = seq(np.arange(1.0, 7.0).reshape(3, 2, 1))
    assert np.array_equal(drop_invalid_frames(y).values, y.values)
    with pytest.raises(DataError):
        drop_invalid_frames(seq(np.zeros((3, 2, 1))))


@given(arrays(np.float64, st.tuples(st.integers(1, 8), st.integers(1, 3), st.integers(1, 2)),
              elements=st.sampled_from([0.0, 0.0, 1.0, -2.5])).filter(lambda v: np.any(v != 0)))
def test_drop_invalid_frames_idempotent(values):
    once = drop_invalid_frames(seq(values))
    assert np.array_equal(drop_invalid_frames(once).values, once.values)


def test_resample_examples():
    up = resample_time(seq(np.array([0.0, 2.0]).reshape(2, 1, 1)), 3)
    assert up.values.ravel().tolist() == [0.0, 1.0, 2.0]
    x = seq(np.random.default_rng(0).normal(size=(7, 2, 3)))
    assert np.array_equal(resample_time(x, 7).values, x.values)
    rep = resample_time(seq(np.array([5.0]).reshape(1, 1, 1)), 4)
    assert rep.values.ravel().tolist() == [5.0] * 4


@settings(max_examples=60)
@given(arrays(np.float64, st.tuples(st.integers(2, 12), st.integers(1, 3), st.integers(1, 2)),
              elements=st.floats(-100, 100)),
       st.integers(2, 60))
def test_resample_matches_np_interp_and_stays_bracketed(values, k_target):
    out = resample_time(seq(values), k_target).values
    K = values.shape[0]
    pos = np.linspace(0.0, K - 1, k_target)
    for j in range(values.shape[1]):
        for c in range(values.shape[2]):
            ref = np.interp(pos, np.arange(K), values[:, j, c])
            np.testing.assert_allclose(out[:, j, c], ref, rtol=1e-12, atol=1e-9)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, K - 1)
    lower = np.minimum(values[lo], values[hi]) - 1e-9
    upper = np.maximum(values[lo], values[hi]) + 1e-9
    assert np.all((out >= lower) & (out <= upper))
    assert np.array_equal(out[0], values[0]) and np.allclose(out[-1], values[-1], atol=1e-12)


# -- splits -----------------------------------------------------------------

def test_make_splits(small_dataset, tmp_path):
    manifest = small_dataset[0].manifest
    splits = make_splits(manifest, n_unseen=1, n_folds=3, seed=5)
    assert len(splits) == 3
    for s in splits:
        assert len(s.unseen) == 1 and len(s.seen) == 3 and not (s.seen & s.unseen)
    assert splits == make_splits(manifest, 1, 3, 5)
    with pytest.raises(DataError):
        make_splits(manifest, 4, 1, 0)
    write_split(tmp_path / "s.json", splits[0])
    assert read_split(tmp_path / "s.json") == splits[0]
    assert json.loads((tmp_path / "s.json").read_text()) == splits[0].to_json()


def test_make_splits_ten_classes(tmp_path):
    manifest, _ = generate_synthetic(SynthConfig(n_classes=10, n_seen=7, samples_per_class_train=1,
                                                 samples_per_class_test=1, K=4, J=1, C=1, D_s=4), tmp_path)
    splits = make_splits(manifest, 3, 3, seed=0)
    assert [(len(s.seen), len(s.unseen)) for s in splits] == [(7, 3)] * 3
    with pytest.raises(DataError):
        make_splits(manifest, 10, 3, 0)


def test_split_invariants():
    with pytest.raises(DataError):
        ClassSplit({1, 2}, {2})
    with pytest.raises(DataError):
        ClassSplit(set(), {2})


# -- synthetic data ----------------------------------------------------------

def test_default_synth_structure(tmp_path):
    cfg = SynthConfig(samples_per_class_train=2, samples_per_class_test=1)
    manifest, split = generate_synthetic(cfg, tmp_path)
    assert len(manifest.classes) == 10
    assert (len(split.seen), len(split.unseen)) == (7, 3)
    reloaded = Dataset.load(tmp_path)
    assert len(reloaded.manifest.samples) == 30
    assert reloaded.sequence(0).values.shape == (50, 8, 3)
    assert read_split(tmp_path / "split.json") == split
    for c in manifest.class_ids:
        assert abs(np.linalg.norm(reloaded.embedding(c)) - 1) < 1e-6


def test_synth_noiseless_samples_identical(tmp_path):
    cfg = SynthConfig(n_classes=3, n_seen=2, samples_per_class_train=2, samples_per_class_test=1,
                      K=10, J=2, C=3, D_s=6, noise_sigma=0.0)
    generate_synthetic(cfg, tmp_path)
    ds = Dataset.load(tmp_path)
    first = ds.samples([0])
    raw = [(tmp_path / s.skeleton).read_bytes() for s in first]
    assert raw[0] == raw[1] == raw[2]


def test_synth_deterministic(tmp_path):
    cfg = SynthConfig(n_classes=3, n_seen=2, samples_per_class_train=2, samples_per_class_test=1,
                      K=10, J=2, C=3, D_s=6, seed=9)
    generate_synthetic(cfg, tmp_path / "a")
    generate_synthetic(cfg, tmp_path / "b")
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*") if p.is_file())
    assert files
    for rel in files:
        assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()


def test_synth_config_validation(tmp_path):
    with pytest.raises(DataError):
        generate_synthetic(SynthConfig(n_classes=3, n_seen=3), tmp_path)
    with pytest.raises(DataError):
        generate_synthetic(SynthConfig(noise_sigma=-1.0), tmp_path)


def test_dataset_subsets(small_dataset):
    ds, split = small_dataset
    train = ds.samples(split.seen, subset="train")
    test = ds.samples(split.unseen, subset="test")
    assert len(train) == 3 * 6 and len(test) == 1 * 3
    assert all(s.subset == "train" for s in train)
