"""Synthetic domain-shift generators, label quarantine, and the CSV format."""

import numpy as np
import pytest

import cada.data as dt


def test_batch_validates_inputs():
    with pytest.raises(ValueError):
        dt.Batch(np.ones(3), None, np.zeros(3))  # 1-D features
    with pytest.raises(ValueError):
        dt.Batch(np.ones((3, 2)), None, np.zeros(2))  # domain length
    with pytest.raises(ValueError):
        dt.Batch(np.ones((3, 2)), None, np.full(3, 2))  # bad domain value
    with pytest.raises(ValueError):
        dt.Batch(np.ones((3, 2)), np.array([0, 1]), np.zeros(3))  # label length
    with pytest.raises(ValueError):
        dt.Batch(np.ones((3, 2)), np.array([0, -1, 1]), np.zeros(3))  # negative label


def test_two_moons_shapes_and_quarantine():
    ds = dt.make_two_moons(100, 0.1, 35.0, np.random.default_rng(0))
    assert ds.source.features.shape == (100, 2)
    assert ds.target.features.shape == (100, 2)
    assert ds.source.labels is not None and set(ds.source.labels) == {0, 1}
    assert ds.target.labels is None
    np.testing.assert_array_equal(ds.source.domain, 0)
    np.testing.assert_array_equal(ds.target.domain, 1)
    hidden = ds.evaluation_target_labels()
    assert hidden.shape == (100,) and set(hidden) == {0, 1}


def test_two_moons_is_pure_in_its_rng():
    a = dt.make_two_moons(50, 0.1, 35.0, np.random.default_rng(7))
    b = dt.make_two_moons(50, 0.1, 35.0, np.random.default_rng(7))
    np.testing.assert_array_equal(a.source.features, b.source.features)
    np.testing.assert_array_equal(a.target.features, b.target.features)
    np.testing.assert_array_equal(
        a.evaluation_target_labels(), b.evaluation_target_labels()
    )


def test_two_moons_rotation_only_rotates():
    # same rng: the 180-degree target must be the 0-degree target negated
    straight = dt.make_two_moons(60, 0.05, 0.0, np.random.default_rng(3))
    flipped = dt.make_two_moons(60, 0.05, 180.0, np.random.default_rng(3))
    np.testing.assert_allclose(
        flipped.target.features, -straight.target.features, atol=1e-12
    )
    np.testing.assert_array_equal(
        flipped.evaluation_target_labels(), straight.evaluation_target_labels()
    )
    np.testing.assert_array_equal(flipped.source.features, straight.source.features)


def test_two_moons_rotation_preserves_norms():
    ds0 = dt.make_two_moons(60, 0.1, 0.0, np.random.default_rng(4))
    ds1 = dt.make_two_moons(60, 0.1, 35.0, np.random.default_rng(4))
    np.testing.assert_allclose(
        np.linalg.norm(ds0.target.features, axis=1),
        np.linalg.norm(ds1.target.features, axis=1),
        atol=1e-12,
    )


def test_two_moons_validates_arguments():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        dt.make_two_moons(1, 0.1, 0.0, rng)
    with pytest.raises(ValueError):
        dt.make_two_moons(10, -0.1, 0.0, rng)


def test_shifted_blobs_zero_shift_keeps_distribution():
    ds = dt.make_shifted_blobs(90, 3, 4, np.zeros(4), 1.0, np.random.default_rng(5))
    assert ds.source.features.shape == (90, 4)
    src_norm = np.linalg.norm(ds.source.features.mean(axis=0))
    tgt_norm = np.linalg.norm(ds.target.features.mean(axis=0))
    # same cluster means, so the domain gap is only sampling noise
    assert abs(src_norm - tgt_norm) < 1.5
    counts = np.bincount(ds.evaluation_target_labels(), minlength=3)
    np.testing.assert_array_equal(counts, [30, 30, 30])


def test_shifted_blobs_shift_moves_target():
    shift = np.full(4, 10.0)
    ds = dt.make_shifted_blobs(60, 2, 4, shift, 1.0, np.random.default_rng(6))
    gap = ds.target.features.mean(axis=0) - ds.source.features.mean(axis=0)
    np.testing.assert_allclose(gap, shift, atol=1.5)


def test_shifted_blobs_validates_arguments():
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError):
        dt.make_shifted_blobs(10, 1, 2, np.zeros(2), 1.0, rng)
    with pytest.raises(ValueError):
        dt.make_shifted_blobs(1, 2, 2, np.zeros(2), 1.0, rng)
    with pytest.raises(ValueError):
        dt.make_shifted_blobs(10, 2, 2, np.zeros(3), 1.0, rng)


def test_quarantine_raises_without_labels():
    ds = dt.AdaptationDataset(
        source=dt.Batch(np.ones((2, 2)), np.array([0, 1]), np.zeros(2, dtype=np.int64)),
        target=dt.Batch(np.ones((2, 2)), None, np.ones(2, dtype=np.int64)),
    )
    with pytest.raises(ValueError):
        ds.evaluation_target_labels()


def test_dataset_spec_validation():
    good = {"kind": "two_moons", "n_per_domain": 10, "noise": 0.1, "rotation_deg": 35.0}
    assert dt.validate_dataset_spec(good) is good
    with pytest.raises(ValueError):
        dt.validate_dataset_spec({"kind": "nope"})
    with pytest.raises(ValueError):
        dt.validate_dataset_spec({"kind": "two_moons", "n_per_domain": 10})
    with pytest.raises(ValueError):
        dt.validate_dataset_spec({**good, "extra": 1})
    with pytest.raises(ValueError):
        dt.validate_dataset_spec([1, 2])


def test_dataset_from_spec_is_deterministic():
    spec = {"kind": "two_moons", "n_per_domain": 20, "noise": 0.1, "rotation_deg": 35.0}
    a = dt.dataset_from_spec(spec, seed=3)
    b = dt.dataset_from_spec(spec, seed=3)
    c = dt.dataset_from_spec(spec, seed=4)
    np.testing.assert_array_equal(a.source.features, b.source.features)
    assert not np.array_equal(a.source.features, c.source.features)


def test_csv_round_trip_is_exact(tmp_path):
    rng = np.random.default_rng(8)
    batch = dt.Batch(
        rng.standard_normal((25, 3)) * 1e6,
        rng.integers(0, 4, size=25),
        np.zeros(25, dtype=np.int64),
    )
    path = tmp_path / "batch.csv"
    dt.save_csv(batch, path)
    loaded = dt.load_csv(path)
    np.testing.assert_array_equal(loaded.features, batch.features)
    np.testing.assert_array_equal(loaded.labels, batch.labels)
    np.testing.assert_array_equal(loaded.domain, batch.domain)


def test_csv_unlabeled_round_trip(tmp_path):
    batch = dt.Batch(np.ones((4, 2)), None, np.ones(4, dtype=np.int64))
    path = tmp_path / "unlabeled.csv"
    dt.save_csv(batch, path)
    loaded = dt.load_csv(path)
    assert loaded.labels is None
    assert path.read_text().splitlines()[1] == "1,-1,1,1"


def test_csv_uses_lf_endings(tmp_path):
    batch = dt.Batch(np.ones((2, 2)), np.array([0, 1]), np.zeros(2, dtype=np.int64))
    path = tmp_path / "lf.csv"
    dt.save_csv(batch, path)
    raw = path.read_bytes()
    assert b"\r" not in raw
    assert raw.endswith(b"\n")


def test_load_csv_errors_cite_line_numbers(tmp_path):
    path = tmp_path / "bad.csv"

    path.write_text("domain,label,feat_0\n0,1,0.5\n0,1\n")
    with pytest.raises(ValueError, match="line 3"):
        dt.load_csv(path)

    path.write_text("domain,label,feat_0\n2,1,0.5\n")
    with pytest.raises(ValueError, match="line 2"):
        dt.load_csv(path)

    path.write_text("domain,label,feat_0\n0,oops,0.5\n")
    with pytest.raises(ValueError, match="line 2"):
        dt.load_csv(path)

    path.write_text("domain,label,feat_0\n0,-2,0.5\n")
    with pytest.raises(ValueError, match="line 2"):
        dt.load_csv(path)

    path.write_text("domain,label,feat_0\n0,1,0.5\n0,-1,0.5\n")
    with pytest.raises(ValueError, match="line 3"):
        dt.load_csv(path)

    path.write_text("wrong,header\n")
    with pytest.raises(ValueError, match="line 1"):
        dt.load_csv(path)

    path.write_text("")
    with pytest.raises(ValueError, match="empty"):
        dt.load_csv(path)


def test_label_csv_round_trip(tmp_path):
    labels = np.array([2, 0, 1, 1], dtype=np.int64)
    path = tmp_path / "labels.csv"
    dt.save_label_csv(labels, path)
    np.testing.assert_array_equal(dt.load_label_csv(path), labels)
    assert path.read_text() == "label\n2\n0\n1\n1\n"


def test_label_csv_rejects_bad_header(tmp_path):
    path = tmp_path / "labels.csv"
    path.write_text("labels\n1\n")
    with pytest.raises(ValueError):
        dt.load_label_csv(path)


def test_csv_dataset_spec_round_trip(tmp_path):
    src = dt.make_two_moons(30, 0.1, 35.0, np.random.default_rng(0))
    dt.save_csv(src.source, tmp_path / "source.csv")
    dt.save_csv(src.target, tmp_path / "target.csv")
    dt.save_label_csv(src.evaluation_target_labels(), tmp_path / "hidden.csv")

    spec = {
        "kind": "csv",
        "source": str(tmp_path / "source.csv"),
        "target": str(tmp_path / "target.csv"),
        "target_labels": str(tmp_path / "hidden.csv"),
    }
    ds = dt.dataset_from_spec(spec, seed=0)
    np.testing.assert_array_equal(ds.source.features, src.source.features)
    np.testing.assert_array_equal(ds.target.features, src.target.features)
    np.testing.assert_array_equal(
        ds.evaluation_target_labels(), src.evaluation_target_labels()
    )


def test_csv_dataset_spec_rejects_swapped_roles(tmp_path):
    ds = dt.make_two_moons(10, 0.1, 35.0, np.random.default_rng(0))
    dt.save_csv(ds.source, tmp_path / "source.csv")
    dt.save_csv(ds.target, tmp_path / "target.csv")
    spec = {
        "kind": "csv",
        "source": str(tmp_path / "target.csv"),  # unlabeled in the source slot
        "target": str(tmp_path / "target.csv"),
    }
    with pytest.raises(ValueError, match="must be labeled"):
        dt.dataset_from_spec(spec, seed=0)
    spec = {
        "kind": "csv",
        "source": str(tmp_path / "source.csv"),
        "target": str(tmp_path / "source.csv"),  # labeled in the target slot
    }
    with pytest.raises(ValueError, match="must be unlabeled"):
        dt.dataset_from_spec(spec, seed=0)
