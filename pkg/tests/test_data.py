import gzip
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from robustprop.data import (
    IDX_IMAGES_MAGIC, IDX_LABELS_MAGIC, Dataset, DatasetError, IDXParseError, batch_indices,
    gen_blobs, gen_two_moons, load_csv, load_idx, save_csv, train_test_split, write_idx_images,
    write_idx_labels,
)


# -- Dataset invariants -----------------------------------------------------------

def test_dataset_validation():
    with pytest.raises(DatasetError):
        Dataset(np.zeros((3, 2)), [0, 1])
    with pytest.raises(DatasetError):
        Dataset(np.array([[0.0, np.nan]]), [0])
    with pytest.raises(DatasetError):
        Dataset(np.zeros((2, 2)), [0, 2], n_classes=2)
    with pytest.raises(DatasetError):
        Dataset(np.zeros((2, 2)), [0, -1])
    with pytest.raises(DatasetError):
        Dataset(np.zeros((0, 2)), np.zeros(0, int))
    with pytest.raises(DatasetError):
        Dataset(np.zeros(3), [0, 0, 0])


def test_dataset_is_read_only():
    ds = Dataset(np.zeros((2, 2)), [0, 1])
    with pytest.raises(ValueError):
        ds.inputs[0, 0] = 1.0
    assert len(ds.head(1)) == 1 and len(ds.head(10)) == 2
    assert ds.subset([1]).labels.tolist() == [1]


# -- two moons ----------------------------------------------------------------

def test_two_moons_n4_closed_form():
    ds = gen_two_moons(4, 0.0, seed=0)
    pts = {(round(x, 12), round(y, 12), int(l)) for (x, y), l in zip(ds.inputs, ds.labels)}
    third = round(1 / 3, 12)
    assert pts == {(round(2 / 3, 12), third, 0), (0.0, third, 0),
                   (third, round(2 / 3, 12), 1), (1.0, round(2 / 3, 12), 1)}


def test_two_moons_points_on_arcs():
    ds = gen_two_moons(101, 0.0, seed=3)
    u, v = ds.inputs[:, 0] * 3 - 1, ds.inputs[:, 1] * 1.5 - 0.5
    outer = ds.labels == 0
    np.testing.assert_allclose(u[outer] ** 2 + v[outer] ** 2, 1.0, atol=1e-12)
    np.testing.assert_allclose((u[~outer] - 1) ** 2 + (v[~outer] - 0.5) ** 2, 1.0, atol=1e-12)
    assert outer.sum() == 50 and (~outer).sum() == 51
    assert ds.inputs.min() >= 0 and ds.inputs.max() <= 1


def test_two_moons_deterministic_and_clipped():
    a, b = gen_two_moons(200, 0.2, seed=5), gen_two_moons(200, 0.2, seed=5)
    np.testing.assert_array_equal(a.inputs, b.inputs)
    np.testing.assert_array_equal(a.labels, b.labels)
    assert not np.array_equal(a.inputs, gen_two_moons(200, 0.2, seed=6).inputs)
    assert a.inputs.min() >= 0 and a.inputs.max() <= 1
    with pytest.raises(DatasetError):
        gen_two_moons(1)


def test_noise_free_moons_separable():
    from robustprop.estimator import RobustMLPClassifier

    ds = gen_two_moons(100, 0.0, seed=0)
    clf = RobustMLPClassifier(hidden=(32,), epochs=400, batch_size=16, learning_rate=3e-2)
    clf.fit(ds.inputs, ds.labels)
    assert clf.score(ds.inputs, ds.labels) == 1.0


# -- blobs ----------------------------------------------------------------

def test_blobs_means_match_centers():
    centers = np.array([[0.3, 0.3], [0.7, 0.6], [0.4, 0.8]])
    ds = gen_blobs(3000, 3, centers, sigma=0.02, seed=1)
    for k in range(3):
        pts = ds.inputs[ds.labels == k]
        # 5 standard errors of the mean
        assert np.all(np.abs(pts.mean(axis=0) - centers[k]) < 5 * 0.02 / np.sqrt(len(pts)))
        np.testing.assert_allclose(pts.std(axis=0), 0.02, rtol=0.1)


def test_blobs_zero_sigma_collapse():
    centers = np.array([[0.2, 0.9], [0.6, 0.1]])
    ds = gen_blobs(10, 2, centers, sigma=0.0, seed=0)
    np.testing.assert_array_equal(ds.inputs, centers[ds.labels])


def test_blobs_determinism_and_validation():
    a, b = gen_blobs(50, 3, sigma=0.1, seed=2, dim=4), gen_blobs(50, 3, sigma=0.1, seed=2, dim=4)
    np.testing.assert_array_equal(a.inputs, b.inputs)
    assert a.inputs.shape == (50, 4) and a.n_classes == 3
    assert a.inputs.min() >= 0 and a.inputs.max() <= 1
    with pytest.raises(DatasetError):
        gen_blobs(10, 2, [[0.5, 0.5], [0.5, 0.5]])
    with pytest.raises(DatasetError):
        gen_blobs(10, 3, [[0.5, 0.5], [0.1, 0.5]])


# -- IDX ------------------------------------------------------------------

def _hand_idx(tmp_path):
    # two 2x2 images, bytes written out by hand
    img = bytes.fromhex("00000803" "00000002" "00000002" "00000002") + bytes([0, 255, 51, 102,
                                                                              255, 0, 0, 204])
    lab = bytes.fromhex("00000801" "00000002") + bytes([1, 0])
    (tmp_path / "img.idx").write_bytes(img)
    (tmp_path / "lab.idx").write_bytes(lab)
    return tmp_path / "img.idx", tmp_path / "lab.idx"


def test_idx_hand_fixture(tmp_path):
    ds = load_idx(*_hand_idx(tmp_path))
    np.testing.assert_array_equal(ds.inputs, [[0.0, 1.0, 0.2, 0.4], [1.0, 0.0, 0.0, 0.8]])
    assert ds.labels.tolist() == [1, 0] and ds.n_classes == 2


def test_idx_limit(tmp_path):
    ds = load_idx(*_hand_idx(tmp_path), limit=1)
    assert len(ds) == 1 and ds.inputs[0].tolist() == [0.0, 1.0, 0.2, 0.4]
    with pytest.raises(DatasetError, match="empty"):
        load_idx(*_hand_idx(tmp_path), limit=0)


def test_idx_wrong_magic(tmp_path):
    img, lab = _hand_idx(tmp_path)
    with pytest.raises(IDXParseError, match="magic") as exc:
        load_idx(lab, lab)
    assert exc.value.offset == 0
    raw = bytearray(img.read_bytes())
    raw[3] = 0x08
    img.write_bytes(bytes(raw))
    with pytest.raises(IDXParseError, match="0x00000808"):
        load_idx(img, lab)


def test_idx_truncated_reports_offset(tmp_path):
    img, lab = _hand_idx(tmp_path)
    img.write_bytes(img.read_bytes()[:21])
    with pytest.raises(IDXParseError) as exc:
        load_idx(img, lab)
    assert exc.value.offset == 21 and "offset 21" in str(exc.value)
    img.write_bytes(bytes.fromhex("000008"))
    with pytest.raises(IDXParseError) as exc:
        load_idx(img, lab)
    assert exc.value.offset == 3
    img.write_bytes(bytes.fromhex("00000803000000"))
    with pytest.raises(IDXParseError, match="header"):
        load_idx(img, lab)


def test_idx_count_mismatch(tmp_path):
    img, lab = _hand_idx(tmp_path)
    lab.write_bytes(bytes.fromhex("00000801" "00000001") + bytes([1]))
    with pytest.raises(DatasetError, match="2 images but 1 labels"):
        load_idx(img, lab)


def test_idx_gzip_and_writer_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    images = rng.integers(0, 256, size=(5, 3, 4), dtype=np.uint8)
    labels = rng.integers(0, 10, size=5)
    write_idx_images(tmp_path / "i.idx", images)
    write_idx_labels(tmp_path / "l.idx", labels)
    raw = (tmp_path / "i.idx").read_bytes()
    assert struct.unpack(">4I", raw[:16]) == (IDX_IMAGES_MAGIC, 5, 3, 4)
    (tmp_path / "i.idx.gz").write_bytes(gzip.compress(raw))
    (tmp_path / "l.idx.gz").write_bytes(gzip.compress((tmp_path / "l.idx").read_bytes()))
    for suffix in ("", ".gz"):
        ds = load_idx(tmp_path / f"i.idx{suffix}", tmp_path / f"l.idx{suffix}", n_classes=10)
        np.testing.assert_array_equal(ds.inputs, images.reshape(5, -1) / 255.0)
        np.testing.assert_array_equal(ds.labels, labels)
    assert struct.unpack(">2I", (tmp_path / "l.idx").read_bytes()[:8]) == (IDX_LABELS_MAGIC, 5)


# -- CSV, splits, batches -------------------------------------------------------

@settings(max_examples=20, deadline=None)
@given(n=st.integers(2, 60), noise=st.floats(0.0, 0.3), seed=st.integers(0, 2**31))
def test_csv_round_trip(tmp_path_factory, n, noise, seed):
    ds = gen_two_moons(n, noise, seed)
    path = tmp_path_factory.mktemp("csv") / "d.csv"
    save_csv(ds, path)
    back = load_csv(path)
    assert np.max(np.abs(back.inputs - ds.inputs)) <= 1e-12
    np.testing.assert_array_equal(back.labels, ds.labels)
    assert path.read_text().splitlines()[0] == "x0,x1,label"


def test_csv_errors(tmp_path):
    p = tmp_path / "bad.csv"
    p.write_text("a,b,label\n0.1,0.2,0\n")
    with pytest.raises(DatasetError, match="header"):
        load_csv(p)
    p.write_text("x0,x1,label\n0.1,zz,0\n")
    with pytest.raises(DatasetError):
        load_csv(p)
    p.write_text("")
    with pytest.raises(DatasetError):
        load_csv(p)


def test_train_test_split():
    ds = gen_two_moons(30, 0.1, seed=0)
    tr, te = train_test_split(ds, 1 / 3, seed=4)
    assert len(tr) == 20 and len(te) == 10
    both = np.concatenate([tr.inputs, te.inputs])
    assert sorted(map(tuple, both)) == sorted(map(tuple, ds.inputs))
    tr2, te2 = train_test_split(ds, 1 / 3, seed=4)
    np.testing.assert_array_equal(te.inputs, te2.inputs)
    with pytest.raises(DatasetError):
        train_test_split(ds, 1.0)


@given(n=st.integers(1, 300), bs=st.integers(1, 64), seed=st.integers(0, 100))
def test_batches_cover_once(n, bs, seed):
    for rng in (None, np.random.default_rng(seed)):
        batches = batch_indices(n, bs, rng)
        assert all(1 <= len(b) <= bs for b in batches)
        assert sorted(np.concatenate(batches).tolist()) == list(range(n))
