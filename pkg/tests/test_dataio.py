import struct

import numpy as np
import pytest

from armor.dataio import (
    DEFAULT_RULE,
    Dataset,
    gen_binary,
    gen_moons,
    load_idx,
    moon_arcs,
    read_csv,
    split,
    write_csv,
)
from armor.errors import BadMagicError, CountMismatchError, DataFormatError, TruncatedFileError


def write_idx(tmp_path, n_images=4, n_labels=None, image_magic=0x803, truncate=0):
    rng = np.random.default_rng(0)
    pixels = rng.integers(0, 256, size=(n_images, 28, 28), dtype=np.uint8)
    labels = rng.integers(0, 10, size=n_images if n_labels is None else n_labels, dtype=np.uint8)
    img = struct.pack(">IIII", image_magic, n_images, 28, 28) + pixels.tobytes()
    lab = struct.pack(">II", 0x801, labels.size) + labels.tobytes()
    if truncate:
        img = img[:-truncate]
    ip, lp = tmp_path / "images.idx", tmp_path / "labels.idx"
    ip.write_bytes(img)
    lp.write_bytes(lab)
    return ip, lp, pixels, labels


class TestIdx:
    def test_fixture(self, tmp_path):
        ip, lp, pixels, labels = write_idx(tmp_path)
        ds = load_idx(ip, lp)
        assert len(ds) == 4 and ds.dim == 784 and ds.num_classes == 10
        assert ds.features.min() >= 0 and ds.features.max() <= 1
        assert np.array_equal(ds.features, pixels.reshape(4, -1) / 255.0)
        assert np.array_equal(ds.labels, labels)

    def test_limit(self, tmp_path):
        ip, lp, _, _ = write_idx(tmp_path)
        assert len(load_idx(ip, lp, limit=2)) == 2

    def test_bad_magic(self, tmp_path):
        ip, lp, _, _ = write_idx(tmp_path, image_magic=0x804)
        with pytest.raises(BadMagicError):
            load_idx(ip, lp)

    def test_truncated(self, tmp_path):
        ip, lp, _, _ = write_idx(tmp_path, truncate=10)
        with pytest.raises(TruncatedFileError):
            load_idx(ip, lp)

    def test_count_mismatch(self, tmp_path):
        ip, lp, _, _ = write_idx(tmp_path, n_labels=3)
        with pytest.raises(CountMismatchError):
            load_idx(ip, lp)

    def test_tiny_header(self, tmp_path):
        ip, lp, _, _ = write_idx(tmp_path)
        ip.write_bytes(b"\x00\x00")
        with pytest.raises(DataFormatError):
            load_idx(ip, lp)


class TestMoons:
    def test_balanced_and_deterministic(self):
        a, b = gen_moons(100, 0.1, seed=4), gen_moons(100, 0.1, seed=4)
        assert np.sum(a.labels == 0) == 50
        assert a.features.tobytes() == b.features.tobytes()

    def test_noise_free_points_lie_on_arcs(self):
        ds = gen_moons(60, 0.0, seed=1)
        t = np.linspace(0, np.pi, 30)
        outer, inner = moon_arcs(t)
        for pts, arc in ((ds.features[ds.labels == 0], outer), (ds.features[ds.labels == 1], inner)):
            # each generated point matches some arc point exactly
            dist = np.min(np.abs(pts[:, None, :] - arc[None, :, :]).max(axis=2), axis=1)
            assert dist.max() < 1e-12
        # circle equations in raw coordinates
        raw = ds.features * np.array([3.0, 1.5]) - np.array([1.0, 0.5])
        r0 = np.hypot(*raw[ds.labels == 0].T) - 1
        r1 = np.hypot(*(raw[ds.labels == 1] - np.array([1.0, 0.5])).T) - 1
        assert np.abs(r0).max() < 1e-12 and np.abs(r1).max() < 1e-12

    def test_in_unit_box(self):
        ds = gen_moons(400, 0.3, seed=2)
        assert ds.features.min() >= 0 and ds.features.max() <= 1

    def test_odd_n(self):
        with pytest.raises(ValueError):
            gen_moons(5)


class TestBinary:
    def test_rule_holds_without_noise(self):
        ds = gen_binary(500, 6, seed=0)
        bits = ds.features.astype(int)
        expected = (bits[:, 0] & bits[:, 1]) | (bits[:, 2] & bits[:, 3])
        assert np.array_equal(ds.labels, expected)

    def test_balance_matches_rule_probability(self):
        # P(A or B) with independent clauses of probability 1/4 each
        p = 1 - (1 - 0.25) ** 2
        assert p == 7 / 16
        ds = gen_binary(4000, 10, DEFAULT_RULE, seed=5)
        assert abs(ds.labels.mean() - p) <= 0.1 * p

    def test_deterministic(self):
        a, b = gen_binary(50, 5, seed=9, noise=0.1), gen_binary(50, 5, seed=9, noise=0.1)
        assert a.features.tobytes() == b.features.tobytes()
        assert np.array_equal(a.labels, b.labels)

    def test_bad_rule(self):
        with pytest.raises(ValueError):
            gen_binary(10, 4, [(0, 7)])


class TestCsv:
    def test_round_trip(self, tmp_path):
        ds = gen_moons(40, 0.2, seed=3)
        path = tmp_path / "d.csv"
        write_csv(ds, path)
        again = read_csv(path)
        assert np.array_equal(again.features, ds.features)
        assert np.array_equal(again.labels, ds.labels)

    def test_binary_round_trip(self, tmp_path):
        ds = gen_binary(30, 5, seed=1)
        path = tmp_path / "b.csv"
        write_csv(ds, path)
        again = read_csv(path, domain="binary_monotone")
        assert np.array_equal(again.features, ds.features)

    def test_bad_header(self, tmp_path):
        path = tmp_path / "x.csv"
        path.write_text("a,b,label\n0,1,0\n")
        with pytest.raises(DataFormatError):
            read_csv(path)


class TestDataset:
    def test_domain_checked(self):
        with pytest.raises(DataFormatError):
            Dataset([[1.5]], [0])
        with pytest.raises(DataFormatError):
            Dataset([[0.5]], [0], domain="binary_monotone")
        with pytest.raises(DataFormatError):
            Dataset([[0.5]], [3])

    def test_split(self):
        tr, te = split(gen_moons(10, seed=0), 6)
        assert (len(tr), len(te)) == (6, 4)
