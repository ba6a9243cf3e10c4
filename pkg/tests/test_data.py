"""Shape generator determinism, template fixtures, and the binary format."""
import math
import struct
from pathlib import Path

import numpy as np
import numpy.testing as npt
import pytest

from rfnet.data import (CLASS_NAMES, FormatError, ShapeSample, class_template,
                        dataset_io, gen_dataset, gen_sample, load_dataset, save_dataset)
from rfnet.rotation import rotate_array

FIXTURES = Path(__file__).parent / "fixtures"


class TestTemplates:
    def test_fixture_equality_bitwise(self):
        stored = np.load(FIXTURES / "templates_v1.npz")
        for cid, name in enumerate(CLASS_NAMES):
            assert class_template(cid).tobytes() == stored[name].tobytes()

    def test_nearest_template_classifier_is_perfect(self):
        templates = [class_template(c) for c in range(4)]
        for cid in range(4):
            sample = gen_sample(seed=0, class_id=cid, orientation=0.0, noise_level=0.0)
            dists = [np.abs(sample.image - t).sum() for t in templates]
            assert int(np.argmin(dists)) == cid

    def test_invalid_class_rejected(self):
        with pytest.raises(ValueError):
            class_template(7)
        with pytest.raises(ValueError):
            gen_sample(0, -1, 0.0)


class TestGenSample:
    def test_bitwise_deterministic(self):
        a = gen_sample(seed=99, class_id=2, orientation=1.234, noise_level=0.3)
        b = gen_sample(seed=99, class_id=2, orientation=1.234, noise_level=0.3)
        assert a.image.tobytes() == b.image.tobytes()
        assert a == b

    def test_upright_noiseless_equals_template(self):
        s = gen_sample(seed=5, class_id=1, orientation=0.0, noise_level=0.0)
        npt.assert_array_equal(s.image, class_template(1))

    def test_quarter_turn_matches_shared_rotation(self):
        s = gen_sample(seed=5, class_id=3, orientation=math.pi / 2, noise_level=0.0)
        npt.assert_array_equal(s.image, rotate_array(class_template(3), math.pi / 2))

    def test_values_stay_in_unit_interval(self):
        for noise in (0.0, 0.25, 0.5):
            for cid in range(4):
                s = gen_sample(seed=cid, class_id=cid, orientation=0.7, noise_level=noise)
                assert s.image.min() >= 0.0 and s.image.max() <= 1.0

    def test_unrotating_recovers_template(self):
        for cid in range(4):
            for theta in (0.4, 1.9, 3.6, 5.1):
                s = gen_sample(seed=1, class_id=cid, orientation=theta, noise_level=0.0)
                back = rotate_array(s.image, -theta)
                assert np.abs(back - class_template(cid)).mean() < 0.05


class TestGenDataset:
    def test_exact_balance(self):
        ds = gen_dataset(seed=3, size=8, num_classes=4)
        counts = np.bincount(ds.labels(), minlength=4)
        npt.assert_array_equal(counts, [2, 2, 2, 2])

    def test_near_balance_with_remainder(self):
        ds = gen_dataset(seed=3, size=10, num_classes=4)
        counts = np.bincount(ds.labels(), minlength=4)
        assert counts.max() - counts.min() <= 1

    def test_same_seed_identical(self):
        a = gen_dataset(seed=42, size=20, num_classes=4)
        b = gen_dataset(seed=42, size=20, num_classes=4)
        assert all(x == y for x, y in zip(a.samples, b.samples))

    def test_different_seed_differs(self):
        a = gen_dataset(seed=1, size=8, num_classes=4)
        b = gen_dataset(seed=2, size=8, num_classes=4)
        assert any(x != y for x, y in zip(a.samples, b.samples))

    def test_uniform_orientations_chi_squared(self):
        from scipy import stats
        ds = gen_dataset(seed=7, size=4096, num_classes=4, noise_level=0.0)
        th = ds.orientations()
        bins = np.minimum((th / (2 * math.pi) * 8).astype(int), 7)
        counts = np.bincount(bins, minlength=8)
        _, p = stats.chisquare(counts)
        assert p > 0.01

    def test_axis_aligned_policy(self):
        ds = gen_dataset(seed=7, size=64, orientation_policy="axis_aligned_only")
        allowed = {0.0, np.float32(math.pi / 2), np.float32(math.pi),
                   np.float32(3 * math.pi / 2)}
        assert set(np.unique(ds.orientations())) <= allowed

    def test_size_below_class_count_rejected(self):
        with pytest.raises(ValueError, match="smaller"):
            gen_dataset(seed=0, size=3, num_classes=4)

    def test_unknown_policy_rejected(self):
        with pytest.raises(ValueError, match="policy"):
            gen_dataset(seed=0, size=8, orientation_policy="spiral")


class TestDatasetIo:
    def test_round_trip_losslessly(self, tmp_path):
        ds = gen_dataset(seed=11, size=12, num_classes=4, noise_level=0.2)
        path = tmp_path / "d.rfnd"
        dataset_io(ds, path, "save")
        back = dataset_io(None, path, "load")
        assert back.image_size == ds.image_size and back.num_classes == ds.num_classes
        assert len(back.samples) == len(ds.samples)
        assert all(a == b for a, b in zip(ds.samples, back.samples))

    def test_double_round_trip_identical_bytes(self, tmp_path):
        ds = gen_dataset(seed=11, size=6, num_classes=3)
        p1, p2 = tmp_path / "a.rfnd", tmp_path / "b.rfnd"
        save_dataset(ds, p1)
        save_dataset(load_dataset(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_corrupted_magic_is_format_error(self, tmp_path):
        ds = gen_dataset(seed=1, size=4, num_classes=4)
        path = tmp_path / "d.rfnd"
        save_dataset(ds, path)
        blob = bytearray(path.read_bytes())
        blob[:4] = b"XXXX"
        path.write_bytes(bytes(blob))
        with pytest.raises(FormatError, match="magic"):
            load_dataset(path)

    def test_truncation_is_format_error(self, tmp_path):
        ds = gen_dataset(seed=1, size=4, num_classes=4)
        path = tmp_path / "d.rfnd"
        save_dataset(ds, path)
        path.write_bytes(path.read_bytes()[:-10])
        with pytest.raises(FormatError, match="truncated"):
            load_dataset(path)

    def test_version_mismatch_is_format_error(self, tmp_path):
        ds = gen_dataset(seed=1, size=4, num_classes=4)
        path = tmp_path / "d.rfnd"
        save_dataset(ds, path)
        blob = bytearray(path.read_bytes())
        blob[4:6] = struct.pack("<H", 9)
        path.write_bytes(bytes(blob))
        with pytest.raises(FormatError, match="version"):
            load_dataset(path)

    def test_hand_assembled_single_sample_file(self, tmp_path):
        # one 2x2 image, assembled byte by byte from the documented layout
        img = np.array([[0.0, 0.25], [0.5, 1.0]], dtype="<f4")
        blob = b"RFND" + struct.pack("<HIHH", 1, 1, 2, 4)
        blob += struct.pack("<HfQ", 3, 1.5, 77) + img.tobytes()
        path = tmp_path / "hand.rfnd"
        path.write_bytes(blob)
        ds = load_dataset(path)
        assert ds.image_size == 2 and ds.num_classes == 4
        s = ds.samples[0]
        assert s.class_id == 3 and s.noise_seed == 77
        assert np.float32(s.orientation) == np.float32(1.5)
        npt.assert_array_equal(s.image, img)

    def test_bad_direction(self):
        with pytest.raises(ValueError):
            dataset_io(None, "x", "copy")


class TestBatchViews:
    def test_images_shape_and_targets(self):
        ds = gen_dataset(seed=2, size=8, num_classes=4)
        assert ds.images().shape == (8, 32, 32, 1)
        t = ds.orientation_targets()
        npt.assert_allclose((t ** 2).sum(axis=1), np.ones(8), atol=1e-6)
