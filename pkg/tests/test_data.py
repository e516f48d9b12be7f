import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from drgrade import data
from drgrade.errors import DataError


def _write_manifest(tmp_path, rows, header="id_code,diagnosis"):
    path = tmp_path / "train.csv"
    path.write_text(header + "\n" + "\n".join(rows) + "\n")
    (tmp_path / "img").mkdir(exist_ok=True)
    return path, tmp_path / "img"


class TestReadManifest:
    def test_parse(self, tmp_path):
        csv, img = _write_manifest(tmp_path, ["abc,2", "xyz,0"])
        m = data.read_manifest(csv, img)
        assert m.entries == [("abc", 2), ("xyz", 0)]
        assert m.histogram == [1, 0, 1, 0, 0]
        assert m.missing == ["abc", "xyz"]  # no image files written

    def test_grade_out_of_range(self, tmp_path):
        csv, img = _write_manifest(tmp_path, ["abc,7"])
        with pytest.raises(DataError, match="outside"):
            data.read_manifest(csv, img)

    def test_duplicate_id(self, tmp_path):
        csv, img = _write_manifest(tmp_path, ["abc,1", "abc,2"])
        with pytest.raises(DataError, match="duplicate"):
            data.read_manifest(csv, img)

    def test_malformed_row(self, tmp_path):
        csv, img = _write_manifest(tmp_path, ["abc,1,extra"])
        with pytest.raises(DataError, match="malformed"):
            data.read_manifest(csv, img)

    def test_non_integer_grade(self, tmp_path):
        csv, img = _write_manifest(tmp_path, ["abc,two"])
        with pytest.raises(DataError, match="not an integer"):
            data.read_manifest(csv, img)

    def test_wrong_header(self, tmp_path):
        csv, img = _write_manifest(tmp_path, ["abc,1"], header="id,label")
        with pytest.raises(DataError, match="header"):
            data.read_manifest(csv, img)

    def test_aptos_header_accepted(self, fixture_dataset):
        m = data.read_manifest(fixture_dataset["csv"], fixture_dataset["images"])
        assert len(m.entries) == fixture_dataset["n"]
        assert not m.missing


class TestPreprocess:
    def test_white_input(self):
        out = data.preprocess(np.full((64, 64, 3), 255, np.uint8), size=32)
        assert out.shape == (32, 32, 1)
        np.testing.assert_allclose(out, 1.0)

    def test_pure_red_gives_luma_coefficient(self):
        img = np.zeros((64, 64, 3), np.uint8)
        img[:, :, 0] = 255
        out = data.preprocess(img, size=32)
        np.testing.assert_allclose(out, 0.299, atol=1e-6)

    def test_checkerboard_matches_reference_resampler(self):
        import cv2

        rng = np.random.default_rng(0)
        img = np.zeros((512, 512), np.uint8)
        img[::2, ::2] = 255
        img[1::2, 1::2] = 255
        img = img + rng.integers(0, 30, (512, 512)).astype(np.uint8) // 2
        ours = data.resize_bilinear(img.astype(np.float64), 256, 256)
        ref = cv2.resize(img.astype(np.float32), (256, 256), interpolation=cv2.INTER_LINEAR)
        assert np.abs(ours - ref).max() <= 1.0  # 1/255 per pixel on the [0,1] scale

    def test_values_within_unit_interval(self):
        rng = np.random.default_rng(1)
        out = data.preprocess(rng.integers(0, 256, (40, 56, 3), dtype=np.uint8), size=32)
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_rejects_non_rgb(self):
        with pytest.raises(DataError):
            data.preprocess(np.zeros((10, 10), np.uint8))


class TestHflip:
    def _sample(self, seed=0):
        rng = np.random.default_rng(seed)
        return data.Sample(id="s0", pixels=rng.random((8, 8, 1)).astype(np.float32), grade=3)

    def test_involution(self):
        s = self._sample()
        back = data.hflip_augment(data.hflip_augment(s))
        assert back.pixels.tobytes() == s.pixels.tobytes()

    def test_grade_retained(self):
        s = self._sample()
        assert data.hflip_augment(s).grade == s.grade

    def test_column_reversal(self):
        px = np.zeros((4, 4, 1), np.float32)
        px[:, :2, :] = 1.0  # left half bright
        flipped = data.hflip_augment(data.Sample(id="x", pixels=px, grade=0))
        assert (flipped.pixels[:, 2:, :] == 1.0).all()
        assert (flipped.pixels[:, :2, :] == 0.0).all()

    def test_id_and_flag(self):
        f = data.hflip_augment(self._sample())
        assert f.id == "s0_hflip" and f.augmented

    @settings(max_examples=20, deadline=None)
    @given(st.integers(0, 1000))
    def test_histogram_preserved(self, seed):
        s = self._sample(seed)
        f = data.hflip_augment(s)
        assert sorted(s.pixels.ravel()) == sorted(f.pixels.ravel())


class TestSplit:
    def _manifest(self, per_class=20):
        entries = [(f"id{g}_{k}", g) for g in range(5) for k in range(per_class)]
        return data.DatasetManifest(entries, "x.csv", ".")

    def test_stratification_counts(self):
        train, val = data.split(self._manifest(20), data.SplitSpec(0.2, seed=1))
        assert len(val) == 20 and len(train) == 80
        for g in range(5):
            assert sum(1 for i in val if i.startswith(f"id{g}_")) == 4

    def test_determinism(self):
        m = self._manifest()
        assert data.split(m, data.SplitSpec(0.2, seed=9)) == \
               data.split(m, data.SplitSpec(0.2, seed=9))

    def test_partition(self):
        m = self._manifest(7)
        train, val = data.split(m, data.SplitSpec(0.3, seed=2))
        assert not set(train) & set(val)
        assert set(train) | set(val) == {i for i, _ in m.entries}

    def test_bad_fraction(self):
        with pytest.raises(DataError):
            data.split(self._manifest(), data.SplitSpec(1.5))

    def test_empty_manifest(self):
        with pytest.raises(DataError):
            data.split(data.DatasetManifest([], "x", "."), data.SplitSpec())


class TestBatches:
    def test_sizes(self):
        sizes = [len(b) for b in data.batch_order(10, 4, seed=0, epoch=0)]
        assert sizes == [4, 4, 2]

    def test_epoch_orders_differ_and_reproduce(self):
        a0 = [list(b) for b in data.batch_order(32, 8, seed=5, epoch=0)]
        a1 = [list(b) for b in data.batch_order(32, 8, seed=5, epoch=1)]
        b0 = [list(b) for b in data.batch_order(32, 8, seed=5, epoch=0)]
        assert a0 != a1
        assert a0 == b0

    def test_coverage(self):
        batches = data.batch_order(23, 5, seed=3, epoch=2)
        seen = sorted(int(i) for b in batches for i in b)
        assert seen == list(range(23))

    def test_empty_rejected(self):
        with pytest.raises(DataError):
            data.batch_order(0, 4, 0, 0)


class TestLoadDataset:
    def test_augmentation_doubles_train_only(self, fixture_dataset):
        m = data.read_manifest(fixture_dataset["csv"], fixture_dataset["images"])
        train_ids, val_ids = data.split(m, data.SplitSpec(0.2, seed=0))
        bundle = data.load_dataset(m, data.SplitSpec(0.2, seed=0), size=32)
        assert len(bundle.train.ids) == 2 * len(train_ids)
        assert len(bundle.val.ids) == len(val_ids)
        assert not any(i.endswith("_hflip") for i in bundle.val.ids)
        flipped = [i for i in bundle.train.ids if i.endswith("_hflip")]
        assert len(flipped) == len(train_ids)

    def test_flipped_grades_match_originals(self, fixture_dataset):
        m = data.read_manifest(fixture_dataset["csv"], fixture_dataset["images"])
        bundle = data.load_dataset(m, data.SplitSpec(0.2, seed=0), size=32)
        grade = dict(zip(bundle.train.ids, bundle.train.y))
        for i in bundle.train.ids:
            if i.endswith("_hflip"):
                assert grade[i] == grade[i[:-len("_hflip")]]

    def test_served_values_in_range(self, fixture_dataset):
        m = data.read_manifest(fixture_dataset["csv"], fixture_dataset["images"])
        bundle = data.load_dataset(m, data.SplitSpec(0.2, seed=0), size=32)
        for arrays in (bundle.train, bundle.val):
            assert arrays.x.min() >= 0.0 and arrays.x.max() <= 1.0
            assert arrays.y.min() >= 0 and arrays.y.max() <= 4

    def test_end_to_end_determinism(self, fixture_dataset):
        m = data.read_manifest(fixture_dataset["csv"], fixture_dataset["images"])
        a = data.load_dataset(m, data.SplitSpec(0.2, seed=4), size=32)
        b = data.load_dataset(m, data.SplitSpec(0.2, seed=4), size=32)
        assert a.train.ids == b.train.ids
        assert a.train.x.tobytes() == b.train.x.tobytes()
        assert a.val.x.tobytes() == b.val.x.tobytes()
