import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from unlearnlab.datagen import (
    AugmentorConfig,
    LabeledDataset,
    Splits,
    augment_pair,
    augment_views,
    gen_synthetic,
    load_cifar10,
    load_dataset,
    load_splits,
    paired_views_for_ids,
    save_dataset,
    save_splits,
    split,
    view_rng,
)
from unlearnlab.errors import ConfigurationError, DataFormatError


class TestSynthetic:
    def test_shapes_and_balanced_labels(self):
        ds = gen_synthetic(num_clusters=5, dim=16, n=2000, separation=6.0, seed=0)
        assert ds.samples.shape == (2000, 16)
        assert len(np.unique(ds.ids)) == 2000
        counts = np.bincount(ds.labels, minlength=5)
        assert counts.max() - counts.min() <= 1

    def test_deterministic(self):
        a = gen_synthetic(3, 4, 120, 5.0, seed=9)
        b = gen_synthetic(3, 4, 120, 5.0, seed=9)
        assert np.array_equal(a.samples, b.samples)
        assert np.array_equal(a.labels, b.labels)
        c = gen_synthetic(3, 4, 120, 5.0, seed=10)
        assert not np.array_equal(a.samples, c.samples)

    def test_nearest_centroid_recovers_labels(self):
        ds = gen_synthetic(5, 16, 1000, 6.0, seed=1)
        cents = np.stack([ds.samples[ds.labels == k].mean(axis=0) for k in range(5)])
        d2 = ((ds.samples[:, None, :] - cents[None, :, :]) ** 2).sum(axis=2)
        acc = float(np.mean(np.argmin(d2, axis=1) == ds.labels))
        assert acc > 0.99

    def test_mean_separation_honored(self):
        ds = gen_synthetic(4, 8, 400, 7.0, seed=2)
        cents = np.stack([ds.samples[ds.labels == k].mean(axis=0) for k in range(4)])
        dists = np.linalg.norm(cents[:, None] - cents[None, :], axis=2)
        np.fill_diagonal(dists, np.inf)
        # empirical centroids sit within ~3/sqrt(100) of the true means
        assert dists.min() > 7.0 - 1.0

    def test_bad_args_rejected(self):
        with pytest.raises(ConfigurationError):
            gen_synthetic(1, 4, 100, 5.0, seed=0)
        with pytest.raises(ConfigurationError):
            gen_synthetic(3, 4, 2, 5.0, seed=0)
        with pytest.raises(ConfigurationError):
            gen_synthetic(3, 4, 100, 0.0, seed=0)


class TestCifar:
    def _write(self, tmp_path, name, payload: bytes):
        p = tmp_path / name
        p.write_bytes(payload)
        return str(p)

    def test_two_record_file_parses(self, tmp_path):
        rec0 = bytes([3]) + bytes(range(256)) * 12
        rec1 = bytes([9]) + bytes([255]) * 3072
        path = self._write(tmp_path, "batch_a.bin", rec0 + rec1)
        ds = load_cifar10(path)
        assert ds.samples.shape == (2, 3072)
        assert list(ds.labels) == [3, 9]
        assert ds.samples[0, 0] == 0.0
        assert ds.samples[0, 1] == pytest.approx(1.0 / 255.0)
        assert np.all(ds.samples[1] == 1.0)
        assert list(ds.ids) == [0, 1]

    def test_directory_of_batches_sorted(self, tmp_path):
        rec = lambda lab: bytes([lab]) + bytes(3072)
        self._write(tmp_path, "b2.bin", rec(2))
        self._write(tmp_path, "b1.bin", rec(1))
        ds = load_cifar10(str(tmp_path))
        assert list(ds.labels) == [1, 2]
        assert list(ds.ids) == [0, 100000]

    def test_empty_file_rejected(self, tmp_path):
        path = self._write(tmp_path, "z.bin", b"")
        with pytest.raises(DataFormatError):
            load_cifar10(path)

    def test_truncated_file_rejected(self, tmp_path):
        path = self._write(tmp_path, "t.bin", bytes(3073 + 17))
        with pytest.raises(DataFormatError, match="3073"):
            load_cifar10(path)

    def test_bad_label_rejected(self, tmp_path):
        path = self._write(tmp_path, "l.bin", bytes([10]) + bytes(3072))
        with pytest.raises(DataFormatError, match="label"):
            load_cifar10(path)

    def test_missing_path_rejected(self, tmp_path):
        with pytest.raises(DataFormatError):
            load_cifar10(str(tmp_path / "nope.bin"))


class TestSplit:
    def test_cifar_style_counts(self):
        ds = LabeledDataset(
            np.zeros((50000, 2)), np.zeros(50000, dtype=int), np.arange(50000)
        )
        sp = split(ds, unlearn_fraction=0.1, test_fraction=0.0, val_fraction=0.1, seed=0)
        assert len(sp.validation) == 5000
        assert len(sp.train) == 45000
        assert len(sp.unlearn) == 4500
        assert len(sp.retain) == 40500
        from fractions import Fraction

        assert sp.unlearn_retain_ratio() == Fraction(1, 9)

    def test_deterministic(self):
        ds = gen_synthetic(3, 4, 300, 5.0, seed=0)
        a = split(ds, 0.1, 0.1, 0.05, seed=4)
        b = split(ds, 0.1, 0.1, 0.05, seed=4)
        for part in ("train", "retain", "unlearn", "test", "validation"):
            assert np.array_equal(getattr(a, part), getattr(b, part))
        c = split(ds, 0.1, 0.1, 0.05, seed=5)
        assert not np.array_equal(a.unlearn, c.unlearn)

    @settings(max_examples=40, deadline=None)
    @given(
        n=st.integers(min_value=40, max_value=400),
        uf=st.floats(min_value=0.05, max_value=0.5),
        tf=st.floats(min_value=0.0, max_value=0.3),
        vf=st.floats(min_value=0.0, max_value=0.3),
        seed=st.integers(min_value=0, max_value=2**31),
    )
    def test_partition_invariants(self, n, uf, tf, vf, seed):
        ds = LabeledDataset(np.zeros((n, 1)), np.zeros(n, dtype=int), np.arange(n))
        try:
            sp = split(ds, uf, tf, vf, seed)
        except ConfigurationError:
            return  # degenerate rounding is allowed to be rejected
        everything = np.sort(
            np.concatenate([sp.retain, sp.unlearn, sp.test, sp.validation])
        )
        assert np.array_equal(everything, np.sort(ds.ids))
        assert np.array_equal(np.sort(np.concatenate([sp.retain, sp.unlearn])), sp.train)
        assert len(sp.unlearn) >= 1 and len(sp.retain) >= 1

    def test_bad_fractions_rejected(self):
        ds = LabeledDataset(np.zeros((50, 1)), np.zeros(50, dtype=int), np.arange(50))
        for bad in (0.0, 1.0, -0.2):
            with pytest.raises(ConfigurationError):
                split(ds, bad, 0.0, 0.0, seed=0)
        with pytest.raises(ConfigurationError):
            split(ds, 0.1, 0.7, 0.5, seed=0)

    def test_splits_constructor_enforces_partition(self):
        with pytest.raises(ConfigurationError):
            Splits(
                train=np.array([1, 2, 3]),
                retain=np.array([1, 2]),
                unlearn=np.array([2, 3]),
                test=np.array([], dtype=int),
                validation=np.array([], dtype=int),
            )


class TestAugment:
    def test_identity_config_reproduces_sample(self):
        cfg = AugmentorConfig.identity()
        assert cfg.is_identity
        x = np.array([1.5, -2.0, 0.0, 3.25])
        vx, vy = augment_pair(x, cfg, np.random.default_rng(0))
        assert np.array_equal(vx, x)
        assert np.array_equal(vy, x)

    def test_views_differ_under_noise(self):
        cfg = AugmentorConfig(noise_sigma=0.5, mask_prob=0.0, scale_lo=1.0, scale_hi=1.0)
        x = np.ones(8)
        vx, vy = augment_pair(x, cfg, np.random.default_rng(3))
        assert not np.array_equal(vx, vy)

    def test_replay_is_deterministic(self):
        cfg = AugmentorConfig()
        x = np.linspace(-1, 1, 10)
        a = augment_pair(x, cfg, view_rng(7, 123, 4))
        b = augment_pair(x, cfg, view_rng(7, 123, 4))
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
        c = augment_pair(x, cfg, view_rng(7, 123, 5))
        assert not np.array_equal(a[0], c[0])

    def test_mask_zeroes_coordinates(self):
        cfg = AugmentorConfig(noise_sigma=0.0, mask_prob=0.6, scale_lo=1.0, scale_hi=1.0)
        x = np.full(200, 5.0)
        views = augment_views(x, cfg, 1, np.random.default_rng(1))
        zeroed = np.mean(views[0] == 0.0)
        assert 0.4 < zeroed < 0.8

    def test_image_mode_crop_and_flip(self):
        cfg = AugmentorConfig(image_mode=True)
        img = np.arange(3072, dtype=float) / 3072.0
        views = augment_views(img, cfg, 4, np.random.default_rng(5))
        assert views.shape == (4, 3072)
        # padding means some crops contain zero rows/cols
        assert not np.array_equal(views[0], views[1])
        with pytest.raises(ConfigurationError):
            augment_views(np.ones(100), cfg, 1, np.random.default_rng(0))

    def test_paired_views_align_with_ids(self):
        ds = gen_synthetic(3, 6, 30, 5.0, seed=0)
        ids = ds.ids[[4, 2, 9]]
        xs, ys = paired_views_for_ids(ds, ids, AugmentorConfig(), seed=1, epoch=0)
        x0, y0 = augment_pair(ds.samples_for([ids[0]])[0], AugmentorConfig(), view_rng(1, int(ids[0]), 0))
        assert np.array_equal(xs[0], x0) and np.array_equal(ys[0], y0)

    def test_bad_config_rejected(self):
        with pytest.raises(ConfigurationError):
            AugmentorConfig(noise_sigma=-1.0)
        with pytest.raises(ConfigurationError):
            AugmentorConfig(mask_prob=1.0)
        with pytest.raises(ConfigurationError):
            AugmentorConfig(scale_lo=0.0)
        with pytest.raises(ConfigurationError):
            AugmentorConfig(scale_lo=1.2, scale_hi=0.8)


class TestSerialization:
    def test_dataset_round_trip(self, tmp_path):
        ds = gen_synthetic(3, 5, 40, 5.0, seed=3)
        path = str(tmp_path / "data.csv")
        save_dataset(ds, path)
        back = load_dataset(path)
        assert np.array_equal(back.ids, ds.ids)
        assert np.array_equal(back.labels, ds.labels)
        assert np.array_equal(back.samples, ds.samples)

    def test_splits_round_trip(self, tmp_path):
        ds = gen_synthetic(3, 4, 200, 5.0, seed=1)
        sp = split(ds, 0.15, 0.1, 0.05, seed=2)
        path = str(tmp_path / "splits.csv")
        save_splits(sp, path)
        back = load_splits(path)
        for part in ("train", "retain", "unlearn", "test", "validation"):
            assert np.array_equal(getattr(back, part), getattr(sp, part))

    def test_dataset_bad_header_rejected(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("foo,bar\n1,2\n")
        with pytest.raises(DataFormatError):
            load_dataset(str(p))

    def test_dataset_ragged_row_rejected(self, tmp_path):
        p = tmp_path / "ragged.csv"
        p.write_text("id,label,dim0\n0,1,0.5\n1,2\n")
        with pytest.raises(DataFormatError):
            load_dataset(str(p))

    def test_splits_bad_part_rejected(self, tmp_path):
        p = tmp_path / "sp.csv"
        p.write_text("id,part\n0,retain\n1,bogus\n")
        with pytest.raises(DataFormatError):
            load_splits(str(p))
