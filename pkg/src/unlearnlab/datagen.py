"""Datasets, train/unlearn splits, and stochastic view augmentation.

Two data sources: synthetic Gaussian clusters for desk-scale runs, and
CIFAR-10 binary batches (3073-byte records: label byte then 3x32x32
pixels).  Augmentation produces the paired "views" that contrastive
training and the audits consume; every view is reproducible from
(seed, sample id, epoch).
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass
from fractions import Fraction
from glob import glob

import numpy as np

from . import seeds
from .errors import ConfigurationError, DataFormatError

CIFAR_RECORD_BYTES = 3073
CIFAR_PIXELS = 3072
_CIFAR_ID_STRIDE = 100000  # id = file_index * stride + record_index


@dataclass
class LabeledDataset:
    """Row-aligned samples, integer labels, and stable unique ids."""

    samples: np.ndarray
    labels: np.ndarray
    ids: np.ndarray

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.ids = np.asarray(self.ids, dtype=np.int64)
        if self.samples.ndim != 2:
            raise ConfigurationError("samples must be a 2-d array")
        n = self.samples.shape[0]
        if self.labels.shape != (n,) or self.ids.shape != (n,):
            raise ConfigurationError("labels/ids must align with samples")
        if len(np.unique(self.ids)) != n:
            raise ConfigurationError("sample ids must be unique")
        self._row_of = {int(i): k for k, i in enumerate(self.ids)}

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def dim(self) -> int:
        return self.samples.shape[1]

    def rows_for(self, ids) -> np.ndarray:
        """Row indices for the given ids, in the given order."""
        try:
            return np.array([self._row_of[int(i)] for i in ids], dtype=np.int64)
        except KeyError as e:
            raise ConfigurationError(f"unknown sample id {e.args[0]}") from None

    def samples_for(self, ids) -> np.ndarray:
        return self.samples[self.rows_for(ids)]

    def labels_for(self, ids) -> np.ndarray:
        return self.labels[self.rows_for(ids)]


@dataclass
class Splits:
    """Partition of a dataset by id: train = retain + unlearn, plus held-out
    test and validation sets.  All arrays are sorted ids."""

    train: np.ndarray
    retain: np.ndarray
    unlearn: np.ndarray
    test: np.ndarray
    validation: np.ndarray

    def __post_init__(self):
        for name in ("train", "retain", "unlearn", "test", "validation"):
            arr = np.sort(np.asarray(getattr(self, name), dtype=np.int64))
            setattr(self, name, arr)
        if len(self.retain) == 0 or len(self.unlearn) == 0:
            raise ConfigurationError("retain and unlearn sets must be non-empty")
        merged = np.sort(np.concatenate([self.retain, self.unlearn]))
        if not np.array_equal(merged, self.train):
            raise ConfigurationError("retain + unlearn must partition train")
        if len(np.intersect1d(self.retain, self.unlearn)):
            raise ConfigurationError("retain and unlearn overlap")
        held = np.concatenate([self.test, self.validation])
        if len(np.intersect1d(self.train, held)):
            raise ConfigurationError("held-out ids overlap the train set")
        if len(np.intersect1d(self.test, self.validation)):
            raise ConfigurationError("test and validation overlap")

    def unlearn_retain_ratio(self) -> Fraction:
        """|unlearn| / |retain| as an exact rational."""
        return Fraction(len(self.unlearn), len(self.retain))


@dataclass
class AugmentorConfig:
    """Strengths for the stochastic view generator.

    Vector mode: multiplicative scale drawn from [scale_lo, scale_hi],
    additive Gaussian noise with noise_sigma, then coordinate dropout with
    mask_prob.  Image mode treats a 3072-vector as 3x32x32, pads 4 zero
    pixels, random-crops back to 32 and flips horizontally half the time.
    All strengths at zero gives the identity augmentation, which is useful
    for audits but produces degenerate contrastive training signal.
    """

    noise_sigma: float = 0.1
    mask_prob: float = 0.05
    scale_lo: float = 0.9
    scale_hi: float = 1.1
    image_mode: bool = False

    def __post_init__(self):
        if self.noise_sigma < 0:
            raise ConfigurationError("noise_sigma must be >= 0")
        if not 0.0 <= self.mask_prob < 1.0:
            raise ConfigurationError("mask_prob must be in [0, 1)")
        if not 0.0 < self.scale_lo <= self.scale_hi:
            raise ConfigurationError("need 0 < scale_lo <= scale_hi")

    @classmethod
    def identity(cls) -> "AugmentorConfig":
        return cls(noise_sigma=0.0, mask_prob=0.0, scale_lo=1.0, scale_hi=1.0)

    @property
    def is_identity(self) -> bool:
        return (
            not self.image_mode
            and self.noise_sigma == 0.0
            and self.mask_prob == 0.0
            and self.scale_lo == 1.0
            and self.scale_hi == 1.0
        )


def gen_synthetic(
    num_clusters: int, dim: int, n: int, separation: float, seed: int
) -> LabeledDataset:
    """Isotropic unit-variance Gaussian clusters whose means are at mutual
    distance >= separation.  Labels cycle through clusters so counts are
    balanced; ids are 0..n-1."""
    if num_clusters < 2:
        raise ConfigurationError("need at least 2 clusters")
    if dim < 1 or n < num_clusters:
        raise ConfigurationError("need dim >= 1 and n >= num_clusters")
    if separation <= 0:
        raise ConfigurationError("separation must be > 0")
    rng = seeds.stream_rng(seed, seeds.SYNTH_MEANS)
    means = None
    # rejection-sample the mean layout; scale grows with separation so this
    # converges quickly for any reasonable geometry
    for _ in range(200):
        cand = rng.normal(scale=max(separation, 1.0), size=(num_clusters, dim))
        dists = np.linalg.norm(cand[:, None, :] - cand[None, :, :], axis=2)
        np.fill_diagonal(dists, np.inf)
        if dists.min() >= separation:
            means = cand
            break
    if means is None:
        raise ConfigurationError(
            f"could not place {num_clusters} means at separation {separation} in dim {dim}"
        )
    labels = np.arange(n, dtype=np.int64) % num_clusters
    noise = seeds.stream_rng(seed, seeds.SYNTH_SAMPLES).standard_normal((n, dim))
    return LabeledDataset(means[labels] + noise, labels, np.arange(n, dtype=np.int64))


def _parse_cifar_file(path: str, file_index: int):
    size = os.path.getsize(path)
    if size == 0 or size % CIFAR_RECORD_BYTES != 0:
        raise DataFormatError(
            f"{path}: size {size} is not a positive multiple of {CIFAR_RECORD_BYTES}"
        )
    with open(path, "rb") as f:
        raw = np.frombuffer(f.read(), dtype=np.uint8)
    recs = raw.reshape(-1, CIFAR_RECORD_BYTES)
    labels = recs[:, 0].astype(np.int64)
    bad = np.nonzero(labels > 9)[0]
    if len(bad):
        off = int(bad[0]) * CIFAR_RECORD_BYTES
        raise DataFormatError(
            f"{path}: label {int(labels[bad[0]])} > 9 at record {int(bad[0])} (byte offset {off})"
        )
    samples = recs[:, 1:].astype(np.float64) / 255.0
    ids = file_index * _CIFAR_ID_STRIDE + np.arange(recs.shape[0], dtype=np.int64)
    return samples, labels, ids


def load_cifar10(path: str) -> LabeledDataset:
    """Read CIFAR-10 binary batches from a file or a directory of *.bin
    files (sorted by name).  Pixels are scaled to [0, 1]; ids encode
    (file index, record index)."""
    if os.path.isdir(path):
        files = sorted(glob(os.path.join(path, "*.bin")))
        if not files:
            raise DataFormatError(f"{path}: no *.bin batch files found")
    elif os.path.isfile(path):
        files = [path]
    else:
        raise DataFormatError(f"{path}: no such file or directory")
    parts = [_parse_cifar_file(p, i) for i, p in enumerate(files)]
    samples = np.concatenate([p[0] for p in parts])
    labels = np.concatenate([p[1] for p in parts])
    ids = np.concatenate([p[2] for p in parts])
    return LabeledDataset(samples, labels, ids)


def split(
    data: LabeledDataset,
    unlearn_fraction: float,
    test_fraction: float = 0.0,
    val_fraction: float = 0.0,
    seed: int = 0,
) -> Splits:
    """Random id partition.  test/val are carved off first, the rest is the
    train set, and unlearn_fraction of the train set becomes the unlearn
    target.  Deterministic in (data ids, fractions, seed)."""
    if not 0.0 < unlearn_fraction < 1.0:
        raise ConfigurationError("unlearn_fraction must be in (0, 1)")
    for name, f in (("test_fraction", test_fraction), ("val_fraction", val_fraction)):
        if not 0.0 <= f < 1.0:
            raise ConfigurationError(f"{name} must be in [0, 1)")
    if test_fraction + val_fraction >= 1.0:
        raise ConfigurationError("test_fraction + val_fraction must be < 1")
    n = len(data)
    perm = seeds.stream_rng(seed, seeds.SPLIT).permutation(data.ids)
    n_test = int(round(test_fraction * n))
    n_val = int(round(val_fraction * n))
    test = perm[:n_test]
    validation = perm[n_test : n_test + n_val]
    train = perm[n_test + n_val :]
    n_unlearn = int(round(unlearn_fraction * len(train)))
    if n_unlearn < 1 or n_unlearn >= len(train):
        raise ConfigurationError(
            f"unlearn_fraction {unlearn_fraction} leaves an empty unlearn or retain set"
        )
    # train is already in random order, so a prefix is a uniform subset
    unlearn = train[:n_unlearn]
    retain = train[n_unlearn:]
    return Splits(train=train, retain=retain, unlearn=unlearn, test=test, validation=validation)


def _augment_vector(sample: np.ndarray, cfg: AugmentorConfig, rng) -> np.ndarray:
    scale = rng.uniform(cfg.scale_lo, cfg.scale_hi)
    noise = rng.standard_normal(sample.shape[0])
    gate = rng.random(sample.shape[0])
    view = sample * scale + cfg.noise_sigma * noise
    if cfg.mask_prob > 0.0:
        view = np.where(gate < cfg.mask_prob, 0.0, view)
    return view


def _augment_image(sample: np.ndarray, cfg: AugmentorConfig, rng) -> np.ndarray:
    if sample.shape[0] != CIFAR_PIXELS:
        raise ConfigurationError("image mode needs 3072-dimensional samples")
    img = sample.reshape(3, 32, 32)
    padded = np.pad(img, ((0, 0), (4, 4), (4, 4)))
    top = int(rng.integers(0, 9))
    left = int(rng.integers(0, 9))
    crop = padded[:, top : top + 32, left : left + 32]
    if rng.random() < 0.5:
        crop = crop[:, :, ::-1]
    return crop.reshape(-1).copy()


def augment_views(sample, cfg: AugmentorConfig, n_views: int, rng) -> np.ndarray:
    """n_views independent stochastic views of one sample, shape (n, d)."""
    sample = np.asarray(sample, dtype=np.float64).ravel()
    if n_views < 1:
        raise ConfigurationError("n_views must be >= 1")
    fn = _augment_image if cfg.image_mode else _augment_vector
    return np.stack([fn(sample, cfg, rng) for _ in range(n_views)])


def augment_pair(sample, cfg: AugmentorConfig, rng) -> tuple[np.ndarray, np.ndarray]:
    """Two views of one sample (the positive pair)."""
    views = augment_views(sample, cfg, 2, rng)
    return views[0], views[1]


def view_rng(seed: int, sample_id: int, epoch: int) -> np.random.Generator:
    """The rng used for one sample's training views in one epoch."""
    return seeds.stream_rng(seed, seeds.AUGMENT, sample_id, epoch)


def paired_views_for_ids(
    data: LabeledDataset, ids, cfg: AugmentorConfig, seed: int, epoch: int
) -> tuple[np.ndarray, np.ndarray]:
    """Per-id positive pairs as two row-aligned matrices."""
    rows = data.rows_for(ids)
    xs = np.empty((len(rows), data.dim))
    ys = np.empty((len(rows), data.dim))
    for k, (sid, row) in enumerate(zip(ids, rows)):
        xs[k], ys[k] = augment_pair(data.samples[row], cfg, view_rng(seed, int(sid), epoch))
    return xs, ys


# --- plain-text serialization -------------------------------------------------

def save_dataset(data: LabeledDataset, path: str) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["id", "label"] + [f"dim{j}" for j in range(data.dim)])
        for i in range(len(data)):
            w.writerow(
                [int(data.ids[i]), int(data.labels[i])]
                + [f"{v:.17g}" for v in data.samples[i]]
            )


def load_dataset(path: str) -> LabeledDataset:
    if not os.path.isfile(path):
        raise DataFormatError(f"{path}: no such file")
    with open(path, newline="") as f:
        reader = csv.reader(f)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty dataset file") from None
        if header[:2] != ["id", "label"]:
            raise DataFormatError(f"{path}: expected 'id,label,dim0,...' header")
        dim = len(header) - 2
        ids, labels, rows = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != dim + 2:
                raise DataFormatError(f"{path}:{lineno}: expected {dim + 2} columns")
            try:
                ids.append(int(row[0]))
                labels.append(int(row[1]))
                rows.append([float(v) for v in row[2:]])
            except ValueError as e:
                raise DataFormatError(f"{path}:{lineno}: {e}") from None
    if not ids:
        raise DataFormatError(f"{path}: dataset has no rows")
    try:
        return LabeledDataset(np.array(rows), np.array(labels), np.array(ids))
    except ConfigurationError as e:
        raise DataFormatError(f"{path}: {e}") from None


_SPLIT_PARTS = ("retain", "unlearn", "test", "validation")


def save_splits(splits: Splits, path: str) -> None:
    pairs = []
    for part in _SPLIT_PARTS:
        pairs.extend((int(i), part) for i in getattr(splits, part))
    pairs.sort()
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["id", "part"])
        w.writerows(pairs)


def load_splits(path: str) -> Splits:
    if not os.path.isfile(path):
        raise DataFormatError(f"{path}: no such file")
    buckets: dict[str, list[int]] = {p: [] for p in _SPLIT_PARTS}
    with open(path, newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["id", "part"]:
            raise DataFormatError(f"{path}: expected 'id,part' header")
        for lineno, row in enumerate(reader, start=2):
            if len(row) != 2 or row[1] not in buckets:
                raise DataFormatError(f"{path}:{lineno}: bad split row {row!r}")
            try:
                buckets[row[1]].append(int(row[0]))
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: bad id {row[0]!r}") from None
    train = np.array(sorted(buckets["retain"] + buckets["unlearn"]), dtype=np.int64)
    try:
        return Splits(
            train=train,
            retain=np.array(buckets["retain"], dtype=np.int64),
            unlearn=np.array(buckets["unlearn"], dtype=np.int64),
            test=np.array(buckets["test"], dtype=np.int64),
            validation=np.array(buckets["validation"], dtype=np.int64),
        )
    except ConfigurationError as e:
        raise DataFormatError(f"{path}: {e}") from None
