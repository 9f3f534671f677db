"""Datasets, semi-supervised splits and batch sampling.

Every example is stored as float32 in ``[0, 1]``. Image sets use ``(N, 3, 32,
32)``; the synthetic 2-D mixtures use ``(N, 2)``.
"""

from __future__ import annotations

import pickle
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional

import numpy as np

VALIDATION_FRACTION = 0.2

# labeled pool size per dataset (validation is carved out of this pool)
DEFAULT_LABELED = {
    "cifar10-subset": 4000,
    "svhn-subset": 1000,
    "gauss2d": 200,
    "rings2d": 200,
}

SUPPORTED = tuple(DEFAULT_LABELED)


class DatasetError(Exception):
    pass


@dataclass
class DatasetSplit:
    labeled_x: np.ndarray
    labeled_y: np.ndarray
    unlabeled_x: np.ndarray
    val_x: np.ndarray
    val_y: np.ndarray
    test_x: np.ndarray
    test_y: np.ndarray
    num_classes: int
    # positions in the source training set; -1 marks pseudo-labeled copies
    labeled_idx: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    unlabeled_idx: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    val_idx: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    pseudo_labeled: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))

    def __post_init__(self):
        if len(self.pseudo_labeled) != len(self.labeled_y):
            self.pseudo_labeled = np.zeros(len(self.labeled_y), dtype=bool)
        for name in ("labeled_y", "val_y", "test_y"):
            ys = getattr(self, name)
            if len(ys) and (ys.min() < 0 or ys.max() >= self.num_classes):
                raise DatasetError(f"{name} has class indices outside [0, {self.num_classes})")

    @property
    def example_shape(self) -> tuple:
        for arr in (self.labeled_x, self.unlabeled_x, self.test_x):
            if len(arr):
                return tuple(arr.shape[1:])
        raise DatasetError("split holds no examples")


@dataclass
class BatchPair:
    labeled_x: np.ndarray
    labeled_onehot: np.ndarray
    unlabeled_x: np.ndarray

    @property
    def labeled_y(self) -> np.ndarray:
        return self.labeled_onehot.argmax(axis=1)


@dataclass
class LabelMarginal:
    probabilities: np.ndarray

    def sample(self, rng: np.random.Generator, size: int) -> np.ndarray:
        return rng.choice(len(self.probabilities), size=size, p=self.probabilities)


def one_hot(labels: np.ndarray, num_classes: int) -> np.ndarray:
    out = np.zeros((len(labels), num_classes), dtype=np.float32)
    out[np.arange(len(labels)), labels] = 1.0
    return out


# --------------------------------------------------------------------------
# splitting
# --------------------------------------------------------------------------


def make_semisupervised_split(
    x: np.ndarray,
    y: np.ndarray,
    n_labeled: int,
    seed: int,
    num_classes: Optional[int] = None,
    test: Optional[tuple] = None,
    val_fraction: float = VALIDATION_FRACTION,
) -> DatasetSplit:
    """Keep labels on ``n_labeled`` random items and strip the rest.

    ``val_fraction`` of the labeled pool is held out as validation, so
    ``len(labeled) + len(validation) == n_labeled``.
    """
    n = len(x)
    if not 0 < n_labeled <= n:
        raise DatasetError(f"n_labeled must lie in (0, {n}], got {n_labeled}")
    num_classes = int(num_classes if num_classes is not None else y.max() + 1)
    rng = np.random.default_rng(seed)
    order = rng.permutation(n)
    pool, rest = np.sort(order[:n_labeled]), np.sort(order[n_labeled:])
    n_val = int(round(val_fraction * n_labeled))
    pool_order = rng.permutation(pool)
    val_idx, lab_idx = np.sort(pool_order[:n_val]), np.sort(pool_order[n_val:])
    if test is None:
        test_x, test_y = x[:0], y[:0]
    else:
        test_x, test_y = test
    return DatasetSplit(
        labeled_x=x[lab_idx],
        labeled_y=y[lab_idx].astype(np.int64),
        unlabeled_x=x[rest],
        val_x=x[val_idx],
        val_y=y[val_idx].astype(np.int64),
        test_x=test_x,
        test_y=np.asarray(test_y, dtype=np.int64),
        num_classes=num_classes,
        labeled_idx=lab_idx.astype(np.int64),
        unlabeled_idx=rest.astype(np.int64),
        val_idx=val_idx.astype(np.int64),
    )


def write_manifest(split: DatasetSplit, directory) -> Path:
    """One index per line for each partition, for exact re-creation."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name in ("labeled", "unlabeled", "val"):
        idx = getattr(split, f"{name}_idx")
        (directory / f"{name}.idx").write_text("".join(f"{int(i)}\n" for i in idx))
    return directory


def read_manifest(directory) -> dict:
    directory = Path(directory)
    out = {}
    for name in ("labeled", "unlabeled", "val"):
        text = (directory / f"{name}.idx").read_text().split()
        out[name] = np.array([int(t) for t in text], dtype=np.int64)
    return out


# --------------------------------------------------------------------------
# synthetic mixtures
# --------------------------------------------------------------------------


def gauss2d(n: int, n_components: int = 3, std: float = 0.02, radius: float = 0.15, seed: int = 0):
    """Isotropic Gaussian blobs on a circle around (0.5, 0.5), clipped to [0, 1]^2."""
    rng = np.random.default_rng(seed)
    angles = 2 * np.pi * np.arange(n_components) / n_components + np.pi / 2
    centers = 0.5 + radius * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    y = rng.integers(n_components, size=n)
    x = centers[y] + std * rng.standard_normal((n, 2))
    return np.clip(x, 0.0, 1.0).astype(np.float32), y.astype(np.int64)


def rings2d(n: int, n_components: int = 3, std: float = 0.02, seed: int = 0):
    """Concentric rings around (0.5, 0.5); ring k has radius 0.45 (k + 1) / n_components."""
    rng = np.random.default_rng(seed)
    y = rng.integers(n_components, size=n)
    r = 0.45 * (y + 1) / n_components + std * rng.standard_normal(n)
    theta = rng.uniform(0, 2 * np.pi, size=n)
    x = 0.5 + np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)
    return np.clip(x, 0.0, 1.0).astype(np.float32), y.astype(np.int64)


SYNTHETIC = {"gauss2d": gauss2d, "rings2d": rings2d}


# --------------------------------------------------------------------------
# image benchmarks
# --------------------------------------------------------------------------


def _load_cifar10(directory: Path):
    base = directory / "cifar-10-batches-py"
    if not base.is_dir():
        base = directory
    train_files = sorted(base.glob("data_batch_*"))
    test_file = base / "test_batch"
    if not train_files or not test_file.exists():
        raise DatasetError(f"CIFAR-10 python batches not found under {directory}")

    def read(path):
        try:
            with open(path, "rb") as fh:
                entry = pickle.load(fh, encoding="latin1")
            data = np.asarray(entry["data"], dtype=np.uint8).reshape(-1, 3, 32, 32)
            labels = np.asarray(entry["labels"], dtype=np.int64)
        except Exception as exc:  # corrupt pickle / missing keys
            raise DatasetError(f"corrupt CIFAR-10 batch {path}: {exc}") from exc
        return data, labels

    parts = [read(p) for p in train_files]
    x = np.concatenate([p[0] for p in parts])
    y = np.concatenate([p[1] for p in parts])
    tx, ty = read(test_file)
    return x, y, tx, ty


def _load_svhn(directory: Path):
    from scipy.io import loadmat

    def read(path):
        if not path.exists():
            raise DatasetError(f"SVHN file missing: {path}")
        try:
            mat = loadmat(path)
            data = np.transpose(mat["X"], (3, 2, 0, 1)).astype(np.uint8)
            labels = mat["y"].ravel().astype(np.int64)
        except Exception as exc:
            raise DatasetError(f"corrupt SVHN file {path}: {exc}") from exc
        labels[labels == 10] = 0
        return data, labels

    x, y = read(directory / "train_32x32.mat")
    tx, ty = read(directory / "test_32x32.mat")
    return x, y, tx, ty


IMAGE_LOADERS = {"cifar10-subset": _load_cifar10, "svhn-subset": _load_svhn}


def load_dataset(name: str, root=".", n_labeled: Optional[int] = None, seed: int = 0, **params) -> DatasetSplit:
    """Load a supported dataset and split it into labeled/unlabeled/val/test.

    Images are looked up under ``<root>/<name>/``. Synthetic sets accept
    ``n_unlabeled``, ``n_test``, ``n_components`` and shape parameters and
    are generated deterministically from ``seed``.
    """
    if name not in SUPPORTED:
        raise DatasetError(f"unknown dataset {name!r}; expected one of {SUPPORTED}")
    n_labeled = int(n_labeled if n_labeled is not None else DEFAULT_LABELED[name])
    if name in SYNTHETIC:
        gen = SYNTHETIC[name]
        n_unlabeled = int(params.pop("n_unlabeled", 2000))
        n_test = int(params.pop("n_test", 1000))
        n_components = int(params.pop("n_components", 3))
        x, y = gen(n_labeled + n_unlabeled, n_components=n_components, seed=seed, **params)
        tx, ty = gen(n_test, n_components=n_components, seed=seed + 10_000, **params)
        num_classes = n_components
    else:
        if params:
            raise DatasetError(f"unexpected parameters for {name}: {sorted(params)}")
        raw = IMAGE_LOADERS[name](Path(root) / name)
        x = raw[0].astype(np.float32) / 255.0
        tx = raw[2].astype(np.float32) / 255.0
        y, ty = raw[1], raw[3]
        num_classes = 10
    return make_semisupervised_split(x, y, n_labeled, seed=seed, num_classes=num_classes, test=(tx, ty))


# --------------------------------------------------------------------------
# batches and pseudo labels
# --------------------------------------------------------------------------


def sample_batch(split: DatasetSplit, sizes: tuple, rng: np.random.Generator) -> BatchPair:
    """Draw ``sizes = (labeled, unlabeled)`` items uniformly with replacement."""
    n_lab, n_unl = sizes
    if n_lab <= 0 or n_unl <= 0:
        raise DatasetError("batch sizes must be positive")
    if len(split.labeled_x) == 0 or len(split.unlabeled_x) == 0:
        raise DatasetError("cannot sample from an empty partition")
    li = rng.integers(len(split.labeled_x), size=n_lab)
    ui = rng.integers(len(split.unlabeled_x), size=n_unl)
    return BatchPair(
        labeled_x=split.labeled_x[li],
        labeled_onehot=one_hot(split.labeled_y[li], split.num_classes),
        unlabeled_x=split.unlabeled_x[ui],
    )


def augment_with_pseudo_labels(
    split: DatasetSplit, classify: Callable[[np.ndarray], np.ndarray], threshold: float = 0.95
) -> DatasetSplit:
    """Append confident unlabeled items to the labeled pool with hard labels.

    ``classify`` maps an example batch to softmax rows. Unlabeled items stay in
    the unlabeled pool for the classifier-discriminator game.
    """
    if len(split.unlabeled_x) == 0:
        return split
    probs = np.asarray(classify(split.unlabeled_x))
    keep = probs.max(axis=1) >= threshold
    if not keep.any():
        return split
    new_y = probs[keep].argmax(axis=1).astype(np.int64)
    return replace(
        split,
        labeled_x=np.concatenate([split.labeled_x, split.unlabeled_x[keep]]),
        labeled_y=np.concatenate([split.labeled_y, new_y]),
        labeled_idx=np.concatenate([split.labeled_idx, np.full(keep.sum(), -1, dtype=np.int64)]),
        pseudo_labeled=np.concatenate([split.pseudo_labeled, np.ones(keep.sum(), dtype=bool)]),
    )


def label_marginal(split: DatasetSplit) -> LabelMarginal:
    if len(split.labeled_y) == 0:
        raise DatasetError("label marginal needs at least one labeled item")
    counts = np.bincount(split.labeled_y, minlength=split.num_classes).astype(np.float64)
    return LabelMarginal(counts / counts.sum())
