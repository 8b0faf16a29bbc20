"""Synthetic datasets, label-noise injection, splitting and dataset files.

Datasets are Gaussian blobs: class k is its mean plus isotropic noise. The
noisy labels are drawn class-conditionally from a transition matrix, so
P(noisy = j | clean = i) = T[i, j] independently of the features.

All random draws use numpy's PCG64 generator (`numpy.random.default_rng`)
seeded with the seed that is recorded in the dataset provenance.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ContractViolation, ParseError
from .transition import TransitionMatrix, as_array, require_valid

logger = logging.getLogger(__name__)


def _frozen(array, dtype):
    array = np.array(array, dtype=dtype)
    array.flags.writeable = False
    return array


@dataclass(eq=False)
class LabeledDataset:
    features: np.ndarray
    clean_labels: np.ndarray
    c: int
    noisy_labels: Optional[np.ndarray] = None
    provenance: str = ""

    def __post_init__(self):
        self.features = _frozen(self.features, np.float64)
        self.clean_labels = _frozen(self.clean_labels, np.int64)
        if self.noisy_labels is not None:
            self.noisy_labels = _frozen(self.noisy_labels, np.int64)

        n = len(self.clean_labels)
        if self.features.ndim != 2 or self.features.shape[0] != n:
            raise ContractViolation(
                f"features of shape {self.features.shape} do not match {n} labels")
        if self.c < 1:
            raise ContractViolation(f"class count must be positive, got {self.c}")
        if not np.all(np.isfinite(self.features)):
            raise ContractViolation("features contain non-finite values")
        for name in ("clean_labels", "noisy_labels"):
            labels = getattr(self, name)
            if labels is None:
                continue
            if len(labels) != n:
                raise ContractViolation(f"{name} has length {len(labels)}, expected {n}")
            if n and (labels.min() < 0 or labels.max() >= self.c):
                raise ContractViolation(f"{name} outside [0, {self.c})")

    @property
    def n(self):
        return len(self.clean_labels)

    @property
    def d(self):
        return self.features.shape[1]

    def __len__(self):
        return self.n

    def __eq__(self, other):
        if not isinstance(other, LabeledDataset):
            return NotImplemented
        if (self.noisy_labels is None) != (other.noisy_labels is None):
            return False
        return (self.c == other.c
                and np.array_equal(self.features, other.features)
                and np.array_equal(self.clean_labels, other.clean_labels)
                and (self.noisy_labels is None
                     or np.array_equal(self.noisy_labels, other.noisy_labels)))

    def targets(self):
        """Training targets: the noisy labels when present"""
        return self.clean_labels if self.noisy_labels is None else self.noisy_labels

    def subset(self, indices, provenance=None):
        indices = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(
            self.features[indices], self.clean_labels[indices], self.c,
            None if self.noisy_labels is None else self.noisy_labels[indices],
            self.provenance if provenance is None else provenance)

    def with_noisy_labels(self, noisy_labels, provenance=None):
        return LabeledDataset(
            self.features, self.clean_labels, self.c, noisy_labels,
            self.provenance if provenance is None else provenance)


# ------------------------------------------------------------------------
# Gaussian blobs

def simplex_means(c, d, separation):
    """Vertices of a regular simplex with pairwise distance `separation`"""
    if d < c:
        raise ContractViolation(f"simplex means need dim >= classes, got d={d} c={c}")
    means = np.zeros((c, d))
    means[:, :c] = np.eye(c) * separation / np.sqrt(2.0)
    return means - means.mean(axis=0)


@dataclass
class BlobSpec:
    c: int = 4
    d: int = 16
    n_per_class: int = 2500
    noise_sigma: float = 1.0
    seed: int = 0
    separation: float = 6.0  # in units of noise_sigma, used for default means
    class_means: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        if self.c < 1 or self.d < 1:
            raise ContractViolation(f"need c >= 1 and d >= 1, got c={self.c} d={self.d}")
        if self.n_per_class < 1:
            raise ContractViolation(f"n_per_class must be at least 1, got {self.n_per_class}")
        if not self.noise_sigma > 0:
            raise ContractViolation(f"noise_sigma must be positive, got {self.noise_sigma}")
        if self.class_means is None:
            self.class_means = simplex_means(self.c, self.d, self.separation * self.noise_sigma)
        self.class_means = np.asarray(self.class_means, dtype=np.float64)
        if self.class_means.shape != (self.c, self.d):
            raise ContractViolation(
                f"class_means has shape {self.class_means.shape}, expected {(self.c, self.d)}")

    def describe(self):
        return (f"blobs c={self.c} d={self.d} n_per_class={self.n_per_class} "
                f"sigma={self.noise_sigma!r} seed={self.seed}")


def generate_blobs(spec):
    rng = np.random.default_rng(spec.seed)
    features = np.concatenate([
        spec.class_means[k] + spec.noise_sigma * rng.standard_normal((spec.n_per_class, spec.d))
        for k in range(spec.c)])
    labels = np.repeat(np.arange(spec.c), spec.n_per_class)
    logger.debug(f"generated {spec.describe()}")
    return LabeledDataset(features, labels, spec.c, provenance=spec.describe())


def nearest_mean_predict(features, class_means):
    distance = ((features[:, None, :] - class_means[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(distance, axis=1)


# ------------------------------------------------------------------------
# label noise

def inject_noise(data, T, seed):
    """Copy of `data` with noisy labels drawn from the rows of T"""
    entries = as_array(T)
    if entries.shape != (data.c, data.c):
        raise ContractViolation(
            f"transition matrix is {entries.shape} but the dataset has {data.c} classes")
    require_valid(T if isinstance(T, TransitionMatrix) else entries)

    rng = np.random.default_rng(seed)
    u = rng.random(data.n)
    cumulative = np.cumsum(entries, axis=1)[data.clean_labels]
    noisy = np.minimum((u[:, None] >= cumulative).sum(axis=1), data.c - 1)

    flipped = np.count_nonzero(noisy != data.clean_labels)
    logger.debug(f"injected noise with seed {seed}: {flipped} of {data.n} labels flipped")
    return data.with_noisy_labels(noisy, provenance=f"{data.provenance} noise_seed={seed}")


def empirical_flip_matrix(data):
    if data.noisy_labels is None:
        raise ContractViolation("dataset has no noisy labels")
    counts = np.zeros((data.c, data.c))
    np.add.at(counts, (data.clean_labels, data.noisy_labels), 1.0)
    totals = counts.sum(axis=1, keepdims=True)
    missing = np.flatnonzero(totals[:, 0] == 0)
    if missing.size:
        raise ContractViolation(f"class {missing[0]} has no samples")
    return counts / totals


def split(data, train_fraction, seed):
    """Shuffled partition into (train, validation)"""
    if not 0 < train_fraction < 1:
        raise ContractViolation(f"train_fraction must be in (0, 1), got {train_fraction}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(data.n)
    n_train = int(round(train_fraction * data.n))
    if n_train == 0 or n_train == data.n:
        raise ContractViolation(
            f"split of {data.n} samples at {train_fraction} leaves an empty partition")
    return (data.subset(order[:n_train], f"{data.provenance} split={seed}:train"),
            data.subset(order[n_train:], f"{data.provenance} split={seed}:val"))


# ------------------------------------------------------------------------
# dataset files
#
# line 1: "n d c", then n lines "clean,noisy,f1,...,fd" where noisy is an
# integer or "-" when the dataset has no noisy labels

def save_dataset(data, path):
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"{data.n} {data.d} {data.c}\n")
        for i in range(data.n):
            noisy = "-" if data.noisy_labels is None else str(int(data.noisy_labels[i]))
            values = ",".join(repr(float(x)) for x in data.features[i])
            f.write(f"{int(data.clean_labels[i])},{noisy},{values}\n")
    logger.info(f"wrote {data.n} samples to {path}")


class DatasetReader:
    """Reader for the text dataset format

    Keeps track of the line number so that every parse error can name the
    offending line."""

    def __init__(self, path):
        self.path = str(path)
        self.line_number = 0
        self.infile = open(self.path, "r", encoding="utf-8")

    def read_line(self):
        self.line_number += 1
        line = self.infile.readline()
        logger.debug(f"L.{self.line_number:8d}  {line.rstrip()}")
        return line

    def error(self, message):
        return ParseError(self.path, self.line_number, message)

    def read(self):
        try:
            return self._read()
        finally:
            self.infile.close()

    def _read(self):
        header = self.read_line().split()
        if len(header) != 3:
            raise self.error("malformed header, expected 'n d c'")
        try:
            n, d, c = (int(x) for x in header)
        except ValueError:
            raise self.error("malformed header, expected three integers") from None
        if n < 0 or d < 1 or c < 1:
            raise self.error(f"invalid header values n={n} d={d} c={c}")

        features = np.empty((n, d))
        clean = np.empty(n, dtype=np.int64)
        noisy = np.empty(n, dtype=np.int64)
        has_noisy = None

        for i in range(n):
            line = self.read_line()
            if not line:
                raise self.error(f"unexpected end of file after {i} of {n} samples")
            fields = line.rstrip("\n").split(",")
            if len(fields) != d + 2:
                raise self.error(f"expected {d + 2} fields, got {len(fields)}")

            clean[i] = self.parse_label(fields[0], c)
            if fields[1].strip() == "-":
                row_has_noisy = False
            else:
                row_has_noisy = True
                noisy[i] = self.parse_label(fields[1], c)
            if has_noisy is None:
                has_noisy = row_has_noisy
            elif has_noisy != row_has_noisy:
                raise self.error("noisy label column mixes labels and '-'")

            try:
                features[i] = [float(x) for x in fields[2:]]
            except ValueError:
                raise self.error("feature is not a number") from None
            if not np.all(np.isfinite(features[i])):
                raise self.error("non-finite feature")

        if self.read_line().strip():
            raise self.error(f"extra data after {n} samples")

        return LabeledDataset(features, clean, c, noisy if has_noisy else None,
                              provenance=f"file {self.path}")

    def parse_label(self, text, c):
        try:
            label = int(text)
        except ValueError:
            raise self.error(f"label '{text}' is not an integer") from None
        if not 0 <= label < c:
            raise self.error(f"label {label} outside [0, {c})")
        return label


def load_dataset(path):
    data = DatasetReader(path).read()
    logger.info(f"read {data.n} samples ({data.d} features, {data.c} classes) from {path}")
    return data
