import numpy as np
import pytest
from numpy.testing import assert_array_equal

from noisylabels.datagen import (BlobSpec, LabeledDataset, empirical_flip_matrix, generate_blobs,
                                 inject_noise, load_dataset, nearest_mean_predict, save_dataset,
                                 simplex_means, split)
from noisylabels.errors import ContractViolation, ParseError, ValidationError
from noisylabels.transition import circulant_matrix, identity_matrix, rre, symmetric_matrix


def test_blobs_are_reproducible():
    spec = BlobSpec(c=3, d=5, n_per_class=20, seed=9)
    assert generate_blobs(spec) == generate_blobs(spec)
    assert generate_blobs(spec) != generate_blobs(BlobSpec(c=3, d=5, n_per_class=20, seed=10))


def test_blob_layout():
    data = generate_blobs(BlobSpec(c=4, d=16, n_per_class=30, seed=1))
    assert (data.n, data.d, data.c) == (120, 16, 4)
    assert_array_equal(np.bincount(data.clean_labels), [30, 30, 30, 30])
    assert data.noisy_labels is None


def test_simplex_means_are_equidistant():
    means = simplex_means(4, 6, separation=6.0)
    distances = {round(float(np.linalg.norm(means[i] - means[j])), 9)
                 for i in range(4) for j in range(i + 1, 4)}
    assert distances == {6.0}


def test_simplex_means_need_enough_dimensions():
    with pytest.raises(ContractViolation):
        simplex_means(4, 3, 1.0)


def test_separated_blobs_are_nearly_perfectly_classified():
    spec = BlobSpec(c=4, d=16, n_per_class=500, seed=2)
    data = generate_blobs(spec)
    accuracy = np.mean(nearest_mean_predict(data.features, spec.class_means) == data.clean_labels)
    assert accuracy >= 0.99


def test_invalid_blob_specs():
    with pytest.raises(ContractViolation):
        BlobSpec(n_per_class=0)
    with pytest.raises(ContractViolation):
        BlobSpec(noise_sigma=0.0)
    with pytest.raises(ContractViolation):
        BlobSpec(c=2, d=3, class_means=np.zeros((3, 3)))


def test_identity_noise_changes_nothing(small_blobs):
    noisy = inject_noise(small_blobs, identity_matrix(4), seed=0)
    assert_array_equal(noisy.noisy_labels, small_blobs.clean_labels)


def test_noise_injection_is_deterministic(small_blobs, circulant):
    a = inject_noise(small_blobs, circulant, seed=7)
    b = inject_noise(small_blobs, circulant, seed=7)
    assert_array_equal(a.noisy_labels, b.noisy_labels)
    assert_array_equal(a.clean_labels, small_blobs.clean_labels)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_empirical_flips_match_symmetric_matrix(seed):
    T = symmetric_matrix(4, 0.6)
    data = generate_blobs(BlobSpec(c=4, d=4, n_per_class=25000, seed=seed))
    noisy = inject_noise(data, T, seed=seed + 100)
    assert rre(T, empirical_flip_matrix(noisy)) < 0.02


def balanced_labels(n, c=4):
    return LabeledDataset(np.zeros((n, 1)), np.arange(n) % c, c)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_empirical_flips_match_circulant_matrix(seed):
    T = circulant_matrix(4, 0.3)
    noisy = inject_noise(balanced_labels(40_000), T, seed=seed)
    assert rre(T, empirical_flip_matrix(noisy)) < 0.02


def test_flip_estimate_improves_with_more_samples(circulant):
    medians = []
    for n in (1_000, 10_000, 100_000):
        errors = [rre(circulant, empirical_flip_matrix(inject_noise(balanced_labels(n), circulant, seed=s)))
                  for s in range(3)]
        medians.append(np.median(errors))
    assert medians[0] >= medians[1] >= medians[2]


def test_circulant_noise_only_flips_to_next_class(small_blobs, circulant):
    noisy = inject_noise(small_blobs, circulant, seed=3)
    flipped = noisy.noisy_labels != noisy.clean_labels
    assert_array_equal(noisy.noisy_labels[flipped], (noisy.clean_labels[flipped] + 1) % 4)


def test_noise_matrix_must_match_and_be_valid(small_blobs):
    with pytest.raises(ContractViolation):
        inject_noise(small_blobs, identity_matrix(3), seed=0)
    with pytest.raises(ValidationError):
        inject_noise(small_blobs, np.full((4, 4), 0.5), seed=0)


def test_empirical_flip_matrix_needs_every_class():
    data = LabeledDataset(np.zeros((2, 1)), [0, 0], 2, noisy_labels=[0, 1])
    with pytest.raises(ContractViolation, match="class 1"):
        empirical_flip_matrix(data)


def test_split_partitions_everything(small_blobs):
    train, val = split(small_blobs, 0.8, seed=1)
    assert (train.n, val.n) == (160, 40)
    rows = np.concatenate([train.features, val.features])
    assert sorted(map(tuple, rows)) == sorted(map(tuple, small_blobs.features))


def test_split_depends_on_seed(small_blobs):
    a, _ = split(small_blobs, 0.8, seed=1)
    b, _ = split(small_blobs, 0.8, seed=1)
    c, _ = split(small_blobs, 0.8, seed=2)
    assert a == b
    assert a != c


def test_split_never_leaves_a_partition_empty():
    data = LabeledDataset(np.zeros((2, 1)), [0, 1], 2)
    with pytest.raises(ContractViolation):
        split(data, 0.9, seed=0)
    with pytest.raises(ContractViolation):
        split(data, 1.0, seed=0)


def test_dataset_validation():
    with pytest.raises(ContractViolation):
        LabeledDataset(np.zeros((3, 2)), [0, 1], 2)
    with pytest.raises(ContractViolation):
        LabeledDataset(np.zeros((2, 2)), [0, 2], 2)
    with pytest.raises(ContractViolation):
        LabeledDataset(np.array([[np.nan], [0.0]]), [0, 1], 2)


def test_dataset_file_round_trip(tmp_path, small_blobs, circulant):
    noisy = inject_noise(small_blobs, circulant, seed=1)
    for data in (small_blobs, noisy):
        path = tmp_path / "data.txt"
        save_dataset(data, path)
        assert load_dataset(path) == data


@pytest.mark.parametrize("content, line", [
    ("2 1 2\n0,0,1.0\n", 3),
    ("2 1 2\n0,0,1.0\n1,1\n", 3),
    ("2 1 2\n0,0,1.0\n1,-,2.0\n", 3),
    ("2 1 2\n0,0,1.0\n5,1,2.0\n", 3),
    ("2 1 2\n0,0,abc\n1,1,2.0\n", 2),
    ("2 1 2\n0,0,1.0\n1,1,2.0\nextra\n", 4),
    ("2 1\n", 1),
])
def test_malformed_dataset_files(tmp_path, content, line):
    path = tmp_path / "bad.txt"
    path.write_text(content)
    with pytest.raises(ParseError) as info:
        load_dataset(path)
    assert info.value.line == line
