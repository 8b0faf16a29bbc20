import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from noisylabels.errors import ContractViolation, DomainError, ParseError, ValidationError
from noisylabels.transition import (RevisionMode, TransitionMatrix, circulant_matrix,
                                    effective_matrix, estimate_anchor, identity_matrix, load_matrix,
                                    make_matrix, mean_matrix, require_valid, rre, save_matrix,
                                    symmetric_matrix, validate)


def test_printed_circulant_estimate(printed):
    true, estimate = printed["circulant"]
    assert rre(true, estimate) == pytest.approx(0.047, abs=0.002)


def test_printed_symmetric_estimate(printed):
    true, estimate = printed["symmetric"]
    assert validate(true).valid
    assert rre(true, estimate) <= 0.01


def test_printed_unknown_estimate(printed):
    estimate = printed["unknown"]
    assert np.all(estimate >= 0)
    assert_allclose(estimate.sum(axis=1), 1.0, atol=5e-3)

    report = validate(estimate)
    assert not report.valid
    assert {v.kind for v in report.violations} == {"row_sum"}
    assert {v.row for v in report.violations} == {1, 2, 3}


def test_presets_match_printed_truth(printed, circulant, symmetric):
    assert_array_equal(circulant.entries, printed["circulant"][0])
    assert_allclose(symmetric.entries, printed["symmetric"][0])


def test_validation_reports_every_violation():
    report = validate([[0.9, 0.0], [-0.01, 1.01]])
    assert not report.valid
    assert [(v.row, v.col, v.kind) for v in report.violations] == [(1, 0, "negative"), (0, -1, "row_sum")]
    assert "row 0" in str(report)
    assert "cell (1, 0)" in str(report)
    with pytest.raises(ValidationError) as info:
        report.matrix
    assert info.value.report is report


def test_require_valid():
    T = require_valid([[1.0, 0.0], [0.5, 0.5]])
    assert isinstance(T, TransitionMatrix) and T.validated
    with pytest.raises(ValidationError):
        require_valid([[1.0, 0.1], [0.5, 0.5]])


def test_matrices_are_square_and_read_only():
    with pytest.raises(ContractViolation):
        TransitionMatrix(np.ones((2, 3)))
    T = identity_matrix(3)
    with pytest.raises(ValueError):
        T.entries[0, 0] = 2.0


def test_matrix_families():
    assert_array_equal(identity_matrix(3).entries, np.eye(3))
    assert_allclose(circulant_matrix(3, 0.25).entries[2], [0.25, 0.0, 0.75])
    assert_allclose(symmetric_matrix(3, 0.5).entries[0], [0.5, 0.25, 0.25])
    with pytest.raises(ContractViolation):
        circulant_matrix(4, 1.5)
    with pytest.raises(ContractViolation):
        symmetric_matrix(1, 0.5)


def test_make_matrix(tmp_path, circulant):
    assert make_matrix("circulant0.3", 4) == circulant
    assert make_matrix(circulant, 4) is circulant
    assert make_matrix(np.eye(2).tolist(), 2).validated

    path = tmp_path / "T.txt"
    save_matrix(circulant, path)
    assert make_matrix(str(path), 4) == circulant

    with pytest.raises(ContractViolation):
        make_matrix(circulant, 3)
    with pytest.raises(ValidationError):
        make_matrix([[0.5, 0.6], [0.5, 0.5]], 2)
    assert not make_matrix([[0.5, 0.6], [0.5, 0.5]], 2, check=False).validated


def test_alpha_revision_with_zero_slack_is_unchanged(circulant):
    out = effective_matrix(circulant, np.zeros((4, 4)), RevisionMode("alpha"))
    assert_array_equal(out, circulant.entries)


def test_alpha_revision_clips_negative_entries():
    out = effective_matrix(identity_matrix(2), [[0.0, -2.0], [0.0, 0.0]], RevisionMode("alpha", 0.01))
    assert_array_equal(out, [[1.0, 0.0], [0.0, 1.0]])


def test_alpha_revision_rows_are_not_renormalised_by_default():
    T = [[0.5, 0.5], [0.5, 0.5]]
    delta = [[10.0, 0.0], [0.0, 0.0]]
    plain = effective_matrix(T, delta, RevisionMode("alpha", 0.01))
    assert_allclose(plain[0], [0.6, 0.5])

    renormed = effective_matrix(T, delta, RevisionMode("alpha", 0.01, renormalize=True))
    assert_allclose(renormed.sum(axis=1), 1.0)
    assert_allclose(renormed[0], [0.6 / 1.1, 0.5 / 1.1])


def test_softmax_revision_of_zeros():
    out = effective_matrix(np.zeros((2, 2)), np.zeros((2, 2)), RevisionMode("softmax"))
    assert_allclose(out, [[0.5, 0.5], [0.5, 0.5]])


def test_softmax_revision_is_always_valid(rng, circulant):
    for _ in range(20):
        delta = rng.standard_normal((4, 4)) * 5
        out = effective_matrix(circulant, delta, RevisionMode("softmax"))
        assert validate(out).valid
        assert np.all(out > 0)
        assert np.all(effective_matrix(circulant, delta, RevisionMode("alpha", 1.0)) >= 0)


def test_plain_revision_can_go_negative(circulant):
    delta = np.zeros((4, 4))
    delta[0, 2] = -0.5
    assert effective_matrix(circulant, delta, RevisionMode("plain"))[0, 2] == -0.5


def test_revision_mode_validation():
    with pytest.raises(ContractViolation):
        RevisionMode("cubic")
    with pytest.raises(ContractViolation):
        RevisionMode("alpha", alpha=0.0)
    with pytest.raises(ContractViolation):
        effective_matrix(identity_matrix(2), np.zeros((3, 3)), RevisionMode())


def test_anchor_of_perfect_posteriors_is_identity():
    posteriors = np.repeat(np.eye(4), 10, axis=0)
    assert_array_equal(estimate_anchor(posteriors).entries, np.eye(4))


@pytest.mark.parametrize("top_k", [1, 5])
def test_anchor_reads_rows_verbatim(circulant, top_k):
    posteriors = np.repeat(circulant.entries, 25, axis=0)
    T_hat = estimate_anchor(posteriors, percentile=97.0, top_k=top_k)
    assert T_hat.validated
    assert_allclose(T_hat.entries, circulant.entries, atol=1e-15)


def test_anchor_at_the_maximum(rng):
    logits = rng.standard_normal((50, 3))
    posteriors = np.exp(logits) / np.exp(logits).sum(axis=1, keepdims=True)
    T_hat = estimate_anchor(posteriors, percentile=100.0, top_k=1)
    for i in range(3):
        assert_array_equal(T_hat.entries[i], posteriors[np.argmax(posteriors[:, i])])


def test_anchor_estimate_is_valid(rng):
    posteriors = rng.dirichlet(np.ones(4), size=200)
    assert validate(estimate_anchor(posteriors, top_k=7)).valid


def test_anchor_errors():
    with pytest.raises(ContractViolation):
        estimate_anchor(np.eye(3), top_k=4)
    with pytest.raises(ContractViolation):
        estimate_anchor(np.eye(3), percentile=0.0)
    with pytest.raises(ContractViolation):
        estimate_anchor(np.full((3, 3), 0.5))


def test_rre():
    assert rre(np.eye(4), np.eye(4)) == 0.0
    assert rre(np.eye(4), np.zeros((4, 4))) == pytest.approx(1.0)
    E = np.full((4, 4), 0.01)
    assert rre(np.eye(4), np.eye(4) + E) == pytest.approx(np.linalg.norm(E) / 2.0)
    with pytest.raises(DomainError):
        rre(np.zeros((2, 2)), np.eye(2))
    with pytest.raises(ContractViolation):
        rre(np.eye(2), np.eye(3))


def test_mean_matrix():
    A = np.array([[1.0, 0.0], [0.0, 1.0]])
    assert_array_equal(mean_matrix([A, A]), A)
    assert_allclose(mean_matrix([A, A[::-1]]), np.full((2, 2), 0.5))
    with pytest.raises(ContractViolation):
        mean_matrix([])
    with pytest.raises(ContractViolation):
        mean_matrix([A, np.eye(3)])


def test_averaging_never_increases_error(rng, circulant):
    for _ in range(10):
        estimates = [circulant.entries + 0.05 * rng.standard_normal((4, 4)) for _ in range(6)]
        averaged = rre(circulant, mean_matrix(estimates))
        assert averaged <= np.mean([rre(circulant, e) for e in estimates]) + 1e-12


def test_averaged_valid_matrices_stay_valid(circulant, symmetric):
    assert validate(mean_matrix([circulant, symmetric, identity_matrix(4)])).valid


def test_matrix_file_round_trip(tmp_path, printed):
    path = tmp_path / "T.txt"
    estimate = printed["unknown"]
    save_matrix(estimate, path)
    assert_array_equal(load_matrix(path, check=False).entries, estimate)
    with pytest.raises(ValidationError):
        load_matrix(path)


@pytest.mark.parametrize("content, line", [
    ("1 0\n0 x\n", 2),
    ("1 0\n0 1 0\n", 2),
    ("1 0\n", None),
    ("\n\n", None),
])
def test_malformed_matrix_files(tmp_path, content, line):
    path = tmp_path / "T.txt"
    path.write_text(content)
    with pytest.raises(ParseError) as info:
        load_matrix(path)
    assert info.value.line == line
