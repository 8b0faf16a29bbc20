"""Transition matrices T with T[i, j] = P(noisy = j | clean = i).

Besides the matrix type this module holds the anchor-point estimator, the
T-Revision transforms of an initial estimate plus a slack matrix, the
element-wise mean of several estimates and the relative reconstruction
error used to score estimates against a known matrix."""

import logging
from dataclasses import dataclass, field
from typing import List, NamedTuple

import numpy as np

from . import constants
from . import gradcore as gc
from .errors import ContractViolation, DomainError, ParseError, ValidationError

logger = logging.getLogger(__name__)


class Violation(NamedTuple):
    row: int
    col: int  # -1 for a row-sum violation
    kind: str
    value: float

    def __str__(self):
        if self.kind == "row_sum":
            return f"row {self.row} sums to {self.value:.9g}"
        return f"cell ({self.row}, {self.col}) is {self.kind}: {self.value:.9g}"


@dataclass
class MatrixReport:
    entries: np.ndarray
    violations: List[Violation] = field(default_factory=list)

    @property
    def valid(self):
        return len(self.violations) == 0

    @property
    def matrix(self):
        if not self.valid:
            raise ValidationError(self)
        return TransitionMatrix(self.entries, validated=True)

    def __str__(self):
        if self.valid:
            return "valid transition matrix"
        return "invalid transition matrix: " + "; ".join(str(v) for v in self.violations)


class TransitionMatrix:
    """c x c transition matrix

    The entries are read-only. `validated` is only set by `validate` (or by
    constructing with validated=True after an equivalent check)."""

    def __init__(self, entries, validated=False):
        array = np.array(entries, dtype=np.float64)
        if array.ndim != 2 or array.shape[0] != array.shape[1] or array.shape[0] < 1:
            raise ContractViolation(f"transition matrix must be square, got shape {array.shape}")
        array.flags.writeable = False
        self.entries = array
        self.validated = validated

    @property
    def c(self):
        return self.entries.shape[0]

    def __array__(self, dtype=None):
        return self.entries if dtype is None else self.entries.astype(dtype)

    def __eq__(self, other):
        if not isinstance(other, TransitionMatrix):
            return NotImplemented
        return np.array_equal(self.entries, other.entries)

    def __repr__(self):
        return f"TransitionMatrix(c={self.c}, validated={self.validated})"


def as_array(matrix):
    if isinstance(matrix, TransitionMatrix):
        return matrix.entries
    return np.asarray(matrix, dtype=np.float64)


def validate(matrix, tolerance=constants.row_sum_tolerance):
    """Check non-negativity and unit row sums, reporting every violation"""
    entries = np.array(as_array(matrix), dtype=np.float64)
    report = MatrixReport(entries)

    if entries.ndim != 2 or entries.shape[0] != entries.shape[1]:
        report.violations.append(Violation(-1, -1, "shape", float("nan")))
        return report

    for i, j in np.argwhere(~np.isfinite(entries)):
        report.violations.append(Violation(int(i), int(j), "non-finite", float(entries[i, j])))
    for i, j in np.argwhere(entries < 0):
        report.violations.append(Violation(int(i), int(j), "negative", float(entries[i, j])))
    for i, s in enumerate(entries.sum(axis=1)):
        if not abs(s - 1.0) <= tolerance:
            report.violations.append(Violation(i, -1, "row_sum", float(s)))

    return report


def require_valid(matrix):
    """Return a validated TransitionMatrix or raise ValidationError"""
    if isinstance(matrix, TransitionMatrix) and matrix.validated:
        return matrix
    return validate(matrix).matrix


# ------------------------------------------------------------------------
# matrix families

def identity_matrix(c):
    return TransitionMatrix(np.eye(c), validated=True)


def circulant_matrix(c, rate):
    """Row i keeps 1-rate at i and flips `rate` to class i+1 (mod c)"""
    if not 0 <= rate <= 1:
        raise ContractViolation(f"flip rate must be in [0, 1], got {rate}")
    entries = (1.0 - rate) * np.eye(c) + rate * np.roll(np.eye(c), 1, axis=1)
    return TransitionMatrix(entries, validated=True)


def symmetric_matrix(c, rate):
    """1-rate on the diagonal, rate spread uniformly over the other classes"""
    if not 0 <= rate <= 1 or c < 2:
        raise ContractViolation(f"need c >= 2 and rate in [0, 1], got c={c} rate={rate}")
    entries = np.full((c, c), rate / (c - 1))
    np.fill_diagonal(entries, 1.0 - rate)
    return TransitionMatrix(entries, validated=True)


presets = {
    "identity": lambda c: identity_matrix(c),
    "circulant0.3": lambda c: circulant_matrix(c, 0.3),
    "symmetric0.6": lambda c: symmetric_matrix(c, 0.6),
}


def make_matrix(source, c, check=True):
    """Build a matrix from a preset name, a matrix file or nested lists"""
    if isinstance(source, TransitionMatrix):
        matrix = source
    elif isinstance(source, str) and source in presets:
        matrix = presets[source](c)
    elif isinstance(source, str):
        matrix = load_matrix(source, check=check)
    else:
        matrix = TransitionMatrix(source)
        if check:
            matrix = require_valid(matrix)

    if matrix.c != c:
        raise ContractViolation(f"matrix is {matrix.c}x{matrix.c} but the data has {c} classes")
    return matrix


# ------------------------------------------------------------------------
# T-Revision

@dataclass(frozen=True)
class RevisionMode:
    """How an initial estimate and the slack matrix combine

    alpha   - ReLU(T_hat + alpha * delta), rows not renormalised
    softmax - row-wise softmax(T_hat + delta)
    plain   - T_hat + delta, the unstabilised correction (can go negative)
    """
    mode: str = "alpha"
    alpha: float = constants.default_alpha
    renormalize: bool = False

    modes = ("alpha", "softmax", "plain")

    def __post_init__(self):
        if self.mode not in self.modes:
            raise ContractViolation(f"unknown revision mode '{self.mode}', expected one of {self.modes}")
        if self.mode == "alpha" and not self.alpha > 0:
            raise ContractViolation(f"alpha must be positive, got {self.alpha}")


def revised_matrix(T_hat, delta, mode):
    """Effective matrix as a tensor, differentiable in `delta`"""
    base = gc.Tensor(as_array(T_hat))
    delta = gc.as_tensor(delta)
    if delta.shape != base.shape:
        raise ContractViolation(f"delta shape {delta.shape} does not match T_hat {base.shape}")

    if mode.mode == "softmax":
        return gc.row_softmax(gc.add_broadcast(base, delta))
    if mode.mode == "alpha":
        return gc.relu(gc.add_broadcast(base, gc.scalar_mul(delta, mode.alpha)))
    return gc.add_broadcast(base, delta)


def effective_matrix(T_hat, delta, mode):
    """Effective transition matrix of a revision, as plain values"""
    entries = revised_matrix(T_hat, gc.Tensor(as_array(delta)), mode).data.copy()
    if mode.mode == "alpha" and mode.renormalize:
        sums = entries.sum(axis=1, keepdims=True)
        entries = np.divide(entries, sums, out=entries.copy(), where=sums > 0)
    return entries


# ------------------------------------------------------------------------
# estimation and scoring

def estimate_anchor(posteriors, percentile=constants.default_percentile, top_k=1):
    """Anchor-point estimate from noisy-class posteriors

    For every class i the samples are ranked by their posterior for i. The
    sample sitting at `percentile` of that distribution (100 = the maximum)
    and its neighbours, `top_k` in total, are taken as anchor points of
    class i; row i of the estimate is the mean of their posterior rows."""

    posteriors = np.asarray(posteriors, dtype=np.float64)
    if posteriors.ndim != 2:
        raise ContractViolation(f"posteriors must be n x c, got shape {posteriors.shape}")
    n, c = posteriors.shape
    if not 0 < percentile <= 100:
        raise ContractViolation(f"percentile must be in (0, 100], got {percentile}")
    if top_k < 1:
        raise ContractViolation(f"top_k must be at least 1, got {top_k}")
    if n < top_k:
        raise ContractViolation(f"need at least top_k={top_k} samples, got {n}")

    rows = np.empty((c, c))
    for i in range(c):
        order = np.argsort(-posteriors[:, i], kind="stable")
        rank = int(round((100.0 - percentile) / 100.0 * (n - 1)))
        start = min(max(rank - top_k // 2, 0), n - top_k)
        rows[i] = posteriors[order[start:start + top_k]].mean(axis=0)

    sums = rows.sum(axis=1)
    if np.any(np.abs(sums - 1.0) > constants.anchor_row_tolerance):
        raise ContractViolation("posterior rows do not sum to 1")

    logger.debug(f"anchor estimate from {n} samples at percentile {percentile} (top_k={top_k})")
    return TransitionMatrix(rows, validated=True)


def rre(A, B):
    """Relative reconstruction error ||A - B||_F / ||A||_F, A is the reference"""
    A = as_array(A)
    B = as_array(B)
    if A.shape != B.shape:
        raise ContractViolation(f"rre of matrices with shapes {A.shape} and {B.shape}")
    norm = np.linalg.norm(A, "fro")
    if norm == 0:
        raise DomainError("rre", (), "reference matrix has zero Frobenius norm")
    return float(np.linalg.norm(A - B, "fro") / norm)


def mean_matrix(estimates):
    """Element-wise arithmetic mean of several estimates"""
    arrays = [as_array(e) for e in estimates]
    if len(arrays) == 0:
        raise ContractViolation("mean of an empty list of matrices")
    shapes = {a.shape for a in arrays}
    if len(shapes) != 1:
        raise ContractViolation(f"matrices of different shapes: {sorted(shapes)}")
    return np.mean(np.stack(arrays), axis=0)


# ------------------------------------------------------------------------
# matrix files: c lines of c space-separated decimals

def save_matrix(matrix, path):
    entries = as_array(matrix)
    with open(path, "w", encoding="utf-8") as f:
        for row in entries:
            f.write(" ".join(repr(float(x)) for x in row) + "\n")


def load_matrix(path, check=True):
    rows = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                rows.append([float(x) for x in line.split()])
            except ValueError as ex:
                raise ParseError(path, lineno, f"not a number ({ex})") from None
            if len(rows[-1]) != len(rows[0]):
                raise ParseError(path, lineno, f"expected {len(rows[0])} columns, got {len(rows[-1])}")

    if not rows:
        raise ParseError(path, None, "empty matrix file")
    if len(rows) != len(rows[0]):
        raise ParseError(path, None, f"matrix is not square: {len(rows)} rows of {len(rows[0])}")

    if check:
        report = validate(rows)
        if not report.valid:
            raise ValidationError(report)
        return report.matrix
    return TransitionMatrix(rows)
