"""Training objectives for learning with class-conditional label noise.

All losses take logits h(x) (a batch x c tensor) and integer labels and
return the batch mean as a scalar tensor. The inverse link is always the
row-wise softmax, g(x) = softmax(h(x)); the noisy posterior implied by a
transition matrix T is T^T g(x), i.e. the batch product G @ T.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import constants
from . import gradcore as gc
from .errors import ContractViolation
from .transition import RevisionMode, TransitionMatrix, as_array, require_valid, revised_matrix

logger = logging.getLogger(__name__)

kinds = ("baseline_ce", "forward", "reweight", "revision")


@dataclass(frozen=True)
class LossSpec:
    """Which objective to train with

    `matrix` is the transition matrix for forward/reweight and the initial
    estimate T_hat for revision. `check_matrix=False` bypasses the
    row-stochastic validation of the matrix."""

    kind: str = "baseline_ce"
    matrix: Optional[TransitionMatrix] = None
    revision_mode: Optional[RevisionMode] = None
    beta_stop_gradient: bool = False
    check_matrix: bool = True

    def __post_init__(self):
        if self.kind not in kinds:
            raise ContractViolation(f"unknown loss kind '{self.kind}', expected one of {kinds}")
        if self.kind in ("forward", "reweight", "revision") and self.matrix is None:
            raise ContractViolation(f"loss '{self.kind}' needs a transition matrix")
        if (self.revision_mode is not None) != (self.kind == "revision"):
            raise ContractViolation("revision_mode is required for, and only for, kind 'revision'")
        if self.matrix is not None and not isinstance(self.matrix, TransitionMatrix):
            object.__setattr__(self, "matrix", TransitionMatrix(self.matrix))

    @property
    def alpha(self):
        return self.revision_mode.alpha if self.revision_mode is not None else None

    def describe(self):
        if self.kind == "revision":
            return f"revision[{self.revision_mode.mode}]"
        return self.kind


def _check_labels(logits, labels):
    labels = np.asarray(labels, dtype=np.int64)
    if logits.data.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ContractViolation(
            f"logits of shape {logits.shape} do not match {labels.shape[0]} labels")
    c = logits.shape[1]
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        bad = int(np.flatnonzero((labels < 0) | (labels >= c))[0])
        raise ContractViolation(f"label {labels[bad]} of sample {bad} outside [0, {c})")
    return labels


def _matrix_tensor(T, c, check):
    if check:
        T = require_valid(T)
    entries = as_array(T)
    if entries.shape != (c, c):
        raise ContractViolation(f"transition matrix {entries.shape} does not match {c} classes")
    return gc.Tensor(entries)


def _nll(p):
    return gc.scalar_mul(gc.log(p, floor=constants.log_floor), -1.0)


def ce_loss(logits, labels):
    """Categorical cross-entropy mean(-log softmax(h)[y])"""
    labels = _check_labels(logits, labels)
    g = gc.row_softmax(logits)
    return gc.mean(_nll(gc.gather_per_row(g, labels)))


def forward_corrected_loss(logits, labels, T, check=True):
    """mean(-log (T^T g)[y]): the model's clean posterior pushed through T"""
    labels = _check_labels(logits, labels)
    T = _matrix_tensor(T, logits.shape[1], check)
    g = gc.row_softmax(logits)
    return gc.mean(_nll(gc.gather_per_row(gc.matmul(g, T), labels)))


def _weighted_loss(logits, labels, T, beta_stop_gradient):
    g = gc.row_softmax(logits)
    clean = gc.gather_per_row(g, labels)
    noisy = gc.gather_per_row(gc.matmul(g, T), labels)
    if beta_stop_gradient:
        # constant for the classifier, still differentiable in T
        detached = gc.gather_per_row(gc.matmul(g.detach(), T), labels)
        beta = gc.elementwise_div(clean.detach(), detached)
    else:
        beta = gc.elementwise_div(clean, noisy)
    return gc.mean(gc.elementwise_mul(beta, _nll(clean)))


def reweighted_loss(logits, labels, T, beta_stop_gradient=False, check=True):
    """mean(beta * -log g[y]) with beta = g[y] / (T^T g)[y]"""
    labels = _check_labels(logits, labels)
    T = _matrix_tensor(T, logits.shape[1], check)
    return _weighted_loss(logits, labels, T, beta_stop_gradient)


def revision_loss(logits, labels, T_hat, delta, mode="alpha", alpha=constants.default_alpha,
                  beta_stop_gradient=False):
    """Importance-reweighted loss under the revised matrix T_hat (+) delta

    `delta` is the slack matrix, normally a tape leaf so that it is trained
    jointly with the classifier."""
    labels = _check_labels(logits, labels)
    if not isinstance(mode, RevisionMode):
        mode = RevisionMode(mode, alpha)
    T_eff = revised_matrix(T_hat, delta, mode)
    if T_eff.shape != (logits.shape[1], logits.shape[1]):
        raise ContractViolation(f"T_hat {T_eff.shape} does not match {logits.shape[1]} classes")
    return _weighted_loss(logits, labels, T_eff, beta_stop_gradient)


def compute_loss(spec, logits, labels, delta=None):
    """Evaluate the objective described by `spec`"""
    if spec.kind == "baseline_ce":
        return ce_loss(logits, labels)
    if spec.kind == "forward":
        return forward_corrected_loss(logits, labels, spec.matrix, check=spec.check_matrix)
    if spec.kind == "reweight":
        return reweighted_loss(logits, labels, spec.matrix, spec.beta_stop_gradient,
                               check=spec.check_matrix)

    if delta is None:
        delta = gc.Tensor(np.zeros((spec.matrix.c, spec.matrix.c)))
    return revision_loss(logits, labels, spec.matrix, delta, spec.revision_mode,
                         beta_stop_gradient=spec.beta_stop_gradient)
