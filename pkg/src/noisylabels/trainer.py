"""Adam, early stopping, training loops and the three-stage T-Revision
pipeline (estimate T_hat, reweight under T_hat, revise T_hat jointly with
the classifier)."""

import csv
import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, NamedTuple, Optional

import numpy as np

from . import constants
from . import gradcore as gc
from .errors import ContractViolation, LnlError, StageError, TrainingError
from .losses import LossSpec, ce_loss, compute_loss
from .model import forward, init_mlp, predict_proba
from .transition import RevisionMode, effective_matrix, estimate_anchor

logger = logging.getLogger(__name__)
epochlog = logger.getChild("epoch")
stagelog = logger.getChild("stage")


# ------------------------------------------------------------------------
# Adam

@dataclass
class AdamState:
    learning_rate: float = constants.base_learning_rate
    beta1: float = constants.adam_beta1
    beta2: float = constants.adam_beta2
    epsilon: float = constants.adam_epsilon
    t: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ContractViolation(f"Adam betas must be in [0, 1), got {self.beta1}, {self.beta2}")


def adam_step(state, params, grads):
    """One Adam update of the named tensors in `params`

    Returns the updated tensors (tensors are immutable) and the state, which
    is advanced in place. Parameters without a gradient are left untouched
    but still see their moments decay."""

    state.t += 1
    b1, b2 = state.beta1, state.beta2
    updated = {}
    for name, p in params.items():
        g = grads[name].data if name in grads else np.zeros_like(p.data)
        if g.shape != p.shape:
            raise ContractViolation(f"gradient of '{name}' has shape {g.shape}, expected {p.shape}")

        m = b1 * state.m.get(name, 0.0) + (1.0 - b1) * g
        v = b2 * state.v.get(name, 0.0) + (1.0 - b2) * g * g
        state.m[name] = m
        state.v[name] = v

        m_hat = m / (1.0 - b1 ** state.t)
        v_hat = v / (1.0 - b2 ** state.t)
        updated[name] = p.with_data(p.data - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon))
    return updated, state


# ------------------------------------------------------------------------
# training

@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = constants.base_batch_size
    learning_rate: float = constants.base_learning_rate
    patience: int = constants.default_patience
    seed: int = 0
    dropout: bool = True

    def __post_init__(self):
        for name in ("epochs", "batch_size", "patience"):
            if getattr(self, name) < 1:
                raise ContractViolation(f"{name} must be at least 1, got {getattr(self, name)}")
        if not self.learning_rate > 0:
            raise ContractViolation(f"learning_rate must be positive, got {self.learning_rate}")

    def with_seed(self, seed):
        return replace(self, seed=seed)


@dataclass
class TrainHistory:
    train_loss: List[float] = field(default_factory=list)
    val_loss: List[float] = field(default_factory=list)
    val_acc: List[float] = field(default_factory=list)
    batch_losses: List[float] = field(default_factory=list)
    stop_epoch: int = 0
    best_epoch: int = 0

    @property
    def negative_batches(self):
        return sum(1 for x in self.batch_losses if x < 0)

    def write_csv(self, path):
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.writer(f)
            writer.writerow(["epoch", "train_loss", "val_loss", "val_acc"])
            for i, row in enumerate(zip(self.train_loss, self.val_loss, self.val_acc), start=1):
                writer.writerow([i, *(repr(float(x)) for x in row)])


class EarlyStopping:
    """Track the best validation loss and decide when to stop

    Training stops once the validation loss failed to improve for `patience`
    consecutive epochs. The snapshot of the best epoch is kept."""

    def __init__(self, patience):
        self.patience = patience
        self.best_loss = np.inf
        self.best_epoch = 0
        self.best_snapshot = None
        self.wait = 0

    def update(self, epoch, val_loss, snapshot):
        if val_loss < self.best_loss:
            self.best_loss = val_loss
            self.best_epoch = epoch
            self.best_snapshot = snapshot
            self.wait = 0
        else:
            self.wait += 1
        return self.wait >= self.patience


class TrainOutcome(NamedTuple):
    params: object
    delta: Optional[gc.Tensor]
    history: TrainHistory


def _accuracy(probabilities, labels):
    return 100.0 * float(np.mean(np.argmax(probabilities, axis=1) == labels))


def _loss_value(spec, params, data, labels, delta):
    logits = forward(params, data.features, train_mode=False)
    return compute_loss(spec, logits, labels, delta).item()


def train(params, loss_spec, train_set, val_set, config, extra_leaves=None):
    """Mini-batch Adam on the noisy labels with early stopping

    `extra_leaves` is the slack matrix of a revision run; it is optimized
    jointly with the network. Returns the parameters (and slack) of the
    epoch with the lowest validation loss."""

    if train_set.n == 0 or val_set.n == 0:
        raise ContractViolation("training and validation sets must not be empty")

    rng = np.random.default_rng(config.seed)
    state = AdamState(learning_rate=config.learning_rate)
    history = TrainHistory()
    stopper = EarlyStopping(config.patience)

    X, y = train_set.features, train_set.targets()
    val_y = val_set.targets()
    delta = extra_leaves
    name = loss_spec.describe()

    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(train_set.n)
        epoch_losses = []
        for batch_no, start in enumerate(range(0, train_set.n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            dropout_seed = int(rng.integers(2**63))

            with gc.GradientTape() as tape:
                logits = forward(params, X[idx], train_mode=config.dropout, dropout_seed=dropout_seed)
                loss = compute_loss(loss_spec, logits, y[idx], delta)

            value = loss.item()
            if not np.isfinite(value):
                raise TrainingError(f"{name}: non-finite loss {value} at epoch {epoch} batch {batch_no}")
            grads = tape.backward(loss)

            leaves = dict(params.tensors)
            if delta is not None:
                leaves[delta.name] = delta
            leaves, state = adam_step(state, leaves, grads)
            params = params.replace(leaves)
            if delta is not None:
                delta = leaves[delta.name]

            epoch_losses.append(value)
            history.batch_losses.append(value)
            logger.debug(f"{name} epoch {epoch} batch {batch_no}: loss {value:.6f}")

        val_loss = _loss_value(loss_spec, params, val_set, val_y, delta)
        if not np.isfinite(val_loss):
            raise TrainingError(f"{name}: non-finite validation loss {val_loss} at epoch {epoch}")
        val_acc = _accuracy(predict_proba(params, val_set.features), val_y)
        history.train_loss.append(float(np.mean(epoch_losses)))
        history.val_loss.append(val_loss)
        history.val_acc.append(val_acc)
        history.stop_epoch = epoch

        epochlog.info(name, extra=dict(epoch=epoch, train_loss=history.train_loss[-1],
                                       val_loss=val_loss, val_acc=val_acc))

        if stopper.update(epoch, val_loss, (params, delta)):
            epochlog.info(f"{name}: no improvement for {config.patience} epochs, stopping")
            break

    history.best_epoch = stopper.best_epoch
    best_params, best_delta = stopper.best_snapshot
    return TrainOutcome(best_params, best_delta, history)


# ------------------------------------------------------------------------
# evaluation

class Evaluation(NamedTuple):
    loss: float
    accuracy: float


def evaluate(params, test_set, loss_spec=None, delta=None, noisy=False):
    """Loss and top-1 accuracy (percent) against the clean labels

    Without a `loss_spec` the loss is the plain cross-entropy. With
    `noisy=True` the scores are taken against the noisy labels instead."""
    if test_set.n == 0:
        raise ContractViolation("cannot evaluate on an empty test set")
    labels = test_set.targets() if noisy else test_set.clean_labels
    logits = forward(params, test_set.features, train_mode=False)
    if loss_spec is None:
        loss = ce_loss(logits, labels)
    else:
        loss = compute_loss(loss_spec, logits, labels, delta)
    accuracy = _accuracy(gc.row_softmax(logits).data, labels)
    return Evaluation(loss.item(), accuracy)


# ------------------------------------------------------------------------
# T-Revision pipeline

@dataclass(frozen=True)
class AnchorConfig:
    percentile: float = constants.default_percentile
    top_k: int = 1


class PipelineResult(NamedTuple):
    params: object
    T_hat: object
    delta: gc.Tensor
    T_final: np.ndarray
    histories: Dict[str, TrainHistory]


class _stage:
    """Context manager labelling errors raised inside a pipeline stage"""

    def __init__(self, label):
        self.label = label

    def __enter__(self):
        stagelog.info(f"{self.label}")
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and isinstance(exc, (LnlError, ArithmeticError, ValueError)) \
                and not isinstance(exc, StageError):
            raise StageError(self.label, str(exc)) from exc
        return False


def anchor_stage(mlp_config, train_set, val_set, config, anchor=AnchorConfig()):
    """Stage 1: cross-entropy classifier and anchor-point estimate T_hat"""
    with _stage("stage 1: cross-entropy + anchor points"):
        outcome = train(init_mlp(mlp_config), LossSpec("baseline_ce"), train_set, val_set, config)
        posteriors = predict_proba(outcome.params, train_set.features)
        T_hat = estimate_anchor(posteriors, anchor.percentile, anchor.top_k)
    return outcome, T_hat


def reweight_stage(mlp_config, T_hat, train_set, val_set, config, beta_stop_gradient=False,
                   check_matrix=True):
    """Stage 2: fresh classifier trained with the reweighted loss under T_hat"""
    with _stage("stage 2: importance reweighting"):
        spec = LossSpec("reweight", T_hat, beta_stop_gradient=beta_stop_gradient,
                        check_matrix=check_matrix)
        return train(init_mlp(mlp_config), spec, train_set, val_set, config)


def revise_stage(params, T_hat, train_set, val_set, config, mode, beta_stop_gradient=False):
    """Stage 3: joint training of the classifier and the slack matrix"""
    with _stage(f"stage 3: revision ({mode.mode})"):
        c = T_hat.c
        delta = gc.Tensor(np.zeros((c, c)), requires_grad=True, name="delta")
        spec = LossSpec("revision", T_hat, mode, beta_stop_gradient=beta_stop_gradient,
                        check_matrix=False)
        outcome = train(params, spec, train_set, val_set, config, extra_leaves=delta)
        T_final = effective_matrix(T_hat, outcome.delta.data, mode)

    if mode.mode == "alpha" and not mode.renormalize:
        sums = T_final.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > constants.row_sum_tolerance):
            logger.warning(f"revised rows sum to {np.round(sums, 6).tolist()}")
    if outcome.history.negative_batches:
        logger.warning(f"{outcome.history.negative_batches} batches with negative loss in stage 3")
    return outcome, T_final


def revision_pipeline(train_set, val_set, mlp_config, base_config, revision_config,
                      mode=RevisionMode(), anchor=AnchorConfig(), beta_stop_gradient=False):
    """Estimate T_hat, reweight under it, then revise it jointly with the model"""

    stage1, T_hat = anchor_stage(mlp_config, train_set, val_set, base_config, anchor)
    stage2 = reweight_stage(mlp_config, T_hat, train_set, val_set, base_config,
                            beta_stop_gradient)
    stage3, T_final = revise_stage(stage2.params, T_hat, train_set, val_set,
                                   revision_config, mode, beta_stop_gradient)

    histories = dict(anchor=stage1.history, reweight=stage2.history, revision=stage3.history)
    return PipelineResult(stage3.params, T_hat, stage3.delta, T_final, histories)
