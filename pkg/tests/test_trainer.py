import csv

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from noisylabels import gradcore as gc
from noisylabels.datagen import BlobSpec, LabeledDataset, generate_blobs, inject_noise, split
from noisylabels.errors import ContractViolation, StageError
from noisylabels.losses import LossSpec
from noisylabels.model import MlpConfig, init_mlp
from noisylabels.trainer import (AdamState, AnchorConfig, EarlyStopping, TrainConfig, adam_step,
                                 anchor_stage, evaluate, reweight_stage, revise_stage,
                                 revision_pipeline, train)
from noisylabels.transition import RevisionMode, TransitionMatrix, identity_matrix, rre


def leaves(**arrays):
    return {name: gc.Tensor(values, requires_grad=True, name=name) for name, values in arrays.items()}


def grads(**arrays):
    return {name: gc.Tensor(values) for name, values in arrays.items()}


def zero_model(input_dim, c):
    params = init_mlp(MlpConfig(input_dim=input_dim, hidden_dims=[3], c=c))
    return params.replace({name: t.with_data(np.zeros(t.shape)) for name, t in params.tensors.items()})


# ------------------------------------------------------------------------
# Adam

def test_first_adam_step():
    state = AdamState(learning_rate=0.001)
    updated, state = adam_step(state, leaves(theta=[0.0]), grads(theta=[1.0]))
    assert updated["theta"].item() == pytest.approx(-0.001, rel=1e-6)
    assert state.t == 1


def test_zero_gradient_leaves_parameters_unchanged(rng):
    params = leaves(W=rng.standard_normal((3, 2)))
    updated, _ = adam_step(AdamState(), params, grads(W=np.zeros((3, 2))))
    assert_array_equal(updated["W"].data, params["W"].data)
    assert updated["W"].name == "W"


def test_missing_gradient_counts_as_zero():
    params = leaves(a=[1.0], b=[2.0])
    updated, _ = adam_step(AdamState(), params, grads(a=[1.0]))
    assert updated["b"].item() == 2.0


def test_adam_is_stateful():
    state = AdamState(learning_rate=0.001)
    params, state = adam_step(state, leaves(theta=[0.0]), grads(theta=[1.0]))
    second, _ = adam_step(state, params, grads(theta=[-1.0]))
    fresh, _ = adam_step(AdamState(learning_rate=0.001), params, grads(theta=[-1.0]))
    assert second["theta"].item() - params["theta"].item() != pytest.approx(
        fresh["theta"].item() - params["theta"].item())


def test_adam_matches_straight_line_recurrence(rng):
    lr, b1, b2, eps = 0.01, 0.9, 0.999, 1e-8
    theta = rng.standard_normal((2, 3))
    params = leaves(theta=theta)
    state = AdamState(learning_rate=lr)

    expected = theta.copy()
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    for t in range(1, 1001):
        g = rng.standard_normal(theta.shape)
        params, state = adam_step(state, params, grads(theta=g))
        for idx in np.ndindex(*theta.shape):
            m[idx] = b1 * m[idx] + (1 - b1) * g[idx]
            v[idx] = b2 * v[idx] + (1 - b2) * g[idx] ** 2
            m_hat = m[idx] / (1 - b1 ** t)
            v_hat = v[idx] / (1 - b2 ** t)
            expected[idx] = expected[idx] - lr * m_hat / (np.sqrt(v_hat) + eps)
    assert_allclose(params["theta"].data, expected, rtol=0, atol=1e-12)


def test_adam_rejects_bad_input():
    with pytest.raises(ContractViolation):
        AdamState(beta1=1.0)
    with pytest.raises(ContractViolation):
        adam_step(AdamState(), leaves(W=np.zeros(2)), grads(W=np.zeros(3)))


# ------------------------------------------------------------------------
# early stopping and training

def test_early_stopping_keeps_best_snapshot():
    stopper = EarlyStopping(patience=1)
    stops = [stopper.update(epoch, loss, f"epoch{epoch}")
             for epoch, loss in enumerate([1.0, 0.9, 0.95], start=1)]
    assert stops == [False, False, True]
    assert stopper.best_epoch == 2
    assert stopper.best_snapshot == "epoch2"


def test_train_config_validation():
    with pytest.raises(ContractViolation):
        TrainConfig(epochs=0)
    with pytest.raises(ContractViolation):
        TrainConfig(learning_rate=0.0)
    assert TrainConfig().with_seed(3).seed == 3


def test_training_is_deterministic(noisy_split, quick_train):
    train_set, val_set = noisy_split
    mlp = MlpConfig(input_dim=8, hidden_dims=[16], seed=2)
    a = train(init_mlp(mlp), LossSpec(), train_set, val_set, quick_train)
    b = train(init_mlp(mlp), LossSpec(), train_set, val_set, quick_train)
    assert a.history == b.history
    assert_array_equal(a.params.tensors["W0"].data, b.params.tensors["W0"].data)
    assert a.delta is None


def test_history_bookkeeping(noisy_split):
    train_set, val_set = noisy_split
    config = TrainConfig(epochs=8, batch_size=32, learning_rate=0.005, patience=3)
    outcome = train(init_mlp(MlpConfig(input_dim=8, seed=1)), LossSpec(), train_set, val_set, config)
    history = outcome.history

    assert len(history.val_loss) == history.stop_epoch <= 8
    assert history.best_epoch == int(np.argmin(history.val_loss)) + 1
    assert history.train_loss[history.best_epoch - 1] <= history.train_loss[0]
    assert len(history.batch_losses) == history.stop_epoch * 5
    assert all(0 <= acc <= 100 for acc in history.val_acc)


def test_history_csv(tmp_path, noisy_split, quick_train):
    train_set, val_set = noisy_split
    outcome = train(init_mlp(MlpConfig(input_dim=8)), LossSpec(), train_set, val_set, quick_train)
    path = tmp_path / "history.csv"
    outcome.history.write_csv(path)
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["epoch", "train_loss", "val_loss", "val_acc"]
    assert len(rows) == outcome.history.stop_epoch + 1
    assert float(rows[1][2]) == outcome.history.val_loss[0]


def test_empty_datasets_are_rejected(noisy_split, quick_train):
    train_set, _ = noisy_split
    empty = train_set.subset([])
    with pytest.raises(ContractViolation):
        train(init_mlp(MlpConfig(input_dim=8)), LossSpec(), empty, train_set, quick_train)
    with pytest.raises(ContractViolation):
        evaluate(init_mlp(MlpConfig(input_dim=8)), empty)


def test_separable_blobs_are_learned():
    data = generate_blobs(BlobSpec(c=4, d=8, n_per_class=250, seed=11, separation=8.0))
    train_set, val_set = split(data, 0.8, seed=0)
    config = TrainConfig(epochs=30, batch_size=32, learning_rate=0.005, patience=5)
    outcome = train(init_mlp(MlpConfig(input_dim=8, seed=0)), LossSpec(), train_set, val_set, config)
    assert evaluate(outcome.params, val_set).accuracy >= 99.0


# ------------------------------------------------------------------------
# evaluation

def test_three_of_four_correct():
    test_set = LabeledDataset(np.zeros((4, 2)), [0, 0, 0, 1], 2)
    result = evaluate(zero_model(2, 2), test_set)
    assert result.accuracy == 75.0
    assert result.loss == pytest.approx(np.log(2))


def test_zero_model_on_balanced_classes(small_blobs):
    result = evaluate(zero_model(8, 4), small_blobs)
    assert result.accuracy == 25.0
    assert result.loss == pytest.approx(np.log(4))


def test_evaluation_label_choice():
    test_set = LabeledDataset(np.zeros((2, 2)), [0, 1], 2, noisy_labels=[0, 0])
    model = zero_model(2, 2)
    assert evaluate(model, test_set).accuracy == 50.0
    assert evaluate(model, test_set, noisy=True).accuracy == 100.0


def test_evaluation_with_loss_spec(small_blobs, circulant):
    model = zero_model(8, 4)
    result = evaluate(model, small_blobs, LossSpec("forward", circulant))
    assert result.loss == pytest.approx(np.log(4))


# ------------------------------------------------------------------------
# pipeline stages

def test_softmax_revision_never_goes_negative(noisy_split, quick_train, circulant):
    train_set, val_set = noisy_split
    mlp = MlpConfig(input_dim=8, seed=0)
    stage2 = reweight_stage(mlp, circulant, train_set, val_set, quick_train)
    config = TrainConfig(epochs=3, batch_size=64, learning_rate=0.01, patience=3)
    outcome, T_final = revise_stage(stage2.params, circulant, train_set, val_set, config,
                                    RevisionMode("softmax"))
    assert outcome.history.negative_batches == 0
    assert_allclose(T_final.sum(axis=1), 1.0)
    assert outcome.delta.name == "delta"
    assert np.any(outcome.delta.data != 0)



def test_plain_revision_from_a_negative_estimate_gives_negative_losses(noisy_split):
    train_set, val_set = noisy_split
    params = init_mlp(MlpConfig(input_dim=8, hidden_dims=[8], seed=0))
    T_hat = TransitionMatrix(np.full((4, 4), -0.25))
    config = TrainConfig(epochs=1, batch_size=32, learning_rate=1e-3, patience=1)
    outcome, T_final = revise_stage(params, T_hat, train_set, val_set, config, RevisionMode("plain"))
    assert outcome.history.negative_batches == len(outcome.history.batch_losses) > 0
    assert np.all(T_final < 0)

def test_stage_errors_carry_labels(noisy_split, quick_train):
    train_set, val_set = noisy_split
    with pytest.raises(StageError) as info:
        reweight_stage(MlpConfig(input_dim=8), identity_matrix(3), train_set, val_set, quick_train)
    assert info.value.stage.startswith("stage 2")

    with pytest.raises(StageError) as info:
        anchor_stage(MlpConfig(input_dim=8), train_set, val_set, quick_train, AnchorConfig(top_k=10**6))
    assert info.value.stage.startswith("stage 1")


@pytest.mark.slow
def test_pipeline_on_clean_labels():
    data = generate_blobs(BlobSpec(c=4, d=8, n_per_class=200, seed=21, separation=8.0))
    train_set, val_set = split(inject_noise(data, identity_matrix(4), seed=1), 0.8, seed=2)
    base = TrainConfig(epochs=20, batch_size=32, learning_rate=0.005, patience=5)
    revision = TrainConfig(epochs=3, batch_size=256, learning_rate=1e-4, patience=3)

    result = revision_pipeline(train_set, val_set, MlpConfig(input_dim=8, seed=0), base, revision)
    assert set(result.histories) == {"anchor", "reweight", "revision"}
    assert rre(identity_matrix(4), result.T_hat) <= 0.05
    assert rre(identity_matrix(4), result.T_final) <= rre(identity_matrix(4), result.T_hat) + 1e-3
