"""Multi-seed experiments over label-noise methods.

A trial splits the noisy training pool 8:2 with its own seed, trains every
requested method and scores it on the clean test set. The methods of one
trial share their intermediate models: the cross-entropy model doubles as the
baseline and as the source of the anchor estimate T_hat, and the model
reweighted under T_hat seeds every revision variant.

Trial seeds are master_seed + trial index. Results are ordered by
(method, seed) regardless of the order in which parallel trials finish.
"""

import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Dict, List, Optional

import numpy as np
import pandas as pd

from . import constants
from .boxplot import write_boxplot
from .datagen import BlobSpec, generate_blobs, inject_noise, split
from .errors import ContractViolation, LnlError
from .factory import make_dataset
from .lnlogging import AddTrialFilter, MatrixDump
from .losses import LossSpec
from .model import MlpConfig, init_mlp, predict_proba
from .trainer import AnchorConfig, TrainConfig, evaluate, reweight_stage, revise_stage, train
from .transition import (RevisionMode, as_array, estimate_anchor, load_matrix,
                         make_matrix, mean_matrix, rre, save_matrix)

logger = logging.getLogger(__name__)

methods = ("baseline", "forward", "reweight", "anchor_estimate",
           "revision_alpha", "revision_softmax", "revision_plain")

trial_columns = ["method", "dataset", "seed", "test_loss", "test_acc", "rre", "wall_time",
                 "train_loss", "train_acc", "error"]

metrics = dict(test_loss="test loss", test_acc="test accuracy (%)", rre="RRE",
               train_loss="training loss", train_acc="training accuracy (%)")


def _default_revision():
    return TrainConfig(epochs=20, batch_size=constants.revision_batch_size,
                       learning_rate=constants.desk_revision_learning_rate)


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    blobs: Optional[BlobSpec] = field(default_factory=BlobSpec)
    test_per_class: int = 1000
    dataset_path: Optional[str] = None
    test_path: Optional[str] = None
    noise: object = "circulant0.3"
    noise_seed: int = 1
    use_true_matrix: bool = True
    methods: List[str] = field(default_factory=lambda: list(methods[:-1]))
    trials: int = 5
    master_seed: int = 0
    hidden_dims: List[int] = field(default_factory=lambda: [64, 32])
    dropout_rate: float = 0.2
    train: TrainConfig = field(default_factory=TrainConfig)
    revision: TrainConfig = field(default_factory=_default_revision)
    revision_alpha: float = constants.default_alpha
    anchor: AnchorConfig = field(default_factory=AnchorConfig)
    beta_stop_gradient: bool = False
    train_fraction: float = constants.default_train_fraction
    test_loss: str = "ce"
    workers: int = 1
    fail_fast: bool = False
    validate: bool = True
    output: Optional[str] = None

    def __post_init__(self):
        if self.trials < 1:
            raise ContractViolation(f"trials must be at least 1, got {self.trials}")
        if self.workers < 1:
            raise ContractViolation(f"workers must be at least 1, got {self.workers}")
        unknown = [m for m in self.methods if m not in methods]
        if unknown:
            raise ContractViolation(f"unknown methods {unknown}, expected a subset of {methods}")
        if not self.methods:
            raise ContractViolation("no methods selected")
        if self.test_loss not in ("ce", "method"):
            raise ContractViolation(f"test_loss must be 'ce' or 'method', got '{self.test_loss}'")
        if (self.blobs is None) == (self.dataset_path is None):
            raise ContractViolation("exactly one of blobs and dataset_path must be given")
        if self.dataset_path is not None and self.test_path is None:
            raise ContractViolation("a dataset file needs a test_path")

    def trial_seed(self, index):
        return self.master_seed + index


@dataclass
class TrialResult:
    method: str
    dataset: str
    seed: int
    test_loss: float = float("nan")
    test_acc: float = float("nan")
    rre: Optional[float] = None
    wall_time: float = 0.0
    train_loss: float = float("nan")
    train_acc: float = float("nan")
    matrix: Optional[np.ndarray] = field(default=None, repr=False)
    error: Optional[str] = None

    @property
    def ok(self):
        return self.error is None

    def row(self):
        return {c: getattr(self, c) for c in trial_columns}


# ------------------------------------------------------------------------
# data

class ExperimentData:
    """Noisy training pool, clean test set and (if known) the true T"""

    def __init__(self, config):
        self.true_matrix = None

        if config.blobs is not None:
            spec = config.blobs
            pool = generate_blobs(spec)
            test = generate_blobs(BlobSpec(spec.c, spec.d, config.test_per_class, spec.noise_sigma,
                                           spec.seed + 1, spec.separation, spec.class_means))
        else:
            pool = make_dataset(config.dataset_path)
            test = make_dataset(config.test_path)
        c = pool.c

        if config.noise is not None:
            self.true_matrix = make_matrix(config.noise, c, check=config.validate)
        if pool.noisy_labels is None:
            if self.true_matrix is None:
                raise ContractViolation("the training pool has no noisy labels and no noise is configured")
            pool = inject_noise(pool, self.true_matrix, config.noise_seed)

        self.pool = pool
        self.test = test
        self.c = c


class _Trial:
    """Lazily trained models of one trial, shared between its methods"""

    def __init__(self, config, data, index):
        self.config = config
        self.data = data
        self.seed = config.trial_seed(index)
        self.train_set, self.val_set = split(data.pool, config.train_fraction, self.seed)
        self.mlp = MlpConfig(data.pool.d, config.hidden_dims, data.c, config.dropout_rate, self.seed)
        self.base = config.train.with_seed(self.seed)

    @cached_property
    def cross_entropy(self):
        return train(init_mlp(self.mlp), LossSpec("baseline_ce"), self.train_set, self.val_set, self.base)

    @cached_property
    def T_hat(self):
        posteriors = predict_proba(self.cross_entropy.params, self.train_set.features)
        anchor = self.config.anchor
        return estimate_anchor(posteriors, anchor.percentile, anchor.top_k)

    @property
    def T_used(self):
        if self.config.use_true_matrix and self.data.true_matrix is not None:
            return self.data.true_matrix
        return self.T_hat

    @cached_property
    def reweighted_hat(self):
        return reweight_stage(self.mlp, self.T_hat, self.train_set, self.val_set, self.base,
                              self.config.beta_stop_gradient)

    def run(self, method):
        """(params, delta, loss spec, estimated matrix) of one method"""
        if method in ("baseline", "anchor_estimate"):
            matrix = self.T_hat.entries if method == "anchor_estimate" else None
            return self.cross_entropy.params, None, LossSpec("baseline_ce"), matrix

        if method == "forward":
            spec = LossSpec("forward", self.T_used, check_matrix=self.config.validate)
            outcome = train(init_mlp(self.mlp), spec, self.train_set, self.val_set, self.base)
            return outcome.params, None, spec, None

        if method == "reweight":
            if self.T_used is self.T_hat:
                outcome = self.reweighted_hat
            else:
                outcome = reweight_stage(self.mlp, self.T_used, self.train_set, self.val_set,
                                         self.base, self.config.beta_stop_gradient,
                                         check_matrix=self.config.validate)
            spec = LossSpec("reweight", self.T_used, beta_stop_gradient=self.config.beta_stop_gradient,
                            check_matrix=self.config.validate)
            return outcome.params, None, spec, None

        mode = RevisionMode(method.split("_", 1)[1], self.config.revision_alpha)
        outcome, T_final = revise_stage(self.reweighted_hat.params, self.T_hat, self.train_set,
                                        self.val_set, self.config.revision.with_seed(self.seed),
                                        mode, self.config.beta_stop_gradient)
        spec = LossSpec("revision", self.T_hat, mode, beta_stop_gradient=self.config.beta_stop_gradient,
                        check_matrix=False)
        return outcome.params, outcome.delta, spec, T_final


def _score(trial, method):
    config = trial.config
    result = TrialResult(method, config.name, trial.seed)
    start = time.perf_counter()

    params, delta, spec, matrix = trial.run(method)
    test_spec = spec if config.test_loss == "method" else None
    result.test_loss, result.test_acc = evaluate(params, trial.data.test, test_spec, delta)
    result.train_loss, result.train_acc = evaluate(params, trial.train_set, test_spec, delta, noisy=True)

    if matrix is not None:
        result.matrix = np.array(matrix)
        if trial.data.true_matrix is not None:
            result.rre = rre(trial.data.true_matrix, matrix)

    result.wall_time = time.perf_counter() - start
    return result


def _run_trial(config, data, index, location):
    trial = _Trial(config, data, index)
    results = []
    for method in config.methods:
        location.set_location(method, trial.seed)
        try:
            result = _score(trial, method)
        except (LnlError, ArithmeticError, ValueError) as ex:
            if config.fail_fast:
                raise
            logger.warning(f"{method} failed for seed {trial.seed}: {ex}")
            result = TrialResult(method, config.name, trial.seed, error=str(ex))
        finally:
            location.clear()

        rre_text = "" if result.rre is None else f", rre {result.rre:.4f}"
        logger.info(f"{method:<16} seed {trial.seed}: test loss {result.test_loss:.4f}, "
                    f"accuracy {result.test_acc:.2f}%{rre_text}")
        results.append(result)
    return results


def run_experiment(config, data=None):
    """Run every configured method for every trial"""

    if data is None:
        data = ExperimentData(config)
    if data.true_matrix is not None:
        MatrixDump()(data.true_matrix.entries, title="true transition matrix")

    location = AddTrialFilter()
    handlers = logging.getLogger().handlers
    for h in handlers:
        h.addFilter(location)

    try:
        if config.workers == 1:
            per_trial = [_run_trial(config, data, i, location) for i in range(config.trials)]
        else:
            with ThreadPoolExecutor(max_workers=config.workers) as pool:
                futures = [pool.submit(_run_trial, config, data, i, location)
                           for i in range(config.trials)]
                per_trial = [f.result() for f in futures]
    finally:
        for h in handlers:
            h.removeFilter(location)

    order = {m: k for k, m in enumerate(config.methods)}
    results = [r for trial in per_trial for r in trial]
    return sorted(results, key=lambda r: (order[r.method], r.seed))


# ------------------------------------------------------------------------
# aggregation

@dataclass
class ExperimentSummary:
    """Per-method mean and sample standard deviation (n-1) of every metric

    `table` is indexed by method. A method with a single trial has std 0 and
    n = 1. `mean_matrices` holds the element-wise mean of the per-trial
    estimates of the methods that produce one."""

    table: pd.DataFrame
    mean_matrices: Dict[str, np.ndarray] = field(default_factory=dict)

    def __getitem__(self, method):
        return self.table.loc[method]

    @property
    def methods(self):
        return list(self.table.index)

    def to_csv(self, path):
        self.table.to_csv(path, index_label="method")


def _mean_std(series):
    series = series.dropna()
    if len(series) == 0:
        return float("nan"), float("nan")
    std = float(series.std(ddof=1)) if len(series) > 1 else 0.0
    return float(series.mean()), std


def aggregate(results, reference=None):
    ok = [r for r in results if r.ok]
    if not ok:
        raise ContractViolation("no successful trials to aggregate")

    frame = pd.DataFrame([r.row() for r in ok])
    order = list(dict.fromkeys(r.method for r in results))
    rows = {}
    mean_matrices = {}

    for method in order:
        group = frame[frame["method"] == method]
        if group.empty:
            raise ContractViolation(f"every trial of '{method}' failed")

        row = dict(n=len(group))
        for metric in ("test_loss", "test_acc", "rre", "train_loss", "train_acc"):
            row[f"{metric}_mean"], row[f"{metric}_std"] = _mean_std(group[metric].astype(float))

        estimates = [r.matrix for r in ok if r.method == method and r.matrix is not None]
        row["mean_matrix_rre"] = float("nan")
        if estimates:
            mean_matrices[method] = mean_matrix(estimates)
            if reference is not None:
                row["mean_matrix_rre"] = rre(reference, mean_matrices[method])
        rows[method] = row

    table = pd.DataFrame.from_dict(rows, orient="index")
    return ExperimentSummary(table, mean_matrices)


# ------------------------------------------------------------------------
# reports

def _matrix_path(directory, method, seed):
    return os.path.join(directory, "matrices", f"{method}_seed{seed}.txt")


def write_trials(results, directory, reference=None):
    os.makedirs(os.path.join(directory, "matrices"), exist_ok=True)
    frame = pd.DataFrame([r.row() for r in results], columns=trial_columns)
    frame.to_csv(os.path.join(directory, "trials.csv"), index=False)

    for r in results:
        if r.matrix is not None:
            save_matrix(r.matrix, _matrix_path(directory, r.method, r.seed))
    if reference is not None:
        save_matrix(reference, os.path.join(directory, "matrices", "true.txt"))


def write_report(summary, results, directory, reference=None):
    """trials.csv, summary.csv, matrix files and one box plot per metric"""

    write_trials(results, directory, reference)
    summary.to_csv(os.path.join(directory, "summary.csv"))

    for method, matrix in summary.mean_matrices.items():
        save_matrix(matrix, os.path.join(directory, "matrices", f"{method}_mean.txt"))

    ok = [r for r in results if r.ok]
    for metric, label in metrics.items():
        groups = {}
        for r in ok:
            value = getattr(r, metric)
            if value is not None and np.isfinite(value):
                groups.setdefault(r.method, []).append(value)
        if groups:
            write_boxplot(os.path.join(directory, f"{metric}.svg"), groups,
                          title=f"{label} over {max(len(v) for v in groups.values())} trials",
                          ylabel=label)

    logger.info(f"wrote report for {len(summary.methods)} method(s) to {directory}")


def read_trials(directory):
    """Results and reference matrix of a report written by `write_report`"""

    frame = pd.read_csv(os.path.join(directory, "trials.csv"), float_precision="round_trip",
                        keep_default_na=False, na_values=[""])
    missing = [c for c in trial_columns if c not in frame.columns]
    if missing:
        raise ContractViolation(f"trials.csv in {directory} lacks columns {missing}")

    results = []
    for row in frame.itertuples(index=False):
        error = row.error if isinstance(row.error, str) and row.error else None
        path = _matrix_path(directory, row.method, int(row.seed))
        matrix = as_array(load_matrix(path, check=False)).copy() if os.path.exists(path) else None
        results.append(TrialResult(
            row.method, str(row.dataset), int(row.seed), float(row.test_loss), float(row.test_acc),
            None if pd.isna(row.rre) else float(row.rre), float(row.wall_time),
            float(row.train_loss), float(row.train_acc), matrix, error))

    reference_path = os.path.join(directory, "matrices", "true.txt")
    reference = load_matrix(reference_path, check=False) if os.path.exists(reference_path) else None
    return results, reference


def run_and_report(config):
    """Run an experiment and write its report to `config.output`"""
    data = ExperimentData(config)
    results = run_experiment(config, data)
    reference = data.true_matrix

    if config.output is not None:
        write_trials(results, config.output, reference)
    summary = aggregate(results, reference)
    if config.output is not None:
        write_report(summary, results, config.output, reference)
    return results, summary
