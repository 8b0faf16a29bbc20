#!/usr/bin/env python3

import logging
import math
import os
import sys

import click

from . import constants
from .config import load_config, override, save_config
from .datagen import BlobSpec, generate_blobs, inject_noise, save_dataset, split
from .errors import LnlError
from .factory import make_dataset
from .harness import ExperimentConfig, aggregate, read_trials, run_and_report, write_report
from .lnlogging import MatrixDump, setup_logging
from .losses import LossSpec, kinds
from .model import MlpConfig, init_mlp, load_params, predict_proba, save_params
from .trainer import (AnchorConfig, TrainConfig, evaluate, reweight_stage, revise_stage,
                      revision_pipeline, train)
from .transition import (RevisionMode, estimate_anchor, load_matrix, make_matrix, rre,
                         save_matrix)

logger = logging.getLogger("noisylabels.cli")
dump_matrix = MatrixDump()

loglevels = ["DEBUG", "INFO", "WARNING", "ERROR"]


def _hidden_dims(ctx, param, value):
    try:
        return [int(h) for h in value.split(",") if h]
    except ValueError:
        raise click.BadParameter(f"expected comma-separated layer sizes, got '{value}'")


def _split(data, fraction, seed):
    if data.noisy_labels is None:
        logger.warning("dataset has no noisy labels, training on the clean labels")
    return split(data, fraction, seed)


def _train_options(epochs, batch_size, learning_rate):
    """Options for a training phase: epochs, batch size, learning rate and patience"""
    def decorator(f):
        f = click.option('--patience', default=constants.default_patience, show_default=True)(f)
        f = click.option('--learning-rate', default=learning_rate, show_default=True)(f)
        f = click.option('--batch-size', default=batch_size, show_default=True)(f)
        f = click.option('--epochs', default=epochs, show_default=True)(f)
        return f
    return decorator


def _model_options(f):
    f = click.option('--dropout', default=0.2, show_default=True)(f)
    f = click.option('--hidden', default="64,32", show_default=True, callback=_hidden_dims)(f)
    return f


def _log_summary(summary):
    for method in summary.methods:
        row = summary[method]
        rre_text = ""
        if not math.isnan(row["rre_mean"]):
            rre_text = f"  rre {row['rre_mean']:.4f} ± {row['rre_std']:.4f}" \
                       f" (mean matrix {row['mean_matrix_rre']:.4f})"
        logger.info(f"{method:<16} n={int(row['n'])}"
                    f"  loss {row['test_loss_mean']:.4f} ± {row['test_loss_std']:.4f}"
                    f"  acc {row['test_acc_mean']:.2f} ± {row['test_acc_std']:.2f}%{rre_text}")


@click.group()
@click.option('-o', '--loglevel', default="INFO", type=click.Choice(loglevels, case_sensitive=False))
@click.option('-q', '--quiet', count=True)
def lnl(loglevel, quiet):
    """Learning with class-conditional label noise"""
    setup_logging(loglevel.upper(), quiet)


@lnl.command('gen-data')
@click.option('--classes', default=4, show_default=True)
@click.option('--dim', default=16, show_default=True)
@click.option('--n-per-class', default=2500, show_default=True)
@click.option('--sigma', default=1.0, show_default=True)
@click.option('--separation', default=6.0, show_default=True)
@click.option('--seed', default=0, show_default=True)
@click.option('--out', required=True, type=click.Path(dir_okay=False))
def gen_data(classes, dim, n_per_class, sigma, separation, seed, out):
    """Generate Gaussian blobs with clean labels"""
    spec = BlobSpec(classes, dim, n_per_class, sigma, seed, separation)
    save_dataset(generate_blobs(spec), out)


@lnl.command()
@click.argument('data')
@click.option('-m', '--matrix', default="circulant0.3", show_default=True,
              help="preset name or matrix file")
@click.option('--seed', default=1, show_default=True)
@click.option('--out', required=True, type=click.Path(dir_okay=False))
def inject(data, matrix, seed, out):
    """Draw noisy labels for DATA from a transition matrix"""
    dataset = make_dataset(data)
    T = make_matrix(matrix, dataset.c)
    dump_matrix(T.entries, title="transition matrix")
    save_dataset(inject_noise(dataset, T, seed), out)


@lnl.command('train')
@click.argument('data')
@click.option('--method', default="baseline_ce", show_default=True,
              type=click.Choice([k for k in kinds if k != "revision"]))
@click.option('-m', '--matrix', default=None, help="transition matrix for forward/reweight")
@click.option('--seed', default=0, show_default=True)
@click.option('--train-fraction', default=constants.default_train_fraction, show_default=True)
@_train_options(100, constants.base_batch_size, constants.base_learning_rate)
@_model_options
@click.option('--no-validate', is_flag=True, help="accept matrices that are not row-stochastic")
@click.option('--out', required=True, type=click.Path(dir_okay=False), help="checkpoint file")
@click.option('--history', default=None, type=click.Path(dir_okay=False), help="per-epoch CSV")
def train_cmd(data, method, matrix, seed, train_fraction, epochs, batch_size, learning_rate,
              patience, hidden, dropout, no_validate, out, history):
    """Train a classifier on the noisy labels of DATA"""

    dataset = make_dataset(data)
    if method != "baseline_ce" and matrix is None:
        raise click.UsageError(f"method '{method}' needs --matrix")
    T = make_matrix(matrix, dataset.c, check=not no_validate) if matrix is not None else None

    train_set, val_set = _split(dataset, train_fraction, seed)
    mlp = MlpConfig(dataset.d, hidden, dataset.c, dropout, seed)
    config = TrainConfig(epochs, batch_size, learning_rate, patience, seed)
    outcome = train(init_mlp(mlp), LossSpec(method, T, check_matrix=not no_validate),
                    train_set, val_set, config)

    logger.info(f"best epoch {outcome.history.best_epoch} of {outcome.history.stop_epoch}")
    save_params(outcome.params, out)
    if history is not None:
        outcome.history.write_csv(history)


@lnl.command('estimate-t')
@click.argument('data')
@click.option('--model', 'checkpoint', required=True, type=click.Path(exists=True, dir_okay=False))
@click.option('--percentile', default=constants.default_percentile, show_default=True)
@click.option('--top-k', default=1, show_default=True)
@click.option('--true', 'true_matrix', default=None, help="known matrix to score the estimate")
@click.option('--out', required=True, type=click.Path(dir_okay=False))
def estimate_t(data, checkpoint, percentile, top_k, true_matrix, out):
    """Anchor-point estimate of T from a trained model's posteriors on DATA"""

    dataset = make_dataset(data)
    params = load_params(checkpoint)
    T_hat = estimate_anchor(predict_proba(params, dataset.features), percentile, top_k)
    dump_matrix(T_hat.entries, title="anchor estimate")
    save_matrix(T_hat, out)

    if true_matrix is not None:
        click.echo(f"rre {rre(make_matrix(true_matrix, dataset.c), T_hat):.6f}")


@lnl.command()
@click.argument('data')
@click.option('--model', 'checkpoint', default=None, type=click.Path(exists=True, dir_okay=False),
              help="continue from a reweighted model (needs --matrix)")
@click.option('-m', '--matrix', default=None, help="initial estimate T_hat")
@click.option('--mode', default="alpha", show_default=True, type=click.Choice(RevisionMode.modes))
@click.option('--alpha', default=constants.default_alpha, show_default=True)
@click.option('--renormalize', is_flag=True, help="renormalise the rows of an alpha-mode result")
@click.option('--stop-gradient', is_flag=True, help="treat the importance weights as constants")
@click.option('--seed', default=0, show_default=True)
@click.option('--base-epochs', default=100, show_default=True)
@_train_options(20, constants.revision_batch_size, constants.desk_revision_learning_rate)
@_model_options
@click.option('--no-validate', is_flag=True)
@click.option('--true', 'true_matrix', default=None, help="known matrix to score the result")
@click.option('--out', required=True, type=click.Path(dir_okay=False), help="revised matrix file")
@click.option('--checkpoint', 'save_to', default=None, type=click.Path(dir_okay=False))
def revise(data, checkpoint, matrix, mode, alpha, renormalize, stop_gradient, seed, base_epochs,
           epochs, batch_size, learning_rate, patience, hidden, dropout, no_validate, true_matrix,
           out, save_to):
    """Revise a transition matrix jointly with the classifier

    Without --model and --matrix the full pipeline runs: cross-entropy
    training and anchor estimate, reweighting, revision. With --matrix the
    anchor stage is skipped, with --model also the reweighting."""

    dataset = make_dataset(data)
    train_set, val_set = _split(dataset, constants.default_train_fraction, seed)
    revision_mode = RevisionMode(mode, alpha, renormalize)
    base = TrainConfig(base_epochs, seed=seed)
    revision = TrainConfig(epochs, batch_size, learning_rate, patience, seed)
    mlp = MlpConfig(dataset.d, hidden, dataset.c, dropout, seed)

    if checkpoint is not None and matrix is None:
        raise click.UsageError("--model needs --matrix")

    if matrix is None:
        result = revision_pipeline(train_set, val_set, mlp, base, revision, revision_mode,
                                   AnchorConfig(), stop_gradient)
        T_hat, params, T_final = result.T_hat, result.params, result.T_final
    else:
        T_hat = make_matrix(matrix, dataset.c, check=not no_validate)
        if checkpoint is not None:
            start = load_params(checkpoint)
        else:
            start = reweight_stage(mlp, T_hat, train_set, val_set, base, stop_gradient,
                                   check_matrix=not no_validate).params
        outcome, T_final = revise_stage(start, T_hat, train_set, val_set, revision,
                                        revision_mode, stop_gradient)
        params = outcome.params

    dump_matrix(T_hat.entries, title="initial estimate")
    dump_matrix(T_final, title=f"revised ({mode})")
    save_matrix(T_final, out)
    if save_to is not None:
        save_params(params, save_to)

    if true_matrix is not None:
        T_true = make_matrix(true_matrix, dataset.c)
        click.echo(f"rre initial {rre(T_true, T_hat):.6f} revised {rre(T_true, T_final):.6f}")


@lnl.command('eval')
@click.argument('data')
@click.option('--model', 'checkpoint', required=True, type=click.Path(exists=True, dir_okay=False))
def eval_cmd(data, checkpoint):
    """Cross-entropy and top-1 accuracy on the clean labels of DATA"""
    result = evaluate(load_params(checkpoint), make_dataset(data))
    click.echo(f"test loss {result.loss:.6f} accuracy {result.accuracy:.2f}%")


@lnl.command()
@click.option('-c', '--config', 'config_file', default=None, type=click.Path(exists=True, dir_okay=False))
@click.option('--seed', default=None, type=int, help="master seed")
@click.option('--trials', default=None, type=int)
@click.option('--out', default=None, type=click.Path(file_okay=False))
@click.option('--workers', default=None, type=int)
@click.option('--fail-fast', is_flag=True)
@click.option('--no-validate', is_flag=True)
def experiment(config_file, seed, trials, out, workers, fail_fast, no_validate):
    """Multi-seed comparison of the configured methods"""

    config = load_config(config_file) if config_file is not None else ExperimentConfig()
    config = override(config, master_seed=seed, trials=trials, output=out, workers=workers,
                      fail_fast=True if fail_fast else None,
                      validate=False if no_validate else None)

    if config.output is not None:
        os.makedirs(config.output, exist_ok=True)
        save_config(config, os.path.join(config.output, "experiment.yaml"))

    results, summary = run_and_report(config)
    failed = [r for r in results if not r.ok]
    if failed:
        logger.warning(f"{len(failed)} of {len(results)} runs failed")
    _log_summary(summary)


@lnl.command()
@click.argument('directory', type=click.Path(exists=True, file_okay=False))
def report(directory):
    """Re-aggregate the trials of an experiment directory"""
    results, reference = read_trials(directory)
    summary = aggregate(results, reference)
    write_report(summary, results, directory, reference)
    _log_summary(summary)


@lnl.command('rre')
@click.argument('reference', type=click.Path(exists=True, dir_okay=False))
@click.argument('estimate', type=click.Path(exists=True, dir_okay=False))
@click.option('--no-validate', is_flag=True)
def rre_cmd(reference, estimate, no_validate):
    """Relative reconstruction error of ESTIMATE against REFERENCE"""
    A = load_matrix(reference, check=not no_validate)
    B = load_matrix(estimate, check=False)
    click.echo(f"{rre(A, B):.6f}")


def main(args=None):
    """Entry point: 0 on success, 1 on usage errors, 2 on runtime failures"""
    try:
        rv = lnl.main(args=args, prog_name="lnl", standalone_mode=False)
    except click.ClickException as ex:
        ex.show()
        sys.exit(1)
    except click.Abort:
        click.echo("Aborted!", err=True)
        sys.exit(1)
    except (LnlError, OSError) as ex:
        logger.error(str(ex))
        sys.exit(2)
    sys.exit(rv if isinstance(rv, int) else 0)


if __name__ == "__main__":
    main()
