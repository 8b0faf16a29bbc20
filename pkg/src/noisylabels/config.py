"""Experiment configuration files

A YAML document whose keys mirror `ExperimentConfig`; nested sections map to
the dataclasses of the individual parts. Missing keys keep their defaults,
unknown keys are an error.
"""

import logging
from dataclasses import asdict, fields, replace

import yaml

from . import constants
from .datagen import BlobSpec
from .errors import ContractViolation, ParseError
from .harness import ExperimentConfig
from .trainer import AnchorConfig, TrainConfig
from .transition import as_array

logger = logging.getLogger(__name__)

# yaml key -> BlobSpec field
blob_keys = dict(classes="c", dim="d", n_per_class="n_per_class", sigma="noise_sigma",
                 separation="separation", seed="seed")

top_keys = {"name", "dataset", "noise", "noise_seed", "use_true_matrix", "methods", "trials",
            "master_seed", "model", "train", "revision", "revision_alpha", "anchor",
            "beta_stop_gradient", "train_fraction", "test_loss", "workers", "fail_fast",
            "validate", "output", "reference"}
dataset_keys = {"blobs", "test_per_class", "path", "test_path"}
model_keys = {"hidden_dims", "dropout_rate"}


def _section(source, doc, name, allowed):
    if doc is None:
        return {}
    if not isinstance(doc, dict):
        raise ParseError(source, None, f"'{name}' must be a mapping")
    unknown = sorted(set(doc) - set(allowed))
    if unknown:
        raise ParseError(source, None, f"unknown key '{name}.{unknown[0]}'")
    return doc


def _coerce(source, doc, name, cls, rename=None):
    """Convert numeric values to the field types of `cls`"""
    types = {f.name: f.type for f in fields(cls)}
    rename = rename or {}
    doc = dict(doc)

    # YAML 1.1 reads "1e-4" as a string
    for key, value in doc.items():
        kind = types.get(rename.get(key, key))
        if kind in (int, float) and not isinstance(value, bool):
            try:
                doc[key] = kind(value)
            except (TypeError, ValueError):
                raise ParseError(source, None, f"'{name}.{key}' must be a number, got {value!r}") from None
    return doc


def _dataclass_section(source, doc, name, cls, base=None):
    doc = _section(source, doc, name, {f.name for f in fields(cls)})
    doc = _coerce(source, doc, name, cls)
    return replace(base, **doc) if base is not None else cls(**doc)


def config_from_dict(doc, source="<config>"):
    """ExperimentConfig from a parsed configuration document"""

    doc = _section(source, doc if doc is not None else {}, "config", top_keys)
    defaults = ExperimentConfig()
    kwargs = {k: doc[k] for k in ("name", "noise", "noise_seed", "use_true_matrix", "methods",
                                  "trials", "master_seed", "revision_alpha", "beta_stop_gradient",
                                  "train_fraction", "test_loss", "workers", "fail_fast",
                                  "validate", "output")
              if k in doc}
    kwargs = _coerce(source, kwargs, "config", ExperimentConfig)

    try:
        dataset = _section(source, doc.get("dataset"), "dataset", dataset_keys)
        if "path" in dataset:
            kwargs.update(blobs=None, dataset_path=dataset["path"], test_path=dataset.get("test_path"))
        if "blobs" in dataset:
            blobs = _section(source, dataset["blobs"], "dataset.blobs", blob_keys)
            blobs = _coerce(source, blobs, "dataset.blobs", BlobSpec, blob_keys)
            kwargs["blobs"] = BlobSpec(**{blob_keys[k]: v for k, v in blobs.items()})
        if "test_per_class" in dataset:
            kwargs["test_per_class"] = dataset["test_per_class"]

        model = _section(source, doc.get("model"), "model", model_keys)
        kwargs.update(_coerce(source, model, "model", ExperimentConfig))
        kwargs["train"] = _dataclass_section(source, doc.get("train"), "train", TrainConfig,
                                             defaults.train)
        kwargs["revision"] = _dataclass_section(source, doc.get("revision"), "revision",
                                                TrainConfig, defaults.revision)
        kwargs["anchor"] = _dataclass_section(source, doc.get("anchor"), "anchor", AnchorConfig)

        return ExperimentConfig(**kwargs)

    except (ContractViolation, TypeError) as ex:
        raise ParseError(source, None, f"invalid configuration: {ex}") from None


def load_config(path):
    with open(path, "r", encoding="utf-8") as f:
        try:
            doc = yaml.safe_load(f)
        except yaml.YAMLError as ex:
            mark = getattr(ex, "problem_mark", None)
            line = mark.line + 1 if mark is not None else None
            raise ParseError(path, line, f"malformed YAML ({getattr(ex, 'problem', ex)})") from None

    config = config_from_dict(doc, source=path)
    logger.debug(f"loaded experiment '{config.name}' from {path}")
    return config


def override(config, **options):
    """Copy of `config` with every option that is not None replaced"""
    return replace(config, **{k: v for k, v in options.items() if v is not None})


def config_to_dict(config):
    """Configuration document of `config`, the inverse of `config_from_dict`"""

    if config.blobs is not None:
        spec = config.blobs
        dataset = dict(blobs=dict(classes=spec.c, dim=spec.d, n_per_class=spec.n_per_class,
                                  sigma=float(spec.noise_sigma), separation=float(spec.separation),
                                  seed=spec.seed),
                       test_per_class=config.test_per_class)
    else:
        dataset = dict(path=config.dataset_path, test_path=config.test_path)

    noise = config.noise
    if noise is not None and not isinstance(noise, str):
        noise = as_array(noise).tolist()

    return dict(
        name=config.name,
        dataset=dataset,
        noise=noise,
        noise_seed=config.noise_seed,
        use_true_matrix=config.use_true_matrix,
        methods=list(config.methods),
        trials=config.trials,
        master_seed=config.master_seed,
        model=dict(hidden_dims=list(config.hidden_dims), dropout_rate=config.dropout_rate),
        train=asdict(config.train),
        revision=asdict(config.revision),
        revision_alpha=config.revision_alpha,
        anchor=asdict(config.anchor),
        beta_stop_gradient=config.beta_stop_gradient,
        train_fraction=config.train_fraction,
        test_loss=config.test_loss,
        workers=config.workers,
        fail_fast=config.fail_fast,
        validate=config.validate,
        output=config.output,
    )


def reference_settings():
    """Training settings of the reported experiments, written next to the
    settings that were actually used. Ignored when the file is read back."""
    return dict(learning_rate=constants.base_learning_rate, batch_size=constants.base_batch_size,
                revision_learning_rate=constants.revision_learning_rate,
                revision_batch_size=constants.revision_batch_size)


def save_config(config, path):
    doc = config_to_dict(config)
    doc["reference"] = reference_settings()
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(doc, f, sort_keys=False)
