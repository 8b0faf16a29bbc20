"""Multi-layer perceptron: affine -> ReLU -> dropout per hidden layer, then a
final affine layer producing the logits h(x)."""

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List

import numpy as np

from . import gradcore as gc
from .errors import ContractViolation, ParseError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class MlpConfig:
    input_dim: int
    hidden_dims: List[int] = field(default_factory=lambda: [64, 32])
    c: int = 4
    dropout_rate: float = 0.2
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", list(self.hidden_dims))
        dims = [self.input_dim, *self.hidden_dims]
        if any(d < 1 for d in dims):
            raise ContractViolation(f"all layer sizes must be >= 1, got {dims}")
        if self.c < 2:
            raise ContractViolation(f"need at least 2 classes, got {self.c}")
        if not 0 <= self.dropout_rate < 1:
            raise ContractViolation(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")

    @property
    def layer_dims(self):
        dims = [self.input_dim, *self.hidden_dims, self.c]
        return list(zip(dims[:-1], dims[1:]))

    def with_seed(self, seed):
        return replace(self, seed=seed)


@dataclass
class MlpParams:
    """Weights W<k> (fan_in x fan_out) and biases b<k> as named tape leaves"""
    config: MlpConfig
    tensors: Dict[str, gc.Tensor]

    @property
    def depth(self):
        return len(self.config.layer_dims)

    def layer(self, k):
        return self.tensors[f"W{k}"], self.tensors[f"b{k}"]

    def replace(self, tensors):
        """Same architecture, parameters taken from `tensors` where present"""
        merged = {name: tensors.get(name, t) for name, t in self.tensors.items()}
        return MlpParams(self.config, merged)


def init_mlp(config):
    rng = np.random.default_rng(config.seed)
    tensors = {}
    for k, (fan_in, fan_out) in enumerate(config.layer_dims):
        weights = rng.standard_normal((fan_in, fan_out)) / np.sqrt(fan_in)
        tensors[f"W{k}"] = gc.Tensor(weights, requires_grad=True, name=f"W{k}")
        tensors[f"b{k}"] = gc.Tensor(np.zeros(fan_out), requires_grad=True, name=f"b{k}")
    return MlpParams(config, tensors)


def forward(params, batch, train_mode=False, dropout_seed=0):
    """Logits of a batch; dropout is only active with train_mode"""
    x = gc.as_tensor(batch)
    if x.data.ndim != 2 or x.shape[1] != params.config.input_dim:
        raise ContractViolation(
            f"batch of shape {x.shape} does not match input_dim {params.config.input_dim}")

    rate = params.config.dropout_rate
    rng = np.random.default_rng(dropout_seed) if train_mode and rate > 0 else None

    for k in range(params.depth):
        W, b = params.layer(k)
        x = gc.add_broadcast(gc.matmul(x, W), b)
        if k == params.depth - 1:
            break
        x = gc.relu(x)
        if rng is not None:
            # inverted dropout: keep expected activations unchanged
            keep = rng.random(x.shape) >= rate
            x = gc.elementwise_mul(x, gc.Tensor(keep / (1.0 - rate)))
    return x


def predict_proba(params, batch):
    return gc.row_softmax(forward(params, batch, train_mode=False)).data


def predict(params, batch):
    # argmax returns the lowest index among ties
    return np.argmax(predict_proba(params, batch), axis=1)


# ------------------------------------------------------------------------
# checkpoint files
#
# line 1: "mlp input_dim=.. hidden=64,32 c=.. dropout=.. seed=.."
# then one line per tensor: "name rows cols v1 v2 ..." (biases have cols=1)

def save_params(params, path):
    cfg = params.config
    hidden = ",".join(str(h) for h in cfg.hidden_dims)
    with open(path, "w", encoding="utf-8") as f:
        f.write(f"mlp input_dim={cfg.input_dim} hidden={hidden} c={cfg.c} "
                f"dropout={cfg.dropout_rate!r} seed={cfg.seed}\n")
        for name, tensor in params.tensors.items():
            rows = tensor.shape[0]
            cols = tensor.shape[1] if tensor.data.ndim == 2 else 1
            values = " ".join(repr(float(v)) for v in tensor.data.ravel())
            f.write(f"{name} {rows} {cols} {values}\n")
    logger.info(f"wrote checkpoint to {path}")


def load_params(path):
    with open(path, "r", encoding="utf-8") as f:
        lines = f.read().splitlines()
    if not lines or not lines[0].startswith("mlp "):
        raise ParseError(path, 1, "missing 'mlp' header")

    try:
        header = dict(item.split("=", 1) for item in lines[0].split()[1:])
        config = MlpConfig(
            input_dim=int(header["input_dim"]),
            hidden_dims=[int(h) for h in header["hidden"].split(",") if h],
            c=int(header["c"]),
            dropout_rate=float(header["dropout"]),
            seed=int(header["seed"]))
    except (KeyError, ValueError) as ex:
        raise ParseError(path, 1, f"malformed header ({ex})") from None

    expected = init_mlp(config)
    tensors = {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields = line.split()
        name = fields[0]
        if name not in expected.tensors:
            raise ParseError(path, lineno, f"unexpected tensor '{name}'")
        try:
            rows, cols = int(fields[1]), int(fields[2])
            values = np.array([float(v) for v in fields[3:]])
        except (IndexError, ValueError):
            raise ParseError(path, lineno, "malformed tensor line") from None
        shape = expected.tensors[name].shape
        if values.size != rows * cols or values.size != int(np.prod(shape)):
            raise ParseError(path, lineno, f"tensor '{name}' has {values.size} values, expected shape {shape}")
        tensors[name] = gc.Tensor(values.reshape(shape), requires_grad=True, name=name)

    missing = set(expected.tensors) - set(tensors)
    if missing:
        raise ParseError(path, None, f"missing tensors {sorted(missing)}")
    return MlpParams(config, {name: tensors[name] for name in expected.tensors})
