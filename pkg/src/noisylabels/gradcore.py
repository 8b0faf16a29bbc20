"""Minimal dense tensors with reverse-mode gradients.

A `Tensor` wraps an immutable float64 numpy array. Primitives applied while
a `GradientTape` is active are recorded on it whenever one of their inputs
requires a gradient; `GradientTape.backward` replays the record in reverse
and returns the gradient of every leaf parameter that took part.

    with GradientTape() as tape:
        loss = mean(scalar_mul(log(gather_per_row(row_softmax(z), y)), -1.0))
    grads = tape.backward(loss)
"""

import itertools
import logging
import threading

import numpy as np

from .errors import ContractViolation, DomainError, TapeError

logger = logging.getLogger(__name__)

_leaf_counter = itertools.count()
_active = threading.local()


class Tensor:
    """Immutable dense array of float64 values

    Leaves that should receive gradients are created with
    `requires_grad=True`; they carry a `name` which keys the gradient map
    returned by `GradientTape.backward`."""

    __slots__ = ("data", "requires_grad", "name", "_node")

    def __init__(self, data, requires_grad=False, name=None):
        array = np.array(data, dtype=np.float64)
        array.flags.writeable = False
        self.data = array
        self.requires_grad = bool(requires_grad)
        if requires_grad and name is None:
            name = f"leaf{next(_leaf_counter)}"
        self.name = name
        self._node = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        if self.data.size != 1:
            raise ContractViolation(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self):
        """Constant copy of this tensor, invisible to the tape"""
        return Tensor(self.data)

    def with_data(self, data):
        """New leaf with the same name and gradient flag but other values"""
        return Tensor(data, requires_grad=self.requires_grad, name=self.name)

    def __repr__(self):
        flag = f", name={self.name!r}" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operator sugar, all routed through apply_primitive
    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add_broadcast(self, as_tensor(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return elementwise_mul(self, other)
        return scalar_mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return elementwise_div(self, as_tensor(other))

    def __neg__(self):
        return scalar_mul(self, -1.0)


def as_tensor(value):
    return value if isinstance(value, Tensor) else Tensor(value)


class _Node:
    __slots__ = ("op", "inputs", "output", "saved", "attrs")

    def __init__(self, op, inputs, output, saved, attrs):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.saved = saved
        self.attrs = attrs


class GradientTape:
    """Ordered record of primitive applications

    A tape is used as a context manager and belongs to the thread that
    entered it. Calling `backward` consumes the tape; a second replay raises
    `TapeError` instead of accumulating twice."""

    def __init__(self):
        self.nodes = []
        self.consumed = False

    def __enter__(self):
        stack = getattr(_active, "stack", None)
        if stack is None:
            stack = _active.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _active.stack.pop()
        return False

    def record(self, node):
        if self.consumed:
            raise TapeError("recording on a consumed tape")
        node.output._node = node
        self.nodes.append(node)

    def backward(self, loss):
        if not isinstance(loss, Tensor) or loss.size != 1:
            shape = loss.shape if isinstance(loss, Tensor) else type(loss)
            raise ContractViolation(f"backward needs a scalar loss, got {shape}")
        if self.consumed:
            raise TapeError("tape already consumed by a previous backward()")
        if loss._node is None or not any(n is loss._node for n in self.nodes):
            raise TapeError("loss was not produced on this tape")

        grads = {id(loss): np.ones_like(loss.data)}
        leaves = {}

        # nodes were recorded in execution order, so the reverse visits
        # every node after all of its consumers
        for node in reversed(self.nodes):
            gout = grads.pop(id(node.output), None)
            if gout is None:
                continue
            ginputs = _BACKWARD[node.op](node, gout)
            for inp, g in zip(node.inputs, ginputs):
                if g is None or not inp.requires_grad:
                    continue
                key = id(inp)
                grads[key] = grads[key] + g if key in grads else g
                if inp._node is None:
                    leaves[key] = inp

        self.consumed = True
        result = {}
        for key, leaf in leaves.items():
            g = grads.get(key, np.zeros_like(leaf.data))
            if leaf.name in result:
                result[leaf.name] = Tensor(result[leaf.name].data + g)
            else:
                result[leaf.name] = Tensor(g)
        return result


def active_tape():
    stack = getattr(_active, "stack", None)
    return stack[-1] if stack else None


# ------------------------------------------------------------------------
# forward rules - each returns (output array, saved values)

def _shape_error(op, *arrays):
    shapes = " x ".join(str(a.shape) for a in arrays)
    return ContractViolation(f"{op}: incompatible shapes {shapes}")


def _fw_matmul(a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise _shape_error("matmul", a, b)
    return a @ b, None


def _check_broadcast(op, a, b):
    # one operand must already have the output shape
    try:
        out_shape = np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise _shape_error(op, a, b) from None
    if out_shape != a.shape and out_shape != b.shape:
        raise _shape_error(op, a, b)


def _fw_broadcast(op, fn):
    def forward(a, b):
        _check_broadcast(op, a, b)
        return fn(a, b), None
    return forward


def _fw_div(a, b):
    _check_broadcast("elementwise_div", a, b)
    zero = np.argwhere(b == 0)
    if zero.size:
        raise DomainError("elementwise_div", tuple(int(i) for i in zero[0]),
                          "division by zero")
    return a / b, None


def _fw_relu(a):
    return np.maximum(a, 0.0), None


def _fw_row_softmax(a):
    if a.ndim != 2:
        raise _shape_error("row_softmax", a)
    shifted = a - a.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=1, keepdims=True)
    return out, out


def _fw_log(a, floor=None):
    if floor is None:
        bad = np.argwhere(~(a > 0))
        if bad.size:
            raise DomainError("log", tuple(int(i) for i in bad[0]),
                              "non-positive argument")
        return np.log(a), a
    clamped = np.maximum(a, floor)
    return np.log(clamped), (a, clamped)


def _fw_exp(a):
    out = np.exp(a)
    return out, out


def _fw_gather(a, indices=None):
    idx = np.asarray(indices)
    if a.ndim != 2 or idx.shape != (a.shape[0],):
        raise _shape_error("gather_per_row", a, idx)
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[1]):
        raise ContractViolation(f"gather_per_row: index out of range [0, {a.shape[1]})")
    return a[np.arange(a.shape[0]), idx], idx


def _fw_sum(a):
    return np.asarray(a.sum()), None


def _fw_mean(a):
    if a.size == 0:
        raise ContractViolation("mean of an empty tensor")
    return np.asarray(a.mean()), None


def _fw_scalar_mul(a, factor=1.0):
    return a * factor, None


_FORWARD = dict(
    matmul=_fw_matmul,
    add_broadcast=_fw_broadcast("add_broadcast", np.add),
    relu=_fw_relu,
    row_softmax=_fw_row_softmax,
    log=_fw_log,
    exp=_fw_exp,
    elementwise_mul=_fw_broadcast("elementwise_mul", np.multiply),
    elementwise_div=_fw_div,
    gather_per_row=_fw_gather,
    sum=_fw_sum,
    mean=_fw_mean,
    scalar_mul=_fw_scalar_mul,
)

_ARITY = dict(matmul=2, add_broadcast=2, elementwise_mul=2, elementwise_div=2)


# ------------------------------------------------------------------------
# backward rules - each returns one gradient (or None) per input

def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _bw_matmul(node, g):
    a, b = (t.data for t in node.inputs)
    return g @ b.T, a.T @ g


def _bw_add(node, g):
    a, b = node.inputs
    return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)


def _bw_mul(node, g):
    a, b = (t.data for t in node.inputs)
    return _unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)


def _bw_div(node, g):
    a, b = (t.data for t in node.inputs)
    return _unbroadcast(g / b, a.shape), _unbroadcast(-g * a / (b * b), b.shape)


def _bw_relu(node, g):
    return (g * (node.inputs[0].data > 0),)


def _bw_row_softmax(node, g):
    s = node.saved
    return (s * (g - (g * s).sum(axis=1, keepdims=True)),)


def _bw_log(node, g):
    if isinstance(node.saved, tuple):
        a, clamped = node.saved
        # no gradient where the floor was active
        return (np.where(a >= clamped, g / clamped, 0.0),)
    return (g / node.saved,)


def _bw_exp(node, g):
    return (g * node.saved,)


def _bw_gather(node, g):
    a = node.inputs[0].data
    out = np.zeros_like(a)
    out[np.arange(a.shape[0]), node.saved] = g
    return (out,)


def _bw_sum(node, g):
    return (np.full(node.inputs[0].shape, float(g)),)


def _bw_mean(node, g):
    a = node.inputs[0]
    return (np.full(a.shape, float(g) / a.size),)


def _bw_scalar_mul(node, g):
    return (g * node.attrs["factor"],)


_BACKWARD = dict(
    matmul=_bw_matmul,
    add_broadcast=_bw_add,
    relu=_bw_relu,
    row_softmax=_bw_row_softmax,
    log=_bw_log,
    exp=_bw_exp,
    elementwise_mul=_bw_mul,
    elementwise_div=_bw_div,
    gather_per_row=_bw_gather,
    sum=_bw_sum,
    mean=_bw_mean,
    scalar_mul=_bw_scalar_mul,
)

primitives = tuple(_FORWARD)


def apply_primitive(op, inputs, **attrs):
    """Apply primitive `op` to a list of tensors and record it if needed"""
    if op not in _FORWARD:
        raise ContractViolation(f"unknown primitive '{op}'")
    inputs = tuple(as_tensor(t) for t in inputs)
    if len(inputs) != _ARITY.get(op, 1):
        raise ContractViolation(f"{op} takes {_ARITY.get(op, 1)} input(s), got {len(inputs)}")

    data, saved = _FORWARD[op](*(t.data for t in inputs), **attrs)
    requires_grad = any(t.requires_grad for t in inputs)
    out = Tensor(data)

    tape = active_tape()
    if requires_grad and tape is not None:
        out.requires_grad = True
        tape.record(_Node(op, inputs, out, saved, attrs))
    return out


def backward(tape, loss):
    """Gradient of `loss` with respect to every leaf recorded on `tape`"""
    return tape.backward(loss)


# ------------------------------------------------------------------------
# named wrappers

def matmul(a, b):
    return apply_primitive("matmul", [a, b])


def add_broadcast(a, b):
    return apply_primitive("add_broadcast", [a, b])


def relu(a):
    return apply_primitive("relu", [a])


def row_softmax(a):
    return apply_primitive("row_softmax", [a])


def log(a, floor=None):
    return apply_primitive("log", [a], floor=floor)


def exp(a):
    return apply_primitive("exp", [a])


def elementwise_mul(a, b):
    return apply_primitive("elementwise_mul", [a, b])


def elementwise_div(a, b):
    return apply_primitive("elementwise_div", [a, b])


def gather_per_row(a, indices):
    return apply_primitive("gather_per_row", [a], indices=indices)


def sum(a):
    return apply_primitive("sum", [a])


def mean(a):
    return apply_primitive("mean", [a])


def scalar_mul(a, factor):
    return apply_primitive("scalar_mul", [a], factor=float(factor))


# ------------------------------------------------------------------------

def finite_diff_check(loss_builder, params, step=1e-5):
    """Largest relative difference between tape and central-difference gradients

    `loss_builder` maps the list of parameters to a scalar tensor and must be
    deterministic; a non-deterministic builder gives a meaningless result.
    The relative error of every coordinate uses the denominator
    max(|analytic|, |numeric|, 1e-8)."""

    if step <= 0:
        raise ContractViolation(f"finite difference step must be positive, got {step}")

    params = list(params)
    with GradientTape() as tape:
        loss = loss_builder(params)
    if loss.requires_grad:
        grads = tape.backward(loss)
    else:
        grads = {}

    worst = 0.0
    for k, p in enumerate(params):
        analytic = grads[p.name].data if p.name in grads else np.zeros_like(p.data)
        base = p.data.copy()
        for idx in np.ndindex(*base.shape):
            values = []
            for sign in (1.0, -1.0):
                shifted = base.copy()
                shifted[idx] += sign * step
                trial = list(params)
                trial[k] = p.with_data(shifted)
                values.append(loss_builder(trial).item())
            numeric = (values[0] - values[1]) / (2.0 * step)
            a = float(analytic[idx])
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)

    logger.debug(f"finite difference check over {len(params)} parameter(s): max rel. error {worst:.3g}")
    return worst
