"""Reverse-mode automatic differentiation over float64 numpy arrays.

A ``Value`` wraps an ndarray plus a gradient slot and remembers the
operation that produced it; ``backward`` replays the tape in reverse
topological order, accumulating gradients additively. Every forward
operation verifies its output is finite and raises ``NonFiniteError``
otherwise, so a diverging optimization fails at the first bad op
instead of propagating NaNs.

The heavy operators (1-D convolution, graph neighbor sums) delegate to
``hava.kernels``; everything else is plain numpy. Gradient correctness
is checkable against central finite differences via
``finite_diff_check``.
"""

import math

import numpy as np

from .kernels import CsrGraph  # noqa: F401  (re-exported: graph ops take it)
from . import kernels


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or infinity."""


class ShapeError(ValueError):
    """Operand shapes are incompatible with the requested operation."""


def _check_finite(arr, op):
    # sum() propagates any NaN/Inf to a non-finite scalar; cheaper than
    # a full elementwise isfinite scan on big activations
    if not math.isfinite(float(arr.sum())):
        raise NonFiniteError(f"{op}: non-finite values in output")


class Value:
    """Node in the autodiff tape: float64 data, lazy zero-init gradient."""

    __slots__ = ("data", "requires_grad", "_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(1)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self._grad = None
        self._parents = ()
        self._backward = None
        _check_finite(arr, "value")

    @property
    def shape(self):
        return self.data.shape

    @property
    def grad(self):
        if self._grad is None:
            self._grad = np.zeros_like(self.data)
        return self._grad

    def zero_grad(self):
        self._grad = None

    def detach(self):
        """Constant copy: same data, no tape history."""
        return Value(self.data.copy())

    def item(self):
        if self.data.size != 1:
            raise ShapeError(f"item() on non-scalar value of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def __add__(self, other):
        return add(self, _coerce(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _coerce(other))

    def __rsub__(self, other):
        return sub(_coerce(other), self)

    def __mul__(self, other):
        return mul(self, _coerce(other))

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, _coerce(-1.0))

    def __matmul__(self, other):
        return matmul(self, _coerce(other))

    def __repr__(self):
        return f"Value(shape={self.shape}, requires_grad={self.requires_grad})"


def _coerce(x):
    return x if isinstance(x, Value) else Value(x)


def as_value(x):
    """Wrap plain data as a constant Value; passes Values through."""
    return _coerce(x)


def _result(data, op, parents, backward):
    _check_finite(data, op)
    out = Value.__new__(Value)
    out.data = data
    out._grad = None
    needs = any(p.requires_grad for p in parents)
    out.requires_grad = needs
    out._parents = tuple(p for p in parents if p.requires_grad) if needs else ()
    out._backward = backward if needs else None
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _accum(v, g):
    if not v.requires_grad:
        return
    g = _unbroadcast(g, v.data.shape)
    if v._grad is None:
        v._grad = np.zeros_like(v.data)
    v._grad += g


# ---------------------------------------------------------------- basic ops

def add(a, b):
    a, b = _coerce(a), _coerce(b)
    data = a.data + b.data

    def bw(g):
        _accum(a, g)
        _accum(b, g)

    return _result(data, "add", (a, b), bw)


def sub(a, b):
    a, b = _coerce(a), _coerce(b)
    data = a.data - b.data

    def bw(g):
        _accum(a, g)
        _accum(b, -g)

    return _result(data, "sub", (a, b), bw)


def mul(a, b):
    a, b = _coerce(a), _coerce(b)
    data = a.data * b.data

    def bw(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _result(data, "mul", (a, b), bw)


def matmul(a, b):
    a, b = _coerce(a), _coerce(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(
            f"matmul expects 2-D operands, got {a.shape} and {b.shape}"
        )
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    data = a.data @ b.data

    def bw(g):
        _accum(a, g @ b.data.T)
        _accum(b, a.data.T @ g)

    return _result(data, "matmul", (a, b), bw)


def reshape(x, shape):
    x = _coerce(x)
    data = x.data.reshape(shape)

    def bw(g):
        _accum(x, g.reshape(x.data.shape))

    return _result(data, "reshape", (x,), bw)


def broadcast_to(x, shape):
    x = _coerce(x)
    data = np.ascontiguousarray(np.broadcast_to(x.data, shape))

    def bw(g):
        _accum(x, g)

    return _result(data, "broadcast_to", (x,), bw)


def concat(values, axis=-1):
    vals = [_coerce(v) for v in values]
    if not vals:
        raise ShapeError("concat of zero values")
    data = np.concatenate([v.data for v in vals], axis=axis)
    ax = axis if axis >= 0 else data.ndim + axis
    sizes = [v.data.shape[ax] for v in vals]
    offsets = np.cumsum(sizes)[:-1]

    def bw(g):
        for v, piece in zip(vals, np.split(g, offsets, axis=ax)):
            _accum(v, piece)

    return _result(data, "concat", tuple(vals), bw)


def take_rows(x, start, stop):
    """Slice along axis 0: x[start:stop]."""
    x = _coerce(x)
    start, stop = int(start), int(stop)
    if not 0 <= start <= stop <= x.data.shape[0]:
        raise ShapeError(
            f"take_rows: [{start}, {stop}) out of range for {x.shape}"
        )
    data = x.data[start:stop]

    def bw(g):
        full = np.zeros_like(x.data)
        full[start:stop] = g
        _accum(x, full)

    return _result(data, "take_rows", (x,), bw)


def vsum(x, axis=None, keepdims=False):
    x = _coerce(x)
    data = np.asarray(x.data.sum(axis=axis, keepdims=keepdims))
    if data.ndim == 0:
        data = data.reshape(1)

    def bw(g):
        gg = g
        if axis is None:
            gg = np.broadcast_to(g.reshape((1,) * x.data.ndim), x.data.shape)
        else:
            if not keepdims:
                gg = np.expand_dims(gg, axis)
            gg = np.broadcast_to(gg, x.data.shape)
        _accum(x, gg)

    return _result(data, "vsum", (x,), bw)


def vmean(x, axis=None, keepdims=False):
    x = _coerce(x)
    if axis is None:
        count = x.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = 1
        for ax in axes:
            count *= x.data.shape[ax]
    return mul(vsum(x, axis=axis, keepdims=keepdims), _coerce(1.0 / count))


def vabs(x):
    x = _coerce(x)
    data = np.abs(x.data)

    def bw(g):
        _accum(x, g * np.sign(x.data))

    return _result(data, "vabs", (x,), bw)


def row_sqnorm(x):
    """Squared Euclidean norm of each 2-D row: (T, C) -> (T,).

    Forward computes the norm and squares it (matching norm-based
    oracles bit-for-bit); backward uses the algebraic gradient 2x, so
    zero rows are safe.
    """
    x = _coerce(x)
    if x.data.ndim != 2:
        raise ShapeError(f"row_sqnorm expects a 2-D value, got {x.shape}")
    norms = np.sqrt(np.sum(x.data * x.data, axis=1))
    data = norms * norms

    def bw(g):
        _accum(x, 2.0 * x.data * g[:, None])

    return _result(data, "row_sqnorm", (x,), bw)


# ----------------------------------------------------------- nonlinearities

def leaky_relu(x, alpha=0.2):
    x = _coerce(x)
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"leaky_relu: alpha must be in (0, 1), got {alpha}")
    data = np.where(x.data > 0, x.data, alpha * x.data)

    def bw(g):
        # slope alpha at exactly zero
        _accum(x, g * np.where(x.data > 0, 1.0, alpha))

    return _result(data, "leaky_relu", (x,), bw)


def sigmoid(x):
    x = _coerce(x)
    data = 1.0 / (1.0 + np.exp(-x.data))

    def bw(g):
        _accum(x, g * data * (1.0 - data))

    return _result(data, "sigmoid", (x,), bw)


def tanh(x):
    x = _coerce(x)
    data = np.tanh(x.data)

    def bw(g):
        _accum(x, g * (1.0 - data * data))

    return _result(data, "tanh", (x,), bw)


# -------------------------------------------------------------- neural ops

def dense(x, w, b=None):
    """x @ w + b over the last axis; x may be (B, I) or higher rank.

    The forward product accumulates in a row-stable order (each output
    row depends only on the matching input row), so per-vertex layers
    commute with vertex relabeling bit-exactly; BLAS does not promise
    that across its M-tail kernels.
    """
    x, w = _coerce(x), _coerce(w)
    if w.data.ndim != 2:
        raise ShapeError(f"dense: weight must be 2-D, got {w.shape}")
    if x.data.shape[-1] != w.shape[0]:
        raise ShapeError(
            f"dense: input width {x.data.shape[-1]} != weight rows {w.shape[0]}"
        )
    lead = x.data.shape[:-1]
    flat = np.ascontiguousarray(x.data.reshape(-1, x.data.shape[-1]))
    data = kernels.rowstable_matmul(flat, w.data).reshape(lead + (w.shape[1],))

    def bw(g):
        g2 = g.reshape(-1, g.shape[-1])
        if x.requires_grad:
            _accum(x, (g2 @ w.data.T).reshape(x.data.shape))
        if w.requires_grad:
            _accum(w, flat.T @ g2)

    out = _result(data, "dense", (x, w), bw)
    if b is not None:
        b = _coerce(b)
        if b.data.shape != (w.shape[1],):
            raise ShapeError(
                f"dense: bias shape {b.shape} != ({w.shape[1]},)"
            )
        out = add(out, b)
    return out


def conv1d(x, k, b=None, stride=1):
    """Valid 1-D cross-correlation over the last axis.

    x: (C_in, T) or (B, C_in, T); k: (C_out, C_in, Kw); optional bias
    (C_out,). Output length (T - Kw)//stride + 1; T < Kw is an error.
    """
    x, k = _coerce(x), _coerce(k)
    if k.data.ndim != 3:
        raise ShapeError(f"conv1d: kernel must be 3-D, got {k.shape}")
    squeeze = x.data.ndim == 2
    x3 = reshape(x, (1,) + x.data.shape) if squeeze else x
    if x3.data.ndim != 3:
        raise ShapeError(f"conv1d: input must be 2-D or 3-D, got {x.shape}")
    if x3.shape[1] != k.shape[1]:
        raise ShapeError(
            f"conv1d: input has {x3.shape[1]} channels, kernel expects {k.shape[1]}"
        )
    if x3.shape[2] < k.shape[2]:
        raise ShapeError(
            f"conv1d: input length {x3.shape[2]} shorter than kernel width {k.shape[2]}"
        )
    stride = int(stride)
    if stride < 1:
        raise ValueError(f"conv1d: stride must be >= 1, got {stride}")
    t_in, kw = x3.shape[2], k.shape[2]
    data = kernels.conv1d_forward(x3.data, k.data, stride)

    xv, kv = x3, k

    def bw(g):
        if xv.requires_grad:
            _accum(xv, kernels.conv1d_backward_x(g, kv.data, stride, t_in))
        if kv.requires_grad:
            _accum(kv, kernels.conv1d_backward_k(g, xv.data, kw, stride))

    out = _result(data, "conv1d", (x3, k), bw)
    if b is not None:
        b = _coerce(b)
        if b.data.shape != (k.shape[0],):
            raise ShapeError(f"conv1d: bias shape {b.shape} != ({k.shape[0]},)")
        out = add(out, reshape(b, (1, -1, 1)))
    if squeeze:
        out = reshape(out, out.data.shape[1:])
    return out


def neighbor_sum(x, graph):
    """Per-vertex sum over the CSR neighbor lists; (N, F) or (B, N, F).

    The graph is symmetric by construction, so the operator is its own
    adjoint and the backward pass reuses the forward kernel.
    """
    x = _coerce(x)
    data = kernels.neighbor_sum(x.data, graph)

    def bw(g):
        _accum(x, kernels.neighbor_sum(g, graph))

    return _result(data, "neighbor_sum", (x,), bw)


def graph_conv(h, graph, eps, w, b):
    """One graph convolution: ((1 + eps) * h_v + sum of neighbor h_u) @ w + b."""
    h = _coerce(h)
    agg = add(mul(h, add(_coerce(1.0), eps)), neighbor_sum(h, graph))
    return dense(agg, w, b)


def lstm_cell(x, h, c, gates):
    """Single LSTM step. ``gates`` maps w_i/b_i, w_f/b_f, w_g/b_g, w_o/b_o;
    each weight acts on the concatenation [x, h]."""
    xh = concat([_coerce(x), _coerce(h)], axis=-1)
    i = sigmoid(dense(xh, gates["w_i"], gates["b_i"]))
    f = sigmoid(dense(xh, gates["w_f"], gates["b_f"]))
    g = tanh(dense(xh, gates["w_g"], gates["b_g"]))
    o = sigmoid(dense(xh, gates["w_o"], gates["b_o"]))
    c_new = add(mul(f, _coerce(c)), mul(i, g))
    h_new = mul(o, tanh(c_new))
    return h_new, c_new


# ---------------------------------------------------------------- backward

def backward(loss):
    """Backpropagate from a scalar; gradients accumulate additively."""
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    topo = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    if loss._grad is None:
        loss._grad = np.zeros_like(loss.data)
    loss._grad += 1.0
    for node in reversed(topo):
        if node._backward is not None and node._grad is not None:
            node._backward(node._grad)


# -------------------------------------------------------------- parameters

class ParameterSet:
    """Named trainable Values with deterministic seeded initialization.

    Insertion order is the canonical parameter order. Weights use
    Glorot-uniform bounds sqrt(6 / (fan_in + fan_out)); biases are zero
    unless an explicit constant is requested.
    """

    def __init__(self, seed=0):
        self.seed = int(seed)
        self.rng = np.random.default_rng(self.seed)
        self._params = {}

    def add(self, name, shape, init="glorot", scale=1.0):
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        shape = tuple(int(s) for s in shape)
        if init == "glorot":
            if len(shape) == 2:
                fan_in, fan_out = shape
            elif len(shape) == 3:
                fan_in = shape[1] * shape[2]
                fan_out = shape[0] * shape[2]
            else:
                raise ValueError(
                    f"glorot init needs a 2-D or 3-D shape, got {shape}"
                )
            bound = scale * math.sqrt(6.0 / (fan_in + fan_out))
            data = self.rng.uniform(-bound, bound, size=shape)
        elif init == "zeros":
            data = np.zeros(shape)
        elif isinstance(init, (int, float)):
            data = np.full(shape, float(init))
        else:
            raise ValueError(f"unknown init: {init!r}")
        p = Value(data, requires_grad=True)
        self._params[name] = p
        return p

    def __getitem__(self, name):
        return self._params[name]

    def __contains__(self, name):
        return name in self._params

    def __len__(self):
        return len(self._params)

    def names(self):
        return list(self._params)

    def items(self):
        return self._params.items()

    def values(self):
        return self._params.values()

    def zero_grads(self):
        for p in self._params.values():
            p.zero_grad()

    def n_scalars(self):
        return sum(p.data.size for p in self._params.values())


class AdamState:
    """First/second moment estimates plus the shared step counter."""

    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = float(lr)
        self.beta1 = float(beta1)
        self.beta2 = float(beta2)
        self.eps = float(eps)
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in params.items()}


def adam_step(params, state):
    """One Adam update with bias correction; zeroes gradients afterwards."""
    state.t += 1
    b1c = 1.0 - state.beta1 ** state.t
    b2c = 1.0 - state.beta2 ** state.t
    for name, p in params.items():
        g = p.grad  # zeros if backward never reached this parameter
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p.data -= state.lr * (m / b1c) / (np.sqrt(v / b2c) + state.eps)
        _check_finite(p.data, f"adam_step({name})")
        p.zero_grad()


# ------------------------------------------------------------ verification

def finite_diff_check(f, params, h=1e-5, sample=None, rng=None):
    """Max relative error between backprop and central differences.

    ``f`` rebuilds and returns the scalar loss from the current
    parameter values. Relative error per scalar is
    |a - n| / max(1e-8, |a| + |n|). ``sample`` caps the number of
    scalars probed per tensor (chosen with ``rng``); None probes all.
    """
    params.zero_grads()
    loss = f()
    backward(loss)
    analytic = {name: p.grad.copy() for name, p in params.items()}
    params.zero_grads()
    if sample is not None and rng is None:
        rng = np.random.default_rng(0)

    worst = 0.0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        aflat = analytic[name].reshape(-1)
        if sample is not None and flat.size > sample:
            idx = rng.choice(flat.size, size=sample, replace=False)
        else:
            idx = range(flat.size)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            fp = f().item()
            flat[i] = orig - h
            fm = f().item()
            flat[i] = orig
            numeric = (fp - fm) / (2.0 * h)
            a = aflat[i]
            rel = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            if rel > worst:
                worst = rel
    return worst
