""" A small dense tensor engine with reverse-mode differentiation.

Tensors are numpy arrays. A `Graph` wraps a build function that composes the
primitives of a `Tape`; evaluating the graph records every primitive together
with its backward rule, so that gradients of a scalar output with respect to
any named input can be computed afterwards.

    def build(tape, inp):
        h = tape.relu(tape.dense(inp['x'], inp['w'], inp['b']))
        return {'loss': tape.mean(h)}

    g = Graph(build, name='toy')
    values = evaluate(g, {'x': x, 'w': w, 'b': b})
    grads = gradients(g, {'x': x, 'w': w, 'b': b}, loss='loss', wrt=['w', 'b'])

Models train in 32-bit precision; gradient checks evaluate the same graphs in
64-bit precision.
"""

from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError, NumericError

import logging
logger = logging.getLogger(__name__)

PRECISIONS = {
        'float32': np.float32,
        'float64': np.float64,
    }

# lower bound for the norm that L2 normalization divides by
NORM_EPS = 1e-12


def get_dtype(precision):
    try:
        return PRECISIONS[precision]
    except KeyError:
        raise ValueError(f"unknown precision '{precision}', expected one of {', '.join(PRECISIONS)}")


class Node:
    """ One recorded value on a `Tape`: an input or the result of a primitive.
    """
    __slots__ = ('index', 'name', 'value', 'parents', 'backward')

    def __init__(self, index, name, value, parents=(), backward=None):
        self.index = index
        self.name = name
        self.value = value
        self.parents = parents
        self.backward = backward

    @property
    def shape(self):
        return self.value.shape

    @property
    def differentiable(self):
        return np.issubdtype(self.value.dtype, np.floating)

    def __repr__(self):
        return f"Node({self.name}, shape={self.value.shape})"


def _check(name, cond, message):
    if not cond:
        raise ShapeError(f"{name}: {message}")


class Tape:
    """ Records primitive operations in evaluation order, which is a
    topological order of the computation graph.
    """

    def __init__(self, precision='float32'):
        self.precision = precision
        self.dtype = get_dtype(precision)
        self.nodes = []

    def _name(self, op):
        return f"{op}#{len(self.nodes)}"

    def _record(self, name, value, parents, backward):
        if not np.all(np.isfinite(value)):
            raise NumericError(f"{name}: non-finite value")
        node = Node(len(self.nodes), name, value, tuple(parents), backward)
        self.nodes.append(node)
        return node

    def input(self, name, value):
        value = np.asarray(value)
        if np.issubdtype(value.dtype, np.floating):
            value = value.astype(self.dtype, copy=False)
        elif not np.issubdtype(value.dtype, np.integer):
            raise ShapeError(f"input '{name}': unsupported dtype {value.dtype}")
        return self._record(name, value, (), None)

    def constant(self, value):
        return self.input(self._name('const'), np.asarray(value, dtype=self.dtype))

    # ---- primitives ---------------------------------------------------------

    def embedding_lookup(self, table, ids):
        """ (V, D) table, (B, T) integer ids -> (B, T, D)
        """
        name = self._name('embedding_lookup')
        tv, iv = table.value, ids.value
        _check(name, tv.ndim == 2, f"table must be 2D, got shape {tv.shape}")
        _check(name, np.issubdtype(iv.dtype, np.integer), "ids must be integers")
        _check(name, iv.size == 0 or (iv.min() >= 0 and iv.max() < tv.shape[0]),
                f"ids must be in [0, {tv.shape[0]})")
        out = tv[iv]

        def backward(g):
            gt = np.zeros_like(tv)
            np.add.at(gt, iv.reshape(-1), g.reshape(-1, tv.shape[1]))
            return gt, None
        return self._record(name, out, (table, ids), backward)

    def conv1d(self, x, w, b):
        """ Valid 1D convolution: (B, T, D) input, (k, D, C) kernels, (C,)
        bias -> (B, T-k+1, C)
        """
        name = self._name('conv1d')
        xv, wv, bv = x.value, w.value, b.value
        _check(name, xv.ndim == 3 and wv.ndim == 3, f"expected 3D input and kernels, got {xv.shape} and {wv.shape}")
        k, d, c = wv.shape
        bsz, t, d_in = xv.shape
        _check(name, d_in == d, f"input depth {d_in} does not match kernel depth {d}")
        _check(name, bv.shape == (c,), f"bias shape {bv.shape} does not match {c} filters")
        _check(name, t >= k, f"input length {t} is shorter than the kernel size {k}")
        t_out = t - k + 1

        # (B, T', D, k) -> (B*T', k*D) so that it matches w reshaped to (k*D, C)
        cols = sliding_window_view(xv, k, axis=1).transpose(0, 1, 3, 2).reshape(bsz * t_out, k * d)
        w2 = wv.reshape(k * d, c)
        out = (cols @ w2 + bv).reshape(bsz, t_out, c)

        def backward(g):
            g2 = g.reshape(bsz * t_out, c)
            gw = (cols.T @ g2).reshape(k, d, c)
            gb = g2.sum(axis=0)
            gcols = (g2 @ w2.T).reshape(bsz, t_out, k, d)
            gx = np.zeros_like(xv)
            for j in range(k):
                gx[:, j:j + t_out, :] += gcols[:, :, j, :]
            return gx, gw, gb
        return self._record(name, out, (x, w, b), backward)

    def max_over_time(self, x, lengths):
        """ (B, T, C) input, (B,) integer lengths -> (B, C)

        Position t of row i takes part in the maximum iff t < lengths[i]
        (lengths beyond T are clipped to T). Among equal maxima, the lowest
        position is selected.
        """
        name = self._name('max_over_time')
        xv, lv = x.value, lengths.value
        _check(name, xv.ndim == 3, f"expected a 3D input, got shape {xv.shape}")
        _check(name, lv.shape == (xv.shape[0],), f"lengths shape {lv.shape} does not match batch size {xv.shape[0]}")
        _check(name, lv.size == 0 or lv.min() >= 1, "lengths must be positive")
        valid = np.minimum(lv, xv.shape[1])
        masked = np.where(np.arange(xv.shape[1])[None, :, None] < valid[:, None, None], xv, -np.inf)
        idx = np.argmax(masked, axis=1)[:, None, :]
        out = np.take_along_axis(xv, idx, axis=1)[:, 0, :]

        def backward(g):
            gx = np.zeros_like(xv)
            np.put_along_axis(gx, idx, g[:, None, :], axis=1)
            return gx, None
        return self._record(name, out, (x, lengths), backward)

    def dense(self, x, w, b):
        """ (B, I) input, (I, O) weights, (O,) bias -> (B, O)
        """
        name = self._name('dense')
        xv, wv, bv = x.value, w.value, b.value
        _check(name, xv.ndim == 2 and wv.ndim == 2, f"expected 2D input and weights, got {xv.shape} and {wv.shape}")
        _check(name, xv.shape[1] == wv.shape[0], f"input width {xv.shape[1]} does not match weights {wv.shape}")
        _check(name, bv.shape == (wv.shape[1],), f"bias shape {bv.shape} does not match weights {wv.shape}")
        out = xv @ wv + bv

        def backward(g):
            return g @ wv.T, xv.T @ g, g.sum(axis=0)
        return self._record(name, out, (x, w, b), backward)

    def relu(self, x):
        """ Elementwise max(0, x).
        """
        name = self._name('relu')
        xv = x.value
        out = np.maximum(xv, 0)

        def backward(g):
            return (g * (xv > 0),)
        return self._record(name, out, (x,), backward)

    def concat(self, xs):
        """ Concatenate 2D inputs along the last axis.
        """
        name = self._name('concat')
        _check(name, len(xs) > 0, "nothing to concatenate")
        _check(name, all(x.value.ndim == 2 for x in xs), "all inputs must be 2D")
        rows = xs[0].value.shape[0]
        _check(name, all(x.value.shape[0] == rows for x in xs), "all inputs need the same number of rows")
        values = [x.value if np.issubdtype(x.value.dtype, np.floating) else x.value.astype(self.dtype) for x in xs]
        out = np.concatenate(values, axis=1)
        splits = np.cumsum([v.shape[1] for v in values])[:-1]

        def backward(g):
            parts = np.split(g, splits, axis=1)
            return tuple(p if x.differentiable else None for p, x in zip(parts, xs))
        return self._record(name, out, xs, backward)

    def l2_normalize(self, x):
        """ Scale every row of a 2D input to unit length: x / max(|x|, NORM_EPS).

        The epsilon bounds the divisor rather than being added under the square
        root, so rows with a norm of at least NORM_EPS come out with norm exactly
        1 (up to rounding) and zero rows stay zero.
        """
        name = self._name('l2_normalize')
        xv = x.value
        _check(name, xv.ndim == 2, f"expected a 2D input, got shape {xv.shape}")
        raw = np.sqrt(np.sum(xv * xv, axis=1, keepdims=True))
        clamped = raw < NORM_EPS
        norm = np.maximum(raw, NORM_EPS)
        out = xv / norm

        def backward(g):
            proj = np.where(clamped, 0, np.sum(g * out, axis=1, keepdims=True))
            return ((g - out * proj) / norm,)
        return self._record(name, out, (x,), backward)

    def matmul_t(self, a, b):
        """ Dot products of all row pairs: (B, E), (L, E) -> (B, L)
        """
        name = self._name('matmul_t')
        av, bv = a.value, b.value
        _check(name, av.ndim == 2 and bv.ndim == 2 and av.shape[1] == bv.shape[1],
                f"incompatible shapes {av.shape} and {bv.shape}")
        out = av @ bv.T

        def backward(g):
            return g @ bv, g.T @ av
        return self._record(name, out, (a, b), backward)

    def row_dot(self, a, b):
        """ Dot products of corresponding rows: (B, E), (B, E) -> (B,)
        """
        name = self._name('row_dot')
        av, bv = a.value, b.value
        _check(name, av.ndim == 2 and av.shape == bv.shape, f"incompatible shapes {av.shape} and {bv.shape}")
        out = np.sum(av * bv, axis=1)

        def backward(g):
            return g[:, None] * bv, g[:, None] * av
        return self._record(name, out, (a, b), backward)

    def take(self, x, idx):
        """ Select one column per row: (B, L), (B,) integers -> (B,)
        """
        name = self._name('take')
        xv, iv = x.value, idx.value
        _check(name, xv.ndim == 2 and iv.shape == (xv.shape[0],), f"incompatible shapes {xv.shape} and {iv.shape}")
        _check(name, iv.size == 0 or (iv.min() >= 0 and iv.max() < xv.shape[1]), f"indices must be in [0, {xv.shape[1]})")
        rows = np.arange(xv.shape[0])
        out = xv[rows, iv]

        def backward(g):
            gx = np.zeros_like(xv)
            gx[rows, iv] = g
            return gx, None
        return self._record(name, out, (x, idx), backward)

    def softmax(self, logits):
        """ Row-wise softmax of a 2D input.
        """
        name = self._name('softmax')
        lv = logits.value
        _check(name, lv.ndim == 2, f"expected a 2D input, got shape {lv.shape}")
        e = np.exp(lv - lv.max(axis=1, keepdims=True))
        out = e / e.sum(axis=1, keepdims=True)

        def backward(g):
            return (out * (g - np.sum(g * out, axis=1, keepdims=True)),)
        return self._record(name, out, (logits,), backward)

    def softmax_cross_entropy(self, logits, labels):
        """ -log(softmax(logits)[label]) per row: (B, L), (B,) -> (B,)
        """
        name = self._name('softmax_cross_entropy')
        lv, yv = logits.value, labels.value
        _check(name, lv.ndim == 2 and yv.shape == (lv.shape[0],), f"incompatible shapes {lv.shape} and {yv.shape}")
        _check(name, yv.size == 0 or (yv.min() >= 0 and yv.max() < lv.shape[1]), f"labels must be in [0, {lv.shape[1]})")
        shifted = lv - lv.max(axis=1, keepdims=True)
        log_z = np.log(np.sum(np.exp(shifted), axis=1))
        rows = np.arange(lv.shape[0])
        out = log_z - shifted[rows, yv]
        probs = np.exp(shifted - log_z[:, None])

        def backward(g):
            gl = probs.copy()
            gl[rows, yv] -= 1
            return gl * g[:, None], None
        return self._record(name, out, (logits, labels), backward)

    def add(self, x, y):
        name = self._name('add')
        _check(name, x.value.shape == y.value.shape, f"incompatible shapes {x.value.shape} and {y.value.shape}")
        return self._record(name, x.value + y.value, (x, y), lambda g: (g, g))

    def sub(self, x, y):
        name = self._name('sub')
        _check(name, x.value.shape == y.value.shape, f"incompatible shapes {x.value.shape} and {y.value.shape}")
        return self._record(name, x.value - y.value, (x, y), lambda g: (g, -g))

    def mul(self, x, y):
        name = self._name('mul')
        xv, yv = x.value, y.value
        _check(name, xv.shape == yv.shape, f"incompatible shapes {xv.shape} and {yv.shape}")
        return self._record(name, xv * yv, (x, y), lambda g: (g * yv, g * xv))

    def scale(self, x, factor):
        name = self._name('scale')
        factor = self.dtype(factor)
        return self._record(name, x.value * factor, (x,), lambda g: (g * factor,))

    def shift(self, x, offset):
        name = self._name('shift')
        offset = self.dtype(offset)
        return self._record(name, x.value + offset, (x,), lambda g: (g,))

    def sum(self, x):
        name = self._name('sum')
        xv = x.value
        return self._record(name, np.sum(xv), (x,), lambda g: (np.full_like(xv, g),))

    def mean(self, x):
        name = self._name('mean')
        xv = x.value
        _check(name, xv.size > 0, "mean of an empty tensor")
        return self._record(name, np.mean(xv), (x,), lambda g: (np.full_like(xv, g / xv.size),))

    # ---- reverse mode -------------------------------------------------------

    def backward(self, loss):
        """ Propagate d(loss)/d(node) to all nodes; returns a dict from node
        index to gradient for every node that the loss depends on.
        """
        if loss.value.size != 1:
            raise ShapeError(f"{loss.name}: the loss must be a scalar, got shape {loss.value.shape}")
        grads = {loss.index: np.ones_like(loss.value)}
        for node in reversed(self.nodes[:loss.index + 1]):
            g = grads.get(node.index, None)
            if g is None or node.backward is None:
                continue
            parent_grads = node.backward(g)
            for p, pg in zip(node.parents, parent_grads):
                if pg is None or not p.differentiable:
                    continue
                if p.index in grads:
                    grads[p.index] = grads[p.index] + pg
                else:
                    grads[p.index] = pg
        return grads


class Graph:
    """ A differentiable computation from named input tensors to named output
    tensors.

    `build(tape, inputs)` receives a Tape and a dict of input Nodes and
    returns a dict of output Nodes.
    """

    def __init__(self, build: Callable, name: str = 'graph'):
        self.build = build
        self.name = name

    def __repr__(self):
        return f"Graph({self.name})"

    def trace(self, inputs: Dict[str, np.ndarray], precision='float32'):
        tape = Tape(precision)
        in_nodes = {k: tape.input(k, v) for k, v in inputs.items()}
        outputs = self.build(tape, in_nodes)
        return tape, in_nodes, outputs


def evaluate(g: Graph, inputs: Dict[str, np.ndarray], outputs: Optional[Sequence[str]] = None, precision='float32'):
    """ Forward values of the requested outputs (default: all of them).
    """
    tape, in_nodes, out_nodes = g.trace(inputs, precision)
    if outputs is None:
        outputs = list(out_nodes.keys())
    return {k: out_nodes[k].value for k in outputs}


def value_and_gradients(g: Graph, inputs: Dict[str, np.ndarray], loss: str = 'loss',
        wrt: Optional[Sequence[str]] = None, precision='float32'):
    """ Forward values of all outputs and the gradients of the scalar output
    `loss` with respect to the inputs named in `wrt` (default: all floating
    point inputs). Inputs that the loss does not depend on get zero
    gradients.
    """
    tape, in_nodes, out_nodes = g.trace(inputs, precision)
    if loss not in out_nodes:
        raise ShapeError(f"{g.name}: no output named '{loss}'")
    grads = tape.backward(out_nodes[loss])
    if wrt is None:
        wrt = [k for k, n in in_nodes.items() if n.differentiable]
    res = dict()
    for k in wrt:
        node = in_nodes[k]
        if not node.differentiable:
            raise ShapeError(f"{g.name}: input '{k}' is not differentiable")
        res[k] = grads.get(node.index, np.zeros_like(node.value))
    return {k: n.value for k, n in out_nodes.items()}, res


def gradients(g: Graph, inputs: Dict[str, np.ndarray], loss: str = 'loss',
        wrt: Optional[Sequence[str]] = None, precision='float32'):
    return value_and_gradients(g, inputs, loss, wrt, precision)[1]


def grad_check(g: Graph, point: Dict[str, np.ndarray], h: float = 1e-5, loss: str = 'loss',
        wrt: Optional[Sequence[str]] = None) -> float:
    """ Compare the gradients of `loss` at `point` with central differences,
    in 64-bit precision.

    Returns the maximum over all coordinates of
    |analytic - numeric| / max(1, |numeric|).
    """
    if not (1e-6 <= h <= 1e-3):
        raise ValueError(f"the step h must be in [1e-6, 1e-3], got {h}")

    point = {k: (np.array(v, dtype=np.float64) if np.issubdtype(np.asarray(v).dtype, np.floating) else np.asarray(v))
            for k, v in point.items()}
    analytic = gradients(g, point, loss=loss, wrt=wrt, precision='float64')

    def f(p):
        return float(evaluate(g, p, outputs=[loss], precision='float64')[loss])

    max_err = 0.0
    for k, ga in analytic.items():
        x = point[k]
        flat = x.reshape(-1)
        ga = ga.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = f(point)
            flat[i] = orig - h
            f_minus = f(point)
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2 * h)
            err = abs(ga[i] - numeric) / max(1.0, abs(numeric))
            max_err = max(max_err, err)
    return max_err


@dataclass
class AdamState:
    """ Moment estimates of the Adam optimizer, one entry per parameter.
    """
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], state: AdamState):
    """ One Adam update with bias correction. Returns new parameter and state
    objects, the arguments are left untouched.
    """
    step = state.step + 1
    new_params, new_m, new_v = dict(), dict(), dict()
    corr1 = 1.0 - state.beta1 ** step
    corr2 = 1.0 - state.beta2 ** step
    for k, p in params.items():
        if k not in grads:
            raise ShapeError(f"adam: no gradient for parameter '{k}'")
        g = grads[k]
        if g.shape != p.shape:
            raise ShapeError(f"adam: gradient shape {g.shape} does not match parameter '{k}' of shape {p.shape}")
        m = state.m.get(k, None)
        v = state.v.get(k, None)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        elif m.shape != p.shape:
            raise ShapeError(f"adam: moment shape {m.shape} does not match parameter '{k}' of shape {p.shape}")
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        m_hat = m / corr1
        v_hat = v / corr2
        new_params[k] = (p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.dtype, copy=False)
        new_m[k] = m.astype(p.dtype, copy=False)
        new_v[k] = v.astype(p.dtype, copy=False)
    new_state = AdamState(lr=state.lr, beta1=state.beta1, beta2=state.beta2, eps=state.eps,
            step=step, m=new_m, v=new_v)
    return new_params, new_state
