"""Array-level reverse-mode differentiation and the small MLPs built on it.

Every primitive accepts plain numpy arrays or :class:`Var` values. When no
argument is a ``Var`` the primitive is a plain numpy computation; otherwise
the application is recorded on the inputs' :class:`GradTape` so that
:func:`backprop` can later pull adjoints back to every leaf.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import expit

from .errors import ContractError


class Var:
    """A value recorded on a tape."""

    __slots__ = ("value", "tape", "name", "args", "fn", "vjp", "index")

    def __init__(self, value, tape, name=None):
        self.value = value
        self.tape = tape
        self.name = name
        self.args = ()
        self.fn = None
        self.vjp = None
        self.index = None

    @property
    def shape(self):
        return np.shape(self.value)

    @property
    def dtype(self):
        return np.asarray(self.value).dtype

    @property
    def ndim(self):
        return np.ndim(self.value)

    def __repr__(self):
        label = self.name or ("leaf" if self.fn is None else getattr(self.fn, "__name__", "op"))
        return f"Var({label}, shape={self.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __getitem__(self, key):
        return getitem(self, key)


class GradTape:
    """Records primitive applications in evaluation order."""

    def __init__(self):
        self.nodes: list[Var] = []
        self.leaves: list[Var] = []

    def var(self, value, name=None) -> Var:
        leaf = Var(value, self, name)
        self.leaves.append(leaf)
        return leaf

    def replay(self, overrides=None) -> dict[int, np.ndarray]:
        """Re-run every recorded primitive forward.

        ``overrides`` maps leaves to substitute values. Returns values keyed
        by ``id`` of each leaf and node.
        """
        overrides = overrides or {}
        values = {id(leaf): overrides.get(leaf, leaf.value) for leaf in self.leaves}
        for node in self.nodes:
            args = [values[id(a)] if isinstance(a, Var) else a for a in node.args]
            values[id(node)] = node.fn(*args)
        return values


def value_of(x):
    return x.value if isinstance(x, Var) else x


def _record(fn: Callable, vjp: Callable, *args):
    """Apply ``fn`` to argument values and record it if any argument is a Var.

    ``vjp(g, out, *arg_values)`` returns one adjoint (or None) per argument.
    """
    tape = None
    for a in args:
        if isinstance(a, Var):
            if tape is None:
                tape = a.tape
            elif a.tape is not tape:
                raise ContractError("arguments recorded on different tapes")
    vals = [value_of(a) for a in args]
    out = fn(*vals)
    if tape is None:
        return out
    node = Var(out, tape)
    node.args = args
    node.fn = fn
    node.vjp = vjp
    node.index = len(tape.nodes)
    tape.nodes.append(node)
    return node


def _unbroadcast(g, shape):
    if np.shape(g) == tuple(shape):
        return g
    g = np.asarray(g)
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def backprop(tape: GradTape, output) -> dict:
    """Adjoints of a scalar ``output`` with respect to every leaf of ``tape``.

    Leaves that do not influence ``output`` receive zeros.
    """
    if not isinstance(output, Var) or output.tape is not tape:
        raise ContractError("output was not produced through this tape")
    if output.fn is not None and (output.index is None or tape.nodes[output.index] is not output):
        raise ContractError("output is not recorded on this tape")
    if np.size(output.value) != 1:
        raise ContractError(f"backprop needs a scalar output, got shape {output.shape}")

    adjoints = {id(output): np.ones_like(output.value)}
    if output.fn is not None:
        for node in reversed(tape.nodes[: output.index + 1]):
            g = adjoints.pop(id(node), None)
            if g is None:
                continue
            vals = [value_of(a) for a in node.args]
            grads = node.vjp(g, node.value, *vals)
            for a, ga in zip(node.args, grads):
                if ga is None or not isinstance(a, Var):
                    continue
                key = id(a)
                if key in adjoints:
                    adjoints[key] = adjoints[key] + ga
                else:
                    adjoints[key] = ga
    return {
        leaf: np.asarray(adjoints[id(leaf)], dtype=np.asarray(leaf.value).dtype).reshape(leaf.shape)
        if id(leaf) in adjoints
        else np.zeros_like(leaf.value)
        for leaf in tape.leaves
    }


# -- elementwise -------------------------------------------------------------


def add(a, b):
    return _record(
        np.add,
        lambda g, out, av, bv: (_unbroadcast(g, np.shape(av)), _unbroadcast(g, np.shape(bv))),
        a,
        b,
    )


def sub(a, b):
    return _record(
        np.subtract,
        lambda g, out, av, bv: (_unbroadcast(g, np.shape(av)), _unbroadcast(-g, np.shape(bv))),
        a,
        b,
    )


def mul(a, b):
    return _record(
        np.multiply,
        lambda g, out, av, bv: (
            _unbroadcast(g * bv, np.shape(av)),
            _unbroadcast(g * av, np.shape(bv)),
        ),
        a,
        b,
    )


def neg(a):
    return _record(np.negative, lambda g, out, av: (-g,), a)


def square(a):
    return _record(np.square, lambda g, out, av: (2 * g * av,), a)


def exp(a):
    return _record(np.exp, lambda g, out, av: (g * out,), a)


def relu(a):
    return _record(
        lambda v: np.maximum(v, 0),
        lambda g, out, av: (g * (av > 0),),
        a,
    )


def softplus(a):
    return _record(
        lambda v: np.logaddexp(v, 0).astype(np.result_type(v), copy=False),
        lambda g, out, av: (g * expit(av),),
        a,
    )


def sigmoid(a):
    return _record(expit, lambda g, out, av: (g * out * (1 - out),), a)


def sin(a):
    return _record(np.sin, lambda g, out, av: (g * np.cos(av),), a)


def cos(a):
    return _record(np.cos, lambda g, out, av: (-g * np.sin(av),), a)


# -- reductions and shape ----------------------------------------------------


def sum_(a, axis=None, keepdims=False):
    def vjp(g, out, av):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, np.shape(av)).copy(),)

    return _record(lambda v: np.sum(v, axis=axis, keepdims=keepdims), vjp, a)


def mean(a, axis=None, keepdims=False):
    n = np.size(value_of(a)) if axis is None else np.shape(value_of(a))[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a, shape):
    return _record(
        lambda v: np.reshape(v, shape),
        lambda g, out, av: (np.reshape(g, np.shape(av)),),
        a,
    )


def getitem(a, key):
    def vjp(g, out, av):
        full = np.zeros_like(av)
        np.add.at(full, key, g) if _needs_add_at(key) else full.__setitem__(key, g)
        return (full,)

    return _record(lambda v: v[key], vjp, a)


def _needs_add_at(key):
    keys = key if isinstance(key, tuple) else (key,)
    return any(isinstance(k, (list, np.ndarray)) for k in keys)


def concat(parts: Sequence, axis=-1):
    sizes = [np.shape(value_of(p))[axis] for p in parts]
    bounds = np.cumsum(sizes)[:-1]

    def vjp(g, out, *vals):
        return tuple(np.split(g, bounds, axis=axis))

    return _record(lambda *vs: np.concatenate(vs, axis=axis), vjp, *parts)


def cumsum_exclusive(a, axis=-1):
    """Running sum that excludes the current element (first entry is 0)."""

    def fwd(v):
        c = np.cumsum(v, axis=axis)
        c = np.roll(c, 1, axis=axis)
        idx = [slice(None)] * c.ndim
        idx[axis] = 0
        c[tuple(idx)] = 0
        return c

    def vjp(g, out, av):
        # adjoint of an exclusive prefix sum is an exclusive suffix sum
        rev = np.flip(g, axis=axis)
        c = np.roll(np.cumsum(rev, axis=axis), 1, axis=axis)
        idx = [slice(None)] * c.ndim
        idx[axis] = 0
        c[tuple(idx)] = 0
        return (np.flip(c, axis=axis),)

    return _record(fwd, vjp, a)


def take_along_axis(a, indices, axis):
    def vjp(g, out, av):
        full = np.zeros_like(av)
        # duplicate indices must accumulate
        flat_idx = _flat_along(indices, axis, np.shape(av))
        np.add.at(full.reshape(-1), flat_idx.reshape(-1), np.asarray(g).reshape(-1))
        return (full,)

    return _record(lambda v: np.take_along_axis(v, indices, axis), vjp, a)


def _flat_along(indices, axis, shape):
    grids = np.indices(indices.shape, sparse=True)
    grids = list(grids)
    grids[axis] = indices
    return np.ravel_multi_index(tuple(np.broadcast_arrays(*grids)), shape)


# -- layers ------------------------------------------------------------------


def linear(x, W, b):
    """``x @ W.T + b`` for a vector or a batch of row vectors."""

    def fwd(xv, Wv, bv):
        return xv @ Wv.T + bv

    def vjp(g, out, xv, Wv, bv):
        g2 = np.atleast_2d(g)
        x2 = np.atleast_2d(xv)
        gx = (g2 @ Wv).reshape(np.shape(xv))
        return gx, g2.T @ x2, g2.sum(axis=0)

    return _record(fwd, vjp, x, W, b)


@dataclass
class LinearLayer:
    """Affine layer with weight ``W`` of shape ``[out, in]`` and bias ``b``."""

    W: object
    b: object

    def __post_init__(self):
        ws, bs = np.shape(value_of(self.W)), np.shape(value_of(self.b))
        if len(ws) != 2 or bs != (ws[0],):
            raise ContractError(f"inconsistent layer shapes W{ws} b{bs}")

    @property
    def in_width(self) -> int:
        return np.shape(value_of(self.W))[1]

    @property
    def out_width(self) -> int:
        return np.shape(value_of(self.W))[0]

    def __call__(self, x):
        return linear_apply(self, x)


def linear_apply(layer: LinearLayer, x):
    if np.shape(value_of(x))[-1:] != (layer.in_width,):
        raise ContractError(
            f"input width {np.shape(value_of(x))[-1:]} does not match layer in-width {layer.in_width}"
        )
    return linear(x, layer.W, layer.b)


_ACTIVATIONS = {"relu": relu, "softplus": softplus, "sigmoid": sigmoid}


def activation_apply(kind: str, x):
    try:
        return _ACTIVATIONS[kind](x)
    except KeyError:
        raise ContractError(f"unknown activation {kind!r}") from None


def dir_encode(d, degree: int):
    """Frequency encoding of unit view directions.

    For each octave ``k < degree`` emits ``sin(2^k d)`` then ``cos(2^k d)``
    (three components each), giving ``6 * degree`` values per direction.
    """
    d = np.asarray(d)
    norms = np.linalg.norm(d, axis=-1)
    if np.any(np.abs(norms - 1) > 1e-6):
        raise ContractError("view directions must be unit length")
    parts = []
    for k in range(degree):
        s = d * (2.0**k)
        parts += [np.sin(s), np.cos(s)]
    if not parts:
        return np.zeros(d.shape[:-1] + (0,), dtype=d.dtype)
    return np.concatenate(parts, axis=-1)


@dataclass
class GeometryParams:
    hidden: Callable
    out: Callable


@dataclass
class AppearanceParams:
    layers: Sequence[Callable]


def geometry_mlp(params: GeometryParams, z):
    """Density and bottleneck features from an encoded position.

    ``params.hidden`` and ``params.out`` are layer callables, so a plain
    :class:`LinearLayer` and a mixed layer are interchangeable here.

    Returns:
      (tau, bottleneck): ``tau`` has z's leading shape, ``bottleneck`` is the
      ReLU hidden activation.
    """
    bottleneck = relu(params.hidden(z))
    raw = params.out(bottleneck)
    return softplus(getitem(raw, (..., 0))), bottleneck


def appearance_mlp(params: AppearanceParams, bottleneck, d_enc):
    h = concat([bottleneck, d_enc], axis=-1)
    *hidden, last = params.layers
    for layer in hidden:
        h = relu(layer(h))
    return sigmoid(last(h))
