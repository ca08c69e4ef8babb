"""Small reverse-mode autodiff over numpy arrays, plus the layers the option model needs.

Only the handful of primitives used by the model are provided: elementwise
arithmetic with broadcasting, matmul, tanh / sigmoid / exp / log, softmax,
concatenation, slicing and reductions.  Gradients are exact (float64).
"""
from __future__ import annotations

import contextlib
from dataclasses import dataclass, field

import numpy as np

_FLOAT = np.float64


@contextlib.contextmanager
def float_precision(dtype):
    """Temporarily build tensors with ``dtype`` (e.g. ``np.longdouble``)."""
    global _FLOAT
    old, _FLOAT = _FLOAT, dtype
    try:
        yield
    finally:
        _FLOAT = old


class Tensor:
    """A numpy array that records how it was computed."""

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward")
    __array_priority__ = 100

    def __init__(self, value, requires_grad=False, parents=(), backward=None):
        self.value = np.asarray(value, dtype=_FLOAT)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return mul(self, power(other, -1.0))
        return mul(self, 1.0 / np.asarray(other, dtype=np.float64))

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def backward(self):
        backward(self)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(value, parents, backward):
    req = any(p.requires_grad for p in parents)
    return Tensor(value, requires_grad=req, parents=parents if req else (),
                  backward=backward if req else None)


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)
    return _node(a.value + b.value, (a, b), bw)


def neg(a):
    return _node(-a.value, (a,), lambda g: (-g,))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        return _unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)
    return _node(a.value * b.value, (a, b), bw)


def power(a, p):
    def bw(g):
        return (g * p * a.value ** (p - 1),)
    return _node(a.value ** p, (a,), bw)


def square(a):
    a = as_tensor(a)
    return _node(a.value * a.value, (a,), lambda g: (2.0 * g * a.value,))


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        # promote vectors to matrices so the transposes below are defined
        av = a.value[None, :] if a.value.ndim == 1 else a.value
        bv = b.value[:, None] if b.value.ndim == 1 else b.value
        gm = g
        if a.value.ndim == 1:
            gm = np.expand_dims(gm, -2)
        if b.value.ndim == 1:
            gm = np.expand_dims(gm, -1)
        ga = gm @ np.swapaxes(bv, -1, -2)
        gb = np.swapaxes(av, -1, -2) @ gm
        if a.value.ndim == 1:
            ga = ga[..., 0, :]
        if b.value.ndim == 1:
            gb = gb[..., 0]
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)
    return _node(a.value @ b.value, (a, b), bw)


def tanh(a):
    out = np.tanh(a.value)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a):
    out = 0.5 * (1.0 + np.tanh(0.5 * a.value))
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),))


def exp(a):
    out = np.exp(a.value)
    return _node(out, (a,), lambda g: (g * out,))


def log(a):
    return _node(np.log(a.value), (a,), lambda g: (g / a.value,))


def softmax(a, axis=-1):
    z = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)
    return _node(out, (a,), bw)


def log_softmax(a, axis=-1):
    z = a.value - a.value.max(axis=axis, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))
    p = np.exp(out)

    def bw(g):
        return (g - p * g.sum(axis=axis, keepdims=True),)
    return _node(out, (a,), bw)


def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)
    return _node(a.value.sum(axis=axis, keepdims=keepdims), (a,), bw)


def getitem(a, idx):
    parts = idx if isinstance(idx, tuple) else (idx,)
    basic = all(isinstance(i, (slice, int, type(Ellipsis))) or i is None for i in parts)

    def bw(g):
        out = np.zeros_like(a.value)
        if basic:
            out[idx] += g
        else:
            np.add.at(out, idx, g)
        return (out,)
    return _node(a.value[idx], (a,), bw)


def concat(items, axis=-1):
    items = [as_tensor(t) for t in items]
    sizes = [t.shape[axis] for t in items]
    bounds = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, bounds, axis=axis))
    return _node(np.concatenate([t.value for t in items], axis=axis), tuple(items), bw)


def stack(items, axis=0):
    items = [as_tensor(t) for t in items]

    def bw(g):
        return tuple(np.moveaxis(g, axis, 0))
    return _node(np.stack([t.value for t in items], axis=axis), tuple(items), bw)


def straight_through(hard, soft, anchor=None):
    """Forward value ``hard + soft - anchor``; gradient flows only into ``soft``.

    With the default ``anchor = soft.value`` the forward value is exactly
    ``hard``.  Passing a frozen anchor turns the node into a smooth function
    of ``soft`` whose derivative at the anchor equals the straight-through
    estimate, which is what finite-difference checks need.
    """
    soft = as_tensor(soft)
    hard = np.asarray(hard, dtype=np.float64)
    value = hard if anchor is None else hard + soft.value - anchor
    return _node(value, (soft,), lambda g: (g,))


def backward(root):
    """Accumulate d(root)/d(leaf) into ``.grad`` of every leaf requiring grad."""
    if root.value.size != 1:
        raise ValueError("backward needs a scalar output")
    order, seen = [], set()
    stack_ = [(root, False)]
    while stack_:
        node, done = stack_.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))

    grads = {id(root): np.ones_like(root.value)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for p, pg in zip(node._parents, node._backward(g)):
            if not p.requires_grad:
                continue
            key = id(p)
            grads[key] = pg if key not in grads else grads[key] + pg


# ---------------------------------------------------------------------------
# parameters


class ParamStore(dict):
    """Named float64 arrays.  Shapes are fixed once a name is created."""

    def __setitem__(self, name, value):
        if name in self and not isinstance(value, Tensor):
            old = self[name]
            old_shape = old.shape
            if np.shape(value) != old_shape:
                raise ValueError(f"shape of {name!r} is fixed at {old_shape}, got {np.shape(value)}")
        super().__setitem__(name, value)

    def add(self, name, value):
        if name in self:
            raise KeyError(f"duplicate parameter name {name!r}")
        super().__setitem__(name, np.array(value, dtype=np.float64))

    def copy(self):
        return ParamStore({k: np.array(v, copy=True) for k, v in self.items()})

    def num_scalars(self):
        return int(sum(np.size(v) for v in self.values()))


def init_mlp(params, prefix, sizes, rng):
    """Add layers ``prefix.W{i}`` (in, out) and ``prefix.b{i}`` for consecutive sizes."""
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        bound = 1.0 / np.sqrt(n_in)
        params.add(f"{prefix}.W{i}", rng.uniform(-bound, bound, size=(n_in, n_out)))
        params.add(f"{prefix}.b{i}", np.zeros(n_out))


def init_lstm(params, prefix, n_in, hidden, rng):
    n = n_in + hidden
    bound = 1.0 / np.sqrt(n)
    params.add(f"{prefix}.W", rng.uniform(-bound, bound, size=(n, 4 * hidden)))
    b = np.zeros(4 * hidden)
    b[hidden:2 * hidden] = 1.0  # forget gate
    params.add(f"{prefix}.b", b)


def _layer_names(params, prefix):
    names = []
    i = 0
    while f"{prefix}.W{i}" in params:
        names.append((f"{prefix}.W{i}", f"{prefix}.b{i}"))
        i += 1
    if not names:
        raise KeyError(f"no layers under prefix {prefix!r}")
    return names


def mlp_forward(params, prefix, x):
    """Affine layers with tanh between them and a linear output.

    ``x`` may be a single vector or a batch with features on the last axis.
    Returns a Tensor.
    """
    x = as_tensor(x)
    layers = _layer_names(params, prefix)
    for i, (wn, bn) in enumerate(layers):
        W, b = as_tensor(params[wn]), as_tensor(params[bn])
        if x.shape[-1] != W.shape[0]:
            raise ValueError(f"{wn}: expected input width {W.shape[0]}, got {x.shape[-1]}")
        x = x @ W + b
        if i < len(layers) - 1:
            x = tanh(x)
    return x


@dataclass
class LstmState:
    hidden: object
    cell: object

    @classmethod
    def zeros(cls, size, batch=None):
        shape = (size,) if batch is None else (batch, size)
        return cls(Tensor(np.zeros(shape)), Tensor(np.zeros(shape)))


def lstm_step(params, prefix, x, state):
    """One LSTM cell update with gate order (input, forget, candidate, output).

    Returns ``(output, new_state)``; the output is the new hidden vector.
    """
    W, b = as_tensor(params[f"{prefix}.W"]), as_tensor(params[f"{prefix}.b"])
    hsize = W.shape[1] // 4
    x = as_tensor(x)
    h, c = as_tensor(state.hidden), as_tensor(state.cell)
    if h.shape[-1] != hsize or c.shape[-1] != hsize:
        raise ValueError(f"{prefix}: state size {h.shape[-1]} does not match hidden size {hsize}")
    if x.shape[-1] + hsize != W.shape[0]:
        raise ValueError(f"{prefix}: expected input width {W.shape[0] - hsize}, got {x.shape[-1]}")
    z = concat([x, h], axis=-1) @ W + b
    i = sigmoid(z[..., :hsize])
    f = sigmoid(z[..., hsize:2 * hsize])
    g = tanh(z[..., 2 * hsize:3 * hsize])
    o = sigmoid(z[..., 3 * hsize:])
    c_new = f * c + i * g
    h_new = o * tanh(c_new)
    return h_new, LstmState(h_new, c_new)


# ---------------------------------------------------------------------------
# gradients and optimisation


def _leaves(params):
    return {k: Tensor(np.array(v, dtype=np.float64), requires_grad=True) for k, v in params.items()}


def value_and_grad(loss_fn, params, has_aux=False):
    """Evaluate ``loss_fn`` on tensor-wrapped ``params`` and backpropagate.

    ``loss_fn`` returns a scalar Tensor, or ``(scalar, aux)`` when ``has_aux``.
    Returns ``(value, grads)`` or ``(value, grads, aux)``.
    """
    leaves = _leaves(params)
    out = loss_fn(leaves)
    loss, aux = out if has_aux else (out, None)
    loss = as_tensor(loss)
    value = float(loss.value)
    if not np.isfinite(value):
        raise FloatingPointError(f"loss is not finite: {value}")
    if loss.requires_grad:
        backward(loss)
    grads = ParamStore()
    for k, leaf in leaves.items():
        grads.add(k, leaf.grad if leaf.grad is not None else np.zeros_like(leaf.value))
    return (value, grads, aux) if has_aux else (value, grads)


def loss_gradients(loss_fn, params):
    return value_and_grad(loss_fn, params)[1]


def _evaluate(loss_fn, params):
    return as_tensor(loss_fn({k: Tensor(v) for k, v in params.items()})).value.reshape(())


def finite_difference_check(loss_fn, params, eps=1e-5, return_details=False,
                            dtype=np.longdouble):
    """Largest relative error between reverse-mode and central-difference gradients.

    Relative error per scalar is ``|a - b| / max(|a|, |b|, 1e-12)``.  The
    difference quotients are evaluated in ``dtype`` (extended precision by
    default) so that round-off does not swamp gradients near 1e-9.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    grads = loss_gradients(loss_fn, params)
    with float_precision(dtype):
        return _fd_compare(loss_fn, params, grads, eps, dtype, return_details)


def _fd_compare(loss_fn, params, grads, eps, dtype, return_details):
    work = {k: np.array(v, dtype=dtype, copy=True) for k, v in params.items()}
    worst = 0.0
    details = {}
    for name, arr in work.items():
        fd = np.zeros_like(arr)
        flat, gflat = arr.reshape(-1), fd.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            up = _evaluate(loss_fn, work)
            flat[i] = orig - eps
            down = _evaluate(loss_fn, work)
            flat[i] = orig
            gflat[i] = (up - down) / (2 * dtype(eps))
        fd = fd.astype(np.float64)
        a = grads[name]
        denom = np.maximum(np.maximum(np.abs(a), np.abs(fd)), 1e-12)
        rel = np.abs(a - fd) / denom
        details[name] = float(rel.max()) if rel.size else 0.0
        worst = max(worst, details[name])
    return (worst, details) if return_details else worst


@dataclass
class OptState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    step: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls({k: np.zeros_like(v) for k, v in params.items()},
                   {k: np.zeros_like(v) for k, v in params.items()}, 0)


def optimizer_step(params, grads, opt_state, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """Adam update.  Returns new ``(params, opt_state)``; inputs are not mutated."""
    if set(params) != set(grads):
        raise ValueError("parameter and gradient names differ")
    if opt_state is None:
        opt_state = OptState.zeros_like(params)
    t = opt_state.step + 1
    new_p, new_m, new_v = ParamStore(), {}, {}
    for k, p in params.items():
        g = np.asarray(grads[k])
        if g.shape != p.shape:
            raise ValueError(f"gradient for {k!r} has shape {g.shape}, expected {p.shape}")
        m = beta1 * opt_state.m[k] + (1 - beta1) * g
        v = beta2 * opt_state.v[k] + (1 - beta2) * g * g
        mhat = m / (1 - beta1 ** t)
        vhat = v / (1 - beta2 ** t)
        new_p.add(k, p - lr * mhat / (np.sqrt(vhat) + eps))
        new_m[k], new_v[k] = m, v
    return new_p, OptState(new_m, new_v, t)
