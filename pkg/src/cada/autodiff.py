"""Minimal reverse-mode autodiff over dense float64 arrays.

Tapes are explicit and live for one forward pass: every op records a node on
the tape of its tensor operands, parents always precede children, and
``Tape.backward`` replays the nodes in reverse insertion order.  The op
catalog is deliberately small (add, mul, matmul, relu, sigmoid, exp, log,
sum, mean, softmax, cross_entropy, gradient_reversal); noise injection and
dropout are just ``add``/``mul`` against constant arrays, and anything fancier
is composed from the catalog.

All arithmetic is float64.  Every forward result and every backward
accumulation is checked for NaN/Inf so numerical blow-ups fail loudly at the
node that produced them instead of propagating silently.

Tapes and tensors are single-writer: they may be handed between threads but
never mutated concurrently.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit

__all__ = [
    "Tape",
    "Tensor",
    "add",
    "mul",
    "matmul",
    "relu",
    "sigmoid",
    "exp",
    "log",
    "tensor_sum",
    "tensor_mean",
    "softmax",
    "cross_entropy",
    "gradient_reversal",
    "finite_diff_check",
]


class Tensor:
    """A float64 array, either recorded on a tape or a free constant."""

    __slots__ = ("values", "tape", "node_id")

    def __init__(self, values, tape=None, node_id=None):
        self.values = np.asarray(values, dtype=np.float64)
        self.tape = tape
        self.node_id = node_id

    @property
    def shape(self):
        return self.values.shape

    def item(self):
        return float(self.values)

    def __repr__(self):
        tag = "const" if self.tape is None else f"node {self.node_id}"
        return f"Tensor({tag}, shape={self.values.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Append-only record of one forward pass.

    Node ids are topological by construction.  ``backward`` may run once per
    tape; call ``reset_gradients`` before differentiating again.
    """

    __slots__ = ("_parents", "_vjps", "_names", "_grads", "_leaves")

    def __init__(self):
        self._parents = []
        self._vjps = []
        self._names = []
        self._grads = None
        self._leaves = {}

    def __len__(self):
        return len(self._parents)

    def _record(self, name, values, parents, vjp):
        values = np.asarray(values, dtype=np.float64)
        if not np.all(np.isfinite(values)):
            raise FloatingPointError(
                f"op '{name}' produced non-finite values at node {len(self._parents)}"
            )
        node_id = len(self._parents)
        self._parents.append(parents)
        self._vjps.append(vjp)
        self._names.append(name)
        return Tensor(values, self, node_id)

    def leaf(self, values, *, key=None):
        """Record an input node.  A ``key`` deduplicates: same key, same node."""
        if key is not None:
            cached = self._leaves.get(key)
            if cached is not None:
                return cached
        out = self._record("leaf", values, (), None)
        if key is not None:
            self._leaves[key] = out
        return out

    def param(self, array):
        """Leaf for a parameter array, deduplicated by object identity.

        Reusing the same array in several sub-graphs therefore accumulates all
        of its gradient contributions into one buffer.
        """
        return self.leaf(array, key=id(array))

    def backward(self, root, seed=1.0):
        """Reverse sweep from a scalar ``root``; gradients kept on the tape."""
        if not isinstance(root, Tensor) or root.tape is not self:
            raise ValueError("backward root must be a tensor recorded on this tape")
        if root.values.size != 1:
            raise ValueError(f"backward root must be scalar, got shape {root.values.shape}")
        if self._grads is not None:
            raise RuntimeError("tape already differentiated; call reset_gradients() first")
        grads = [None] * len(self._parents)
        grads[root.node_id] = np.full(root.values.shape, float(seed))
        for node_id in range(root.node_id, -1, -1):
            grad = grads[node_id]
            if grad is None:
                continue
            if not np.all(np.isfinite(grad)):
                raise FloatingPointError(
                    f"non-finite gradient at node {node_id} (op '{self._names[node_id]}')"
                )
            vjp = self._vjps[node_id]
            if vjp is None:
                continue
            for parent_id, contrib in zip(self._parents[node_id], vjp(grad)):
                if contrib is None:
                    continue
                held = grads[parent_id]
                if held is None:
                    # Own the buffer: a vjp may hand back `grad` itself or a
                    # broadcast view, which must not be mutated by later +=.
                    if contrib is grad or contrib.base is not None:
                        contrib = np.array(contrib)
                    grads[parent_id] = contrib
                else:
                    np.add(held, contrib, out=held)
        self._grads = grads

    def reset_gradients(self):
        self._grads = None

    def grad(self, t):
        """Gradient of the last backward root w.r.t. ``t`` (zeros if unreached)."""
        if self._grads is None:
            raise RuntimeError("backward has not run on this tape")
        if not isinstance(t, Tensor) or t.tape is not self:
            raise ValueError("tensor was not recorded on this tape")
        g = self._grads[t.node_id]
        return np.zeros_like(t.values) if g is None else g

    def grad_for(self, array):
        """Gradient for a parameter array registered via ``param``."""
        cached = self._leaves.get(id(array))
        if cached is None:
            return np.zeros_like(np.asarray(array, dtype=np.float64))
        return self.grad(cached)

    def depends_on(self, child, ancestor):
        """True if ``child``'s value is structurally a function of ``ancestor``."""
        if child.tape is not self or ancestor.tape is not self:
            raise ValueError("both tensors must live on this tape")
        target = ancestor.node_id
        stack = [child.node_id]
        seen = set()
        while stack:
            node_id = stack.pop()
            if node_id == target:
                return True
            if node_id in seen or node_id < target:
                continue
            seen.add(node_id)
            stack.extend(self._parents[node_id])
        return False


def _values(x):
    return x.values if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


def _tape_of(*args):
    tape = None
    for a in args:
        if isinstance(a, Tensor) and a.tape is not None:
            if tape is None:
                tape = a.tape
            elif tape is not a.tape:
                raise ValueError("operands were recorded on different tapes")
    return tape


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (reverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, (g, s) in enumerate(zip(grad.shape, shape)) if s == 1 and g != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _binary(name, a, b, out, vjp_a, vjp_b):
    tape = _tape_of(a, b)
    if tape is None:
        return Tensor(out)
    parents = []
    fns = []
    if isinstance(a, Tensor) and a.node_id is not None:
        parents.append(a.node_id)
        fns.append(vjp_a)
    if isinstance(b, Tensor) and b.node_id is not None:
        parents.append(b.node_id)
        fns.append(vjp_b)
    return tape._record(name, out, tuple(parents), lambda g: tuple(fn(g) for fn in fns))


def _unary(name, x, out, vjp):
    tape = _tape_of(x)
    if tape is None:
        return Tensor(out)
    return tape._record(name, out, (x.node_id,), lambda g: (vjp(g),))


def add(a, b):
    """Elementwise a + b with numpy broadcasting."""
    av, bv = _values(a), _values(b)
    return _binary(
        "add",
        a,
        b,
        av + bv,
        lambda g: _unbroadcast(g, av.shape),
        lambda g: _unbroadcast(g, bv.shape),
    )


def mul(a, b):
    """Elementwise a * b with numpy broadcasting (also the dropout-mask op)."""
    av, bv = _values(a), _values(b)
    return _binary(
        "mul",
        a,
        b,
        av * bv,
        lambda g: _unbroadcast(g * bv, av.shape),
        lambda g: _unbroadcast(g * av, bv.shape),
    )


def matmul(a, b):
    """2-D matrix product."""
    av, bv = _values(a), _values(b)
    if av.ndim != 2 or bv.ndim != 2:
        raise ValueError(f"matmul expects 2-D operands, got {av.shape} @ {bv.shape}")
    return _binary(
        "matmul",
        a,
        b,
        av @ bv,
        lambda g: g @ bv.T,
        lambda g: av.T @ g,
    )


def relu(x):
    """max(x, 0); the subgradient at 0 is taken as 0."""
    xv = _values(x)
    return _unary("relu", x, np.maximum(xv, 0.0), lambda g: g * (xv > 0.0))


def sigmoid(x):
    xv = _values(x)
    s = expit(xv)
    return _unary("sigmoid", x, s, lambda g: g * s * (1.0 - s))


def exp(x):
    xv = _values(x)
    e = np.exp(xv)
    return _unary("exp", x, e, lambda g: g * e)


def log(x):
    xv = _values(x)
    if np.any(xv <= 0.0):
        raise ValueError("log requires strictly positive inputs")
    return _unary("log", x, np.log(xv), lambda g: g / xv)


def tensor_sum(x, axis=None, keepdims=False):
    """Sum over ``axis`` (all axes when None)."""
    xv = _values(x)
    out = xv.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, xv.shape)

    return _unary("sum", x, out, vjp)


def tensor_mean(x, axis=None, keepdims=False):
    """Mean over ``axis`` (all axes when None)."""
    xv = _values(x)
    out = xv.mean(axis=axis, keepdims=keepdims)
    count = xv.size if axis is None else xv.shape[axis]

    def vjp(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g / count, xv.shape)

    return _unary("mean", x, out, vjp)


def softmax(x, axis=-1):
    """Numerically stable softmax along ``axis``."""
    xv = _values(x)
    shifted = xv - xv.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=axis, keepdims=True)

    def vjp(g):
        return (g - (g * s).sum(axis=axis, keepdims=True)) * s

    return _unary("softmax", x, s, vjp)


def cross_entropy(logits, labels):
    """Mean negative log-softmax of the labelled class.

    ``logits`` is (n, k) with integer ``labels`` of shape (n,), or a single
    1-D logit vector with a scalar label.
    """
    lv = _values(logits)
    single = lv.ndim == 1
    mat = lv[None, :] if single else lv
    if mat.ndim != 2:
        raise ValueError(f"cross_entropy expects 1-D or 2-D logits, got shape {lv.shape}")
    idx = np.atleast_1d(np.asarray(labels))
    if idx.shape != (mat.shape[0],):
        raise ValueError(f"labels shape {idx.shape} does not match batch {mat.shape[0]}")
    if not np.issubdtype(idx.dtype, np.integer):
        raise ValueError("labels must be integers")
    if idx.min() < 0 or idx.max() >= mat.shape[1]:
        raise ValueError("label out of range")
    n = mat.shape[0]
    m = mat.max(axis=1, keepdims=True)
    lse = m[:, 0] + np.log(np.exp(mat - m).sum(axis=1))
    losses = lse - mat[np.arange(n), idx]
    out = losses.mean()

    def vjp(g):
        p = np.exp(mat - m)
        p /= p.sum(axis=1, keepdims=True)
        p[np.arange(n), idx] -= 1.0
        p *= float(g) / n
        return p[0] if single else p

    return _unary("cross_entropy", logits, out, vjp)


def gradient_reversal(x, strength):
    """Identity forward; backward multiplies the upstream gradient by -strength."""
    strength = float(strength)
    if not strength >= 0.0:
        raise ValueError(f"reversal strength must be >= 0, got {strength}")
    xv = _values(x)
    return _unary("gradient_reversal", x, xv, lambda g: -strength * g)


def finite_diff_check(f, x, step=1e-5):
    """Max relative error between tape gradients of ``f`` and central differences.

    ``f`` maps a leaf tensor to a scalar tensor on the leaf's tape and must be
    deterministic (any masks or noise frozen); two evaluations are compared
    bitwise to enforce that before differentiating.  The error at each
    coordinate is |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
    """
    x = np.asarray(x, dtype=np.float64)

    def evaluate(values):
        tape = Tape()
        leaf = tape.leaf(values)
        out = f(leaf)
        if not isinstance(out, Tensor) or out.tape is not tape:
            raise ValueError("f must return a tensor on the leaf's tape")
        return out, tape, leaf

    out, tape, leaf = evaluate(x)
    repeat, _, _ = evaluate(x)
    if not np.array_equal(out.values, repeat.values):
        raise RuntimeError("f is not deterministic under frozen masks/noise")
    tape.backward(out)
    analytic = tape.grad(leaf)

    worst = 0.0
    for idx in np.ndindex(x.shape):
        bumped = x.copy()
        bumped[idx] += step
        hi = evaluate(bumped)[0].item()
        bumped[idx] -= 2.0 * step
        lo = evaluate(bumped)[0].item()
        numeric = (hi - lo) / (2.0 * step)
        denom = max(abs(analytic[idx]), abs(numeric), 1e-8)
        worst = max(worst, abs(analytic[idx] - numeric) / denom)
    return worst
