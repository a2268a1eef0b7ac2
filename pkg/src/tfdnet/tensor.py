"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Complex quantities are carried as :class:`ComplexTensor`, a pair of real
tensors. Gradients are always taken with respect to the real and imaginary
parts separately; complex NumPy arithmetic is only used inside backward
rules as a compact way to evaluate those real-pair derivatives, packing
them as ``dL/dRe + 1j * dL/dIm``.
"""

from __future__ import annotations

import contextlib
import contextvars
import weakref
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import kernels

__all__ = [
    "Tensor", "ComplexTensor", "NonFiniteError", "no_grad", "is_grad_enabled",
    "record", "backward", "grad_check",
    "elementwise", "add", "sub", "mul", "neg", "scale", "tanh", "sigmoid", "abs_", "square",
    "reshape", "creshape", "sum_", "mean", "linear", "weighted_sum",
    "cadd", "cmatmul", "complex_matvec", "cmodulus", "cscale_by", "cweighted_total",
    "bin_kernel",
]

_grad_enabled = contextvars.ContextVar("tfdnet_grad_enabled", default=True)


class NonFiniteError(FloatingPointError):
    """Raised when an operation produces NaN or Inf."""


@contextlib.contextmanager
def no_grad():
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


def is_grad_enabled() -> bool:
    return _grad_enabled.get()


class Node:
    # Outputs are held weakly so a graph is freed by reference counting alone
    # once its tensors go out of scope; a strong back-reference would form a
    # cycle that only the cyclic collector reclaims.
    __slots__ = ("op", "inputs", "outputs", "backward_fn", "consumed")

    def __init__(self, op, inputs, outputs, backward_fn):
        self.op = op
        self.inputs = inputs
        self.outputs = outputs
        self.backward_fn = backward_fn
        self.consumed = False


class Tensor:
    """A float64 array that can record the operations producing it."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_node", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.name = name
        self._node: Node | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(()) if self.data.size == 1 else self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, _lift(other))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)


def _lift(x):
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class ComplexTensor:
    re: Tensor
    im: Tensor

    def __post_init__(self):
        if self.re.shape != self.im.shape:
            raise ValueError(f"real part {self.re.shape} and imaginary part {self.im.shape} differ")

    @classmethod
    def from_numpy(cls, z, requires_grad=False, name=None):
        z = np.asarray(z, dtype=np.complex128)
        re_name = f"{name}.re" if name else None
        im_name = f"{name}.im" if name else None
        return cls(Tensor(z.real.copy(), requires_grad, re_name), Tensor(z.imag.copy(), requires_grad, im_name))

    @property
    def shape(self):
        return self.re.shape

    def numpy(self) -> np.ndarray:
        return self.re.data + 1j * self.im.data

    def parts(self):
        return self.re, self.im

    def __add__(self, other):
        return cadd(self, other)


# -- graph recording ---------------------------------------------------------

def record(op: str, inputs: Sequence[Tensor], outputs: Sequence[np.ndarray],
           backward_fn: Callable[[list], list]) -> list[Tensor]:
    """Wrap forward results as tensors and attach a backward rule.

    ``backward_fn`` receives one gradient array (or None) per output and
    returns one gradient array (or None) per input.
    """
    for out in outputs:
        if not np.all(np.isfinite(out)):
            raise NonFiniteError(f"{op} produced non-finite values")
    needs = is_grad_enabled() and any(t.requires_grad for t in inputs)
    tensors = [Tensor.__new__(Tensor) for _ in outputs]
    for t, out in zip(tensors, outputs):
        t.data = out
        t.requires_grad = needs
        t.grad = None
        t.name = None
        t._node = None
    if needs:
        node = Node(op, list(inputs), [weakref.ref(t) for t in tensors], backward_fn)
        for t in tensors:
            t._node = node
    return tensors


def _alive(refs):
    return [t for t in (r() for r in refs) if t is not None]


def _children(node: Node):
    return (t._node for t in node.inputs if t._node is not None)


def _topo_nodes(root: Node) -> list[Node]:
    """Post-order DFS: every node appears after all nodes feeding it."""
    order, seen = [], {id(root)}
    stack = [(root, _children(root))]
    while stack:
        node, it = stack[-1]
        for child in it:
            if id(child) not in seen:
                seen.add(id(child))
                stack.append((child, _children(child)))
                break
        else:
            stack.pop()
            order.append(node)
    return order


def backward(loss: Tensor):
    """Populate ``.grad`` on every reachable tensor that requires grad.

    Leaf tensors accumulate into an existing ``.grad``; the graph is consumed.
    """
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not np.isfinite(loss.data).all():
        raise NonFiniteError("loss is not finite")
    node = loss._node
    if node is None:
        if loss.requires_grad:
            loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1.0
            return
        raise RuntimeError("loss was not produced by a recorded graph")
    if node.consumed:
        raise RuntimeError("graph already consumed by a previous backward call")
    order = _topo_nodes(node)
    for n in order:
        for t in _alive(n.outputs):
            t.grad = None
    loss.grad = np.ones_like(loss.data)
    for n in reversed(order):
        grads_out = [None if t is None else t.grad for t in (r() for r in n.outputs)]
        if all(g is None for g in grads_out):
            continue
        grads_in = n.backward_fn(grads_out)
        for t, g in zip(n.inputs, grads_in):
            if g is None or not t.requires_grad:
                continue
            if g.shape != t.shape:
                g = g.reshape(t.shape)
            if not np.all(np.isfinite(g)):
                raise NonFiniteError(f"non-finite gradient in backward of {n.op}")
            t.grad = g.copy() if t.grad is None else t.grad + g
    # intermediate inputs stay referenced until every node has run
    for n in order:
        n.consumed = True
        n.backward_fn = _consumed_backward
        n.inputs = [t if t._node is None else _Detached for t in n.inputs]


class _DetachedMarker:
    requires_grad = False
    _node = None


_Detached = _DetachedMarker()


def _consumed_backward(grads):
    raise RuntimeError("graph already consumed")


# -- elementwise --------------------------------------------------------------

def _bshape(a: Tensor, b: Tensor, tag: str):
    if a.shape == b.shape or b.size == 1 and b.ndim == 0 or a.size == 1 and a.ndim == 0:
        return
    raise ValueError(f"{tag}: shapes {a.shape} and {b.shape} are not broadcast-compatible")


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    return np.asarray(g.sum()).reshape(shape)


def elementwise(tag: str, a: Tensor, b: Tensor | None = None) -> Tensor:
    """Apply one of add, sub, mul, tanh, sigmoid, abs, square.

    Binary ops accept identical shapes or a 0-d scalar operand.
    """
    binary = {"add", "sub", "mul"}
    unary = {"tanh", "sigmoid", "abs", "square", "neg"}
    if tag in binary:
        if b is None:
            raise ValueError(f"{tag} needs two operands")
        _bshape(a, b, tag)
        x, y = a.data, b.data
        if tag == "add":
            out = x + y
            bw = lambda g: [_unbroadcast(g[0], a.shape), _unbroadcast(g[0], b.shape)]
        elif tag == "sub":
            out = x - y
            bw = lambda g: [_unbroadcast(g[0], a.shape), _unbroadcast(-g[0], b.shape)]
        else:
            out = x * y
            bw = lambda g: [_unbroadcast(g[0] * y, a.shape), _unbroadcast(g[0] * x, b.shape)]
        return record(tag, [a, b], [out], bw)[0]
    if tag not in unary:
        raise ValueError(f"unknown elementwise op {tag!r}")
    if b is not None:
        raise ValueError(f"{tag} takes one operand")
    x = a.data
    if tag == "tanh":
        out = np.tanh(x)
        bw = lambda g: [g[0] * (1.0 - out * out)]
    elif tag == "sigmoid":
        out = 0.5 * (1.0 + np.tanh(0.5 * x))
        bw = lambda g: [g[0] * out * (1.0 - out)]
    elif tag == "abs":
        out = np.abs(x)
        bw = lambda g: [g[0] * np.sign(x)]
    elif tag == "square":
        out = x * x
        bw = lambda g: [g[0] * 2.0 * x]
    else:
        out = -x
        bw = lambda g: [-g[0]]
    return record(tag, [a], [out], bw)[0]


def add(a, b):
    return elementwise("add", a, b)


def sub(a, b):
    return elementwise("sub", a, b)


def mul(a, b):
    return elementwise("mul", a, b)


def neg(a):
    return elementwise("neg", a)


def tanh(a):
    return elementwise("tanh", a)


def sigmoid(a):
    return elementwise("sigmoid", a)


def abs_(a):
    return elementwise("abs", a)


def square(a):
    return elementwise("square", a)


def scale(a: Tensor, c: float) -> Tensor:
    return record("scale", [a], [a.data * c], lambda g: [g[0] * c])[0]


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    return record("reshape", [a], [a.data.reshape(shape)], lambda g: [g[0].reshape(a.shape)])[0]


def creshape(z: ComplexTensor, shape) -> ComplexTensor:
    return ComplexTensor(reshape(z.re, shape), reshape(z.im, shape))


# -- reductions and dense maps -----------------------------------------------

def sum_(a: Tensor) -> Tensor:
    return record("sum", [a], [np.asarray(a.data.sum())],
                  lambda g: [np.broadcast_to(g[0], a.shape)])[0]


def mean(a: Tensor) -> Tensor:
    n = a.size
    return record("mean", [a], [np.asarray(a.data.mean())],
                  lambda g: [np.broadcast_to(g[0] / n, a.shape)])[0]


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` over the last axis; weight is (out, in)."""
    if weight.ndim != 2 or x.shape[-1] != weight.shape[1]:
        raise ValueError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[0],):
        raise ValueError(f"linear: bias {bias.shape} does not match weight {weight.shape}")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data
    xd, wd = x.data, weight.data

    def bw(g):
        go = g[0]
        gx = go @ wd
        gw = go.reshape(-1, go.shape[-1]).T @ xd.reshape(-1, xd.shape[-1])
        res = [gx, gw]
        if bias is not None:
            res.append(go.reshape(-1, go.shape[-1]).sum(axis=0))
        return res

    inputs = [x, weight] + ([bias] if bias is not None else [])
    return record("linear", inputs, [out], bw)[0]


def weighted_sum(tensors: Sequence[Tensor], weights: Tensor) -> Tensor:
    """``sum_e weights[e] * tensors[e]`` for same-shape tensors and a 1-d weight."""
    if len(tensors) == 0:
        raise ValueError("weighted_sum needs at least one tensor")
    if weights.shape != (len(tensors),):
        raise ValueError(f"weighted_sum: {len(tensors)} tensors but weights of shape {weights.shape}")
    shape = tensors[0].shape
    for t in tensors:
        if t.shape != shape:
            raise ValueError(f"weighted_sum: shape mismatch {t.shape} vs {shape}")
    w = weights.data
    out = sum(w[e] * t.data for e, t in enumerate(tensors))
    datas = [t.data for t in tensors]

    def bw(g):
        go = g[0]
        return [go * w[e] for e in range(len(datas))] + [np.array([np.sum(go * d) for d in datas])]

    return record("weighted_sum", list(tensors) + [weights], [np.asarray(out, dtype=np.float64)], bw)[0]


# -- complex ops ----------------------------------------------------------------

def _cgrad(g, shape):
    """Pack (g_re, g_im) into a complex upstream gradient, zeros for missing parts."""
    gr = g[0] if g[0] is not None else np.zeros(shape)
    gi = g[1] if g[1] is not None else np.zeros(shape)
    return gr + 1j * gi


def _split(z):
    return [np.ascontiguousarray(z.real), np.ascontiguousarray(z.imag)]


def _pair(op, inputs, z, bw):
    re, im = record(op, inputs, _split(z), bw)
    return ComplexTensor(re, im)


def cadd(a: ComplexTensor, b: ComplexTensor) -> ComplexTensor:
    return ComplexTensor(add(a.re, b.re), add(a.im, b.im))


def _sum_to(g, shape):
    """Reduce a broadcast gradient back to ``shape`` (leading broadcast axes only)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def cmatmul(a: ComplexTensor, b: ComplexTensor) -> ComplexTensor:
    """Complex matrix product with NumPy matmul broadcasting over leading axes."""
    A, Bm = a.numpy(), b.numpy()
    if A.shape[-1] != Bm.shape[-2]:
        raise ValueError(f"cmatmul: inner dimensions differ for {A.shape} and {Bm.shape}")
    z = A @ Bm

    def bw(g):
        G = _cgrad(g, z.shape)
        gA = _sum_to(G @ np.swapaxes(Bm, -1, -2).conj(), A.shape)
        gB = _sum_to(np.swapaxes(A, -1, -2).conj() @ G, Bm.shape)
        return [gA.real, gA.imag, gB.real, gB.imag]

    return _pair("cmatmul", [a.re, a.im, b.re, b.im], z, bw)


def complex_matvec(W: ComplexTensor, v: ComplexTensor) -> ComplexTensor:
    """(W v) for W of shape (N, K) and v of shape (K,)."""
    if len(W.shape) != 2 or len(v.shape) != 1 or W.shape[1] != v.shape[0]:
        raise ValueError(f"complex_matvec: W {W.shape} and v {v.shape} do not agree")
    Wd, vd = W.numpy(), v.numpy()
    z = Wd @ vd

    def bw(g):
        G = _cgrad(g, z.shape)
        gW = np.outer(G, vd.conj())
        gv = Wd.conj().T @ G
        return [gW.real, gW.imag, gv.real, gv.imag]

    return _pair("complex_matvec", [W.re, W.im, v.re, v.im], z, bw)


def cmodulus(a: ComplexTensor) -> Tensor:
    """|a| elementwise; subgradient 0 where a == 0."""
    re, im = a.re.data, a.im.data
    r = np.hypot(re, im)

    def bw(g):
        safe = np.where(r > 0, r, 1.0)
        k = np.where(r > 0, g[0] / safe, 0.0)
        return [k * re, k * im]

    return record("cmodulus", [a.re, a.im], [r], bw)[0]


def cscale_by(a: ComplexTensor, s: Tensor) -> ComplexTensor:
    """Multiply complex a (..., *tail) by real s whose shape is a prefix of a's."""
    k = a.re.ndim - s.ndim
    if k < 0 or a.shape[:s.ndim] != s.shape:
        raise ValueError(f"cscale_by: scale shape {s.shape} is not a prefix of {a.shape}")
    sd = s.data.reshape(s.shape + (1,) * k)
    re, im = a.re.data, a.im.data
    axes = tuple(range(s.ndim, a.re.ndim))

    def bw(g):
        gr = g[0] if g[0] is not None else 0.0
        gi = g[1] if g[1] is not None else 0.0
        gs = np.sum(gr * re + gi * im, axis=axes) if axes else gr * re + gi * im
        return [np.broadcast_to(gr * sd, re.shape) if g[0] is not None else None,
                np.broadcast_to(gi * sd, im.shape) if g[1] is not None else None,
                np.asarray(gs)]

    return ComplexTensor(*record("cscale_by", [a.re, a.im, s], [re * sd, im * sd], bw))


def cweighted_total(G: ComplexTensor, X: ComplexTensor) -> ComplexTensor:
    """sum over the trailing two axes of G * X, with G (M, N) broadcast over X's leading axes."""
    Gd, Xd = G.numpy(), X.numpy()
    if Xd.shape[-2:] != Gd.shape:
        raise ValueError(f"cweighted_total: gate {Gd.shape} does not match input {Xd.shape}")
    z = np.sum(Gd * Xd, axis=(-2, -1))

    def bw(g):
        Gz = _cgrad(g, z.shape)[..., None, None]
        gG = np.sum(Gz * Xd.conj(), axis=tuple(range(Xd.ndim - 2)))
        gX = Gz * Gd.conj()
        return [gG.real, gG.imag, gX.real, gX.imag]

    return _pair("cweighted_total", [G.re, G.im, X.re, X.im], np.asarray(z), bw)


def bin_kernel(X: ComplexTensor, W: ComplexTensor) -> ComplexTensor:
    """Per-frequency-bin complex matvec across time frames.

    X is (B, D, M, N) and W is (C, M, N, N) with C == 1 (shared) or C == D
    (one kernel per channel). Output row m is W[c, m] @ X[b, d, m, :].
    """
    Xd, Wd = X.numpy(), W.numpy()
    z = kernels.bin_matvec(Wd, Xd)

    def bw(g):
        G = np.ascontiguousarray(_cgrad(g, z.shape))
        dW, dX = kernels.bin_matvec_grad(Wd, Xd, G)
        return [dX.real, dX.imag, dW.real, dW.imag]

    return _pair("bin_kernel", [X.re, X.im, W.re, W.im], z, bw)


# -- verification ----------------------------------------------------------------

def grad_check(f: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-5,
               max_coords: int | None = None, rng: np.random.Generator | None = None) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``f`` rebuilds the graph from ``params`` and returns a scalar tensor.
    Error per coordinate is |analytic - numeric| / max(1, |analytic|).
    """
    if h <= 0:
        raise ValueError("step h must be positive")
    for p in params:
        p.grad = None
    loss = f()
    backward(loss)
    analytic = [np.zeros(p.shape) if p.grad is None else p.grad.copy() for p in params]
    for p in params:
        p.data = np.ascontiguousarray(p.data)   # flat views below must alias p.data
    coords = [(i, j) for i, p in enumerate(params) for j in range(p.size)]
    if max_coords is not None and len(coords) > max_coords:
        rng = rng or np.random.default_rng(0)
        pick = rng.choice(len(coords), size=max_coords, replace=False)
        coords = [coords[k] for k in sorted(pick)]
    worst = 0.0
    with no_grad():
        for i, j in coords:
            flat = params[i].data.reshape(-1)
            orig = flat[j]
            flat[j] = orig + h
            up = f().item()
            flat[j] = orig - h
            down = f().item()
            flat[j] = orig
            if not (np.isfinite(up) and np.isfinite(down)):
                raise NonFiniteError("non-finite evaluation during finite differences")
            numeric = (up - down) / (2 * h)
            a = analytic[i].reshape(-1)[j]
            worst = max(worst, abs(a - numeric) / max(1.0, abs(a)))
    return worst
