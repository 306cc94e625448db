"""Reverse-mode automatic differentiation on dense numpy arrays.

The engine exists for one reason: gradient-inversion objectives differentiate
*through* a gradient, so ``backward`` must be able to emit a result that is
itself part of the graph (``create_graph=True``).  Every primitive therefore
expresses its vector-Jacobian product in terms of other primitives; nothing
drops to raw numpy on the backward path unless gradients are globally off.

Conventions:
  * arrays are float64 by default (float32 passes through as a speed mode),
  * node outputs are frozen (numpy writeable flag cleared),
  * broadcasting is explicit except for rank-0 scalars, which may combine
    with any shape,
  * ``backward`` only accepts a scalar output and returns one cotangent per
    requested variable, zeros when the variable is unreachable.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager
from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError, DimensionError

_ids = itertools.count()
_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (plain numpy speed)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


class Tensor:
    """A node in the computation graph: an array plus how it was made."""

    __slots__ = ("data", "requires_grad", "op", "parents", "vjps", "nid")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float64, np.float32):
            arr = arr.astype(np.float64)
        arr = arr.copy()  # public constructor never aliases caller memory
        arr.setflags(write=False)
        self.data = arr
        # leaf declaration is independent of no_grad, which only stops
        # op recording; a variable built inside no_grad is still a variable
        self.requires_grad = bool(requires_grad)
        self.op = "leaf"
        self.parents: tuple[Tensor, ...] = ()
        self.vjps: tuple = ()
        self.nid = next(_ids)

    @classmethod
    def _wrap(cls, data: np.ndarray, op: str, parents: tuple, vjps: tuple) -> "Tensor":
        # internal: takes ownership of a fresh array, no copy
        t = cls.__new__(cls)
        data.setflags(write=False)
        t.data = data
        t.requires_grad = bool(parents)
        t.op = op
        t.parents = parents
        t.vjps = vjps
        t.nid = next(_ids)
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        if self.data.size != 1:
            raise ArgumentError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        """Writable copy of the values, detached from the graph."""
        return self.data.copy()

    def sum(self) -> "Tensor":
        return _sum_full(self)

    def mean(self) -> "Tensor":
        return mean(self)

    def reshape(self, shape) -> "Tensor":
        return reshape(self, shape)

    def __repr__(self) -> str:
        flag = ", grad" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def constant(data, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=False, dtype=dtype)


def variable(data, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=True, dtype=dtype)


def _coerce(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    if isinstance(x, (int, float, np.floating, np.integer)):
        return constant(float(x))
    if isinstance(x, np.ndarray):
        return constant(x)
    raise ArgumentError(f"cannot treat {type(x).__name__} as a tensor")


def _binary_shapes(name: str, a: Tensor, b: Tensor) -> tuple[int, ...]:
    # equal shapes, or one side is a scalar; anything else is on the caller
    if a.shape == b.shape:
        return a.shape
    if a.ndim == 0:
        return b.shape
    if b.ndim == 0:
        return a.shape
    raise DimensionError(f"{name}: shapes {a.shape} and {b.shape} do not match "
                         "(only rank-0 scalars broadcast implicitly)")


def _reduce_like(g: Tensor, target: Tensor) -> Tensor:
    # undo implicit scalar broadcasting on the way back
    if g.shape == target.shape:
        return g
    if target.ndim == 0:
        return _sum_full(g)
    raise DimensionError(f"cannot reduce cotangent {g.shape} to {target.shape}")


def _node(data: np.ndarray, op: str, parents: tuple[Tensor, ...], vjp_builder):
    """Record a node if gradients are on and any parent needs them.

    ``vjp_builder`` receives the created node so vjps that reuse the forward
    output (exp, sqrt, sigmoid) can reference it *as a graph node*; saving it
    as a detached constant would silently drop second-order terms.
    """
    if _grad_enabled and any(p.requires_grad for p in parents):
        t = Tensor._wrap(data, op, parents, ())
        t.vjps = vjp_builder(t)
        return t
    return Tensor._wrap(data, op, (), ())


# ---------------------------------------------------------------------------
# elementwise primitives

def add(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _binary_shapes("add", a, b)
    out = a.data + b.data
    return _node(out, "add", (a, b), lambda out: (
        lambda g: _reduce_like(g, a),
        lambda g: _reduce_like(g, b),
    ))


def sub(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _binary_shapes("sub", a, b)
    out = a.data - b.data
    return _node(out, "sub", (a, b), lambda out: (
        lambda g: _reduce_like(g, a),
        lambda g: _reduce_like(neg(g), b),
    ))


def mul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _binary_shapes("mul", a, b)
    out = a.data * b.data
    return _node(out, "mul", (a, b), lambda out: (
        lambda g: _reduce_like(mul(g, b), a),
        lambda g: _reduce_like(mul(g, a), b),
    ))


def div(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    _binary_shapes("div", a, b)
    out = a.data / b.data
    return _node(out, "div", (a, b), lambda out: (
        lambda g: _reduce_like(div(g, b), a),
        lambda g: _reduce_like(neg(div(mul(g, a), mul(b, b))), b),
    ))


def neg(a) -> Tensor:
    a = _coerce(a)
    return _node(-a.data, "neg", (a,), lambda out: (lambda g: neg(g),))


def relu(a) -> Tensor:
    a = _coerce(a)
    out = np.maximum(a.data, 0.0)
    mask = (a.data > 0).astype(a.data.dtype)
    return _node(out, "relu", (a,), lambda out: (lambda g: mul(g, constant(mask)),))


def sigmoid(a) -> Tensor:
    a = _coerce(a)
    with np.errstate(over="ignore"):
        out_data = np.where(a.data >= 0,
                            1.0 / (1.0 + np.exp(-np.abs(a.data))),
                            np.exp(-np.abs(a.data)) / (1.0 + np.exp(-np.abs(a.data))))
    out_data = out_data.astype(a.data.dtype, copy=False)

    def build(out):
        # out is the sigmoid node itself; differentiating through it keeps
        # second derivatives exact
        return (lambda g: mul(g, mul(out, sub(1.0, out))),)

    return _node(out_data, "sigmoid", (a,), build)


def exp(a) -> Tensor:
    a = _coerce(a)
    return _node(np.exp(a.data), "exp", (a,),
                 lambda out: (lambda g: mul(g, out),))


def log(a) -> Tensor:
    a = _coerce(a)
    out = np.log(a.data)
    return _node(out, "log", (a,), lambda out: (lambda g: div(g, a),))


def sqrt(a) -> Tensor:
    a = _coerce(a)
    return _node(np.sqrt(a.data), "sqrt", (a,),
                 lambda out: (lambda g: div(mul(g, 0.5), out),))


_ELEMENTWISE_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}
_ELEMENTWISE_UNARY = {"neg": neg, "relu": relu, "sigmoid": sigmoid,
                      "exp": exp, "log": log, "sqrt": sqrt}


def elementwise(kind: str, a, b=None) -> Tensor:
    """Generic entry point for the pointwise ops, dispatched by name."""
    if kind in _ELEMENTWISE_BINARY:
        if b is None:
            raise ArgumentError(f"elementwise('{kind}') needs two operands")
        return _ELEMENTWISE_BINARY[kind](a, b)
    if kind in _ELEMENTWISE_UNARY:
        if b is not None:
            raise ArgumentError(f"elementwise('{kind}') takes one operand")
        return _ELEMENTWISE_UNARY[kind](a)
    raise ArgumentError(f"unknown elementwise kind '{kind}'")


# ---------------------------------------------------------------------------
# shape primitives

def reshape(a, shape) -> Tensor:
    a = _coerce(a)
    shape = tuple(int(s) for s in (shape if hasattr(shape, "__iter__") else (shape,)))
    n = 1
    for s in shape:
        n *= s
    if n != a.size:
        raise DimensionError(f"reshape: cannot view {a.shape} as {shape}")
    out = a.data.reshape(shape).copy()
    return _node(out, "reshape", (a,), lambda out: (lambda g: reshape(g, a.shape),))


def permute(a, axes) -> Tensor:
    a = _coerce(a)
    axes = tuple(int(x) for x in axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ArgumentError(f"permute: {axes} is not a permutation of rank {a.ndim}")
    inv = tuple(int(np.argsort(axes)[i]) for i in range(len(axes)))
    out = np.ascontiguousarray(a.data.transpose(axes))
    return _node(out, "permute", (a,), lambda out: (lambda g: permute(g, inv),))


def transpose(a) -> Tensor:
    a = _coerce(a)
    if a.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got rank {a.ndim}")
    return permute(a, (1, 0))


def broadcast_to(a, shape) -> Tensor:
    a = _coerce(a)
    shape = tuple(int(s) for s in shape)
    if a.ndim == 0:
        pass  # scalars broadcast anywhere
    elif a.ndim != len(shape):
        raise DimensionError(f"broadcast_to: rank {a.ndim} vs target {shape}; "
                             "ranks must match (insert axes with reshape first)")
    else:
        for src, dst in zip(a.shape, shape):
            if src != dst and src != 1:
                raise DimensionError(f"broadcast_to: {a.shape} cannot expand to {shape}")
    out = np.ascontiguousarray(np.broadcast_to(a.data, shape))

    def build(_):
        if a.ndim == 0:
            return (lambda g: _sum_full(g),)
        return (lambda g: sum_to(g, a.shape),)

    return _node(out, "broadcast_to", (a,), build)


def sum_to(a, shape) -> Tensor:
    """Sum axes of ``a`` down to ``shape`` (the adjoint of broadcast_to)."""
    a = _coerce(a)
    shape = tuple(int(s) for s in shape)
    if a.ndim != len(shape):
        raise DimensionError(f"sum_to: rank {a.ndim} vs target {shape}")
    axes = []
    for i, (src, dst) in enumerate(zip(a.shape, shape)):
        if src == dst:
            continue
        if dst != 1:
            raise DimensionError(f"sum_to: {a.shape} cannot reduce to {shape}")
        axes.append(i)
    out = a.data.sum(axis=tuple(axes), keepdims=True) if axes else a.data.copy()
    return _node(out, "sum_to", (a,), lambda out: (lambda g: broadcast_to(g, a.shape),))


def _sum_full(a) -> Tensor:
    a = _coerce(a)
    out = np.asarray(a.data.sum(), dtype=a.data.dtype)
    return _node(out, "sum", (a,), lambda out: (lambda g: broadcast_to(g, a.shape),))


def mean(a) -> Tensor:
    a = _coerce(a)
    if a.size == 0:
        raise ArgumentError("mean of an empty tensor")
    return mul(_sum_full(a), 1.0 / a.size)


def reduce(kind: str, a) -> Tensor:
    """Full reduction to a scalar: kind is 'sum' or 'mean'."""
    if kind == "sum":
        return _sum_full(a)
    if kind == "mean":
        return mean(a)
    raise ArgumentError(f"unknown reduce kind '{kind}'")


def slice_hw(a, hs: int, he: int, ws: int, we: int) -> Tensor:
    """Spatial crop of an NCHW tensor along the last two axes."""
    a = _coerce(a)
    if a.ndim != 4:
        raise DimensionError(f"slice_hw expects NCHW, got rank {a.ndim}")
    n, c, h, w = a.shape
    if not (0 <= hs <= he <= h and 0 <= ws <= we <= w):
        raise ArgumentError(f"slice_hw: window [{hs}:{he}, {ws}:{we}] outside {h}x{w}")
    out = np.ascontiguousarray(a.data[:, :, hs:he, ws:we])
    return _node(out, "slice_hw", (a,),
                 lambda out: (lambda g: embed_hw(g, (h, w), hs, ws),))


def embed_hw(a, hw: tuple[int, int], hs: int, ws: int) -> Tensor:
    """Place an NCHW tensor into a zero canvas of spatial size ``hw``."""
    a = _coerce(a)
    if a.ndim != 4:
        raise DimensionError(f"embed_hw expects NCHW, got rank {a.ndim}")
    n, c, h, w = a.shape
    ch, cw = int(hw[0]), int(hw[1])
    if hs < 0 or ws < 0 or hs + h > ch or ws + w > cw:
        raise ArgumentError(f"embed_hw: {h}x{w} at ({hs},{ws}) exceeds canvas {ch}x{cw}")
    out = np.zeros((n, c, ch, cw), dtype=a.data.dtype)
    out[:, :, hs:hs + h, ws:ws + w] = a.data
    return _node(out, "embed_hw", (a,),
                 lambda out: (lambda g: slice_hw(g, hs, hs + h, ws, ws + w),))


# ---------------------------------------------------------------------------
# linear algebra and convolution

def matmul(a, b) -> Tensor:
    a, b = _coerce(a), _coerce(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects matrices, got ranks {a.ndim} and {b.ndim}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: inner dims {a.shape} @ {b.shape}")
    out = a.data @ b.data
    return _node(out, "matmul", (a, b), lambda out: (
        lambda g: matmul(g, transpose(b)),
        lambda g: matmul(transpose(a), g),
    ))


def _conv_out_hw(h: int, w: int, k: int, stride: int, padding: int) -> tuple[int, int]:
    oh = (h + 2 * padding - k) // stride + 1
    ow = (w + 2 * padding - k) // stride + 1
    return oh, ow


def _im2col_data(x: np.ndarray, k: int, stride: int, padding: int) -> np.ndarray:
    n, c, h, w = x.shape
    oh, ow = _conv_out_hw(h, w, k, stride, padding)
    if padding:
        xp = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=x.dtype)
        xp[:, :, padding:padding + h, padding:padding + w] = x
    else:
        xp = x
    cols = np.empty((n, oh, ow, c, k, k), dtype=x.dtype)
    for ki in range(k):
        for kj in range(k):
            patch = xp[:, :, ki:ki + stride * oh:stride, kj:kj + stride * ow:stride]
            cols[:, :, :, :, ki, kj] = patch.transpose(0, 2, 3, 1)
    return cols.reshape(n * oh * ow, c * k * k)


def _col2im_data(cols: np.ndarray, xshape, k: int, stride: int, padding: int) -> np.ndarray:
    n, c, h, w = xshape
    oh, ow = _conv_out_hw(h, w, k, stride, padding)
    c6 = cols.reshape(n, oh, ow, c, k, k)
    xp = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=cols.dtype)
    for ki in range(k):
        for kj in range(k):
            # within one (ki, kj) the strided slice never hits an element twice
            xp[:, :, ki:ki + stride * oh:stride, kj:kj + stride * ow:stride] += \
                c6[:, :, :, :, ki, kj].transpose(0, 3, 1, 2)
    if padding:
        return np.ascontiguousarray(xp[:, :, padding:padding + h, padding:padding + w])
    return xp


def _check_conv_geometry(h, w, k, stride, padding):
    if k < 1 or stride < 1 or padding < 0:
        raise ArgumentError(f"conv geometry: k={k}, stride={stride}, padding={padding}")
    if k > h + 2 * padding or k > w + 2 * padding:
        raise DimensionError(f"kernel {k}x{k} larger than padded input "
                             f"{h + 2 * padding}x{w + 2 * padding}")


def im2col(a, k: int, stride: int = 1, padding: int = 0) -> Tensor:
    """Unfold NCHW into patch rows: [N*OH*OW, C*k*k]."""
    a = _coerce(a)
    if a.ndim != 4:
        raise DimensionError(f"im2col expects NCHW, got rank {a.ndim}")
    _check_conv_geometry(a.shape[2], a.shape[3], k, stride, padding)
    out = _im2col_data(a.data, k, stride, padding)
    shape = a.shape
    return _node(out, "im2col", (a,),
                 lambda out: (lambda g: col2im(g, shape, k, stride, padding),))


def col2im(a, xshape, k: int, stride: int = 1, padding: int = 0) -> Tensor:
    """Fold patch rows back onto an NCHW canvas, summing overlaps."""
    a = _coerce(a)
    xshape = tuple(int(s) for s in xshape)
    if a.ndim != 2 or len(xshape) != 4:
        raise DimensionError("col2im expects a patch matrix and a 4-d target shape")
    n, c, h, w = xshape
    _check_conv_geometry(h, w, k, stride, padding)
    oh, ow = _conv_out_hw(h, w, k, stride, padding)
    if a.shape != (n * oh * ow, c * k * k):
        raise DimensionError(f"col2im: patch matrix {a.shape} does not match "
                             f"target {xshape} with k={k}, stride={stride}, padding={padding}")
    out = _col2im_data(a.data, xshape, k, stride, padding)
    return _node(out, "col2im", (a,),
                 lambda out: (lambda g: im2col(g, k, stride, padding),))


def conv2d(x, kernels, stride: int = 1, padding: int = 0) -> Tensor:
    """2-d cross-correlation, NCHW input against OCkk kernels, zero padding."""
    x, kernels = _coerce(x), _coerce(kernels)
    if x.ndim != 4:
        raise DimensionError(f"conv2d input must be NCHW, got rank {x.ndim}")
    if kernels.ndim != 4:
        raise DimensionError(f"conv2d kernels must be OCkk, got rank {kernels.ndim}")
    n, c, h, w = x.shape
    o, ck, kh, kw = kernels.shape
    if kh != kw:
        raise DimensionError(f"conv2d kernels must be square, got {kh}x{kw}")
    if ck != c:
        raise DimensionError(f"conv2d channels: input has {c}, kernels expect {ck}")
    _check_conv_geometry(h, w, kh, stride, padding)
    oh, ow = _conv_out_hw(h, w, kh, stride, padding)
    cols = im2col(x, kh, stride, padding)              # [n*oh*ow, c*k*k]
    wmat = transpose(reshape(kernels, (o, c * kh * kw)))
    out = matmul(cols, wmat)                           # [n*oh*ow, o]
    return permute(reshape(out, (n, oh, ow, o)), (0, 3, 1, 2))


def softmax_cross_entropy(logits, labels) -> Tensor:
    """Mean cross-entropy of softmax(logits) against integer labels.

    The row max is subtracted as a detached constant before exponentiation;
    that shift is an exact identity, so gradients of every order match the
    unshifted expression while staying finite for large logits.
    """
    logits = _coerce(logits)
    if logits.ndim != 2:
        raise DimensionError(f"softmax_cross_entropy expects [N, K] logits, got {logits.shape}")
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != logits.shape[0]:
        raise DimensionError(f"labels shape {labels.shape} does not match logits {logits.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        raise ArgumentError("labels must be integers")
    n, k = logits.shape
    if labels.min() < 0 or labels.max() >= k:
        raise ArgumentError(f"labels must lie in [0, {k}), got range "
                            f"[{labels.min()}, {labels.max()}]")
    m = logits.data.max(axis=1, keepdims=True)
    shifted = sub(logits, constant(np.broadcast_to(m, (n, k))))
    lse = add(log(sum_to(exp(shifted), (n, 1))), constant(m))      # [n, 1]
    onehot = np.zeros((n, k), dtype=logits.data.dtype)
    onehot[np.arange(n), labels] = 1.0
    picked = sum_to(mul(logits, constant(onehot)), (n, 1))         # [n, 1]
    return mean(sub(lse, picked))


# ---------------------------------------------------------------------------
# backward

def backward(out: Tensor, wrt, create_graph: bool = False) -> dict[int, Tensor]:
    """Cotangents of a scalar ``out`` with respect to each tensor in ``wrt``.

    Returns a dict keyed by node id.  With ``create_graph=True`` the returned
    tensors are themselves graph nodes and can be differentiated again; the
    default detaches them (fast path, no recording).  Variables the output
    does not depend on get zero cotangents.
    """
    if not isinstance(out, Tensor):
        raise ArgumentError("backward needs a Tensor output")
    if out.shape != ():
        raise ArgumentError(f"backward needs a scalar output, got shape {out.shape}")
    wrt = list(wrt)
    for v in wrt:
        if not isinstance(v, Tensor):
            raise ArgumentError("wrt entries must be Tensors")
        if not v.requires_grad:
            raise ArgumentError("wrt entries must require gradients (constants have none)")
    wrt_ids = {v.nid for v in wrt}

    # reachable requires_grad subgraph, by walking parents
    nodes: dict[int, Tensor] = {}
    stack = [out] if out.requires_grad else []
    while stack:
        node = stack.pop()
        if node.nid in nodes:
            continue
        nodes[node.nid] = node
        for p in node.parents:
            if p.requires_grad and p.nid not in nodes:
                stack.append(p)

    # a node is useful if a wrt variable feeds it (ids grow monotonically,
    # so ascending id order visits parents before consumers)
    useful = set(wrt_ids)
    for nid in sorted(nodes):
        node = nodes[nid]
        if nid in useful:
            continue
        if any(p.nid in useful for p in node.parents):
            useful.add(nid)

    cot: dict[int, Tensor] = {}
    if out.nid in nodes and out.nid in useful:
        cot[out.nid] = constant(np.asarray(1.0, dtype=out.data.dtype))

    sweep_ctx = _keep_grad() if create_graph else no_grad()
    with sweep_ctx:
        for nid in sorted(nodes, reverse=True):
            if nid not in cot:
                continue
            node = nodes[nid]
            g = cot.pop(nid) if nid not in wrt_ids else cot[nid]
            for p, vjp in zip(node.parents, node.vjps):
                if not p.requires_grad or p.nid not in useful:
                    continue
                pg = vjp(g)
                acc = cot.get(p.nid)
                cot[p.nid] = pg if acc is None else add(acc, pg)

    result: dict[int, Tensor] = {}
    for v in wrt:
        got = cot.get(v.nid)
        if got is None:
            got = constant(np.zeros(v.shape, dtype=v.data.dtype))
        result[v.nid] = got
    return result


@contextmanager
def _keep_grad():
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = True
    try:
        yield
    finally:
        _grad_enabled = prev


def grad(out: Tensor, wrt, create_graph: bool = False) -> list[Tensor]:
    """Like ``backward`` but returns cotangents in ``wrt`` order."""
    wrt = list(wrt)
    cots = backward(out, wrt, create_graph=create_graph)
    return [cots[v.nid] for v in wrt]


# ---------------------------------------------------------------------------
# gradient vectors

@dataclass(frozen=True)
class GradientVector:
    """An ordered, named collection of gradient tensors (one per parameter)."""

    names: tuple[str, ...]
    tensors: tuple[Tensor, ...]

    def __post_init__(self):
        if len(self.names) != len(self.tensors):
            raise ArgumentError("GradientVector: names and tensors differ in length")
        if len(set(self.names)) != len(self.names):
            raise ArgumentError("GradientVector: duplicate segment names")

    @property
    def total_length(self) -> int:
        return sum(t.size for t in self.tensors)

    def segment(self, name: str) -> Tensor:
        for n, t in zip(self.names, self.tensors):
            if n == name:
                return t
        raise ArgumentError(f"no gradient segment named '{name}'")

    def flat(self) -> np.ndarray:
        """Concatenated raw values in canonical segment order."""
        if not self.tensors:
            return np.zeros(0)
        return np.concatenate([t.data.ravel() for t in self.tensors])

    def from_flat(self, vec: np.ndarray) -> "GradientVector":
        """Rebuild a vector with this one's names/shapes from flat values."""
        vec = np.asarray(vec)
        if vec.ndim != 1 or vec.size != self.total_length:
            raise DimensionError(f"flat vector of length {vec.size} does not match "
                                 f"total length {self.total_length}")
        tensors = []
        pos = 0
        for t in self.tensors:
            chunk = vec[pos:pos + t.size].reshape(t.shape)
            tensors.append(constant(chunk))
            pos += t.size
        return GradientVector(self.names, tuple(tensors))
