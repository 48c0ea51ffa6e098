"""Dense tensors on a recorded computation graph with reverse-mode gradients.

Values are numpy float64 arrays in row-major order (cast to float32 only for
serialization). Each differentiable operation records its parents and a
closure that maps the output gradient to parent gradient contributions;
``backward`` walks the graph in reverse topological order.

Elementwise add/mul follow numpy broadcasting; gradients are sum-reduced
back to the parent shape. All other ops use the exact shape rules documented
on each function and raise ShapeError otherwise.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "ShapeError",
    "Node",
    "RngStream",
    "constant",
    "parameter",
    "add",
    "sub",
    "mul",
    "matmul",
    "concat",
    "narrow",
    "reshape",
    "sigmoid",
    "tanh",
    "relu",
    "softmax",
    "log_softmax",
    "logsumexp",
    "max_over_axis",
    "dropout",
    "embedding_lookup",
    "pick_sum",
    "sum_all",
    "scale",
    "backward",
    "clip_gradients",
    "global_grad_norm",
]


class ShapeError(ValueError):
    """Raised when operation inputs do not conform to its shape rule."""


def _as_array(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    # ascontiguousarray would promote 0-d arrays to 1-d; keep scalars 0-d
    if a.ndim and not a.flags.c_contiguous:
        a = np.ascontiguousarray(a)
    return a


class Node:
    """A value in the computation graph.

    ``parents`` holds (parent, grad_fn) pairs where grad_fn maps the gradient
    at this node to the gradient contribution for that parent.
    """

    __slots__ = ("value", "grad", "parents", "op", "requires_grad", "name")

    def __init__(self, value, parents=(), op="leaf", requires_grad=None, name=None):
        self.value = _as_array(value)
        self.grad = None
        self.parents = tuple(parents)
        self.op = op
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p, _ in self.parents)
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"<Node {self.op} shape={self.value.shape}{tag}>"

    # Operator sugar used throughout the model code.
    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def constant(value, name=None) -> Node:
    return Node(value, op="const", requires_grad=False, name=name)


def parameter(value, name) -> Node:
    """A trainable leaf; every parameter must be named for error reporting."""
    return Node(value, op="param", requires_grad=True, name=name)


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum-reduce a broadcast gradient back to the original operand shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _coerce(x) -> Node:
    return x if isinstance(x, Node) else constant(x)


def add(a, b) -> Node:
    a, b = _coerce(a), _coerce(b)
    try:
        out = a.value + b.value
    except ValueError:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} do not broadcast")
    return Node(
        out,
        parents=(
            (a, lambda g: _unbroadcast(g, a.shape)),
            (b, lambda g: _unbroadcast(g, b.shape)),
        ),
        op="add",
    )


def sub(a, b) -> Node:
    a, b = _coerce(a), _coerce(b)
    try:
        out = a.value - b.value
    except ValueError:
        raise ShapeError(f"sub: shapes {a.shape} and {b.shape} do not broadcast")
    return Node(
        out,
        parents=(
            (a, lambda g: _unbroadcast(g, a.shape)),
            (b, lambda g: _unbroadcast(-g, b.shape)),
        ),
        op="sub",
    )


def mul(a, b) -> Node:
    a, b = _coerce(a), _coerce(b)
    try:
        out = a.value * b.value
    except ValueError:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} do not broadcast")
    return Node(
        out,
        parents=(
            (a, lambda g: _unbroadcast(g * b.value, a.shape)),
            (b, lambda g: _unbroadcast(g * a.value, b.shape)),
        ),
        op="mul",
    )


def scale(a, s: float) -> Node:
    a = _coerce(a)
    return Node(a.value * s, parents=((a, lambda g: g * s),), op="scale")


def matmul(a, b) -> Node:
    """Matrix product. Shape rules: [m,k]@[k,n]->[m,n] or [k]@[k,n]->[n]."""
    a, b = _coerce(a), _coerce(b)
    av, bv = a.value, b.value
    if bv.ndim != 2:
        raise ShapeError(f"matmul: right operand must be 2-D, got {bv.shape}")
    if av.ndim == 2:
        if av.shape[1] != bv.shape[0]:
            raise ShapeError(f"matmul: inner dims differ, {av.shape} @ {bv.shape}")
        out = av @ bv
        return Node(
            out,
            parents=(
                (a, lambda g: g @ bv.T),
                (b, lambda g: av.T @ g),
            ),
            op="matmul",
        )
    if av.ndim == 1:
        if av.shape[0] != bv.shape[0]:
            raise ShapeError(f"matmul: inner dims differ, {av.shape} @ {bv.shape}")
        out = av @ bv
        return Node(
            out,
            parents=(
                (a, lambda g: g @ bv.T),
                (b, lambda g: np.outer(av, g)),
            ),
            op="matmul",
        )
    raise ShapeError(f"matmul: left operand must be 1-D or 2-D, got {av.shape}")


def concat(nodes, axis: int = 0) -> Node:
    nodes = [_coerce(n) for n in nodes]
    if not nodes:
        raise ShapeError("concat: need at least one input")
    ndim = nodes[0].value.ndim
    for n in nodes:
        if n.value.ndim != ndim:
            raise ShapeError(
                f"concat: rank mismatch {[x.shape for x in nodes]} on axis {axis}"
            )
    try:
        out = np.concatenate([n.value for n in nodes], axis=axis)
    except ValueError:
        raise ShapeError(
            f"concat: incompatible shapes {[x.shape for x in nodes]} on axis {axis}"
        )
    parents = []
    offset = 0
    for n in nodes:
        extent = n.value.shape[axis]

        def grad_fn(g, start=offset, ext=extent):
            index = [slice(None)] * g.ndim
            index[axis] = slice(start, start + ext)
            return g[tuple(index)]

        parents.append((n, grad_fn))
        offset += extent
    return Node(out, parents=tuple(parents), op="concat")


def narrow(a, axis: int, start: int, length: int) -> Node:
    """Contiguous slice of ``length`` entries along ``axis``."""
    a = _coerce(a)
    if not (0 <= start and start + length <= a.value.shape[axis]):
        raise ShapeError(
            f"narrow: [{start}:{start + length}) out of range for shape "
            f"{a.shape} axis {axis}"
        )
    index = [slice(None)] * a.value.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)

    def grad_fn(g):
        full = np.zeros_like(a.value)
        full[index] = g
        return full

    return Node(a.value[index], parents=((a, grad_fn),), op="slice")


def reshape(a, shape) -> Node:
    a = _coerce(a)
    target = int(np.prod(shape, dtype=int))
    if target >= 0 and target != a.value.size:
        raise ShapeError(f"reshape: {a.shape} has {a.value.size} entries, not {shape}")
    return Node(
        a.value.reshape(shape),
        parents=((a, lambda g: g.reshape(a.value.shape)),),
        op="reshape",
    )


def sigmoid(a) -> Node:
    a = _coerce(a)
    out = 1.0 / (1.0 + np.exp(-a.value))
    return Node(out, parents=((a, lambda g: g * out * (1.0 - out)),), op="sigmoid")


def tanh(a) -> Node:
    a = _coerce(a)
    out = np.tanh(a.value)
    return Node(out, parents=((a, lambda g: g * (1.0 - out * out)),), op="tanh")


def relu(a) -> Node:
    a = _coerce(a)
    out = np.maximum(a.value, 0.0)
    return Node(out, parents=((a, lambda g: g * (a.value > 0)),), op="relu")


def softmax(a, axis: int = -1) -> Node:
    a = _coerce(a)
    shifted = a.value - a.value.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        return out * (g - dot)

    return Node(out, parents=((a, grad_fn),), op="softmax")


def log_softmax(a, axis: int = -1) -> Node:
    a = _coerce(a)
    m = a.value.max(axis=axis, keepdims=True)
    shifted = a.value - m
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True)) + m
    out = a.value - lse
    p = np.exp(out)

    def grad_fn(g):
        return g - p * g.sum(axis=axis, keepdims=True)

    return Node(out, parents=((a, grad_fn),), op="log_softmax")


def logsumexp(a, axis: int = -1) -> Node:
    """Max-shifted log-sum-exp; -inf entries contribute nothing."""
    a = _coerce(a)
    axis = axis if axis >= 0 else a.value.ndim + axis
    m = np.max(a.value, axis=axis, keepdims=True)
    m_safe = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(a.value - m_safe)
    s = e.sum(axis=axis, keepdims=True)
    with np.errstate(divide="ignore"):
        out = (np.log(s) + m_safe).squeeze(axis=axis)
    softmax_w = np.divide(e, s, out=np.zeros_like(e), where=s > 0)

    def grad_fn(g):
        return np.expand_dims(g, axis) * softmax_w

    return Node(out, parents=((a, grad_fn),), op="logsumexp")


def max_over_axis(a, axis: int = 0) -> Node:
    """Max reduction; gradient flows to the first (lowest-index) maximizer."""
    a = _coerce(a)
    axis = axis if axis >= 0 else a.value.ndim + axis
    out = a.value.max(axis=axis)
    argmax = a.value.argmax(axis=axis)

    def grad_fn(g):
        full = np.zeros_like(a.value)
        idx = list(np.indices(out.shape))
        idx.insert(axis, argmax)
        full[tuple(idx)] = g
        return full

    return Node(out, parents=((a, grad_fn),), op="max_over_axis")


def dropout(a, keep_prob: float, rng: "RngStream", train: bool) -> Node:
    """Inverted-scaling dropout: at train time multiply by mask/keep_prob.

    In eval mode this is the identity and draws nothing from ``rng``.
    """
    a = _coerce(a)
    if not train or keep_prob >= 1.0:
        return a
    if not 0.0 < keep_prob <= 1.0:
        raise ValueError(f"dropout: keep_prob {keep_prob} outside (0, 1]")
    mask = (rng.random(a.value.shape) < keep_prob) / keep_prob
    return mul(a, constant(mask))


def embedding_lookup(table, ids) -> Node:
    """Rows of a [vocab, dim] table for an id sequence; output [len(ids), dim]."""
    table = _coerce(table)
    ids = np.asarray(ids, dtype=np.intp)
    if table.value.ndim != 2:
        raise ShapeError(f"embedding_lookup: table must be 2-D, got {table.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= table.value.shape[0]):
        raise ShapeError(
            f"embedding_lookup: id out of range for table {table.shape}"
        )

    def grad_fn(g):
        full = np.zeros_like(table.value)
        np.add.at(full, ids, g)
        return full

    return Node(table.value[ids], parents=((table, grad_fn),), op="embedding_lookup")


def pick_sum(a, indices) -> Node:
    """Sum of selected entries, given as a sequence of full index tuples."""
    a = _coerce(a)
    idx = tuple(np.asarray(col, dtype=np.intp) for col in zip(*indices))
    out = a.value[idx].sum()

    def grad_fn(g):
        full = np.zeros_like(a.value)
        np.add.at(full, idx, g)
        return full

    return Node(out, parents=((a, grad_fn),), op="pick_sum")


def sum_all(a) -> Node:
    a = _coerce(a)
    return Node(
        a.value.sum(),
        parents=((a, lambda g: np.full_like(a.value, g)),),
        op="sum",
    )


def backward(loss: Node) -> None:
    """Accumulate dLoss/dNode into ``grad`` for every reachable node.

    ``loss`` must be scalar. Subgraphs with requires_grad False are skipped,
    so frozen (constant) parameters receive no gradient.
    """
    if loss.value.shape != ():
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.value.shape}")

    # Iterative topological order; recursion would overflow on long sequences.
    order = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in visited or not node.requires_grad:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent, _ in node.parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))

    loss.grad = np.ones((), dtype=np.float64)
    for node in reversed(order):
        g = node.grad
        if g is None:
            continue
        for parent, grad_fn in node.parents:
            if not parent.requires_grad:
                continue
            contrib = grad_fn(g)
            if parent.grad is None:
                parent.grad = np.zeros_like(parent.value)
            parent.grad += contrib


def global_grad_norm(params) -> float:
    total = 0.0
    for p in params:
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    return float(np.sqrt(total))


def clip_gradients(params, max_norm: float) -> float:
    """Scale all gradients so their global L2 norm is at most ``max_norm``.

    Returns the pre-clip norm. Gradients at exactly the threshold are left
    unchanged.
    """
    params = list(params)
    for p in params:
        if p.grad is not None and not np.all(np.isfinite(p.grad)):
            raise FloatingPointError(
                f"non-finite gradient in parameter {p.name or '<unnamed>'}"
            )
    norm = global_grad_norm(params)
    if norm > max_norm:
        factor = max_norm / norm
        for p in params:
            if p.grad is not None:
                p.grad *= factor
    return norm


class RngStream:
    """Deterministic random stream: PCG64 seeded with a 64-bit integer.

    The same seed and draw sequence produce identical values on every
    platform numpy supports.
    """

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def random(self, shape=()):
        return self._gen.random(shape)

    def uniform(self, low: float, high: float, shape=()):
        return self._gen.uniform(low, high, shape)

    def normal(self, scale: float, shape=()):
        return self._gen.normal(0.0, scale, shape)

    def integers(self, low: int, high: int, shape=()):
        return self._gen.integers(low, high, size=shape)

    def choice(self, n: int, p=None) -> int:
        return int(self._gen.choice(n, p=p))

    def sample_indices(self, n: int, k: int):
        """k distinct indices from range(n), order of selection discarded."""
        return sorted(self._gen.choice(n, size=k, replace=False).tolist())

    def shuffled(self, items):
        items = list(items)
        self._gen.shuffle(items)
        return items

    def fork(self, salt: int) -> "RngStream":
        """Derive an independent stream; used to give each run its own state."""
        return RngStream((self.seed * 1_000_003 + salt) % (2**63))
