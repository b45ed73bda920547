"""Reverse-mode automatic differentiation over dense float64 matrices.

Every value is a 2-D row-major float64 array wrapped in a Tensor tape node.
Backward closures accumulate gradients into parents that require them; the
tape is a DAG walked once in reverse topological order. Scalars are 1x1.
"""

from __future__ import annotations

import struct

import numpy as np

PROB_EPS = 1e-7  # clamp bound for values entering log / logit


class ShapeError(ValueError):
    pass


class DomainError(ValueError):
    pass


def _as_matrix(data) -> np.ndarray:
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1, 1)
    elif arr.ndim == 1:
        arr = arr.reshape(1, -1)
    elif arr.ndim != 2:
        raise ShapeError(f"expected at most 2 dimensions, got {arr.ndim}")
    return arr


class Tensor:
    """One tape node: a matrix value, its gradient, and a backward rule."""

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.value = _as_matrix(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        if self.value.size != 1:
            raise ShapeError(f"item() on non-scalar tensor of shape {self.value.shape}")
        return float(self.value[0, 0])

    def detach(self) -> "Tensor":
        return Tensor(self.value.copy())

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    def zero_grad(self):
        self.grad = None

    def backward(self, seed: np.ndarray | None = None):
        """Run the chain rule from this node back through the tape."""
        if seed is None:
            if self.value.size != 1:
                raise ShapeError("backward() without a seed requires a scalar output")
            seed = np.ones_like(self.value)
        if not self.requires_grad:
            return
        self._accumulate(np.asarray(seed, dtype=np.float64).reshape(self.value.shape))
        # Iterative post-order DFS; branches that need no gradient are pruned.
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # Operator sugar; floats are treated as broadcast constants.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def constant(data) -> Tensor:
    return Tensor(data)


def _wrap(out_value: np.ndarray, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(out_value)
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = parents
        out._backward = backward
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.value.shape[1] != b.value.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.value.shape} x {b.value.shape}")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.value.T)
        if b.requires_grad:
            b._accumulate(a.value.T @ g)

    return _wrap(a.value @ b.value, (a, b), backward)


def transpose(a: Tensor) -> Tensor:
    def backward(g):
        if a.requires_grad:
            a._accumulate(g.T)

    return _wrap(a.value.T.copy(), (a,), backward)


def add(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        bv = float(b)

        def backward_s(g):
            if a.requires_grad:
                a._accumulate(g)

        return _wrap(a.value + bv, (a,), backward_s)

    if a.value.shape == b.value.shape:
        def backward(g):
            if a.requires_grad:
                a._accumulate(g)
            if b.requires_grad:
                b._accumulate(g)

        return _wrap(a.value + b.value, (a, b), backward)

    # Row-vector bias broadcast over rows.
    if b.value.shape == (1, a.value.shape[1]):
        def backward_b(g):
            if a.requires_grad:
                a._accumulate(g)
            if b.requires_grad:
                b._accumulate(g.sum(axis=0, keepdims=True))

        return _wrap(a.value + b.value, (a, b), backward_b)
    raise ShapeError(f"add shape mismatch: {a.value.shape} + {b.value.shape}")


def sub(a: Tensor, b) -> Tensor:
    if isinstance(b, Tensor):
        return add(a, neg(b))
    return add(a, -float(b))


def neg(a: Tensor) -> Tensor:
    def backward(g):
        if a.requires_grad:
            a._accumulate(-g)

    return _wrap(-a.value, (a,), backward)


def mul(a: Tensor, b) -> Tensor:
    if not isinstance(b, Tensor):
        bv = float(b)

        def backward_s(g):
            if a.requires_grad:
                a._accumulate(g * bv)

        return _wrap(a.value * bv, (a,), backward_s)
    if a.value.shape != b.value.shape:
        raise ShapeError(f"mul shape mismatch: {a.value.shape} * {b.value.shape}")

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * b.value)
        if b.requires_grad:
            b._accumulate(g * a.value)

    return _wrap(a.value * b.value, (a, b), backward)


def relu(a: Tensor) -> Tensor:
    mask = a.value > 0

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * mask)

    return _wrap(np.where(mask, a.value, 0.0), (a,), backward)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid(a.value)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * y * (1.0 - y))

    return _wrap(y, (a,), backward)


def exp(a: Tensor) -> Tensor:
    y = np.exp(a.value)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * y)

    return _wrap(y, (a,), backward)


def log(a: Tensor) -> Tensor:
    if np.any(a.value <= 0.0):
        raise DomainError("log of non-positive value; clamp probabilities first")
    av = a.value

    def backward(g):
        if a.requires_grad:
            a._accumulate(g / av)

    return _wrap(np.log(av), (a,), backward)


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    mask = (a.value > lo) & (a.value < hi)

    def backward(g):
        if a.requires_grad:
            a._accumulate(g * mask)

    return _wrap(np.clip(a.value, lo, hi), (a,), backward)


def clamp_prob(a: Tensor) -> Tensor:
    """Clamp to [eps, 1-eps] so downstream log/logit stay finite."""
    return clip(a, PROB_EPS, 1.0 - PROB_EPS)


def softmax_rows(a: Tensor) -> Tensor:
    shifted = a.value - a.value.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        if a.requires_grad:
            # dx = y * (g - sum(g * y, row))
            dot = (g * y).sum(axis=1, keepdims=True)
            a._accumulate(y * (g - dot))

    return _wrap(y, (a,), backward)


def mean_rows(a: Tensor) -> Tensor:
    if a.value.shape[0] == 0:
        raise DomainError("mean_rows of empty input")
    n = a.value.shape[0]

    def backward(g):
        if a.requires_grad:
            a._accumulate(np.repeat(g, n, axis=0) / n)

    return _wrap(a.value.mean(axis=0, keepdims=True), (a,), backward)


def mean_all(a: Tensor) -> Tensor:
    if a.value.size == 0:
        raise DomainError("mean_all of empty input")
    n = a.value.size

    def backward(g):
        if a.requires_grad:
            a._accumulate(np.full_like(a.value, g[0, 0] / n))

    return _wrap(np.array([[a.value.mean()]]), (a,), backward)


def sum_all(a: Tensor) -> Tensor:
    if a.value.size == 0:
        raise DomainError("sum_all of empty input")

    def backward(g):
        if a.requires_grad:
            a._accumulate(np.full_like(a.value, g[0, 0]))

    return _wrap(np.array([[a.value.sum()]]), (a,), backward)


def row_sums(a: Tensor) -> Tensor:
    """Per-row sum, shape (R, 1)."""

    def backward(g):
        if a.requires_grad:
            a._accumulate(np.repeat(g, a.value.shape[1], axis=1))

    return _wrap(a.value.sum(axis=1, keepdims=True), (a,), backward)


def concat_cols(*tensors: Tensor) -> Tensor:
    if not tensors:
        raise DomainError("concat_cols of empty input")
    rows = tensors[0].value.shape[0]
    for t in tensors:
        if t.value.shape[0] != rows:
            raise ShapeError("concat_cols requires equal row counts")
    splits = np.cumsum([t.value.shape[1] for t in tensors])[:-1]

    def backward(g):
        for t, part in zip(tensors, np.split(g, splits, axis=1)):
            if t.requires_grad:
                t._accumulate(part)

    return _wrap(np.concatenate([t.value for t in tensors], axis=1), tensors, backward)


def concat_rows(*tensors: Tensor) -> Tensor:
    if not tensors:
        raise DomainError("concat_rows of empty input")
    cols = tensors[0].value.shape[1]
    for t in tensors:
        if t.value.shape[1] != cols:
            raise ShapeError("concat_rows requires equal column counts")
    splits = np.cumsum([t.value.shape[0] for t in tensors])[:-1]

    def backward(g):
        for t, part in zip(tensors, np.split(g, splits, axis=0)):
            if t.requires_grad:
                t._accumulate(part)

    return _wrap(np.concatenate([t.value for t in tensors], axis=0), tensors, backward)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each row to zero mean / unit variance, then apply affine."""
    c = x.value.shape[1]
    if gain.value.shape != (1, c) or bias.value.shape != (1, c):
        raise ShapeError("layer_norm gain/bias must be 1 x cols")
    mu = x.value.mean(axis=1, keepdims=True)
    xc = x.value - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv

    def backward(g):
        if gain.requires_grad:
            gain._accumulate((g * xhat).sum(axis=0, keepdims=True))
        if bias.requires_grad:
            bias._accumulate(g.sum(axis=0, keepdims=True))
        if x.requires_grad:
            dxhat = g * gain.value
            dx = inv * (dxhat
                        - dxhat.mean(axis=1, keepdims=True)
                        - xhat * (dxhat * xhat).mean(axis=1, keepdims=True))
            x._accumulate(dx)

    return _wrap(xhat * gain.value + bias.value, (x, gain, bias), backward)


def dropout(x: Tensor, rate: float, rng: np.random.Generator, training: bool) -> Tensor:
    if not 0.0 <= rate < 1.0:
        raise DomainError(f"dropout rate must be in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    keep = 1.0 - rate
    mask = (rng.random(x.value.shape) >= rate) / keep

    def backward(g):
        if x.requires_grad:
            x._accumulate(g * mask)

    return _wrap(x.value * mask, (x,), backward)


def glorot(rng: np.random.Generator, rows: int, cols: int) -> Tensor:
    """Uniform init in +-sqrt(6 / (fan_in + fan_out)); trainable."""
    bound = np.sqrt(6.0 / (rows + cols))
    return Tensor(rng.uniform(-bound, bound, size=(rows, cols)), requires_grad=True)


def zeros(rows: int, cols: int, requires_grad: bool = True) -> Tensor:
    return Tensor(np.zeros((rows, cols)), requires_grad=requires_grad)


class frozen:
    """Context manager that disables gradient accumulation into `params`."""

    def __init__(self, params):
        self._params = list(params)

    def __enter__(self):
        self._saved = [p.requires_grad for p in self._params]
        for p in self._params:
            p.requires_grad = False
        return self

    def __exit__(self, *exc):
        for p, r in zip(self._params, self._saved):
            p.requires_grad = r
        return False


class Adam:
    """Adam with bias correction over a named parameter dict."""

    def __init__(self, params: dict[str, Tensor], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.params = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.step_count = 0
        self._m = {k: np.zeros_like(p.value) for k, p in self.params.items()}
        self._v = {k: np.zeros_like(p.value) for k, p in self.params.items()}

    def step(self):
        self.step_count += 1
        b1, b2 = self.beta1, self.beta2
        bc1 = 1.0 - b1 ** self.step_count
        bc2 = 1.0 - b2 ** self.step_count
        for k, p in self.params.items():
            g = p.grad if p.grad is not None else 0.0
            m = self._m[k]
            v = self._v[k]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * np.square(g)
            p.value -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.epsilon)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None


# -- checkpoint container ----------------------------------------------------

CHECKPOINT_MAGIC = b"LALA"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, named_values: dict[str, np.ndarray]):
    """Flat binary container: magic, u32 version, then (name, rows, cols, f64 data)."""
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        for name, arr in named_values.items():
            arr = _as_matrix(arr)
            encoded = name.encode("utf-8")
            f.write(struct.pack("<I", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<II", arr.shape[0], arr.shape[1]))
            f.write(arr.astype("<f8").tobytes(order="C"))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    with open(path, "rb") as f:
        if f.read(4) != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file (bad magic)")
        (version,) = struct.unpack("<I", f.read(4))
        if version != CHECKPOINT_VERSION:
            raise ValueError(f"{path}: unsupported checkpoint version {version}")
        while True:
            head = f.read(4)
            if not head:
                break
            (name_len,) = struct.unpack("<I", head)
            name = f.read(name_len).decode("utf-8")
            rows, cols = struct.unpack("<II", f.read(8))
            data = np.frombuffer(f.read(rows * cols * 8), dtype="<f8")
            out[name] = data.reshape(rows, cols).astype(np.float64)
    return out
