"""Minimal dense reverse-mode autodiff on numpy arrays.

Just enough machinery for the encoder and the policy losses: 2-D tensors,
broadcast-aware arithmetic, matmul, a few activations, and fused
softmax/log-softmax/layer-norm kernels with hand-written backward passes.
Storage defaults to the dtype of the arrays passed in (the encoder uses
32-bit parameters; gradient checks run the same graph at 64-bit).

A module-level debug flag makes every op assert its output is finite.
"""

from __future__ import annotations

import numpy as np

_DEBUG_FINITE = False


def set_debug_checks(enabled: bool) -> None:
    """Toggle NaN/Inf assertions after every forward op."""
    global _DEBUG_FINITE
    _DEBUG_FINITE = bool(enabled)


def _finite(data: np.ndarray) -> np.ndarray:
    if _DEBUG_FINITE and not np.isfinite(data).all():
        raise FloatingPointError("non-finite value produced by a forward op")
    return data


class Tensor:
    """A node in the computation graph.

    grad is lazily allocated on the first backward contribution and has the
    same shape and dtype as data.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data)
        if self.data.ndim == 0:
            self.data = self.data.reshape(1, 1)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = None

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def backward(self, grad: np.ndarray | None = None) -> None:
        """Reverse sweep from this node in topological order.

        Interior nodes get fresh gradients on every call; leaves accumulate
        across calls until explicitly zeroed.
        """
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen and p.requires_grad:
                    stack.append((p, False))
        for node in topo:
            if node._parents:
                node.grad = None
        self.accumulate(np.ones_like(self.data) if grad is None else grad)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # Operator sugar; every implementation lives in the module functions.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(value, like: Tensor | None = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    dtype = like.data.dtype if like is not None else np.float64
    return Tensor(np.asarray(value, dtype=dtype))


def _make(data, parents, backward) -> Tensor:
    out = Tensor(_finite(data))
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the original shape."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)

    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g, b.data.shape))

    return _make(a.data + b.data, (a, b), backward)


def sub(a, b) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)

    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(-g, b.data.shape))

    return _make(a.data - b.data, (a, b), backward)


def mul(a, b) -> Tensor:
    a = as_tensor(a, b if isinstance(b, Tensor) else None)
    b = as_tensor(b, a)

    def backward(g):
        if a.requires_grad:
            a.accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(g * a.data, b.data.shape))

    return _make(a.data * b.data, (a, b), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape[1] != b.data.shape[0]:
        from .errors import ShapeError

        raise ShapeError(f"matmul mismatch: {a.data.shape} @ {b.data.shape}")

    def backward(g):
        if a.requires_grad:
            a.accumulate(g @ b.data.T)
        if b.requires_grad:
            b.accumulate(a.data.T @ g)

    return _make(a.data @ b.data, (a, b), backward)


def transpose(a: Tensor) -> Tensor:
    def backward(g):
        if a.requires_grad:
            a.accumulate(g.T)

    return _make(a.data.T.copy(), (a,), backward)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def backward(g):
        if a.requires_grad:
            a.accumulate(g * mask)

    return _make(a.data * mask, (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    out_data = 1.0 / (1.0 + np.exp(-a.data))

    def backward(g):
        if a.requires_grad:
            a.accumulate(g * out_data * (1.0 - out_data))

    return _make(out_data, (a,), backward)


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def backward(g):
        if a.requires_grad:
            a.accumulate(g * out_data)

    return _make(out_data, (a,), backward)


def log(a: Tensor) -> Tensor:
    def backward(g):
        if a.requires_grad:
            a.accumulate(g / a.data)

    return _make(np.log(a.data), (a,), backward)


def concat_cols(parts: list[Tensor]) -> Tensor:
    widths = [p.data.shape[1] for p in parts]
    offsets = np.cumsum([0] + widths)

    def backward(g):
        for p, lo, hi in zip(parts, offsets, offsets[1:]):
            if p.requires_grad:
                p.accumulate(g[:, lo:hi])

    return _make(np.concatenate([p.data for p in parts], axis=1), parts, backward)


def mean_rows(a: Tensor) -> Tensor:
    n = a.data.shape[0]

    def backward(g):
        if a.requires_grad:
            a.accumulate(np.repeat(g, n, axis=0) / n)

    return _make(a.data.mean(axis=0, keepdims=True), (a,), backward)


def sum_all(a: Tensor) -> Tensor:
    def backward(g):
        if a.requires_grad:
            a.accumulate(np.full_like(a.data, float(g.reshape(-1)[0])))

    return _make(a.data.sum().reshape(1, 1), (a,), backward)


def mean_all(a: Tensor) -> Tensor:
    return mul(sum_all(a), 1.0 / a.data.size)


def pick(a: Tensor, row: int, col: int) -> Tensor:
    def backward(g):
        if a.requires_grad:
            buf = np.zeros_like(a.data)
            buf[row, col] = g.reshape(-1)[0]
            a.accumulate(buf)

    return _make(a.data[row, col].reshape(1, 1), (a,), backward)


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    mask = (a.data >= lo) & (a.data <= hi)

    def backward(g):
        if a.requires_grad:
            a.accumulate(g * mask)

    return _make(np.clip(a.data, lo, hi), (a,), backward)


def minimum(a: Tensor, b: Tensor) -> Tensor:
    take_a = a.data <= b.data  # ties route gradient to the first argument

    def backward(g):
        if a.requires_grad:
            a.accumulate(g * take_a)
        if b.requires_grad:
            b.accumulate(g * ~take_a)

    return _make(np.minimum(a.data, b.data), (a, b), backward)


def softmax_rows(a: Tensor) -> Tensor:
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        if a.requires_grad:
            a.accumulate(p * (g - (g * p).sum(axis=1, keepdims=True)))

    return _make(p, (a,), backward)


def log_softmax_rows(a: Tensor) -> Tensor:
    shifted = a.data - a.data.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    out_data = shifted - log_z
    p = np.exp(out_data)

    def backward(g):
        if a.requires_grad:
            a.accumulate(g - p * g.sum(axis=1, keepdims=True))

    return _make(out_data, (a,), backward)


def layer_norm_rows(a: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Per-row normalization over features, then affine scale and shift."""
    mu = a.data.mean(axis=1, keepdims=True)
    var = a.data.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (a.data - mu) * inv

    def backward(g):
        if gain.requires_grad:
            gain.accumulate(_unbroadcast(g * xhat, gain.data.shape))
        if bias.requires_grad:
            bias.accumulate(_unbroadcast(g, bias.data.shape))
        if a.requires_grad:
            dxhat = g * gain.data
            m1 = dxhat.mean(axis=1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=1, keepdims=True)
            a.accumulate(inv * (dxhat - m1 - xhat * m2))

    return _make(xhat * gain.data + bias.data, (a, gain, bias), backward)


def normalized_rows_stats(a: np.ndarray, eps: float = 1e-5) -> tuple[np.ndarray, np.ndarray]:
    """Mean and variance per row of the pre-affine normalized values (diagnostics)."""
    mu = a.mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(a.var(axis=1, keepdims=True) + eps)
    xhat = (a - mu) * inv
    return xhat.mean(axis=1), xhat.var(axis=1)


def grad_check(build_loss, tensors: dict[str, Tensor], step: float = 1e-4) -> dict:
    """Compare reverse-mode gradients with central finite differences.

    build_loss must rebuild the scalar loss from the live tensors on every
    call.  Returns per-tensor and overall maximum relative error; relative
    error uses max(1, |analytic|, |numeric|) as the denominator.
    """
    for t in tensors.values():
        t.zero_grad()
    loss = build_loss()
    loss.backward()
    analytic = {
        name: (np.zeros_like(t.data) if t.grad is None else t.grad.copy())
        for name, t in tensors.items()
    }
    report: dict[str, float] = {}
    worst = 0.0
    for name, t in tensors.items():
        flat = t.data.reshape(-1)
        num = np.zeros_like(flat)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + step
            up = build_loss().item()
            flat[k] = orig - step
            down = build_loss().item()
            flat[k] = orig
            num[k] = (up - down) / (2.0 * step)
        a = analytic[name].reshape(-1)
        denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(num)))
        err = float(np.max(np.abs(a - num) / denom)) if flat.size else 0.0
        report[name] = err
        worst = max(worst, err)
    return {"max_rel_err": worst, "per_tensor": report}
