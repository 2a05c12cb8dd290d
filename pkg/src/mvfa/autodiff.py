"""Dense float64 tensors with reverse-mode automatic differentiation.

Each operation records its parents and a backward closure on the produced
``Tensor``, so the computation graph is the DAG of live tensors.  Calling
``backward`` on a scalar loss walks the graph in reverse topological order
and accumulates gradients into every tensor created with
``requires_grad=True``.  All data is float64 and all forward functions are
pure: the same inputs produce bit-identical outputs.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .errors import MvfaError, ShapeError

LOG_FLOOR = 1e-12


class Tensor:
    """A numpy-backed value node in the autodiff graph."""

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, op: str = "leaf",
                 parents: Sequence["Tensor"] = (),
                 backward_fn: Optional[Callable[[np.ndarray], None]] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self.op = op
        self._parents = tuple(parents)
        self._backward = backward_fn

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        backward(self)

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    # arithmetic sugar; scalars are lifted to constant tensors
    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __truediv__(self, other):
        return mul(self, _lift(1.0 / other)) if np.isscalar(other) else _not_supported()

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"


def _not_supported():
    raise TypeError("tensor/tensor division is not supported")


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _needs_grad(*ts: Tensor) -> bool:
    return any(t.requires_grad or t._backward is not None for t in ts)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def topo_order(root: Tensor) -> list:
    """Parents-first ordering of every node reachable from ``root``."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every reachable tensor with ``requires_grad``."""
    if loss.data.ndim != 0:
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")
    order = topo_order(loss)
    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def zero_grads(params) -> None:
    values = params.values() if isinstance(params, dict) else params
    for p in values:
        p.grad = None


# ---------------------------------------------------------------------------
# elementwise and reduction ops


def add(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data + b.data

    def bwd(g):
        if a.requires_grad or a._backward is not None:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad or b._backward is not None:
            b._accumulate(_unbroadcast(g, b.data.shape))

    return Tensor(out_data, op="add", parents=(a, b),
                  backward_fn=bwd if _needs_grad(a, b) else None)


def sub(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data - b.data

    def bwd(g):
        if a.requires_grad or a._backward is not None:
            a._accumulate(_unbroadcast(g, a.data.shape))
        if b.requires_grad or b._backward is not None:
            b._accumulate(_unbroadcast(-g, b.data.shape))

    return Tensor(out_data, op="sub", parents=(a, b),
                  backward_fn=bwd if _needs_grad(a, b) else None)


def mul(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data * b.data

    def bwd(g):
        if a.requires_grad or a._backward is not None:
            a._accumulate(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad or b._backward is not None:
            b._accumulate(_unbroadcast(g * a.data, b.data.shape))

    return Tensor(out_data, op="mul", parents=(a, b),
                  backward_fn=bwd if _needs_grad(a, b) else None)


def neg(a: Tensor) -> Tensor:
    def bwd(g):
        a._accumulate(-g)

    return Tensor(-a.data, op="neg", parents=(a,),
                  backward_fn=bwd if _needs_grad(a) else None)


def relu(a: Tensor) -> Tensor:
    # subgradient at exactly 0 is defined as 0
    mask = a.data > 0.0
    out_data = np.where(mask, a.data, 0.0)

    def bwd(g):
        a._accumulate(g * mask)

    return Tensor(out_data, op="relu", parents=(a,),
                  backward_fn=bwd if _needs_grad(a) else None)


def sigmoid(a: Tensor) -> Tensor:
    out_data = 1.0 / (1.0 + np.exp(-a.data))

    def bwd(g):
        a._accumulate(g * out_data * (1.0 - out_data))

    return Tensor(out_data, op="sigmoid", parents=(a,),
                  backward_fn=bwd if _needs_grad(a) else None)


def log(a: Tensor, floor: float = LOG_FLOOR) -> Tensor:
    """Natural log with the argument clamped below at ``floor``."""
    clamped = np.maximum(a.data, floor)
    out_data = np.log(clamped)

    def bwd(g):
        a._accumulate(g * (a.data > floor) / clamped)

    return Tensor(out_data, op="log", parents=(a,),
                  backward_fn=bwd if _needs_grad(a) else None)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.data.shape).copy())
            return
        gg = g if keepdims else np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(gg, a.data.shape).copy())

    return Tensor(out_data, op="sum", parents=(a,),
                  backward_fn=bwd if _needs_grad(a) else None)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        a._accumulate(out_data * (g - dot))

    return Tensor(out_data, op="softmax", parents=(a,),
                  backward_fn=bwd if _needs_grad(a) else None)


def reshape(a: Tensor, shape) -> Tensor:
    def bwd(g):
        a._accumulate(g.reshape(a.data.shape))

    return Tensor(a.data.reshape(shape), op="reshape", parents=(a,),
                  backward_fn=bwd if _needs_grad(a) else None)


def transpose(a: Tensor) -> Tensor:
    if a.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {a.shape}")

    def bwd(g):
        a._accumulate(g.T)

    return Tensor(a.data.T, op="transpose", parents=(a,),
                  backward_fn=bwd if _needs_grad(a) else None)


def getitem(a: Tensor, idx) -> Tensor:
    out_data = a.data[idx]

    def bwd(g):
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        np.add.at(a.grad, idx, g)

    return Tensor(out_data, op="slice", parents=(a,),
                  backward_fn=bwd if _needs_grad(a) else None)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul expects matrices, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner dimensions differ: {a.shape} @ {b.shape}")
    out_data = a.data @ b.data

    def bwd(g):
        if a.requires_grad or a._backward is not None:
            a._accumulate(g @ b.data.T)
        if b.requires_grad or b._backward is not None:
            b._accumulate(a.data.T @ g)

    return Tensor(out_data, op="matmul", parents=(a, b),
                  backward_fn=bwd if _needs_grad(a, b) else None)


def dropout(a: Tensor, rate: float, rng: np.random.Generator,
            training: bool) -> Tensor:
    """Inverted-scaling dropout; identity when evaluating or rate is 0."""
    if not training or rate == 0.0:
        return a
    if not 0.0 <= rate < 1.0:
        raise MvfaError(f"dropout rate must be in [0, 1), got {rate}")
    mask = (rng.random(a.data.shape) >= rate) / (1.0 - rate)

    def bwd(g):
        a._accumulate(g * mask)

    return Tensor(a.data * mask, op="dropout", parents=(a,),
                  backward_fn=bwd if _needs_grad(a) else None)


# ---------------------------------------------------------------------------
# spatial ops (NHWC layout)


def conv2d(x: Tensor, w: Tensor, b: Optional[Tensor] = None,
           stride: int = 1) -> Tensor:
    """Same-padded 2-D convolution, odd kernel, NHWC input, HWIO weights."""
    if x.ndim != 4:
        raise ShapeError(f"conv2d input must be NHWC, got shape {x.shape}")
    if w.ndim != 4:
        raise ShapeError(f"conv2d weight must be HWIO, got shape {w.shape}")
    kh, kw, cin, cout = w.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d kernel sizes must be odd, got {kh}x{kw}")
    n, h, ww_, cx = x.shape
    if cx != cin:
        raise ShapeError(f"conv2d channel mismatch: input has {cx}, weight expects {cin}")
    ph, pw = (kh - 1) // 2, (kw - 1) // 2
    ho = (h + 2 * ph - kh) // stride + 1
    wo = (ww_ + 2 * pw - kw) // stride + 1

    xp = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    cols = np.empty((n, ho, wo, kh, kw, cin))
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, i, j, :] = xp[:, i:i + stride * ho:stride,
                                        j:j + stride * wo:stride, :]
    cols2 = cols.reshape(n * ho * wo, kh * kw * cin)
    wmat = w.data.reshape(kh * kw * cin, cout)
    out_data = (cols2 @ wmat).reshape(n, ho, wo, cout)
    if b is not None:
        if b.shape != (cout,):
            raise ShapeError(f"conv2d bias must have shape ({cout},), got {b.shape}")
        out_data = out_data + b.data

    parents = (x, w) if b is None else (x, w, b)

    def bwd(g):
        g2 = g.reshape(n * ho * wo, cout)
        if w.requires_grad or w._backward is not None:
            w._accumulate((cols2.T @ g2).reshape(w.data.shape))
        if b is not None and (b.requires_grad or b._backward is not None):
            b._accumulate(g.sum(axis=(0, 1, 2)))
        if x.requires_grad or x._backward is not None:
            dcols = (g2 @ wmat.T).reshape(n, ho, wo, kh, kw, cin)
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, i:i + stride * ho:stride,
                        j:j + stride * wo:stride, :] += dcols[:, :, :, i, j, :]
            x._accumulate(dxp[:, ph:ph + h, pw:pw + ww_, :])

    return Tensor(out_data, op="conv2d", parents=parents,
                  backward_fn=bwd if _needs_grad(*parents) else None)


def conv1x1(x: Tensor, w: Tensor) -> Tensor:
    """1x1 convolution without bias: a per-position channel mixing matrix."""
    if x.ndim != 4:
        raise ShapeError(f"conv1x1 input must be NHWC, got shape {x.shape}")
    if w.ndim != 2 or w.shape[0] != x.shape[3]:
        raise ShapeError(
            f"conv1x1 weight must be ({x.shape[3]}, C), got {w.shape}")
    n, h, ww_, cin = x.shape
    flat = reshape(x, (n * h * ww_, cin))
    return reshape(matmul(flat, w), (n, h, ww_, w.shape[1]))


def gap(x: Tensor) -> Tensor:
    """Global average pool: spatial mean of an NHWC tensor, yields (N, C)."""
    if x.ndim != 4:
        raise ShapeError(f"gap expects an NHWC tensor, got shape {x.shape}")
    n, h, w, c = x.shape
    out_data = x.data.mean(axis=(1, 2))

    def bwd(g):
        x._accumulate(np.broadcast_to(g[:, None, None, :] / (h * w),
                                      x.data.shape).copy())

    return Tensor(out_data, op="gap", parents=(x,),
                  backward_fn=bwd if _needs_grad(x) else None)


def region_avg_pool(x: Tensor, boxes: np.ndarray,
                    image_index: np.ndarray) -> Tensor:
    """Average-pool rectangular regions of an NHWC tensor.

    ``boxes`` is an int array of shape (M, 4) holding inclusive
    (y_tl, x_tl, y_br, x_br) bounds; ``image_index`` maps each box to its
    batch element.  Returns (M, C).  The gradient spreads 1/area uniformly
    over the covered cells, making the op end-to-end differentiable.
    """
    if x.ndim != 4:
        raise ShapeError(f"region_avg_pool expects NHWC input, got {x.shape}")
    boxes = np.asarray(boxes, dtype=np.int64)
    image_index = np.asarray(image_index, dtype=np.int64)
    if boxes.ndim != 2 or boxes.shape[1] != 4:
        raise ShapeError(f"boxes must have shape (M, 4), got {boxes.shape}")
    if image_index.shape != (boxes.shape[0],):
        raise ShapeError("image_index length must match the box count")
    n, h, w, c = x.shape
    y0, x0, y1, x1 = boxes[:, 0], boxes[:, 1], boxes[:, 2], boxes[:, 3]
    if (y0 < 0).any() or (x0 < 0).any() or (y1 >= h).any() or (x1 >= w).any() \
            or (y0 > y1).any() or (x0 > x1).any() or (image_index >= n).any():
        raise ShapeError("region bounds fall outside the feature maps")

    # summed-area table with a zero border row/column
    sat = np.zeros((n, h + 1, w + 1, c))
    sat[:, 1:, 1:, :] = x.data.cumsum(axis=1).cumsum(axis=2)
    area = ((y1 - y0 + 1) * (x1 - x0 + 1)).astype(np.float64)
    sums = (sat[image_index, y1 + 1, x1 + 1, :]
            - sat[image_index, y0, x1 + 1, :]
            - sat[image_index, y1 + 1, x0, :]
            + sat[image_index, y0, x0, :])
    out_data = sums / area[:, None]

    def bwd(g):
        q = g / area[:, None]
        diff = np.zeros((n, h + 1, w + 1, c))
        np.add.at(diff, (image_index, y0, x0), q)
        np.add.at(diff, (image_index, y0, x1 + 1), -q)
        np.add.at(diff, (image_index, y1 + 1, x0), -q)
        np.add.at(diff, (image_index, y1 + 1, x1 + 1), q)
        x._accumulate(diff.cumsum(axis=1).cumsum(axis=2)[:, :h, :w, :])

    return Tensor(out_data, op="region_avg_pool", parents=(x,),
                  backward_fn=bwd if _needs_grad(x) else None)


# ---------------------------------------------------------------------------
# verification helpers


def assert_finite(t: Tensor, name: str = "tensor") -> None:
    if not np.isfinite(t.data).all():
        raise MvfaError(f"{name} contains non-finite values")


def grad_check(loss_fn: Callable[[], Tensor], params, eps: float = 1e-3) -> float:
    """Compare autodiff gradients against central finite differences.

    ``loss_fn`` rebuilds the loss from the current parameter data each call.
    Returns the max over all coordinates of
    ``|autodiff - fd| / max(|autodiff|, |fd|, 1e-8)``.
    """
    plist = list(params.values()) if isinstance(params, dict) else list(params)
    zero_grads(plist)
    loss = loss_fn()
    if not np.isfinite(loss.data).all():
        raise MvfaError("grad_check: loss is non-finite at the base point")
    backward(loss)
    auto = [np.zeros_like(p.data) if p.grad is None else p.grad.copy()
            for p in plist]

    worst = 0.0
    for p, a in zip(plist, auto):
        flat = p.data.reshape(-1)
        aflat = a.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + eps
            hi = loss_fn().item()
            flat[i] = orig - eps
            lo = loss_fn().item()
            flat[i] = orig
            if not (np.isfinite(hi) and np.isfinite(lo)):
                raise MvfaError("grad_check: loss is non-finite under perturbation")
            fd = (hi - lo) / (2.0 * eps)
            err = abs(aflat[i] - fd) / max(abs(aflat[i]), abs(fd), 1e-8)
            worst = max(worst, err)
    zero_grads(plist)
    return worst
