"""A small tape of differentiable numpy operations.

Only the operations the encoder/denoiser need are provided. Each op returns a
:class:`Var` holding its value and a closure that pushes the incoming gradient
to its inputs; :meth:`Var.backward` replays the closures in reverse
topological order.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class Var:
    __slots__ = ("data", "grad", "requires_grad", "_prev", "_backward")

    def __init__(self, data, prev=(), backward=None, requires_grad=None):
        self.data = data
        self.grad = None
        if requires_grad is None:
            requires_grad = any(p.requires_grad for p in prev)
        self.requires_grad = requires_grad
        self._prev = prev
        self._backward = backward

    @property
    def shape(self):
        return self.data.shape

    def _acc(self, g):
        if not self.requires_grad:
            return
        self.grad = g if self.grad is None else self.grad + g

    def backward(self, grad=None):
        order, seen = [], set()

        def visit(v):
            stack = [(v, False)]
            while stack:
                node, done = stack.pop()
                if done:
                    order.append(node)
                    continue
                if id(node) in seen:
                    continue
                seen.add(id(node))
                stack.append((node, True))
                for p in node._prev:
                    if id(p) not in seen:
                        stack.append((p, False))

        visit(self)
        self._acc(np.ones_like(self.data) if grad is None else grad)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None and node.requires_grad:
                node._backward(node.grad)


def linear(x: Var, W: Var, b: Var) -> Var:
    out = x.data @ W.data + b.data

    def backward(g):
        x._acc(g @ W.data.T)
        W._acc(x.data.T @ g)
        b._acc(g.sum(axis=0))

    return Var(out, (x, W, b), backward)


def relu(x: Var) -> Var:
    mask = x.data > 0
    out = x.data * mask

    def backward(g):
        x._acc(g * mask)

    return Var(out, (x,), backward)


def add(a: Var, b: Var) -> Var:
    def backward(g):
        a._acc(g)
        b._acc(g)

    return Var(a.data + b.data, (a, b), backward)


def reshape(x: Var, shape) -> Var:
    in_shape = x.data.shape

    def backward(g):
        x._acc(g.reshape(in_shape))

    return Var(x.data.reshape(shape), (x,), backward)


def concat(xs, axis=-1) -> Var:
    sizes = [v.data.shape[axis] for v in xs]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for v, part in zip(xs, np.split(g, splits, axis=axis)):
            v._acc(part)

    return Var(np.concatenate([v.data for v in xs], axis=axis), tuple(xs), backward)


def conv2d(x: Var, W: Var, b: Var, stride: int = 2, pad: int = 1) -> Var:
    """NHWC convolution; ``W`` has shape ``(kh, kw, cin, cout)``."""
    kh, kw, cin, cout = W.data.shape
    n, h, w, c = x.data.shape
    if c != cin:
        raise ValueError(f"conv expects {cin} input channels, got {c}")
    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad), (0, 0)))
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride][:, :ho, :wo]
    cols = win.reshape(n * ho * wo, cin * kh * kw)
    Wm = W.data.transpose(2, 0, 1, 3).reshape(cin * kh * kw, cout)
    out = (cols @ Wm + b.data).reshape(n, ho, wo, cout)

    def backward(g):
        g2 = g.reshape(n * ho * wo, cout)
        W._acc((cols.T @ g2).reshape(cin, kh, kw, cout).transpose(1, 2, 0, 3))
        b._acc(g2.sum(axis=0))
        if not x.requires_grad:
            return
        dcols = (g2 @ Wm.T).reshape(n, ho, wo, cin, kh, kw)
        dxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                dxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += dcols[..., i, j]
        x._acc(dxp[:, pad:pad + h, pad:pad + w, :])

    return Var(out, (x, W, b), backward)


def spatial_softmax(x: Var) -> Var:
    """Per-channel soft-argmax of an NHWC map: ``(n, 2c)`` as ``[x_0..x_c, y_0..y_c]``.

    Coordinates are pixel centres in [-1, 1]; column index is x, row index is y.
    """
    n, h, w, c = x.data.shape
    z = x.data.reshape(n, h * w, c)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=1, keepdims=True)
    gx = (np.arange(w) + 0.5) / w * 2.0 - 1.0
    gy = (np.arange(h) + 0.5) / h * 2.0 - 1.0
    X = np.tile(gx, h).astype(x.data.dtype)[None, :, None]
    Y = np.repeat(gy, w).astype(x.data.dtype)[None, :, None]
    ex = (s * X).sum(axis=1)
    ey = (s * Y).sum(axis=1)

    def backward(g):
        g_x, g_y = g[:, :c], g[:, c:]
        dz = s * (g_x[:, None, :] * (X - ex[:, None, :]) + g_y[:, None, :] * (Y - ey[:, None, :]))
        x._acc(dz.reshape(n, h, w, c))

    return Var(np.concatenate([ex, ey], axis=1), (x,), backward)


def squared_error_mean(pred: Var, target: np.ndarray) -> Var:
    """Mean over rows of the summed squared error per row."""
    diff = pred.data - target
    n = diff.shape[0]
    out = np.asarray((diff * diff).sum() / n)

    def backward(g):
        pred._acc((2.0 / n) * diff * g)

    return Var(out, (pred,), backward)


def take(x: Var, idx) -> Var:
    """Row gather ``x[idx]``; gradients scatter-add back to the source rows."""
    idx = np.asarray(idx, dtype=int)

    def backward(g):
        acc = np.zeros_like(x.data)
        np.add.at(acc, idx, g)
        x._acc(acc)

    return Var(x.data[idx], (x,), backward)


def matmul(x: Var, W: Var) -> Var:
    def backward(g):
        x._acc(g @ W.data.T)
        W._acc(x.data.T @ g)

    return Var(x.data @ W.data, (x, W), backward)


def scale(x: Var, c: np.ndarray) -> Var:
    """Elementwise product with a constant array."""

    def backward(g):
        x._acc(g * c)

    return Var(x.data * c, (x,), backward)
