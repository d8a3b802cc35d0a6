"""Tape-based reverse-mode autodiff over the primitives in :mod:`.ops`."""

from __future__ import annotations

import numpy as np

from . import ops


class Tensor:
    """NCHW array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = data
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype, copy=True)
        else:
            self.grad += g

    def backward(self, grad=None):
        if grad is None:
            grad = np.ones_like(self.data)
        order, seen = [], set()

        def visit(t):
            # iterative DFS; U-Nets are shallow but refiner unrolls add depth
            stack = [(t, False)]
            while stack:
                node, done = stack.pop()
                if done:
                    order.append(node)
                    continue
                if id(node) in seen:
                    continue
                seen.add(id(node))
                stack.append((node, True))
                for p in node._parents:
                    if id(p) not in seen:
                        stack.append((p, False))

        visit(self)
        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad and not node._parents:
                node._accumulate(g)
            if node._backward is None:
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not _needs(parent):
                    continue
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + pg
                else:
                    grads[id(parent)] = pg


def _needs(t: Tensor) -> bool:
    return t.requires_grad or t._backward is not None


def _result(data, parents, backward):
    if any(_needs(p) for p in parents):
        return Tensor(data, False, tuple(parents), backward)
    return Tensor(data)


def parameter(data) -> Tensor:
    return Tensor(data, requires_grad=True)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None, stride=1, pad=0) -> Tensor:
    y, cache = ops.conv2d_forward(x.data, w.data, None if b is None else b.data, stride, pad)
    parents = (x, w) if b is None else (x, w, b)

    def back(g):
        gx, gw, gb = ops.conv2d_backward(g, cache)
        return (gx, gw) if b is None else (gx, gw, gb)

    return _result(y, parents, back)


def conv_transpose2d(x: Tensor, w: Tensor, b: Tensor | None, stride=1, pad=0) -> Tensor:
    y, cache = ops.tconv2d_forward(x.data, w.data, None if b is None else b.data, stride, pad)
    parents = (x, w) if b is None else (x, w, b)

    def back(g):
        gx, gw, gb = ops.tconv2d_backward(g, cache)
        return (gx, gw) if b is None else (gx, gw, gb)

    return _result(y, parents, back)


def relu(x: Tensor) -> Tensor:
    y, mask = ops.relu_forward(x.data)
    return _result(y, (x,), lambda g: (ops.relu_backward(g, mask),))


def leaky_relu(x: Tensor, slope=ops.LEAKY_SLOPE) -> Tensor:
    y, scale = ops.leaky_relu_forward(x.data, slope)
    return _result(y, (x,), lambda g: (ops.leaky_relu_backward(g, scale),))


def tanh(x: Tensor) -> Tensor:
    y, cache = ops.tanh_forward(x.data)
    return _result(y, (x,), lambda g: (ops.tanh_backward(g, cache),))


def cat(xs: list[Tensor]) -> Tensor:
    y, sizes = ops.concat_forward([x.data for x in xs])
    return _result(y, tuple(xs), lambda g: tuple(ops.concat_backward(g, sizes)))


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ops.ShapeError(f"add shape mismatch: {a.shape} vs {b.shape}")
    return _result(a.data + b.data, (a, b), lambda g: (g, g))


def clamp(x: Tensor, lo=-1.0, hi=1.0) -> Tensor:
    y, mask = ops.clamp_forward(x.data, lo, hi)
    return _result(y, (x,), lambda g: (ops.clamp_backward(g, mask),))


def bce_with_logits(z: Tensor, target: float) -> Tensor:
    val, cache = ops.bce_with_logits_forward(z.data, target)
    return _result(np.asarray(val), (z,), lambda g: (ops.bce_with_logits_backward(g, cache),))


def l1(a: Tensor, b: Tensor) -> Tensor:
    val, d = ops.l1_forward(a.data, b.data)
    return _result(np.asarray(val), (a, b), lambda g: (ops.l1_backward(g, d), -ops.l1_backward(g, d)))


def scale(x: Tensor, k: float) -> Tensor:
    return _result(x.data * k, (x,), lambda g: (g * k,))
