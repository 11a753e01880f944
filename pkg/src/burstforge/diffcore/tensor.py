"""Float tensors with reverse-mode gradient tracking.

A Tensor wraps a contiguous numpy array. Operations between tensors build a
graph of parent links and backward closures; calling ``backward()`` on a
scalar result walks that graph once in reverse topological order and
accumulates gradients into every tensor that requires them. Gradients are
plain numpy arrays stored on ``.grad``; they start as ``None`` and repeated
backward passes without an intervening ``zero_grad`` add up.
"""

from __future__ import annotations

import threading

import numpy as np

_FLOAT_TYPES = (np.float32, np.float64)

# Per-thread storage for the gradients of the backward pass currently being
# evaluated. Keeping pass-local buffers separate from the persistent ``.grad``
# slots makes repeated backward calls accumulate exactly one contribution each.
_WALK = threading.local()


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype not in _FLOAT_TYPES:
            arr = arr.astype(np.float64)
        if not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return self.data.item()

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        """Copy of the value with no graph attached."""
        return Tensor(self.data.copy())

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every reachable tensor's ``.grad``.

        Only defined for scalar (0-d) results. Uses an iterative post-order
        walk so deep graphs cannot hit the recursion limit. Each node's
        closure runs exactly once even when it is reachable along several
        paths; its incoming gradient is fully accumulated first.
        """
        if self.data.shape != ():
            raise ValueError(
                f"backward requires a scalar result, got shape {self.data.shape}"
            )
        if not self.requires_grad:
            raise ValueError("backward on a tensor that does not require grad")
        if getattr(_WALK, "grads", None) is not None:
            raise RuntimeError("nested backward on the same thread")

        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))

        _WALK.grads = {id(self): np.ones((), dtype=self.data.dtype)}
        try:
            walk = _WALK.grads
            for node in reversed(topo):
                g = walk.get(id(node))
                if g is not None and node._backward is not None:
                    node._backward(g)
            for node in topo:
                g = walk.get(id(node))
                if g is None:
                    continue
                if node.grad is None:
                    node.grad = np.zeros_like(node.data)
                node.grad += g
        finally:
            _WALK.grads = None

    # -- arithmetic -------------------------------------------------------

    def __add__(self, other):
        return add(self, _wrap_like(other, self))

    def __radd__(self, other):
        return add(_wrap_like(other, self), self)

    def __sub__(self, other):
        return sub(self, _wrap_like(other, self))

    def __rsub__(self, other):
        return sub(_wrap_like(other, self), self)

    def __mul__(self, other):
        return mul(self, _wrap_like(other, self))

    def __rmul__(self, other):
        return mul(_wrap_like(other, self), self)

    def __neg__(self):
        return scale(self, -1.0)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"


def _wrap_like(value, ref: Tensor) -> Tensor:
    """Lift a plain number/array to a Tensor in ``ref``'s dtype.

    Keeps float32 pipelines in float32 when mixed with Python scalars.
    """
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value, dtype=ref.data.dtype))


def _from_op(data: np.ndarray, parents, backward) -> Tensor:
    """Build a graph node; drops the tape when no parent tracks gradients."""
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    """Add a gradient contribution for ``t`` within the active backward pass."""
    if not t.requires_grad:
        return
    walk = getattr(_WALK, "grads", None)
    if walk is None:
        # direct accumulation outside a pass (tests, manual seeding)
        if t.grad is None:
            t.grad = np.zeros_like(t.data)
        t.grad += g
        return
    buf = walk.get(id(t))
    if buf is None:
        walk[id(t)] = buf = np.zeros_like(t.data)
    buf += g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum ``g`` down to ``shape``, undoing numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise operations ----------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def backward(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(g, b.data.shape))

    return _from_op(data, (a, b), backward)


def sub(a: Tensor, b: Tensor) -> Tensor:
    data = a.data - b.data

    def backward(g):
        _accum(a, _unbroadcast(g, a.data.shape))
        _accum(b, _unbroadcast(-g, b.data.shape))

    return _from_op(data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def backward(g):
        _accum(a, _unbroadcast(g * b.data, a.data.shape))
        _accum(b, _unbroadcast(g * a.data, b.data.shape))

    return _from_op(data, (a, b), backward)


def scale(a: Tensor, factor: float) -> Tensor:
    factor = float(factor)
    data = a.data * factor

    def backward(g):
        _accum(a, g * factor)

    return _from_op(data, (a,), backward)


def add_scalar(a: Tensor, offset: float) -> Tensor:
    data = a.data + float(offset)

    def backward(g):
        _accum(a, g)

    return _from_op(data, (a,), backward)


def absolute(a: Tensor) -> Tensor:
    """Elementwise |a|; the subgradient at 0 is taken as 0."""
    data = np.abs(a.data)

    def backward(g):
        _accum(a, g * np.sign(a.data))

    return _from_op(data, (a,), backward)


def relu(a: Tensor) -> Tensor:
    data = np.maximum(a.data, 0)

    def backward(g):
        _accum(a, g * (a.data > 0))

    return _from_op(data, (a,), backward)


def sigmoid(a: Tensor) -> Tensor:
    """Logistic function, computed without overflow for large |a|.

    Saturates to exactly 1.0 (resp. 0.0) once exp underflows, so downstream
    blends of the form ``x + (s - 1) * d`` pass inputs through bit-exactly
    at strongly positive logits.
    """
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)

    def backward(g):
        _accum(a, g * out * (1.0 - out))

    return _from_op(out, (a,), backward)


_POWER_GRAD_FLOOR = 1e-4  # keeps d/dx x**e bounded near 0 for e < 1


def clamped_power(a: Tensor, exponent: float, lo: float = 0.0, hi: float = 1.0) -> Tensor:
    """``clip(a, lo, hi) ** exponent`` as one differentiable unit.

    Outside [lo, hi] the clip saturates and the gradient is zero. Inside,
    the derivative ``e * x**(e-1)`` is evaluated with ``x`` floored at a
    small constant so exponents below one stay finite at the lower clamp.
    """
    exponent = float(exponent)
    clipped = np.clip(a.data, lo, hi)
    data = np.power(clipped, exponent)

    def backward(g):
        inside = (a.data > lo) & (a.data < hi)
        base = np.maximum(clipped, _POWER_GRAD_FLOOR)
        local = exponent * np.power(base, exponent - 1.0)
        _accum(a, g * local * inside)

    return _from_op(data, (a,), backward)


# -- reductions -----------------------------------------------------------


def sum_all(a: Tensor) -> Tensor:
    data = a.data.sum()

    def backward(g):
        _accum(a, np.broadcast_to(g, a.data.shape).astype(a.data.dtype, copy=False))

    return _from_op(np.asarray(data, dtype=a.data.dtype), (a,), backward)


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    data = a.data.mean()

    def backward(g):
        _accum(a, np.broadcast_to(g / n, a.data.shape).astype(a.data.dtype, copy=False))

    return _from_op(np.asarray(data, dtype=a.data.dtype), (a,), backward)
