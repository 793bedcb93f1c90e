"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every differentiable operation builds a new :class:`Tensor` that remembers its
parents and a closure mapping the output gradient to parent gradients. The
tape is the set of nodes reachable from the loss; :func:`backward` orders it
topologically and runs the closures once, in reverse.
"""

import numpy as np

from ..exceptions import GradientStateError, NumericalError, ShapeError


def _check_finite(arr, op):
    if not np.isfinite(arr).all():
        raise NumericalError(f"non-finite value produced by {op}")


class Tensor:
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None
        self._op = "leaf"
        self._consumed = False

    @classmethod
    def _make(cls, data, parents, backward, op):
        """Wrap an op result without copying ``data``."""
        _check_finite(data, op)
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out._op = op
        out._consumed = False
        tracked = tuple(p for p in parents if p.requires_grad)
        out.requires_grad = bool(tracked)
        out._parents = tracked
        out._backward = backward if tracked else None
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    def item(self):
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self):
        return self.data.copy()

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    # arithmetic ------------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(as_tensor(other)))

    def __rsub__(self, other):
        return add(as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return neg(self)

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("division by a tensor is not supported")
        return mul(self, 1.0 / float(other))

    def sum(self):
        return tensor_sum(self)

    def mean(self):
        return tensor_sum(self) / self.data.size

    def reshape(self, *shape):
        return reshape(self, *shape)

    def abs(self):
        return tensor_abs(self)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def _backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor._make(a.data + b.data, (a, b), _pair(a, b, _backward), "add")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def _backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor._make(a.data * b.data, (a, b), _pair(a, b, _backward), "mul")


def _pair(a, b, fn):
    """Adapt a two-input gradient function to the tracked-parents convention."""
    if a.requires_grad and b.requires_grad:
        return fn
    if a.requires_grad:
        return lambda g: (fn(g)[0],)
    return lambda g: (fn(g)[1],)


def neg(a):
    return Tensor._make(-a.data, (a,), lambda g: (-g,), "neg")


def tensor_sum(a):
    shape = a.shape
    return Tensor._make(
        np.array(a.data.sum()), (a,), lambda g: (np.broadcast_to(g, shape).copy(),), "sum"
    )


def tensor_abs(a):
    sign = np.sign(a.data)
    return Tensor._make(np.abs(a.data), (a,), lambda g: (g * sign,), "abs")


def reshape(a, *shape):
    if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
        shape = tuple(shape[0])
    original = a.shape
    return Tensor._make(
        a.data.reshape(shape), (a,), lambda g: (g.reshape(original),), "reshape"
    )


class Tape:
    """Nodes reachable from a root, in topological order (parents first)."""

    def __init__(self, root):
        self.root = root
        self.nodes = self._order(root)

    @staticmethod
    def _order(root):
        order, seen = [], set()
        stack = [(root, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in seen:
                    stack.append((parent, False))
        return order

    def __len__(self):
        return len(self.nodes)


def backward(loss):
    """Accumulate d(loss)/d(t) into ``t.grad`` for every tracked tensor.

    The tape is released afterwards; calling this again on the same graph
    raises :class:`GradientStateError`.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._consumed:
        raise GradientStateError("backward already ran on this graph; rebuild it with a new forward pass")
    if not loss.requires_grad:
        raise GradientStateError("loss is not connected to any tensor that requires grad")

    tape = Tape(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        node.grad = g if node.grad is None else node.grad + g
        if node._backward is None:
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg

    for node in tape.nodes:
        if node._backward is not None or node is loss:
            node._consumed = True
        node._backward = None
        node._parents = ()
