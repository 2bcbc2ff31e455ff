"""Dense float32 tensors with reverse-mode automatic differentiation.

Eager tape: every operation records a backward closure on the output node.
``backward()`` from a scalar root computes gradients for the whole reachable
graph and *adds* them into ``.grad`` buffers, so repeated backward passes
accumulate. Reductions (sum/mean) accumulate in float64 before casting back
to float32; everything else stays in float32.
"""

import numpy as np

from .. import _kernels
from ..errors import ShapeError


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data, dtype=np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward_fn = None

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
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def item(self):
        return float(self.data)

    def detach(self):
        out = Tensor(self.data)
        return out

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Backpropagate from a scalar root; accumulates into .grad buffers."""
        if self.data.size != 1:
            raise ShapeError("backward", self.data.shape, detail="root must be scalar")

        topo = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited:
                    stack.append((parent, False))

        grads = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            if node._backward_fn is None:
                continue
            for parent, pg in zip(node._parents, node._backward_fn(g)):
                if pg is None or not parent.requires_grad:
                    continue
                pid = id(parent)
                if pid in grads:
                    grads[pid] = grads[pid] + pg
                else:
                    grads[pid] = pg
        return float(self.data)

    # operator sugar -------------------------------------------------

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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)


def tensor(data, requires_grad=False):
    return data if isinstance(data, Tensor) else Tensor(data, requires_grad)


def _node(data, parents, backward_fn):
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward_fn = backward_fn
    return out


def _unbroadcast(g, shape):
    """Sum gradient g down to the given operand shape after broadcasting."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.astype(np.float32, copy=False)


def _broadcast_check(op, a, b):
    try:
        return np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError:
        raise ShapeError(op, a.data.shape, b.data.shape) from None


# elementwise binary ops ----------------------------------------------


def add(a, b):
    a, b = tensor(a), tensor(b)
    _broadcast_check("add", a, b)
    return _node(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)))


def sub(a, b):
    a, b = tensor(a), tensor(b)
    _broadcast_check("sub", a, b)
    return _node(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)))


def mul(a, b):
    a, b = tensor(a), tensor(b)
    _broadcast_check("mul", a, b)
    return _node(a.data * b.data, (a, b), lambda g: (_unbroadcast(g * b.data, a.data.shape), _unbroadcast(g * a.data, b.data.shape)))


def div(a, b):
    a, b = tensor(a), tensor(b)
    _broadcast_check("div", a, b)
    return _node(
        a.data / b.data,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.data.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape),
        ),
    )


def matmul(a, b):
    a, b = tensor(a), tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError("matmul", a.data.shape, b.data.shape)
    return _node(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


# elementwise unary ops ------------------------------------------------


def relu(x):
    x = tensor(x)
    mask = x.data > 0
    return _node(np.where(mask, x.data, np.float32(0.0)), (x,), lambda g: (np.where(mask, g, np.float32(0.0)),))


def tanh(x):
    x = tensor(x)
    y = np.tanh(x.data)
    return _node(y, (x,), lambda g: (g * (1.0 - y * y),))


def sin(x):
    x = tensor(x)
    return _node(np.sin(x.data), (x,), lambda g: (g * np.cos(x.data),))


def cos(x):
    x = tensor(x)
    return _node(np.cos(x.data), (x,), lambda g: (-g * np.sin(x.data),))


def exp(x):
    x = tensor(x)
    y = np.exp(x.data)
    return _node(y, (x,), lambda g: (g * y,))


def log(x):
    x = tensor(x)
    return _node(np.log(x.data), (x,), lambda g: (g / x.data,))


def abs_(x):
    x = tensor(x)
    return _node(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data).astype(np.float32),))


def square(x):
    x = tensor(x)
    return _node(x.data * x.data, (x,), lambda g: (g * (2.0 * x.data),))


def softplus(x):
    x = tensor(x)
    y = np.logaddexp(np.float32(0.0), x.data)
    sig = 1.0 / (1.0 + np.exp(-x.data))
    return _node(y, (x,), lambda g: (g * sig,))


def sigmoid(x):
    x = tensor(x)
    y = 1.0 / (1.0 + np.exp(-x.data))
    return _node(y, (x,), lambda g: (g * y * (1.0 - y),))


# reductions ------------------------------------------------------------


def _reduce_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum_(x, axis=None, keepdims=False):
    x = tensor(x)
    axes = _reduce_axes(axis, x.ndim)
    out = np.sum(x.data, axis=axes, keepdims=keepdims, dtype=np.float64).astype(np.float32)

    def backward(g):
        gg = g
        if not keepdims and x.ndim:
            gg = np.expand_dims(g, axes) if axes else g
        return (np.broadcast_to(gg, x.data.shape).astype(np.float32),)

    return _node(out, (x,), backward)


def mean(x, axis=None, keepdims=False):
    x = tensor(x)
    axes = _reduce_axes(axis, x.ndim)
    count = 1
    for a in axes:
        count *= x.data.shape[a]
    out = np.mean(x.data, axis=axes, keepdims=keepdims, dtype=np.float64).astype(np.float32)
    scale = np.float32(1.0 / count)

    def backward(g):
        gg = g
        if not keepdims and x.ndim:
            gg = np.expand_dims(g, axes) if axes else g
        return (np.broadcast_to(gg * scale, x.data.shape).astype(np.float32),)

    return _node(out, (x,), backward)


# shape ops --------------------------------------------------------------


def reshape(x, shape):
    x = tensor(x)
    old = x.data.shape
    return _node(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def getitem(x, key):
    x = tensor(x)
    out = x.data[key]

    def backward(g):
        dx = np.zeros_like(x.data)
        dx[key] = g
        return (dx,)

    return _node(out.copy(), (x,), backward)


def concat(tensors, axis=0):
    ts = [tensor(t) for t in tensors]
    datas = [t.data for t in ts]
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        slicer = [slice(None)] * g.ndim
        outs = []
        for i in range(len(ts)):
            slicer[axis] = slice(offsets[i], offsets[i + 1])
            outs.append(g[tuple(slicer)])
        return tuple(outs)

    return _node(np.concatenate(datas, axis=axis), ts, backward)


def upsample_nearest2(x):
    """Nearest-neighbour 2x upsampling of an (N, C, H, W) tensor."""
    x = tensor(x)
    if x.ndim != 4:
        raise ShapeError("upsample_nearest2", x.data.shape, detail="expected NCHW")
    n, c, h, w = x.data.shape
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)

    def backward(g):
        return (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5), dtype=np.float64).astype(np.float32),)

    return _node(out, (x,), backward)


def conv2d(x, w, stride=1, padding=0):
    """2-D convolution (cross-correlation) of NCHW input with FCKK kernels."""
    x, w = tensor(x), tensor(w)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError("conv2d", x.data.shape, w.data.shape, detail="expected NCHW input and FCKK kernel")
    if x.data.shape[1] != w.data.shape[1]:
        raise ShapeError("conv2d", x.data.shape, w.data.shape, detail="channel mismatch")
    sh, sw = (stride, stride) if isinstance(stride, int) else stride
    ph, pw = (padding, padding) if isinstance(padding, int) else padding
    n, c, h, iw = x.data.shape
    f, _, kh, kw = w.data.shape
    ho = (h + 2 * ph - kh) // sh + 1
    wo = (iw + 2 * pw - kw) // sw + 1
    if ho <= 0 or wo <= 0:
        raise ShapeError("conv2d", x.data.shape, w.data.shape, detail="kernel larger than padded input")

    xd = np.ascontiguousarray(x.data)
    wd = np.ascontiguousarray(w.data)
    out = _kernels.conv2d_forward(xd, wd, sh, sw, ph, pw, ho, wo)

    def backward(g):
        dx, dw = _kernels.conv2d_backward(xd, wd, np.ascontiguousarray(g), sh, sw, ph, pw)
        return (dx, dw)

    return _node(out, (x, w), backward)
