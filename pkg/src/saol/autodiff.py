"""Reverse-mode automatic differentiation over dense numpy arrays.

The computation graph is implicit: every operation returns a new ``Tensor``
that remembers its inputs and a closure pushing adjoints back to them, and
``Tensor.backward`` replays those closures in reverse topological order.
Only float32/float64 tensors are supported; 64-bit is the default so tests
can check gradients against central differences at tight tolerances, 32-bit
is meant for training loops.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "concat",
    "matmul",
    "conv2d",
    "bilinear_resize",
    "global_avg_pool",
    "no_grad",
]

_FLOAT_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block.

    Results computed under ``no_grad`` carry ``requires_grad=False`` and hold
    no parent references, so large inference loops stay at flat memory; each
    op's backward closure otherwise forms a reference cycle with its output
    that only the cyclic collector can reclaim.
    """
    global _grad_enabled
    previous = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = previous


def _as_array(value, dtype=None) -> np.ndarray:
    arr = np.asarray(value)
    if arr.dtype not in _FLOAT_DTYPES:
        arr = arr.astype(np.float64 if dtype is None else dtype)
    if dtype is not None and arr.dtype != np.dtype(dtype):
        arr = arr.astype(dtype)
    return arr


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` over the axes numpy broadcasting introduced for ``shape``."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _norm_axes(axes, ndim: int) -> tuple[int, ...]:
    if axes is None:
        return tuple(range(ndim))
    if isinstance(axes, int):
        axes = (axes,)
    out = tuple(sorted(a % ndim for a in axes))
    if len(set(out)) != len(out):
        raise ValueError(f"duplicate axes {axes!r}")
    return out


class Tensor:
    """N-d float tensor that records operations for reverse-mode autodiff.

    ``data`` is the value, ``grad`` the accumulated adjoint (``None`` until
    ``backward`` reaches this node). Repeated ``backward`` calls accumulate
    into ``grad`` additively; call ``zero_grad`` between uses.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward_fn = None

    # ---- basic introspection ------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self) -> np.dtype:
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    # ---- graph plumbing ------------------------------------------------------

    @staticmethod
    def _result(data: np.ndarray, parents: tuple["Tensor", ...]) -> "Tensor":
        out = Tensor.__new__(Tensor)
        out.data = data
        out.requires_grad = _grad_enabled and any(p.requires_grad for p in parents)
        out.grad = None
        out._parents = parents if out.requires_grad else ()
        out._backward_fn = None
        return out

    def _accumulate(self, grad: np.ndarray) -> None:
        # Never mutates in place, so storing views (e.g. broadcast results) is safe.
        self.grad = grad if self.grad is None else self.grad + grad

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        """Same values (shared storage), no graph history, no gradient flow."""
        return Tensor(self.data)

    def backward(self, seed: np.ndarray | None = None) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``.

        Without ``seed`` the tensor must be scalar-sized and the seed is 1.
        """
        if not self.requires_grad:
            raise ValueError("backward() on a tensor that does not require grad")
        if seed is None:
            if self.size != 1:
                raise ValueError("backward() without a seed needs a scalar output")
            seed = np.ones_like(self.data)
        else:
            seed = np.asarray(seed, dtype=self.dtype)
            if seed.shape != self.shape:
                raise ValueError(f"seed shape {seed.shape} != output shape {self.shape}")

        # Post-order DFS, iterative so deep graphs cannot hit the recursion limit.
        order: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                order.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if id(parent) not in visited and parent.requires_grad:
                    stack.append((parent, False))

        self._accumulate(seed)
        for node in reversed(order):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn()
                # Interior adjoints are transient; only source tensors (no
                # recorded op) retain .grad, so repeated backward calls
                # accumulate exactly one contribution each.
                node.grad = None

    # ---- arithmetic ----------------------------------------------------------

    def __add__(self, other) -> "Tensor":
        other = other if isinstance(other, Tensor) else Tensor(_as_array(other, self.dtype))
        out = Tensor._result(self.data + other.data, (self, other))
        if out.requires_grad:
            a, b = self, other

            def _backward():
                if a.requires_grad:
                    a._accumulate(_unbroadcast(out.grad, a.shape))
                if b.requires_grad:
                    b._accumulate(_unbroadcast(out.grad, b.shape))

            out._backward_fn = _backward
        return out

    __radd__ = __add__

    def __mul__(self, other) -> "Tensor":
        other = other if isinstance(other, Tensor) else Tensor(_as_array(other, self.dtype))
        out = Tensor._result(self.data * other.data, (self, other))
        if out.requires_grad:
            a, b = self, other

            def _backward():
                if a.requires_grad:
                    a._accumulate(_unbroadcast(out.grad * b.data, a.shape))
                if b.requires_grad:
                    b._accumulate(_unbroadcast(out.grad * a.data, b.shape))

            out._backward_fn = _backward
        return out

    __rmul__ = __mul__

    def __neg__(self) -> "Tensor":
        return self * -1.0

    def __sub__(self, other) -> "Tensor":
        return self + (-other if isinstance(other, Tensor) else Tensor(-_as_array(other, self.dtype)))

    def __rsub__(self, other) -> "Tensor":
        return (-self) + other

    def __truediv__(self, scalar) -> "Tensor":
        if isinstance(scalar, Tensor):
            raise TypeError("tensor/tensor division is not part of the op set")
        return self * (1.0 / float(scalar))

    def __matmul__(self, other) -> "Tensor":
        return matmul(self, other)

    # ---- elementwise nonlinearities -------------------------------------------

    def relu(self) -> "Tensor":
        out = Tensor._result(np.maximum(self.data, 0), (self,))
        if out.requires_grad:
            src = self

            def _backward():
                src._accumulate(out.grad * (src.data > 0))

            out._backward_fn = _backward
        return out

    def sigmoid(self) -> "Tensor":
        # Clipping keeps exp() in range; sigmoid is saturated flat well before +/-60.
        z = np.clip(self.data, -60.0, 60.0)
        y = 1.0 / (1.0 + np.exp(-z))
        out = Tensor._result(y.astype(self.dtype, copy=False), (self,))
        if out.requires_grad:
            src = self

            def _backward():
                src._accumulate(out.grad * y * (1.0 - y))

            out._backward_fn = _backward
        return out

    def log(self) -> "Tensor":
        if np.any(self.data <= 0):
            raise ValueError("log requires strictly positive inputs")
        out = Tensor._result(np.log(self.data), (self,))
        if out.requires_grad:
            src = self

            def _backward():
                src._accumulate(out.grad / src.data)

            out._backward_fn = _backward
        return out

    def exp(self) -> "Tensor":
        out = Tensor._result(np.exp(self.data), (self,))
        if out.requires_grad:
            src = self

            def _backward():
                src._accumulate(out.grad * out.data)

            out._backward_fn = _backward
        return out

    # ---- reductions ------------------------------------------------------------

    def sum(self, axes=None, keepdims: bool = False) -> "Tensor":
        axes_n = _norm_axes(axes, self.ndim)
        out = Tensor._result(self.data.sum(axis=axes_n, keepdims=keepdims), (self,))
        if out.requires_grad:
            src = self

            def _backward():
                g = out.grad
                if not keepdims:
                    g = np.expand_dims(g, axes_n)
                src._accumulate(np.broadcast_to(g, src.shape).astype(src.dtype, copy=False))

            out._backward_fn = _backward
        return out

    def mean(self, axes=None, keepdims: bool = False) -> "Tensor":
        axes_n = _norm_axes(axes, self.ndim)
        count = int(np.prod([self.shape[a] for a in axes_n])) if axes_n else 1
        out = Tensor._result(self.data.mean(axis=axes_n, keepdims=keepdims), (self,))
        if out.requires_grad:
            src = self

            def _backward():
                g = out.grad / count
                if not keepdims:
                    g = np.expand_dims(g, axes_n)
                src._accumulate(np.broadcast_to(g, src.shape).astype(src.dtype, copy=False))

            out._backward_fn = _backward
        return out

    def softmax(self, axes) -> "Tensor":
        """Softmax jointly over ``axes`` (max-shifted, so large logits are safe).

        The result is nonnegative and sums to 1 over the named axes.
        """
        axes_n = _norm_axes(axes, self.ndim)
        shifted = self.data - self.data.max(axis=axes_n, keepdims=True)
        e = np.exp(shifted)
        y = e / e.sum(axis=axes_n, keepdims=True)
        out = Tensor._result(y, (self,))
        if out.requires_grad:
            src = self

            def _backward():
                g = out.grad
                inner = (g * y).sum(axis=axes_n, keepdims=True)
                src._accumulate(y * (g - inner))

            out._backward_fn = _backward
        return out

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = Tensor._result(self.data.reshape(shape), (self,))
        if out.requires_grad:
            src = self

            def _backward():
                src._accumulate(out.grad.reshape(src.shape))

            out._backward_fn = _backward
        return out


# ---- multi-input and structured operations -------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """2-d matrix product [m,k] @ [k,n] -> [m,n]."""
    if a.ndim != 2 or b.ndim != 2:
        raise ValueError(f"matmul expects 2-d operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"inner dimensions disagree: {a.shape} @ {b.shape}")
    out = Tensor._result(a.data @ b.data, (a, b))
    if out.requires_grad:

        def _backward():
            if a.requires_grad:
                a._accumulate(out.grad @ b.data.T)
            if b.requires_grad:
                b._accumulate(a.data.T @ out.grad)

        out._backward_fn = _backward
    return out


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    """Concatenate along ``axis``; gradients split back to each input."""
    ts = list(tensors)
    if not ts:
        raise ValueError("concat needs at least one tensor")
    axis = axis % ts[0].ndim
    out = Tensor._result(np.concatenate([t.data for t in ts], axis=axis), tuple(ts))
    if out.requires_grad:
        sizes = [t.shape[axis] for t in ts]
        offsets = np.cumsum([0] + sizes)

        def _backward():
            for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
                if t.requires_grad:
                    idx = [slice(None)] * out.ndim
                    idx[axis] = slice(int(lo), int(hi))
                    t._accumulate(out.grad[tuple(idx)])

        out._backward_fn = _backward
    return out


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    *,
    stride: int = 1,
    padding: int = 0,
) -> Tensor:
    """Cross-correlation of NCHW ``x`` with OIHW ``weight`` plus optional bias.

    Zero padding on both spatial borders, a single integer stride for both
    axes. Output spatial size is ``(H + 2p - kh) // s + 1`` and must be >= 1.
    Implemented as a windowed view contracted by BLAS; the adjoint scatters
    window gradients back with a kernel-offset loop.
    """
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError(f"conv2d expects 4-d x and weight, got {x.shape}, {weight.shape}")
    n, c, h, w = x.shape
    f, cw, kh, kw = weight.shape
    if cw != c:
        raise ValueError(f"channel mismatch: input has {c}, weight expects {cw}")
    if bias is not None and bias.shape != (f,):
        raise ValueError(f"bias shape {bias.shape} != ({f},)")
    if stride < 1 or padding < 0:
        raise ValueError("stride must be >= 1 and padding >= 0")
    hp, wp = h + 2 * padding, w + 2 * padding
    if kh > hp or kw > wp:
        raise ValueError(f"kernel {kh}x{kw} exceeds padded input {hp}x{wp}")
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    # windows[n, c, i, j, a, b] = xp[n, c, i*s + a, j*s + b]
    windows = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))[
        :, :, ::stride, ::stride
    ]
    cols = windows.transpose(0, 2, 3, 1, 4, 5).reshape(n * oh * ow, c * kh * kw)
    data = (cols @ weight.data.reshape(f, -1).T).reshape(n, oh, ow, f).transpose(0, 3, 1, 2)
    if bias is not None:
        data = data + bias.data[None, :, None, None]

    parents = (x, weight) if bias is None else (x, weight, bias)
    out = Tensor._result(np.ascontiguousarray(data), parents)
    if out.requires_grad:

        def _backward():
            g = out.grad  # [n, f, oh, ow]
            if bias is not None and bias.requires_grad:
                bias._accumulate(g.sum(axis=(0, 2, 3)))
            gmat = g.transpose(0, 2, 3, 1).reshape(n * oh * ow, f)
            if weight.requires_grad:
                gw = gmat.T @ cols  # [f, c*kh*kw]
                weight._accumulate(gw.reshape(weight.shape))
            if x.requires_grad:
                gcols = gmat @ weight.data.reshape(f, -1)  # [n*oh*ow, c*kh*kw]
                gwin = gcols.reshape(n, oh, ow, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
                gpad = np.zeros((n, c, hp, wp), dtype=x.dtype)
                for a in range(kh):
                    for b in range(kw):
                        gpad[:, :, a : a + stride * oh : stride, b : b + stride * ow : stride] += gwin[
                            :, :, a, b
                        ]
                gx = gpad[:, :, padding : padding + h, padding : padding + w] if padding else gpad
                x._accumulate(np.ascontiguousarray(gx))

        out._backward_fn = _backward
    return out


def bilinear_resize(x: Tensor, size: tuple[int, int]) -> Tensor:
    """Resize NCHW ``x`` to spatial ``size`` with align-corners-false bilinear.

    Source coordinates are ``(dst + 0.5) * in/out - 0.5`` with edge clamping.
    Computed in lerp form, so constant inputs come out exactly constant, and
    an identity size returns the input tensor unchanged (bitwise).
    """
    if x.ndim != 4:
        raise ValueError(f"bilinear_resize expects NCHW input, got shape {x.shape}")
    oh, ow = int(size[0]), int(size[1])
    if oh < 1 or ow < 1:
        raise ValueError(f"target size must be positive, got {(oh, ow)}")
    n, c, h, w = x.shape
    if (oh, ow) == (h, w):
        return x

    def _axis(out_n: int, in_n: int):
        src = (np.arange(out_n, dtype=np.float64) + 0.5) * (in_n / out_n) - 0.5
        lo = np.floor(src)
        t = src - lo
        i0 = np.clip(lo, 0, in_n - 1).astype(np.intp)
        i1 = np.clip(lo + 1, 0, in_n - 1).astype(np.intp)
        return i0, i1, t

    y0, y1, ty = _axis(oh, h)
    x0, x1, tx = _axis(ow, w)
    ty_col = ty.astype(x.dtype)[:, None]
    tx_row = tx.astype(x.dtype)[None, :]

    yi0, yi1 = y0[:, None], y1[:, None]
    xi0, xi1 = x0[None, :], x1[None, :]
    v00 = x.data[:, :, yi0, xi0]
    v01 = x.data[:, :, yi0, xi1]
    v10 = x.data[:, :, yi1, xi0]
    v11 = x.data[:, :, yi1, xi1]
    top = v00 + tx_row * (v01 - v00)
    bot = v10 + tx_row * (v11 - v10)
    out = Tensor._result(top + ty_col * (bot - top), (x,))

    if out.requires_grad:
        w00 = ((1.0 - ty)[:, None] * (1.0 - tx)[None, :]).astype(x.dtype)
        w01 = ((1.0 - ty)[:, None] * tx[None, :]).astype(x.dtype)
        w10 = (ty[:, None] * (1.0 - tx)[None, :]).astype(x.dtype)
        w11 = (ty[:, None] * tx[None, :]).astype(x.dtype)

        def _backward():
            g = out.grad.reshape(n * c, oh, ow)
            gx = np.zeros((n * c, h, w), dtype=x.dtype)
            lead = np.arange(n * c)[:, None, None]
            np.add.at(gx, (lead, yi0[None], xi0[None]), w00 * g)
            np.add.at(gx, (lead, yi0[None], xi1[None]), w01 * g)
            np.add.at(gx, (lead, yi1[None], xi0[None]), w10 * g)
            np.add.at(gx, (lead, yi1[None], xi1[None]), w11 * g)
            x._accumulate(gx.reshape(n, c, h, w))

        out._backward_fn = _backward
    return out


def global_avg_pool(x: Tensor) -> Tensor:
    """Spatial mean of an NCHW tensor -> [N, C]."""
    if x.ndim != 4:
        raise ValueError(f"global_avg_pool expects NCHW input, got shape {x.shape}")
    return x.mean(axes=(2, 3))
