"""Minimal reverse-mode autodiff on top of numpy.

A Tensor wraps an ndarray and remembers how it was produced; calling
``backward()`` on a scalar walks the tape in reverse topological order and
accumulates gradients into every tensor created with ``requires_grad=True``.
Only the operations the inpainting model actually needs are implemented:
elementwise arithmetic, batched matmul, softmax with -inf masking, strided
2-d/3-d convolution, nearest-neighbour upsampling, shape surgery, and the
patch flatten/unflatten pair used by the attention layers.

Arrays are float32 by default; ``set_default_dtype(np.float64)`` switches
new tensors to 64-bit for gradient checking and bit-reproducible runs.
"""

import warnings
from contextlib import contextmanager

import numpy as np

from .errors import DimensionError, ParameterError

_default_dtype = np.float32


def set_default_dtype(dtype):
    """Set the dtype used for new tensors built from non-float data."""
    global _default_dtype
    dtype = np.dtype(dtype)
    if dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
        raise ParameterError(f"default dtype must be float32 or float64, got {dtype}")
    _default_dtype = dtype.type


def get_default_dtype():
    return _default_dtype


@contextmanager
def using_dtype(dtype):
    """Temporarily switch the default dtype (used by tests and gradcheck)."""
    prev = _default_dtype
    set_default_dtype(dtype)
    try:
        yield
    finally:
        set_default_dtype(prev)


def _as_array(data, dtype=None):
    arr = np.asarray(data)
    if dtype is not None:
        arr = arr.astype(dtype, copy=False)
    elif not np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(_default_dtype)
    return arr


def _unbroadcast(grad, shape):
    # Sum a broadcast gradient back down to the original operand shape.
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward_fn")

    def __init__(self, data, requires_grad=False, dtype=None):
        self.data = _as_array(data, dtype)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward_fn = None

    # -- bookkeeping ------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        return self.data.item()

    def zero_grad(self):
        self.grad = None

    def detach(self):
        """A view of the same data with the tape cut."""
        return Tensor(self.data, requires_grad=False)

    def __repr__(self):
        grad_flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype.name}{grad_flag})"

    def _accumulate(self, grad):
        if not self.requires_grad:
            return
        grad = _unbroadcast(grad, self.data.shape)
        grad = np.asarray(grad, dtype=self.data.dtype)
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    def backward(self):
        """Reverse-mode sweep from a scalar.

        Gradients accumulate into ``.grad`` of every reachable tensor with
        ``requires_grad=True``; call ``zero_grad`` between steps.
        """
        if self.data.size != 1:
            raise ParameterError(
                f"backward() needs a scalar, got shape {self.data.shape}"
            )
        if not self.requires_grad:
            raise ParameterError(
                "backward() called on a tensor with no graph attached"
            )
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, emitted = stack.pop()
            if emitted:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent in node._parents:
                if parent.requires_grad and id(parent) not in seen:
                    stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward_fn is not None:
                node._backward_fn()

    # -- operator sugar ---------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return self * -1.0

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def abs(self):
        return tabs(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes)


def as_tensor(value, dtype=None):
    if isinstance(value, Tensor):
        return value
    return Tensor(value, dtype=dtype)


def _from_op(data, parents, backward_fn):
    parents = tuple(p for p in parents if isinstance(p, Tensor))
    if not any(p.requires_grad for p in parents):
        return Tensor(data)
    out = Tensor(data, requires_grad=True)
    out._parents = parents
    out._backward_fn = backward_fn
    return out


def zeros(shape, requires_grad=False, dtype=None):
    return Tensor(np.zeros(shape, dtype=dtype or _default_dtype), requires_grad)


def ones(shape, requires_grad=False, dtype=None):
    return Tensor(np.ones(shape, dtype=dtype or _default_dtype), requires_grad)


def randn(shape, rng, scale=1.0, requires_grad=False, dtype=None):
    """Gaussian init; samples are drawn in float64 then cast so the same
    seed gives the same weights (up to rounding) in both dtype modes."""
    data = rng.standard_normal(shape) * scale
    return Tensor(data.astype(dtype or _default_dtype), requires_grad)


# -- elementwise ----------------------------------------------------------


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = _from_op(a.data + b.data, (a, b), None)

    def backward():
        a._accumulate(out.grad)
        b._accumulate(out.grad)

    out._backward_fn = backward if out.requires_grad else None
    return out


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = _from_op(a.data - b.data, (a, b), None)

    def backward():
        a._accumulate(out.grad)
        b._accumulate(-out.grad)

    out._backward_fn = backward if out.requires_grad else None
    return out


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = _from_op(a.data * b.data, (a, b), None)

    def backward():
        a._accumulate(out.grad * b.data)
        b._accumulate(out.grad * a.data)

    out._backward_fn = backward if out.requires_grad else None
    return out


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if np.any(b.data == 0):
        raise ParameterError("division by zero; guard the denominator explicitly")
    out = _from_op(a.data / b.data, (a, b), None)

    def backward():
        a._accumulate(out.grad / b.data)
        b._accumulate(-out.grad * a.data / (b.data * b.data))

    out._backward_fn = backward if out.requires_grad else None
    return out


def scale(a, c):
    """Multiply by a python scalar (kept separate so call sites read well)."""
    return mul(a, float(c))


def leaky_relu(x, slope=0.2):
    x = as_tensor(x)
    pos = x.data > 0
    out = _from_op(np.where(pos, x.data, x.data * slope), (x,), None)

    def backward():
        x._accumulate(np.where(pos, out.grad, out.grad * slope))

    out._backward_fn = backward if out.requires_grad else None
    return out


def relu(x):
    return leaky_relu(x, slope=0.0)


def tanh(x):
    x = as_tensor(x)
    y = np.tanh(x.data)
    out = _from_op(y, (x,), None)

    def backward():
        x._accumulate(out.grad * (1.0 - y * y))

    out._backward_fn = backward if out.requires_grad else None
    return out


def tabs(x):
    x = as_tensor(x)
    out = _from_op(np.abs(x.data), (x,), None)

    def backward():
        x._accumulate(out.grad * np.sign(x.data))

    out._backward_fn = backward if out.requires_grad else None
    return out


def tsum(x, axis=None, keepdims=False):
    x = as_tensor(x)
    out = _from_op(x.data.sum(axis=axis, keepdims=keepdims), (x,), None)

    def backward():
        g = out.grad
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        x._accumulate(np.broadcast_to(g, x.data.shape))

    out._backward_fn = backward if out.requires_grad else None
    return out


def tmean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    if axis is None:
        count = x.data.size
    else:
        count = x.data.shape[axis]
    return tsum(x, axis=axis, keepdims=keepdims) * (1.0 / count)


# -- linear algebra -------------------------------------------------------


def matmul(a, b):
    """Batched matrix product over the last two axes, broadcasting the rest."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(
            f"matmul needs rank >= 2 on both sides, got {a.ndim} and {b.ndim}"
        )
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(
            f"matmul inner axes disagree: {a.shape[-1]} (last axis of left) "
            f"vs {b.shape[-2]} (second-to-last of right)"
        )
    out = _from_op(a.data @ b.data, (a, b), None)

    def backward():
        a._accumulate(out.grad @ np.swapaxes(b.data, -1, -2))
        b._accumulate(np.swapaxes(a.data, -1, -2) @ out.grad)

    out._backward_fn = backward if out.requires_grad else None
    return out


def softmax(x, axis=-1):
    """Softmax along ``axis`` with additive -inf masking.

    Entries equal to -inf get weight exactly 0.  A slice that is -inf
    everywhere comes back as exact zeros rather than NaN, so attention over
    an empty key set contributes nothing downstream.  Other entries must be
    finite.
    """
    x = as_tensor(x)
    if not -x.ndim <= axis < x.ndim:
        raise ParameterError(f"softmax axis {axis} out of range for rank {x.ndim}")
    m = np.max(x.data, axis=axis, keepdims=True)
    m_safe = np.where(np.isneginf(m), 0.0, m)
    e = np.exp(x.data - m_safe)
    e[np.isneginf(x.data)] = 0.0
    denom = e.sum(axis=axis, keepdims=True)
    y = e / np.where(denom == 0.0, 1.0, denom)
    out = _from_op(y, (x,), None)

    def backward():
        # dx = y * (g - sum(g * y)); rows that collapsed to zero stay zero.
        inner = (out.grad * y).sum(axis=axis, keepdims=True)
        x._accumulate(y * (out.grad - inner))

    out._backward_fn = backward if out.requires_grad else None
    return out


# -- shape surgery --------------------------------------------------------


def reshape(x, shape):
    x = as_tensor(x)
    out = _from_op(x.data.reshape(shape), (x,), None)

    def backward():
        x._accumulate(out.grad.reshape(x.data.shape))

    out._backward_fn = backward if out.requires_grad else None
    return out


def transpose(x, axes):
    x = as_tensor(x)
    axes = tuple(axes)
    if sorted(axes) != list(range(x.ndim)):
        raise DimensionError(f"transpose axes {axes} are not a permutation of rank {x.ndim}")
    inv = tuple(np.argsort(axes))
    out = _from_op(x.data.transpose(axes), (x,), None)

    def backward():
        x._accumulate(out.grad.transpose(inv))

    out._backward_fn = backward if out.requires_grad else None
    return out


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ParameterError("concat needs at least one tensor")
    sizes = [t.data.shape[axis] for t in tensors]
    out = _from_op(np.concatenate([t.data for t in tensors], axis=axis), tensors, None)

    def backward():
        offsets = np.cumsum([0] + sizes)
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * out.grad.ndim
            idx[axis] = slice(lo, hi)
            t._accumulate(out.grad[tuple(idx)])

    out._backward_fn = backward if out.requires_grad else None
    return out


def narrow(x, axis, start, length):
    """Contiguous slice [start, start+length) along one axis."""
    x = as_tensor(x)
    if not (0 <= start and start + length <= x.shape[axis]):
        raise DimensionError(
            f"narrow range [{start}, {start + length}) exceeds axis {axis} "
            f"of length {x.shape[axis]}"
        )
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = _from_op(x.data[idx], (x,), None)

    def backward():
        g = np.zeros_like(x.data)
        g[idx] = out.grad
        x._accumulate(g)

    out._backward_fn = backward if out.requires_grad else None
    return out


# -- convolution ----------------------------------------------------------


def _pair(v):
    return (v, v) if isinstance(v, int) else tuple(v)


def conv2d(x, w, bias=None, stride=1, padding=0):
    """Strided 2-d cross-correlation.

    x: (N, C, H, W), w: (O, C, kh, kw), bias: (O,) or None.
    Computed as a sum of kh*kw shifted matrix products rather than one big
    im2col buffer, which keeps peak memory at input size.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4:
        raise DimensionError(f"conv2d input must be (N, C, H, W), got rank {x.ndim}")
    if w.ndim != 4:
        raise DimensionError(f"conv2d weight must be (O, C, kh, kw), got rank {w.ndim}")
    n, c, h, wdt = x.shape
    o, cw, kh, kw = w.shape
    if c != cw:
        raise DimensionError(
            f"conv2d channel mismatch: input axis 1 has {c}, weight axis 1 has {cw}"
        )
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    hp, wp = h + 2 * ph, wdt + 2 * pw
    if kh > hp or kw > wp:
        raise DimensionError(
            f"kernel ({kh}, {kw}) larger than padded input ({hp}, {wp})"
        )
    ho = (hp - kh) // sh + 1
    wo = (wp - kw) // sw + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    y = np.zeros((n, o, ho, wo), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            tile = xp[:, :, i : i + sh * ho : sh, j : j + sw * wo : sw]
            y += np.einsum("nchw,oc->nohw", tile, w.data[:, :, i, j], optimize=True)
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (o,):
            raise DimensionError(f"bias must have shape ({o},), got {bias.shape}")
        y += bias.data.reshape(1, o, 1, 1)
    parents = (x, w) if bias is None else (x, w, bias)
    out = _from_op(y, parents, None)

    def backward():
        g = out.grad
        if bias is not None:
            bias._accumulate(g.sum(axis=(0, 2, 3)))
        gxp = np.zeros_like(xp) if x.requires_grad else None
        gw = np.zeros_like(w.data) if w.requires_grad else None
        for i in range(kh):
            for j in range(kw):
                tile = xp[:, :, i : i + sh * ho : sh, j : j + sw * wo : sw]
                if gw is not None:
                    gw[:, :, i, j] = np.einsum("nohw,nchw->oc", g, tile, optimize=True)
                if gxp is not None:
                    gxp[:, :, i : i + sh * ho : sh, j : j + sw * wo : sw] += np.einsum(
                        "nohw,oc->nchw", g, w.data[:, :, i, j], optimize=True
                    )
        if gw is not None:
            w._accumulate(gw)
        if gxp is not None:
            x._accumulate(gxp[:, :, ph : ph + h, pw : pw + wdt])

    out._backward_fn = backward if out.requires_grad else None
    return out


def _triple(v):
    return (v, v, v) if isinstance(v, int) else tuple(v)


def conv3d(x, w, bias=None, stride=1, padding=0):
    """Strided 3-d cross-correlation over (T, H, W); same scheme as conv2d.

    x: (N, C, T, H, W), w: (O, C, kt, kh, kw).
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 5:
        raise DimensionError(f"conv3d input must be (N, C, T, H, W), got rank {x.ndim}")
    if w.ndim != 5:
        raise DimensionError(f"conv3d weight must be (O, C, kt, kh, kw), got rank {w.ndim}")
    n, c, t, h, wdt = x.shape
    o, cw, kt, kh, kw = w.shape
    if c != cw:
        raise DimensionError(
            f"conv3d channel mismatch: input axis 1 has {c}, weight axis 1 has {cw}"
        )
    st, sh, sw = _triple(stride)
    pt, ph, pw = _triple(padding)
    tp, hp, wp = t + 2 * pt, h + 2 * ph, wdt + 2 * pw
    if kt > tp or kh > hp or kw > wp:
        raise DimensionError(
            f"kernel ({kt}, {kh}, {kw}) larger than padded input ({tp}, {hp}, {wp})"
        )
    to = (tp - kt) // st + 1
    ho = (hp - kh) // sh + 1
    wo = (wp - kw) // sw + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (pt, pt), (ph, ph), (pw, pw)))
    y = np.zeros((n, o, to, ho, wo), dtype=x.dtype)
    for k in range(kt):
        for i in range(kh):
            for j in range(kw):
                tile = xp[
                    :, :, k : k + st * to : st, i : i + sh * ho : sh, j : j + sw * wo : sw
                ]
                y += np.einsum(
                    "ncthw,oc->nothw", tile, w.data[:, :, k, i, j], optimize=True
                )
    if bias is not None:
        bias = as_tensor(bias)
        if bias.shape != (o,):
            raise DimensionError(f"bias must have shape ({o},), got {bias.shape}")
        y += bias.data.reshape(1, o, 1, 1, 1)
    parents = (x, w) if bias is None else (x, w, bias)
    out = _from_op(y, parents, None)

    def backward():
        g = out.grad
        if bias is not None:
            bias._accumulate(g.sum(axis=(0, 2, 3, 4)))
        gxp = np.zeros_like(xp) if x.requires_grad else None
        gw = np.zeros_like(w.data) if w.requires_grad else None
        for k in range(kt):
            for i in range(kh):
                for j in range(kw):
                    sl = (
                        slice(None),
                        slice(None),
                        slice(k, k + st * to, st),
                        slice(i, i + sh * ho, sh),
                        slice(j, j + sw * wo, sw),
                    )
                    if gw is not None:
                        gw[:, :, k, i, j] = np.einsum(
                            "nothw,ncthw->oc", g, xp[sl], optimize=True
                        )
                    if gxp is not None:
                        gxp[sl] += np.einsum(
                            "nothw,oc->ncthw", g, w.data[:, :, k, i, j], optimize=True
                        )
        if gw is not None:
            w._accumulate(gw)
        if gxp is not None:
            x._accumulate(gxp[:, :, pt : pt + t, ph : ph + h, pw : pw + wdt])

    out._backward_fn = backward if out.requires_grad else None
    return out


def upsample_nearest(x, factor=2):
    """Nearest-neighbour upsampling of (N, C, H, W) by an integer factor."""
    x = as_tensor(x)
    if x.ndim != 4:
        raise DimensionError(f"upsample input must be (N, C, H, W), got rank {x.ndim}")
    if not isinstance(factor, int) or factor < 1:
        raise ParameterError(f"upsample factor must be a positive integer, got {factor}")
    y = x.data.repeat(factor, axis=2).repeat(factor, axis=3)
    out = _from_op(y, (x,), None)

    def backward():
        n, c, h, w = x.shape
        g = out.grad.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5))
        x._accumulate(g)

    out._backward_fn = backward if out.requires_grad else None
    return out


# -- patch flatten / unflatten --------------------------------------------


def patch_extract(x, r1, r2):
    """Cut (N, C, H, W) into non-overlapping r1 x r2 patches.

    Returns (N, (H/r1)*(W/r2), r1*r2*C); patches are ordered row-major over
    the patch grid and each row flattens as (r1, r2, C).  Exact inverse of
    ``patch_fold``.
    """
    x = as_tensor(x)
    if x.ndim != 4:
        raise DimensionError(f"patch_extract input must be (N, C, H, W), got rank {x.ndim}")
    n, c, h, w = x.shape
    if r1 <= 0 or r2 <= 0:
        raise ParameterError(f"patch size must be positive, got ({r1}, {r2})")
    if h % r1 != 0:
        raise DimensionError(f"height {h} not divisible by patch height {r1}")
    if w % r2 != 0:
        raise DimensionError(f"width {w} not divisible by patch width {r2}")
    nh, nw = h // r1, w // r2
    t = reshape(x, (n, c, nh, r1, nw, r2))
    t = transpose(t, (0, 2, 4, 3, 5, 1))
    return reshape(t, (n, nh * nw, r1 * r2 * c))


def patch_fold(p, r1, r2, height, width):
    """Inverse of ``patch_extract``: (N, P, r1*r2*C) back to (N, C, H, W)."""
    p = as_tensor(p)
    if p.ndim != 3:
        raise DimensionError(f"patch_fold input must be (N, P, D), got rank {p.ndim}")
    n, num_p, d = p.shape
    if height % r1 != 0 or width % r2 != 0:
        raise DimensionError(
            f"target ({height}, {width}) not divisible by patch ({r1}, {r2})"
        )
    nh, nw = height // r1, width // r2
    if num_p != nh * nw:
        raise DimensionError(
            f"patch count mismatch: axis 1 has {num_p}, target grid needs {nh * nw}"
        )
    if d % (r1 * r2) != 0:
        raise DimensionError(
            f"patch row length {d} not divisible by patch area {r1 * r2}"
        )
    c = d // (r1 * r2)
    t = reshape(p, (n, nh, nw, r1, r2, c))
    t = transpose(t, (0, 5, 1, 3, 2, 4))
    return reshape(t, (n, c, height, width))


# -- optimizer ------------------------------------------------------------


def adam_step(param, grad, state, lr=1e-4, beta1=0.0, beta2=0.99, eps=1e-8):
    """One adaptive-moment update, applied to ``param`` in place.

    ``state`` is a dict carrying ``step`` and the two moment arrays; pass an
    empty dict on the first call.  A non-finite gradient leaves parameter
    and state untouched and emits a warning, so one bad batch cannot poison
    the moments.
    """
    param = np.asarray(param)
    grad = np.asarray(grad)
    if param.shape != grad.shape:
        raise DimensionError(
            f"gradient shape {grad.shape} does not match parameter {param.shape}"
        )
    if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
        raise ParameterError(f"betas must lie in [0, 1), got ({beta1}, {beta2})")
    if not np.all(np.isfinite(grad)):
        warnings.warn("non-finite gradient, skipping update", RuntimeWarning)
        return state
    if not state:
        state["step"] = 0
        state["m"] = np.zeros_like(param)
        state["v"] = np.zeros_like(param)
    state["step"] += 1
    t = state["step"]
    state["m"] = beta1 * state["m"] + (1.0 - beta1) * grad
    state["v"] = beta2 * state["v"] + (1.0 - beta2) * grad * grad
    m_hat = state["m"] / (1.0 - beta1**t)
    v_hat = state["v"] / (1.0 - beta2**t)
    param -= (lr * m_hat / (np.sqrt(v_hat) + eps)).astype(param.dtype, copy=False)
    return state


class Adam:
    """Adam over a dict of named parameter tensors.

    Betas default to (0.0, 0.99): no momentum, fast-adapting second moment.
    If any parameter's gradient is non-finite the whole step is skipped, so
    the parameter set never gets a partial update.
    """

    def __init__(self, params, lr=1e-4, beta1=0.0, beta2=0.99, eps=1e-8):
        self.params = dict(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = {name: {} for name in self.params}

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def step(self):
        """Apply one update; returns False if it was skipped."""
        grads = {}
        for name, p in self.params.items():
            g = p.grad if p.grad is not None else np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                warnings.warn(
                    f"non-finite gradient in '{name}', skipping whole step",
                    RuntimeWarning,
                )
                return False
            grads[name] = g
        for name, p in self.params.items():
            adam_step(
                p.data, grads[name], self.state[name],
                lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps,
            )
        return True
