"""Tape-based reverse-mode autodiff over numpy, with an emulated binary16 dtype.

Three precisions are supported: F64 for oracle-grade math, F32 as the
training default, and F16E, an emulated IEEE-754 binary16. F16E tensors
keep a float32 backing buffer whose values are always exactly
representable in binary16: every write re-rounds with round-to-nearest-even
(overflow goes to infinity, subnormals are kept). Arithmetic therefore
behaves like "compute, then store in half".

Ops record themselves on a thread-local tape during the forward pass;
``backward`` walks the tape in strict reverse order and then clears it.
"""

from __future__ import annotations

import threading

import numpy as np

F64 = "f64"
F32 = "f32"
F16E = "f16e"

DTYPES = (F64, F32, F16E)

_BACKING = {F64: np.float64, F32: np.float32, F16E: np.float32}

_state = threading.local()


def _nodes() -> list:
    if not hasattr(_state, "nodes"):
        _state.nodes = []
    return _state.nodes


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


def _f16_rounding() -> bool:
    return getattr(_state, "f16_rounding", True)


class no_grad:
    """Context manager that disables taping (eval / data plumbing)."""

    def __enter__(self):
        self._prev = _grad_enabled()
        _state.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _state.grad_enabled = self._prev
        return False


class f16_rounding_disabled:
    """Test hook: F16E tensors stop re-rounding and behave like F32."""

    def __enter__(self):
        self._prev = _f16_rounding()
        _state.f16_rounding = False
        return self

    def __exit__(self, *exc):
        _state.f16_rounding = self._prev
        return False


def _store(values, dtype: str) -> np.ndarray:
    arr = np.asarray(values, dtype=_BACKING[dtype])
    if dtype == F16E and _f16_rounding():
        with np.errstate(over="ignore"):
            arr = arr.astype(np.float16).astype(np.float32)
    return arr


class Tensor:
    """N-dimensional array with a dtype tag and an optional gradient."""

    __slots__ = ("data", "dtype", "requires_grad", "grad")

    def __init__(self, data, dtype: str = F32, requires_grad: bool = False):
        if dtype not in DTYPES:
            raise ValueError(f"unknown dtype {dtype!r}, expected one of {DTYPES}")
        self.data = _store(data, dtype)
        self.dtype = dtype
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single element, shape is {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.dtype)

    def __repr__(self):
        return f"Tensor(shape={tuple(self.shape)}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # Arithmetic sugar; the module-level functions do the real work.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(_as_tensor(other, self.dtype), self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

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


class TapeNode:
    """One recorded op: inputs, output, and the backward rule."""

    __slots__ = ("op", "inputs", "out", "backward_fn")

    def __init__(self, op, inputs, out, backward_fn):
        self.op = op
        self.inputs = inputs
        self.out = out
        self.backward_fn = backward_fn


def reset_tape() -> None:
    _nodes().clear()


def tape_length() -> int:
    return len(_nodes())


def _result(data, dtype, inputs, op, backward_fn) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = _store(data, dtype)
    out.dtype = dtype
    out.grad = None
    out.requires_grad = _grad_enabled() and any(i.requires_grad for i in inputs)
    if out.requires_grad:
        _nodes().append(TapeNode(op, inputs, out, backward_fn))
    return out


def _as_tensor(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x), dtype=dtype)


def _check_same_dtype(op, a: Tensor, b: Tensor) -> None:
    if a.dtype != b.dtype:
        raise ValueError(f"{op}: dtype mismatch {a.dtype} vs {b.dtype}; cast explicitly")


def _accumulate(t: Tensor, g: np.ndarray) -> None:
    g = _store(g, t.dtype)
    if t.grad is None:
        t.grad = g
    else:
        t.grad = _store(t.grad + g, t.dtype)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def backward(loss: Tensor) -> None:
    """Reverse-traverse the tape from a scalar loss, then consume the tape.

    Populates ``grad`` on every tensor with ``requires_grad`` that the loss
    depends on; constants are left untouched.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    nodes = _nodes()
    if not nodes:
        raise RuntimeError("tape is empty; run a forward pass first")
    loss.grad = _store(np.ones_like(loss.data), loss.dtype)
    for node in reversed(nodes):
        out_grad = node.out.grad
        if out_grad is None:
            continue
        grads = node.backward_fn(out_grad)
        for inp, g in zip(node.inputs, grads):
            if g is not None and inp.requires_grad:
                _accumulate(inp, g)
    nodes.clear()


# ---------------------------------------------------------------------------
# elementwise and linear ops


def add(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a.dtype)
    _check_same_dtype("add", a, b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ValueError(f"add: shapes {a.shape} and {b.shape} do not broadcast")
    ash, bsh = a.shape, b.shape

    def bwd(g):
        return _unbroadcast(g, ash), _unbroadcast(g, bsh)

    return _result(data, a.dtype, (a, b), "add", bwd)


def sub(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a.dtype)
    _check_same_dtype("sub", a, b)
    try:
        data = a.data - b.data
    except ValueError:
        raise ValueError(f"sub: shapes {a.shape} and {b.shape} do not broadcast")
    ash, bsh = a.shape, b.shape

    def bwd(g):
        return _unbroadcast(g, ash), -_unbroadcast(g, bsh)

    return _result(data, a.dtype, (a, b), "sub", bwd)


def mul(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a.dtype)
    _check_same_dtype("mul", a, b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ValueError(f"mul: shapes {a.shape} and {b.shape} do not broadcast")
    ad, bd = a.data, b.data
    ash, bsh = a.shape, b.shape

    def bwd(g):
        return _unbroadcast(g * bd, ash), _unbroadcast(g * ad, bsh)

    return _result(data, a.dtype, (a, b), "mul", bwd)


def neg(a: Tensor) -> Tensor:
    def bwd(g):
        return (-g,)

    return _result(-a.data, a.dtype, (a,), "neg", bwd)


def tabs(a: Tensor) -> Tensor:
    sign = np.sign(a.data)

    def bwd(g):
        return (g * sign,)

    return _result(np.abs(a.data), a.dtype, (a,), "abs", bwd)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def bwd(g):
        return (g * mask,)

    return _result(np.where(mask, a.data, 0), a.dtype, (a,), "relu", bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _check_same_dtype("matmul", a, b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ValueError(f"matmul: expected 2-D operands, got {a.shape} @ {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul: inner dimensions differ, {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def bwd(g):
        return g @ bd.T, ad.T @ g

    return _result(ad @ bd, a.dtype, (a, b), "matmul", bwd)


def dense(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map ``x @ w + b`` for x of shape [N, K], w [K, M], b [M]."""
    _check_same_dtype("dense", x, w)
    if x.data.ndim != 2 or w.data.ndim != 2:
        raise ValueError(f"dense: expected 2-D input and weight, got {x.shape}, {w.shape}")
    if x.shape[1] != w.shape[0]:
        raise ValueError(f"dense: input features {x.shape[1]} != weight rows {w.shape[0]}")
    data = x.data @ w.data
    inputs = (x, w)
    if b is not None:
        _check_same_dtype("dense", x, b)
        if b.shape != (w.shape[1],):
            raise ValueError(f"dense: bias shape {b.shape} != ({w.shape[1]},)")
        data = data + b.data
        inputs = (x, w, b)
    xd, wd = x.data, w.data

    def bwd(g):
        gx = g @ wd.T
        gw = xd.T @ g
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=0)

    return _result(data, x.dtype, inputs, "dense", bwd)


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    old = a.shape

    def bwd(g):
        return (g.reshape(old),)

    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ValueError(f"reshape: cannot view {old} as {shape}")
    return _result(data, a.dtype, (a,), "reshape", bwd)


def flatten(a: Tensor, start_axis: int = 1) -> Tensor:
    lead = a.shape[:start_axis]
    rest = int(np.prod(a.shape[start_axis:], dtype=np.int64)) if a.data.ndim > start_axis else 1
    return reshape(a, lead + (rest,))


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous slice along one axis; backward scatters into zeros."""
    ndim = a.data.ndim
    if not -ndim <= axis < ndim:
        raise ValueError(f"slice_axis: axis {axis} invalid for shape {a.shape}")
    axis %= ndim
    index = tuple(slice(None) if d != axis else slice(start, stop) for d in range(ndim))
    old = a.shape

    def bwd(g):
        full = np.zeros(old, dtype=g.dtype)
        full[index] = g
        return (full,)

    return _result(a.data[index], a.dtype, (a,), "slice", bwd)


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axis, a.data.ndim)
    old = a.shape

    def bwd(g):
        if axes is not None and not keepdims:
            g = np.expand_dims(g, tuple(axes))
        return (np.broadcast_to(g, old).copy(),)

    return _result(a.data.sum(axis=axes, keepdims=keepdims), a.dtype, (a,), "sum", bwd)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _normalize_axes(axis, a.data.ndim)
    old = a.shape
    count = a.data.size if axes is None else int(np.prod([old[i] for i in axes]))
    if count == 0:
        raise ValueError(f"mean over empty axes of shape {old}")

    def bwd(g):
        if axes is not None and not keepdims:
            g = np.expand_dims(g, tuple(axes))
        return (np.broadcast_to(g / count, old).copy(),)

    return _result(a.data.mean(axis=axes, keepdims=keepdims), a.dtype, (a,), "mean", bwd)


def _normalize_axes(axis, ndim):
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


# ---------------------------------------------------------------------------
# softmax and cross entropy


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Max-stabilized softmax along one axis; outputs sum to 1 there."""
    ndim = a.data.ndim
    if ndim == 0 or not -ndim <= axis < ndim:
        raise ValueError(f"softmax: axis {axis} invalid for shape {a.shape}")
    axis %= ndim
    if a.shape[axis] == 0:
        raise ValueError("softmax over an empty axis")
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    y = _store(y, a.dtype)

    def bwd(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _result(y, a.dtype, (a,), "softmax", bwd)


def cross_entropy_with_logits(logits: Tensor, target, axis: int = -1) -> Tensor:
    """Negative log softmax probability of the target class.

    ``target`` is an integer for 1-D logits, or an integer array shaped like
    ``logits`` with ``axis`` removed. The result drops ``axis`` (a scalar in
    the 1-D case).
    """
    ndim = logits.data.ndim
    if ndim == 0 or not -ndim <= axis < ndim:
        raise ValueError(f"cross_entropy: axis {axis} invalid for shape {logits.shape}")
    axis %= ndim
    n = logits.shape[axis]
    if n == 0:
        raise ValueError("cross_entropy over an empty class axis")
    idx = np.asarray(target)
    if not np.issubdtype(idx.dtype, np.integer):
        raise ValueError("cross_entropy: target must be integer-valued")
    want = logits.shape[:axis] + logits.shape[axis + 1 :]
    if idx.shape != want:
        raise ValueError(f"cross_entropy: target shape {idx.shape} != {want}")
    if idx.size and (idx.min() < 0 or idx.max() >= n):
        raise ValueError(f"cross_entropy: target index outside [0, {n})")

    z = logits.data - logits.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    logp = z - lse
    picked = np.take_along_axis(logp, np.expand_dims(idx, axis), axis=axis)
    out = -picked.squeeze(axis=axis)
    p = np.exp(logp)

    def bwd(g):
        gin = p.copy()
        np.put_along_axis(
            gin,
            np.expand_dims(idx, axis),
            np.take_along_axis(gin, np.expand_dims(idx, axis), axis=axis) - 1.0,
            axis=axis,
        )
        return (gin * np.expand_dims(g, axis),)

    return _result(out, logits.dtype, (logits,), "cross_entropy", bwd)


# ---------------------------------------------------------------------------
# spatial ops


def _pair(v, name):
    if isinstance(v, int):
        return v, v
    a, b = v
    return int(a), int(b)


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride=1, padding=0) -> Tensor:
    """2-D cross-correlation over NCHW input with OIHW weights."""
    _check_same_dtype("conv2d", x, w)
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ValueError(f"conv2d: expected NCHW input and OIHW weight, got {x.shape}, {w.shape}")
    n, c, h_in, w_in = x.shape
    o, ci, kh, kw = w.shape
    if ci != c:
        raise ValueError(f"conv2d: input has {c} channels but weight expects {ci}")
    sh, sw = _pair(stride, "stride")
    ph, pw = _pair(padding, "padding")
    hp, wp = h_in + 2 * ph, w_in + 2 * pw
    if kh > hp or kw > wp:
        raise ValueError(f"conv2d: kernel ({kh}, {kw}) larger than padded input ({hp}, {wp})")
    oh = (hp - kh) // sh + 1
    ow = (wp - kw) // sw + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    # sum of kernel-offset GEMMs: fast, contiguous, and deterministic
    data = np.zeros((n, o, oh, ow), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, :, i : i + sh * oh : sh, j : j + sw * ow : sw]
            data += np.einsum("nchw,oc->nohw", patch, w.data[:, :, i, j], optimize=True)
    inputs = (x, w)
    if b is not None:
        _check_same_dtype("conv2d", x, b)
        if b.shape != (o,):
            raise ValueError(f"conv2d: bias shape {b.shape} != ({o},)")
        data = data + b.data[:, None, None]
        inputs = (x, w, b)
    wd = w.data

    def bwd(g):
        gw = np.empty_like(wd)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                patch = xp[:, :, i : i + sh * oh : sh, j : j + sw * ow : sw]
                gw[:, :, i, j] = np.einsum("nohw,nchw->oc", g, patch, optimize=True)
                gxp[:, :, i : i + sh * oh : sh, j : j + sw * ow : sw] += np.einsum(
                    "nohw,oc->nchw", g, wd[:, :, i, j], optimize=True
                )
        gx = gxp[:, :, ph : ph + h_in, pw : pw + w_in]
        if b is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    return _result(data, x.dtype, inputs, "conv2d", bwd)


def maxpool2d(x: Tensor, kernel=2, stride=None) -> Tensor:
    """2-D max pooling; trailing rows/cols that do not fill a window are dropped."""
    if x.data.ndim != 4:
        raise ValueError(f"maxpool2d: expected NCHW input, got {x.shape}")
    kh, kw = _pair(kernel, "kernel")
    sh, sw = _pair(kernel if stride is None else stride, "stride")
    n, c, h_in, w_in = x.shape
    if kh > h_in or kw > w_in:
        raise ValueError(f"maxpool2d: kernel ({kh}, {kw}) larger than input ({h_in}, {w_in})")
    oh = (h_in - kh) // sh + 1
    ow = (w_in - kw) // sw + 1
    win = np.lib.stride_tricks.sliding_window_view(x.data, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    flat = win.reshape(n, c, oh, ow, kh * kw)
    arg = flat.argmax(axis=-1)  # first max wins: deterministic tie-break
    data = np.take_along_axis(flat, arg[..., None], axis=-1).squeeze(-1)
    shape_in = (n, c, h_in, w_in)

    def bwd(g):
        gx = np.zeros(shape_in, dtype=g.dtype)
        ni, ci_, ohi, owi = np.indices((n, c, oh, ow), sparse=False)
        rows = ohi * sh + arg // kw
        cols = owi * sw + arg % kw
        np.add.at(gx, (ni, ci_, rows, cols), g)
        return (gx,)

    return _result(data, x.dtype, (x,), "maxpool2d", bwd)


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-feature batch normalization for [N, F] or per-channel for [N, C, H, W].

    In training mode the batch statistics are used and the running buffers are
    updated in place; in eval mode the running buffers are used. Statistics are
    always computed in the float32/float64 backing buffer, so F16E inputs get
    full-precision moments and a rounded output.
    """
    ndim = x.data.ndim
    if ndim == 2:
        axes = (0,)
        nfeat = x.shape[1]
        expand = (1, nfeat)
    elif ndim == 4:
        axes = (0, 2, 3)
        nfeat = x.shape[1]
        expand = (1, nfeat, 1, 1)
    else:
        raise ValueError(f"batch_norm: expected 2-D or 4-D input, got {x.shape}")
    if gamma.shape != (nfeat,) or beta.shape != (nfeat,):
        raise ValueError(
            f"batch_norm: scale/shift must have shape ({nfeat},), got {gamma.shape}, {beta.shape}"
        )
    count = int(np.prod([x.shape[a] for a in axes]))
    if training:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        unbiased = var * count / (count - 1) if count > 1 else var
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu.astype(running_mean.dtype)
        running_var *= 1.0 - momentum
        running_var += momentum * unbiased.astype(running_var.dtype)
    else:
        mu = running_mean.astype(x.data.dtype)
        var = running_var.astype(x.data.dtype)

    ivar = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(expand)) * ivar.reshape(expand)
    data = gamma.data.reshape(expand) * xhat + beta.data.reshape(expand)
    gd = gamma.data

    def bwd(g):
        ggamma = (g * xhat).sum(axis=axes)
        gbeta = g.sum(axis=axes)
        gi = g * gd.reshape(expand)
        if training:
            gx = (
                gi
                - gi.mean(axis=axes, keepdims=True)
                - xhat * (gi * xhat).mean(axis=axes, keepdims=True)
            ) * ivar.reshape(expand)
        else:
            gx = gi * ivar.reshape(expand)
        return gx, ggamma, gbeta

    return _result(data, x.dtype, (x, gamma, beta), "batch_norm", bwd)


def cast(a: Tensor, dtype: str) -> Tensor:
    """Convert between precisions; F16E applies binary16 round-to-nearest-even."""
    if dtype not in DTYPES:
        raise ValueError(f"unknown dtype {dtype!r}, expected one of {DTYPES}")
    src = a.dtype

    def bwd(g):
        return (_store(g, src),)

    return _result(a.data, dtype, (a,), "cast", bwd)
