"""Minimal reverse-mode autodiff on numpy arrays.

Just enough machinery for the two small convolutional networks used here:
tensors with a backward tape, 2D convolution and its transpose, dense layers,
the usual activations, the two losses, a straight-through rounding op and a
bias-corrected Adam update. Convolutions are evaluated as a short loop of
matrix products over kernel offsets, which keeps everything inside BLAS
without materializing im2col buffers.

Dtype follows the input arrays: float64 inputs give float64 graphs (the
gradient tests rely on this), float32 keeps training cheap.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError

__all__ = [
    "Tensor",
    "conv2d",
    "conv_transpose2d",
    "dense",
    "relu",
    "leaky_relu",
    "sigmoid",
    "tanh",
    "exp",
    "bce_loss",
    "mse_loss",
    "st_round",
    "AdamState",
    "adam_step",
    "Adam",
    "trunc_normal",
    "he_uniform",
]


class Tensor:
    """Array plus gradient slot and a closure that propagates into parents."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g

    def backward(self):
        if self.data.size != 1:
            raise ContractError("backward() starts from a scalar")
        topo, seen = [], set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # ---- elementwise / linear algebra -----------------------------------

    def __add__(self, other):
        other = _as_tensor(other, self.dtype)
        out_data = self.data + other.data

        def back(g):
            if _needs(self):
                self._accumulate(_unbroadcast(g, self.shape))
            if _needs(other):
                other._accumulate(_unbroadcast(g, other.shape))

        return _op(out_data, (self, other), back)

    __radd__ = __add__

    def __mul__(self, other):
        other = _as_tensor(other, self.dtype)
        out_data = self.data * other.data

        def back(g):
            if _needs(self):
                self._accumulate(_unbroadcast(g * other.data, self.shape))
            if _needs(other):
                other._accumulate(_unbroadcast(g * self.data, other.shape))

        return _op(out_data, (self, other), back)

    __rmul__ = __mul__

    def __neg__(self):
        return self * (-1.0)

    def __sub__(self, other):
        return self + (-_as_tensor(other, self.dtype))

    def __rsub__(self, other):
        return _as_tensor(other, self.dtype) + (-self)

    def __matmul__(self, other):
        if not isinstance(other, Tensor):
            other = Tensor(other)
        out_data = self.data @ other.data

        def back(g):
            if _needs(self):
                self._accumulate(g @ other.data.T)
            if _needs(other):
                other._accumulate(self.data.T @ g)

        return _op(out_data, (self, other), back)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        out_data = self.data.reshape(shape)

        def back(g):
            if _needs(self):
                self._accumulate(g.reshape(old))

        return _op(out_data, (self,), back)

    def mean(self):
        n = self.data.size
        out_data = np.asarray(self.data.mean())

        def back(g):
            if _needs(self):
                self._accumulate(np.broadcast_to(g / n, self.shape).astype(self.dtype))

        return _op(out_data, (self,), back)

    def sum(self):
        out_data = np.asarray(self.data.sum())

        def back(g):
            if _needs(self):
                self._accumulate(np.broadcast_to(g, self.shape).astype(self.dtype))

        return _op(out_data, (self,), back)

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, grad={self.requires_grad})"


def _needs(t: Tensor) -> bool:
    return t.requires_grad or t._parents


def _as_tensor(x, dtype) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype))


def _op(data, parents, back) -> Tensor:
    requires = any(_needs(p) for p in parents)
    return Tensor(data, requires_grad=requires, _parents=tuple(parents) if requires else (), _backward=back if requires else None)


def _unbroadcast(g, shape):
    """Sum a broadcast gradient back down to ``shape``."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# ---- activations ----------------------------------------------------------


def relu(x: Tensor) -> Tensor:
    out_data = np.maximum(x.data, 0)

    def back(g):
        if _needs(x):
            x._accumulate(g * (x.data > 0))

    return _op(out_data, (x,), back)


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    out_data = np.where(x.data > 0, x.data, slope * x.data)

    def back(g):
        if _needs(x):
            x._accumulate(g * np.where(x.data > 0, 1.0, slope).astype(x.dtype))

    return _op(out_data, (x,), back)


def sigmoid(x: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-x.data))

    def back(g):
        if _needs(x):
            x._accumulate(g * s * (1.0 - s))

    return _op(s, (x,), back)


def tanh(x: Tensor) -> Tensor:
    t = np.tanh(x.data)

    def back(g):
        if _needs(x):
            x._accumulate(g * (1.0 - t * t))

    return _op(t, (x,), back)


def exp(x: Tensor) -> Tensor:
    e = np.exp(x.data)

    def back(g):
        if _needs(x):
            x._accumulate(g * e)

    return _op(e, (x,), back)


# ---- convolutions ---------------------------------------------------------


def _conv_shapes(x_shape, k_shape, stride, padding):
    n, c, h, w = x_shape
    f, ck, kh, kw = k_shape
    if ck != c:
        raise ContractError(f"kernel expects {ck} input channels, image has {c}")
    oh = (h + 2 * padding - kh) // stride + 1
    ow = (w + 2 * padding - kw) // stride + 1
    if oh <= 0 or ow <= 0:
        raise ContractError("kernel larger than padded input")
    return n, c, h, w, f, kh, kw, oh, ow


def _gather_taps(xp, kh, kw, stride, gh, gw):
    """Stack the (gh, gw) window of every kernel tap into a single matrix.

    Rows are ordered channel-major then tap, matching a kernel reshaped to
    [out, in * kh * kw], so one matmul contracts over all taps at once.
    """
    n, c = xp.shape[:2]
    col = np.empty((c, kh * kw, n, gh * gw), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            sl = xp[:, :, i : i + gh * stride : stride, j : j + gw * stride : stride]
            col[:, i * kw + j] = sl.transpose(1, 0, 2, 3).reshape(c, n, gh * gw)
    return col.reshape(c * kh * kw, n * gh * gw)


def _scatter_taps(col, onto, kh, kw, stride, gh, gw):
    """Adjoint of :func:`_gather_taps`: accumulate tap rows back onto a grid."""
    n, c = onto.shape[:2]
    colv = col.reshape(c, kh * kw, n, gh, gw)
    for i in range(kh):
        for j in range(kw):
            onto[:, :, i : i + gh * stride : stride, j : j + gw * stride : stride] += \
                colv[:, i * kw + j].transpose(1, 0, 2, 3)


def conv2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of NCHW input with an [out, in, kh, kw] kernel."""
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise ContractError("conv2d expects 4D input and kernel")
    n, c, h, w, f, kh, kw, oh, ow = _conv_shapes(x.shape, kernel.shape, stride, padding)

    xp = x.data
    if padding:
        xp = np.pad(xp, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    kflat = kernel.data.reshape(f, c * kh * kw)
    xcol = _gather_taps(xp, kh, kw, stride, oh, ow)
    out = (kflat @ xcol).reshape(f, n, oh * ow).transpose(1, 0, 2).reshape(n, f, oh, ow)

    def back(g):
        gm = g.reshape(n, f, oh * ow).transpose(1, 0, 2).reshape(f, n * oh * ow)
        if _needs(kernel):
            kernel._accumulate((gm @ xcol.T).reshape(kernel.shape))
        if _needs(x):
            dcol = kflat.T @ gm
            dxp = np.zeros((n, c, h + 2 * padding, w + 2 * padding), dtype=x.dtype)
            _scatter_taps(dcol, dxp, kh, kw, stride, oh, ow)
            if padding:
                dxp = dxp[:, :, padding:-padding, padding:-padding]
            x._accumulate(dxp)

    return _op(out, (x, kernel), back)


def conv_transpose2d(x: Tensor, kernel: Tensor, stride: int = 1, padding: int = 0,
                     output_size: int | None = None) -> Tensor:
    """Adjoint of :func:`conv2d` with the same kernel and parameters.

    The kernel keeps its [out, in, kh, kw] layout from the paired conv2d, so
    an input with ``out`` channels produces ``in`` channels here. When the
    paired conv2d dropped trailing rows (input size not congruent with the
    stride), pass ``output_size`` to restore them; the extra rows are zero,
    matching the rows the forward pass never read.
    """
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise ContractError("conv_transpose2d expects 4D input and kernel")
    n, f, h, w = x.shape
    kf, c, kh, kw = kernel.shape
    if kf != f:
        raise ContractError(f"kernel expects {kf} input channels, image has {f}")
    oh = (h - 1) * stride + kh - 2 * padding
    ow = (w - 1) * stride + kw - 2 * padding
    if oh <= 0 or ow <= 0:
        raise ContractError("padding swallows the whole output")
    if output_size is not None:
        if not 0 <= output_size - oh < stride:
            raise ContractError(
                f"output_size {output_size} unreachable from input {h} with stride {stride}"
            )
        oh = ow = output_size

    kflat = kernel.data.reshape(f, c * kh * kw)
    xf = x.data.reshape(n, f, h * w).transpose(1, 0, 2).reshape(f, n * h * w)
    # work on the full padded extent of the paired conv2d, so rows past the
    # last window land naturally at zero
    outp = np.zeros((n, c, oh + 2 * padding, ow + 2 * padding), dtype=x.dtype)
    _scatter_taps(kflat.T @ xf, outp, kh, kw, stride, h, w)
    out = outp[:, :, padding : padding + oh, padding : padding + ow] if padding else outp

    def back(g):
        if padding:
            gp = np.zeros(
                (n, c, oh + 2 * padding, ow + 2 * padding), dtype=g.dtype
            )
            gp[:, :, padding : padding + oh, padding : padding + ow] = g
        else:
            gp = g
        gcol = _gather_taps(gp, kh, kw, stride, h, w)
        if _needs(kernel):
            kernel._accumulate((xf @ gcol.T).reshape(kernel.shape))
        if _needs(x):
            dx = (kflat @ gcol).reshape(f, n, h * w).transpose(1, 0, 2)
            x._accumulate(dx.reshape(n, f, h, w))

    return _op(out, (x, kernel), back)


def dense(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """Affine map of [N, D] inputs by a [D, K] weight and [K] bias."""
    if x.data.ndim != 2 or weight.data.ndim != 2:
        raise ContractError("dense expects 2D input and weight")
    if x.shape[1] != weight.shape[0] or bias.shape != (weight.shape[1],):
        raise ContractError(
            f"dense shapes incompatible: {x.shape} @ {weight.shape} + {bias.shape}"
        )
    return x @ weight + bias


# ---- losses and rounding ---------------------------------------------------

_BCE_CLAMP = 1e-7


def bce_loss(p: Tensor, y) -> Tensor:
    """Mean binary cross-entropy; probabilities clamped to [1e-7, 1 - 1e-7].

    The clamp acts on the forward value only; the backward pass treats it as
    the identity so a saturated network still receives a restoring gradient.
    """
    yd = y.data if isinstance(y, Tensor) else np.asarray(y, dtype=p.dtype)
    pc = np.clip(p.data, _BCE_CLAMP, 1.0 - _BCE_CLAMP)
    n = pc.size
    val = -np.sum(yd * np.log(pc) + (1.0 - yd) * np.log1p(-pc)) / n

    def back(g):
        if _needs(p):
            p._accumulate(g * (-(yd / pc) + (1.0 - yd) / (1.0 - pc)) / n)

    return _op(np.asarray(val, dtype=p.dtype), (p,), back)


def mse_loss(pred: Tensor, target) -> Tensor:
    td = target.data if isinstance(target, Tensor) else np.asarray(target, dtype=pred.dtype)
    if td.shape != pred.shape:
        raise ContractError(f"mse shapes differ: {pred.shape} vs {td.shape}")
    diff = pred.data - td
    n = diff.size
    val = np.asarray((diff * diff).sum() / n, dtype=pred.dtype)

    def back(g):
        if _needs(pred):
            pred._accumulate(g * 2.0 * diff / n)

    return _op(val, (pred,), back)


def st_round(x: Tensor) -> Tensor:
    """Round to {0, 1} forward; sigmoid-bump surrogate derivative backward.

    Ties at 0.5 round up. The backward factor is s*(1 - s) with
    s = 1/(1 + e^{-10(x - 0.5)}), maximal (0.25) at x = 0.5.
    """
    out_data = np.floor(x.data + 0.5)

    def back(g):
        if _needs(x):
            s = 1.0 / (1.0 + np.exp(-10.0 * (x.data - 0.5)))
            x._accumulate(g * s * (1.0 - s))

    return _op(out_data, (x,), back)


# ---- optimizer -------------------------------------------------------------


class AdamState:
    """Per-parameter Adam accumulator."""

    __slots__ = ("step", "m", "v")

    def __init__(self, shape, dtype):
        self.step = 0
        self.m = np.zeros(shape, dtype=dtype)
        self.v = np.zeros(shape, dtype=dtype)


def adam_step(param: Tensor, grad: np.ndarray, state: AdamState,
              lr: float = 1e-4, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> None:
    """One bias-corrected Adam update, in place on ``param.data``."""
    state.step += 1
    state.m *= beta1
    state.m += (1.0 - beta1) * grad
    state.v *= beta2
    state.v += (1.0 - beta2) * grad * grad
    mhat = state.m / (1.0 - beta1**state.step)
    vhat = state.v / (1.0 - beta2**state.step)
    param.data -= lr * mhat / (np.sqrt(vhat) + eps)


class Adam:
    """Adam over a name -> Tensor parameter dict."""

    def __init__(self, params: dict, lr: float = 1e-4, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        # per-parameter state appears on the first update, so a saved
        # optimizer carries entries only for parameters it actually stepped
        self.state: dict[str, AdamState] = {}

    def step(self):
        for name, t in self.params.items():
            if t.grad is None:
                continue
            state = self.state.get(name)
            if state is None:
                state = self.state[name] = AdamState(t.shape, t.dtype)
            adam_step(t, t.grad, state,
                      lr=self.lr, beta1=self.beta1, beta2=self.beta2, eps=self.eps)

    def zero_grad(self):
        for t in self.params.values():
            t.grad = None


# ---- initializers ----------------------------------------------------------


def trunc_normal(shape, std: float, rng: np.random.Generator, dtype=np.float32) -> np.ndarray:
    """Normal(0, std) redrawn beyond two standard deviations."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out.astype(dtype)


def he_uniform(fan_in: int, shape, rng: np.random.Generator, dtype=np.float32) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)
