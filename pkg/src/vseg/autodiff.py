"""Reverse-mode automatic differentiation over dense float tensors.

The op set is exactly what a 3-level 3D U-Net with dice loss needs:
3x3x3 convolution, 2x stride-2 transposed convolution, 2x max-pooling,
batch normalization, ReLU/Sigmoid, channel concatenation and a handful
of elementwise/reduction primitives for building scalar losses.

Data layout for 5-D tensors is (batch, channel, z, y, x), row-major
float buffers. All kernels are plain numpy with fixed reduction order,
so identical inputs give bit-identical outputs and gradients.
"""

from __future__ import annotations

import numpy as np


class Tensor:
    """A dense float array participating in the autodiff graph.

    Immutable once created, except for the gradient buffer which is
    populated by ``backward``. Gradients accumulate in the tensor's own
    dtype; use float64 tensors for gradient checking.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn", "_consumed")

    def __init__(self, data, requires_grad=False, dtype=None,
                 _parents=(), _backward_fn=None):
        self.data = np.asarray(data, dtype=dtype)
        if self.data.dtype not in (np.float32, np.float64):
            self.data = self.data.astype(np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = _parents
        self._backward_fn = _backward_fn
        self._consumed = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype)
        else:
            self.grad += g

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data.copy(), requires_grad=False)

    def backward(self):
        """Populate ``grad`` on every reachable tensor with requires_grad.

        Only valid on scalar tensors. The recorded graph is consumed:
        calling backward a second time on the same root raises.
        """
        if self.data.size != 1:
            raise ValueError(
                f"backward requires a scalar tensor, got shape {self.data.shape}")
        if self._consumed:
            raise RuntimeError(
                "backward already called on this graph; re-run the forward pass first")

        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))

        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward_fn is not None and node.grad is not None:
                node._backward_fn(node.grad)
            node._consumed = True

    # -- elementwise / reduction primitives (enough to build losses) --

    def _binop(self, other, fwd, bwd_self, bwd_other):
        other_t = other if isinstance(other, Tensor) else None
        o_data = other_t.data if other_t is not None else other
        out_data = fwd(self.data, o_data)
        parents = tuple(t for t in (self, other_t) if t is not None and t.requires_grad)
        if not parents:
            return Tensor(out_data)

        def backward_fn(g):
            if self.requires_grad:
                self._accumulate(bwd_self(g, self.data, o_data))
            if other_t is not None and other_t.requires_grad:
                other_t._accumulate(bwd_other(g, self.data, o_data))

        return Tensor(out_data, requires_grad=True,
                      _parents=parents, _backward_fn=backward_fn)

    def __add__(self, other):
        return self._binop(other, lambda a, b: a + b,
                           lambda g, a, b: g, lambda g, a, b: g)

    __radd__ = __add__

    def __sub__(self, other):
        return self._binop(other, lambda a, b: a - b,
                           lambda g, a, b: g, lambda g, a, b: -g)

    def __rsub__(self, other):
        return self._binop(other, lambda a, b: b - a,
                           lambda g, a, b: -g, lambda g, a, b: g)

    def __mul__(self, other):
        return self._binop(other, lambda a, b: a * b,
                           lambda g, a, b: g * b, lambda g, a, b: g * a)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return self._binop(other, lambda a, b: a / b,
                           lambda g, a, b: g / b,
                           lambda g, a, b: -g * a / (b * b))

    def __neg__(self):
        return self * -1.0

    def __pow__(self, exponent):
        if not np.isscalar(exponent):
            raise TypeError("only scalar exponents are supported")
        return self._binop(exponent, lambda a, b: a ** b,
                           lambda g, a, b: g * b * a ** (b - 1),
                           lambda g, a, b: None)

    def sum(self):
        """Sum of all elements as a scalar tensor."""
        out_data = np.array(self.data.sum(dtype=np.float64), dtype=self.data.dtype)
        if not self.requires_grad:
            return Tensor(out_data)

        def backward_fn(g):
            self._accumulate(np.broadcast_to(g, self.data.shape))

        return Tensor(out_data, requires_grad=True,
                      _parents=(self,), _backward_fn=backward_fn)


class LabelTensor(Tensor):
    """A tensor whose values are restricted to {0, 1}."""

    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=False, dtype=dtype)
        vals = np.unique(self.data)
        if not np.all(np.isin(vals, (0.0, 1.0))):
            bad = vals[~np.isin(vals, (0.0, 1.0))][0]
            raise ValueError(f"label tensor contains non-binary value {bad!r}")


def _check_5d(t, name):
    if t.data.ndim != 5:
        raise ValueError(f"{name} must be 5-D (B,C,D,H,W), got {t.data.ndim}-D")


def _make(out_data, parents, backward_fn):
    parents = tuple(p for p in parents if p is not None)
    if any(p.requires_grad for p in parents):
        return Tensor(out_data, requires_grad=True,
                      _parents=parents, _backward_fn=backward_fn)
    return Tensor(out_data)


def _conv3d_raw(x, w, b, pad):
    """Stride-1 3D cross-correlation.

    Decomposed into k^3 per-offset channel-mixing contractions followed
    by shifted accumulation, which avoids materializing the k^3-unfolded
    patch matrix (it is memory-bound on large volumes)."""
    cout, cin, k = w.shape[0], w.shape[1], w.shape[2]
    b_sz, _, d, h, wd = x.shape
    do, ho, wo = (d + 2 * pad - k + 1, h + 2 * pad - k + 1, wd + 2 * pad - k + 1)
    x2 = np.ascontiguousarray(x).reshape(b_sz, cin, -1)
    out = np.zeros((b_sz, cout, do, ho, wo), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            for l in range(k):
                y = np.einsum("oc,bcs->bos", w[:, :, i, j, l], x2).reshape(
                    b_sz, cout, d, h, wd)
                dst, src = [], []
                for off, n_in, n_out in ((i, d, do), (j, h, ho), (l, wd, wo)):
                    lo = max(0, pad - off)
                    hi = min(n_out - 1, n_in - 1 + pad - off)
                    if lo > hi:
                        dst = None
                        break
                    dst.append(slice(lo, hi + 1))
                    src.append(slice(lo + off - pad, hi + off - pad + 1))
                if dst is not None:
                    out[(slice(None), slice(None), *dst)] += \
                        y[(slice(None), slice(None), *src)]
    if b is not None:
        out += b[None, :, None, None, None]
    return out


def _conv3d_weight_grad(x, g, k, pad, w_shape):
    """d(loss)/d(weight) for _conv3d_raw: per-offset contraction of the
    output gradient with the padded input."""
    b_sz, cin = x.shape[0], x.shape[1]
    cout = g.shape[1]
    xp = x
    if pad:
        xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad), (pad, pad)))
    do, ho, wo = g.shape[2:]
    g2 = np.ascontiguousarray(g).reshape(b_sz, cout, -1)
    gw = np.empty(w_shape, dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            for l in range(k):
                xs = np.ascontiguousarray(
                    xp[:, :, i:i + do, j:j + ho, l:l + wo]).reshape(b_sz, cin, -1)
                gw[:, :, i, j, l] = np.einsum("bos,bcs->oc", g2, xs)
    return gw


def conv3d(x, weight, bias, padding=1):
    """3D convolution, kernel 3 (or 1), stride 1.

    Spatial shape is preserved for kernel 3 / padding 1 and for
    kernel 1 / padding 0. Gradients flow to input, weight and bias.
    """
    _check_5d(x, "conv3d input")
    if weight.data.ndim != 5:
        raise ValueError(f"conv3d weight must be 5-D, got {weight.data.ndim}-D")
    cout, cin, kd, kh, kw = weight.shape
    if not (kd == kh == kw):
        raise ValueError(f"conv3d kernel must be cubic, got {kd}x{kh}x{kw}")
    if x.shape[1] != cin:
        raise ValueError(
            f"conv3d channel mismatch: input has {x.shape[1]} channels, "
            f"weight expects {cin}")
    if bias.shape != (cout,):
        raise ValueError(f"conv3d bias must have shape ({cout},), got {bias.shape}")
    k, pad = kd, padding

    out_data = _conv3d_raw(x.data, weight.data, bias.data, pad)

    def backward_fn(g):
        if bias.requires_grad:
            bias._accumulate(g.sum(axis=(0, 2, 3, 4)))
        if weight.requires_grad:
            weight._accumulate(_conv3d_weight_grad(x.data, g, k, pad, weight.shape))
        if x.requires_grad:
            # full correlation of the output gradient with the flipped kernel
            w_flip = np.flip(weight.data, axis=(2, 3, 4)).transpose(1, 0, 2, 3, 4)
            gx = _conv3d_raw(g, np.ascontiguousarray(w_flip), None, k - 1 - pad)
            x._accumulate(gx)

    return _make(out_data, (x, weight, bias), backward_fn)


def conv_transpose3d(x, weight, bias):
    """Transposed 3D convolution, kernel 2, stride 2: doubles every spatial extent.

    Weight layout is (Cin, Cout, 2, 2, 2). Because stride equals kernel
    size the output blocks do not overlap, so this is a pure block expansion.
    """
    _check_5d(x, "conv_transpose3d input")
    cin, cout = weight.shape[0], weight.shape[1]
    if weight.shape[2:] != (2, 2, 2):
        raise ValueError(f"transposed conv kernel must be 2x2x2, got {weight.shape[2:]}")
    if x.shape[1] != cin:
        raise ValueError(
            f"transposed conv channel mismatch: input has {x.shape[1]} channels, "
            f"weight expects {cin}")
    b_sz, _, d, h, w = x.shape

    t = np.einsum("bcdhw,coijk->bodhwijk", x.data, weight.data)
    out_data = t.transpose(0, 1, 2, 5, 3, 6, 4, 7).reshape(b_sz, cout, 2 * d, 2 * h, 2 * w)
    out_data = out_data + bias.data[None, :, None, None, None]

    def backward_fn(g):
        gr = g.reshape(b_sz, cout, d, 2, h, 2, w, 2).transpose(0, 1, 2, 4, 6, 3, 5, 7)
        if bias.requires_grad:
            bias._accumulate(g.sum(axis=(0, 2, 3, 4)))
        if weight.requires_grad:
            weight._accumulate(np.einsum("bcdhw,bodhwijk->coijk", x.data, gr))
        if x.requires_grad:
            x._accumulate(np.einsum("bodhwijk,coijk->bcdhw", gr, weight.data))

    return _make(out_data, (x, weight, bias), backward_fn)


def maxpool3d(x):
    """2x2x2 max pooling with stride 2.

    Returns (pooled, argmax) where argmax holds the within-block flat
    index (0..7) of each maximum; ties resolve to the lowest index.
    The backward pass routes gradient only to the argmax positions.
    """
    _check_5d(x, "maxpool3d input")
    b, c, d, h, w = x.shape
    for axis, extent in (("z", d), ("y", h), ("x", w)):
        if extent % 2 != 0:
            raise ValueError(
                f"maxpool3d requires even spatial extents, axis {axis} has {extent}")
    blocks = (x.data.reshape(b, c, d // 2, 2, h // 2, 2, w // 2, 2)
              .transpose(0, 1, 2, 4, 6, 3, 5, 7)
              .reshape(b, c, d // 2, h // 2, w // 2, 8))
    idx = blocks.argmax(axis=-1)
    out_data = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def backward_fn(g):
        gb = np.zeros(blocks.shape, dtype=g.dtype)
        np.put_along_axis(gb, idx[..., None], g[..., None], axis=-1)
        gx = (gb.reshape(b, c, d // 2, h // 2, w // 2, 2, 2, 2)
              .transpose(0, 1, 2, 5, 3, 6, 4, 7)
              .reshape(b, c, d, h, w))
        x._accumulate(gx)

    return _make(out_data, (x,), backward_fn), idx


def batchnorm3d(x, gamma, beta, running_mean, running_var, training,
                eps=1e-5, momentum=0.1):
    """Per-channel batch normalization over (B, D, H, W).

    ``running_mean``/``running_var`` are plain float arrays updated
    in place in training mode (exponential moving average, unbiased
    variance for the running estimate) and used as fixed statistics in
    eval mode. Gradients flow to input, gamma and beta.
    """
    _check_5d(x, "batchnorm3d input")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ValueError(
            f"batchnorm gamma/beta must have shape ({c},), "
            f"got {gamma.shape} and {beta.shape}")
    axes = (0, 2, 3, 4)
    n = x.data.size // c

    if training:
        mu = x.data.mean(axis=axes, dtype=np.float64).astype(x.dtype)
        var = x.data.var(axis=axes, dtype=np.float64).astype(x.dtype)
        if n > 1:
            running_var *= (1.0 - momentum)
            running_var += momentum * var * n / (n - 1)
        else:
            running_var *= (1.0 - momentum)
            running_var += momentum * var
        running_mean *= (1.0 - momentum)
        running_mean += momentum * mu
    else:
        mu = running_mean.astype(x.dtype)
        var = running_var.astype(x.dtype)

    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu[None, :, None, None, None]) * inv_std[None, :, None, None, None]
    out_data = xhat * gamma.data[None, :, None, None, None] + beta.data[None, :, None, None, None]

    def backward_fn(g):
        if beta.requires_grad:
            beta._accumulate(g.sum(axis=axes))
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).sum(axis=axes))
        if x.requires_grad:
            scale = (gamma.data * inv_std)[None, :, None, None, None]
            if training:
                g_mean = g.mean(axis=axes)[None, :, None, None, None]
                gx_mean = (g * xhat).mean(axis=axes)[None, :, None, None, None]
                x._accumulate(scale * (g - g_mean - xhat * gx_mean))
            else:
                x._accumulate(scale * g)

    return _make(out_data, (x, gamma, beta), backward_fn)


def relu(x):
    mask = x.data > 0

    def backward_fn(g):
        x._accumulate(g * mask)

    return _make(x.data * mask, (x,), backward_fn)


def sigmoid(x):
    # split by sign to avoid overflow in exp
    out_data = np.empty_like(x.data)
    pos = x.data >= 0
    out_data[pos] = 1.0 / (1.0 + np.exp(-x.data[pos]))
    e = np.exp(x.data[~pos])
    out_data[~pos] = e / (1.0 + e)

    def backward_fn(g):
        x._accumulate(g * out_data * (1.0 - out_data))

    return _make(out_data, (x,), backward_fn)


def concat_channels(a, b):
    """Concatenate two 5-D tensors along the channel axis."""
    _check_5d(a, "concat input")
    _check_5d(b, "concat input")
    if a.shape[0] != b.shape[0] or a.shape[2:] != b.shape[2:]:
        raise ValueError(
            f"concat_channels requires matching batch and spatial extents, "
            f"got {a.shape} and {b.shape}")
    ca = a.shape[1]
    out_data = np.concatenate([a.data, b.data], axis=1)

    def backward_fn(g):
        if a.requires_grad:
            a._accumulate(g[:, :ca])
        if b.requires_grad:
            b._accumulate(g[:, ca:])

    return _make(out_data, (a, b), backward_fn)
