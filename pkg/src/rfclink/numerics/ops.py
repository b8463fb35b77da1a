"""Differentiable operations on :class:`Tensor`.

Each op computes its forward value with numpy and registers a closure
that pushes the upstream gradient to its inputs. Broadcasting is limited
to adding a 1-D bias across the rows of a matrix.
"""

from __future__ import annotations

import math

import numpy as np

from . import kernels
from .tensor import ShapeMismatch, Tensor


def _result(data, parents, backward):
    needs = any(p.requires_grad for p in parents)
    if not needs:
        return Tensor(data)
    return Tensor(data, requires_grad=True, _parents=tuple(parents), _backward=backward)


def matmul(a, b):
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch("matmul", a.shape, b.shape)
    out = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate(g @ b.data.T)
        if b.requires_grad:
            b.accumulate(a.data.T @ g)

    return _result(out, (a, b), backward)


def add(a, b):
    """Elementwise sum; ``b`` may be a 1-D bias added to every row of ``a``."""
    if a.shape == b.shape:
        bias = False
    elif b.data.ndim == 1 and a.data.ndim == 2 and a.shape[1] == b.shape[0]:
        bias = True
    else:
        raise ShapeMismatch("add", a.shape, b.shape)
    out = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate(g)
        if b.requires_grad:
            b.accumulate(g.sum(axis=0) if bias else g)

    return _result(out, (a, b), backward)


def sub(a, b):
    if a.shape != b.shape:
        raise ShapeMismatch("sub", a.shape, b.shape)

    def backward(g):
        if a.requires_grad:
            a.accumulate(g)
        if b.requires_grad:
            b.accumulate(-g)

    return _result(a.data - b.data, (a, b), backward)


def mul(a, b):
    if a.shape != b.shape:
        raise ShapeMismatch("mul", a.shape, b.shape)

    def backward(g):
        if a.requires_grad:
            a.accumulate(g * b.data)
        if b.requires_grad:
            b.accumulate(g * a.data)

    return _result(a.data * b.data, (a, b), backward)


def scale(a, s):
    s = float(s)

    def backward(g):
        a.accumulate(g * s)

    return _result(a.data * s, (a,), backward)


def relu(a):
    mask = a.data > 0
    out = np.where(mask, a.data, 0).astype(a.dtype, copy=False)

    def backward(g):
        a.accumulate(g * mask)

    return _result(out, (a,), backward)


def tanh(a):
    out = np.tanh(a.data)

    def backward(g):
        a.accumulate(g * (1.0 - out * out))

    return _result(out, (a,), backward)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a):
    out = _sigmoid(a.data)

    def backward(g):
        a.accumulate(g * out * (1.0 - out))

    return _result(out, (a,), backward)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a):
    """Tanh approximation of GELU, as used by BERT."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x * x * x)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def backward(g):
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * d_inner
        a.accumulate(g * d)

    return _result(out, (a,), backward)


def softmax_row(a):
    """Row-wise softmax of a 1-D or 2-D tensor."""
    x = a.data
    z = x - x.max(axis=-1, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        dot = (g * out).sum(axis=-1, keepdims=True)
        a.accumulate(out * (g - dot))

    return _result(out, (a,), backward)


def log_sum_exp(a):
    """Stable log-sum-exp over the last axis (scalar for 1-D input)."""
    x = a.data
    m = x.max(axis=-1, keepdims=True)
    s = np.exp(x - m).sum(axis=-1, keepdims=True)
    out = (m + np.log(s))
    soft = np.exp(x - out)
    out = out[..., 0]

    def backward(g):
        a.accumulate(np.asarray(g)[..., None] * soft)

    return _result(out, (a,), backward)


def concat(tensors, axis=0):
    tensors = list(tensors)
    datas = [t.data for t in tensors]
    try:
        out = np.concatenate(datas, axis=axis)
    except ValueError:
        raise ShapeMismatch("concat", *[t.shape for t in tensors]) from None
    sizes = np.cumsum([d.shape[axis] for d in datas])[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, sizes, axis=axis)):
            if t.requires_grad:
                t.accumulate(piece)

    return _result(out, tensors, backward)


def slice_(a, index):
    """Basic-slicing view ``a[index]`` with a scatter backward."""
    out = a.data[index]

    def backward(g):
        full = np.zeros_like(a.data)
        full[index] = g
        a.accumulate(full)

    return _result(np.array(out), (a,), backward)


def take_rows(table, ids):
    """Gather rows ``table[ids]``; repeated ids accumulate in backward."""
    ids = np.asarray(ids, dtype=np.intp)
    out = table.data[ids]

    def backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        table.accumulate(full)

    return _result(out, (table,), backward)


def flip_rows(a):
    def backward(g):
        a.accumulate(g[::-1])

    return _result(a.data[::-1].copy(), (a,), backward)


def transpose(a):
    def backward(g):
        a.accumulate(g.T)

    return _result(a.data.T.copy(), (a,), backward)


def reshape(a, shape):
    def backward(g):
        a.accumulate(g.reshape(a.shape))

    return _result(a.data.reshape(shape), (a,), backward)


def mean(a):
    n = a.data.size

    def backward(g):
        a.accumulate(np.full_like(a.data, g / n))

    return _result(np.asarray(a.data.mean()), (a,), backward)


def sum_(a):
    def backward(g):
        a.accumulate(np.full_like(a.data, g))

    return _result(np.asarray(a.data.sum()), (a,), backward)


def layer_norm(x, gain, bias, eps=1e-12):
    """Normalise each row to zero mean and unit variance, then affine."""
    if x.data.ndim != 2 or gain.shape != (x.shape[1],) or bias.shape != gain.shape:
        raise ShapeMismatch("layer_norm", x.shape, gain.shape, bias.shape)
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def backward(g):
        if gain.requires_grad:
            gain.accumulate((g * xhat).sum(axis=0))
        if bias.requires_grad:
            bias.accumulate(g.sum(axis=0))
        if x.requires_grad:
            gx = g * gain.data
            n = x.shape[1]
            dx = inv / n * (n * gx - gx.sum(axis=1, keepdims=True)
                            - xhat * (gx * xhat).sum(axis=1, keepdims=True))
            x.accumulate(dx)

    return _result(out, (x, gain, bias), backward)


def dropout(a, p, rng, training):
    """Inverted dropout; identity when not training or ``p == 0``."""
    if not training or p <= 0:
        return a
    keep = (rng.random(a.shape) >= p) / (1.0 - p)
    keep = keep.astype(a.dtype)

    def backward(g):
        a.accumulate(g * keep)

    return _result(a.data * keep, (a,), backward)


def attention(q, k, v, num_heads, mask=None):
    """Multi-head scaled dot-product self-attention.

    ``q``, ``k``, ``v`` are ``[L, H]``; heads split the hidden axis into
    ``num_heads`` contiguous blocks. ``mask`` is an optional boolean ``[L]``
    marking key positions that may be attended to.
    """
    L, H = q.shape
    if k.shape != (L, H) or v.shape != (L, H) or H % num_heads:
        raise ShapeMismatch("attention", q.shape, k.shape, v.shape)
    d = H // num_heads
    c = 1.0 / math.sqrt(d)
    qh = q.data.reshape(L, num_heads, d).transpose(1, 0, 2)
    kh = k.data.reshape(L, num_heads, d).transpose(1, 0, 2)
    vh = v.data.reshape(L, num_heads, d).transpose(1, 0, 2)
    scores = (qh @ kh.transpose(0, 2, 1)) * c
    if mask is not None:
        scores = np.where(np.asarray(mask)[None, None, :], scores, -1e30)
    scores = scores - scores.max(axis=-1, keepdims=True)
    p = np.exp(scores)
    p /= p.sum(axis=-1, keepdims=True)
    out = (p @ vh).transpose(1, 0, 2).reshape(L, H)

    def backward(g):
        gh = g.reshape(L, num_heads, d).transpose(1, 0, 2)
        if v.requires_grad:
            v.accumulate((p.transpose(0, 2, 1) @ gh).transpose(1, 0, 2).reshape(L, H))
        dp = gh @ vh.transpose(0, 2, 1)
        ds = p * (dp - (dp * p).sum(axis=-1, keepdims=True)) * c
        if q.requires_grad:
            q.accumulate((ds @ kh).transpose(1, 0, 2).reshape(L, H))
        if k.requires_grad:
            k.accumulate((ds.transpose(0, 2, 1) @ qh).transpose(1, 0, 2).reshape(L, H))

    return _result(out, (q, k, v), backward)


def conv1d_same(x, kernel, bias):
    """Convolution over rows with an odd window and zero 'same' padding.

    ``x`` is ``[L, C_in]``, ``kernel`` is ``[window * C_in, C_out]`` with the
    window taps stacked top to bottom, ``bias`` is ``[C_out]``.
    """
    L, cin = x.shape
    if kernel.shape[0] % cin or bias.shape != (kernel.shape[1],):
        raise ShapeMismatch("conv1d_same", x.shape, kernel.shape, bias.shape)
    window = kernel.shape[0] // cin
    if window % 2 == 0:
        raise ShapeMismatch("conv1d_same", x.shape, kernel.shape, bias.shape)
    half = window // 2
    padded = np.zeros((L + 2 * half, cin), dtype=x.dtype)
    padded[half:half + L] = x.data
    cols = np.concatenate([padded[j:j + L] for j in range(window)], axis=1)
    out = cols @ kernel.data + bias.data

    def backward(g):
        if kernel.requires_grad:
            kernel.accumulate(cols.T @ g)
        if bias.requires_grad:
            bias.accumulate(g.sum(axis=0))
        if x.requires_grad:
            dcols = g @ kernel.data.T
            dpad = np.zeros_like(padded)
            for j in range(window):
                dpad[j:j + L] += dcols[:, j * cin:(j + 1) * cin]
            x.accumulate(dpad[half:half + L])

    return _result(out, (x, kernel, bias), backward)


def max_pool2d(a, size=2):
    """Non-overlapping ``size x size`` max pooling of a 2-D map (floor mode)."""
    r, c = a.shape
    ro, co = r // size, c // size
    if ro == 0 or co == 0:
        raise ShapeMismatch("max_pool2d", a.shape)
    blocks = a.data[:ro * size, :co * size].reshape(ro, size, co, size).transpose(0, 2, 1, 3)
    flat = blocks.reshape(ro, co, size * size)
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]

    def backward(g):
        dflat = np.zeros_like(flat)
        np.put_along_axis(dflat, arg[..., None], g[..., None], axis=-1)
        full = np.zeros_like(a.data)
        full[:ro * size, :co * size] = (
            dflat.reshape(ro, co, size, size).transpose(0, 2, 1, 3).reshape(ro * size, co * size)
        )
        a.accumulate(full)

    return _result(out, (a,), backward)


def gru_scan(inputs, recurrent):
    """Run a GRU over precomputed input projections.

    ``inputs`` is ``[m, 3H]`` holding ``x_t W + b`` for the update, reset
    and candidate gates in that order; ``recurrent`` is ``[H, 3H]``. The
    initial state is zero. Returns the ``[m, H]`` sequence of states.
    """
    m, h3 = inputs.shape
    if h3 % 3 or recurrent.shape != (h3 // 3, h3):
        raise ShapeMismatch("gru_scan", inputs.shape, recurrent.shape)
    a = np.ascontiguousarray(inputs.data)
    u = np.ascontiguousarray(recurrent.data, dtype=a.dtype)
    states, gates = kernels.gru_forward(a, u)

    def backward(g):
        da, du = kernels.gru_backward(a, u, states, gates, np.ascontiguousarray(g, dtype=a.dtype))
        if inputs.requires_grad:
            inputs.accumulate(da)
        if recurrent.requires_grad:
            recurrent.accumulate(du)

    return _result(states, (inputs, recurrent), backward)


def cross_entropy(logits, target):
    """``-z_t + log_sum_exp(z)`` for a 1-D logit vector ``z``."""
    lse = log_sum_exp(logits)
    picked = slice_(logits, (int(target),))
    return sub(lse, picked)
