"""Differentiable primitives.

Each function computes its forward value with numpy and hands a backward rule
to :func:`record`.  Rules receive the upstream gradient and return one
gradient per input (``None`` where the input is a constant).
"""
from __future__ import annotations

import numpy as np

from .tensor import DTYPE, ContractError, ShapeError, Tensor, as_tensor, record

__all__ = [
    "add", "sub", "mul", "div", "matmul", "reshape", "transpose", "sum", "mean",
    "concat", "einsum", "relu", "softmax_rows", "log_softmax_rows", "l2_normalize",
    "cross_entropy", "dropout", "scaled_dot_attention", "batch_norm", "linear", "temporal_conv",
]


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return record(a.data + b.data, (a, b),
                  lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return record(a.data - b.data, (a, b),
                  lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return record(a.data * b.data, (a, b),
                  lambda g: (_unbroadcast(g * b.data, a.shape),
                             _unbroadcast(g * a.data, b.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return record(out, (a, b),
                  lambda g: (_unbroadcast(g / b.data, a.shape),
                             _unbroadcast(-g * out / b.data, b.shape)))


def matmul(a, b) -> Tensor:
    """Matrix product over the last two axes with broadcast leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul shapes {a.shape} and {b.shape} do not conform")

    def rule(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return record(a.data @ b.data, (a, b), rule)


def reshape(a: Tensor, shape) -> Tensor:
    return record(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)
    return record(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),))


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def rule(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return record(out, (a,), rule)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    out = a.data.mean(axis=axis, keepdims=keepdims)

    def rule(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, a.shape).copy(),)

    return record(out, (a,), rule)


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    cuts = np.cumsum(sizes)[:-1]
    return record(np.concatenate([t.data for t in tensors], axis=axis), tensors,
                  lambda g: np.split(g, cuts, axis=axis))


def einsum(subscripts: str, a, b) -> Tensor:
    """Two-operand einsum; every input index must survive in the output or the other operand."""
    a, b = as_tensor(a), as_tensor(b)
    lhs, out_idx = subscripts.replace(" ", "").split("->")
    ia, ib = lhs.split(",")
    for idx, other in ((ia, ib), (ib, ia)):
        if len(set(idx)) != len(idx) or any(c not in out_idx and c not in other for c in idx):
            raise ContractError(f"einsum {subscripts!r} has no simple backward rule")
    out = np.einsum(subscripts, a.data, b.data, optimize=True)

    def rule(g):
        ga = np.einsum(f"{out_idx},{ib}->{ia}", g, b.data, optimize=True) if a.requires_grad else None
        gb = np.einsum(f"{out_idx},{ia}->{ib}", g, a.data, optimize=True) if b.requires_grad else None
        return ga, gb

    return record(out, (a, b), rule)


def relu(x) -> Tensor:
    x = as_tensor(x)
    mask = x.data > 0
    return record(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def _softmax(x: np.ndarray) -> np.ndarray:
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def softmax_rows(x) -> Tensor:
    """Softmax over the last axis, max-subtracted."""
    x = as_tensor(x)
    y = _softmax(x.data)
    return record(y, (x,), lambda g: (y * (g - (g * y).sum(axis=-1, keepdims=True)),))


def log_softmax_rows(x) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=-1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    return record(out, (x,), lambda g: (g - np.exp(out) * g.sum(axis=-1, keepdims=True),))


def scaled_dot_attention(q, k, v, scale: float) -> Tensor:
    """softmax_rows(q kᵀ · scale) v over the last two axes.

    The attention matrix is attached to the result as ``.attention``.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    if q.shape[-1] != k.shape[-1] or k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"attention shapes q{q.shape} k{k.shape} v{v.shape} do not conform")
    a = q.data @ np.swapaxes(k.data, -1, -2)
    a *= scale
    a -= a.max(axis=-1, keepdims=True)
    np.exp(a, out=a)
    a /= a.sum(axis=-1, keepdims=True)

    def rule(g):
        gv = np.swapaxes(a, -1, -2) @ g
        ga = g @ np.swapaxes(v.data, -1, -2)
        ga -= np.einsum("...ij,...ij->...i", ga, a)[..., None]
        ga *= a
        ga *= scale
        return ga @ k.data, np.swapaxes(ga, -1, -2) @ q.data, gv

    out = record(a @ v.data, (q, k, v), rule)
    out.attention = a
    return out


def l2_normalize(x, axis: int = -1, eps: float = 1e-12) -> Tensor:
    x = as_tensor(x)
    norm = np.sqrt((x.data ** 2).sum(axis=axis, keepdims=True))
    denom = np.maximum(norm, eps)
    y = x.data / denom
    live = norm > eps

    def rule(g):
        proj = (g * y).sum(axis=axis, keepdims=True)
        return (np.where(live, (g - y * proj) / denom, g / denom),)

    return record(y, (x,), rule)


def cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    logits = as_tensor(logits)
    labels = np.asarray(labels, dtype=np.int64)
    b, k = logits.shape
    if labels.shape != (b,):
        raise ShapeError(f"labels shape {labels.shape} does not match logits {logits.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise ContractError(f"labels must lie in [0, {k})")
    shifted = logits.data - logits.data.max(axis=-1, keepdims=True)
    logp = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
    rows = np.arange(b)
    loss = -logp[rows, labels].mean()

    def rule(g):
        d = np.exp(logp)
        d[rows, labels] -= 1.0
        return (d * (g / b),)

    return record(np.asarray(loss), (logits,), rule)


def dropout_mask(shape, p: float, seed) -> np.ndarray:
    """Bernoulli keep-mask from a counter-based Philox stream keyed by ``seed``."""
    key = np.random.SeedSequence(seed)
    rng = np.random.Generator(np.random.Philox(key))
    return (rng.random(shape) >= p).astype(DTYPE) / (1.0 - p)


def dropout(x, p: float, training: bool, seed=0) -> Tensor:
    x = as_tensor(x)
    if not 0.0 <= p < 1.0:
        raise ContractError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return record(x.data, (x,), lambda g: (g,))
    mask = dropout_mask(x.shape, p, seed)
    return record(x.data * mask, (x,), lambda g: (g * mask,))


def batch_norm(
    x,
    scale,
    shift,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalization; channels are axis 1, statistics over every other axis.

    In training mode the running buffers are updated in place.
    """
    x, scale, shift = as_tensor(x), as_tensor(scale), as_tensor(shift)
    c = x.shape[1]
    axes = tuple(i for i in range(x.ndim) if i != 1)
    bshape = (1, c) + (1,) * (x.ndim - 2)
    gamma = scale.data.reshape(bshape)
    if training:
        if x.shape[0] < 2:
            raise ContractError("batch_norm in training mode needs a batch of at least 2")
        n = x.data.size // c
        mu = x.data.mean(axis=axes, keepdims=True)
        xc = x.data - mu
        var = (xc ** 2).mean(axis=axes, keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu.reshape(c)
        running_var *= 1.0 - momentum
        running_var += momentum * var.reshape(c) * n / (n - 1)

        def rule(g):
            sg = g.sum(axis=axes)
            sgx = (g * xhat).sum(axis=axes)
            dx = g * n
            dx -= sg.reshape(bshape)
            dx -= xhat * sgx.reshape(bshape)
            dx *= gamma * inv / n
            return dx, sgx, sg
    else:
        inv = 1.0 / np.sqrt(running_var.reshape(bshape) + eps)
        xhat = (x.data - running_mean.reshape(bshape)) * inv

        def rule(g):
            return g * gamma * inv, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    out = xhat * gamma + shift.data.reshape(bshape)
    return record(out, (x, scale, shift), rule)


def linear(x, weight, bias=None) -> Tensor:
    """``x @ weight.T + bias`` with ``weight`` shaped (out, in)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.shape[-1] != weight.shape[1]:
        raise ShapeError(f"linear input {x.shape} does not match weight {weight.shape}")
    out = x.data @ weight.data.T
    inputs = [x, weight]
    if bias is not None:
        bias = as_tensor(bias)
        out = out + bias.data
        inputs.append(bias)

    def rule(g):
        g2 = g.reshape(-1, g.shape[-1])
        x2 = x.data.reshape(-1, x.shape[-1])
        grads = [g @ weight.data, g2.T @ x2]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return grads

    return record(out, inputs, rule)


def temporal_conv(x, weight, stride: int = 1, groups: int = 1) -> Tensor:
    """Zero-padded 1-D convolution along axis 2 of a (B, C, T, V) tensor.

    ``weight`` is (C_out, C_in // groups, k) with odd ``k``; each vertex is
    convolved independently.
    """
    x, weight = as_tensor(x), as_tensor(weight)
    b, c, t, v = x.shape
    c_out, c_per, k = weight.shape
    if k % 2 == 0:
        raise ContractError(f"temporal kernel must be odd, got {k}")
    if c % groups or c_out % groups or c // groups != c_per:
        raise ShapeError(f"temporal_conv weight {weight.shape} does not fit input {x.shape} with groups={groups}")
    pad = k // 2
    t_out = (t + 2 * pad - k) // stride + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (0, 0)))
    o_per = c_out // groups
    depthwise = groups == c and c_per == 1
    w = weight.data

    def window(arr, j):
        return arr[:, :, j:j + stride * (t_out - 1) + 1:stride, :]

    def grouped(arr, n):
        return arr.reshape(b, groups, n, t_out * v)

    if depthwise and o_per == 1:
        out = np.zeros((b, c_out, t_out, v))
        for j in range(k):
            out += w[:, 0, j][None, :, None, None] * window(xp, j)
    else:
        wg = w.reshape(groups, o_per, c_per, k)
        out = np.zeros((b, groups, o_per, t_out * v))
        for j in range(k):
            out += wg[..., j] @ grouped(window(xp, j), c_per)
        out = out.reshape(b, c_out, t_out, v)

    def rule(g):
        gxp = np.zeros_like(xp)
        gw = np.zeros_like(w)
        if depthwise and o_per == 1:
            for j in range(k):
                gw[:, 0, j] = np.einsum("bctv,bctv->c", g, window(xp, j))
                window(gxp, j)[...] += w[:, 0, j][None, :, None, None] * g
        else:
            wg = w.reshape(groups, o_per, c_per, k)
            gg = grouped(g, o_per)
            gwg = gw.reshape(groups, o_per, c_per, k)
            for j in range(k):
                gwg[..., j] = (gg @ np.swapaxes(grouped(window(xp, j), c_per), -1, -2)).sum(axis=0)
                window(gxp, j)[...] += (np.swapaxes(wg[..., j], -1, -2) @ gg).reshape(b, c, t_out, v)
        return gxp[:, :, pad:pad + t, :], gw

    return record(out, (x, weight), rule)
