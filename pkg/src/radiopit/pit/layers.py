"""Forward/backward pairs for the building blocks of the model.

Every ``*_forward`` returns ``(output, cache)``; the matching ``*_backward``
takes the upstream gradient and that cache. Arrays carry the dtype of the
parameters, so float64 parameters give a float64 pass end to end.
"""
from __future__ import annotations

import math

import numpy as np

LN_EPS = 1e-5
_GELU_C = math.sqrt(2.0 / math.pi)
_GELU_A = 0.044715


def matmul(a, b):
    """Forward product accumulated in float64 and rounded to the input dtype.

    float32 BLAS picks different kernels (and summation orders) by row count,
    so a plain product would make a token's output depend on how many other
    tokens share the call. Widening keeps each row's result independent of that.
    """
    if a.dtype == np.float32:
        return (a.astype(np.float64) @ b.astype(np.float64)).astype(np.float32)
    return a @ b


def layer_norm_forward(x, g, b):
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    rstd = 1.0 / np.sqrt(var + LN_EPS)
    xhat = xc * rstd
    return xhat * g + b, (xhat, rstd)


def layer_norm_backward(dy, cache, g):
    xhat, rstd = cache
    dg = (dy * xhat).sum(axis=0)
    db = dy.sum(axis=0)
    dxhat = dy * g
    dx = rstd * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                 - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
    return dx, dg, db


def gelu_forward(x):
    # tanh approximation
    t = np.tanh(_GELU_C * (x + _GELU_A * (x * x * x)))
    return 0.5 * x * (1.0 + t), (x, t)


def gelu_backward(dy, cache):
    x, t = cache
    du = _GELU_C * (1.0 + 3.0 * _GELU_A * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)


def softmax(s):
    s = s - s.max(axis=-1, keepdims=True)
    e = np.exp(s)
    return e / e.sum(axis=-1, keepdims=True)


def _split_heads(x, n_heads):
    n, d = x.shape
    return x.reshape(n, n_heads, d // n_heads).transpose(1, 0, 2)


def _merge_heads(x):
    h, n, dh = x.shape
    return x.transpose(1, 0, 2).reshape(n, h * dh)


def attention_forward(xq, xkv, p, prefix, n_heads):
    """Multi-head attention of ``xq`` tokens over ``xkv`` tokens.

    Self-attention is the case ``xq is xkv``.
    """
    q = matmul(xq, p[prefix + "wq"]) + p[prefix + "bq"]
    k = matmul(xkv, p[prefix + "wk"]) + p[prefix + "bk"]
    v = matmul(xkv, p[prefix + "wv"]) + p[prefix + "bv"]
    qh, kh, vh = (_split_heads(t, n_heads) for t in (q, k, v))
    scale = 1.0 / math.sqrt(qh.shape[-1])
    probs = softmax(matmul(qh, kh.transpose(0, 2, 1)) * scale)
    ctx = _merge_heads(matmul(probs, vh))
    out = matmul(ctx, p[prefix + "wo"]) + p[prefix + "bo"]
    return out, (xq, xkv, qh, kh, vh, probs, ctx, scale)


def attention_backward(dout, cache, p, prefix, n_heads):
    xq, xkv, qh, kh, vh, probs, ctx, scale = cache
    grads = {
        prefix + "wo": ctx.T @ dout,
        prefix + "bo": dout.sum(axis=0),
    }
    dctx = _split_heads(dout @ p[prefix + "wo"].T, n_heads)
    dprobs = dctx @ vh.transpose(0, 2, 1)
    dvh = probs.transpose(0, 2, 1) @ dctx
    ds = probs * (dprobs - (dprobs * probs).sum(axis=-1, keepdims=True)) * scale
    dqh = ds @ kh
    dkh = ds.transpose(0, 2, 1) @ qh
    dq, dk, dv = _merge_heads(dqh), _merge_heads(dkh), _merge_heads(dvh)
    grads[prefix + "wq"] = xq.T @ dq
    grads[prefix + "bq"] = dq.sum(axis=0)
    grads[prefix + "wk"] = xkv.T @ dk
    grads[prefix + "bk"] = dk.sum(axis=0)
    grads[prefix + "wv"] = xkv.T @ dv
    grads[prefix + "bv"] = dv.sum(axis=0)
    dxq = dq @ p[prefix + "wq"].T
    dxkv = dk @ p[prefix + "wk"].T + dv @ p[prefix + "wv"].T
    return dxq, dxkv, grads


def mlp_forward(x, p, prefix):
    """Two-layer perceptron with a GELU between the layers."""
    pre = matmul(x, p[prefix + "w1"]) + p[prefix + "b1"]
    hid, gcache = gelu_forward(pre)
    out = matmul(hid, p[prefix + "w2"]) + p[prefix + "b2"]
    return out, (x, hid, gcache)


def mlp_backward(dout, cache, p, prefix):
    x, hid, gcache = cache
    grads = {
        prefix + "w2": hid.T @ dout,
        prefix + "b2": dout.sum(axis=0),
    }
    dpre = gelu_backward(dout @ p[prefix + "w2"].T, gcache)
    grads[prefix + "w1"] = x.T @ dpre
    grads[prefix + "b1"] = dpre.sum(axis=0)
    return dpre @ p[prefix + "w1"].T, grads
