"""Pixel transformer: per-pixel value generation from sparse known points.

Known points are embedded as concat(position, value) and run through a
pre-norm self-attention encoder. Every output pixel is a token
concat(position, 0) that cross-attends to the encoded known points in a
decoder with no self-attention, so pixels are decoded independently and
can be processed in chunks. A small perceptron maps each decoded token to
a scalar value.

Parameters are a plain ``dict[str, np.ndarray]`` in manifest order.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from ..errors import DegenerateLossError, InvalidValueError, NumericError
from . import layers as L
from .masking import SampleSet

Params = dict


@dataclass(frozen=True)
class PiTConfig:
    d_model: int = 64
    n_heads: int = 4
    n_enc_layers: int = 3
    n_dec_layers: int = 3
    d_ff: int = 256
    n_fourier: int = 16
    decode_chunk: int = 4096

    def __post_init__(self):
        if self.d_model < 2 or self.d_model % 2:
            raise InvalidValueError(f"d_model must be even, got {self.d_model}")
        if self.n_heads < 1 or self.d_model % self.n_heads:
            raise InvalidValueError(f"n_heads {self.n_heads} must divide d_model {self.d_model}")
        if self.n_enc_layers != 3 or self.n_dec_layers != 3:
            raise InvalidValueError("the model uses exactly 3 encoder and 3 decoder layers")
        if self.d_ff < 1 or self.n_fourier < 1 or self.decode_chunk < 1:
            raise InvalidValueError("d_ff, n_fourier and decode_chunk must be positive")

    def to_dict(self) -> dict:
        return asdict(self)


def param_shapes(cfg: PiTConfig) -> list[tuple[str, tuple[int, ...]]]:
    d, half, ff = cfg.d_model, cfg.d_model // 2, cfg.d_ff
    shapes = [("pos.w", (4 * cfg.n_fourier, half)), ("val.w", (1, half)), ("val.b", (half,))]

    def attn(prefix):
        return [(prefix + n, (d, d)) if n.startswith("w") else (prefix + n, (d,))
                for n in ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo")]

    def block(prefix):
        return ([(prefix + "ln1.g", (d,)), (prefix + "ln1.b", (d,))] + attn(prefix + "attn.")
                + [(prefix + "ln2.g", (d,)), (prefix + "ln2.b", (d,)),
                   (prefix + "ff.w1", (d, ff)), (prefix + "ff.b1", (ff,)),
                   (prefix + "ff.w2", (ff, d)), (prefix + "ff.b2", (d,))])

    for i in range(cfg.n_enc_layers):
        shapes += block(f"enc.{i}.")
    shapes += [("enc.norm.g", (d,)), ("enc.norm.b", (d,))]
    for i in range(cfg.n_dec_layers):
        shapes += block(f"dec.{i}.")
    shapes += [("dec.norm.g", (d,)), ("dec.norm.b", (d,)),
               ("head.w1", (d, d)), ("head.b1", (d,)), ("head.w2", (d, 1)), ("head.b2", (1,))]
    return shapes


def init_weights(cfg: PiTConfig, seed: int = 0, dtype=np.float32) -> Params:
    """Glorot-uniform matrices, unit norm gains, zero biases."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(cfg):
        if len(shape) == 2:
            bound = math.sqrt(6.0 / (shape[0] + shape[1]))
            arr = rng.uniform(-bound, bound, size=shape)
        elif name.endswith(".g"):
            arr = np.ones(shape)
        else:
            arr = np.zeros(shape)
        params[name] = arr.astype(dtype)
    return params


def cast_params(params: Params, dtype) -> Params:
    return {k: v.astype(dtype) for k, v in params.items()}


def _dtype(params: Params):
    return params["pos.w"].dtype


def fourier_features(coords, shape, n_fourier, dtype=np.float64):
    rc = np.asarray(coords, dtype=np.float64).reshape(-1, 2)
    u = (rc + 0.5) / np.asarray(shape, dtype=np.float64)
    ang = u[:, :, None] * (np.pi * 2.0 ** np.arange(n_fourier))  # (n, 2, F)
    feats = np.concatenate([np.sin(ang[:, 0]), np.cos(ang[:, 0]),
                            np.sin(ang[:, 1]), np.cos(ang[:, 1])], axis=1)
    return feats.astype(dtype)


def position_encode(coords, shape, params: Params, n_fourier: int):
    """Fourier features of pixel-center coordinates in [0, 1]^2, linearly projected."""
    rc = np.asarray(coords).reshape(-1, 2)
    h, w = shape
    if len(rc) and (rc.min() < 0 or np.any(rc[:, 0] >= h) or np.any(rc[:, 1] >= w)):
        raise InvalidValueError(f"coordinates outside {h}x{w} grid")
    return L.matmul(fourier_features(rc, shape, n_fourier, _dtype(params)), params["pos.w"])


def value_encode(values, is_known, params: Params):
    """Affine projection of known values; unknown entries embed as exact zeros."""
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    is_known = np.asarray(is_known, dtype=bool).reshape(-1)
    if values.shape != is_known.shape:
        raise InvalidValueError("values and flags differ in length")
    kv = values[is_known]
    if np.any(~np.isfinite(kv)) or np.any(kv < 0.0) or np.any(kv > 1.0):
        raise InvalidValueError("known values must lie in [0, 1]")
    dt = _dtype(params)
    out = np.zeros((len(values), params["val.b"].shape[0]), dtype=dt)
    out[is_known] = kv.astype(dt)[:, None] * params["val.w"] + params["val.b"]
    return out


def _encode(params, cfg, sample: SampleSet):
    if len(sample.known_rc) == 0:
        raise InvalidValueError("at least one known point is required")
    dt = _dtype(params)
    # canonical (row, col) token order makes the output exactly independent of input order
    order = np.lexsort((sample.known_rc[:, 1], sample.known_rc[:, 0]))
    known_rc, known_values = sample.known_rc[order], sample.known_values[order]
    feats = fourier_features(known_rc, sample.shape, cfg.n_fourier, dt)
    vals = value_encode(known_values, np.ones(len(known_values), bool), params)
    x = np.concatenate([L.matmul(feats, params["pos.w"]), vals], axis=1)
    caches = []
    for i in range(cfg.n_enc_layers):
        pre = f"enc.{i}."
        z, c1 = L.layer_norm_forward(x, params[pre + "ln1.g"], params[pre + "ln1.b"])
        a, ca = L.attention_forward(z, z, params, pre + "attn.", cfg.n_heads)
        x = x + a
        z2, c2 = L.layer_norm_forward(x, params[pre + "ln2.g"], params[pre + "ln2.b"])
        f, cf = L.mlp_forward(z2, params, pre + "ff.")
        x = x + f
        caches.append((c1, ca, c2, cf))
    mem, cn = L.layer_norm_forward(x, params["enc.norm.g"], params["enc.norm.b"])
    known = known_values.astype(dt)
    return mem, (feats, known, caches, cn)


def _encode_backward(dmem, cache, params, cfg, grads):
    feats, known, caches, cn = cache
    dx, grads["enc.norm.g"], grads["enc.norm.b"] = L.layer_norm_backward(dmem, cn, params["enc.norm.g"])
    for i in reversed(range(cfg.n_enc_layers)):
        pre = f"enc.{i}."
        c1, ca, c2, cf = caches[i]
        dz2, g = L.mlp_backward(dx, cf, params, pre + "ff.")
        grads.update(g)
        d, grads[pre + "ln2.g"], grads[pre + "ln2.b"] = L.layer_norm_backward(dz2, c2, params[pre + "ln2.g"])
        dx = dx + d
        dzq, dzkv, g = L.attention_backward(dx, ca, params, pre + "attn.", cfg.n_heads)
        grads.update(g)
        d, grads[pre + "ln1.g"], grads[pre + "ln1.b"] = L.layer_norm_backward(
            dzq + dzkv, c1, params[pre + "ln1.g"])
        dx = dx + d
    half = cfg.d_model // 2
    dpos, dval = dx[:, :half], dx[:, half:]
    grads["pos.w"] = grads["pos.w"] + feats.T @ dpos
    grads["val.w"] = (known[:, None] * dval).sum(axis=0, keepdims=True)
    grads["val.b"] = dval.sum(axis=0)


def _decode(params, cfg, mem, coords, shape):
    """Decode one chunk of output tokens; returns (predictions, cache)."""
    dt = _dtype(params)
    feats = fourier_features(coords, shape, cfg.n_fourier, dt)
    half = cfg.d_model // 2
    x = np.concatenate([L.matmul(feats, params["pos.w"]), np.zeros((len(feats), half), dtype=dt)], axis=1)
    caches = []
    for i in range(cfg.n_dec_layers):
        pre = f"dec.{i}."
        z, c1 = L.layer_norm_forward(x, params[pre + "ln1.g"], params[pre + "ln1.b"])
        a, ca = L.attention_forward(z, mem, params, pre + "attn.", cfg.n_heads)
        x = x + a
        z2, c2 = L.layer_norm_forward(x, params[pre + "ln2.g"], params[pre + "ln2.b"])
        f, cf = L.mlp_forward(z2, params, pre + "ff.")
        x = x + f
        caches.append((c1, ca, c2, cf))
    z, cn = L.layer_norm_forward(x, params["dec.norm.g"], params["dec.norm.b"])
    out, ch = L.mlp_forward(z, params, "head.")
    return out[:, 0], (feats, caches, cn, ch)


def _decode_backward(dpred, cache, params, cfg, grads):
    """Accumulate parameter gradients into ``grads``; return the gradient w.r.t. memory."""
    feats, caches, cn, ch = cache
    dz, g = L.mlp_backward(dpred[:, None], ch, params, "head.")
    _accumulate(grads, g)
    dx, dg, db = L.layer_norm_backward(dz, cn, params["dec.norm.g"])
    _accumulate(grads, {"dec.norm.g": dg, "dec.norm.b": db})
    dmem = 0.0
    for i in reversed(range(cfg.n_dec_layers)):
        pre = f"dec.{i}."
        c1, ca, c2, cf = caches[i]
        dz2, g = L.mlp_backward(dx, cf, params, pre + "ff.")
        _accumulate(grads, g)
        d, dg, db = L.layer_norm_backward(dz2, c2, params[pre + "ln2.g"])
        _accumulate(grads, {pre + "ln2.g": dg, pre + "ln2.b": db})
        dx = dx + d
        dzq, dm, g = L.attention_backward(dx, ca, params, pre + "attn.", cfg.n_heads)
        _accumulate(grads, g)
        dmem = dmem + dm
        d, dg, db = L.layer_norm_backward(dzq, c1, params[pre + "ln1.g"])
        _accumulate(grads, {pre + "ln1.g": dg, pre + "ln1.b": db})
        dx = dx + d
    half = cfg.d_model // 2
    grads["pos.w"] = grads["pos.w"] + feats.T @ dx[:, :half]
    return dmem


def _accumulate(grads, new):
    for k, v in new.items():
        grads[k] = grads[k] + v if k in grads else v


def _chunks(n, size):
    return [(i, min(i + size, n)) for i in range(0, n, size)]


def forward(params: Params, cfg: PiTConfig, sample: SampleSet) -> np.ndarray:
    """Predicted values at ``sample.output_rc`` (query points, then remaining points).

    Predictions are unconstrained; clamp to [0, 1] only when rendering.
    """
    mem, _ = _encode(params, cfg, sample)
    coords = sample.output_rc
    out = np.empty(len(coords), dtype=_dtype(params))
    for a, b in _chunks(len(coords), cfg.decode_chunk):
        out[a:b], _ = _decode(params, cfg, mem, coords[a:b], sample.shape)
    return out


def attention_maps(params: Params, cfg: PiTConfig, sample: SampleSet) -> list[np.ndarray]:
    """Softmax weights of every attention layer, encoder first; each is (heads, queries, keys).

    Keys (and encoder queries) follow the known points sorted by (row, col).
    """
    mem, (_, _, enc_caches, _) = _encode(params, cfg, sample)
    maps = [c[1][5] for c in enc_caches]
    if len(sample.output_rc):
        _, (_, dec_caches, _, _) = _decode(params, cfg, mem, sample.output_rc, sample.shape)
        maps += [c[1][5] for c in dec_caches]
    return maps


def predict_dense(params: Params, cfg: PiTConfig, known_rc, known_values, shape) -> np.ndarray:
    """Model output at every pixel of an ``shape`` grid, conditioned on the known points."""
    h, w = shape
    rows, cols = np.divmod(np.arange(h * w), w)
    sample = SampleSet(shape, known_rc, known_values, np.zeros((0, 2), np.int64),
                       remaining_rc=None)
    mem, _ = _encode(params, cfg, sample)
    coords = np.stack([rows, cols], axis=1)
    out = np.empty(h * w, dtype=_dtype(params))
    for a, b in _chunks(h * w, cfg.decode_chunk):
        out[a:b], _ = _decode(params, cfg, mem, coords[a:b], shape)
    return out.reshape(h, w)


def rmse_loss(pred, truth) -> float:
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    truth = np.asarray(truth, dtype=np.float64).reshape(-1)
    if pred.shape != truth.shape:
        raise InvalidValueError(f"length mismatch: {pred.shape[0]} predictions, {truth.shape[0]} targets")
    if pred.size == 0:
        raise DegenerateLossError("RMSE over zero points is undefined")
    return float(np.sqrt(np.mean((pred - truth) ** 2)))


def _nonfinite_groups(params: Params) -> list[str]:
    groups = []
    for name, arr in params.items():
        group = name.rsplit(".", 1)[0]
        if not np.all(np.isfinite(arr)) and group not in groups:
            groups.append(group)
    return groups


def loss_and_grad(params: Params, cfg: PiTConfig, samples: list[SampleSet]) -> tuple[float, Params]:
    """Batch loss (mean of per-sample query RMSEs) and its gradient for every parameter.

    A sample with zero RMSE contributes a zero gradient.
    """
    if not samples:
        raise DegenerateLossError("empty batch")
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    dt = _dtype(params)
    total = 0.0
    for s in samples:
        if len(s.query_rc) == 0 or s.query_truth is None:
            raise DegenerateLossError("every sample needs at least one query point with truth")
        mem, ecache = _encode(params, cfg, s)
        chunks = []
        for a, b in _chunks(len(s.query_rc), cfg.decode_chunk):
            pred, dcache = _decode(params, cfg, mem, s.query_rc[a:b], s.shape)
            chunks.append((a, b, pred, dcache))
        pred = np.concatenate([c[2] for c in chunks])
        diff = pred.astype(np.float64) - s.query_truth
        loss = math.sqrt(float(np.mean(diff * diff)))
        if not math.isfinite(loss):
            raise NumericError("non-finite loss", groups=_nonfinite_groups(params))
        total += loss
        if loss == 0.0:
            continue
        dpred = (diff / (len(diff) * loss * len(samples))).astype(dt)
        dmem = np.zeros_like(mem)
        for a, b, _, dcache in chunks:
            dmem = dmem + _decode_backward(dpred[a:b], dcache, params, cfg, grads)
        sample_grads = {k: np.zeros_like(v) for k, v in params.items()}
        _encode_backward(dmem, ecache, params, cfg, sample_grads)
        _accumulate(grads, sample_grads)
    bad = _nonfinite_groups(grads)
    if bad:
        raise NumericError("non-finite gradient", groups=bad)
    return total / len(samples), grads


def grad(params: Params, cfg: PiTConfig, samples: list[SampleSet]) -> Params:
    return loss_and_grad(params, cfg, samples)[1]


def batch_loss(params: Params, cfg: PiTConfig, samples: list[SampleSet]) -> float:
    """Forward-only version of the loss minimized by ``loss_and_grad``."""
    return sum(rmse_loss(forward(params, cfg, SampleSet(s.shape, s.known_rc, s.known_values,
                                                       s.query_rc, s.query_truth)), s.query_truth)
               for s in samples) / len(samples)
