"""Independent reference computations used by the tests."""
import numpy as np

from radiopit.pit.masking import SampleSet
from radiopit.pit.model import PiTConfig, batch_loss, cast_params, init_weights

TINY = PiTConfig(d_model=8, n_heads=1, d_ff=16, n_fourier=2)


def tiny_problem(seed=0, n_known=4, n_query=3, shape=(8, 8), jitter=0.1):
    """float64 weights (nudged away from zero-bias init) and one small sample."""
    rng = np.random.default_rng(seed)
    params = cast_params(init_weights(TINY, seed), np.float64)
    for k in params:
        params[k] = params[k] + jitter * rng.standard_normal(params[k].shape)
    cells = rng.choice(shape[0] * shape[1], n_known + n_query, replace=False)
    rc = np.stack(np.divmod(cells, shape[1]), axis=1)
    sample = SampleSet(shape, rc[:n_known], rng.random(n_known), rc[n_known:], rng.random(n_query))
    return params, sample


def central_differences(params, cfg, samples, eps=1e-4):
    """(L(p + eps) - L(p - eps)) / 2 eps for every scalar parameter."""
    out = {}
    for name, arr in params.items():
        g = np.zeros_like(arr)
        flat = arr.reshape(-1)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + eps
            hi = batch_loss(params, cfg, samples)
            flat[i] = keep - eps
            lo = batch_loss(params, cfg, samples)
            flat[i] = keep
            g.reshape(-1)[i] = (hi - lo) / (2 * eps)
        out[name] = g
    return out


def max_relative_error(analytic, numeric, floor=1e-7):
    worst, where = 0.0, None
    for name in analytic:
        a, n = analytic[name].reshape(-1), numeric[name].reshape(-1)
        rel = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        i = int(np.argmax(rel)) if rel.size else 0
        if rel.size and rel[i] > worst:
            worst, where = float(rel[i]), (name, i)
    return worst, where


def brute_kriging(points, gamma, query):
    """Ordinary kriging by assembling and solving the bordered system directly."""
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    A = np.ones((n + 1, n + 1))
    A[n, n] = 0.0
    for i in range(n):
        for j in range(n):
            A[i, j] = gamma(np.hypot(*(pts[i, :2] - pts[j, :2])))
    b = np.ones(n + 1)
    for i in range(n):
        b[i] = gamma(np.hypot(*(pts[i, :2] - np.asarray(query, dtype=np.float64))))
    sol = np.linalg.solve(A, b)
    return float(sol[:n] @ pts[:, 2])
