"""Ordinary kriging baseline with isotropic variogram models.

Distances are Euclidean in pixel units. ``sill`` is the total sill
(nugget included), so a pure-nugget model has ``sill == nugget``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidValueError, KrigingError

KINDS = ("exponential", "spherical", "gaussian")
SILL_FLOOR = 1e-12
JITTER = 1e-10


@dataclass(frozen=True)
class VariogramModel:
    kind: str = "exponential"
    nugget: float = 0.0
    sill: float = 1.0
    range_param: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidValueError(f"unknown variogram kind {self.kind!r}")
        if not (self.nugget >= 0 and self.sill > 0 and self.range_param > 0):
            raise InvalidValueError(f"invalid variogram parameters {self}")
        if self.nugget > self.sill:
            raise InvalidValueError("nugget cannot exceed the total sill")

    def __call__(self, lag):
        """Semivariance at ``lag``; zero at lag 0 by convention."""
        lag = np.asarray(lag, dtype=np.float64)
        g = self.nugget + (self.sill - self.nugget) * _shape(self.kind, lag / self.range_param)
        return np.where(lag == 0, 0.0, g)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "nugget": self.nugget, "sill": self.sill, "range": self.range_param}

    @classmethod
    def from_dict(cls, d: dict) -> "VariogramModel":
        return cls(d["kind"], float(d["nugget"]), float(d["sill"]), float(d["range"]))


def _shape(kind, t):
    if kind == "exponential":
        return 1.0 - np.exp(-t)
    if kind == "spherical":
        return np.where(t < 1.0, 1.5 * t - 0.5 * t ** 3, 1.0)
    return 1.0 - np.exp(-t * t)


def _split_points(points):
    arr = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    return arr[:, :2], arr[:, 2]


def empirical_variogram(points, n_bins: int = 10, max_lag: float | None = None):
    """Binned semivariances ``[(mean lag, semivariance, pair count), ...]``.

    Every unordered pair of distinct locations contributes half its squared
    value difference; coincident locations are ignored. Bins split
    ``[0, max_lag]`` evenly and empty bins are left out.
    """
    xy, v = _split_points(points)
    if len(v) < 2:
        raise KrigingError(f"need at least 2 points for a variogram, got {len(v)}")
    if n_bins < 1:
        raise InvalidValueError("n_bins must be >= 1")
    i, j = np.triu_indices(len(v), k=1)
    lag = np.hypot(*(xy[i] - xy[j]).T)
    semi = 0.5 * (v[i] - v[j]) ** 2
    keep = lag > 0
    lag, semi = lag[keep], semi[keep]
    if max_lag is None:
        max_lag = float(lag.max()) if len(lag) else 0.0
    if max_lag <= 0:
        return []
    inside = lag <= max_lag
    lag, semi = lag[inside], semi[inside]
    idx = np.minimum((lag / (max_lag / n_bins)).astype(np.int64), n_bins - 1)
    out = []
    for b in range(n_bins):
        sel = idx == b
        n = int(sel.sum())
        if n:
            out.append((float(lag[sel].mean()), float(semi[sel].mean()), n))
    return out


def _fit_linear(f, y, w):
    """Best (nugget, partial sill) >= 0 for y ~ a + b f under weights w."""
    sw, swf, swff = w.sum(), (w * f).sum(), (w * f * f).sum()
    swy, swfy = (w * y).sum(), (w * f * y).sum()
    cands = [(0.0, 0.0)]
    det = sw * swff - swf * swf
    if det > 0:
        a = (swff * swy - swf * swfy) / det
        b = (sw * swfy - swf * swy) / det
        if a >= 0 and b >= 0:
            cands.append((a, b))
    if swff > 0:
        cands.append((0.0, max(swfy / swff, 0.0)))
    cands.append((max(swy / sw, 0.0), 0.0))
    best = None
    for a, b in cands:
        r = a + b * f - y
        sse = float((w * r * r).sum())
        if best is None or sse < best[0]:
            best = (sse, a, b)
    return best


def fit_variogram(empirical, kind: str = "exponential") -> VariogramModel:
    """Weighted least-squares fit (weights = pair counts) of nugget, sill and range.

    The range is located by repeated grid refinement on a log scale; for a
    fixed range the nugget and partial sill solve a bounded linear problem
    exactly. Flat input yields a flat model.
    """
    if kind not in KINDS:
        raise InvalidValueError(f"unknown variogram kind {kind!r}")
    rows = [(h, g, n) for h, g, n in empirical if n > 0]
    if len(rows) < 3:
        raise KrigingError(f"need at least 3 nonempty bins to fit, got {len(rows)}")
    h = np.array([r[0] for r in rows])
    y = np.array([r[1] for r in rows])
    w = np.array([r[2] for r in rows], dtype=np.float64)
    w = w / w.sum()
    hmax = float(h.max())
    if not np.any(y > 0):
        return VariogramModel(kind, 0.0, SILL_FLOOR, 1e3 * hmax)

    def objective(r):
        return _fit_linear(_shape(kind, h / r), y, w)

    lo, hi = math.log(max(float(h[h > 0].min()), 1e-9) * 1e-2), math.log(hmax * 1e2)
    best_r = None
    n_grid = 41
    for _ in range(60):
        grid = np.exp(np.linspace(lo, hi, n_grid))
        scores = [objective(r)[0] for r in grid]
        k = int(np.argmin(scores))
        best_r = float(grid[k])
        step = (hi - lo) / (n_grid - 1)
        lo, hi = math.log(best_r) - step, math.log(best_r) + step
        if step < 1e-12:
            break
    _, a, b = objective(best_r)
    sill = a + b
    if sill <= 0:
        return VariogramModel(kind, 0.0, SILL_FLOOR, 1e3 * hmax)
    return VariogramModel(kind, float(a), float(sill), best_r)


def _solve(A, B):
    try:
        sol = np.linalg.solve(A, B)
        if np.all(np.isfinite(sol)):
            return sol
    except np.linalg.LinAlgError:
        pass
    A = A.copy()
    n = A.shape[-1] - 1
    A[..., np.arange(n), np.arange(n)] += JITTER
    try:
        sol = np.linalg.solve(A, B)
    except np.linalg.LinAlgError as exc:
        raise KrigingError("kriging system is singular even with jitter") from exc
    if not np.all(np.isfinite(sol)):
        raise KrigingError("kriging system produced non-finite weights")
    return sol


def kriging_weights(xy, model: VariogramModel, queries):
    """Ordinary-kriging weights (n, q) and Lagrange multipliers (q,) for each query."""
    xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
    q = np.asarray(queries, dtype=np.float64).reshape(-1, 2)
    n = len(xy)
    if n < 1:
        raise KrigingError("kriging needs at least one point")
    # weights are invariant to scaling the variogram; keep the system O(1)
    scale = model.sill
    A = np.ones((n + 1, n + 1))
    A[:n, :n] = model(np.hypot(*(xy[:, None, :] - xy[None, :, :]).transpose(2, 0, 1))) / scale
    A[n, n] = 0.0
    B = np.ones((n + 1, len(q)))
    B[:n] = model(np.hypot(*(xy[:, None, :] - q[None, :, :]).transpose(2, 0, 1))) / scale
    sol = _solve(A, B)
    return sol[:n], sol[n] * scale, B[:n] * scale


def krige_predict(points, model: VariogramModel, query) -> tuple[float, float]:
    """Kriged value and kriging variance at a single (row, col)."""
    xy, v = _split_points(points)
    w, mu, g0 = kriging_weights(xy, model, [query])
    return float(w[:, 0] @ v), float(w[:, 0] @ g0[:, 0] + mu[0])


def krige_many(points, model: VariogramModel, queries, knn: int | None = None):
    """Values and variances at many queries; ``knn`` limits each system to the nearest points."""
    xy, v = _split_points(points)
    q = np.asarray(queries, dtype=np.float64).reshape(-1, 2)
    if not knn or knn >= len(v):
        w, mu, g0 = kriging_weights(xy, model, q)
        return w.T @ v, (w * g0).sum(axis=0) + mu
    d = np.hypot(*(q[:, None, :] - xy[None, :, :]).transpose(2, 0, 1))
    nbr = np.argsort(d, axis=1, kind="stable")[:, :knn]
    pxy = xy[nbr]  # (q, k, 2)
    scale = model.sill
    A = np.ones((len(q), knn + 1, knn + 1))
    A[:, :knn, :knn] = model(np.linalg.norm(pxy[:, :, None, :] - pxy[:, None, :, :], axis=-1)) / scale
    A[:, knn, knn] = 0.0
    B = np.ones((len(q), knn + 1, 1))
    B[:, :knn, 0] = np.take_along_axis(model(d), nbr, axis=1) / scale
    sol = _solve(A, B)[:, :, 0]
    w, mu = sol[:, :knn], sol[:, knn] * scale
    return (w * v[nbr]).sum(axis=1), (w * B[:, :knn, 0] * scale).sum(axis=1) + mu


def krige_grid(points, model: VariogramModel, shape, knn: int | None = None):
    """Dense (values, variances) over every pixel of ``shape``."""
    h, w = shape
    rows, cols = np.divmod(np.arange(h * w), w)
    vals, var = krige_many(points, model, np.stack([rows, cols], axis=1), knn)
    return vals.reshape(h, w), var.reshape(h, w)


def fit_points(points, kind: str = "exponential", n_bins: int = 10) -> VariogramModel:
    """Empirical variogram + fit, falling back to a single-structure guess on sparse data.

    With fewer than 3 usable bins the model takes the sample variance as
    sill, no nugget, and a third of the largest lag as range.
    """
    emp = empirical_variogram(points, n_bins)
    try:
        return fit_variogram(emp, kind)
    except KrigingError:
        pass
    xy, v = _split_points(points)
    var = float(np.var(v))
    lag = max((r[0] for r in emp), default=1.0)
    if var <= 0:
        return VariogramModel(kind, 0.0, SILL_FLOOR, 1e3 * lag)
    return VariogramModel(kind, 0.0, var, max(lag / 3.0, 1e-6))
