"""Known/query splits of sampling points."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..errors import InsufficientPointsError, InvalidValueError


@dataclass
class SampleSet:
    """Known points (coords + value), query points (coords + held-out truth),
    and optionally the remaining pixels of the grid for dense output."""

    shape: tuple[int, int]
    known_rc: np.ndarray
    known_values: np.ndarray
    query_rc: np.ndarray
    query_truth: np.ndarray | None = None
    remaining_rc: np.ndarray | None = None

    def __post_init__(self):
        self.known_rc = _as_coords(self.known_rc)
        self.query_rc = _as_coords(self.query_rc)
        if self.remaining_rc is not None:
            self.remaining_rc = _as_coords(self.remaining_rc)
        self.known_values = np.asarray(self.known_values, dtype=np.float64).reshape(-1)
        if len(self.known_values) != len(self.known_rc):
            raise InvalidValueError("known coordinates and values differ in length")
        if self.query_truth is not None:
            self.query_truth = np.asarray(self.query_truth, dtype=np.float64).reshape(-1)
            if len(self.query_truth) != len(self.query_rc):
                raise InvalidValueError("query coordinates and truth differ in length")
        h, w = self.shape
        groups = [self.known_rc, self.query_rc]
        if self.remaining_rc is not None:
            groups.append(self.remaining_rc)
        allrc = np.concatenate(groups)
        if len(allrc):
            if allrc.min() < 0 or np.any(allrc[:, 0] >= h) or np.any(allrc[:, 1] >= w):
                raise InvalidValueError(f"sample coordinates outside {h}x{w} grid")
            flat = allrc[:, 0] * w + allrc[:, 1]
            if len(np.unique(flat)) != len(flat):
                raise InvalidValueError("known, query and remaining pixels must be disjoint")

    @property
    def output_rc(self) -> np.ndarray:
        """Coordinates whose values ``forward`` predicts: query, then remaining."""
        if self.remaining_rc is None:
            return self.query_rc
        return np.concatenate([self.query_rc, self.remaining_rc])


def _as_coords(rc) -> np.ndarray:
    arr = np.asarray(rc, dtype=np.int64)
    if arr.size == 0:
        return arr.reshape(0, 2)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise InvalidValueError(f"coordinates must have shape (n, 2), got {arr.shape}")
    return arr


def split_counts(n: int) -> tuple[int, int]:
    """Known/query counts for a 2:1 split of ``n`` test points."""
    n_known = math.floor(2 * n / 3 + 0.5)
    return n_known, n - n_known


def grid_candidates(values: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Every pixel of a dense map as (coords, values)."""
    h, w = values.shape
    rows, cols = np.divmod(np.arange(h * w), w)
    return np.stack([rows, cols], axis=1), np.asarray(values, dtype=np.float64).reshape(-1)


def mask_generate(coords, values, shape: tuple[int, int], n_known: int | None = None,
                  n_query: int | None = None, seed=0, dense: bool = False) -> SampleSet:
    """Draw disjoint known and query subsets from candidate points without replacement.

    With both counts omitted, every candidate is used in a 2:1 known/query
    split. ``dense=True`` lists all other grid pixels as remaining points.
    """
    coords = _as_coords(coords)
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    if n_known is None and n_query is None:
        n_known, n_query = split_counts(len(coords))
    elif n_known is None or n_query is None:
        raise InvalidValueError("give both n_known and n_query, or neither")
    if n_known < 0 or n_query < 0:
        raise InvalidValueError("point counts must be non-negative")
    if len(coords) < n_known + n_query:
        raise InsufficientPointsError(
            f"need {n_known} known + {n_query} query points, only {len(coords)} available")
    rng = np.random.default_rng(seed)
    pick = rng.permutation(len(coords))[: n_known + n_query]
    k_idx, q_idx = pick[:n_known], pick[n_known:]
    remaining = None
    if dense:
        h, w = shape
        taken = np.zeros(h * w, dtype=bool)
        taken[coords[pick, 0] * w + coords[pick, 1]] = True
        rows, cols = np.divmod(np.flatnonzero(~taken), w)
        remaining = np.stack([rows, cols], axis=1)
    return SampleSet(shape, coords[k_idx], values[k_idx], coords[q_idx], values[q_idx], remaining)
