"""Grids, geographic calibration, normalization, pooling and cropping.

Pixel convention: row 0 is the north edge, column 0 the west edge, and a
pixel's position is its center.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import BoundsError, DimensionError, InvalidValueError, OutOfExtentError


@dataclass(frozen=True)
class GeoExtent:
    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float

    def __post_init__(self):
        if not self.lat_min < self.lat_max:
            raise InvalidValueError(f"lat_min {self.lat_min} must be < lat_max {self.lat_max}")
        if not self.lon_min < self.lon_max:
            raise InvalidValueError(f"lon_min {self.lon_min} must be < lon_max {self.lon_max}")

    def cell_centers(self, h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
        """Latitudes of row centers and longitudes of column centers."""
        lats = self.lat_max - (np.arange(h) + 0.5) * ((self.lat_max - self.lat_min) / h)
        lons = self.lon_min + (np.arange(w) + 0.5) * ((self.lon_max - self.lon_min) / w)
        return lats, lons


@dataclass(frozen=True)
class NormRange:
    lo_dbm: float = -120.0
    hi_dbm: float = -20.0

    def __post_init__(self):
        if not (math.isfinite(self.lo_dbm) and math.isfinite(self.hi_dbm)):
            raise InvalidValueError("normalization bounds must be finite")
        if not self.lo_dbm < self.hi_dbm:
            raise InvalidValueError(f"lo_dbm {self.lo_dbm} must be < hi_dbm {self.hi_dbm}")


class RadioMap:
    """Dense grid of signal strengths, normally in [0, 1]."""

    def __init__(self, values):
        values = np.asarray(values, dtype=np.float32)
        if values.ndim != 2:
            raise DimensionError(f"radio map must be 2-D, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise InvalidValueError("radio map contains non-finite values")
        self.values = values

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    def __eq__(self, other):
        return isinstance(other, RadioMap) and np.array_equal(self.values, other.values)

    def __repr__(self):
        return f"RadioMap({self.height}x{self.width})"


class BuildingMap:
    """Binary occupancy grid; 1 marks a building footprint."""

    def __init__(self, occupancy):
        occ = np.asarray(occupancy)
        if occ.ndim != 2:
            raise DimensionError(f"building map must be 2-D, got shape {occ.shape}")
        if not np.all((occ == 0) | (occ == 1)):
            raise InvalidValueError("building map cells must be 0 or 1")
        self.occupancy = occ.astype(np.uint8)

    @property
    def height(self) -> int:
        return self.occupancy.shape[0]

    @property
    def width(self) -> int:
        return self.occupancy.shape[1]

    def __eq__(self, other):
        return isinstance(other, BuildingMap) and np.array_equal(self.occupancy, other.occupancy)

    def __repr__(self):
        return f"BuildingMap({self.height}x{self.width})"


def latlon_to_pixel(extent: GeoExtent, lat: float, lon: float, h: int, w: int) -> tuple[int, int]:
    """Map a coordinate to the (row, col) of the pixel containing it.

    Coordinates on the south/east boundary clamp into the last row/column.
    """
    if not (extent.lat_min <= lat <= extent.lat_max):
        raise OutOfExtentError("lat", lat, extent.lat_min, extent.lat_max)
    if not (extent.lon_min <= lon <= extent.lon_max):
        raise OutOfExtentError("lon", lon, extent.lon_min, extent.lon_max)
    row = math.floor((extent.lat_max - lat) / (extent.lat_max - extent.lat_min) * h)
    col = math.floor((lon - extent.lon_min) / (extent.lon_max - extent.lon_min) * w)
    return min(max(row, 0), h - 1), min(max(col, 0), w - 1)


def normalize_dbm(v, norm: NormRange = NormRange()):
    """Scale dBm into [0, 1] over ``norm``; values outside the range clamp."""
    arr = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise InvalidValueError(f"non-finite signal strength: {v!r}")
    out = np.clip((arr - norm.lo_dbm) / (norm.hi_dbm - norm.lo_dbm), 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def denormalize_dbm(u, norm: NormRange = NormRange()):
    arr = np.asarray(u, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise InvalidValueError(f"non-finite normalized value: {u!r}")
    out = norm.lo_dbm + arr * (norm.hi_dbm - norm.lo_dbm)
    return float(out) if out.ndim == 0 else out


def avg_pool(grid, factor: int):
    """Block-average a RadioMap or BuildingMap by an integer factor.

    Pooled building cells are re-binarized: mean >= 0.5 becomes 1.
    """
    if isinstance(factor, bool) or not isinstance(factor, (int, np.integer)) or factor < 1:
        raise DimensionError(f"pooling factor must be a positive integer, got {factor!r}")
    if isinstance(grid, BuildingMap):
        data = grid.occupancy
    elif isinstance(grid, RadioMap):
        data = grid.values
    else:
        raise TypeError(f"cannot pool {type(grid).__name__}")
    h, w = data.shape
    if h % factor or w % factor:
        raise DimensionError(f"factor {factor} does not divide map size {h}x{w}")
    if factor == 1:
        return type(grid)(data.copy())
    blocks = data.astype(np.float64).reshape(h // factor, factor, w // factor, factor)
    means = blocks.mean(axis=(1, 3))
    if isinstance(grid, BuildingMap):
        return BuildingMap((means >= 0.5).astype(np.uint8))
    return RadioMap(means.astype(np.float32))


def merge_points(points: Iterable[Sequence]) -> list[tuple[int, int, float]]:
    """Collapse points sharing a pixel to their mean value, sorted by (row, col)."""
    acc: dict[tuple[int, int], list[float]] = {}
    for r, c, v in points:
        acc.setdefault((int(r), int(c)), []).append(float(v))
    return [(r, c, math.fsum(vs) / len(vs)) for (r, c), vs in sorted(acc.items())]


def pool_points(points: Iterable[Sequence], factor: int) -> list[tuple[int, int, float]]:
    """Move sparse points onto a grid pooled by ``factor``; collisions are averaged."""
    if factor < 1:
        raise DimensionError(f"pooling factor must be a positive integer, got {factor!r}")
    return merge_points((r // factor, c // factor, v) for r, c, v in points)


def crop(buildings: BuildingMap, radio: RadioMap | None, origin: tuple[int, int], size: int,
         points: Iterable[Sequence] = ()):
    """Cut a size x size window starting at ``origin`` from a map pair.

    Points are tuples whose first two items are (row, col); they come back
    shifted by -origin, and points outside the window are dropped.
    """
    r0, c0 = origin
    h, w = buildings.height, buildings.width
    if radio is not None and (radio.height, radio.width) != (h, w):
        raise DimensionError(f"radio map {radio.height}x{radio.width} != building map {h}x{w}")
    if size < 1 or r0 < 0 or c0 < 0 or r0 + size > h or c0 + size > w:
        raise BoundsError(f"window origin {origin} size {size} exceeds map {h}x{w}")
    b = BuildingMap(buildings.occupancy[r0:r0 + size, c0:c0 + size].copy())
    m = RadioMap(radio.values[r0:r0 + size, c0:c0 + size].copy()) if radio is not None else None
    kept = []
    for p in points:
        r, c = p[0] - r0, p[1] - c0
        if 0 <= r < size and 0 <= c < size:
            kept.append((r, c, *p[2:]))
    return b, m, kept
