"""Offline ingestion: building polygons, spectrum logs, scenes on disk.

Buildings arrive as a GeoJSON subset (Polygon features, ``[lon, lat]``
order); measurements as a flat CSV where consecutive rows at the same
coordinate form one spectrum sweep.
"""
from __future__ import annotations

import csv
import io
import json
import math
import struct
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import _binfmt
from .errors import EmptyBandError, FormatError, InvalidValueError, OutOfExtentError, ParseError
from .grid import BuildingMap, GeoExtent, NormRange, latlon_to_pixel, merge_points, normalize_dbm

SCENE_MAGIC = b"RMSC1\n"
_POINT = struct.Struct("<HHf")


class SkippedFeatureWarning(UserWarning):
    """A GeoJSON feature was ignored because it is not a Polygon."""


@dataclass(frozen=True)
class BuildingPolygon:
    ring: tuple[tuple[float, float], ...]  # (lat, lon), closed

    def __post_init__(self):
        ring = tuple((float(lat), float(lon)) for lat, lon in self.ring)
        if len(set(ring)) < 3:
            raise InvalidValueError("polygon needs at least 3 distinct vertices")
        if ring[0] != ring[-1]:
            ring = ring + (ring[0],)
        object.__setattr__(self, "ring", ring)


@dataclass(frozen=True)
class Band:
    lo: float
    hi: float

    def __post_init__(self):
        if not self.lo < self.hi:
            raise InvalidValueError(f"band lo {self.lo} must be < hi {self.hi}")


@dataclass
class SpectrumSweep:
    rows: list[tuple[float, float]]  # (freq MHz, dBm)

    def __post_init__(self):
        freqs = [f for f, _ in self.rows]
        if any(b <= a for a, b in zip(freqs, freqs[1:])):
            raise InvalidValueError("sweep frequencies must be strictly increasing")
        if not all(math.isfinite(s) for _, s in self.rows):
            raise InvalidValueError("sweep strengths must be finite")


@dataclass
class Scene:
    buildings: BuildingMap
    extent: GeoExtent
    band: Band
    norm: NormRange
    points: list[tuple[int, int, float]] = field(default_factory=list)

    def __post_init__(self):
        h, w = self.shape
        seen = set()
        pts = []
        for r, c, v in sorted(self.points, key=lambda p: (p[0], p[1])):
            r, c = int(r), int(c)
            if not (0 <= r < h and 0 <= c < w):
                raise InvalidValueError(f"point ({r}, {c}) outside {h}x{w} grid")
            if (r, c) in seen:
                raise InvalidValueError(f"duplicate point pixel ({r}, {c})")
            if not 0.0 <= v <= 1.0:
                raise InvalidValueError(f"point value {v} outside [0, 1]")
            seen.add((r, c))
            # stored as float32 on disk; keep memory identical to a round-trip
            pts.append((r, c, float(np.float32(v))))
        self.points = pts

    @property
    def shape(self) -> tuple[int, int]:
        return self.buildings.height, self.buildings.width


def parse_buildings(document: str, source=None) -> list[BuildingPolygon]:
    """Extract one polygon per Polygon feature's outer ring.

    Non-polygon features are skipped with a ``SkippedFeatureWarning`` each.
    """
    try:
        doc = json.loads(document)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, line=exc.lineno, source=source) from exc
    if isinstance(doc, dict) and doc.get("type") == "FeatureCollection":
        features = doc.get("features")
        if not isinstance(features, list):
            raise ParseError("FeatureCollection without a features list", source=source)
    elif isinstance(doc, dict) and doc.get("type") == "Feature":
        features = [doc]
    else:
        raise ParseError("expected a FeatureCollection or Feature", source=source)

    polygons = []
    for i, feat in enumerate(features):
        if not isinstance(feat, dict) or not isinstance(feat.get("geometry"), dict):
            raise ParseError("feature has no geometry object", feature=i, source=source)
        geom = feat["geometry"]
        if geom.get("type") != "Polygon":
            warnings.warn(f"feature {i}: skipping {geom.get('type')} geometry",
                          SkippedFeatureWarning, stacklevel=2)
            continue
        coords = geom.get("coordinates")
        try:
            outer = coords[0]
            ring = [(float(pt[1]), float(pt[0])) for pt in outer]
            polygons.append(BuildingPolygon(tuple(ring)))
        except (TypeError, IndexError, ValueError) as exc:
            raise ParseError(f"bad polygon coordinates ({exc})", feature=i, source=source) from exc
    return polygons


def points_in_polygon(ring: Sequence[tuple[float, float]], lat: np.ndarray, lon: np.ndarray) -> np.ndarray:
    """Even-odd containment of (lat, lon) points; points on an edge count as inside."""
    x = np.asarray(lon, dtype=np.float64)
    y = np.asarray(lat, dtype=np.float64)
    inside = np.zeros(x.shape, dtype=bool)
    on_edge = np.zeros(x.shape, dtype=bool)
    scale = max(1.0, max(abs(v) for pt in ring for v in pt))
    tol = 1e-12 * scale
    for (y1, x1), (y2, x2) in zip(ring, ring[1:]):
        cross = (x2 - x1) * (y - y1) - (y2 - y1) * (x - x1)
        seg = math.hypot(x2 - x1, y2 - y1)
        on_edge |= ((np.abs(cross) <= tol * max(seg, 1.0))
                    & (x >= min(x1, x2) - tol) & (x <= max(x1, x2) + tol)
                    & (y >= min(y1, y2) - tol) & (y <= max(y1, y2) + tol))
        straddle = (y1 > y) != (y2 > y)
        if y2 != y1:
            x_at = x1 + (y - y1) * (x2 - x1) / (y2 - y1)
            inside ^= straddle & (x < x_at)
    return inside | on_edge


def rasterize(polygons: Iterable[BuildingPolygon], extent: GeoExtent, h: int, w: int) -> BuildingMap:
    """Mark every cell whose center lies in (or on) a polygon."""
    lats, lons = extent.cell_centers(h, w)
    lat_grid, lon_grid = np.meshgrid(lats, lons, indexing="ij")
    occ = np.zeros((h, w), dtype=bool)
    for poly in polygons:
        occ |= points_in_polygon(poly.ring, lat_grid, lon_grid)
    return BuildingMap(occ.astype(np.uint8))


def band_average(sweep: SpectrumSweep, band: Band, domain: str = "db") -> float:
    """Mean strength (dBm) over rows with ``band.lo <= f <= band.hi``.

    ``domain="linear"`` averages in milliwatts and converts back to dBm.
    """
    vals = [s for f, s in sweep.rows if band.lo <= f <= band.hi]
    if not vals:
        raise EmptyBandError(band)
    if domain == "db":
        return math.fsum(vals) / len(vals)
    if domain == "linear":
        return 10.0 * math.log10(math.fsum(10.0 ** (v / 10.0) for v in vals) / len(vals))
    raise ValueError(f"unknown averaging domain {domain!r}")


def parse_measurements(text: str, source=None) -> list[tuple[float, float, SpectrumSweep]]:
    """Read the ``lat,lon,freq_mhz,dbm`` CSV into (lat, lon, sweep) triples."""
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("empty measurement file", line=1, source=source) from None
    if [h.strip() for h in header] != ["lat", "lon", "freq_mhz", "dbm"]:
        raise ParseError(f"expected header lat,lon,freq_mhz,dbm, got {','.join(header)}",
                         line=1, source=source)
    out: list[tuple[float, float, SpectrumSweep]] = []
    cur_key = None
    cur_rows: list[tuple[float, float]] = []
    start_line = 2

    def flush():
        if cur_key is None:
            return
        try:
            out.append((cur_key[0], cur_key[1], SpectrumSweep(cur_rows)))
        except InvalidValueError as exc:
            raise ParseError(str(exc), line=start_line, source=source) from exc

    for lineno, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != 4:
            raise ParseError(f"expected 4 columns, got {len(row)}", line=lineno, source=source)
        try:
            lat, lon, freq, dbm = (float(cell) for cell in row)
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno, source=source) from exc
        if not all(math.isfinite(v) for v in (lat, lon, freq, dbm)):
            raise ParseError("non-finite value", line=lineno, source=source)
        if (lat, lon) != cur_key:
            flush()
            cur_key, cur_rows, start_line = (lat, lon), [], lineno
        cur_rows.append((freq, dbm))
    flush()
    return out


def assemble_scene(polygons, measurements, extent: GeoExtent, band: Band, norm: NormRange,
                   h: int, w: int, domain: str = "db") -> Scene:
    """Rasterize buildings and drop each band-averaged measurement on its pixel.

    Measurements landing on the same pixel are averaged after normalization.
    """
    buildings = rasterize(polygons, extent, h, w)
    raw = []
    for i, (lat, lon, sweep) in enumerate(measurements):
        try:
            r, c = latlon_to_pixel(extent, lat, lon, h, w)
            v = normalize_dbm(band_average(sweep, band, domain), norm)
        except EmptyBandError as exc:
            raise EmptyBandError(band, index=i) from exc
        except OutOfExtentError as exc:
            raise OutOfExtentError(exc.axis, exc.value, exc.lo, exc.hi, index=i) from exc
        raw.append((r, c, v))
    return Scene(buildings, extent, band, norm, merge_points(raw))


def scene_to_bytes(scene: Scene) -> bytes:
    h, w = scene.shape
    header = {
        "band_lo_mhz": scene.band.lo, "band_hi_mhz": scene.band.hi,
        "norm_lo_dbm": scene.norm.lo_dbm, "norm_hi_dbm": scene.norm.hi_dbm,
        "lat_min": scene.extent.lat_min, "lat_max": scene.extent.lat_max,
        "lon_min": scene.extent.lon_min, "lon_max": scene.extent.lon_max,
    }
    # floats always serialize as floats so a read-back file re-encodes identically
    header = {k: float(v) for k, v in header.items()}
    header.update(h=h, w=w, n_points=len(scene.points))
    parts = [SCENE_MAGIC, _binfmt.dump_header(header), scene.buildings.occupancy.tobytes()]
    parts.extend(_POINT.pack(r, c, v) for r, c, v in scene.points)
    return b"".join(parts)


def scene_from_bytes(data: bytes) -> Scene:
    header, payload = _binfmt.split_header(data, SCENE_MAGIC)
    h = _binfmt.header_int(header, "h", 1, 65535)
    w = _binfmt.header_int(header, "w", 1, 65535)
    n = _binfmt.header_int(header, "n_points")
    _binfmt.check_payload(payload, h * w + n * _POINT.size, f"scene with n_points={n}")
    occ = np.frombuffer(payload[:h * w], dtype=np.uint8).reshape(h, w)
    if np.any(occ > 1):
        raise FormatError("occupancy bytes must be 0 or 1")
    points = [_POINT.unpack_from(payload, h * w + i * _POINT.size) for i in range(n)]
    try:
        return Scene(
            BuildingMap(occ.copy()),
            GeoExtent(_binfmt.header_float(header, "lat_min"), _binfmt.header_float(header, "lat_max"),
                      _binfmt.header_float(header, "lon_min"), _binfmt.header_float(header, "lon_max")),
            Band(_binfmt.header_float(header, "band_lo_mhz"), _binfmt.header_float(header, "band_hi_mhz")),
            NormRange(_binfmt.header_float(header, "norm_lo_dbm"), _binfmt.header_float(header, "norm_hi_dbm")),
            points,
        )
    except InvalidValueError as exc:
        raise FormatError(f"invalid scene contents: {exc}") from exc


def write_scene(scene: Scene, destination) -> None:
    _binfmt.write_bytes(destination, scene_to_bytes(scene))


def read_scene(source) -> Scene:
    return scene_from_bytes(_binfmt.read_bytes(source))
