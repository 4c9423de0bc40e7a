import json
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from radiopit.errors import (BadMagicError, EmptyBandError, InvalidValueError, OutOfExtentError,
                             ParseError, SizeMismatchError, TruncatedError)
from radiopit.grid import BuildingMap, GeoExtent, NormRange, avg_pool
from radiopit.ingest import (Band, BuildingPolygon, Scene, SkippedFeatureWarning, SpectrumSweep,
                             assemble_scene, band_average, parse_buildings, parse_measurements,
                             points_in_polygon, rasterize, read_scene, scene_from_bytes,
                             scene_to_bytes, write_scene)

UNIT = GeoExtent(0.0, 1.0, 0.0, 1.0)
NORM = NormRange(-120, -20)


def feature(geom_type, coords):
    return {"type": "Feature", "properties": {}, "geometry": {"type": geom_type, "coordinates": coords}}


def collection(*features):
    return json.dumps({"type": "FeatureCollection", "features": list(features)})


SQUARE = [[[0, 0], [1, 0], [1, 1], [0, 1]]]


def test_parse_empty_collection():
    assert parse_buildings(collection()) == []


def test_parse_unit_square_closes_ring():
    (poly,) = parse_buildings(collection(feature("Polygon", SQUARE)))
    assert len(poly.ring) == 5
    assert poly.ring[0] == poly.ring[-1]
    # [lon, lat] in the document, (lat, lon) in the ring
    assert poly.ring[1] == (0.0, 1.0)


def test_parse_skips_non_polygons_with_warning():
    doc = collection(feature("Polygon", SQUARE), feature("Point", [0.5, 0.5]),
                     feature("Polygon", [[[2, 2], [3, 2], [3, 3], [2, 2]]]))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        polys = parse_buildings(doc)
    assert len(polys) == 2
    assert sum(issubclass(w.category, SkippedFeatureWarning) for w in caught) == 1


def test_parse_ignores_holes():
    ring = [[0, 0], [4, 0], [4, 4], [0, 4], [0, 0]]
    hole = [[1, 1], [2, 1], [2, 2], [1, 1]]
    (poly,) = parse_buildings(collection(feature("Polygon", [ring, hole])))
    assert len(poly.ring) == 5


def test_parse_errors_carry_location():
    with pytest.raises(ParseError) as ei:
        parse_buildings('{"type": "FeatureCollection",\n "features": [}')
    assert ei.value.line == 2
    bad = collection(feature("Polygon", SQUARE), feature("Polygon", [[[0, 0], [1]]]))
    with pytest.raises(ParseError) as ei:
        parse_buildings(bad)
    assert ei.value.feature == 1
    assert "feature 1" in str(ei.value)


def test_polygon_needs_three_distinct_vertices():
    with pytest.raises(InvalidValueError):
        BuildingPolygon(((0, 0), (1, 1), (0, 0)))


def test_rasterize_examples():
    assert not rasterize([], UNIT, 4, 4).occupancy.any()
    whole = BuildingPolygon(((-1, -1), (-1, 2), (2, 2), (2, -1)))
    assert rasterize([whole], UNIT, 3, 5).occupancy.all()
    west = BuildingPolygon(((0, 0), (1, 0), (1, 0.5), (0, 0.5)))
    assert rasterize([west], UNIT, 2, 2).occupancy.tolist() == [[1, 0], [1, 0]]


def test_rasterize_west_half_matches_cell_center_oracle():
    west = BuildingPolygon(((0, 0), (1, 0), (1, 0.5), (0, 0.5)))
    lats, lons = UNIT.cell_centers(2, 2)
    for r, lat in enumerate(lats):
        for c, lon in enumerate(lons):
            inside = 0 <= lat <= 1 and 0 <= lon <= 0.5
            assert rasterize([west], UNIT, 2, 2).occupancy[r, c] == inside


def test_point_in_polygon_boundary_and_even_odd():
    sq = ((0, 0), (0, 2), (2, 2), (2, 0), (0, 0))
    got = points_in_polygon(sq, np.array([1, 0, 2, 1, 3]), np.array([1, 1, 2, 0, 1]))
    assert got.tolist() == [True, True, True, True, False]
    # bow-tie lobes lie above and below the crossing at (1, 1)
    bowtie = ((0, 0), (2, 2), (2, 0), (0, 2), (0, 0))
    got = points_in_polygon(bowtie, np.array([1.5, 0.5, 1.0]), np.array([1.0, 1.0, 0.5]))
    assert got.tolist() == [True, True, False]


def test_rasterize_resolution_consistency():
    poly = BuildingPolygon(((0.13, 0.21), (0.71, 0.17), (0.83, 0.66), (0.32, 0.88)))
    coarse = rasterize([poly], UNIT, 16, 16).occupancy
    fine = avg_pool(rasterize([poly], UNIT, 32, 32), 2).occupancy
    diff = np.argwhere(coarse != fine)
    # any disagreement must sit on the polygon outline: a 3x3 window mixes in and out
    for r, c in diff:
        win = coarse[max(r - 1, 0):r + 2, max(c - 1, 0):c + 2]
        assert win.min() == 0 and win.max() == 1


@pytest.mark.parametrize("rows,band,expected", [
    ([(760, -80), (770, -90)], Band(758, 788), -85.0),
    ([(2450, -60)], Band(2402, 2482), -60.0),
    ([(700, -50), (760, -80)], Band(758, 788), -80.0),
])
def test_band_average_examples(rows, band, expected):
    assert band_average(SpectrumSweep(rows), band) == expected


def test_band_average_linear_domain_and_empty():
    sweep = SpectrumSweep([(760, -80), (770, -80)])
    assert band_average(sweep, Band(758, 788), "linear") == pytest.approx(-80.0)
    two = SpectrumSweep([(760, -70), (770, -80)])
    assert band_average(two, Band(758, 788), "linear") > band_average(two, Band(758, 788))
    with pytest.raises(EmptyBandError):
        band_average(sweep, Band(1805, 1824))


@settings(max_examples=30)
@given(st.lists(st.floats(-130, -10), min_size=1, max_size=8),
       st.lists(st.floats(-130, -10), max_size=8))
def test_band_average_ignores_out_of_band_rows(inband, outband):
    rows = [(1806 + i, v) for i, v in enumerate(inband)]
    extra = [(100 + i, v) for i, v in enumerate(outband)]
    band = Band(1805, 1824)
    assert band_average(SpectrumSweep(extra + rows), band) == band_average(SpectrumSweep(rows), band)


def test_sweep_validation():
    with pytest.raises(InvalidValueError):
        SpectrumSweep([(770, -80), (760, -80)])
    with pytest.raises(InvalidValueError):
        SpectrumSweep([(760, float("nan"))])


def test_parse_measurements_groups_sweeps():
    text = "lat,lon,freq_mhz,dbm\n0.5,0.5,760,-80\n0.5,0.5,770,-90\n0.2,0.3,760,-60\n"
    ms = parse_measurements(text)
    assert [(lat, lon, len(s.rows)) for lat, lon, s in ms] == [(0.5, 0.5, 2), (0.2, 0.3, 1)]
    assert parse_measurements("lat,lon,freq_mhz,dbm\n") == []


def test_parse_measurements_errors_have_lines():
    with pytest.raises(ParseError) as ei:
        parse_measurements("lat,lon,freq_mhz,dbm\n0.5,0.5,760,-80\n0.5,x,760,-80\n")
    assert ei.value.line == 3
    with pytest.raises(ParseError) as ei:
        parse_measurements("a,b,c\n")
    assert ei.value.line == 1
    with pytest.raises(ParseError) as ei:
        parse_measurements("lat,lon,freq_mhz,dbm\n1,1,770,-80\n1,1,760,-80\n")
    assert ei.value.line == 2


def sweep(dbm, freq=1810.0):
    return SpectrumSweep([(freq, dbm)])


def test_assemble_scene_examples():
    band = Band(1805, 1824)
    empty = assemble_scene([], [], UNIT, band, NORM, 8, 8)
    assert empty.points == []
    one = assemble_scene([], [(0.5, 0.5, sweep(-70))], UNIT, band, NORM, 8, 8)
    assert one.points == [(4, 4, 0.5)]
    lo = -120 + 0.4 * 100
    hi = -120 + 0.6 * 100
    two = assemble_scene([], [(0.5, 0.5, sweep(lo)), (0.49, 0.51, sweep(hi))], UNIT, band, NORM, 8, 8)
    assert len(two.points) == 1
    assert two.points[0][2] == pytest.approx(0.5, abs=1e-7)


def test_assemble_scene_errors_carry_index():
    band = Band(1805, 1824)
    with pytest.raises(OutOfExtentError) as ei:
        assemble_scene([], [(0.5, 0.5, sweep(-70)), (2.0, 0.5, sweep(-70))], UNIT, band, NORM, 8, 8)
    assert ei.value.index == 1 and ei.value.axis == "lat"
    with pytest.raises(EmptyBandError) as ei:
        assemble_scene([], [(0.5, 0.5, sweep(-70, freq=700))], UNIT, band, NORM, 8, 8)
    assert ei.value.index == 0


def one_point_scene():
    return assemble_scene([], [(0.5, 0.5, sweep(-70))], UNIT, Band(1805, 1824), NORM, 8, 8)


def test_scene_roundtrip(tmp_path):
    s = one_point_scene()
    path = tmp_path / "s.rmsc"
    write_scene(s, path)
    back = read_scene(path)
    assert back == s
    assert scene_to_bytes(back) == path.read_bytes()


def test_scene_format_layout():
    s = one_point_scene()
    data = scene_to_bytes(s)
    assert data.startswith(b"RMSC1\n")
    nl = data.index(b"\n", 6)
    header = json.loads(data[6:nl])
    assert header["n_points"] == 1 and header["h"] == 8 and header["w"] == 8
    body = data[nl + 1:]
    assert len(body) == 64 + 8
    assert body[64:] == np.array([4], "<u2").tobytes() * 2 + np.array([0.5], "<f4").tobytes()


def test_scene_format_errors():
    data = scene_to_bytes(one_point_scene())
    with pytest.raises(BadMagicError):
        scene_from_bytes(b"XXXX" + data[4:])
    with pytest.raises(SizeMismatchError):
        scene_from_bytes(data + b"\0")
    s5 = Scene(BuildingMap(np.zeros((4, 4), np.uint8)), UNIT, Band(1, 2), NORM,
               [(i, 0, 0.1) for i in range(4)])
    raw = scene_to_bytes(s5).replace(b'"n_points":4', b'"n_points":5')
    with pytest.raises(TruncatedError):
        scene_from_bytes(raw)


@settings(max_examples=25)
@given(st.integers(1, 12), st.integers(1, 12), st.integers(0, 2 ** 31))
def test_scene_write_read_write_identity(h, w, seed):
    rng = np.random.default_rng(seed)
    occ = (rng.random((h, w)) < 0.3).astype(np.uint8)
    n = int(rng.integers(0, h * w + 1))
    cells = rng.choice(h * w, n, replace=False)
    pts = [(int(i // w), int(i % w), float(rng.random())) for i in cells]
    s = Scene(BuildingMap(occ), GeoExtent(10.0, 10.5, 20.0, 20.25), Band(758, 788), NORM, pts)
    blob = scene_to_bytes(s)
    assert scene_to_bytes(scene_from_bytes(blob)) == blob
    assert scene_from_bytes(blob) == s


def test_scene_validation():
    b = BuildingMap(np.zeros((2, 2), np.uint8))
    with pytest.raises(InvalidValueError):
        Scene(b, UNIT, Band(1, 2), NORM, [(2, 0, 0.5)])
    with pytest.raises(InvalidValueError):
        Scene(b, UNIT, Band(1, 2), NORM, [(0, 0, 0.5), (0, 0, 0.1)])
    with pytest.raises(InvalidValueError):
        Scene(b, UNIT, Band(1, 2), NORM, [(0, 0, 1.5)])
