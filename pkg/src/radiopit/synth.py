"""Deterministic synthetic radio maps: log-distance loss with building walls.

Values are produced directly in normalized units. Each map has one
transmitter and a handful of axis-aligned rectangular buildings; a pixel
loses ``wall_loss`` for every building run the straight line from the
transmitter crosses.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from . import _binfmt
from .errors import GenerationError, InvalidValueError
from .grid import BuildingMap, GeoExtent, NormRange, RadioMap
from .ingest import Band, Scene

MAP_MAGIC = b"RMAP1\n"
K_D = 0.25
MIN_SIDE, MAX_SIDE = 3, 20
PLACEMENT_TRIES = 100


@dataclass(frozen=True)
class SynthConfig:
    h: int = 64
    w: int = 64
    n_buildings: int = 6
    p0: float = 1.0
    n_exp: float = 2.0
    wall_loss: float = 0.1
    shadow_sigma: float = 0.02
    k_d: float = K_D
    seed: int = 0

    def __post_init__(self):
        if self.h < 1 or self.w < 1:
            raise InvalidValueError("map size must be positive")
        if self.n_buildings < 0:
            raise InvalidValueError("n_buildings must be >= 0")
        if not self.n_exp > 0:
            raise InvalidValueError("n_exp must be > 0")
        if self.wall_loss < 0:
            raise InvalidValueError("wall_loss must be >= 0")
        if self.shadow_sigma < 0:
            raise InvalidValueError("shadow_sigma must be >= 0")


def wall_crossings(occupancy: np.ndarray, tx: tuple[int, int]) -> np.ndarray:
    """Count building runs on the segment from the tx center to every pixel center.

    Cells are visited in supercover order (every cell the segment touches).
    Where the segment passes exactly through a grid corner the two side cells
    form a single step that is a building if either of them is.
    """
    occ = np.asarray(occupancy).astype(bool)
    h, w = occ.shape
    tr, tc = tx
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    dr, dc = (rows - tr).ravel(), (cols - tc).ravel()
    sy, sx = np.sign(dr), np.sign(dc)
    ady, adx = np.abs(dr), np.abs(dc)
    n = h * w
    cr = np.full(n, tr)
    cc = np.full(n, tc)
    ky = np.zeros(n, dtype=np.int64)
    kx = np.zeros(n, dtype=np.int64)
    prev = np.full(n, occ[tr, tc])
    runs = prev.astype(np.int64)

    def visit(mask, cell_occ):
        runs[mask] += (cell_occ & ~prev[mask])
        prev[mask] = cell_occ

    active = (kx < adx) | (ky < ady)
    while active.any():
        can_x = kx < adx
        can_y = ky < ady
        # next boundary crossings at t = (2k+1) / (2|d|); compare cross-multiplied
        tx_next = (2 * kx + 1) * ady
        ty_next = (2 * ky + 1) * adx
        step_x = can_x & (~can_y | (tx_next < ty_next))
        step_y = can_y & (~can_x | (ty_next < tx_next))
        diag = can_x & can_y & (tx_next == ty_next)

        cc[step_x] += sx[step_x]
        kx[step_x] += 1
        cr[step_y] += sy[step_y]
        ky[step_y] += 1
        single = step_x | step_y
        visit(single, occ[cr[single], cc[single]])

        if diag.any():
            d = diag
            sides = occ[cr[d] + sy[d], cc[d]] | occ[cr[d], cc[d] + sx[d]]
            visit(d, sides)
            cr[d] += sy[d]
            cc[d] += sx[d]
            ky[d] += 1
            kx[d] += 1
            visit(d, occ[cr[d], cc[d]])
        active = (kx < adx) | (ky < ady)
    return runs.reshape(h, w)


def path_loss_field(occupancy: np.ndarray, tx: tuple[int, int], p0: float, n_exp: float,
                    wall_loss: float, k_d: float = K_D, noise: np.ndarray | None = None) -> np.ndarray:
    """Noise-free (unless ``noise`` is given) normalized field, clamped to [0, 1]."""
    h, w = np.shape(occupancy)
    rows, cols = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    d = np.hypot(rows - tx[0], cols - tx[1])
    val = p0 - k_d * n_exp * np.log10(np.maximum(d, 1.0)) - wall_loss * wall_crossings(occupancy, tx)
    if noise is not None:
        val = val + noise
    return np.clip(val, 0.0, 1.0)


def _place_buildings(rng: np.random.Generator, cfg: SynthConfig, tx: tuple[int, int]) -> np.ndarray:
    occ = np.zeros((cfg.h, cfg.w), dtype=np.uint8)
    for b in range(cfg.n_buildings):
        for _ in range(PLACEMENT_TRIES):
            bh = min(int(rng.integers(MIN_SIDE, MAX_SIDE + 1)), cfg.h)
            bw = min(int(rng.integers(MIN_SIDE, MAX_SIDE + 1)), cfg.w)
            top = int(rng.integers(0, cfg.h - bh + 1))
            left = int(rng.integers(0, cfg.w - bw + 1))
            if not (top <= tx[0] < top + bh and left <= tx[1] < left + bw):
                occ[top:top + bh, left:left + bw] = 1
                break
        else:
            raise GenerationError(f"could not place building {b} clear of the transmitter "
                                  f"after {PLACEMENT_TRIES} tries")
    return occ


def generate_map(cfg: SynthConfig) -> tuple[RadioMap, BuildingMap, tuple[int, int]]:
    """Dense truth map, building map and transmitter pixel for ``cfg.seed``."""
    rng = np.random.default_rng(cfg.seed)
    tx = (int(rng.integers(0, cfg.h)), int(rng.integers(0, cfg.w)))
    occ = _place_buildings(rng, cfg, tx)
    noise = rng.normal(0.0, cfg.shadow_sigma, size=(cfg.h, cfg.w)) if cfg.shadow_sigma > 0 else None
    values = path_loss_field(occ, tx, cfg.p0, cfg.n_exp, cfg.wall_loss, cfg.k_d, noise)
    return RadioMap(values.astype(np.float32)), BuildingMap(occ), tx


def generate_dataset(cfg: SynthConfig, count: int, base_seed: int) -> list[tuple[RadioMap, BuildingMap]]:
    if count < 1:
        raise InvalidValueError("count must be >= 1")
    out = []
    for i in range(count):
        try:
            radio, buildings, _ = generate_map(replace(cfg, seed=base_seed + i))
        except GenerationError as exc:
            raise GenerationError(f"map {i} (seed {base_seed + i}): {exc}") from exc
        out.append((radio, buildings))
    return out


def sample_scene(radio: RadioMap, buildings: BuildingMap, n_points: int, seed: int,
                 band: Band = Band(1805.0, 1824.0), norm: NormRange = NormRange()) -> Scene:
    """Sparse scene holding ``n_points`` distinct random pixels of a dense map."""
    h, w = radio.height, radio.width
    if n_points > h * w:
        raise InvalidValueError(f"cannot sample {n_points} points from a {h}x{w} map")
    rng = np.random.default_rng(seed)
    flat = rng.choice(h * w, size=n_points, replace=False)
    pts = [(int(i // w), int(i % w), float(radio.values.flat[i])) for i in flat]
    return Scene(buildings, GeoExtent(0.0, 1.0, 0.0, 1.0), band, norm, pts)


def dense_map_to_bytes(radio: RadioMap) -> bytes:
    header = _binfmt.dump_header({"h": radio.height, "w": radio.width})
    return MAP_MAGIC + header + radio.values.astype("<f4").tobytes()


def dense_map_from_bytes(data: bytes) -> RadioMap:
    header, payload = _binfmt.split_header(data, MAP_MAGIC)
    h = _binfmt.header_int(header, "h", 1)
    w = _binfmt.header_int(header, "w", 1)
    _binfmt.check_payload(payload, 4 * h * w, f"{h}x{w} dense map")
    return RadioMap(np.frombuffer(payload, dtype="<f4").reshape(h, w).astype(np.float32))


def write_dense_map(radio: RadioMap, destination) -> None:
    _binfmt.write_bytes(destination, dense_map_to_bytes(radio))


def read_dense_map(source) -> RadioMap:
    return dense_map_from_bytes(_binfmt.read_bytes(source))
