"""RPTW1 weight checkpoints: magic, JSON header (config + manifest), float32 payload."""
from __future__ import annotations

import numpy as np

from .. import _binfmt
from ..errors import FormatError, InvalidValueError
from .model import Params, PiTConfig, param_shapes

WEIGHTS_MAGIC = b"RPTW1\n"


def weights_to_bytes(params: Params, cfg: PiTConfig) -> bytes:
    manifest = [{"name": n, "shape": list(s)} for n, s in param_shapes(cfg)]
    for entry in manifest:
        arr = params.get(entry["name"])
        if arr is None or list(arr.shape) != entry["shape"]:
            raise InvalidValueError(f"parameter {entry['name']} missing or misshapen")
    header = _binfmt.dump_header({"config": cfg.to_dict(), "params": manifest})
    body = b"".join(np.ascontiguousarray(params[e["name"]], dtype="<f4").tobytes() for e in manifest)
    return WEIGHTS_MAGIC + header + body


def weights_from_bytes(data: bytes) -> tuple[Params, PiTConfig]:
    header, payload = _binfmt.split_header(data, WEIGHTS_MAGIC)
    try:
        cfg = PiTConfig(**header["config"])
        manifest = [(e["name"], tuple(e["shape"])) for e in header["params"]]
    except (KeyError, TypeError, InvalidValueError) as exc:
        raise FormatError(f"bad checkpoint header: {exc}") from exc
    if manifest != param_shapes(cfg):
        raise FormatError("parameter manifest does not match the configuration")
    sizes = [int(np.prod(s)) for _, s in manifest]
    _binfmt.check_payload(payload, 4 * sum(sizes), "checkpoint")
    flat = np.frombuffer(payload, dtype="<f4")
    params, off = {}, 0
    for (name, shape), n in zip(manifest, sizes):
        params[name] = flat[off:off + n].reshape(shape).astype(np.float32)
        off += n
    return params, cfg


def save_weights(params: Params, cfg: PiTConfig, destination) -> None:
    _binfmt.write_bytes(destination, weights_to_bytes(params, cfg))


def load_weights(source) -> tuple[Params, PiTConfig]:
    return weights_from_bytes(_binfmt.read_bytes(source))
