"""Shared framing for the magic + JSON-header-line binary formats."""
from __future__ import annotations

import json
import os

from .errors import BadMagicError, FormatError, SizeMismatchError, TruncatedError


def dump_header(header: dict) -> bytes:
    return json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8") + b"\n"


def split_header(data: bytes, magic: bytes) -> tuple[dict, memoryview]:
    """Validate the magic, decode the header line, and return the remaining payload."""
    if data[:len(magic)] != magic:
        raise BadMagicError(f"bad magic {bytes(data[:len(magic)])!r}, expected {magic!r}")
    nl = data.find(b"\n", len(magic))
    if nl < 0:
        raise TruncatedError("header line is not newline-terminated")
    try:
        header = json.loads(data[len(magic):nl].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"unreadable header: {exc}") from exc
    if not isinstance(header, dict):
        raise FormatError("header must be a JSON object")
    return header, memoryview(data)[nl + 1:]


def check_payload(payload: memoryview, expected: int, what: str) -> None:
    if len(payload) < expected:
        raise TruncatedError(f"{what}: expected {expected} payload bytes, found {len(payload)}")
    if len(payload) > expected:
        raise SizeMismatchError(f"{what}: {len(payload) - expected} unexpected trailing bytes")


def header_int(header: dict, key: str, lo: int = 0, hi: int | None = None) -> int:
    val = header.get(key)
    if isinstance(val, bool) or not isinstance(val, int) or val < lo or (hi is not None and val > hi):
        raise FormatError(f"header field {key!r} invalid: {val!r}")
    return val


def header_float(header: dict, key: str) -> float:
    val = header.get(key)
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise FormatError(f"header field {key!r} invalid: {val!r}")
    return float(val)


def write_bytes(destination, data: bytes) -> None:
    if hasattr(destination, "write"):
        destination.write(data)
        return
    tmp = f"{os.fspath(destination)}.tmp{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, destination)


def read_bytes(source) -> bytes:
    if hasattr(source, "read"):
        return source.read()
    with open(source, "rb") as fh:
        return fh.read()

