"""Binary dumps of fields and stencil tables, and the on-disk stencil cache.

Both formats share one layout::

    magic (4 bytes) | version (u32 LE) | header length (u32 LE) | header (UTF-8 JSON)
    | float64 LE payload

Fields use magic ``FRLP`` and store interior values x-fastest.  Stencil tables
use ``FRST`` and store ``coeffs`` in lexicographic (C) index order.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import struct
import tempfile
from pathlib import Path

import numpy as np

from .errors import FileFormatError
from .singquad import DEFAULT_QUAD
from .stencil import FracParams, Stencil, build_stencil
from .toeplitz import Field, GridSpec

__all__ = [
    "FIELD_MAGIC",
    "STENCIL_MAGIC",
    "FORMAT_VERSION",
    "write_field",
    "read_field",
    "write_stencil",
    "read_stencil",
    "cache_dir",
    "stencil_cache_path",
    "cached_stencil",
]

FIELD_MAGIC = b"FRLP"
STENCIL_MAGIC = b"FRST"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<4sII")
_LE_F64 = np.dtype("<f8")

log = logging.getLogger(__name__)


def _write(path, magic, header, values):
    path = Path(path)
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = np.ascontiguousarray(values, dtype=_LE_F64).tobytes()
    path.parent.mkdir(parents=True, exist_ok=True)
    # write-then-rename so readers never see a partial file
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(_PREFIX.pack(magic, FORMAT_VERSION, len(blob)))
            fh.write(blob)
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return path


def _read(path, magic):
    data = Path(path).read_bytes()
    if len(data) < _PREFIX.size:
        raise FileFormatError(f"{path}: file too short")
    got, version, hlen = _PREFIX.unpack_from(data)
    if got != magic:
        raise FileFormatError(f"{path}: bad magic {got!r}, expected {magic!r}")
    if version != FORMAT_VERSION:
        raise FileFormatError(f"{path}: unsupported version {version}")
    start = _PREFIX.size + hlen
    if start > len(data):
        raise FileFormatError(f"{path}: truncated header")
    try:
        header = json.loads(data[_PREFIX.size:start].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FileFormatError(f"{path}: unreadable header ({exc})") from None
    body = data[start:]
    if len(body) % 8:
        raise FileFormatError(f"{path}: payload is not a whole number of float64 values")
    return header, np.frombuffer(body, dtype=_LE_F64).astype(float)


def write_field(path, field, **extra):
    """Dump a :class:`Field`; ``extra`` keys (e.g. ``t``) go into the header."""
    header = dict(field.grid.to_dict(), count=field.grid.size, **extra)
    return _write(path, FIELD_MAGIC, header, field.values)


def read_field(path):
    """Load a field dump.  Extra header keys are returned as ``field.header``."""
    header, values = _read(path, FIELD_MAGIC)
    try:
        grid = GridSpec(bounds=tuple(tuple(b) for b in header["bounds"]), h=header["h"],
                        N=header["N"], n_interior=tuple(header["n_interior"]))
    except KeyError as exc:
        raise FileFormatError(f"{path}: header lacks {exc}") from None
    if values.size != grid.size:
        raise FileFormatError(f"{path}: {values.size} values for {grid.size} nodes")
    out = Field(grid, values)
    out.header = header
    return out


def write_stencil(path, stencil, rel_tol=DEFAULT_QUAD.rel_tol):
    p = stencil.params
    header = {"d": p.d, "alpha": p.alpha, "gamma": p.gamma, "N": stencil.N,
              "h": stencil.h, "rel_tol": rel_tol, "c_norm": stencil.c_norm,
              "tail": stencil.tail, "shape": list(stencil.coeffs.shape)}
    return _write(path, STENCIL_MAGIC, header, stencil.coeffs)


def read_stencil(path):
    """Load a stencil table; returns ``(stencil, header)``."""
    header, values = _read(path, STENCIL_MAGIC)
    try:
        params = FracParams(header["d"], header["alpha"], header["gamma"])
        shape = tuple(header["shape"])
        N = int(header["N"])
    except (KeyError, TypeError, ValueError) as exc:
        raise FileFormatError(f"{path}: header lacks {exc}") from None
    if shape != (N + 1,) * params.d or values.size != int(np.prod(shape)):
        raise FileFormatError(f"{path}: payload does not match shape {shape}")
    coeffs = values.reshape(shape)
    coeffs.flags.writeable = False
    return Stencil(params=params, N=N, h=header["h"], coeffs=coeffs,
                   c_norm=header["c_norm"], tail=header["tail"]), header


def cache_dir():
    """``$FRACLAP_CACHE_DIR``, or ``~/.cache/fraclap`` when unset."""
    env = os.environ.get("FRACLAP_CACHE_DIR")
    return Path(env) if env else Path.home() / ".cache" / "fraclap"


def stencil_cache_path(params, N, h, rel_tol=DEFAULT_QUAD.rel_tol, root=None):
    key = json.dumps([params.d, float(params.alpha), float(params.gamma), int(N),
                      float(h), float(rel_tol)])
    digest = hashlib.sha256(key.encode()).hexdigest()[:16]
    name = f"stencil_d{params.d}_a{params.alpha:g}_g{params.gamma:g}_N{N}_{digest}.frst"
    return Path(root or cache_dir()) / name


def cached_stencil(params, N, h, cfg=DEFAULT_QUAD, root=None):
    """Load the stencil from the cache, building and storing it on a miss.

    A corrupt cache entry is rebuilt rather than trusted.
    """
    path = stencil_cache_path(params, N, h, cfg.rel_tol, root)
    if path.exists():
        try:
            stencil, _ = read_stencil(path)
            if stencil.params == params and stencil.N == N and stencil.h == float(h):
                return stencil
            log.warning("cache entry %s does not match its key; rebuilding", path)
        except FileFormatError as exc:
            log.warning("ignoring corrupt cache entry %s: %s", path, exc)
    stencil = build_stencil(params, N, h, cfg)
    try:
        write_stencil(path, stencil, cfg.rel_tol)
    except OSError as exc:
        log.warning("could not write stencil cache %s: %s", path, exc)
    return stencil
