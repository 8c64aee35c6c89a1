"""Binary snapshots, checkpoints and exact CSV/JSON output."""

from __future__ import annotations

import csv
import json
import os
import struct

import numpy as np

from .errors import DataError
from .lattice import FourierLattice, SpectralField

MAGIC = b"SVMF"
VERSION = 1
_HEADER = struct.Struct("<4sIIId")


# ---------------------------------------------------------------------------
# Snapshots
# ---------------------------------------------------------------------------


def encode_snapshot(u: SpectralField, time: float = 0.0) -> bytes:
    """Header then coefficients in lexicographic k order (last axis fastest);
    per k every component as little-endian f64 (real, imag)."""
    if u.ncomp != u.dim:
        raise DataError("snapshots hold velocity fields (one component per dimension)")
    body = np.ascontiguousarray(np.moveaxis(u.coeffs, 0, -1), dtype="<c16").tobytes()
    return _HEADER.pack(MAGIC, VERSION, u.dim, u.n, float(time)) + body


def decode_snapshot(data: bytes):
    if len(data) < _HEADER.size:
        raise DataError("snapshot truncated: incomplete header")
    magic, version, dim, n, time = _HEADER.unpack_from(data)
    if magic != MAGIC:
        raise DataError(f"not a snapshot file (magic {magic!r})")
    if version != VERSION:
        raise DataError(f"snapshot version {version} is not supported (reader version {VERSION})")
    if dim not in (2, 3) or n < 1:
        raise DataError(f"snapshot header has invalid dim={dim}, cutoff={n}")
    width = 2 * n + 1
    count = width**dim * dim
    body = data[_HEADER.size :]
    if len(body) != 16 * count:
        raise DataError(f"snapshot body has {len(body)} bytes, expected {16 * count}")
    flat = np.frombuffer(body, dtype="<c16").astype(complex)
    coeffs = np.moveaxis(flat.reshape((width,) * dim + (dim,)), -1, 0).copy()
    lat = FourierLattice(dim, n)
    probe = SpectralField(lat, coeffs)
    tag = "divergence_free" if probe.is_divergence_free() else "generic"
    return SpectralField(lat, coeffs, tag), time


def write_snapshot(u: SpectralField, path, time: float = 0.0) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_snapshot(u, time))


def read_snapshot(path):
    """Returns ``(field, time)``."""
    with open(path, "rb") as fh:
        return decode_snapshot(fh.read())


# ---------------------------------------------------------------------------
# Text output
# ---------------------------------------------------------------------------


def _cell(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))  # shortest round-trip decimal
    return str(v)


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_cell(v) for v in row])


def read_csv(path):
    """Header and rows, numeric cells converted to float."""
    with open(path, newline="", encoding="utf-8") as fh:
        r = csv.reader(fh)
        header = next(r)
        rows = []
        for row in r:
            out = []
            for v in row:
                try:
                    out.append(float(v))
                except ValueError:
                    out.append(v)
            rows.append(out)
    return header, rows


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


def dumps(obj) -> str:
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n"


def write_json(path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(obj))


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def write_checkpoint(directory, meta: dict, coeffs: np.ndarray, arrays: dict) -> None:
    """Directory with one snapshot per member, observer arrays as ``.npy``
    and ``checkpoint.json`` written last so a partial write is never read."""
    os.makedirs(directory, exist_ok=True)
    arr_dir = os.path.join(directory, "observers")
    os.makedirs(arr_dir, exist_ok=True)
    for old in os.listdir(arr_dir):
        os.remove(os.path.join(arr_dir, old))
    dim = coeffs.ndim - 2
    n = (coeffs.shape[-1] - 1) // 2
    lat = FourierLattice(dim, n)
    for b in range(coeffs.shape[0]):
        write_snapshot(SpectralField(lat, coeffs[b]), os.path.join(directory, f"state_{b:04d}.svmf"),
                       meta.get("time", 0.0))
    for key, val in arrays.items():
        np.save(os.path.join(arr_dir, f"{key}.npy"), np.asarray(val), allow_pickle=False)
    meta = dict(meta, members=int(coeffs.shape[0]))
    tmp = os.path.join(directory, "checkpoint.json.tmp")
    write_json(tmp, meta)
    os.replace(tmp, os.path.join(directory, "checkpoint.json"))


def read_checkpoint(directory):
    """Returns ``(meta, coeffs, arrays)``."""
    meta_path = os.path.join(directory, "checkpoint.json")
    if not os.path.exists(meta_path):
        raise DataError(f"no checkpoint in {directory}")
    with open(meta_path, encoding="utf-8") as fh:
        meta = json.load(fh)
    states = [read_snapshot(os.path.join(directory, f"state_{b:04d}.svmf"))[0].coeffs
              for b in range(meta["members"])]
    arr_dir = os.path.join(directory, "observers")
    arrays = {}
    if os.path.isdir(arr_dir):
        for name in sorted(os.listdir(arr_dir)):
            if name.endswith(".npy"):
                arrays[name[:-4]] = np.load(os.path.join(arr_dir, name), allow_pickle=False)
    return meta, np.stack(states), arrays
