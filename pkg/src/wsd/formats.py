"""Little-endian binary containers and CSV listings.

WSDM  matrix:     b"WSDM", u32 rows, u32 cols, f64 row-major payload
WSDT  operator:   b"WSDT", u32 M, u32 digits, then U, s, V, inverse_map as f64
WSDS  stack:      b"WSDS", u16 version, u32 frames, u32 rows, u32 cols,
                  u8 dtype (0 = u16 counts, 1 = f64), u8 clamped flag, row-major frames
"""
import csv
import io
import os
import struct
from dataclasses import dataclass

import numpy as np

from .operators import WorkingMaps, working_maps

STACK_VERSION = 1
DTYPES = {0: np.dtype("<u2"), 1: np.dtype("<f8")}


class FormatError(ValueError):
    pass


def _atomic_write(path, data):
    path = os.fspath(path)
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def _read(path):
    with open(path, "rb") as fh:
        return fh.read()


def _expect_magic(buf, magic, path):
    if buf[:4] != magic:
        raise FormatError(f"{path}: not a {magic.decode()} file")


def _take(buf, offset, count, path, dtype="<f8"):
    dtype = np.dtype(dtype)
    end = offset + count * dtype.itemsize
    if end > len(buf):
        raise FormatError(f"{path}: truncated payload")
    return np.frombuffer(buf, dtype=dtype, count=count, offset=offset).copy(), end


def matrix_bytes(matrix):
    m = np.asarray(matrix, dtype="<f8")
    if m.ndim == 1:
        m = m[:, None]
    rows, cols = m.shape
    return b"WSDM" + struct.pack("<II", rows, cols) + np.ascontiguousarray(m).tobytes()


def write_matrix(path, matrix):
    _atomic_write(path, matrix_bytes(matrix))


def read_matrix(path):
    buf = _read(path)
    _expect_magic(buf, b"WSDM", path)
    rows, cols = struct.unpack_from("<II", buf, 4)
    data, end = _take(buf, 12, rows * cols, path)
    if end != len(buf):
        raise FormatError(f"{path}: trailing bytes after payload")
    return data.reshape(rows, cols)


def write_operator(path, bundle):
    maps = working_maps(bundle)
    M = maps.M
    parts = [b"WSDT", struct.pack("<II", M, maps.digits)]
    for block in (maps.U, maps.singular_values, maps.V, maps.inverse):
        parts.append(np.ascontiguousarray(block, dtype="<f8").tobytes())
    _atomic_write(path, b"".join(parts))


def read_operator(path):
    buf = _read(path)
    _expect_magic(buf, b"WSDT", path)
    M, digits = struct.unpack_from("<II", buf, 4)
    off = 12
    U, off = _take(buf, off, M * M, path)
    s, off = _take(buf, off, M, path)
    V, off = _take(buf, off, M * M, path)
    inv, off = _take(buf, off, M * M, path)
    if off != len(buf):
        raise FormatError(f"{path}: trailing bytes after payload")
    return WorkingMaps.from_factors(U.reshape(M, M), s, V.reshape(M, M), inv.reshape(M, M), digits)


@dataclass(frozen=True)
class StackFile:
    frames: np.ndarray
    dtype_code: int = 1
    clamped: bool = False
    version: int = STACK_VERSION


def stack_bytes(frames, dtype="f64", clamped=False):
    frames = np.asarray(frames)
    if frames.ndim == 2:
        frames = frames[None]
    if frames.ndim != 3:
        raise FormatError("a stack is a sequence of 2-D frames")
    code = {"u16": 0, "f64": 1}[dtype]
    if code == 0:
        if np.any(frames < 0) or np.any(frames > 65535) or np.any(frames != np.round(frames)):
            raise FormatError("u16 stacks take non-negative integer counts up to 65535")
    n, rows, cols = frames.shape
    header = b"WSDS" + struct.pack("<HIIIBB", STACK_VERSION, n, rows, cols, code, int(bool(clamped)))
    return header + np.ascontiguousarray(frames, dtype=DTYPES[code]).tobytes()


def write_stack(path, frames, dtype="f64", clamped=False):
    _atomic_write(path, stack_bytes(frames, dtype, clamped))


def read_stack(path):
    buf = _read(path)
    _expect_magic(buf, b"WSDS", path)
    version, n, rows, cols, code, clamped = struct.unpack_from("<HIIIBB", buf, 4)
    if version != STACK_VERSION:
        raise FormatError(f"{path}: unsupported stack version {version}")
    if code not in DTYPES:
        raise FormatError(f"{path}: unknown dtype code {code}")
    data, end = _take(buf, 20, n * rows * cols, path, DTYPES[code])
    if end != len(buf):
        raise FormatError(f"{path}: payload length does not match header")
    frames = data.reshape(n, rows, cols)
    return StackFile(frames.astype(np.uint16 if code == 0 else float), code, bool(clamped), version)


def _csv_text(header, rows):
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return out.getvalue()


def write_csv(path, header, rows):
    _atomic_write(path, _csv_text(header, rows).encode())


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _num(v):
    return repr(float(v))


BENCHMARK_HEADER = ("K", "density_um2", "condition", "mean_db", "sd_db", "reps", "seed",
                    "gaussian_variance")


def write_benchmark(path, table):
    rows = [(r["K"], _num(r["density_um2"]), r["condition"], _num(r["mean_db"]),
             _num(r["sd_db"]), r["reps"], r["seed"], _num(r["gaussian_variance"]))
            for r in table.rows]
    write_csv(path, BENCHMARK_HEADER, rows)


def write_scene_sidecar(path, scenes):
    rows = [(f, int(p), _num(ph)) for f, sc in enumerate(scenes)
            for p, ph in zip(sc.positions, sc.photons)]
    write_csv(path, ("frame", "grid_index", "photons"), rows)


def read_scene_sidecar(path):
    return [(int(r["frame"]), int(r["grid_index"]), float(r["photons"])) for r in read_csv(path)]


def write_sparse(path, x, threshold=0.0):
    """``(index, value)`` listing of entries with magnitude above ``threshold``."""
    x = np.asarray(x, dtype=float)
    idx = np.flatnonzero(np.abs(x) > threshold)
    write_csv(path, ("index", "value"), [(int(i), _num(x[i])) for i in idx])


def write_spectrum(path, singular_values):
    s = np.asarray(singular_values, dtype=float)
    rows = [(i + 1, _num(v)) for i, v in enumerate(s)]
    rows.append(("max", _num(s.max())))
    rows.append(("min", _num(s.min())))
    rows.append(("ratio", _num(s.max() / s.min())))
    write_csv(path, ("index", "singular_value"), rows)
