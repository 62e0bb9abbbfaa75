"""File formats: CSV matrices, Gaussian JSON, basis CSV and portable pixmaps.

Matrices are headerless CSV with one row per line; floats are written with
``repr`` so they re-parse to the same double. A Gaussian is a JSON object
``{"mean": [...], "cov": [[...], ...]}``. A basis file is a CSV matrix whose
columns are the basis vectors.
"""

from __future__ import annotations

import csv
import json
import re
from pathlib import Path

import numpy as np

from .errors import DecodeError, ParseError
from .measures import Gaussian, Subspace
from .psdlin import SYM_TOL, SpdMatrix

_PPM_TOKEN = re.compile(rb"\s*(?:#[^\n]*\n\s*)*(\S+)")


def parse_matrix(text: str, path=None) -> np.ndarray:
    rows = []
    width = None
    for lineno, row in enumerate(csv.reader(text.splitlines()), start=1):
        if not row or all(not cell.strip() for cell in row):
            continue
        values = []
        for col, cell in enumerate(row, start=1):
            try:
                values.append(float(cell))
            except ValueError:
                raise ParseError(f"not a number: {cell.strip()!r}", path, lineno, col) from None
        if width is None:
            width = len(values)
        elif len(values) != width:
            raise ParseError(f"expected {width} fields, found {len(values)}", path, lineno, len(values))
        rows.append(values)
    if not rows:
        raise ParseError("no data rows", path, 1, 1)
    return np.array(rows, dtype=float)


def format_matrix(m) -> str:
    m = np.atleast_2d(np.asarray(m, dtype=float))
    return "".join(",".join(repr(float(x)) for x in row) + "\n" for row in m)


def read_matrix(path) -> np.ndarray:
    return parse_matrix(Path(path).read_text(encoding="utf-8"), str(path))


def write_matrix(path, m) -> None:
    Path(path).write_text(format_matrix(m), encoding="utf-8")


def to_jsonable(obj):
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    return obj


def read_gaussian(path, sym_tol: float = SYM_TOL) -> Gaussian:
    """Gaussian from a JSON file, or a centered one from a CSV covariance."""
    text = Path(path).read_text(encoding="utf-8")
    if not text.lstrip().startswith("{"):
        return Gaussian.centered(SpdMatrix(parse_matrix(text, str(path)), sym_tol))
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(exc.msg, str(path), exc.lineno, exc.colno) from None
    if not isinstance(obj, dict) or "cov" not in obj:
        raise ParseError('expected an object with a "cov" field', str(path), 1, 1)
    cov = np.asarray(obj["cov"], dtype=float)
    mean = np.asarray(obj.get("mean", np.zeros(cov.shape[0])), dtype=float)
    return Gaussian(mean, SpdMatrix(cov, sym_tol))


def write_gaussian(path, mu: Gaussian) -> None:
    obj = {"mean": mu.mean.tolist(), "cov": mu.cov.values.tolist()}
    Path(path).write_text(json.dumps(obj) + "\n", encoding="utf-8")


def read_basis(path) -> Subspace:
    return Subspace.from_basis(read_matrix(path))


# -- portable pixmap --------------------------------------------------------

def decode_ppm(data: bytes) -> np.ndarray:
    """(h, w, 3) uint8/uint16 array from P3 (ASCII) or P6 (binary) bytes."""
    pos = 0
    header = []
    for _ in range(4):
        m = _PPM_TOKEN.match(data, pos)
        if not m:
            raise DecodeError("truncated PPM header")
        header.append(m.group(1))
        pos = m.end()
    magic = header[0]
    if magic not in (b"P3", b"P6"):
        raise DecodeError(f"unsupported magic {magic!r}; expected P3 or P6")
    try:
        width, height, maxval = (int(t) for t in header[1:])
    except ValueError:
        raise DecodeError("non-integer PPM header field") from None
    if width <= 0 or height <= 0 or not 0 < maxval < 65536:
        raise DecodeError("invalid PPM dimensions or maxval")
    count = width * height * 3
    dtype = np.uint8 if maxval < 256 else np.uint16
    if magic == b"P6":
        body = data[pos + 1 :]
        itemsize = 1 if maxval < 256 else 2
        if len(body) < count * itemsize:
            raise DecodeError("truncated PPM raster")
        px = np.frombuffer(body[: count * itemsize], dtype=">u2" if itemsize == 2 else np.uint8).astype(dtype)
    else:
        try:
            px = np.array(data[pos:].split(), dtype=np.int64)
        except ValueError:
            raise DecodeError("non-integer sample in P3 raster") from None
        if px.size < count:
            raise DecodeError("truncated PPM raster")
        px = px[:count]
    if px.max(initial=0) > maxval:
        raise DecodeError("sample exceeds maxval")
    return px.astype(dtype).reshape(height, width, 3)


def encode_ppm(img, binary: bool = True) -> bytes:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ValueError("image must be (h, w, 3)")
    px = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    h, w, _ = px.shape
    if binary:
        return f"P6\n{w} {h}\n255\n".encode() + px.tobytes()
    lines = [" ".join(map(str, row)) for row in px.reshape(h, -1)]
    return (f"P3\n{w} {h}\n255\n" + "\n".join(lines) + "\n").encode()


def read_ppm(path) -> np.ndarray:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise DecodeError(f"cannot read {path}: {exc}") from exc
    return decode_ppm(data)


def write_ppm(path, img, binary: bool = True) -> None:
    Path(path).write_bytes(encode_ppm(img, binary))
