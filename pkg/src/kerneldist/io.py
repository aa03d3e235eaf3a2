"""File formats: point sets (CSV or JSON), feature vectors (binary), reports (JSON).

Point set files carry the columns ``x1..xd``, an optional mass column
``w`` (default 1.0) and optional orientation columns ``u1..ud``. CSV files
are comma separated UTF-8 with a required header row. JSON files hold
either a list of row objects keyed by column name, or one object mapping
each column name to a list of values.

The binary feature format is little-endian throughout::

    offset  type      field
    0       4 bytes   magic "KDFV"
    4       uint32    format version (1)
    8       uint32    basis tag (1 = rff, 2 = ifgt)
    12      uint32    d
    16      uint64    rho
    24      float64   sigma
    32      float64   mass (total mass of the embedded set)
    40      ...       basis block
            ...       rho float64 values

The rff basis block is one uint64 seed; the ifgt block is one uint64 tau
followed by d float64 center coordinates.
"""
from __future__ import annotations

import csv
import io
import json
import math
import re
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import WeightedPointSet
from .errors import InvalidParameterError, ParseError
from .features import FeatureVector, FourierBasis, TaylorBasis, draw_frequencies, make_taylor_basis
from .reduce import OrientedPointSet

NORMAL_TOL = 1e-6
MAGIC = b"KDFV"
VERSION = 1
TAGS = {"rff": 1, "ifgt": 2}
_HEAD = struct.Struct("<4sIIIQdd")
_COL = re.compile(r"^(x|u)([1-9][0-9]*)$|^w$")


@dataclass(frozen=True)
class PointSetFile:
    """A parsed point set file.

    Attributes:
        points: the weighted points.
        normals: (n, d) unit orientations, or None if the file has none.
        source: path or label used in messages.
    """

    points: WeightedPointSet
    normals: np.ndarray | None = None
    source: str = "<memory>"

    @property
    def oriented(self) -> OrientedPointSet:
        if self.normals is None:
            raise InvalidParameterError(f"{self.source}: file has no orientation columns")
        return OrientedPointSet(self.points.coords, self.points.masses, self.normals)


def _layout(header: list[str], where: str):
    """Map column names to positions; returns (x_idx, w_idx, u_idx)."""
    names = [h.strip() for h in header]
    seen = {}
    for j, h in enumerate(names):
        if not _COL.match(h):
            raise ParseError(f"{where}: unknown column {h!r}", 1)
        if h in seen:
            raise ParseError(f"{where}: duplicate column {h!r}", 1)
        seen[h] = j
    d = sum(1 for h in names if h.startswith("x"))
    if d == 0:
        raise ParseError(f"{where}: no coordinate columns x1..xd", 1)
    try:
        x_idx = [seen[f"x{i}"] for i in range(1, d + 1)]
    except KeyError as exc:
        raise ParseError(f"{where}: coordinate columns must be x1..x{d}", 1) from exc
    nu = sum(1 for h in names if h.startswith("u"))
    u_idx = None
    if nu:
        if nu != d or any(f"u{i}" not in seen for i in range(1, d + 1)):
            raise ParseError(f"{where}: orientation columns must be u1..u{d}", 1)
        u_idx = [seen[f"u{i}"] for i in range(1, d + 1)]
    return x_idx, seen.get("w"), u_idx


def _float(tok, line: int, col: str) -> float:
    if isinstance(tok, bool):
        raise ParseError(f"column {col}: expected a number, got {tok!r}", line)
    try:
        v = float(tok.strip()) if isinstance(tok, str) else float(tok)
    except (TypeError, ValueError):
        raise ParseError(f"column {col}: expected a number, got {tok!r}", line) from None
    if not math.isfinite(v):
        raise ParseError(f"column {col}: value {tok!r} is not finite", line)
    return v


def _assemble(rows, header, where: str) -> PointSetFile:
    """rows: iterable of (line_number, list of raw tokens)."""
    x_idx, w_idx, u_idx = _layout(header, where)
    names = [h.strip() for h in header]
    X, W, U = [], [], []
    for line, toks in rows:
        if len(toks) != len(names):
            raise ParseError(f"expected {len(names)} fields, got {len(toks)}", line)
        X.append([_float(toks[j], line, names[j]) for j in x_idx])
        if w_idx is not None:
            w = _float(toks[w_idx], line, "w")
            if w <= 0.0:
                raise ParseError(f"mass w must be positive, got {w!r}", line)
            W.append(w)
        if u_idx is not None:
            u = np.array([_float(toks[j], line, names[j]) for j in u_idx])
            norm = float(np.linalg.norm(u))
            if abs(norm - 1.0) > NORMAL_TOL:
                raise ParseError(f"orientation has norm {norm:.12g}, expected 1 within "
                                 f"{NORMAL_TOL:g}", line)
            U.append(u / norm)
    d = len(x_idx)
    coords = np.array(X, dtype=np.float64).reshape(-1, d)
    P = WeightedPointSet(coords, np.array(W) if w_idx is not None else None, dim=d)
    normals = np.array(U, dtype=np.float64).reshape(-1, d) if u_idx is not None else None
    return PointSetFile(P, normals, where)


def parse_csv(text: str, where: str = "<csv>") -> PointSetFile:
    """Parse CSV text; errors carry the 1-based line number."""
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError(f"{where}: empty file, header row required", 1) from None
    except csv.Error as exc:
        raise ParseError(f"{where}: {exc}", 1) from None

    def rows():
        while True:
            try:
                toks = next(reader)
            except StopIteration:
                return
            except csv.Error as exc:
                raise ParseError(str(exc), reader.line_num) from None
            if not toks or all(not t.strip() for t in toks):
                continue
            yield reader.line_num, toks

    return _assemble(rows(), header, where)


def parse_json(text: str, where: str = "<json>") -> PointSetFile:
    """Parse JSON text: a list of row objects or an object of columns."""
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{where}: {exc.msg}", exc.lineno) from None
    if isinstance(obj, dict):
        header = list(obj)
        cols = [obj[h] for h in header]
        if not all(isinstance(c, list) for c in cols):
            raise ParseError(f"{where}: every column must be a list")
        n = len(cols[0]) if cols else 0
        if any(len(c) != n for c in cols):
            raise ParseError(f"{where}: columns have different lengths")
        rows = ((None, [c[i] for c in cols]) for i in range(n))
        return _assemble(rows, header, where)
    if isinstance(obj, list):
        if not obj or not isinstance(obj[0], dict):
            raise ParseError(f"{where}: expected a nonempty list of row objects")
        header = list(obj[0])

        def rows():
            for i, r in enumerate(obj):
                if not isinstance(r, dict) or set(r) != set(header):
                    raise ParseError(f"{where}: row {i} does not have columns {header}")
                yield None, [r[h] for h in header]

        return _assemble(rows(), header, where)
    raise ParseError(f"{where}: expected a list or an object at top level")


def read_points(path, fmt: str | None = None) -> PointSetFile:
    """Read a point set file; the format follows the suffix unless given."""
    path = Path(path)
    fmt = (fmt or ("json" if path.suffix.lower() == ".json" else "csv")).lower()
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as exc:
        raise ParseError(f"{path}: not valid UTF-8 ({exc.reason})") from None
    except OSError as exc:
        raise ParseError(f"{path}: {exc.strerror or exc}") from None
    if fmt == "json":
        return parse_json(text, str(path))
    if fmt == "csv":
        return parse_csv(text, str(path))
    raise InvalidParameterError(f"unknown point file format {fmt!r}")


def format_csv(P: WeightedPointSet, normals=None) -> str:
    """CSV text with round-trip float formatting."""
    d = P.dim
    header = [f"x{i}" for i in range(1, d + 1)] + ["w"]
    if normals is not None:
        header += [f"u{i}" for i in range(1, d + 1)]
    out = io.StringIO()
    wr = csv.writer(out, lineterminator="\n")
    wr.writerow(header)
    for i in range(P.n):
        row = [repr(float(v)) for v in P.coords[i]] + [repr(float(P.masses[i]))]
        if normals is not None:
            row += [repr(float(v)) for v in normals[i]]
        wr.writerow(row)
    return out.getvalue()


def write_points(path, P: WeightedPointSet, normals=None) -> None:
    """Write a point set as CSV, or as JSON columns for a .json suffix."""
    path = Path(path)
    if path.suffix.lower() == ".json":
        obj = {f"x{i + 1}": P.coords[:, i].tolist() for i in range(P.dim)}
        obj["w"] = P.masses.tolist()
        if normals is not None:
            obj.update({f"u{i + 1}": np.asarray(normals)[:, i].tolist() for i in range(P.dim)})
        path.write_text(json.dumps(obj) + "\n", encoding="utf-8")
    else:
        path.write_text(format_csv(P, normals), encoding="utf-8")


# ------------------------------------------------------------- feature vectors

def feature_bytes(fv: FeatureVector) -> bytes:
    """Serialize a feature vector to the binary format."""
    b = fv.basis
    head = _HEAD.pack(MAGIC, VERSION, TAGS[b.tag], b.d, fv.rho, b.sigma, float(fv.mass))
    if isinstance(b, FourierBasis):
        block = struct.pack("<Q", b.seed)
    else:
        block = struct.pack("<Q", b.tau) + np.asarray(b.center, dtype="<f8").tobytes()
    return head + block + np.asarray(fv.values, dtype="<f8").tobytes()


def feature_from_bytes(data: bytes) -> FeatureVector:
    """Inverse of ``feature_bytes``; the basis is rebuilt from its parameters."""
    if len(data) < _HEAD.size + 8:
        raise ParseError("feature file is truncated")
    magic, version, tag, d, rho, sigma, mass = _HEAD.unpack_from(data, 0)
    if magic != MAGIC:
        raise ParseError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise ParseError(f"unsupported feature format version {version}")
    off = _HEAD.size
    (extra,) = struct.unpack_from("<Q", data, off)
    off += 8
    if tag == TAGS["rff"]:
        basis = draw_frequencies(sigma, d, rho, extra)
    elif tag == TAGS["ifgt"]:
        if len(data) < off + 8 * d:
            raise ParseError("feature file is truncated")
        center = np.frombuffer(data, dtype="<f8", count=d, offset=off)
        off += 8 * d
        basis = make_taylor_basis(sigma, center, extra)
        if basis.rho != rho:
            raise ParseError(f"header rho {rho} does not match tau {extra} in d={d}")
    else:
        raise ParseError(f"unknown basis tag {tag}")
    if len(data) != off + 8 * rho:
        raise ParseError(f"expected {rho} values, file holds {(len(data) - off) / 8:g}")
    values = np.frombuffer(data, dtype="<f8", count=rho, offset=off).astype(np.float64)
    return FeatureVector(values, basis, mass)


def write_features(path, fv: FeatureVector) -> None:
    Path(path).write_bytes(feature_bytes(fv))


def read_features(path) -> FeatureVector:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise ParseError(f"{path}: {exc.strerror or exc}") from None
    return feature_from_bytes(data)


def basis_dict(basis) -> dict:
    """JSON description of a basis."""
    if isinstance(basis, FourierBasis):
        return {"basis": "rff", "rho": basis.rho, "sigma": basis.sigma, "seed": basis.seed}
    if isinstance(basis, TaylorBasis):
        return {"basis": "ifgt", "rho": basis.rho, "sigma": basis.sigma, "tau": basis.tau,
                "center": basis.center.tolist()}
    raise InvalidParameterError(f"unknown basis {basis!r}")


def dumps_report(report: dict) -> str:
    """Stable JSON text of a report (sorted keys, trailing newline)."""
    return json.dumps(report, indent=2, sort_keys=True, allow_nan=False) + "\n"
