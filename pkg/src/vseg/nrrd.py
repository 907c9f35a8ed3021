"""Reading and writing 3-D volumes in the NRRD format.

Supports the subset this pipeline produces and consumes: detached
headers are not supported, dimension must be 3, encodings raw and gzip,
axis-aligned geometry only. Values are converted to float32 internally;
masks are normalized to {0, 1}.
"""

from __future__ import annotations

import gzip as _gzip
import warnings
from dataclasses import dataclass

import numpy as np


class NrrdError(Exception):
    """Base class for NRRD read/write failures."""


class NrrdParseError(NrrdError):
    """Malformed or unsupported header/data, with line context."""

    def __init__(self, message, line_no=None, line=None):
        ctx = ""
        if line_no is not None:
            ctx = f" (header line {line_no}: {line!r})"
        super().__init__(message + ctx)
        self.line_no = line_no


_TYPE_MAP = {
    "uchar": np.dtype("u1"), "unsigned char": np.dtype("u1"), "uint8": np.dtype("u1"),
    "short": np.dtype("<i2"), "signed short": np.dtype("<i2"), "int16": np.dtype("<i2"),
    "ushort": np.dtype("<u2"), "unsigned short": np.dtype("<u2"), "uint16": np.dtype("<u2"),
    "int": np.dtype("<i4"), "signed int": np.dtype("<i4"), "int32": np.dtype("<i4"),
    "float": np.dtype("<f4"),
    "double": np.dtype("<f8"),
}


@dataclass
class Volume:
    """A 3-D scalar grid with physical geometry.

    ``data`` is indexed [x, y, z] and holds float32 values: SUV in g/ml
    for PET, {0, 1} for masks. ``spacing`` and ``origin`` are in mm;
    ``origin`` is the physical position of the center of voxel (0,0,0).
    """

    data: np.ndarray
    spacing: tuple
    origin: tuple = (0.0, 0.0, 0.0)
    kind: str = "pet"
    space: str = "left-posterior-superior"

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float32)
        if self.data.ndim != 3:
            raise ValueError(f"volume data must be 3-D, got {self.data.ndim}-D")
        self.spacing = tuple(float(s) for s in self.spacing)
        self.origin = tuple(float(o) for o in self.origin)
        if any(s <= 0 for s in self.spacing):
            raise ValueError(f"spacing must be positive on all axes, got {self.spacing}")
        if self.kind not in ("pet", "mask"):
            raise ValueError(f"kind must be 'pet' or 'mask', got {self.kind!r}")
        if self.kind == "mask":
            vals = np.unique(self.data)
            if not np.all(np.isin(vals, (0.0, 1.0))):
                raise ValueError("mask volume contains values outside {0, 1}")

    @property
    def dims(self):
        return self.data.shape


def _parse_vector(text, what, line_no, line):
    text = text.strip()
    if not (text.startswith("(") and text.endswith(")")):
        raise NrrdParseError(f"{what} must be a parenthesized vector", line_no, line)
    try:
        return tuple(float(p) for p in text[1:-1].split(","))
    except ValueError:
        raise NrrdParseError(f"cannot parse {what} vector {text!r}", line_no, line)


def _parse_header(f):
    magic = f.readline()
    if not magic.startswith(b"NRRD"):
        raise NrrdParseError(f"not an NRRD file (magic {magic[:8]!r})", 1, magic[:40])
    try:
        int(magic[4:].strip() or b"x")
    except ValueError:
        raise NrrdParseError("malformed NRRD magic line", 1, magic[:40])

    fields, keyvalues = {}, {}
    line_no = 1
    while True:
        raw = f.readline()
        line_no += 1
        if raw in (b"", b"\n", b"\r\n"):
            if raw == b"":
                raise NrrdParseError("header ended without blank line before data",
                                     line_no)
            break
        try:
            line = raw.decode("ascii").rstrip("\r\n")
        except UnicodeDecodeError:
            raise NrrdParseError("non-ASCII bytes in header", line_no, raw[:40])
        if line.startswith("#"):
            continue
        if ":=" in line:
            key, _, val = line.partition(":=")
            keyvalues[key.strip()] = val.strip()
            continue
        if ": " in line or line.endswith(":"):
            key, _, val = line.partition(":")
            fields[key.strip().lower()] = (val.strip(), line_no, line)
            continue
        raise NrrdParseError("line is neither field, key-value nor comment",
                             line_no, line)
    return fields, keyvalues


def read_nrrd(path, kind=None):
    """Read a 3-D NRRD volume.

    ``kind`` forces interpretation as 'pet' or 'mask'; when omitted, a
    ``segmentation_kind`` key-value written by write_nrrd is honoured,
    defaulting to 'pet'. Mask values other than {0,1} are normalized to
    1 with a warning.
    """
    with open(path, "rb") as f:
        fields, keyvalues = _parse_header(f)

        def need(name):
            if name not in fields:
                raise NrrdParseError(f"required header field {name!r} missing")
            return fields[name]

        val, ln, line = need("dimension")
        try:
            dim = int(val)
        except ValueError:
            raise NrrdParseError("dimension is not an integer", ln, line)
        if dim != 3:
            raise NrrdParseError(f"only 3-D volumes are supported, got dimension {dim}",
                                 ln, line)

        val, ln, line = need("type")
        dtype = _TYPE_MAP.get(val.lower())
        if dtype is None:
            raise NrrdParseError(f"unsupported type {val!r}", ln, line)

        val, ln, line = need("sizes")
        try:
            sizes = tuple(int(p) for p in val.split())
        except ValueError:
            raise NrrdParseError(f"cannot parse sizes {val!r}", ln, line)
        if len(sizes) != 3 or any(s < 1 for s in sizes):
            raise NrrdParseError(f"sizes must be 3 positive integers, got {val!r}",
                                 ln, line)

        val, ln, line = need("encoding")
        encoding = val.lower()
        if encoding in ("gz", "gzip"):
            encoding = "gzip"
        elif encoding != "raw":
            raise NrrdParseError(f"unsupported encoding {val!r}", ln, line)

        if "endian" in fields:
            val, ln, line = fields["endian"]
            if val.lower() == "big" and dtype.itemsize > 1:
                raise NrrdParseError("big-endian data is not supported", ln, line)

        spacing = None
        if "space directions" in fields:
            val, ln, line = fields["space directions"]
            vecs = [v for v in val.replace(") (", ")|(").split("|")]
            if len(vecs) != 3:
                raise NrrdParseError(
                    f"expected 3 space direction vectors, got {len(vecs)}", ln, line)
            spacing = []
            for axis, vec_text in enumerate(vecs):
                vec = _parse_vector(vec_text, "space directions", ln, line)
                if len(vec) != 3:
                    raise NrrdParseError("space direction vectors must be 3-D", ln, line)
                off_axis = [abs(vec[i]) for i in range(3) if i != axis]
                if any(o > 1e-9 for o in off_axis):
                    raise NrrdParseError(
                        "non-axis-aligned space directions are not supported", ln, line)
                if vec[axis] <= 0:
                    raise NrrdParseError(
                        f"axis {axis} direction must be positive, got {vec[axis]}",
                        ln, line)
                spacing.append(vec[axis])
            spacing = tuple(spacing)
        elif "spacings" in fields:
            val, ln, line = fields["spacings"]
            try:
                spacing = tuple(float(p) for p in val.split())
            except ValueError:
                raise NrrdParseError(f"cannot parse spacings {val!r}", ln, line)
            if len(spacing) != 3 or any(s <= 0 for s in spacing):
                raise NrrdParseError(
                    f"spacings must be 3 positive numbers, got {val!r}", ln, line)
        else:
            spacing = (1.0, 1.0, 1.0)

        origin = (0.0, 0.0, 0.0)
        if "space origin" in fields:
            val, ln, line = fields["space origin"]
            origin = _parse_vector(val, "space origin", ln, line)
            if len(origin) != 3:
                raise NrrdParseError("space origin must be 3-D", ln, line)

        space = "left-posterior-superior"
        if "space" in fields:
            space = fields["space"][0]

        payload = f.read()

    if encoding == "gzip":
        try:
            payload = _gzip.decompress(payload)
        except (OSError, EOFError) as exc:
            raise NrrdParseError(f"gzip payload is corrupt: {exc}")
    expected = sizes[0] * sizes[1] * sizes[2] * dtype.itemsize
    if len(payload) < expected:
        raise NrrdParseError(
            f"data too short: header promises {expected} bytes, file has {len(payload)}")
    if len(payload) > expected:
        raise NrrdParseError(
            f"data too long: header promises {expected} bytes, file has {len(payload)}")

    arr = np.frombuffer(payload, dtype=dtype).reshape(sizes, order="F")
    data = arr.astype(np.float32)

    if kind is None:
        kind = keyvalues.get("segmentation_kind", "pet")
        if kind not in ("pet", "mask"):
            kind = "pet"
    if kind == "mask":
        nonbinary = ~np.isin(data, (0.0, 1.0))
        if nonbinary.any():
            warnings.warn(
                f"{path}: mask contains {int(nonbinary.sum())} non-binary values; "
                "normalizing nonzero to 1")
            data = (data != 0).astype(np.float32)
    return Volume(data=data, spacing=spacing, origin=origin, kind=kind, space=space)


def write_nrrd(volume, path, encoding="gzip"):
    """Write a Volume as NRRD0005 (raw or gzip payload, little-endian).

    Masks are stored as uchar, PET volumes as float32.
    """
    if encoding not in ("raw", "gzip"):
        raise ValueError(f"encoding must be 'raw' or 'gzip', got {encoding!r}")
    if volume.kind == "mask":
        arr = volume.data.astype("u1")
        type_name = "uchar"
    else:
        arr = volume.data.astype("<f4")
        type_name = "float"

    dirs = " ".join(
        "({},{},{})".format(*(volume.spacing[a] if i == a else 0 for i in range(3)))
        for a in range(3))
    header = [
        "NRRD0005",
        "# vseg volume",
        f"type: {type_name}",
        "dimension: 3",
        f"space: {volume.space}",
        "sizes: {} {} {}".format(*volume.dims),
        f"space directions: {dirs}",
        "kinds: domain domain domain",
        "endian: little",
        f"encoding: {encoding}",
        "space origin: ({},{},{})".format(*volume.origin),
        f"segmentation_kind:={volume.kind}",
        "",  # blank line terminates the header
        "",
    ]
    payload = arr.tobytes(order="F")
    if encoding == "gzip":
        payload = _gzip.compress(payload)
    try:
        with open(path, "wb") as f:
            f.write("\n".join(header).encode("ascii"))
            f.write(payload)
    except OSError as exc:
        raise NrrdError(f"cannot write {path}: {exc}") from exc


def validate_aligned(a, b):
    """Check that two volumes share grid geometry; raise naming the first
    mismatch. Spacing tolerance 1e-6 mm, origin tolerance 1e-3 mm."""
    if a.dims != b.dims:
        raise ValueError(f"volume dims mismatch: {a.dims} vs {b.dims}")
    for axis in range(3):
        if abs(a.spacing[axis] - b.spacing[axis]) > 1e-6:
            raise ValueError(
                f"spacing mismatch on axis {axis}: "
                f"{a.spacing[axis]} vs {b.spacing[axis]}")
    for axis in range(3):
        if abs(a.origin[axis] - b.origin[axis]) > 1e-3:
            raise ValueError(
                f"origin mismatch on axis {axis}: "
                f"{a.origin[axis]} vs {b.origin[axis]}")
