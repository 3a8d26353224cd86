"""
Minimal NRRD0004 reader/writer for the two volume types used here.

Only raw little-endian encoding with axis-aligned ``space directions`` is
supported: ``float`` for :class:`VoxelGrid`, ``uint16`` for
:class:`InstanceMask`. Instance records travel as key/value pairs::

    instance.<id>.label:=<int>
    instance.<id>.complete:=<0|1>
"""

from __future__ import annotations

import re
from pathlib import Path

import numpy as np

from .volume import InstanceMask, InstanceRecord, VoxelGrid

MAGIC = b"NRRD0004"

_TYPES = {
    "float": np.dtype("<f4"),
    "uint16": np.dtype("<u2"),
}
_TYPE_ALIASES = {
    "float": "float",
    "uint16": "uint16", "ushort": "uint16", "unsigned short": "uint16",
    "unsigned short int": "uint16", "uint16_t": "uint16",
}
_RECORD_KEY = re.compile(r"^instance\.(\d+)\.(label|complete)$")


class NrrdFormatError(ValueError):
    """Malformed or unsupported NRRD content. ``field`` names the offending header field."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


def _vector(values) -> str:
    return "(" + ",".join(repr(float(v)) for v in values) + ")"


def write_nrrd(volume: VoxelGrid | InstanceMask, path) -> None:
    """Write a grid (as float32) or an instance mask (as uint16) to ``path``."""
    if isinstance(volume, InstanceMask):
        if volume.ids.size and volume.ids.max() > np.iinfo(np.uint16).max:
            raise ValueError("instance ids exceed the uint16 range")
        type_name, data = "uint16", volume.ids.astype("<u2")
    elif isinstance(volume, VoxelGrid):
        type_name, data = "float", volume.values.astype("<f4")
    else:
        raise TypeError(f"cannot write {type(volume).__name__} as NRRD")

    sx, sy, sz = volume.spacing
    lines = [
        MAGIC.decode(),
        f"type: {type_name}",
        "dimension: 3",
        "space dimension: 3",
        "sizes: " + " ".join(str(n) for n in volume.dims),
        f"space directions: {_vector((sx, 0, 0))} {_vector((0, sy, 0))} {_vector((0, 0, sz))}",
        f"space origin: {_vector(volume.origin)}",
        "encoding: raw",
        "endian: little",
    ]
    if isinstance(volume, InstanceMask):
        for iid in volume.instance_ids():
            rec = volume.records[iid]
            lines.append(f"instance.{iid}.label:={int(rec.label)}")
            lines.append(f"instance.{iid}.complete:={int(bool(rec.complete))}")
    header = ("\n".join(lines) + "\n\n").encode("ascii")
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(data.tobytes(order="F"))


def _parse_vector(field: str, text: str) -> list[float]:
    m = re.fullmatch(r"\s*\(([^)]*)\)\s*", text)
    if not m:
        raise NrrdFormatError(field, f"expected a parenthesised vector, got {text!r}")
    try:
        return [float(v) for v in m.group(1).split(",")]
    except ValueError:
        raise NrrdFormatError(field, f"non-numeric vector {text!r}") from None


def _parse_directions(text: str) -> list[float]:
    vectors = re.findall(r"\([^)]*\)", text)
    if len(vectors) != 3:
        raise NrrdFormatError("space directions", f"expected 3 vectors, got {text!r}")
    spacing = []
    for axis, vec in enumerate(vectors):
        comps = _parse_vector("space directions", vec)
        if len(comps) != 3:
            raise NrrdFormatError("space directions", f"vector {vec} must have 3 components")
        off_axis = [c for i, c in enumerate(comps) if i != axis]
        if any(c != 0 for c in off_axis):
            raise NrrdFormatError("space directions", "only diagonal directions are supported")
        spacing.append(comps[axis])
    return spacing


def read_header(fh) -> tuple[dict[str, str], dict[str, str]]:
    """Read header fields and key/value pairs from an open binary file."""
    magic = fh.readline().rstrip(b"\r\n")
    if not magic.startswith(b"NRRD000"):
        raise NrrdFormatError("magic", f"not an NRRD file (got {magic[:16]!r})")
    fields, keyvalues = {}, {}
    while True:
        raw = fh.readline()
        if not raw:
            raise NrrdFormatError("header", "unexpected end of file before data")
        line = raw.decode("ascii", errors="replace").rstrip("\r\n")
        if line == "":
            break
        if line.startswith("#"):
            continue
        if ":=" in line:
            key, value = line.split(":=", 1)
            keyvalues[key] = value
        elif ": " in line:
            key, value = line.split(": ", 1)
            fields[key.strip().lower()] = value.strip()
        else:
            raise NrrdFormatError("header", f"cannot parse line {line!r}")
    return fields, keyvalues


def read_nrrd(path) -> VoxelGrid | InstanceMask:
    """Read a file written by :func:`write_nrrd` (or any compatible NRRD)."""
    path = Path(path)
    with open(path, "rb") as fh:
        fields, keyvalues = read_header(fh)
        payload = fh.read()

    for required in ("type", "dimension", "sizes", "encoding"):
        if required not in fields:
            raise NrrdFormatError(required, "missing required field")
    type_name = _TYPE_ALIASES.get(fields["type"].lower())
    if type_name is None:
        raise NrrdFormatError("type", f"unsupported type {fields['type']!r}")
    if fields["dimension"] != "3":
        raise NrrdFormatError("dimension", f"expected 3, got {fields['dimension']}")
    encoding = fields["encoding"].lower()
    if encoding != "raw":
        raise NrrdFormatError("encoding", f"unsupported encoding {fields['encoding']!r}")
    endian = fields.get("endian", "little").lower()
    if endian != "little":
        raise NrrdFormatError("endian", f"unsupported endianness {endian!r}")
    try:
        dims = tuple(int(n) for n in fields["sizes"].split())
    except ValueError:
        raise NrrdFormatError("sizes", f"non-integer sizes {fields['sizes']!r}") from None
    if len(dims) != 3 or min(dims) < 1:
        raise NrrdFormatError("sizes", f"expected 3 positive sizes, got {fields['sizes']!r}")

    spacing = [1.0, 1.0, 1.0]
    if "space directions" in fields:
        spacing = _parse_directions(fields["space directions"])
    elif "spacings" in fields:
        spacing = [float(v) for v in fields["spacings"].split()]
    origin = [0.0, 0.0, 0.0]
    if "space origin" in fields:
        origin = _parse_vector("space origin", fields["space origin"])
        if len(origin) != 3:
            raise NrrdFormatError("space origin", "expected 3 components")

    dtype = _TYPES[type_name]
    expected = int(np.prod(dims)) * dtype.itemsize
    if len(payload) < expected:
        raise NrrdFormatError("data", f"expected {expected} bytes, found {len(payload)}")
    data = np.frombuffer(payload[:expected], dtype=dtype).reshape(dims, order="F")

    try:
        if type_name == "uint16":
            records = _parse_records(keyvalues)
            return InstanceMask(data.astype(np.int32), records, tuple(spacing), tuple(origin))
        return VoxelGrid(data.astype(np.float32), tuple(spacing), tuple(origin))
    except ValueError as exc:
        if isinstance(exc, NrrdFormatError):
            raise
        raise NrrdFormatError("data", str(exc)) from None


def _parse_records(keyvalues: dict[str, str]) -> dict[int, InstanceRecord]:
    parts: dict[int, dict[str, int]] = {}
    for key, value in keyvalues.items():
        m = _RECORD_KEY.match(key)
        if not m:
            continue
        try:
            parts.setdefault(int(m.group(1)), {})[m.group(2)] = int(value)
        except ValueError:
            raise NrrdFormatError(key, f"expected an integer, got {value!r}") from None
    records = {}
    for iid, p in parts.items():
        if "label" not in p:
            raise NrrdFormatError(f"instance.{iid}.label", "missing label for instance")
        records[iid] = InstanceRecord(p["label"], bool(p.get("complete", 1)))
    return records
