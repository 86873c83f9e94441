"""The .qnn container: a text manifest plus a raw binary blob.

Layout, in order:

    #qnn-container format_version=1
    key = value                  (one per line, '#' comments allowed)
    array.<i> = <name> <dtype> <offset> <count>
    blob_bytes = <N>
    ---BLOB---
    <N raw bytes>

The manifest is UTF-8 text, inspectable and diffable. Arrays are stored
little-endian in the blob: f64 for parameters, i32 for integer-network
payloads (weight codes, thresholds). Offsets are relative to the start of
the blob, so the index pins every array to an exact byte range and a
truncated or corrupt file is reported with the offset of the fault.

Model files, training checkpoints and compiled integer networks all reuse
this container; they differ only in manifest keys and array names.
"""

from __future__ import annotations

import numpy as np

from .errors import FormatError, TruncationError, VersionError

FORMAT_VERSION = 1
_MAGIC = "#qnn-container"
_SEPARATOR = b"\n---BLOB---\n"

_DTYPES = {
    "f64": np.dtype("<f8"),
    "i32": np.dtype("<i4"),
}


class Manifest:
    """Parsed manifest: ordered key/value pairs plus named arrays."""

    def __init__(self):
        self.pairs: dict[str, str] = {}
        self.arrays: dict[str, np.ndarray] = {}

    def get(self, key: str, default=None) -> str:
        return self.pairs.get(key, default)

    def require(self, key: str) -> str:
        if key not in self.pairs:
            raise FormatError(f"manifest is missing required key {key!r}")
        return self.pairs[key]


def save_container(path, pairs: dict[str, str], arrays: dict[str, np.ndarray]) -> None:
    """Write a container file. Array insertion order is preserved."""
    blob_parts = []
    index_lines = []
    offset = 0
    for i, (name, arr) in enumerate(arrays.items()):
        if " " in name:
            raise ValueError(f"array name may not contain spaces: {name!r}")
        if arr.dtype == np.float64:
            dtag = "f64"
        elif arr.dtype == np.int32:
            dtag = "i32"
        else:
            raise ValueError(f"unsupported array dtype {arr.dtype} for {name!r}")
        raw = np.ascontiguousarray(arr, dtype=_DTYPES[dtag]).tobytes()
        index_lines.append(f"array.{i} = {name} {dtag} {offset} {arr.size}")
        blob_parts.append(raw)
        offset += len(raw)
    blob = b"".join(blob_parts)

    lines = [f"{_MAGIC} format_version={FORMAT_VERSION}"]
    for key, value in pairs.items():
        if "\n" in str(value):
            raise ValueError(f"manifest value for {key!r} may not contain newlines")
        lines.append(f"{key} = {value}")
    lines.extend(index_lines)
    lines.append(f"blob_bytes = {len(blob)}")
    header = "\n".join(lines).encode("utf-8")

    with open(path, "wb") as f:
        f.write(header)
        f.write(_SEPARATOR)
        f.write(blob)


def load_container(path) -> Manifest:
    with open(path, "rb") as f:
        data = f.read()
    return parse_container(data)


def parse_container(data: bytes) -> Manifest:
    sep = data.find(_SEPARATOR)
    if sep < 0:
        raise FormatError("missing blob separator '---BLOB---'", offset=len(data))
    header_bytes = data[:sep]
    blob = data[sep + len(_SEPARATOR) :]
    try:
        header = header_bytes.decode("utf-8")
    except UnicodeDecodeError as e:
        raise FormatError("manifest is not valid UTF-8", offset=e.start) from e

    manifest = Manifest()
    index: list[tuple[str, str, int, int]] = []
    blob_bytes = None
    pos = 0
    for line in header.split("\n"):
        line_offset = pos
        pos += len(line.encode("utf-8")) + 1
        stripped = line.strip()
        if line_offset == 0:
            if not stripped.startswith(_MAGIC):
                raise FormatError("not a .qnn container (bad magic line)", offset=0)
            version_part = stripped[len(_MAGIC) :].strip()
            if not version_part.startswith("format_version="):
                raise FormatError("magic line lacks format_version", offset=0)
            try:
                version = int(version_part.split("=", 1)[1])
            except ValueError:
                raise FormatError("format_version is not an integer", offset=0) from None
            if version != FORMAT_VERSION:
                raise VersionError(
                    f"format_version {version} not supported (supported versions: {FORMAT_VERSION})"
                )
            continue
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise FormatError(f"malformed manifest line {stripped!r}", offset=line_offset)
        key, value = (part.strip() for part in stripped.split("=", 1))
        if key.startswith("array."):
            fields = value.split()
            if len(fields) != 4:
                raise FormatError(f"malformed array index line {stripped!r}", offset=line_offset)
            name, dtag, off_s, count_s = fields
            if dtag not in _DTYPES:
                raise FormatError(f"unknown array dtype {dtag!r}", offset=line_offset)
            try:
                index.append((name, dtag, int(off_s), int(count_s)))
            except ValueError:
                raise FormatError(f"non-integer array bounds in {stripped!r}", offset=line_offset) from None
        elif key == "blob_bytes":
            try:
                blob_bytes = int(value)
            except ValueError:
                raise FormatError("blob_bytes is not an integer", offset=line_offset) from None
        else:
            manifest.pairs[key] = value

    if blob_bytes is None:
        raise FormatError("manifest is missing blob_bytes", offset=sep)
    blob_start = sep + len(_SEPARATOR)
    if len(blob) < blob_bytes:
        raise TruncationError(
            f"blob truncated: expected {blob_bytes} bytes, found {len(blob)}",
            offset=blob_start + len(blob),
        )
    for name, dtag, offset, count in index:
        dtype = _DTYPES[dtag]
        end = offset + count * dtype.itemsize
        if offset < 0 or end > blob_bytes:
            raise FormatError(
                f"array {name!r} overruns the blob ({offset}..{end} of {blob_bytes})",
                offset=blob_start + min(len(blob), max(offset, 0)),
            )
        arr = np.frombuffer(blob[offset:end], dtype=dtype).copy()
        manifest.arrays[name] = arr.astype(np.float64 if dtag == "f64" else np.int32)
    return manifest


def format_float(x: float) -> str:
    """repr-based float formatting; round-trips exactly through float()."""
    return repr(float(x))
