# serialization.py
"""
Little-endian binary codec shared by the artifact files.

Layout of a manifest artifact (datasets, models):

    magic (5 bytes) | u32 version | u32 manifest length | manifest text |
    u32 array count | arrays...

Each array is written as: u16 name length, name, u8 dtype code, u8 ndim,
u64 per dimension, raw little-endian bytes. The manifest is a "key = value"
text block whose values are JSON; it carries the sha256 of the array section
under `content_hash`.
"""

import hashlib
import io
import json
import struct
from pathlib import Path
from typing import Any, Dict, Tuple

import numpy as np

from exceptions import HashMismatchException, SerializationException, VersionMismatchException
from logging_config import get_logger

logger = get_logger(__name__)

_DTYPES = {
    0: np.dtype("<f8"),
    1: np.dtype("<c16"),
    2: np.dtype("<i8"),
    3: np.dtype("|u1"),
}
_CODES = {np.dtype(dt).newbyteorder("=").str: code for code, dt in _DTYPES.items()}


def _dtype_code(arr: np.ndarray) -> Tuple[int, np.ndarray]:
    if arr.dtype == np.bool_:
        arr = arr.astype(np.uint8)
    elif np.issubdtype(arr.dtype, np.complexfloating):
        arr = arr.astype(np.complex128)
    elif np.issubdtype(arr.dtype, np.floating):
        arr = arr.astype(np.float64)
    elif np.issubdtype(arr.dtype, np.integer) and arr.dtype != np.uint8:
        arr = arr.astype(np.int64)
    code = _CODES.get(arr.dtype.newbyteorder("=").str)
    if code is None:
        raise SerializationException(f"Unsupported dtype {arr.dtype}")
    return code, np.ascontiguousarray(arr, dtype=_DTYPES[code])


class BinaryWriter:
    """Appends little-endian scalars and arrays to an in-memory buffer."""

    def __init__(self):
        self.buffer = io.BytesIO()

    def raw(self, data: bytes):
        self.buffer.write(data)

    def u32(self, value: int):
        self.buffer.write(struct.pack("<I", value))

    def u64(self, value: int):
        self.buffer.write(struct.pack("<Q", value))

    def f64(self, value: float):
        self.buffer.write(struct.pack("<d", value))

    def text(self, value: str):
        data = value.encode("utf-8")
        self.u32(len(data))
        self.buffer.write(data)

    def vector(self, arr: np.ndarray, dtype: str):
        """Length-prefixed 1D array with a fixed dtype (used by the HSYS layout)."""
        data = np.ascontiguousarray(np.asarray(arr).ravel(), dtype=np.dtype(dtype))
        self.u64(data.size)
        self.buffer.write(data.tobytes())

    def array(self, name: str, arr) -> None:
        code, data = _dtype_code(np.asarray(arr))
        encoded = name.encode("utf-8")
        self.buffer.write(struct.pack("<H", len(encoded)))
        self.buffer.write(encoded)
        self.buffer.write(struct.pack("<BB", code, data.ndim))
        for dim in data.shape:
            self.u64(dim)
        self.buffer.write(data.tobytes())

    def getvalue(self) -> bytes:
        return self.buffer.getvalue()


class BinaryReader:
    """Sequential reader matching BinaryWriter."""

    def __init__(self, data: bytes, source: str = "<bytes>"):
        self.data = data
        self.offset = 0
        self.source = source

    def _take(self, size: int) -> bytes:
        if self.offset + size > len(self.data):
            raise SerializationException(f"{self.source}: truncated file", details={"offset": self.offset})
        chunk = self.data[self.offset:self.offset + size]
        self.offset += size
        return chunk

    def raw(self, size: int) -> bytes:
        return self._take(size)

    def u32(self) -> int:
        return struct.unpack("<I", self._take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self._take(8))[0]

    def f64(self) -> float:
        return struct.unpack("<d", self._take(8))[0]

    def text(self) -> str:
        return self._take(self.u32()).decode("utf-8")

    def vector(self, dtype: str) -> np.ndarray:
        dt = np.dtype(dtype)
        count = self.u64()
        return np.frombuffer(self._take(count * dt.itemsize), dtype=dt).copy()

    def array(self) -> Tuple[str, np.ndarray]:
        (name_len,) = struct.unpack("<H", self._take(2))
        name = self._take(name_len).decode("utf-8")
        code, ndim = struct.unpack("<BB", self._take(2))
        if code not in _DTYPES:
            raise SerializationException(f"{self.source}: unknown dtype code {code} for '{name}'")
        shape = tuple(self.u64() for _ in range(ndim))
        dt = _DTYPES[code]
        count = int(np.prod(shape)) if shape else 1
        values = np.frombuffer(self._take(count * dt.itemsize), dtype=dt).reshape(shape).copy()
        return name, values

    def at_end(self) -> bool:
        return self.offset == len(self.data)


# ============== Manifests ==============

def encode_manifest(manifest: Dict[str, Any]) -> str:
    return "".join(f"{key} = {json.dumps(value, sort_keys=True)}\n" for key, value in manifest.items())


def decode_manifest(text: str) -> Dict[str, Any]:
    manifest = {}
    for line in text.splitlines():
        if not line.strip():
            continue
        key, sep, value = line.partition(" = ")
        if not sep:
            raise SerializationException(f"Malformed manifest line: {line!r}")
        try:
            manifest[key] = json.loads(value)
        except json.JSONDecodeError as e:
            raise SerializationException(f"Malformed manifest value for '{key}'", original_exception=e) from e
    return manifest


def encode_arrays(arrays: Dict[str, np.ndarray]) -> bytes:
    writer = BinaryWriter()
    writer.u32(len(arrays))
    for name, arr in arrays.items():
        writer.array(name, arr)
    return writer.getvalue()


def hash_bytes(payload: bytes) -> str:
    return hashlib.sha256(payload).hexdigest()


def write_artifact(path, magic: bytes, version: int, manifest: Dict[str, Any],
                   arrays: Dict[str, np.ndarray]) -> str:
    """
    Write a manifest artifact and return its content hash.

    The hash covers the array section only, so it is stable under manifest
    edits and can be used as a parent reference by downstream artifacts.
    """
    payload = encode_arrays(arrays)
    digest = hash_bytes(payload)
    full_manifest = {**manifest, "content_hash": digest}

    writer = BinaryWriter()
    writer.raw(magic)
    writer.u32(version)
    writer.text(encode_manifest(full_manifest))
    writer.raw(payload)

    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(writer.getvalue())
    except OSError as e:
        raise SerializationException(f"Cannot write {path}", original_exception=e) from e

    logger.info(f"Wrote {magic.decode()} artifact {path}", extra={"path": str(path), "hash": digest})
    return digest


def read_artifact(path, magic: bytes, version: int,
                  verify: bool = True) -> Tuple[Dict[str, Any], Dict[str, np.ndarray]]:
    """
    Read a manifest artifact.

    Raises:
        VersionMismatchException: wrong magic or version
        HashMismatchException: payload does not match the stored hash
    """
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise SerializationException(f"Cannot read {path}", original_exception=e) from e

    reader = BinaryReader(data, str(path))
    found_magic = reader.raw(len(magic))
    if found_magic != magic:
        raise VersionMismatchException(str(path), magic.decode(), found_magic.decode(errors="replace"))
    found_version = reader.u32()
    if found_version != version:
        raise VersionMismatchException(str(path), f"{magic.decode()} v{version}", f"v{found_version}")

    manifest = decode_manifest(reader.text())
    payload_start = reader.offset
    count = reader.u32()
    arrays = {}
    for _ in range(count):
        name, values = reader.array()
        arrays[name] = values
    if not reader.at_end():
        raise SerializationException(f"{path}: trailing bytes after array section")

    if verify:
        digest = hash_bytes(data[payload_start:])
        if digest != manifest.get("content_hash"):
            raise HashMismatchException(str(path), str(manifest.get("content_hash")), digest)

    return manifest, arrays
