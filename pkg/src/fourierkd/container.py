"""A tiny self-describing binary container for arrays.

Layout (all integers little-endian):

    magic   4 bytes   b"FKDC"
    version u32
    digest  u32 length + that many bytes of UTF-8 (config digest hex)
    count   u32 number of blocks
    blocks  repeated:
        name    u32 length + UTF-8 bytes
        dtype   u8 (0 = float64, 1 = int64, 2 = uint8)
        rank    u8
        dims    rank * u32
        payload raw little-endian array bytes

Blocks keep their write order on read, so a write/read/write cycle is
byte-identical.  Unknown magic, a version mismatch, or a short file are
rejected with a descriptive error.
"""

from __future__ import annotations

import hashlib
import struct
from collections import OrderedDict

import numpy as np

__all__ = [
    "FORMAT_VERSION",
    "write_container",
    "read_container",
    "sha256_file",
    "sha256_bytes",
]

MAGIC = b"FKDC"
FORMAT_VERSION = 1

_DTYPE_TAGS = {np.dtype("float64"): 0, np.dtype("int64"): 1, np.dtype("uint8"): 2}
_TAG_DTYPES = {v: k for k, v in _DTYPE_TAGS.items()}


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_container(path, blocks: dict[str, np.ndarray], config_digest: str = "",
                    version: int = FORMAT_VERSION) -> None:
    digest_bytes = config_digest.encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", version))
        fh.write(struct.pack("<I", len(digest_bytes)))
        fh.write(digest_bytes)
        fh.write(struct.pack("<I", len(blocks)))
        for name, arr in blocks.items():
            arr = np.asarray(arr)
            if arr.dtype not in _DTYPE_TAGS:
                raise ValueError(
                    f"block '{name}' has unsupported dtype {arr.dtype}; "
                    f"supported: float64, int64, uint8"
                )
            name_bytes = name.encode("utf-8")
            fh.write(struct.pack("<I", len(name_bytes)))
            fh.write(name_bytes)
            fh.write(struct.pack("<BB", _DTYPE_TAGS[arr.dtype], arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(np.ascontiguousarray(arr, dtype=arr.dtype.newbyteorder("<")).tobytes())


def _read_exact(fh, n: int, what: str) -> bytes:
    data = fh.read(n)
    if len(data) != n:
        raise ValueError(f"container truncated while reading {what} "
                         f"(wanted {n} bytes, got {len(data)})")
    return data


def read_container(path, expect_version: int = FORMAT_VERSION
                   ) -> tuple["OrderedDict[str, np.ndarray]", str]:
    """Read all blocks; returns (blocks in file order, config digest)."""
    with open(path, "rb") as fh:
        magic = _read_exact(fh, 4, "magic")
        if magic != MAGIC:
            raise ValueError(f"not a container file: bad magic {magic!r}")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, "version"))
        if version != expect_version:
            raise ValueError(
                f"container version {version} does not match expected {expect_version}"
            )
        (dlen,) = struct.unpack("<I", _read_exact(fh, 4, "digest length"))
        digest = _read_exact(fh, dlen, "digest").decode("utf-8")
        (count,) = struct.unpack("<I", _read_exact(fh, 4, "block count"))
        blocks: OrderedDict[str, np.ndarray] = OrderedDict()
        for i in range(count):
            (nlen,) = struct.unpack("<I", _read_exact(fh, 4, f"block {i} name length"))
            name = _read_exact(fh, nlen, f"block {i} name").decode("utf-8")
            tag, rank = struct.unpack("<BB", _read_exact(fh, 2, f"'{name}' header"))
            if tag not in _TAG_DTYPES:
                raise ValueError(f"block '{name}' has unknown dtype tag {tag}")
            dims = struct.unpack(f"<{rank}I", _read_exact(fh, 4 * rank, f"'{name}' dims"))
            dtype = _TAG_DTYPES[tag]
            nbytes = int(np.prod(dims, dtype=np.int64)) * dtype.itemsize if rank else dtype.itemsize
            payload = _read_exact(fh, nbytes, f"'{name}' payload")
            arr = np.frombuffer(payload, dtype=dtype.newbyteorder("<")).astype(dtype)
            blocks[name] = arr.reshape(dims)
        trailing = fh.read(1)
        if trailing:
            raise ValueError("container has trailing bytes after the last block")
    return blocks, digest
