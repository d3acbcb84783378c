"""Low-level binary layout shared by the container files.

Every file is ``header | header CRC32 | block offset table | table CRC32 |
blocks``. A block is ``u32 CRC32(payload) | u32 len(payload) | payload`` where
the payload is the codec-compressed column bytes. All integers little-endian.

events.bin header::

    magic "EVKZ" | version u16 | codec u8 | chunk_size u32 | N u64 | width u16 | height u16

Blocks in events.bin are ordered chunk-major, four per chunk: xs, ys, ts, ps.
ts blocks hold the chunk's first timestamp followed by successive deltas.
"""
from __future__ import annotations

import mmap
import os
import struct
import threading
import zlib

import numpy as np

FORMAT_VERSION = 1

CODEC_NONE, CODEC_DEFLATE, CODEC_ZSTD = 0, 1, 2
CODEC_IDS = {"none": CODEC_NONE, "deflate": CODEC_DEFLATE, "zstd": CODEC_ZSTD}
CODEC_NAMES = {v: k for k, v in CODEC_IDS.items()}

DEFLATE_LEVEL = 6
ZSTD_LEVEL = 3

EVENTS_HEADER = struct.Struct("<4sHBIQHH")
GRAY_HEADER = struct.Struct("<4sHBIHH")
FLOW_HEADER = struct.Struct("<4sHBIHH")
MAPS_HEADER = struct.Struct("<4sHBI")
_U32 = struct.Struct("<I")
_BLOCK = struct.Struct("<II")

MAX_BLOCK_BYTES = 2**32 - 1


class ContainerError(IOError):
    """Malformed, missing or corrupted container content."""


class ChecksumError(ContainerError):
    pass


def _zstd():
    try:
        import zstandard
    except ImportError as exc:  # pragma: no cover - zstandard is a declared dependency
        raise ContainerError("codec zstd unavailable: install 'zstandard'") from exc
    return zstandard


def codec_id(codec) -> int:
    if isinstance(codec, int):
        if codec not in CODEC_NAMES:
            raise ContainerError(f"unknown codec id {codec}")
        return codec
    try:
        return CODEC_IDS[codec]
    except KeyError:
        raise ContainerError(f"unknown codec {codec!r}") from None


def compress(data: bytes, codec: int) -> bytes:
    if codec == CODEC_NONE:
        return bytes(data)
    if codec == CODEC_DEFLATE:
        return zlib.compress(data, DEFLATE_LEVEL)
    if codec == CODEC_ZSTD:
        return _zstd().ZstdCompressor(level=ZSTD_LEVEL).compress(data)
    raise ContainerError(f"unknown codec id {codec}")


def decompress(data: bytes, codec: int, expected_size: int) -> bytes:
    if codec == CODEC_NONE:
        out = bytes(data)
    elif codec == CODEC_DEFLATE:
        out = zlib.decompress(data)
    elif codec == CODEC_ZSTD:
        out = _zstd().ZstdDecompressor().decompress(data, max_output_size=max(expected_size, 1))
    else:
        raise ContainerError(f"unknown codec id {codec}")
    if len(out) != expected_size:
        raise ContainerError(f"block decoded to {len(out)} bytes, expected {expected_size}")
    return out


def encode_block(arr: np.ndarray, codec: int) -> bytes:
    payload = compress(np.ascontiguousarray(arr).tobytes(), codec)
    if len(payload) > MAX_BLOCK_BYTES:
        raise ContainerError("block exceeds 4 GiB; reduce chunk_size")
    return _BLOCK.pack(zlib.crc32(payload), len(payload)) + payload


def write_blockfile(path, header: bytes, blocks) -> None:
    """Write ``header`` followed by the offset table and the encoded blocks.

    ``blocks`` is a sequence of already-encoded block bytes.
    """
    n = len(blocks)
    table_size = 8 * n
    base = len(header) + 4 + table_size + 4
    offsets = np.empty(n, dtype="<u8")
    pos = base
    for i, b in enumerate(blocks):
        offsets[i] = pos
        pos += len(b)
    table = offsets.tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(_U32.pack(zlib.crc32(header)))
        fh.write(table)
        fh.write(_U32.pack(zlib.crc32(table)))
        for b in blocks:
            fh.write(b)


class BlockFile:
    """Read-only, memory-mapped view of a block file.

    Only the header and offset table are touched at open time. Block reads go
    through the shared mmap, which is safe for concurrent readers.
    """

    def __init__(self, path, header_struct: struct.Struct, magic: bytes, n_blocks_of):
        self.path = os.fspath(path)
        if not os.path.exists(self.path):
            raise ContainerError(f"missing header: {self.path} not found")
        self._fh = open(self.path, "rb")
        size = os.fstat(self._fh.fileno()).st_size
        hsize = header_struct.size
        if size < hsize + 4:
            self._fh.close()
            raise ContainerError(f"missing header: {self.path} is truncated")
        self._mm = mmap.mmap(self._fh.fileno(), 0, access=mmap.ACCESS_READ)
        raw = self._mm[:hsize]
        (crc,) = _U32.unpack(self._mm[hsize:hsize + 4])
        if zlib.crc32(raw) != crc:
            self.close()
            raise ChecksumError(f"header checksum mismatch in {self.path}")
        self.header = header_struct.unpack(raw)
        if self.header[0] != magic:
            self.close()
            raise ContainerError(f"bad magic in {self.path}: {self.header[0]!r}")
        if self.header[1] != FORMAT_VERSION:
            self.close()
            raise ContainerError(f"unsupported format version {self.header[1]}")
        self.codec = self.header[2]
        if self.codec not in CODEC_NAMES:
            self.close()
            raise ContainerError(f"unknown codec id {self.codec}")
        n = n_blocks_of(self.header)
        start = hsize + 4
        table = self._mm[start:start + 8 * n]
        (tcrc,) = _U32.unpack(self._mm[start + 8 * n:start + 8 * n + 4])
        if len(table) != 8 * n or zlib.crc32(table) != tcrc:
            self.close()
            raise ChecksumError(f"offset table checksum mismatch in {self.path}")
        self.offsets = np.frombuffer(table, dtype="<u8").astype(np.int64)
        self._lock = threading.Lock()
        self.blocks_read = 0

    def __len__(self):
        return len(self.offsets)

    def read(self, i: int, dtype, count: int) -> np.ndarray:
        off = int(self.offsets[i])
        crc, length = _BLOCK.unpack(self._mm[off:off + _BLOCK.size])
        payload = self._mm[off + _BLOCK.size:off + _BLOCK.size + length]
        if len(payload) != length or zlib.crc32(payload) != crc:
            raise ChecksumError(f"chunk checksum mismatch in {self.path} (block {i})")
        dtype = np.dtype(dtype)
        raw = decompress(payload, self.codec, dtype.itemsize * count)
        with self._lock:
            self.blocks_read += 1
        return np.frombuffer(raw, dtype=dtype).copy()

    def close(self):
        mm = getattr(self, "_mm", None)
        if mm is not None:
            mm.close()
            self._mm = None
        if not self._fh.closed:
            self._fh.close()
