"""Versioned "MOFO" parameter container."""
from typing import BinaryIO, Dict

import numpy as np

from ..errors import FormatError
from .base import ArtifactCodec

MAGIC = b'MOFO'
FORMAT_VERSION = 1


class _Reader:
    """Cursor over a byte buffer that reports truncation with the failing offset."""

    def __init__(self, raw: bytes):
        self.raw = raw
        self.offset = 0

    def take(self, n: int, what: str) -> bytes:
        if self.offset + n > len(self.raw):
            raise FormatError(f"truncated {what}", offset=self.offset)
        chunk = self.raw[self.offset:self.offset + n]
        self.offset += n
        return chunk

    def u32(self, what: str) -> int:
        return int(np.frombuffer(self.take(4, what), dtype='<u4')[0])


class CheckpointCodec(ArtifactCodec):
    """Magic, u32 version, u32 tensor count, then per tensor: u32 name length, name,
    u32 rank, u32 dims, little-endian float32 values."""

    def encode(self, tensors: Dict[str, np.ndarray], sink: BinaryIO):
        sink.write(MAGIC)
        sink.write(np.array([FORMAT_VERSION, len(tensors)], dtype='<u4').tobytes())
        for name in sorted(tensors):
            value = np.asarray(tensors[name], dtype='<f4')
            encoded = name.encode('utf-8')
            sink.write(np.array([len(encoded)], dtype='<u4').tobytes())
            sink.write(encoded)
            sink.write(np.array([value.ndim, *value.shape], dtype='<u4').tobytes())
            sink.write(np.ascontiguousarray(value).tobytes())

    def decode(self, source: BinaryIO) -> Dict[str, np.ndarray]:
        reader = _Reader(source.read())
        magic = reader.take(4, 'magic')
        if magic != MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}", offset=0)
        version = reader.u32('version')
        if version != FORMAT_VERSION:
            raise FormatError(f"unsupported checkpoint version {version}", offset=4)
        count = reader.u32('tensor count')
        tensors = {}
        for _ in range(count):
            start = reader.offset
            name = reader.take(reader.u32('name length'), 'name').decode('utf-8')
            rank = reader.u32('rank')
            shape = tuple(reader.u32('dims') for _ in range(rank))
            size = int(np.prod(shape, dtype=np.int64))
            values = np.frombuffer(reader.take(4 * size, f"tensor '{name}'"), dtype='<f4')
            if name in tensors:
                raise FormatError(f"duplicate tensor '{name}'", offset=start)
            tensors[name] = values.reshape(shape).astype(np.float32)
        if reader.offset != len(reader.raw):
            raise FormatError("trailing bytes after last tensor", offset=reader.offset)
        return tensors
