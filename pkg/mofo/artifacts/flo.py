"""Middlebury .flo codec."""
from typing import BinaryIO

import numpy as np

from ..errors import FormatError, RejectedInputError
from ..flow import FlowField
from .base import ArtifactCodec

FLO_MAGIC = np.float32(202021.25)
HEADER_BYTES = 12


class FloCodec(ArtifactCodec):
    """Magic float, int32 width and height, then interleaved (u, v) float32, all little-endian."""

    def encode(self, field: FlowField, sink: BinaryIO):
        sink.write(np.array([FLO_MAGIC], dtype='<f4').tobytes())
        sink.write(np.array([field.width, field.height], dtype='<i4').tobytes())
        data = np.stack([field.u, field.v], axis=-1).astype('<f4')
        sink.write(data.tobytes())

    def decode(self, source: BinaryIO) -> FlowField:
        raw = source.read()
        if len(raw) < 4:
            raise FormatError("truncated magic", offset=len(raw))
        magic = np.frombuffer(raw[:4], dtype='<f4')[0]
        if magic != FLO_MAGIC:
            raise FormatError(f"bad magic {magic!r}, expected 202021.25", offset=0)
        if len(raw) < HEADER_BYTES:
            raise FormatError("truncated header", offset=len(raw))
        width, height = (int(x) for x in np.frombuffer(raw[4:HEADER_BYTES], dtype='<i4'))
        if width <= 0 or height <= 0:
            raise FormatError(f"invalid dimensions {width}x{height}", offset=4)
        expected = HEADER_BYTES + 8 * width * height
        if len(raw) < expected:
            raise FormatError(f"truncated payload: expected {expected} bytes, got {len(raw)}", offset=len(raw))
        if len(raw) > expected:
            raise FormatError(f"{len(raw) - expected} trailing bytes after payload", offset=expected)
        data = np.frombuffer(raw[HEADER_BYTES:], dtype='<f4').reshape(height, width, 2)
        try:
            return FlowField(data[..., 0].astype(np.float32), data[..., 1].astype(np.float32))
        except RejectedInputError as e:
            raise FormatError(str(e), offset=HEADER_BYTES) from e
