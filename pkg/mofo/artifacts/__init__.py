"""Artifact codecs module."""
from .base import ArtifactCodec
from .checkpoint import CheckpointCodec
from .flo import FloCodec
from .raster import FrameCodec, read_float_dump, read_frames, write_float_dump, write_map_pgm
from .records import load_json, write_csv, write_json

__all__ = [
    'ArtifactCodec', 'CheckpointCodec', 'FloCodec', 'FrameCodec',
    'read_float_dump', 'read_frames', 'write_float_dump', 'write_map_pgm',
    'load_json', 'write_csv', 'write_json',
]
