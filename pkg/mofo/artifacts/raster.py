"""PGM/PPM frame codec, motion-map previews and raw float dumps."""
import logging
import re
from pathlib import Path
from typing import BinaryIO, List, Union

import numpy as np
from PIL import Image, UnidentifiedImageError

from ..errors import FormatError, RejectedInputError
from ..flow import Frame
from .base import ArtifactCodec, PathLike

logger = logging.getLogger(__name__)

FRAME_PATTERN = re.compile(r'^frame_(\d{5})\.(pgm|ppm)$')


class FrameCodec(ArtifactCodec):
    """Binary PGM (P5) and PPM (P6) frames with maxval 255."""

    def encode(self, frame: Frame, sink: BinaryIO):
        pixels = np.clip(np.round(frame.pixels * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(pixels).save(sink, format='PPM')

    def decode(self, source: BinaryIO) -> Frame:
        try:
            with Image.open(source) as img:
                img.load()
                if img.format != 'PPM':
                    raise FormatError(f"expected a PGM/PPM file, got {img.format}", offset=0)
                if img.mode not in ('L', 'RGB'):
                    raise FormatError(f"unsupported pixel mode {img.mode} (maxval must be 255)", offset=0)
                arr = np.asarray(img, dtype=np.float64) / 255.0
        except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as e:
            raise FormatError(f"unreadable frame: {e}", offset=0) from e
        try:
            return Frame(arr)
        except RejectedInputError as e:
            raise FormatError(str(e), offset=0) from e


def read_frames(directory: PathLike) -> List[Frame]:
    """Load frame_%05d.pgm / .ppm files from a directory in index order."""
    directory = Path(directory)
    if not directory.is_dir():
        raise RejectedInputError(f"frames directory not found: {directory}")
    paths = sorted(p for p in directory.iterdir() if FRAME_PATTERN.match(p.name))
    codec = FrameCodec()
    frames = [codec.load(p) for p in paths]
    logger.debug("read %d frames from %s", len(frames), directory)
    return frames


def _values(obj) -> np.ndarray:
    return np.asarray(getattr(obj, 'm', obj), dtype=np.float64)


def write_map_pgm(motion_map, path: PathLike):
    """Min-max scale a map to 0-255 and save it as PGM for inspection."""
    m = _values(motion_map)
    lo, hi = float(m.min()), float(m.max())
    scaled = np.zeros_like(m) if hi <= lo else (m - lo) / (hi - lo)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.round(scaled * 255.0).astype(np.uint8)).save(path, format='PPM')


def write_float_dump(values: Union[np.ndarray, object], path: PathLike):
    """Raw little-endian float32, row-major, no header."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    _values(values).astype('<f4').tofile(path)


def read_float_dump(path: PathLike, height: int, width: int) -> np.ndarray:
    data = np.fromfile(path, dtype='<f4')
    if data.size != height * width:
        raise FormatError(f"expected {height * width} floats, got {data.size}", offset=data.size * 4, path=str(path))
    return data.reshape(height, width)
