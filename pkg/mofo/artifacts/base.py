"""Abstract base class for artifact codecs."""
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Any, BinaryIO, Union

from ..errors import FormatError

PathLike = Union[str, Path]


class ArtifactCodec(ABC):
    """Binary encoder/decoder for one artifact type."""

    @abstractmethod
    def encode(self, obj: Any, sink: BinaryIO):
        """Write obj to an open binary sink."""
        pass

    @abstractmethod
    def decode(self, source: BinaryIO) -> Any:
        """Read one object from an open binary source."""
        pass

    def save(self, obj: Any, path: PathLike):
        """Encode obj into a file, creating parent directories."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, 'wb') as f:
            self.encode(obj, f)

    def load(self, path: PathLike) -> Any:
        """Decode a file; format errors name the file."""
        with open(path, 'rb') as f:
            try:
                return self.decode(f)
            except FormatError as e:
                raise FormatError(e.message, offset=e.offset, path=str(path)) from e
