"""JSON and CSV report writers."""
import csv
import json
from pathlib import Path
from typing import Any, Iterable, Sequence

from ..errors import FormatError
from .base import PathLike


def write_json(payload: Any, path: PathLike):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write('\n')


def load_json(path: PathLike) -> Any:
    with open(path, 'r', encoding='utf-8') as f:
        try:
            return json.load(f)
        except json.JSONDecodeError as e:
            raise FormatError(f"invalid JSON: {e.msg}", offset=e.pos, path=str(path)) from e


def write_csv(header: Sequence[str], rows: Iterable[Sequence[Any]], path: PathLike):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8', newline='') as f:
        writer = csv.writer(f, lineterminator='\n')
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
