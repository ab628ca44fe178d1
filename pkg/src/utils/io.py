"""Artifact writers. Every file is written to a temporary sibling and renamed into place."""
import json
import os
import tempfile
from pathlib import Path
from typing import Any

import pandas as pd


def atomic_write_text(path: Path, text: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
            handle.write(text)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    return path


def dumps_json(payload: Any) -> str:
    """Stable JSON: sorted keys, full double precision, trailing newline."""
    return json.dumps(payload, indent=2, sort_keys=True, allow_nan=True) + "\n"


def write_json(path: Path, payload: Any) -> Path:
    return atomic_write_text(path, dumps_json(payload))


def write_csv(path: Path, frame: pd.DataFrame) -> Path:
    return atomic_write_text(path, frame.to_csv(index=False, lineterminator="\r\n"))
