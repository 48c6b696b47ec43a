from __future__ import annotations

from pathlib import Path
from typing import Optional

import pandas as pd

HASH_PREFIX = "# config_hash:"

# identifier columns stay strings even when they look numeric
_ID_COLUMNS = {"building_id": str, "zone": str, "archetype_id": str}


def write_csv(path: Path, frame: pd.DataFrame, config_hash: Optional[str] = None) -> Path:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        if config_hash:
            fh.write(f"{HASH_PREFIX} {config_hash}\n")
        frame.to_csv(fh, index=False, lineterminator="\n")
    return path


def read_csv(path: Path) -> pd.DataFrame:
    """Reads a CSV artifact, skipping its hash line. Only empty cells are missing;
    ids such as "NA" or "lot#12" come back verbatim."""
    skip = 1 if read_config_hash(path) is not None else 0
    return pd.read_csv(path, skiprows=skip, dtype=_ID_COLUMNS, keep_default_na=False, na_values=[""])


def read_config_hash(path: Path) -> Optional[str]:
    """The `config_hash` comment of a CSV artifact, if present."""
    with Path(path).open("r", encoding="utf-8") as fh:
        first = fh.readline().strip()
    return first[len(HASH_PREFIX):].strip() if first.startswith(HASH_PREFIX) else None
