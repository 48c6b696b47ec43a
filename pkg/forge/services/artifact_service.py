from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional

import pandas as pd

from ..config import settings
from ..models import ArtifactInfo
from ..utils.tables import read_csv

KINDS = {
    ".csv": "table",
    ".json": "json",
    ".geojson": "json",
    ".pgm": "image",
    ".svg": "image",
    ".ckpt": "checkpoint",
}


@dataclass
class CachedFrame:
    df: pd.DataFrame
    mtime: float


class ArtifactService:
    """Read-only view over one pipeline output directory."""

    def __init__(self, root: Path):
        self.root = Path(root)
        self._cache: Dict[Path, CachedFrame] = {}

    def _read_csv_cached(self, path: Path) -> pd.DataFrame:
        path = path.resolve()
        mtime = path.stat().st_mtime
        cached = self._cache.get(path)
        if not cached or cached.mtime != mtime:
            self._cache[path] = CachedFrame(df=read_csv(path), mtime=mtime)
        return self._cache[path].df

    def list_artifacts(self) -> List[ArtifactInfo]:
        if not self.root.is_dir():
            return []
        out = []
        for p in sorted(self.root.rglob("*")):
            if p.is_file() and p.suffix in KINDS:
                out.append(ArtifactInfo(
                    name=p.relative_to(self.root).as_posix(),
                    kind=KINDS[p.suffix],
                    size_bytes=p.stat().st_size,
                ))
        return out

    def query(self, path: Path, limit: int = 50, offset: int = 0, sort: Optional[str] = None) -> Dict[str, Any]:
        df = self._read_csv_cached(path)
        total = len(df)

        if sort:
            cols, ascending = [], []
            for part in sort.split(","):
                part = part.strip()
                if not part:
                    continue
                col, _, direction = part.partition(":")
                if col not in df.columns:
                    continue
                cols.append(col)
                ascending.append(direction.lower() != "desc")
            if cols:
                df = df.sort_values(by=cols, ascending=ascending, kind="mergesort")

        limit = max(0, min(limit, settings.MAX_PAGE_SIZE))
        offset = max(0, offset)
        page_df = df.iloc[offset: offset + limit]
        # blank cells come back as NaN, which JSON cannot carry
        page_df = page_df.astype(object).where(pd.notna(page_df), None)
        return {"total": total, "limit": limit, "offset": offset, "items": page_df.to_dict(orient="records")}

    def read_json(self, path: Path) -> Dict[str, Any]:
        return json.loads(Path(path).read_text(encoding="utf-8"))
