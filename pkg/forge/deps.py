from pathlib import Path
from typing import Optional

from fastapi import HTTPException

from .config import settings
from .services.artifact_service import ArtifactService


def resolve_artifact_path(root: Path, name: str, suffix: Optional[str] = None) -> Path:
    fname = name if suffix is None or name.endswith(suffix) else f"{name}{suffix}"
    data_root = Path(root).resolve()
    path = (data_root / fname).resolve()
    if data_root not in path.parents:
        raise HTTPException(status_code=400, detail="Invalid artifact path")
    if not path.is_file():
        raise HTTPException(status_code=404, detail=f"Artifact '{name}' not found")
    return path


def get_artifact_service() -> ArtifactService:
    return ArtifactService(settings.FORGE_OUTPUT_DIR)
