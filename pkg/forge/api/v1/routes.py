from typing import Any, Dict, List, Optional

from fastapi import APIRouter, Depends, Query

from ...config import settings
from ...deps import get_artifact_service, resolve_artifact_path
from ...models import ArtifactInfo, EnergyReport, InventorySummary, Page
from ...services.artifact_service import ArtifactService

router = APIRouter(prefix="/api/v1", tags=["v1"])


@router.get("/artifacts", response_model=List[ArtifactInfo])
def list_artifacts(service: ArtifactService = Depends(get_artifact_service)):
    return service.list_artifacts()


@router.get("/artifacts/{name}/table", response_model=Page)
def get_table(
    name: str,
    limit: int = Query(50, ge=0, le=settings.MAX_PAGE_SIZE),
    offset: int = Query(0, ge=0),
    sort: Optional[str] = Query(None, description="col:asc,col2:desc"),
    service: ArtifactService = Depends(get_artifact_service),
):
    path = resolve_artifact_path(service.root, name, ".csv")
    return service.query(path, limit=limit, offset=offset, sort=sort)


@router.get("/report", response_model=EnergyReport)
def get_report(service: ArtifactService = Depends(get_artifact_service)):
    path = resolve_artifact_path(service.root, "energy_report.json")
    return service.read_json(path)


@router.get("/inventory/summary", response_model=InventorySummary)
def get_inventory_summary(service: ArtifactService = Depends(get_artifact_service)) -> Dict[str, Any]:
    path = resolve_artifact_path(service.root, "inventory_summary.json")
    return service.read_json(path)
