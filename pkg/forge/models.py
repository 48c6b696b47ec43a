# forge/models.py
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator


# ---------- inventory ----------

class LandUse(str, Enum):
    RESIDENTIAL = "Residential"
    OTHER = "Other"

    @classmethod
    def parse(cls, value: str) -> "LandUse":
        return cls.RESIDENTIAL if value.strip().lower() == "residential" else cls.OTHER


Ring = Tuple[Tuple[float, float], ...]


class BuildingRecord(BaseModel):
    """One building footprint in planar meters; outer ring first, holes after."""

    model_config = ConfigDict(frozen=True)

    id: str
    footprint: Tuple[Ring, ...]
    height_m: float = Field(gt=0, le=100)
    land_use: LandUse
    footprint_area_m2: float = Field(gt=0)
    floor_area_m2: float
    measured_eui_kwh_m2: Optional[float] = Field(None, ge=0)
    zone: str = "district"
    # reference archetype label, only used to score cluster recovery
    label: Optional[str] = None

    @model_validator(mode="after")
    def _check_geometry(self) -> "BuildingRecord":
        if not self.footprint:
            raise ValueError("footprint has no rings")
        for ring in self.footprint:
            if len(ring) < 4:
                raise ValueError("ring needs at least 4 vertices")
            if ring[0] != ring[-1]:
                raise ValueError("ring is not closed")
        if self.floor_area_m2 < self.footprint_area_m2:
            raise ValueError("floor area smaller than footprint area")
        return self

    @property
    def outer(self) -> Ring:
        return self.footprint[0]


class Rejection(BaseModel):
    feature_index: int
    feature_id: Optional[str] = None
    reason: str


class InventorySummary(BaseModel):
    total_count: int = Field(ge=0)
    residential_count: int = Field(ge=0)
    residential_fraction: float = Field(ge=0, le=1)
    rejections: List[Rejection] = []

    @model_validator(mode="after")
    def _counts_consistent(self) -> "InventorySummary":
        if self.residential_count > self.total_count:
            raise ValueError("residential_count exceeds total_count")
        return self

    @classmethod
    def from_counts(cls, total: int, residential: int,
                    rejections: Optional[List[Rejection]] = None) -> "InventorySummary":
        return cls(
            total_count=total,
            residential_count=residential,
            residential_fraction=residential / total if total else 0.0,
            rejections=rejections or [],
        )


# ---------- rasters and latents ----------

@dataclass(frozen=True)
class Heightmap:
    building_id: str
    pixels: np.ndarray  # (side, side) float64 in [0, 1]; row 0 is north


@dataclass(frozen=True)
class LatentCode:
    building_id: str
    indices: np.ndarray    # (g, g) int64 codebook indices
    embedding: np.ndarray  # (g * g * D,) float64, channel-last flattening


@dataclass
class TrainCurves:
    train_mse: List[float] = field(default_factory=list)
    test_mse: List[float] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.train_mse)


# ---------- clustering ----------

@dataclass(frozen=True)
class ClusterModel:
    k: int
    centroids: np.ndarray    # (k, M)
    assignments: np.ndarray  # (N,) int64
    wcss: float
    seed: int
    n_iter: int = 0
    wcss_history: Tuple[float, ...] = ()

    def members(self, cluster: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == cluster)


@dataclass(frozen=True)
class Archetype:
    cluster: int
    sampled_member_id: str
    averaged_heightmap: np.ndarray
    member_ids: Tuple[str, ...]
    member_total_floor_area_m2: float


ArchetypeSet = List[Archetype]


# ---------- energy ----------

class EuiRecord(BaseModel):
    model_config = ConfigDict(frozen=True)

    archetype_id: str
    eui_kwh_per_m2: float = Field(ge=0)
    conditioned: bool = True


BASELINE_ARCHETYPE = "PBM"


class ZoneTotals(BaseModel):
    model_config = ConfigDict(allow_inf_nan=False)

    zone: str
    actual_kwh: float
    baseline_kwh: float
    sampled_kwh: float
    averaged_kwh: float


class ZoneEstimate(BaseModel):
    """Accuracies and improvements are fractions; x100 gives percent / points."""

    zone: str
    actual_kwh: float
    baseline_kwh: float
    sampled_kwh: float
    averaged_kwh: float
    baseline_accuracy: float = Field(le=1)
    sampled_accuracy: float = Field(le=1)
    averaged_accuracy: float = Field(le=1)
    sampled_improvement: float
    averaged_improvement: float


class ReportAverage(BaseModel):
    baseline_accuracy: float
    sampled_accuracy: float
    averaged_accuracy: float
    sampled_improvement: float
    averaged_improvement: float
    # over both archetype methods and all zones
    method_accuracy: float
    improvement: float


class EnergyReport(BaseModel):
    zones: List[ZoneEstimate]
    average: ReportAverage
    conditioned: Dict[str, Optional[bool]] = {}
    config_hash: Optional[str] = None


# ---------- API schemas ----------

class ArtifactInfo(BaseModel):
    name: str
    kind: str
    size_bytes: int


class Page(BaseModel):
    total: int
    limit: int
    offset: int
    items: List[Dict[str, Any]]
