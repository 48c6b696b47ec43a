import json
from pathlib import Path

import numpy as np
import pytest

from forge.models import BuildingRecord, Heightmap, LandUse
from forge.services.inventory_service import derive_floor_area
from forge.utils.geometry import footprint_area

DATA_DIR = Path(__file__).resolve().parent.parent / "data"


def rect(x0, y0, w, d):
    return ((x0, y0), (x0 + w, y0), (x0 + w, y0 + d), (x0, y0 + d), (x0, y0))


def make_record(rings, height_m=10.0, id="b0", **extra):
    rings = tuple(tuple(r) for r in rings)
    area = footprint_area(rings)
    fields = dict(
        id=id,
        footprint=rings,
        height_m=height_m,
        land_use=LandUse.RESIDENTIAL,
        footprint_area_m2=area,
        floor_area_m2=derive_floor_area(area, height_m),
    )
    fields.update(extra)
    return BuildingRecord(**fields)


def feature(fid, rings, geometry="Polygon", **props):
    coords = [[list(p) for p in ring] for ring in rings]
    return {"type": "Feature", "id": fid, "properties": props,
            "geometry": {"type": geometry, "coordinates": coords}}


def write_collection(path, features):
    path.write_text(json.dumps({"type": "FeatureCollection", "features": features}), encoding="utf-8")
    return path


def random_maps(n, side=16, seed=0):
    """Random filled rectangles, intensity in [0.1, 0.9]."""
    rng = np.random.default_rng(seed)
    maps = []
    for i in range(n):
        grid = np.zeros((side, side))
        r0, c0 = rng.integers(0, side // 2, size=2)
        h, w = rng.integers(2, side // 2, size=2)
        grid[r0:r0 + h, c0:c0 + w] = rng.uniform(0.1, 0.9)
        maps.append(Heightmap(building_id=f"m{i:03d}", pixels=grid))
    return maps


@pytest.fixture
def sample_inventory():
    return DATA_DIR / "sample_inventory.geojson"
