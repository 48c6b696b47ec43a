from __future__ import annotations

import json
import logging
import math
from numbers import Real
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from pydantic import ValidationError

from ..errors import DataError, EmptyInventoryError
from ..models import BuildingRecord, InventorySummary, LandUse, Rejection, Ring
from ..utils.geometry import footprint_area

logger = logging.getLogger(__name__)

MAX_HEIGHT_M = 100.0
DEFAULT_STOREY_HEIGHT_M = 3.0


class FeatureRejected(Exception):
    pass


def derive_floor_area(footprint_area_m2: float, height_m: float,
                      storey_height_m: float = DEFAULT_STOREY_HEIGHT_M) -> float:
    """Footprint area times the storey count, at least one storey."""
    if footprint_area_m2 <= 0 or height_m <= 0 or storey_height_m <= 0:
        raise DataError(
            f"derive_floor_area needs positive inputs, got area={footprint_area_m2}, "
            f"height={height_m}, storey={storey_height_m}"
        )
    storeys = max(1, math.floor(height_m / storey_height_m + 0.5))
    return footprint_area_m2 * storeys


def _is_number(value: Any) -> bool:
    return isinstance(value, Real) and not isinstance(value, bool) and math.isfinite(value)


def _parse_ring(raw: Any) -> Ring:
    if not isinstance(raw, list) or len(raw) < 4:
        raise FeatureRejected("ring needs at least 4 vertices")
    ring = []
    for pos in raw:
        if not isinstance(pos, (list, tuple)) or len(pos) < 2 or not all(_is_number(v) for v in pos[:2]):
            raise FeatureRejected("malformed vertex")
        ring.append((float(pos[0]), float(pos[1])))
    if ring[0] != ring[-1]:
        raise FeatureRejected("unclosed ring")
    return tuple(ring)


# a district narrower than one unit is degrees, not meters
GEODETIC_SPAN = 1.0
GEODETIC_CRS_MARKERS = ("CRS84", "4326", "4269")


def _looks_geodetic(records: Sequence[BuildingRecord]) -> bool:
    xs = [x for rec in records for ring in rec.footprint for x, _ in ring]
    ys = [y for rec in records for ring in rec.footprint for _, y in ring]
    in_range = all(abs(x) <= 180.0 for x in xs) and all(abs(y) <= 90.0 for y in ys)
    return in_range and max(xs) - min(xs) < GEODETIC_SPAN and max(ys) - min(ys) < GEODETIC_SPAN


def _declared_crs(doc: Dict[str, Any]) -> Optional[str]:
    """Name from a legacy GeoJSON `crs` member, if any."""
    crs = doc.get("crs")
    if not isinstance(crs, dict):
        return None
    props = crs.get("properties")
    name = props.get("name") if isinstance(props, dict) else None
    return str(name) if name else None


class InventoryService:
    def __init__(self, storey_height_m: float = DEFAULT_STOREY_HEIGHT_M, default_zone: str = "district"):
        self.storey_height_m = storey_height_m
        self.default_zone = default_zone

    def parse_feature(self, index: int, feature: Any) -> List[BuildingRecord]:
        if not isinstance(feature, dict):
            raise FeatureRejected(f"feature is a {type(feature).__name__}, not an object")
        props = feature.get("properties") or {}
        if not isinstance(props, dict):
            raise FeatureRejected("properties is not an object")
        fid = str(feature.get("id", props.get("id", f"feature-{index}")))

        geom = feature.get("geometry") or {}
        if not isinstance(geom, dict):
            raise FeatureRejected("geometry is not an object")
        gtype = geom.get("type")
        if gtype == "Polygon":
            parts = [(fid, geom.get("coordinates"))]
        elif gtype == "MultiPolygon":
            parts = [(f"{fid}-{j}", coords) for j, coords in enumerate(geom.get("coordinates") or [])]
        else:
            raise FeatureRejected(f"non-polygon geometry ({gtype})")
        if not parts:
            raise FeatureRejected("empty multipolygon")

        height = props.get("height_m")
        if not _is_number(height):
            raise FeatureRejected("missing height_m")
        if height <= 0:
            raise FeatureRejected(f"non-positive height_m {height}")
        if height > MAX_HEIGHT_M:
            logger.warning("feature %d (%s): height %.1f m clamped to %.0f m", index, fid, height, MAX_HEIGHT_M)
            height = MAX_HEIGHT_M

        land_use = props.get("land_use")
        if not isinstance(land_use, str):
            raise FeatureRejected("missing land_use")

        eui = props.get("eui_kwh_m2")
        if eui is not None and (not _is_number(eui) or eui < 0):
            raise FeatureRejected(f"invalid eui_kwh_m2 {eui!r}")

        label = props.get("label")
        records = []
        for part_id, coords in parts:
            if not isinstance(coords, list) or not coords:
                raise FeatureRejected("polygon has no rings")
            rings = tuple(_parse_ring(r) for r in coords)
            area = footprint_area(rings)
            if area <= 0:
                raise FeatureRejected("degenerate footprint (zero area)")
            try:
                records.append(BuildingRecord(
                    id=part_id,
                    footprint=rings,
                    height_m=float(height),
                    land_use=LandUse.parse(land_use),
                    footprint_area_m2=area,
                    floor_area_m2=derive_floor_area(area, float(height), self.storey_height_m),
                    measured_eui_kwh_m2=None if eui is None else float(eui),
                    zone=str(props.get("zone") or self.default_zone),
                    label=None if label is None else str(label),
                ))
            except ValidationError as e:
                raise FeatureRejected(e.errors()[0]["msg"])
        return records

    def load_buildings(self, path: Path | str,
                       land_use_filter: Optional[LandUse] = None) -> Tuple[List[BuildingRecord], InventorySummary]:
        path = Path(path)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise DataError(f"inventory file {path} not found")
        except json.JSONDecodeError as e:
            raise DataError(f"{path}:{e.lineno}:{e.colno}: {e.msg}")
        except UnicodeDecodeError as e:
            raise DataError(f"{path}: not UTF-8 text (byte {e.start}: {e.reason})")
        if not isinstance(doc, dict) or doc.get("type") != "FeatureCollection":
            raise DataError(f"{path}: expected a GeoJSON FeatureCollection")

        parsed: List[BuildingRecord] = []
        rejections: List[Rejection] = []
        for index, feature in enumerate(doc.get("features") or []):
            try:
                parsed.extend(self.parse_feature(index, feature))
            except FeatureRejected as e:
                fid = feature.get("id") if isinstance(feature, dict) else None
                rejections.append(Rejection(feature_index=index, feature_id=None if fid is None else str(fid),
                                            reason=str(e)))
                logger.warning("rejected feature %d (%s): %s", index, fid, e)

        crs = _declared_crs(doc)
        if crs is not None and any(marker in crs for marker in GEODETIC_CRS_MARKERS):
            raise DataError(f"{path}: crs {crs} is geographic; reproject to planar meters first")
        if crs is None and parsed and _looks_geodetic(parsed):
            raise DataError(
                f"{path}: coordinates look like lon/lat degrees; reproject to planar meters first"
            )

        residential = sum(1 for r in parsed if r.land_use is LandUse.RESIDENTIAL)
        summary = InventorySummary.from_counts(len(parsed), residential, rejections)
        records = filter_land_use(parsed, land_use_filter)
        if not records:
            raise EmptyInventoryError(f"empty inventory: no buildings left in {path}", summary=summary)
        logger.info("loaded %d of %d buildings from %s (%d rejected)",
                    len(records), len(parsed), path, len(rejections))
        return records, summary

    def dump_buildings(self, records: Sequence[BuildingRecord], path: Path | str,
                       config_hash: Optional[str] = None) -> Path:
        features = []
        for rec in records:
            props: Dict[str, Any] = {
                "height_m": rec.height_m,
                "land_use": rec.land_use.value,
                "zone": rec.zone,
                "footprint_area_m2": rec.footprint_area_m2,
                "floor_area_m2": rec.floor_area_m2,
            }
            if rec.measured_eui_kwh_m2 is not None:
                props["eui_kwh_m2"] = rec.measured_eui_kwh_m2
            if rec.label is not None:
                props["label"] = rec.label
            features.append({
                "type": "Feature",
                "id": rec.id,
                "properties": props,
                "geometry": {
                    "type": "Polygon",
                    "coordinates": [[list(pt) for pt in ring] for ring in rec.footprint],
                },
            })
        doc: Dict[str, Any] = {"type": "FeatureCollection"}
        if config_hash:
            doc["config_hash"] = config_hash
        doc["features"] = features
        path = Path(path)
        path.write_text(json.dumps(doc) + "\n", encoding="utf-8")
        return path


def filter_land_use(records: Sequence[BuildingRecord], land_use: Optional[LandUse]) -> List[BuildingRecord]:
    if land_use is None:
        return list(records)
    return [r for r in records if r.land_use is land_use]
