import json

import pytest
from hypothesis import given, strategies as st

from forge.errors import DataError, EmptyInventoryError
from forge.models import LandUse
from forge.services.inventory_service import InventoryService, derive_floor_area, filter_land_use

from conftest import feature, rect, write_collection

service = InventoryService()
X0, Y0 = 550_000.0, 4_180_000.0


def test_derive_floor_area_rounds_storeys_half_up():
    assert derive_floor_area(100.0, 9.0) == 300.0
    assert derive_floor_area(100.0, 4.5) == 200.0   # 1.5 storeys -> 2
    assert derive_floor_area(100.0, 4.4) == 100.0
    assert derive_floor_area(100.0, 1.0) == 100.0   # never below one storey
    assert derive_floor_area(50.0, 12.0, storey_height_m=4.0) == 150.0


@pytest.mark.parametrize("area,height", [(0.0, 10.0), (100.0, 0.0), (-5.0, 3.0)])
def test_derive_floor_area_rejects_non_positive(area, height):
    with pytest.raises(DataError):
        derive_floor_area(area, height)


@given(area=st.floats(0.5, 1e5), height=st.floats(0.1, 100.0))
def test_floor_area_never_below_footprint(area, height):
    assert derive_floor_area(area, height) >= area


def test_load_sample_inventory(sample_inventory):
    records, summary = service.load_buildings(sample_inventory, LandUse.RESIDENTIAL)
    assert [r.id for r in records] == ["r1", "r2"]
    assert summary.total_count == 3
    assert summary.residential_count == 2
    assert summary.residential_fraction == pytest.approx(2 / 3)
    assert summary.rejections == []

    r1, r2 = records
    assert r1.footprint_area_m2 == pytest.approx(200.0)
    assert r1.floor_area_m2 == pytest.approx(600.0)
    # courtyard hole is subtracted
    assert r2.footprint_area_m2 == pytest.approx(800.0)
    assert r2.floor_area_m2 == pytest.approx(4000.0)
    assert r2.label == "courtyard"
    assert r1.measured_eui_kwh_m2 == 110.0


def test_no_filter_keeps_everything(sample_inventory):
    records, _ = service.load_buildings(sample_inventory)
    assert len(records) == 3
    assert len(filter_land_use(records, LandUse.OTHER)) == 1


def test_bad_features_are_rejected_not_fatal(tmp_path, caplog):
    good = rect(X0, Y0, 10, 10)
    unclosed = good[:-1] + ((X0 + 1, Y0),)
    path = write_collection(tmp_path / "inv.geojson", [
        feature("ok", [good], height_m=6.0, land_use="Residential"),
        {"type": "Feature", "id": "pt", "properties": {"height_m": 3, "land_use": "Residential"},
         "geometry": {"type": "Point", "coordinates": [X0, Y0]}},
        feature("noh", [good], land_use="Residential"),
        feature("neg", [good], height_m=-2.0, land_use="Residential"),
        feature("open", [unclosed], height_m=6.0, land_use="Residential"),
        feature("tri", [good[:3]], height_m=6.0, land_use="Residential"),
        feature("flat", [((X0, Y0), (X0 + 5, Y0), (X0 + 10, Y0), (X0, Y0))], height_m=6.0, land_use="Residential"),
        feature("nolu", [good], height_m=6.0),
    ])
    records, summary = service.load_buildings(path, LandUse.RESIDENTIAL)
    assert [r.id for r in records] == ["ok"]
    reasons = {r.feature_id: r.reason for r in summary.rejections}
    assert reasons["pt"].startswith("non-polygon geometry")
    assert reasons["noh"] == "missing height_m"
    assert reasons["neg"].startswith("non-positive height_m")
    assert reasons["open"] == "unclosed ring"
    assert reasons["tri"] == "ring needs at least 4 vertices"
    assert reasons["flat"].startswith("degenerate footprint")
    assert reasons["nolu"] == "missing land_use"
    assert summary.total_count == 1
    assert "rejected feature" in caplog.text


def test_tall_building_clamped(tmp_path, caplog):
    path = write_collection(tmp_path / "inv.geojson", [
        feature("t", [rect(X0, Y0, 10, 10)], height_m=250.0, land_use="Residential"),
    ])
    records, _ = service.load_buildings(path)
    assert records[0].height_m == 100.0
    assert "clamped" in caplog.text


def test_multipolygon_parts_get_suffixed_ids(tmp_path):
    doc = {"type": "Feature", "id": "m", "properties": {"height_m": 9.0, "land_use": "Residential"},
           "geometry": {"type": "MultiPolygon", "coordinates": [
               [[list(p) for p in rect(X0, Y0, 10, 10)]],
               [[list(p) for p in rect(X0 + 50, Y0, 5, 5)]],
           ]}}
    path = write_collection(tmp_path / "inv.geojson", [doc])
    records, _ = service.load_buildings(path)
    assert [r.id for r in records] == ["m-0", "m-1"]
    assert records[1].footprint_area_m2 == pytest.approx(25.0)


def test_lon_lat_inventory_is_refused(tmp_path):
    path = write_collection(tmp_path / "inv.geojson", [
        feature("g", [rect(-122.41, 37.79, 0.001, 0.001)], height_m=9.0, land_use="Residential"),
    ])
    with pytest.raises(DataError, match="lon/lat"):
        service.load_buildings(path)


def test_local_origin_site_plan_is_planar(tmp_path):
    path = write_collection(tmp_path / "inv.geojson", [
        feature("a", [rect(10, 10, 12, 8)], height_m=9.0, land_use="Residential"),
        feature("b", [rect(60, 40, 10, 10)], height_m=12.0, land_use="Residential"),
    ])
    records, _ = service.load_buildings(path)
    assert [r.id for r in records] == ["a", "b"]
    assert records[0].footprint_area_m2 == pytest.approx(96.0)


def test_declared_crs_decides_over_coordinate_ranges(tmp_path):
    doc = {"type": "FeatureCollection",
           "crs": {"type": "name", "properties": {"name": "urn:ogc:def:crs:OGC:1.3:CRS84"}},
           "features": [feature("g", [rect(X0, Y0, 10, 10)], height_m=9.0, land_use="Residential")]}
    path = tmp_path / "inv.geojson"
    path.write_text(json.dumps(doc), encoding="utf-8")
    with pytest.raises(DataError, match="CRS84"):
        service.load_buildings(path)

    # a declared projected crs accepts coordinates that fit in a degree box
    doc["crs"]["properties"]["name"] = "urn:ogc:def:crs:EPSG::26910"
    doc["features"] = [feature("p", [rect(0.2, 0.3, 0.5, 0.5)], height_m=3.0, land_use="Residential")]
    path.write_text(json.dumps(doc), encoding="utf-8")
    records, _ = service.load_buildings(path)
    assert [r.id for r in records] == ["p"]


def test_non_object_features_are_rejected(tmp_path):
    good = feature("ok", [rect(X0, Y0, 10, 10)], height_m=6.0, land_use="Residential")
    bad_props = {"type": "Feature", "id": "sp", "properties": "tall", "geometry": good["geometry"]}
    path = write_collection(tmp_path / "inv.geojson", [good, "junk", 7, bad_props])
    records, summary = service.load_buildings(path)
    assert [r.id for r in records] == ["ok"]
    assert [r.feature_index for r in summary.rejections] == [1, 2, 3]
    assert summary.rejections[0].feature_id is None
    assert summary.rejections[0].reason == "feature is a str, not an object"
    assert summary.rejections[2].reason == "properties is not an object"


def test_undecodable_file_is_a_data_error(tmp_path):
    path = tmp_path / "inv.geojson"
    path.write_bytes(b'{"type": "FeatureCollection", "features": [\xff]}')
    with pytest.raises(DataError, match="not UTF-8"):
        service.load_buildings(path)


def test_empty_after_filter_carries_summary(tmp_path):
    path = write_collection(tmp_path / "inv.geojson", [
        feature("c", [rect(X0, Y0, 10, 10)], height_m=9.0, land_use="Office"),
    ])
    with pytest.raises(EmptyInventoryError) as exc:
        service.load_buildings(path, LandUse.RESIDENTIAL)
    assert exc.value.summary.total_count == 1
    assert exc.value.summary.residential_count == 0


def test_malformed_json_reports_position(tmp_path):
    path = tmp_path / "inv.geojson"
    path.write_text('{"type": "FeatureCollection",\n "features": [,]}')
    with pytest.raises(DataError, match=r"inv\.geojson:2:"):
        service.load_buildings(path)


def test_dump_and_reload(tmp_path, sample_inventory):
    records, _ = service.load_buildings(sample_inventory)
    out = service.dump_buildings(records, tmp_path / "out.geojson", config_hash="abc")
    assert json.loads(out.read_text())["config_hash"] == "abc"
    again, _ = service.load_buildings(out)
    assert again == records


def test_zone_defaults_and_overrides(tmp_path):
    path = write_collection(tmp_path / "inv.geojson", [
        feature("a", [rect(X0, Y0, 10, 10)], height_m=9.0, land_use="Residential"),
        feature("b", [rect(X0 + 50, Y0, 10, 10)], height_m=9.0, land_use="Residential", zone="north"),
    ])
    records, _ = InventoryService(default_zone="richmond").load_buildings(path)
    assert [r.zone for r in records] == ["richmond", "north"]
