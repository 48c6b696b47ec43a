import math

import numpy as np
import pytest
import shapely
from hypothesis import assume, given, settings, strategies as st

from forge.config import GridSpec
from forge.errors import DataError, WindowOverflowError
from forge.services import raster_service
from forge.utils.geometry import footprint_polygon
from forge.utils.imaging import read_pgm

from conftest import make_record, rect

GRID16 = GridSpec(width_px=16, height_px=16, meters_per_px=2.0)


def test_height_intensity():
    assert raster_service.height_intensity(50.0) == 0.5
    assert raster_service.height_intensity(100.0) == 1.0
    assert raster_service.height_intensity(57.0, bin_m=10.0) == 0.5


def test_square_covers_expected_pixels():
    rec = make_record([rect(550_000.0, 4_180_000.0, 10.0, 10.0)], height_m=30.0)
    hm = raster_service.rasterize(rec, GRID16)
    assert hm.pixels.shape == (16, 16)
    assert int((hm.pixels > 0).sum()) == 25
    assert set(np.unique(hm.pixels)) == {0.0, 0.3}


def test_courtyard_hole_is_empty():
    rec = make_record([rect(0.0, 0.0, 30.0, 30.0), rect(10.0, 10.0, 10.0, 10.0)], height_m=15.0)
    mask = raster_service.rasterize(rec, GRID16).pixels > 0
    assert int(mask.sum()) == 200
    assert not mask[7, 7]


def test_translation_invariant():
    a = make_record([rect(0.0, 0.0, 12.0, 7.0)])
    b = make_record([rect(550_123.5, 4_181_000.0, 12.0, 7.0)])
    assert np.array_equal(raster_service.rasterize(a, GRID16).pixels, raster_service.rasterize(b, GRID16).pixels)


def test_row_zero_is_north():
    # L-shape whose arm points north-west
    ring = ((0, 0), (20, 0), (20, 8), (8, 8), (8, 20), (0, 20), (0, 0))
    mask = raster_service.rasterize(make_record([ring]), GRID16).pixels > 0
    rows = np.flatnonzero(mask.any(axis=1))
    top, bottom = mask[rows[0]], mask[rows[-1]]
    assert top.sum() < bottom.sum()


def test_window_overflow():
    rec = make_record([rect(0.0, 0.0, 40.0, 5.0)], id="wide")
    with pytest.raises(WindowOverflowError, match="wide"):
        raster_service.rasterize(rec, GRID16)


def test_rasterize_all_skips_overflow(caplog):
    recs = [make_record([rect(0, 0, 10, 10)], id="a"), make_record([rect(0, 0, 40, 5)], id="b")]
    maps = raster_service.rasterize_all(recs, GRID16)
    assert [m.building_id for m in maps] == ["a"]
    assert "window overflow" in caplog.text


def test_height_bins():
    rec = make_record([rect(0, 0, 10, 10)], height_m=37.0)
    assert raster_service.rasterize(rec, GRID16, bin_m=10.0).pixels.max() == pytest.approx(0.3)


def _star(rng, offset):
    n = int(rng.integers(3, 12))
    angles = np.sort(rng.uniform(0, 2 * math.pi, size=n))
    radii = rng.uniform(3.0, 14.0, size=n)
    pts = [(offset[0] + r * math.cos(a), offset[1] + r * math.sin(a)) for a, r in zip(angles, radii)]
    return tuple(pts + [pts[0]])


def _centered_polygon(rec, grid):
    return footprint_polygon(raster_service.centered_rings(rec, grid))


def test_mask_matches_shapely_oracle():
    grid = GridSpec(width_px=32, height_px=32, meters_per_px=1.0)
    rng = np.random.default_rng(2024)
    xs, ys = raster_service.pixel_centers(grid)
    for _ in range(100):
        rec = make_record([_star(rng, rng.uniform(-1e4, 1e4, size=2))])
        mask = raster_service.footprint_mask(rec, grid)
        poly = _centered_polygon(rec, grid)
        on_edge = shapely.intersects_xy(poly.boundary, xs, ys)
        expected = shapely.contains_xy(poly, xs, ys)
        # centers exactly on an edge follow the half-open rule, checked separately
        assert np.array_equal(mask[~on_edge], expected[~on_edge])


def test_pixel_centers_on_edges_count_bottom_and_left():
    # 6 m square on a 2 m grid: every edge runs through a row or column of pixel centers
    mask = raster_service.footprint_mask(make_record([rect(0.0, 0.0, 6.0, 6.0)]), GRID16)
    expected = np.zeros((16, 16), dtype=bool)
    expected[7:10, 6:9] = True
    assert np.array_equal(mask, expected)


def test_square_filling_the_window():
    full = make_record([rect(0.0, 0.0, 32.0, 32.0)], height_m=100.0)
    assert np.array_equal(raster_service.rasterize(full, GRID16).pixels, np.ones((16, 16)))
    half = make_record([rect(0.0, 0.0, 32.0, 32.0)], height_m=50.0)
    assert np.array_equal(raster_service.rasterize(half, GRID16).pixels, np.full((16, 16), 0.5))


def test_pixel_area_tracks_footprint_area():
    grid = GridSpec(width_px=32, height_px=32, meters_per_px=1.0)
    rng = np.random.default_rng(11)
    px_area = grid.meters_per_px ** 2
    for _ in range(50):
        rec = make_record([_star(rng, (0.0, 0.0))])
        count = int(raster_service.footprint_mask(rec, grid).sum())
        poly = _centered_polygon(rec, grid)
        assert abs(count * px_area - poly.area) <= poly.length * grid.meters_per_px


@given(height=st.floats(0.5, 100.0), seed=st.integers(0, 2**16))
@settings(max_examples=40, deadline=None)
def test_background_is_zero_and_values_in_unit_range(height, seed):
    rng = np.random.default_rng(seed)
    rec = make_record([_star(rng, rng.uniform(-500, 500, size=2))], height_m=height)
    grid = GridSpec(width_px=32, height_px=32, meters_per_px=1.0)
    assume(raster_service.footprint_mask(rec, grid).any())
    pixels = raster_service.rasterize(rec, grid).pixels
    assert pixels.min() >= 0.0 and pixels.max() <= 1.0
    xs, ys = raster_service.pixel_centers(grid)
    touched = shapely.intersects_xy(_centered_polygon(rec, grid), xs, ys)
    assert np.all(pixels[~touched] == 0.0)
    assert set(np.unique(pixels)) <= {0.0, raster_service.height_intensity(height)}


def test_sub_pixel_footprint_lights_one_pixel():
    rec = make_record([rect(500.0, 700.0, 1.0, 1.0)], height_m=20.0)
    assert not raster_service.footprint_mask(rec, GRID16).any()
    pixels = raster_service.rasterize(rec, GRID16).pixels
    assert int((pixels > 0).sum()) == 1
    row, col = raster_service.anchor_pixel(rec, GRID16)
    assert pixels[row, col] == pytest.approx(0.2)
    # the lit pixel is one of the four around the window center
    assert row in (7, 8) and col in (7, 8)


def test_split_sizes():
    assert raster_service.split_sizes(10, 0.1) == (9, 1)
    assert raster_service.split_sizes(10, 0.25) == (7, 3)
    assert raster_service.split_sizes(2, 0.1) == (1, 1)


def test_build_dataset_seeded_and_disjoint():
    recs = [make_record([rect(0, 0, 4 + i, 6)], id=f"b{i}") for i in range(10)]
    train, test = raster_service.build_dataset(recs, GRID16, 0.2, seed=7)
    again, _ = raster_service.build_dataset(recs, GRID16, 0.2, seed=7)
    ids_train, ids_test = [m.building_id for m in train], [m.building_id for m in test]
    assert len(train) == 8 and len(test) == 2
    assert not set(ids_train) & set(ids_test)
    assert set(ids_train) | set(ids_test) == {r.id for r in recs}
    assert ids_train == [m.building_id for m in again]


def test_build_dataset_needs_two_buildings():
    with pytest.raises(DataError):
        raster_service.build_dataset([make_record([rect(0, 0, 5, 5)])], GRID16, 0.1, seed=0)


def test_heightmaps_and_manifest_on_disk(tmp_path):
    recs = [make_record([rect(0, 0, 4 + i, 6)], height_m=10.0 * (i + 1), id=f"b{i}") for i in range(4)]
    train, test = raster_service.build_dataset(recs, GRID16, 0.25, seed=0)
    paths = raster_service.write_heightmaps(tmp_path / "hm", [*train, *test], config_hash="feed")
    raster_service.write_manifest(tmp_path / "manifest.csv", train, test, config_hash="feed")
    assert len(paths) == 4
    back = read_pgm(tmp_path / "hm" / f"{train[0].building_id}.pgm")
    assert np.abs(back - train[0].pixels).max() <= 0.5 / 255 + 1e-12

    from forge.utils.tables import read_csv
    manifest = read_csv(tmp_path / "manifest.csv")
    maps = raster_service.rasterize_all(recs, GRID16)
    train2, test2 = raster_service.split_from_manifest(maps, manifest)
    assert [m.building_id for m in train2] == [m.building_id for m in train]
    assert [m.building_id for m in test2] == [m.building_id for m in test]
