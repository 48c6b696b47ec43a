from __future__ import annotations

import logging
import math
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from ..config import GridSpec
from ..errors import DataError, WindowOverflowError
from ..models import BuildingRecord, Heightmap
from ..utils.geometry import bounds, even_odd_mask, footprint_polygon, ring_array
from ..utils.imaging import write_pgm
from ..utils.tables import write_csv

logger = logging.getLogger(__name__)

MAX_HEIGHT_M = 100.0


def height_intensity(height_m: float, bin_m: Optional[float] = None) -> float:
    """Linear 0-100 m -> 0-1 mapping; with `bin_m` heights are floored to the bin first."""
    h = min(max(height_m, 0.0), MAX_HEIGHT_M)
    if bin_m:
        h = math.floor(h / bin_m) * bin_m
    return h / MAX_HEIGHT_M


def pixel_centers(grid: GridSpec) -> Tuple[np.ndarray, np.ndarray]:
    """Window coordinates of every pixel center; row 0 is the north edge."""
    side, m = grid.side, grid.meters_per_px
    cols = (np.arange(side) + 0.5) * m
    rows = (side - np.arange(side) - 0.5) * m
    xs, ys = np.meshgrid(cols, rows)
    return xs, ys


def centered_rings(record: BuildingRecord, grid: GridSpec) -> List[np.ndarray]:
    """Footprint rings shifted so the bounding-box center sits at the window center."""
    minx, miny, maxx, maxy = bounds(record.footprint)
    half = grid.window_m / 2.0
    cx, cy = (minx + maxx) / 2.0, (miny + maxy) / 2.0
    return [ring_array(r) - (cx - half, cy - half) for r in record.footprint]


def footprint_mask(record: BuildingRecord, grid: GridSpec) -> np.ndarray:
    minx, miny, maxx, maxy = bounds(record.footprint)
    extent = max(maxx - minx, maxy - miny)
    if extent > grid.window_m + 1e-9:
        raise WindowOverflowError(record.id, extent, grid.window_m)
    if record.footprint_area_m2 <= 0:
        raise DataError(f"degenerate footprint for building '{record.id}'")
    xs, ys = pixel_centers(grid)
    return even_odd_mask(centered_rings(record, grid), xs, ys)


def anchor_pixel(record: BuildingRecord, grid: GridSpec) -> Tuple[int, int]:
    """(row, col) of the pixel holding the footprint's representative point."""
    point = footprint_polygon(centered_rings(record, grid)).representative_point()
    side, m = grid.side, grid.meters_per_px
    col = min(max(int(math.floor(point.x / m)), 0), side - 1)
    row = min(max(side - 1 - int(math.floor(point.y / m)), 0), side - 1)
    return row, col


def rasterize(record: BuildingRecord, grid: GridSpec, bin_m: Optional[float] = None) -> Heightmap:
    mask = footprint_mask(record, grid)
    if not mask.any():
        # footprint slips between pixel centers; keep it visible as one pixel
        row, col = anchor_pixel(record, grid)
        logger.debug("building %s misses every pixel center; lighting pixel (%d, %d)", record.id, row, col)
        mask[row, col] = True
    pixels = np.where(mask, height_intensity(record.height_m, bin_m), 0.0)
    return Heightmap(building_id=record.id, pixels=pixels)


def split_sizes(n: int, test_fraction: float) -> Tuple[int, int]:
    # round half up, at least one test and one train item
    n_test = int(math.floor(test_fraction * n + 0.5))
    n_test = min(max(n_test, 1), n - 1)
    return n - n_test, n_test


def rasterize_all(records: Sequence[BuildingRecord], grid: GridSpec,
                  bin_m: Optional[float] = None) -> List[Heightmap]:
    """Rasterize in input order, skipping buildings that do not fit the window."""
    maps = []
    for rec in records:
        try:
            maps.append(rasterize(rec, grid, bin_m))
        except WindowOverflowError as e:
            logger.warning("skipping %s", e.detail)
    return maps


def build_dataset(records: Sequence[BuildingRecord], grid: GridSpec, test_fraction: float,
                  seed: int, bin_m: Optional[float] = None) -> Tuple[List[Heightmap], List[Heightmap]]:
    if not 0 < test_fraction < 1:
        raise DataError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    maps = rasterize_all(records, grid, bin_m)
    if len(maps) < 2:
        raise DataError(f"need at least 2 rasterizable buildings, got {len(maps)}")
    order = np.random.default_rng(seed).permutation(len(maps))
    n_train, _ = split_sizes(len(maps), test_fraction)
    train = [maps[i] for i in order[:n_train]]
    test = [maps[i] for i in order[n_train:]]
    return train, test


def split_from_manifest(maps: Sequence[Heightmap], manifest: pd.DataFrame) -> Tuple[List[Heightmap], List[Heightmap]]:
    """Re-create a split recorded by `write_manifest`, keeping manifest row order."""
    by_id = {m.building_id: m for m in maps}
    missing = [b for b in manifest["building_id"] if b not in by_id]
    if missing:
        raise DataError(f"manifest lists {len(missing)} buildings missing from the inventory, e.g. {missing[0]}")
    train = [by_id[b] for b, s in zip(manifest["building_id"], manifest["split"]) if s == "train"]
    test = [by_id[b] for b, s in zip(manifest["building_id"], manifest["split"]) if s == "test"]
    return train, test


def write_manifest(path: Path, train: Sequence[Heightmap], test: Sequence[Heightmap],
                   config_hash: Optional[str] = None) -> Path:
    frame = pd.DataFrame(
        [(m.building_id, "train") for m in train] + [(m.building_id, "test") for m in test],
        columns=["building_id", "split"],
    )
    return write_csv(path, frame, config_hash)


def write_heightmaps(directory: Path, maps: Sequence[Heightmap], config_hash: Optional[str] = None) -> List[Path]:
    comment = f"config_hash: {config_hash}" if config_hash else None
    return [write_pgm(Path(directory) / f"{m.building_id}.pgm", m.pixels, comment) for m in maps]

