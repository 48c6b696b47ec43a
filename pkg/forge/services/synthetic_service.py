from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Sequence, Tuple

import numpy as np

from ..models import BASELINE_ARCHETYPE, EuiRecord
from .energy_service import write_eui_table

logger = logging.getLogger(__name__)

# planar meters, roughly where UTM zone 10N puts San Francisco
ORIGIN = (550_000.0, 4_180_000.0)
LOT_M = 120.0
BASELINE_EUI = 80.0


@dataclass(frozen=True)
class Family:
    name: str
    height_m: float
    eui_kwh_m2: float


# Heights are set so every family carries a similar amount of raster mass
# (lit pixels x intensity^2). Centered in a 64 m window the outlines nest:
# the tower sits in the U's courtyard, the U inside the L's corner.
FAMILIES = (
    Family("bar", 45.0, 95.0),
    Family("L", 37.0, 120.0),
    Family("U", 34.0, 140.0),
    Family("tower", 60.0, 165.0),
)
DEFAULT_EPOCHS = 300


def _rect(w: float, d: float) -> List[Tuple[float, float]]:
    return [(0.0, 0.0), (w, 0.0), (w, d), (0.0, d), (0.0, 0.0)]


def family_outline(name: str, rng: np.random.Generator) -> List[Tuple[float, float]]:
    """Closed counter-clockwise outline with its lower-left corner at the origin."""
    if name == "bar":
        return _rect(rng.uniform(52, 60), rng.uniform(7, 9))
    if name == "L":
        s, a = rng.uniform(59, 61), rng.uniform(4, 8)
        return [(0, 0), (s, 0), (s, a), (a, a), (a, s), (0, s), (0, 0)]
    if name == "U":
        w, d, a = rng.uniform(41, 47), rng.uniform(33, 39), rng.uniform(7, 9)
        return [(0, 0), (w, 0), (w, d), (w - a, d), (w - a, a), (a, a), (a, d), (0, d), (0, 0)]
    if name == "tower":
        s = rng.uniform(13, 19)
        return _rect(s, s)
    raise ValueError(f"unknown family {name}")


def generate_features(n: int = 400, seed: int = 0, zones: Sequence[str] = ("synthetic",),
                      commercial: int = 12, eui_noise: float = 0.03) -> List[Dict[str, Any]]:
    """`n` residential buildings split evenly across the four families, plus a
    few commercial ones that the residential filter drops."""
    rng = np.random.default_rng(seed)
    cols = int(np.ceil(np.sqrt(n + commercial)))
    features = []
    for i in range(n + commercial):
        residential = i < n
        family = FAMILIES[i % len(FAMILIES)] if residential else FAMILIES[0]
        outline = family_outline(family.name, rng)
        x0 = ORIGIN[0] + (i % cols) * LOT_M + rng.uniform(0, 5)
        y0 = ORIGIN[1] + (i // cols) * LOT_M + rng.uniform(0, 5)
        ring = [[round(x0 + x, 3), round(y0 + y, 3)] for x, y in outline]
        ring[-1] = list(ring[0])
        props: Dict[str, Any] = {
            "height_m": round(family.height_m + rng.uniform(-1.0, 1.0), 2),
            "land_use": "Residential" if residential else "Commercial",
            "zone": zones[i % len(zones)],
        }
        if residential:
            props["label"] = family.name
            props["eui_kwh_m2"] = round(family.eui_kwh_m2 * (1.0 + rng.uniform(-eui_noise, eui_noise)), 3)
        features.append({
            "type": "Feature",
            "id": f"{'b' if residential else 'c'}{i:04d}",
            "properties": props,
            "geometry": {"type": "Polygon", "coordinates": [ring]},
        })
    return features


def synthetic_config(epochs: int = DEFAULT_EPOCHS, seed: int = 0) -> Dict[str, Any]:
    return {
        "paths": {
            "inventory": "inventory.geojson",
            "eui_baseline": "eui_baseline.csv",
            "output_dir": "output",
        },
        "zone_name": "synthetic",
        "grid": {"width_px": 32, "height_px": 32, "meters_per_px": 2.0},
        "vq": {
            "latent_grid": 8,
            "embed_dim": 8,
            "codebook_size": 32,
            "hidden_channels": 16,
            "learning_rate": 0.3,
            "epochs": epochs,
            "batch_size": 32,
            "seed": seed,
        },
        "cluster": {"k_min": 1, "k_max": 8, "use_quantized": False},
        "test_fraction": 0.1,
        "seed": seed,
    }


def write_synthetic(directory: Path, n: int = 400, seed: int = 0, zones: Sequence[str] = ("synthetic",),
                    epochs: int = DEFAULT_EPOCHS) -> Path:
    """Writes inventory.geojson, eui_baseline.csv and config.json; returns the config path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    doc = {"type": "FeatureCollection", "features": generate_features(n, seed, zones)}
    (directory / "inventory.geojson").write_text(json.dumps(doc) + "\n", encoding="utf-8")
    write_eui_table(directory / "eui_baseline.csv",
                    [EuiRecord(archetype_id=BASELINE_ARCHETYPE, eui_kwh_per_m2=BASELINE_EUI)])
    config_path = directory / "config.json"
    config_path.write_text(json.dumps(synthetic_config(epochs, seed), indent=2) + "\n", encoding="utf-8")
    logger.info("wrote synthetic district with %d buildings to %s", n, directory)
    return config_path
