from __future__ import annotations

import io
from pathlib import Path
from typing import Iterable, Optional, Sequence

import matplotlib
import numpy as np
from matplotlib.figure import Figure

matplotlib.use("Agg")

# fixed salt keeps the clip-path ids in saved SVGs stable
SVG_HASH_SALT = "forge-scatter"


def to_gray8(grid: np.ndarray) -> np.ndarray:
    """Intensity in [0,1] -> 0..255, rounded to nearest."""
    return np.floor(np.clip(grid, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def pgm_bytes(grid: np.ndarray, comment: Optional[str] = None) -> bytes:
    grid = np.asarray(grid)
    if grid.ndim != 2:
        raise ValueError(f"expected a 2D grid, got shape {grid.shape}")
    h, w = grid.shape
    header = b"P5\n"
    if comment:
        header += f"# {comment}\n".encode("ascii")
    header += f"{w} {h}\n255\n".encode("ascii")
    return header + to_gray8(grid).tobytes()


def write_pgm(path: Path, grid: np.ndarray, comment: Optional[str] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(pgm_bytes(grid, comment))
    return path


def read_pgm(path: Path) -> np.ndarray:
    data = Path(path).read_bytes()
    fields, pos = [], 0
    # magic, width, height, maxval; '#' comments run to end of line
    while len(fields) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        fields.append(data[pos:end])
        pos = end
    if fields[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM")
    w, h, maxval = (int(f) for f in fields[1:])
    pixels = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos + 1)
    return pixels.reshape(h, w).astype(np.float64) / maxval


def tile_sheet(rows: Sequence[Sequence[np.ndarray]]) -> np.ndarray:
    """Contact sheet: rows of equally sized grids, no gutters."""
    if not rows or not rows[0]:
        raise ValueError("contact sheet needs at least one tile")
    return np.block([[np.asarray(t) for t in row] for row in rows])


def svg_scatter(xy: np.ndarray, labels: np.ndarray, marked: Iterable[int] = (),
                title: str = "", comment: Optional[str] = None, size_in: float = 5.0) -> str:
    """Cluster scatter as SVG text, marked points drawn as outlined squares.
    Equal inputs give byte-identical output."""
    xy = np.asarray(xy, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    is_marked = np.zeros(xy.shape[0], dtype=bool)
    is_marked[[int(i) for i in marked]] = True
    colors = matplotlib.colormaps["tab10"](labels % 10)

    metadata = {"Date": None}
    if title:
        metadata["Title"] = title
    if comment:
        metadata["Description"] = comment
    with matplotlib.rc_context({"svg.hashsalt": SVG_HASH_SALT, "svg.fonttype": "none"}):
        fig = Figure(figsize=(size_in, size_in))
        ax = fig.add_subplot()
        ax.scatter(xy[~is_marked, 0], xy[~is_marked, 1], s=8.0, c=colors[~is_marked], alpha=0.7, zorder=2)
        if is_marked.any():
            ax.scatter(xy[is_marked, 0], xy[is_marked, 1], s=60.0, c=colors[is_marked], marker="s",
                       edgecolors="black", linewidths=1.5, zorder=3)
        ax.grid(True, color="lightgray", zorder=0)
        ax.set_xlabel("component 1")
        ax.set_ylabel("component 2")
        if title:
            ax.set_title(title)
        buf = io.StringIO()
        fig.savefig(buf, format="svg", metadata=metadata)
    return buf.getvalue()
