"""Mesh-to-DSM rasterization (per-cell vertical max) and NoData filling."""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np
from scipy.spatial import cKDTree

from core.rpc_camera import SceneBounds
from core.types import Dsm, TriangleMesh
from storage.formats import write_asc, write_pfm


logger = logging.getLogger(__name__)

EDGE_TOLERANCE = 1e-9
MIN_PROJECTED_AREA = 1e-12


@dataclass(frozen=True)
class GridSpec:
    """North-up raster: lower-left origin, square cells, rows counted from the north."""
    x_origin: float
    y_origin: float
    cell_size: float
    rows: int
    cols: int

    @classmethod
    def from_dsm(cls, dsm: Dsm) -> 'GridSpec':
        rows, cols = dsm.shape
        return cls(dsm.x_origin, dsm.y_origin, dsm.cell_size, rows, cols)

    @classmethod
    def from_bounds(cls, bounds: SceneBounds, cell_size: float = 0.5) -> 'GridSpec':
        e0, e1, n0, n1 = bounds.utm_box
        x0 = np.floor(e0 / cell_size) * cell_size
        y0 = np.floor(n0 / cell_size) * cell_size
        cols = int(np.ceil((e1 - x0) / cell_size))
        rows = int(np.ceil((n1 - y0) / cell_size))
        return cls(float(x0), float(y0), cell_size, rows, cols)

    def empty(self, nodata: float = -9999.0) -> Dsm:
        return Dsm(np.full((self.rows, self.cols), nodata), self.x_origin, self.y_origin, self.cell_size, nodata)


def rasterize_dsm(mesh: TriangleMesh, grid: GridSpec, nodata: float = -9999.0) -> Dsm:
    """
    Highest mesh intersection of each cell-center vertical line.

    Points on shared edges count for both triangles (inclusive test), so adjacent
    triangles leave no cracks. Triangles seen edge-on from above are skipped.

    Args:
        mesh: Mesh in the UTM frame
        grid: Output raster
        nodata: Sentinel for cells without intersection

    Returns:
        Dsm
    """
    if mesh.frame != 'utm':
        raise ValueError(f"rasterize_dsm expects a UTM mesh, got frame '{mesh.frame}'")
    heights = np.full((grid.rows, grid.cols), -np.inf)
    vertices = np.asarray(mesh.vertices, dtype=np.float64)

    # Work in cell units relative to the grid origin: column c center at x = c + 0.5
    x = (vertices[:, 0] - grid.x_origin) / grid.cell_size
    y = (vertices[:, 1] - grid.y_origin) / grid.cell_size
    z = vertices[:, 2]

    for tri in np.asarray(mesh.triangles):
        ax, bx, cx = x[tri]
        ay, by, cy = y[tri]
        area = (bx - ax) * (cy - ay) - (cx - ax) * (by - ay)
        if abs(area) < MIN_PROJECTED_AREA:
            continue

        c0 = max(int(np.ceil(min(ax, bx, cx) - 0.5)), 0)
        c1 = min(int(np.floor(max(ax, bx, cx) - 0.5)), grid.cols - 1)
        r0 = max(int(np.ceil(min(ay, by, cy) - 0.5)), 0)
        r1 = min(int(np.floor(max(ay, by, cy) - 0.5)), grid.rows - 1)
        if c0 > c1 or r0 > r1:
            continue

        px, py = np.meshgrid(np.arange(c0, c1 + 1) + 0.5, np.arange(r0, r1 + 1) + 0.5)
        w_a = ((bx - px) * (cy - py) - (cx - px) * (by - py)) / area
        w_b = ((cx - px) * (ay - py) - (ax - px) * (cy - py)) / area
        w_c = 1.0 - w_a - w_b
        inside = (w_a >= -EDGE_TOLERANCE) & (w_b >= -EDGE_TOLERANCE) & (w_c >= -EDGE_TOLERANCE)
        if not inside.any():
            continue

        h = w_a * z[tri[0]] + w_b * z[tri[1]] + w_c * z[tri[2]]
        # y rows count from the south here; DSM rows count from the north
        rows = grid.rows - 1 - np.arange(r0, r1 + 1)
        block = heights[rows[:, None], np.arange(c0, c1 + 1)[None, :]]
        heights[rows[:, None], np.arange(c0, c1 + 1)[None, :]] = np.where(inside, np.maximum(block, h), block)

    heights[~np.isfinite(heights)] = nodata
    dsm = Dsm(heights, grid.x_origin, grid.y_origin, grid.cell_size, nodata)
    logger.debug(f"Rasterized {len(mesh.triangles)} triangles: {dsm.valid.mean():.3f} of cells covered")
    return dsm


def fill_nodata(dsm: Dsm, radius: float = 5.0, power: float = 2.0) -> Dsm:
    """Inverse-distance fill of NoData cells from valid cells within radius (in cells)."""
    valid = dsm.valid
    if valid.all() or not valid.any():
        return dsm
    rows, cols = np.indices(dsm.shape)
    known = np.stack([rows[valid], cols[valid]], axis=-1).astype(np.float64)
    missing = np.stack([rows[~valid], cols[~valid]], axis=-1).astype(np.float64)
    values = dsm.heights[valid]

    tree = cKDTree(known)
    filled = dsm.heights.copy()
    targets = np.argwhere(~valid)
    for (r, c), neighbours in zip(targets, tree.query_ball_point(missing, r=radius)):
        if not neighbours:
            continue
        distances = np.linalg.norm(known[neighbours] - (r, c), axis=-1)
        weights = 1.0 / distances ** power
        filled[r, c] = float(np.sum(weights * values[neighbours]) / np.sum(weights))

    result = Dsm(filled, dsm.x_origin, dsm.y_origin, dsm.cell_size, dsm.nodata)
    logger.debug(f"NoData fill: {int((~valid).sum())} -> {int((~result.valid).sum())} empty cells")
    return result


def write_dsm(dsm: Dsm, path: Union[str, Path]) -> Path:
    """Write a DSM as .asc (with header) or .pfm, chosen by suffix."""
    path = Path(path)
    suffix = path.suffix.lower()
    if suffix == '.asc':
        write_asc(dsm, path)
    elif suffix == '.pfm':
        write_pfm(np.where(dsm.valid, dsm.heights, dsm.nodata), path)
    else:
        raise ValueError(f"Unsupported DSM format '{suffix}'")
    return path
