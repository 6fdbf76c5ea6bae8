#!/usr/bin/env python3
"""
Tests for marching cubes extraction, DSM rasterization, NoData fill and mesh/DSM output.
"""

import sys
import tempfile
from pathlib import Path

import numpy as np

from core.errors import EmptySurfaceError
from core.types import Dsm, TriangleMesh
from extraction.dsm import GridSpec, fill_nodata, rasterize_dsm, write_dsm
from extraction.marching import marching_cubes, mesh_to_utm, read_mesh, weld, write_mesh
from storage.formats import read_asc
from testutil import run_suite, scene_bounds


GRID = GridSpec(x_origin=1000.0, y_origin=2000.0, cell_size=0.5, rows=8, cols=10)


def plate(x0: float, x1: float, y0: float, y1: float, height: float, offset: int = 0):
    vertices = [[x0, y0, height], [x1, y0, height], [x1, y1, height], [x0, y1, height]]
    triangles = [[offset, offset + 1, offset + 2], [offset, offset + 2, offset + 3]]
    return vertices, triangles


def utm_mesh(*plates) -> TriangleMesh:
    vertices, triangles = [], []
    for bounds in plates:
        v, t = plate(*bounds, offset=len(vertices))
        vertices += v
        triangles += t
    return TriangleMesh(np.array(vertices, dtype=float), np.array(triangles), frame='utm')


def footprint() -> tuple:
    return GRID.x_origin - 1.0, GRID.x_origin + 6.0, GRID.y_origin - 1.0, GRID.y_origin + 5.0


def ray_triangle_height(px: float, py: float, a, b, c):
    """Vertical line through (px, py) against one triangle, brute force."""
    area = (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1])
    if abs(area) < 1e-12:
        return None
    w_a = ((b[0] - px) * (c[1] - py) - (c[0] - px) * (b[1] - py)) / area
    w_b = ((c[0] - px) * (a[1] - py) - (a[0] - px) * (c[1] - py)) / area
    w_c = 1.0 - w_a - w_b
    if min(w_a, w_b, w_c) < -1e-9:
        return None
    return w_a * a[2] + w_b * b[2] + w_c * c[2]


def test_sphere_vertices_near_surface():
    mesh = marching_cubes(lambda p: np.linalg.norm(p, axis=-1) - 0.5, 64)
    cell = 2.0 / 63
    radii = np.linalg.norm(mesh.vertices, axis=-1)
    assert mesh.frame == 'canonical'
    assert np.all(np.abs(radii - 0.5) <= 1.5 * cell)
    assert len(mesh.triangles) > 1000


def test_half_space_gives_planar_sheet():
    mesh = marching_cubes(lambda p: p[:, 2], 32)
    assert np.max(np.abs(mesh.vertices[:, 2])) < 1e-9
    assert np.allclose(mesh.vertices[:, :2].min(axis=0), -1.0)
    assert np.allclose(mesh.vertices[:, :2].max(axis=0), 1.0)


def test_no_surface_raises():
    try:
        marching_cubes(lambda p: np.ones(len(p)), 16)
    except EmptySurfaceError:
        pass
    else:
        raise AssertionError("constant-positive field should raise")
    try:
        marching_cubes(lambda p: p[:, 2], 4)
    except ValueError:
        return
    raise AssertionError("resolution below 8 should be rejected")


def test_weld_merges_duplicates_and_drops_degenerates():
    vertices = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [1, 0, 0], [0, 1, 0], [1, 1, 0], [2, 2, 0]], dtype=float)
    triangles = np.array([[0, 1, 2], [3, 5, 4], [0, 0, 6]])
    mesh = weld(vertices, triangles)
    assert len(mesh.vertices) == 4
    assert len(mesh.triangles) == 2


def test_flat_plate_fills_grid():
    dsm = rasterize_dsm(utm_mesh((*footprint(), 30.0)), GRID)
    assert dsm.shape == (8, 10)
    assert np.all(np.abs(dsm.heights - 30.0) < 1e-9)


def test_stacked_plates_keep_highest():
    dsm = rasterize_dsm(utm_mesh((*footprint(), 10.0), (*footprint(), 30.0), (*footprint(), 20.0)), GRID)
    assert np.all(np.abs(dsm.heights - 30.0) < 1e-9)


def test_uncovered_cells_are_nodata():
    x0, y0 = GRID.x_origin, GRID.y_origin
    dsm = rasterize_dsm(utm_mesh((x0, x0 + 2.0, y0, y0 + 4.0, 7.0)), GRID, nodata=-1.0)
    # 4 columns from the west edge, 8 rows from the south edge
    assert np.all(np.abs(dsm.heights[:, :4] - 7.0) < 1e-9)
    assert np.all(dsm.heights[:, 4:] == -1.0)
    assert dsm.valid.sum() == 32


def test_rows_count_from_north():
    x0, y0 = GRID.x_origin, GRID.y_origin
    dsm = rasterize_dsm(utm_mesh((x0, x0 + 5.0, y0 + 3.0, y0 + 4.0, 5.0)), GRID)
    assert np.all(np.abs(dsm.heights[:2] - 5.0) < 1e-9)
    assert not dsm.valid[2:].any()


def test_pyramid_matches_brute_force():
    x0, y0 = GRID.x_origin, GRID.y_origin
    apex = [x0 + 2.3, y0 + 1.9, 12.0]
    corners = [[x0 - 0.2, y0 - 0.3, 2.0], [x0 + 4.7, y0 - 0.1, 3.0], [x0 + 4.9, y0 + 4.2, 1.0], [x0 + 0.1, y0 + 3.8, 4.0]]
    vertices = np.array(corners + [apex])
    triangles = np.array([[0, 1, 4], [1, 2, 4], [2, 3, 4], [3, 0, 4]])
    dsm = rasterize_dsm(TriangleMesh(vertices, triangles, frame='utm'), GRID)

    for row in range(GRID.rows):
        for col in range(GRID.cols):
            px = x0 + (col + 0.5) * GRID.cell_size
            py = y0 + (GRID.rows - 1 - row + 0.5) * GRID.cell_size
            hits = [ray_triangle_height(px, py, *vertices[tri]) for tri in triangles]
            hits = [h for h in hits if h is not None]
            if hits:
                assert abs(dsm.heights[row, col] - max(hits)) < 1e-9, (row, col)
            else:
                assert not dsm.valid[row, col], (row, col)


def test_box_scene_is_exact_inside_footprint():
    x0, y0 = GRID.x_origin, GRID.y_origin
    ground = (*footprint(), 0.0)
    roof = (x0 + 1.0, x0 + 3.0, y0 + 1.0, y0 + 3.0, 10.0)
    dsm = rasterize_dsm(utm_mesh(ground, roof), GRID)
    for row in range(GRID.rows):
        for col in range(GRID.cols):
            px = (col + 0.5) * GRID.cell_size
            py = (GRID.rows - 1 - row + 0.5) * GRID.cell_size
            expected = 10.0 if 1.0 < px < 3.0 and 1.0 < py < 3.0 else 0.0
            assert abs(dsm.heights[row, col] - expected) < 1e-9, (row, col)


def test_rasterize_rejects_canonical_mesh():
    mesh = utm_mesh((*footprint(), 1.0))
    try:
        rasterize_dsm(TriangleMesh(mesh.vertices, mesh.triangles), GRID)
    except ValueError:
        return
    raise AssertionError("canonical mesh should be rejected")


def test_extracted_height_field_matches_analytic_dsm():
    bounds = scene_bounds()
    e0, e1, n0, n1 = bounds.utm_box

    def height(east):
        return 10.0 + 8.0 * np.sin((east - e0) / 10.0)

    def sdf(points):
        utm = bounds.canonical_to_utm(points)
        surface = bounds.utm_to_canonical(utm[:, 0], utm[:, 1], height(utm[:, 0]))
        return points[:, 2] - surface[:, 2]

    mesh = mesh_to_utm(marching_cubes(sdf, 64), bounds)
    assert mesh.frame == 'utm'
    grid = GridSpec.from_bounds(bounds, cell_size=1.0)
    dsm = rasterize_dsm(mesh, grid)
    east = grid.x_origin + (np.arange(grid.cols) + 0.5) * grid.cell_size
    truth = np.broadcast_to(height(east), dsm.shape)

    vertical_cell = 2.0 / 63 * bounds.canonical_scale()[2]
    errors = np.abs(dsm.heights - truth)[dsm.valid]
    assert dsm.valid.mean() > 0.9
    assert errors.mean() <= 2 * vertical_cell


def test_fill_nodata_from_neighbours():
    heights = np.full((9, 9), 2.0)
    heights[4, 4] = -9999.0
    heights[:, 8] = -9999.0
    heights[0, 0] = 4.0
    dsm = Dsm(heights, 0.0, 0.0, 1.0, -9999.0)
    filled = fill_nodata(dsm, radius=1.5)
    assert filled.valid.all()
    assert abs(filled.heights[4, 4] - 2.0) < 1e-12
    assert dsm.heights[4, 4] == -9999.0

    isolated = np.full((9, 9), -9999.0)
    isolated[0, 0] = 1.0
    sparse = fill_nodata(Dsm(isolated, 0.0, 0.0, 1.0, -9999.0), radius=2.0)
    assert sparse.valid[1, 1] and not sparse.valid[8, 8]


def test_write_dsm_asc_roundtrip():
    heights = np.arange(12, dtype=float).reshape(3, 4)
    heights[1, 2] = -9999.0
    dsm = Dsm(heights, 445000.25, 3350000.5, 0.5)
    with tempfile.TemporaryDirectory() as tmp:
        loaded = read_asc(write_dsm(dsm, Path(tmp) / 'out' / 'dsm.asc'))
        try:
            write_dsm(dsm, Path(tmp) / 'dsm.tif')
        except ValueError:
            pass
        else:
            raise AssertionError("unsupported suffix should raise")
    assert loaded.x_origin == 445000.25 and loaded.y_origin == 3350000.5 and loaded.cell_size == 0.5
    assert np.array_equal(loaded.valid, dsm.valid)
    assert np.allclose(loaded.heights[loaded.valid], heights[dsm.valid])


def test_write_mesh_ply_and_obj():
    mesh = utm_mesh((0.0, 1.5, 0.0, 2.5, 3.25))
    with tempfile.TemporaryDirectory() as tmp:
        for name in ('mesh.ply', 'mesh.obj'):
            path = write_mesh(mesh, Path(tmp) / name)
            loaded = read_mesh(path)
            assert loaded.frame == 'utm'
            assert len(loaded.triangles) == 2
            assert np.allclose(np.sort(loaded.vertices, axis=0), np.sort(mesh.vertices, axis=0), atol=1e-6)


def main():
    return run_suite("EXTRACTION", [
        test_sphere_vertices_near_surface,
        test_half_space_gives_planar_sheet,
        test_no_surface_raises,
        test_weld_merges_duplicates_and_drops_degenerates,
        test_flat_plate_fills_grid,
        test_stacked_plates_keep_highest,
        test_uncovered_cells_are_nodata,
        test_rows_count_from_north,
        test_pyramid_matches_brute_force,
        test_box_scene_is_exact_inside_footprint,
        test_rasterize_rejects_canonical_mesh,
        test_extracted_height_field_matches_analytic_dsm,
        test_fill_nodata_from_neighbours,
        test_write_dsm_asc_roundtrip,
        test_write_mesh_ply_and_obj,
    ])


if __name__ == '__main__':
    sys.exit(main())
