"""Surface extraction: marching cubes meshes and DSM rasterization."""

from .marching import marching_cubes, mesh_to_utm, write_mesh
from .dsm import GridSpec, fill_nodata, rasterize_dsm, write_dsm

__all__ = [
    'marching_cubes',
    'mesh_to_utm',
    'write_mesh',
    'GridSpec',
    'fill_nodata',
    'rasterize_dsm',
    'write_dsm',
]
