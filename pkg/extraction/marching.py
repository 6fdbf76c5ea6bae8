"""Zero-level-set extraction with marching cubes, welding and mesh IO."""

import logging
from pathlib import Path
from typing import Callable, Union

import mcubes
import numpy as np
import torch
import trimesh

from core.errors import EmptySurfaceError
from core.rpc_camera import SceneBounds
from core.types import TriangleMesh


logger = logging.getLogger(__name__)

WELD_DIGITS = 7           # vertices closer than 1e-7 merge
MIN_TRIANGLE_AREA = 1e-12
MIN_RESOLUTION = 8

SdfFunction = Callable[[np.ndarray], np.ndarray]


def field_sdf_function(field, lam: float, chunk: int = 65536) -> SdfFunction:
    """Wrap a torch field as a chunked numpy SDF function evaluated without gradients."""
    def evaluate(points: np.ndarray) -> np.ndarray:
        values = []
        with torch.no_grad():
            for start in range(0, len(points), chunk):
                x = torch.as_tensor(points[start:start + chunk], dtype=field.dtype)
                sdf, _ = field.sdf(x, lam)
                values.append(sdf.cpu().numpy().astype(np.float64))
        return np.concatenate(values) if values else np.zeros(0)
    return evaluate


def sample_grid(sdf_fn: SdfFunction, resolution: int) -> np.ndarray:
    """SDF values on a resolution^3 grid spanning [-1, 1]^3, indexed [x, y, z]."""
    axis = np.linspace(-1.0, 1.0, resolution)
    xs, ys, zs = np.meshgrid(axis, axis, axis, indexing='ij')
    points = np.stack([xs, ys, zs], axis=-1).reshape(-1, 3)
    return np.asarray(sdf_fn(points), dtype=np.float64).reshape(resolution, resolution, resolution)


def weld(vertices: np.ndarray, triangles: np.ndarray) -> TriangleMesh:
    """Merge coincident vertices and drop triangles whose area is not above 1e-12."""
    mesh = trimesh.Trimesh(vertices=vertices, faces=triangles, process=False)
    mesh.merge_vertices(digits_vertex=WELD_DIGITS)
    keep = mesh.area_faces > MIN_TRIANGLE_AREA
    if not keep.all():
        logger.debug(f"Dropping {int((~keep).sum())} degenerate triangle(s)")
        mesh.update_faces(keep)
    mesh.remove_unreferenced_vertices()
    return TriangleMesh(
        vertices=np.asarray(mesh.vertices, dtype=np.float64),
        triangles=np.asarray(mesh.faces, dtype=np.int64),
    )


def marching_cubes_grid(values: np.ndarray, iso: float = 0.0) -> TriangleMesh:
    """
    Extract the iso-surface of a grid sampled over [-1, 1]^3.

    Raises:
        EmptySurfaceError: If the grid has no sign change about iso
    """
    resolution = values.shape[0]
    if values.min() >= iso or values.max() <= iso:
        raise EmptySurfaceError(
            f"No sign change in the SDF grid (range [{values.min():.4g}, {values.max():.4g}])"
        )
    # Negated so triangles face outwards for a negative-inside SDF
    vertices, triangles = mcubes.marching_cubes(-values, -iso)
    vertices = vertices / (resolution - 1.0) * 2.0 - 1.0
    mesh = weld(vertices, triangles)
    if len(mesh.triangles) == 0:
        raise EmptySurfaceError("Marching cubes produced only degenerate triangles")
    return mesh


def marching_cubes(sdf_fn: SdfFunction, resolution: int = 128, iso: float = 0.0) -> TriangleMesh:
    """
    Canonical-frame mesh of the zero level set of sdf_fn.

    Args:
        sdf_fn: Maps (N, 3) canonical points to (N,) signed distances
        resolution: Grid vertices per axis (>= 8)
        iso: Iso-value

    Returns:
        TriangleMesh: Welded mesh in the canonical frame

    Raises:
        EmptySurfaceError: If there is no surface
    """
    if resolution < MIN_RESOLUTION:
        raise ValueError(f"resolution must be >= {MIN_RESOLUTION}, got {resolution}")
    values = sample_grid(sdf_fn, resolution)
    mesh = marching_cubes_grid(values, iso)
    logger.info(f"Extracted mesh at {resolution}^3: {len(mesh.vertices)} vertices, {len(mesh.triangles)} triangles")
    return mesh


def mesh_to_utm(mesh: TriangleMesh, bounds: SceneBounds) -> TriangleMesh:
    if mesh.frame == 'utm':
        return mesh
    return TriangleMesh(vertices=bounds.canonical_to_utm(mesh.vertices), triangles=mesh.triangles, frame='utm')


def write_mesh(mesh: TriangleMesh, path: Union[str, Path]) -> Path:
    """Write a mesh as ASCII PLY or OBJ, chosen by the file suffix."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    surface = trimesh.Trimesh(vertices=mesh.vertices, faces=mesh.triangles, process=False)
    suffix = path.suffix.lower()
    if suffix == '.ply':
        data = surface.export(file_type='ply', encoding='ascii')
    elif suffix == '.obj':
        data = surface.export(file_type='obj', digits=10)
    else:
        raise ValueError(f"Unsupported mesh format '{suffix}'")
    mode = 'wb' if isinstance(data, bytes) else 'w'
    with open(path, mode) as f:
        f.write(data)
    logger.debug(f"Mesh written to {path}")
    return path


def read_mesh(path: Union[str, Path], frame: str = 'utm') -> TriangleMesh:
    surface = trimesh.load(Path(path), process=False, force='mesh')
    return TriangleMesh(
        vertices=np.asarray(surface.vertices, dtype=np.float64),
        triangles=np.asarray(surface.faces, dtype=np.int64),
        frame=frame,
    )
