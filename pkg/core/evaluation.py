"""Reconstruction metrics: DSM height errors, Chamfer distance and surface eikonal adherence."""

import logging
from typing import Callable, Dict, Optional

import numpy as np
import trimesh
from scipy.spatial import cKDTree

from .errors import EmptySetError, GridMismatchError, NoOverlapError
from .types import Dsm, DsmDiffReport, PointSet, TriangleMesh


logger = logging.getLogger(__name__)

METRIC_COLUMNS = ['scene', 'mae', 'med', 'cd', 'valid_fraction']


def dsm_error_stats(pred: Dsm, truth: Dsm, align: bool = False) -> DsmDiffReport:
    """
    Mean and median absolute height difference over jointly valid cells.

    Args:
        pred: Reconstructed DSM
        truth: Reference DSM on the same grid
        align: Remove the median vertical offset before measuring

    Returns:
        DsmDiffReport: Statistics plus the per-cell |dh| grid (NaN where invalid)

    Raises:
        GridMismatchError: If the grids differ in shape, origin or cell size
        NoOverlapError: If no cell is valid in both
    """
    if not pred.same_grid(truth):
        raise GridMismatchError(
            f"DSM grids differ: {pred.shape} at ({pred.x_origin}, {pred.y_origin}) step {pred.cell_size} "
            f"vs {truth.shape} at ({truth.x_origin}, {truth.y_origin}) step {truth.cell_size}"
        )
    joint = pred.valid & truth.valid
    count = int(joint.sum())
    if count == 0:
        raise NoOverlapError("No cell is valid in both DSMs")

    diff = pred.heights - truth.heights
    if align:
        shift = float(np.median(diff[joint]))
        logger.debug(f"Removing median vertical offset {shift:.4f} m")
        diff = diff - shift

    errors = np.abs(diff[joint])
    grid = np.full(pred.shape, np.nan)
    grid[joint] = errors
    return DsmDiffReport(
        mae=float(errors.mean()),
        med=float(np.median(errors)),
        valid_count=count,
        pred_nodata_fraction=float(1.0 - pred.valid.mean()),
        truth_nodata_fraction=float(1.0 - truth.valid.mean()),
        error_grid=grid,
    )


def chamfer(first: PointSet, second: PointSet) -> float:
    """
    Symmetric Chamfer distance with squared nearest-neighbour distances.

    cd = mean_a min_b |a - b|^2 + mean_b min_a |b - a|^2

    Raises:
        EmptySetError: If either set is empty
    """
    a = np.asarray(first.points, dtype=np.float64).reshape(-1, 3)
    b = np.asarray(second.points, dtype=np.float64).reshape(-1, 3)
    if len(a) == 0 or len(b) == 0:
        raise EmptySetError(f"Chamfer needs nonempty sets (sizes {len(a)}, {len(b)})")

    # Center both sets jointly so large UTM coordinates keep their precision
    origin = a.mean(axis=0)
    a, b = a - origin, b - origin
    dist_ab, _ = cKDTree(b).query(a, k=1)
    dist_ba, _ = cKDTree(a).query(b, k=1)
    return float(np.mean(dist_ab ** 2) + np.mean(dist_ba ** 2))


def dsm_to_points(dsm: Dsm) -> PointSet:
    """One point per valid cell at (cell center, height)."""
    east, north = dsm.cell_centers()
    valid = dsm.valid
    points = np.stack([east[valid], north[valid], dsm.heights[valid]], axis=-1)
    return PointSet(points=points, provenance='dsm-grid', metadata={'cell_size': dsm.cell_size})


def mesh_to_points(mesh: TriangleMesh, count: int = 100000, seed: int = 0) -> PointSet:
    """Area-uniform surface samples of a mesh."""
    if len(mesh.triangles) == 0:
        raise EmptySetError("Cannot sample an empty mesh")
    surface = trimesh.Trimesh(vertices=mesh.vertices, faces=mesh.triangles, process=False)
    points, _ = trimesh.sample.sample_surface(surface, count, seed=seed)
    return PointSet(points=np.asarray(points, dtype=np.float64), provenance='mesh-sampled',
                    metadata={'count': float(count)})


def surface_eikonal_stats(gradient_fn: Callable[[np.ndarray], np.ndarray], mesh: TriangleMesh,
                          count: int = 10000, band: float = 0.05, seed: int = 0) -> Dict[str, float]:
    """
    Eikonal adherence near the surface.

    Points are sampled on a canonical-frame mesh and displaced along random
    directions by up to band units; gradient_fn maps (N, 3) points to (N, 3) gradients.

    Returns:
        Dict: mean and max of | |grad f| - 1 |
    """
    samples = mesh_to_points(mesh, count, seed).points
    rng = np.random.default_rng(seed)
    directions = rng.normal(size=samples.shape)
    directions /= np.linalg.norm(directions, axis=-1, keepdims=True)
    offsets = rng.uniform(-band, band, size=(len(samples), 1))
    points = np.clip(samples + offsets * directions, -1.0, 1.0)
    deviation = np.abs(np.linalg.norm(gradient_fn(points), axis=-1) - 1.0)
    return {'mean': float(deviation.mean()), 'max': float(deviation.max()), 'count': float(len(points))}


class ReconstructionEvaluator:
    """Computes one metrics row per scene from DSMs and optional meshes."""

    def __init__(self, align: bool = False, mesh_samples: int = 100000, seed: int = 0):
        self.align = align
        self.mesh_samples = mesh_samples
        self.seed = seed

    def evaluate(self, scene: str, pred: Dsm, truth: Dsm,
                 pred_mesh: Optional[TriangleMesh] = None,
                 truth_mesh: Optional[TriangleMesh] = None) -> Dict:
        """
        Evaluate a reconstructed DSM (and meshes, when both are given) against the reference.

        Returns:
            Dict: {'row': {scene, mae, med, cd, valid_fraction}, 'report': DsmDiffReport,
                   'mesh_cd': float or None}
        """
        report = dsm_error_stats(pred, truth, align=self.align)
        cd = chamfer(dsm_to_points(pred), dsm_to_points(truth))

        mesh_cd = None
        if pred_mesh is not None and truth_mesh is not None:
            mesh_cd = chamfer(
                mesh_to_points(pred_mesh, self.mesh_samples, self.seed),
                mesh_to_points(truth_mesh, self.mesh_samples, self.seed + 1),
            )

        logger.info(
            f"{scene}: MAE {report.mae:.4f} m, MED {report.med:.4f} m, CD {cd:.4f} m^2, "
            f"valid {report.valid_fraction:.3f}"
        )
        row = {
            'scene': scene,
            'mae': report.mae,
            'med': report.med,
            'cd': cd,
            'valid_fraction': report.valid_fraction,
        }
        return {'row': row, 'report': report, 'mesh_cd': mesh_cd}
