"""Data type definitions for the satdn reconstruction pipeline."""

from dataclasses import dataclass, field
from typing import Dict, Optional, Tuple

import numpy as np


@dataclass(frozen=True, eq=False)
class RpcModel:
    """Rational polynomial camera (RPC00B term ordering)."""
    line_num: np.ndarray      # 20 coefficients
    line_den: np.ndarray
    samp_num: np.ndarray
    samp_den: np.ndarray
    lat_off: float            # degrees
    lat_scale: float
    lon_off: float            # degrees
    lon_scale: float
    alt_off: float            # meters
    alt_scale: float
    line_off: float           # pixels
    line_scale: float
    samp_off: float           # pixels
    samp_scale: float

    def __post_init__(self):
        for name in ('line_num', 'line_den', 'samp_num', 'samp_den'):
            coeffs = np.asarray(getattr(self, name), dtype=np.float64)
            if coeffs.shape != (20,):
                raise ValueError(f"RPC {name} must have 20 coefficients, got {coeffs.shape}")
            object.__setattr__(self, name, coeffs)
        for name in ('lat_scale', 'lon_scale', 'alt_scale', 'line_scale', 'samp_scale'):
            if not getattr(self, name) > 0:
                raise ValueError(f"RPC {name} must be strictly positive")


@dataclass(frozen=True)
class Ray:
    """A single ray in canonical space, starting on the upper reference plane."""
    origin: np.ndarray        # canonical 3-vector
    direction: np.ndarray     # unit canonical 3-vector
    t_near: float
    t_far: float

    def point(self, t: float) -> np.ndarray:
        return self.origin + t * self.direction


@dataclass
class SparseObservation:
    """One triangulated sparse point as seen by one image."""
    image_id: str
    u: float                  # line, px
    v: float                  # sample, px
    lon: float
    lat: float
    alt: float
    reproj_error: float = 0.0


@dataclass
class FusedDepthMap:
    """Relative depth made absolute by a scale/offset fit to sparse depths."""
    relative: np.ndarray      # H x W, normalized to [0, 1]
    absolute: np.ndarray      # H x W, canonical scene units along the ray
    scale: float
    offset: float
    mask: np.ndarray          # H x W bool, True = usable
    residual_mean: float
    residual_median: float
    n_sparse: int = 0
    mean_reproj_error: float = 0.0


@dataclass
class NormalMap:
    """Depth-derived normals and their 4-neighbour angular consistency."""
    normals: np.ndarray       # H x W x 3 unit vectors
    consistency: np.ndarray   # H x W, delta_gt in [-1, 1]


@dataclass
class BatchLosses:
    """Scalar losses of one training step (already reduced to floats)."""
    color: float
    depth: float
    normal: float
    eikonal: float
    total: float
    n_color: int = 0
    n_depth: int = 0
    n_normal: int = 0
    n_eikonal: int = 0


@dataclass
class TriangleMesh:
    """Indexed triangle mesh; frame is 'canonical' or 'utm'."""
    vertices: np.ndarray      # V x 3
    triangles: np.ndarray     # T x 3 int
    frame: str = 'canonical'


@dataclass
class Dsm:
    """Digital surface model on a north-up UTM grid.

    Row 0 is the northern edge; origin is the lower-left corner as in ESRI ASCII grids.
    """
    heights: np.ndarray       # H x W meters, nodata cells hold `nodata`
    x_origin: float           # easting of the lower-left corner
    y_origin: float           # northing of the lower-left corner
    cell_size: float = 0.5
    nodata: float = -9999.0

    @property
    def shape(self) -> Tuple[int, int]:
        return self.heights.shape

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.heights) & (self.heights != self.nodata)

    def cell_centers(self) -> Tuple[np.ndarray, np.ndarray]:
        """Return (easting, northing) grids of cell centers."""
        rows, cols = self.shape
        east = self.x_origin + (np.arange(cols) + 0.5) * self.cell_size
        north = self.y_origin + (rows - np.arange(rows) - 0.5) * self.cell_size
        return np.meshgrid(east, north)

    def same_grid(self, other: 'Dsm') -> bool:
        return (
            self.shape == other.shape
            and np.isclose(self.x_origin, other.x_origin, rtol=0.0, atol=1e-6)
            and np.isclose(self.y_origin, other.y_origin, rtol=0.0, atol=1e-6)
            and np.isclose(self.cell_size, other.cell_size, rtol=0.0, atol=1e-9)
        )


@dataclass
class DsmDiffReport:
    """Height error statistics between a predicted and a reference DSM."""
    mae: float
    med: float
    valid_count: int
    pred_nodata_fraction: float
    truth_nodata_fraction: float
    error_grid: Optional[np.ndarray] = None

    @property
    def valid_fraction(self) -> float:
        if self.error_grid is None:
            return float('nan')
        return self.valid_count / self.error_grid.size


@dataclass
class PointSet:
    """3D points in UTM meters."""
    points: np.ndarray        # N x 3
    provenance: str = 'dsm-grid'
    metadata: Dict[str, float] = field(default_factory=dict)
