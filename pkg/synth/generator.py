"""
Synthetic dataset generation.

An analytic scene (ground plane, boxes, spheres) is viewed by pinhole cameras on
a viewing circle far above it. Each camera is replaced by an RPC fitted to it,
and images, oracle relative depths and sparse points are produced along that
RPC's own rays, so every file the pipeline reads is consistent with the RPCs.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple, Union

import numpy as np
import yaml
from tqdm import tqdm

from core.errors import DatasetError, RpcFitFailedError
from core.rpc_camera import SceneBounds, make_rays, project, rpc_monomials, sun_direction
from core.types import Dsm, RpcModel, SparseObservation
from extraction.dsm import GridSpec
from storage.dataset import write_manifest
from storage.formats import write_asc, write_image, write_mask, write_pfm, write_rpc, write_sparse_csv
from storage.reports import ReportStore
from .factory import PrimitiveFactory
from .primitives import BasePrimitive


logger = logging.getLogger(__name__)

HIT_TOLERANCE = 1e-5      # meters
MAX_TRACE_STEPS = 512
NORMAL_STEP = 1e-4        # meters
RPC_FIT_GRID = (20, 20, 10)
RPC_CHECK_GRID = (9, 9, 5)
RPC_FIT_TOLERANCE = 0.05  # pixels
RPC_BOX_ENLARGEMENT = 2.0


@dataclass(frozen=True)
class ViewConfig:
    count: int = 8
    height: int = 96
    width: int = 96
    off_nadir: Tuple[float, float] = (5.0, 25.0)      # degrees
    distance: float = 600000.0                          # meters
    footprint: float = 1.0                              # image width / scene width at the ground
    sun_azimuth: Tuple[float, float] = (120.0, 160.0)
    sun_elevation: Tuple[float, float] = (45.0, 65.0)

    def __post_init__(self):
        if self.count < 2:
            raise ValueError("At least 2 views are required")
        if min(self.height, self.width) < 3:
            raise ValueError("Images must be at least 3 x 3")
        if not 0.0 <= self.off_nadir[0] <= self.off_nadir[1] <= 25.0:
            raise ValueError("off_nadir must satisfy 0 <= min <= max <= 25 degrees")


@dataclass(frozen=True)
class NoiseConfig:
    pixel_sigma: float = 0.0
    gain_jitter: float = 0.15
    ambient: float = 0.2
    sparse_points: int = 200
    sparse_sigma: float = 0.0     # pixels
    depth_warp: float = 0.0       # 0 = affine oracle depth


@dataclass
class AnalyticScene:
    """Primitives in a local metric frame centered on (center_lat, center_lon)."""
    name: str
    center_lat: float
    center_lon: float
    utm_zone: str
    half_extent: float
    alt_lower: float
    alt_upper: float
    primitives: List[BasePrimitive]
    views: ViewConfig = field(default_factory=ViewConfig)
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    water: Optional[Tuple[int, int, int, int]] = None   # row0, col0, row1, col1 (exclusive)

    @cached_property
    def bounds(self) -> SceneBounds:
        reference = SceneBounds(self.center_lat - 1e-3, self.center_lat + 1e-3, self.center_lon - 1e-3,
                                self.center_lon + 1e-3, self.alt_lower, self.alt_upper, self.utm_zone)
        e0, n0 = self.origin_utm
        h = self.half_extent
        lon, lat = reference.from_utm(np.array([e0 - h, e0 + h, e0 - h, e0 + h]), np.array([n0 - h, n0 - h, n0 + h, n0 + h]))
        return SceneBounds(float(lat.min()), float(lat.max()), float(lon.min()), float(lon.max()),
                           self.alt_lower, self.alt_upper, self.utm_zone)

    @cached_property
    def origin_utm(self) -> Tuple[float, float]:
        reference = SceneBounds(self.center_lat - 1e-3, self.center_lat + 1e-3, self.center_lon - 1e-3,
                                self.center_lon + 1e-3, self.alt_lower, self.alt_upper, self.utm_zone)
        east, north = reference.to_utm(self.center_lon, self.center_lat)
        return float(east), float(north)

    def to_local(self, utm: np.ndarray) -> np.ndarray:
        e0, n0 = self.origin_utm
        return np.asarray(utm, dtype=np.float64) - np.array([e0, n0, 0.0])

    def sdf_local(self, points: np.ndarray) -> np.ndarray:
        return np.min(np.stack([p.sdf(points) for p in self.primitives]), axis=0)

    def albedo_local(self, points: np.ndarray) -> np.ndarray:
        closest = np.argmin(np.stack([p.sdf(points) for p in self.primitives]), axis=0)
        return np.stack([p.albedo for p in self.primitives])[closest]

    def normal_local(self, points: np.ndarray) -> np.ndarray:
        grads = []
        for k in range(3):
            step = np.zeros(3)
            step[k] = NORMAL_STEP
            grads.append((self.sdf_local(points + step) - self.sdf_local(points - step)) / (2 * NORMAL_STEP))
        grads = np.stack(grads, axis=-1)
        return grads / np.maximum(np.linalg.norm(grads, axis=-1, keepdims=True), 1e-12)

    def max_height_local(self, east: np.ndarray, north: np.ndarray) -> np.ndarray:
        return np.max(np.stack([p.max_height(east, north) for p in self.primitives]), axis=0)


def analytic_sdf(scene: AnalyticScene, points_utm: np.ndarray) -> np.ndarray:
    """Exact signed distance (meters) of UTM points (..., 3) to the scene surface."""
    points = scene.to_local(np.atleast_2d(points_utm))
    return scene.sdf_local(points)


def load_scene(path: Union[str, Path]) -> AnalyticScene:
    """
    Load a scene description (YAML).

    Raises:
        DatasetError: If the file is missing or malformed
    """
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"Scene file not found: {path}")
    with open(path, 'r', encoding='utf-8') as f:
        raw = yaml.safe_load(f) or {}
    try:
        views = raw.get('views', {})
        noise = raw.get('noise', {})
        water = raw.get('water')
        return AnalyticScene(
            name=str(raw.get('scene', path.stem)),
            center_lat=float(raw['center']['lat']),
            center_lon=float(raw['center']['lon']),
            utm_zone=str(raw['utm_zone']),
            half_extent=float(raw['half_extent']),
            alt_lower=float(raw['altitude']['lower']),
            alt_upper=float(raw['altitude']['upper']),
            primitives=[PrimitiveFactory.create(entry) for entry in raw.get('primitives', [])],
            views=ViewConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in views.items()}),
            noise=NoiseConfig(**noise),
            water=tuple(int(x) for x in water) if water else None,
        )
    except (KeyError, TypeError, ValueError) as e:
        raise DatasetError(f"{path}: invalid scene description: {e}") from e


@dataclass
class PinholeCamera:
    """Perspective camera in the local metric frame; line axis points down the image."""
    position: np.ndarray
    forward: np.ndarray
    right: np.ndarray
    down: np.ndarray
    focal: float          # pixels
    line0: float
    samp0: float

    @classmethod
    def looking_at(cls, target: np.ndarray, off_nadir: float, azimuth: float, distance: float,
                   gsd: float, shape: Tuple[int, int]) -> 'PinholeCamera':
        theta, phi = np.deg2rad(off_nadir), np.deg2rad(azimuth)
        offset = np.array([np.sin(theta) * np.sin(phi), np.sin(theta) * np.cos(phi), np.cos(theta)])
        position = target + distance * offset
        forward = -offset
        right = np.cross(forward, np.array([0.0, 1.0, 0.0]))
        right /= np.linalg.norm(right)
        down = np.cross(forward, right)
        return cls(position, forward, right, down, distance / gsd, (shape[0] - 1) / 2.0, (shape[1] - 1) / 2.0)

    def project_local(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        rel = points - self.position
        z = rel @ self.forward
        return self.line0 + self.focal * (rel @ self.down) / z, self.samp0 + self.focal * (rel @ self.right) / z


def fit_rpc(project_fn: Callable, lat_range: Tuple[float, float], lon_range: Tuple[float, float],
            alt_range: Tuple[float, float], tolerance: float = RPC_FIT_TOLERANCE) -> Tuple[RpcModel, float]:
    """
    Fit an RPC to a projection by linear least squares (denominator constant term fixed to 1).

    Args:
        project_fn: Maps (lon, lat, alt) arrays to (line, samp) arrays
        lat_range, lon_range, alt_range: Fitting box
        tolerance: Maximum held-out residual in pixels

    Returns:
        Tuple: (RpcModel, max held-out residual in pixels)

    Raises:
        RpcFitFailedError: If the held-out residual exceeds tolerance
    """
    def grid(shape, inset):
        axes = []
        for (lo, hi), n in zip((lon_range, lat_range, alt_range), shape):
            step = (hi - lo) / (n - 1 + 2 * inset)
            axes.append(lo + step * (inset + np.arange(n)))
        return [a.ravel() for a in np.meshgrid(*axes, indexing='ij')]

    lon, lat, alt = grid(RPC_FIT_GRID, 0.0)
    line, samp = project_fn(lon, lat, alt)

    offsets = {k: 0.5 * (r[0] + r[1]) for k, r in (('lon', lon_range), ('lat', lat_range), ('alt', alt_range))}
    scales = {k: 0.5 * (r[1] - r[0]) for k, r in (('lon', lon_range), ('lat', lat_range), ('alt', alt_range))}
    line_off, samp_off = 0.5 * (line.min() + line.max()), 0.5 * (samp.min() + samp.max())
    line_scale, samp_scale = 0.5 * (line.max() - line.min()), 0.5 * (samp.max() - samp.min())

    monomials = rpc_monomials((lon - offsets['lon']) / scales['lon'],
                              (lat - offsets['lat']) / scales['lat'],
                              (alt - offsets['alt']) / scales['alt'])

    def solve(target):
        design = np.concatenate([monomials, -target[:, None] * monomials[:, 1:]], axis=1)
        solution, *_ = np.linalg.lstsq(design, target, rcond=None)
        return solution[:20], np.concatenate([[1.0], solution[20:]])

    line_num, line_den = solve((line - line_off) / line_scale)
    samp_num, samp_den = solve((samp - samp_off) / samp_scale)
    model = RpcModel(
        line_num=line_num, line_den=line_den, samp_num=samp_num, samp_den=samp_den,
        lat_off=offsets['lat'], lat_scale=scales['lat'], lon_off=offsets['lon'], lon_scale=scales['lon'],
        alt_off=offsets['alt'], alt_scale=scales['alt'],
        line_off=float(line_off), line_scale=float(line_scale),
        samp_off=float(samp_off), samp_scale=float(samp_scale),
    )

    lon_c, lat_c, alt_c = grid(RPC_CHECK_GRID, 0.5)
    line_t, samp_t = project_fn(lon_c, lat_c, alt_c)
    line_p, samp_p = project(model, lon_c, lat_c, alt_c)
    residual = float(np.max(np.hypot(line_p - line_t, samp_p - samp_t)))
    if residual > tolerance:
        raise RpcFitFailedError(f"RPC fit residual {residual:.4f} px exceeds {tolerance} px")
    return model, residual


@dataclass
class RenderedView:
    image_id: str
    rpc: RpcModel
    image: np.ndarray
    depth: np.ndarray             # canonical t of the first hit, NaN on miss
    relative: np.ndarray
    mask: np.ndarray
    sparse: List[SparseObservation]
    sun_azimuth: float
    sun_elevation: float
    truth: Dict[str, float]


def trace(scene: AnalyticScene, start: np.ndarray, unit: np.ndarray, length: np.ndarray) -> np.ndarray:
    """Sphere tracing in meters; returns the hit distance along each ray, NaN on miss."""
    s = np.zeros(len(start))
    hit = np.zeros(len(start), dtype=bool)
    active = np.ones(len(start), dtype=bool)
    for _ in range(MAX_TRACE_STEPS):
        if not active.any():
            break
        idx = np.flatnonzero(active)
        dist = scene.sdf_local(start[idx] + s[idx, None] * unit[idx])
        done = dist < HIT_TOLERANCE
        hit[idx[done]] = True
        s[idx[~done]] += dist[~done]
        escaped = s[idx] > length[idx]
        active[idx[done | escaped]] = False
    if active.any():
        logger.warning(f"{int(active.sum())} ray(s) did not converge in {MAX_TRACE_STEPS} steps")
    return np.where(hit, s, np.nan)


def render_view(scene: AnalyticScene, index: int, seed: int) -> RenderedView:
    """Camera, RPC fit, image, oracle depth, sparse points and mask of one view."""
    rng = np.random.default_rng([seed, index])
    views, noise, bounds = scene.views, scene.noise, scene.bounds
    image_id = f"view_{index:02d}"
    shape = (views.height, views.width)

    azimuth = 360.0 * index / views.count + rng.uniform(-10.0, 10.0)
    off_nadir = rng.uniform(*views.off_nadir)
    gsd = 2.0 * scene.half_extent * views.footprint / views.width
    target = np.array([0.0, 0.0, 0.5 * (scene.alt_lower + scene.alt_upper)])
    camera = PinholeCamera.looking_at(target, off_nadir, azimuth, views.distance, gsd, shape)

    def project_geo(lon, lat, alt):
        east, north = bounds.to_utm(lon, lat)
        return camera.project_local(scene.to_local(np.stack([east, north, alt], axis=-1)))

    lat_c, lon_c = 0.5 * (bounds.lat_min + bounds.lat_max), 0.5 * (bounds.lon_min + bounds.lon_max)
    k = 0.5 * RPC_BOX_ENLARGEMENT
    alt_c, alt_h = 0.5 * (bounds.alt_ref_lower + bounds.alt_ref_upper), 0.5 * (bounds.alt_ref_upper - bounds.alt_ref_lower)
    rpc, residual = fit_rpc(
        project_geo,
        (lat_c - k * (bounds.lat_max - bounds.lat_min), lat_c + k * (bounds.lat_max - bounds.lat_min)),
        (lon_c - k * (bounds.lon_max - bounds.lon_min), lon_c + k * (bounds.lon_max - bounds.lon_min)),
        (alt_c - 2 * k * alt_h, alt_c + 2 * k * alt_h),
    )

    rows, cols = np.meshgrid(np.arange(shape[0], dtype=np.float64), np.arange(shape[1], dtype=np.float64), indexing='ij')
    origins, directions, t_far = make_rays(rpc, rows.ravel(), cols.ravel(), bounds)
    half = bounds.canonical_scale()
    metric = np.linalg.norm(directions * half, axis=-1)      # meters per canonical unit along each ray
    start = scene.to_local(bounds.canonical_to_utm(origins))
    unit = directions * half / metric[:, None]
    s_hit = trace(scene, start, unit, t_far * metric)
    depth = s_hit / metric

    hit = np.isfinite(depth)
    points = start + np.where(hit, s_hit, 0.0)[:, None] * unit
    sun_az, sun_el = rng.uniform(*views.sun_azimuth), rng.uniform(*views.sun_elevation)
    gain = 1.0 + rng.uniform(-noise.gain_jitter, noise.gain_jitter)
    shading = noise.ambient + (1.0 - noise.ambient) * np.clip(scene.normal_local(points) @ sun_direction(sun_az, sun_el), 0.0, None)
    image = scene.albedo_local(points) * shading[:, None] * gain
    if noise.pixel_sigma > 0:
        image = image + rng.normal(0.0, noise.pixel_sigma, size=image.shape)
    image = np.where(hit[:, None], np.clip(image, 0.0, 1.0), 0.0).reshape(shape + (3,))

    t_min, t_max = float(np.nanmin(depth)), float(np.nanmax(depth))
    relative = (depth - t_min) / (t_max - t_min) if t_max > t_min else np.where(hit, 0.0, np.nan)
    if noise.depth_warp > 0:
        relative = np.expm1(noise.depth_warp * relative) / np.expm1(noise.depth_warp)

    mask = np.ones(shape, dtype=bool)
    if scene.water is not None:
        r0, c0, r1, c1 = scene.water
        mask[r0:r1, c0:c1] = False

    sparse = []
    candidates = np.flatnonzero(hit & mask.ravel())
    chosen = np.sort(rng.choice(candidates, size=min(noise.sparse_points, candidates.size), replace=False))
    utm = bounds.canonical_to_utm(origins[chosen] + depth[chosen, None] * directions[chosen])
    lon, lat = bounds.from_utm(utm[:, 0], utm[:, 1])
    u, v = project(rpc, lon, lat, utm[:, 2])
    du = rng.normal(0.0, noise.sparse_sigma, size=len(chosen)) if noise.sparse_sigma > 0 else np.zeros(len(chosen))
    dv = rng.normal(0.0, noise.sparse_sigma, size=len(chosen)) if noise.sparse_sigma > 0 else np.zeros(len(chosen))
    for i in range(len(chosen)):
        sparse.append(SparseObservation(
            image_id=image_id, u=float(u[i] + du[i]), v=float(v[i] + dv[i]),
            lon=float(lon[i]), lat=float(lat[i]), alt=float(utm[i, 2]),
            reproj_error=float(np.hypot(du[i], dv[i])),
        ))

    truth = {
        'scale': t_max - t_min, 'offset': t_min, 'rpc_residual_px': residual,
        'off_nadir_deg': float(off_nadir), 'azimuth_deg': float(azimuth % 360.0), 'gain': float(gain),
    }
    return RenderedView(image_id, rpc, image, depth.reshape(shape), relative.reshape(shape), mask, sparse,
                        float(sun_az), float(sun_el), truth)


def ground_truth_dsm(scene: AnalyticScene, cell_size: float = 0.5) -> Dsm:
    """Analytic max height at every cell center of the scene's UTM grid."""
    grid = GridSpec.from_bounds(scene.bounds, cell_size)
    dsm = grid.empty()
    east, north = dsm.cell_centers()
    e0, n0 = scene.origin_utm
    heights = scene.max_height_local(east - e0, north - n0)
    dsm.heights = np.where(np.isfinite(heights), heights, dsm.nodata)
    return dsm


@dataclass
class SynthDataset:
    manifest: Path
    image_ids: List[str]
    gt_dsm: Path
    truth: Dict[str, Dict[str, float]]


def generate_dataset(scene: AnalyticScene, output_dir: Union[str, Path], seed: int = 0,
                     threads: Optional[int] = None) -> SynthDataset:
    """
    Write a complete synthetic dataset: images, RPCs, relative depths, sparse
    points, masks, ground-truth DSM, truth report and manifest.

    Raises:
        RpcFitFailedError: If a camera cannot be fitted by an RPC
    """
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    logger.info(f"Generating '{scene.name}': {scene.views.count} views at {scene.views.height}x{scene.views.width}")

    with ThreadPoolExecutor(max_workers=threads) as pool:
        views = list(tqdm(pool.map(lambda k: render_view(scene, k, seed), range(scene.views.count)),
                          total=scene.views.count, desc='synth', unit='view', leave=False))

    entries, truth = [], {}
    for view in views:
        write_image(view.image, output_dir / 'images' / f"{view.image_id}.png")
        write_rpc(view.rpc, output_dir / 'rpc' / f"{view.image_id}.rpc")
        write_pfm(view.relative, output_dir / 'depth' / f"{view.image_id}.pfm")
        write_sparse_csv(view.sparse, output_dir / 'sparse' / f"{view.image_id}.csv")
        write_mask(view.mask, output_dir / 'masks' / f"{view.image_id}.png")
        entries.append({
            'id': view.image_id,
            'image': f"images/{view.image_id}.png",
            'rpc': f"rpc/{view.image_id}.rpc",
            'sun_azimuth': view.sun_azimuth,
            'sun_elevation': view.sun_elevation,
            'mask': f"masks/{view.image_id}.png",
            'depth': f"depth/{view.image_id}.pfm",
            'sparse': f"sparse/{view.image_id}.csv",
        })
        truth[view.image_id] = view.truth

    dsm_path = output_dir / 'gt_dsm.asc'
    write_asc(ground_truth_dsm(scene), dsm_path)
    ReportStore(output_dir / 'truth.json').save(truth, metadata={'scene': scene.name, 'seed': seed})
    manifest = output_dir / 'manifest.yaml'
    write_manifest(manifest, scene.name, scene.bounds, entries, gt_dsm='gt_dsm.asc')

    logger.info(f"Synthetic dataset written to {output_dir}")
    return SynthDataset(manifest=manifest, image_ids=[v.image_id for v in views], gt_dsm=dsm_path, truth=truth)
