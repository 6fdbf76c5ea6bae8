"""Depth and normal priors: sparse ray depths, scale/offset fusion, normal consistency targets."""

import logging
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np

from .errors import DegenerateFitError, SatDNError
from .rpc_camera import SceneBounds, localize
from .types import FusedDepthMap, NormalMap, RpcModel, SparseObservation


logger = logging.getLogger(__name__)

FIT_MODES = ('residual', 'literal')
MIN_VARIANCE = 1e-12

# 4-neighbourhood as (d_row, d_col)
NEIGHBOURS = ((-1, 0), (1, 0), (0, -1), (0, 1))


@dataclass(frozen=True)
class PriorsConfig:
    fit_mode: str = 'residual'
    weight_floor: float = 0.05
    error_percentile: float = 95.0

    def __post_init__(self):
        if self.fit_mode not in FIT_MODES:
            raise ValueError(f"fit_mode must be one of {FIT_MODES}")
        if not 0.0 <= self.weight_floor <= 1.0:
            raise ValueError("weight_floor must be in [0, 1]")
        if not 0.0 < self.error_percentile <= 100.0:
            raise ValueError("error_percentile must be in (0, 100]")


@dataclass
class ScaleOffsetFit:
    scale: float
    offset: float
    residuals: np.ndarray

    @property
    def residual_mean(self) -> float:
        return float(np.mean(np.abs(self.residuals)))

    @property
    def residual_median(self) -> float:
        return float(np.median(np.abs(self.residuals)))


def rounded_pixel(obs: SparseObservation) -> Tuple[int, int]:
    return int(np.round(obs.u)), int(np.round(obs.v))


def reparameterize_sparse_depth(obs: SparseObservation, model: RpcModel, bounds: SceneBounds) -> float:
    """
    Distance along the pixel's ray from the upper reference plane to the sparse point.

    Both endpoints are localized at the rounded pixel: P' at the point's altitude,
    P_ref at the upper reference altitude. The distance is measured in canonical units.

    Raises:
        NoConvergenceError, DegenerateJacobianError: From localize
    """
    u, v = rounded_pixel(obs)
    lon, lat = localize(model, u, v, obs.alt)
    lon_ref, lat_ref = localize(model, u, v, bounds.alt_ref_upper)
    point = bounds.canonicalize(lon, lat, obs.alt, check=False)
    reference = bounds.canonicalize(lon_ref, lat_ref, bounds.alt_ref_upper, check=False)
    return float(np.linalg.norm(point - reference))


def sparse_weights(errors: np.ndarray, percentile: float = 95.0, floor: float = 0.05) -> np.ndarray:
    """w = clamp(1 - e / e_max, floor, 1) with e_max the given percentile of the errors."""
    errors = np.asarray(errors, dtype=np.float64)
    if errors.size == 0:
        return errors.copy()
    e_max = float(np.percentile(errors, percentile))
    if e_max <= 0.0:
        return np.ones_like(errors)
    return np.clip(1.0 - errors / e_max, floor, 1.0)


def fit_scale_offset(depths: np.ndarray, relative: np.ndarray, weights: Optional[np.ndarray] = None,
                     mode: str = 'residual') -> ScaleOffsetFit:
    """
    Closed-form weighted fit of depths against relative depths.

    mode 'residual' minimizes sum w (D - s*R - o)^2.
    mode 'literal' minimizes sum (w*D - s*R - o)^2.

    Args:
        depths: Sparse depths D at the sparse pixels
        relative: Relative depth values R at the same pixels
        weights: Per-point weights (default 1)
        mode: 'residual' or 'literal'

    Returns:
        ScaleOffsetFit

    Raises:
        DegenerateFitError: Fewer than 2 points, or weighted variance of R below 1e-12
    """
    if mode not in FIT_MODES:
        raise ValueError(f"Unknown fit mode '{mode}'")
    depths = np.asarray(depths, dtype=np.float64)
    relative = np.asarray(relative, dtype=np.float64)
    weights = np.ones_like(depths) if weights is None else np.asarray(weights, dtype=np.float64)
    if depths.size < 2:
        raise DegenerateFitError(f"Need at least 2 sparse points, got {depths.size}")

    if mode == 'residual':
        target, fit_weights = depths, weights
    else:
        target, fit_weights = weights * depths, np.ones_like(depths)

    w_sum = fit_weights.sum()
    if w_sum <= 0.0:
        raise DegenerateFitError("All sparse weights are zero")
    mean_r = (fit_weights * relative).sum() / w_sum
    mean_t = (fit_weights * target).sum() / w_sum
    var_r = (fit_weights * (relative - mean_r) ** 2).sum() / w_sum
    if var_r < MIN_VARIANCE:
        raise DegenerateFitError(
            f"Relative depth is constant at the sparse pixels (weighted variance {var_r:.3g})"
        )
    cov = (fit_weights * (relative - mean_r) * (target - mean_t)).sum() / w_sum
    scale = cov / var_r
    offset = mean_t - scale * mean_r
    residuals = target - (scale * relative + offset)
    return ScaleOffsetFit(scale=float(scale), offset=float(offset), residuals=residuals)


def normalize_relative(depth: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Min-max normalize to [0, 1] over finite pixels; returns (normalized, finite mask)."""
    depth = np.asarray(depth, dtype=np.float64)
    valid = np.isfinite(depth)
    normalized = np.zeros_like(depth)
    if not valid.any():
        return normalized, valid
    lo, hi = depth[valid].min(), depth[valid].max()
    if hi > lo:
        normalized[valid] = (depth[valid] - lo) / (hi - lo)
    return normalized, valid


def gt_consistency(normals: np.ndarray, pixel: Optional[Tuple[int, int]] = None):
    """
    Mean cosine between each normal and its in-bounds 4-neighbours.

    Args:
        normals: H x W x 3 unit normals
        pixel: Optional (row, col); returns a scalar for that pixel

    Returns:
        H x W array in [-1, 1], or a float when pixel is given
    """
    normals = np.asarray(normals, dtype=np.float64)
    h, w = normals.shape[:2]
    if pixel is not None:
        i, j = pixel
        cosines = [
            float(normals[i, j] @ normals[i + di, j + dj])
            for di, dj in NEIGHBOURS if 0 <= i + di < h and 0 <= j + dj < w
        ]
        if not cosines:
            raise ValueError(f"Pixel {pixel} has no in-bounds neighbour")
        return float(np.clip(np.mean(cosines), -1.0, 1.0))

    total = np.zeros((h, w))
    count = np.zeros((h, w))
    for di, dj in NEIGHBOURS:
        rows_c = slice(max(-di, 0), h - max(di, 0))
        cols_c = slice(max(-dj, 0), w - max(dj, 0))
        rows_n = slice(max(di, 0), h - max(-di, 0))
        cols_n = slice(max(dj, 0), w - max(-dj, 0))
        total[rows_c, cols_c] += np.sum(normals[rows_c, cols_c] * normals[rows_n, cols_n], axis=-1)
        count[rows_c, cols_c] += 1
    return np.clip(total / np.maximum(count, 1), -1.0, 1.0)


def normals_from_depth(depth: np.ndarray, pitch: float = 1.0) -> NormalMap:
    """
    Treat a depth map as a height field over the pixel grid and derive unit normals.

    n is proportional to (-dD/du, -dD/dv, 1) with central differences inside and
    one-sided differences at the borders; pitch is the pixel size in depth units.
    """
    depth = np.asarray(depth, dtype=np.float64)
    if depth.ndim != 2 or min(depth.shape) < 3:
        raise ValueError(f"normals_from_depth needs an H x W map with H, W >= 3, got {depth.shape}")
    d_du, d_dv = np.gradient(depth, pitch)
    normals = np.stack([-d_du, -d_dv, np.ones_like(depth)], axis=-1)
    normals /= np.linalg.norm(normals, axis=-1, keepdims=True)
    return NormalMap(normals=normals, consistency=gt_consistency(normals))


def ground_sample_distance(model: RpcModel, bounds: SceneBounds, shape: Tuple[int, int]) -> float:
    """Mean canonical distance between adjacent pixel centers on the upper reference plane."""
    u0, v0 = (shape[0] - 1) / 2.0, (shape[1] - 1) / 2.0
    us = np.array([u0, u0 + 1.0, u0])
    vs = np.array([v0, v0, v0 + 1.0])
    lon, lat = localize(model, us, vs, np.full(3, bounds.alt_ref_upper))
    points = bounds.canonicalize(lon, lat, bounds.alt_ref_upper, check=False)
    return float(0.5 * (np.linalg.norm(points[1] - points[0]) + np.linalg.norm(points[2] - points[0])))


def collect_sparse_depths(observations: List[SparseObservation], model: RpcModel, bounds: SceneBounds,
                          usable: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """
    Reparameterize observations, dropping those that fall outside the image,
    on unusable pixels, or fail to localize.

    Returns:
        Tuple: (depths, rows, cols, reprojection errors)
    """
    h, w = usable.shape
    depths, rows, cols, errors = [], [], [], []
    for obs in observations:
        u, v = rounded_pixel(obs)
        if not (0 <= u < h and 0 <= v < w):
            logger.warning(f"{obs.image_id}: sparse point at ({obs.u:.1f}, {obs.v:.1f}) outside the image, skipped")
            continue
        if not usable[u, v]:
            continue
        try:
            depth = reparameterize_sparse_depth(obs, model, bounds)
        except SatDNError as e:
            logger.warning(f"{obs.image_id}: sparse point at ({u}, {v}) dropped: {e}")
            continue
        depths.append(depth)
        rows.append(u)
        cols.append(v)
        errors.append(obs.reproj_error)
    return np.array(depths), np.array(rows, dtype=int), np.array(cols, dtype=int), np.array(errors)


def fuse_depth_map(relative_raw: np.ndarray, mask: np.ndarray, observations: List[SparseObservation],
                   model: RpcModel, bounds: SceneBounds,
                   config: PriorsConfig = PriorsConfig()) -> Tuple[FusedDepthMap, NormalMap]:
    """
    Build the absolute depth prior and the normal-consistency target of one image.

    Args:
        relative_raw: H x W monocular depth, NaN/Inf marking NoData
        mask: H x W usable-pixel mask (False = water or excluded)
        observations: Sparse observations of this image
        model: RPC of the image
        bounds: Scene bounds
        config: Fusion settings

    Returns:
        Tuple: (FusedDepthMap, NormalMap)

    Raises:
        DegenerateFitError: If fewer than 2 usable sparse points remain or they share one depth level
    """
    relative, finite = normalize_relative(relative_raw)
    usable = np.asarray(mask, dtype=bool) & finite

    depths, rows, cols, errors = collect_sparse_depths(observations, model, bounds, usable)
    weights = sparse_weights(errors, config.error_percentile, config.weight_floor)
    fit = fit_scale_offset(depths, relative[rows, cols], weights, config.fit_mode)

    fused = FusedDepthMap(
        relative=relative,
        absolute=fit.scale * relative + fit.offset,
        scale=fit.scale,
        offset=fit.offset,
        mask=usable,
        residual_mean=fit.residual_mean,
        residual_median=fit.residual_median,
        n_sparse=int(depths.size),
        mean_reproj_error=float(errors.mean()) if errors.size else 0.0,
    )

    pitch = ground_sample_distance(model, bounds, relative.shape)
    normals = normals_from_depth(relative, pitch / abs(fit.scale) if fit.scale != 0 else pitch)
    logger.debug(
        f"Fused depth: s={fit.scale:.6g} o={fit.offset:.6g} from {depths.size} points, "
        f"|r| mean {fit.residual_mean:.3g} median {fit.residual_median:.3g}"
    )
    return fused, normals
