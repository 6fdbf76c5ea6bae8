"""RPC camera model, localization, ray generation and the canonical scene transform."""

import logging
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Tuple, Union

import numpy as np
from pyproj import Transformer

from .errors import (
    DegenerateDenominatorError,
    DegenerateJacobianError,
    NoConvergenceError,
    OutOfDomainError,
)
from .types import Ray, RpcModel


logger = logging.getLogger(__name__)

ArrayLike = Union[float, np.ndarray]

DENOMINATOR_EPS = 1e-8
JACOBIAN_EPS = 1e-12
NEWTON_STEP = 1e-6        # normalized units
NEWTON_TOL = 1e-10        # normalized units
NEWTON_MAX_ITER = 50
RPC_DOMAIN_MARGIN = 0.1   # normalized units beyond [-1, 1]


def rpc_monomials(lon: ArrayLike, lat: ArrayLike, alt: ArrayLike) -> np.ndarray:
    """
    Evaluate the 20 cubic monomials of the RPC00B basis.

    Args:
        lon, lat, alt: Normalized coordinates (L, P, H), broadcastable arrays

    Returns:
        np.ndarray: Array of shape (..., 20) in RPC00B order
            1, L, P, H, LP, LH, PH, L², P², H², PLH, L³, LP², LH², L²P, P³, PH², L²H, P²H, H³
    """
    L, P, H = np.broadcast_arrays(
        np.asarray(lon, dtype=np.float64),
        np.asarray(lat, dtype=np.float64),
        np.asarray(alt, dtype=np.float64),
    )
    return np.stack([
        np.ones_like(L), L, P, H,
        L * P, L * H, P * H, L * L, P * P, H * H,
        P * L * H, L * L * L, L * P * P, L * H * H, L * L * P,
        P * P * P, P * H * H, L * L * H, P * P * H, H * H * H,
    ], axis=-1)


def _rational(num: np.ndarray, den: np.ndarray, monomials: np.ndarray) -> np.ndarray:
    denominator = monomials @ den
    if np.any(np.abs(denominator) < DENOMINATOR_EPS):
        raise DegenerateDenominatorError(
            f"RPC denominator below {DENOMINATOR_EPS} at "
            f"{int(np.sum(np.abs(denominator) < DENOMINATOR_EPS))} point(s)"
        )
    return (monomials @ num) / denominator


def _normalized_image(model: RpcModel, nlon, nlat, nalt) -> Tuple[np.ndarray, np.ndarray]:
    monomials = rpc_monomials(nlon, nlat, nalt)
    line = _rational(model.line_num, model.line_den, monomials)
    samp = _rational(model.samp_num, model.samp_den, monomials)
    return line, samp


def _as_output(value: np.ndarray):
    return float(value) if np.ndim(value) == 0 else value


def project(
    model: RpcModel,
    lon: ArrayLike,
    lat: ArrayLike,
    alt: ArrayLike,
    margin: float = RPC_DOMAIN_MARGIN
) -> Tuple[ArrayLike, ArrayLike]:
    """
    Project geographic points into the image.

    Args:
        model: RPC model
        lon: Longitude(s) in degrees
        lat: Latitude(s) in degrees
        alt: Altitude(s) in meters
        margin: Allowed excursion beyond the normalized [-1, 1] box

    Returns:
        Tuple: (u, v) = (line, sample) pixel coordinates

    Raises:
        OutOfDomainError: If an input leaves the valid box by more than margin
        DegenerateDenominatorError: If a denominator is below 1e-8 in magnitude
    """
    nlon = (np.asarray(lon, dtype=np.float64) - model.lon_off) / model.lon_scale
    nlat = (np.asarray(lat, dtype=np.float64) - model.lat_off) / model.lat_scale
    nalt = (np.asarray(alt, dtype=np.float64) - model.alt_off) / model.alt_scale

    limit = 1.0 + margin
    for name, values in (('lon', nlon), ('lat', nlat), ('alt', nalt)):
        if np.any(np.abs(values) > limit):
            raise OutOfDomainError(
                f"{name} outside the RPC valid box (normalized max |{name}| = "
                f"{float(np.max(np.abs(values))):.4f} > {limit})"
            )

    line, samp = _normalized_image(model, nlon, nlat, nalt)
    u = line * model.line_scale + model.line_off
    v = samp * model.samp_scale + model.samp_off
    return _as_output(u), _as_output(v)


def localize(
    model: RpcModel,
    u: ArrayLike,
    v: ArrayLike,
    alt: ArrayLike,
    max_iter: int = NEWTON_MAX_ITER,
    tol: float = NEWTON_TOL
) -> Tuple[ArrayLike, ArrayLike]:
    """
    Invert the RPC at fixed altitude with damped Newton iterations.

    The 2x2 Jacobian is formed by central differences with step 1e-6 in normalized
    units; the iteration starts at the normalization center. A step is halved until
    the residual decreases (at most 10 times).

    Args:
        model: RPC model
        u: Line coordinate(s), px
        v: Sample coordinate(s), px
        alt: Altitude(s), meters

    Returns:
        Tuple: (lon, lat) in degrees

    Raises:
        NoConvergenceError: If the residual stays above tol after max_iter iterations
        DegenerateJacobianError: If |det J| < 1e-12
    """
    u_arr, v_arr, alt_arr = np.broadcast_arrays(
        np.asarray(u, dtype=np.float64),
        np.asarray(v, dtype=np.float64),
        np.asarray(alt, dtype=np.float64),
    )
    target_line = ((u_arr - model.line_off) / model.line_scale).ravel()
    target_samp = ((v_arr - model.samp_off) / model.samp_scale).ravel()
    nalt = ((alt_arr - model.alt_off) / model.alt_scale).ravel()

    nlon = np.zeros_like(target_line)
    nlat = np.zeros_like(target_line)

    def residual(lon_n, lat_n, alt_n, line_t, samp_t):
        line, samp = _normalized_image(model, lon_n, lat_n, alt_n)
        return line - line_t, samp - samp_t

    active = np.arange(target_line.size)
    for iteration in range(max_iter + 1):
        r_line, r_samp = residual(
            nlon[active], nlat[active], nalt[active],
            target_line[active], target_samp[active]
        )
        done = np.maximum(np.abs(r_line), np.abs(r_samp)) <= tol
        active, r_line, r_samp = active[~done], r_line[~done], r_samp[~done]
        if active.size == 0:
            break
        if iteration == max_iter:
            raise NoConvergenceError(
                f"Localization did not converge after {max_iter} iterations "
                f"for {active.size} point(s)"
            )

        lon_a, lat_a, alt_a = nlon[active], nlat[active], nalt[active]
        line_t, samp_t = target_line[active], target_samp[active]

        # Central-difference Jacobian
        h = NEWTON_STEP
        lp, sp = _normalized_image(model, lon_a + h, lat_a, alt_a)
        lm, sm = _normalized_image(model, lon_a - h, lat_a, alt_a)
        dline_dlon, dsamp_dlon = (lp - lm) / (2 * h), (sp - sm) / (2 * h)
        lp, sp = _normalized_image(model, lon_a, lat_a + h, alt_a)
        lm, sm = _normalized_image(model, lon_a, lat_a - h, alt_a)
        dline_dlat, dsamp_dlat = (lp - lm) / (2 * h), (sp - sm) / (2 * h)

        det = dline_dlon * dsamp_dlat - dline_dlat * dsamp_dlon
        if np.any(np.abs(det) < JACOBIAN_EPS):
            raise DegenerateJacobianError(
                f"Localization Jacobian is singular (|det| < {JACOBIAN_EPS})"
            )

        step_lon = -(dsamp_dlat * r_line - dline_dlat * r_samp) / det
        step_lat = -(-dsamp_dlon * r_line + dline_dlon * r_samp) / det

        # Damping: halve the step wherever it does not reduce the residual
        current = np.hypot(r_line, r_samp)
        factor = np.ones_like(current)
        for _ in range(10):
            t_line, t_samp = residual(
                lon_a + factor * step_lon, lat_a + factor * step_lat, alt_a, line_t, samp_t
            )
            worse = np.hypot(t_line, t_samp) > current
            if not np.any(worse):
                break
            factor = np.where(worse, factor * 0.5, factor)

        nlon[active] = lon_a + factor * step_lon
        nlat[active] = lat_a + factor * step_lat

    lon = (nlon * model.lon_scale + model.lon_off).reshape(u_arr.shape)
    lat = (nlat * model.lat_scale + model.lat_off).reshape(u_arr.shape)
    return _as_output(lon), _as_output(lat)


@lru_cache(maxsize=None)
def _utm_transformers(utm_zone: str) -> Tuple[Transformer, Transformer]:
    zone = utm_zone.strip().upper()
    hemisphere = zone[-1]
    if hemisphere not in ('N', 'S') or not zone[:-1].isdigit():
        raise ValueError(f"Invalid UTM zone identifier: '{utm_zone}' (expected e.g. '17N')")
    number = int(zone[:-1])
    if not 1 <= number <= 60:
        raise ValueError(f"UTM zone number out of range: {number}")
    epsg = (32600 if hemisphere == 'N' else 32700) + number
    forward = Transformer.from_crs("EPSG:4326", f"EPSG:{epsg}", always_xy=True)
    inverse = Transformer.from_crs(f"EPSG:{epsg}", "EPSG:4326", always_xy=True)
    return forward, inverse


@dataclass(frozen=True)
class SceneBounds:
    """
    The scene slab between two altitude reference planes.

    The canonical transform maps the UTM box spanned by the lat/lon box, and the
    altitude range [alt_ref_lower, alt_ref_upper], per axis onto [-1, 1]^3.
    """
    lat_min: float
    lat_max: float
    lon_min: float
    lon_max: float
    alt_ref_lower: float
    alt_ref_upper: float
    utm_zone: str
    margin: float = 0.1       # canonical units

    def __post_init__(self):
        if not self.alt_ref_upper > self.alt_ref_lower:
            raise ValueError(
                f"alt_ref_upper ({self.alt_ref_upper}) must exceed alt_ref_lower ({self.alt_ref_lower})"
            )
        if not (self.lat_max > self.lat_min and self.lon_max > self.lon_min):
            raise ValueError("Lat/lon box must have positive extent")
        _utm_transformers(self.utm_zone)

    def to_utm(self, lon: ArrayLike, lat: ArrayLike) -> Tuple[np.ndarray, np.ndarray]:
        forward, _ = _utm_transformers(self.utm_zone)
        east, north = forward.transform(np.asarray(lon, dtype=np.float64), np.asarray(lat, dtype=np.float64))
        return np.asarray(east), np.asarray(north)

    def from_utm(self, east: ArrayLike, north: ArrayLike) -> Tuple[np.ndarray, np.ndarray]:
        _, inverse = _utm_transformers(self.utm_zone)
        lon, lat = inverse.transform(np.asarray(east, dtype=np.float64), np.asarray(north, dtype=np.float64))
        return np.asarray(lon), np.asarray(lat)

    @cached_property
    def utm_box(self) -> Tuple[float, float, float, float]:
        """(east_min, east_max, north_min, north_max) enclosing the lat/lon box."""
        lons = np.array([self.lon_min, self.lon_max, self.lon_min, self.lon_max,
                         0.5 * (self.lon_min + self.lon_max), 0.5 * (self.lon_min + self.lon_max)])
        lats = np.array([self.lat_min, self.lat_min, self.lat_max, self.lat_max,
                         self.lat_min, self.lat_max])
        east, north = self.to_utm(lons, lats)
        return float(east.min()), float(east.max()), float(north.min()), float(north.max())

    @property
    def _center_scale(self) -> Tuple[np.ndarray, np.ndarray]:
        e0, e1, n0, n1 = self.utm_box
        lo = np.array([e0, n0, self.alt_ref_lower])
        hi = np.array([e1, n1, self.alt_ref_upper])
        return 0.5 * (lo + hi), 0.5 * (hi - lo)

    def utm_to_canonical(self, east: ArrayLike, north: ArrayLike, alt: ArrayLike, check: bool = False) -> np.ndarray:
        center, half = self._center_scale
        utm = np.stack(np.broadcast_arrays(
            np.asarray(east, dtype=np.float64),
            np.asarray(north, dtype=np.float64),
            np.asarray(alt, dtype=np.float64),
        ), axis=-1)
        canonical = (utm - center) / half
        if check and np.any(np.abs(canonical) > 1.0 + self.margin):
            raise OutOfDomainError(
                f"Point outside the scene box (max canonical |x| = {float(np.max(np.abs(canonical))):.4f})"
            )
        return canonical

    def canonical_to_utm(self, xyz: np.ndarray) -> np.ndarray:
        """Inverse canonical transform; returns (..., 3) easting, northing, altitude."""
        center, half = self._center_scale
        return np.asarray(xyz, dtype=np.float64) * half + center

    def canonical_scale(self) -> np.ndarray:
        """Meters per canonical unit along each axis."""
        return self._center_scale[1].copy()

    def canonicalize(self, lon: ArrayLike, lat: ArrayLike, alt: ArrayLike, check: bool = True) -> np.ndarray:
        """
        Map geographic points into canonical space.

        Args:
            lon, lat: Degrees
            alt: Meters
            check: Raise OutOfDomainError beyond the margin

        Returns:
            np.ndarray: (..., 3) canonical coordinates
        """
        east, north = self.to_utm(lon, lat)
        return self.utm_to_canonical(east, north, alt, check=check)

    def uncanonicalize(self, xyz: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Inverse of canonicalize: returns (lon, lat, alt)."""
        utm = self.canonical_to_utm(xyz)
        lon, lat = self.from_utm(utm[..., 0], utm[..., 1])
        return lon, lat, utm[..., 2]


def make_rays(
    model: RpcModel,
    u: ArrayLike,
    v: ArrayLike,
    bounds: SceneBounds
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Build canonical rays from the upper to the lower reference plane.

    Args:
        model: RPC model of the image
        u, v: Pixel coordinates (line, sample), arrays of equal shape
        bounds: Scene bounds

    Returns:
        Tuple: (origins (...,3), directions (...,3), t_far (...))

    Raises:
        NoConvergenceError, DegenerateJacobianError: From localize
    """
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    lon_top, lat_top = localize(model, u, v, np.full(u.shape, bounds.alt_ref_upper))
    lon_bot, lat_bot = localize(model, u, v, np.full(u.shape, bounds.alt_ref_lower))

    # Ray endpoints may leave the lat/lon box for oblique views; no domain check here
    top = bounds.canonicalize(lon_top, lat_top, bounds.alt_ref_upper, check=False)
    bottom = bounds.canonicalize(lon_bot, lat_bot, bounds.alt_ref_lower, check=False)
    delta = bottom - top
    t_far = np.linalg.norm(delta, axis=-1)
    directions = delta / t_far[..., None]
    return top, directions, t_far


def make_ray(model: RpcModel, u: float, v: float, bounds: SceneBounds) -> Ray:
    """Single-pixel version of make_rays returning a Ray."""
    origin, direction, t_far = make_rays(model, np.array([u]), np.array([v]), bounds)
    return Ray(origin=origin[0], direction=direction[0], t_near=0.0, t_far=float(t_far[0]))


def sun_direction(azimuth_deg: float, elevation_deg: float) -> np.ndarray:
    """Unit vector pointing towards the sun in the local east/north/up frame."""
    az = np.deg2rad(azimuth_deg)
    el = np.deg2rad(elevation_deg)
    return np.array([np.sin(az) * np.cos(el), np.cos(az) * np.cos(el), np.sin(el)])
