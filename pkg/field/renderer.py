"""SDF volume rendering: ray sampling, SDF-to-alpha conversion and compositing."""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Union

import numpy as np
import pandas as pd
import torch
import torch.nn.functional as F

from .neural_field import SdfField


logger = logging.getLogger(__name__)

PDF_PADDING = 1e-5


@dataclass(frozen=True)
class SamplingConfig:
    """Coarse stratified samples plus importance rounds with doubling bandwidth."""
    n_coarse: int = 64
    n_importance: int = 64
    up_sample_steps: int = 4
    base_inv_s: float = 64.0
    perturb: bool = True

    def __post_init__(self):
        if self.n_coarse < 2:
            raise ValueError("n_coarse must be >= 2")
        if self.n_importance < 0 or self.up_sample_steps < 0:
            raise ValueError("n_importance and up_sample_steps must be >= 0")
        if self.n_importance and (self.up_sample_steps == 0 or self.n_importance % self.up_sample_steps):
            raise ValueError("n_importance must be a positive multiple of up_sample_steps")

    @property
    def n_total(self) -> int:
        return self.n_coarse + self.n_importance


@dataclass
class RenderResult:
    color: torch.Tensor        # (B, 3)
    depth: torch.Tensor        # (B,), unnormalized sum of w_i t_i
    opacity: torch.Tensor      # (B,)
    weights: torch.Tensor      # (B, N)
    t: torch.Tensor            # (B, N)
    sdf: torch.Tensor          # (B, N)
    alpha: torch.Tensor        # (B, N)
    gradients: torch.Tensor    # (B, N, 3)
    normal: Optional[torch.Tensor] = None   # (B, 3) at o + depth * d


def alpha_from_sdf(f_i: torch.Tensor, f_next: torch.Tensor, s: torch.Tensor) -> torch.Tensor:
    """
    Discrete opacity between consecutive samples.

    alpha = max((Phi(f_i) - Phi(f_next)) / Phi(f_i), 0) with Phi the logistic of s*f,
    evaluated as -expm1(log Phi(f_next) - log Phi(f_i)) so that it stays finite when
    Phi(f_i) underflows.
    """
    log_ratio = F.logsigmoid(s * f_next) - F.logsigmoid(s * f_i)
    return torch.clamp(-torch.expm1(log_ratio), min=0.0)


def composite(alpha: torch.Tensor, colors: torch.Tensor, t: torch.Tensor):
    """
    Front-to-back compositing.

    Args:
        alpha: (B, N) opacities
        colors: (B, N, 3) sample colors
        t: (B, N) sample distances

    Returns:
        Tuple: (weights (B,N), color (B,3), depth (B,), opacity (B,))
    """
    ones = torch.ones_like(alpha[:, :1])
    transmittance = torch.cumprod(torch.cat([ones, 1.0 - alpha[:, :-1]], dim=-1), dim=-1)
    weights = transmittance * alpha
    color = (weights[..., None] * colors).sum(dim=1)
    depth = (weights * t).sum(dim=1)
    opacity = weights.sum(dim=1)
    return weights, color, depth, opacity


def sample_pdf(bins: torch.Tensor, weights: torch.Tensor, n_samples: int) -> torch.Tensor:
    """Deterministic inverse-CDF sampling of a piecewise-constant pdf over bins."""
    weights = weights + PDF_PADDING
    pdf = weights / weights.sum(dim=-1, keepdim=True)
    cdf = torch.cumsum(pdf, dim=-1)
    cdf = torch.cat([torch.zeros_like(cdf[..., :1]), cdf], dim=-1)

    u = torch.linspace(0.5 / n_samples, 1.0 - 0.5 / n_samples, n_samples, dtype=bins.dtype, device=bins.device)
    u = u.expand(cdf.shape[0], n_samples).contiguous()

    inds = torch.searchsorted(cdf, u, right=True)
    below = (inds - 1).clamp(min=0)
    above = inds.clamp(max=cdf.shape[-1] - 1)
    cdf_lo, cdf_hi = cdf.gather(1, below), cdf.gather(1, above)
    bin_lo, bin_hi = bins.gather(1, below), bins.gather(1, above)

    denom = cdf_hi - cdf_lo
    denom = torch.where(denom < PDF_PADDING, torch.ones_like(denom), denom)
    return bin_lo + (u - cdf_lo) / denom * (bin_hi - bin_lo)


def up_sample(t: torch.Tensor, sdf: torch.Tensor, n_samples: int, inv_s: float) -> torch.Tensor:
    """New sample distances drawn where a fixed-bandwidth estimate of the weights is large."""
    prev_sdf, next_sdf = sdf[:, :-1], sdf[:, 1:]
    prev_t, next_t = t[:, :-1], t[:, 1:]
    mid_sdf = 0.5 * (prev_sdf + next_sdf)
    dist = next_t - prev_t

    slope = (next_sdf - prev_sdf) / (dist + 1e-5)
    prev_slope = torch.cat([torch.zeros_like(slope[:, :1]), slope[:, :-1]], dim=-1)
    slope = torch.minimum(prev_slope, slope).clamp(-1e3, 0.0)

    prev_cdf = torch.sigmoid((mid_sdf - slope * dist * 0.5) * inv_s)
    next_cdf = torch.sigmoid((mid_sdf + slope * dist * 0.5) * inv_s)
    alpha = (prev_cdf - next_cdf + 1e-5) / (prev_cdf + 1e-5)
    ones = torch.ones_like(alpha[:, :1])
    weights = alpha * torch.cumprod(torch.cat([ones, 1.0 - alpha + 1e-7], dim=-1), dim=-1)[:, :-1]
    return sample_pdf(t, weights, n_samples)


def stratified_samples(t_near: torch.Tensor, t_far: torch.Tensor, n: int,
                       generator: Optional[torch.Generator] = None) -> torch.Tensor:
    """One sample per equal stratum of [t_near, t_far]; stratum centers when generator is None."""
    edges = torch.arange(n, dtype=t_far.dtype, device=t_far.device) / n
    if generator is None:
        jitter = torch.full((t_far.shape[0], n), 0.5, dtype=t_far.dtype)
    else:
        jitter = torch.rand((t_far.shape[0], n), generator=generator, dtype=t_far.dtype)
    fraction = edges[None, :] + jitter / n
    return t_near[:, None] + fraction * (t_far - t_near)[:, None]


@torch.no_grad()
def sample_ray(field: SdfField, origins: torch.Tensor, directions: torch.Tensor,
               t_near: torch.Tensor, t_far: torch.Tensor, lam: float,
               config: SamplingConfig, generator: Optional[torch.Generator] = None) -> torch.Tensor:
    """
    Sample distances along rays: stratified coarse samples, then importance
    rounds with doubling bandwidth, merged and sorted.

    Returns:
        torch.Tensor: (B, n_total) sorted t values, detached
    """
    t = stratified_samples(t_near, t_far, config.n_coarse, generator if config.perturb else None)
    if config.n_importance == 0:
        return t

    def sdf_at(t_values):
        points = origins[:, None, :] + directions[:, None, :] * t_values[..., None]
        values, _ = field.sdf(points.reshape(-1, 3), lam)
        return values.reshape(t_values.shape)

    sdf = sdf_at(t)
    per_step = config.n_importance // config.up_sample_steps
    for step in range(config.up_sample_steps):
        new_t = up_sample(t, sdf, per_step, config.base_inv_s * 2 ** step)
        t, order = torch.sort(torch.cat([t, new_t], dim=-1), dim=-1)
        if step + 1 < config.up_sample_steps:
            sdf = torch.cat([sdf, sdf_at(new_t)], dim=-1).gather(1, order)
    return t


def render_rays(field: SdfField, origins: torch.Tensor, directions: torch.Tensor,
                t_far: torch.Tensor, sun: torch.Tensor, lam: float, config: SamplingConfig,
                generator: Optional[torch.Generator] = None, t_samples: Optional[torch.Tensor] = None,
                compute_normal: bool = False) -> RenderResult:
    """
    Render a batch of rays.

    Args:
        field: SDF field
        origins: (B, 3) ray origins on the upper reference plane
        directions: (B, 3) unit directions
        t_far: (B,) distance to the lower reference plane
        sun: (B, 3) unit sun directions
        lam: Gating level
        config: Sampling configuration
        generator: RNG for stratified jitter
        t_samples: Optional fixed (B, N) sample distances, bypassing sample_ray
        compute_normal: Also evaluate the gradient at o + depth * d

    Returns:
        RenderResult
    """
    if t_samples is None:
        t_near = torch.zeros_like(t_far)
        t_samples = sample_ray(field, origins, directions, t_near, t_far, lam, config, generator)
    batch, n = t_samples.shape

    points = origins[:, None, :] + directions[:, None, :] * t_samples[..., None]
    dirs = directions[:, None, :].expand(batch, n, 3)
    suns = sun[:, None, :].expand(batch, n, 3)
    sample = field(points.reshape(-1, 3), dirs.reshape(-1, 3), suns.reshape(-1, 3), lam)

    sdf = sample.sdf.reshape(batch, n)
    colors = sample.color.reshape(batch, n, 3)
    alpha = alpha_from_sdf(sdf[:, :-1], sdf[:, 1:], field.bandwidth)
    alpha = torch.cat([alpha, torch.zeros_like(alpha[:, :1])], dim=-1)
    weights, color, depth, opacity = composite(alpha, colors, t_samples)

    normal = None
    if compute_normal:
        normal = field.spatial_gradient(origins + depth[:, None] * directions, lam)

    return RenderResult(
        color=color, depth=depth, opacity=opacity, weights=weights, t=t_samples,
        sdf=sdf, alpha=alpha, gradients=sample.gradient.reshape(batch, n, 3), normal=normal,
    )


def dump_rays(result: RenderResult, path: Union[str, Path], max_rays: int = 16) -> Path:
    """Write per-sample t, sdf, alpha and weight of the first rays as CSV."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rays = min(max_rays, result.t.shape[0])
    n = result.t.shape[1]

    def column(tensor):
        return tensor[:rays].detach().cpu().numpy().reshape(-1)

    frame = pd.DataFrame({
        'ray': np.repeat(np.arange(rays), n),
        'sample': np.tile(np.arange(n), rays),
        't': column(result.t),
        'sdf': column(result.sdf),
        'alpha': column(result.alpha),
        'weight': column(result.weights),
    })
    frame.to_csv(path, index=False, float_format='%.9g')
    logger.info(f"Dumped {rays} ray(s) to {path}")
    return path
