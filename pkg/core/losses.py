"""Training objectives: photometric, eikonal, fused-depth and normal-consistency losses."""

import logging
from dataclasses import dataclass
from typing import Tuple

import torch

from .errors import NonFiniteError


logger = logging.getLogger(__name__)

NORM_EPS = 1e-12


@dataclass(frozen=True)
class LossWeights:
    """Weights of the depth, normal and eikonal terms relative to the color term."""
    depth: float = 0.1
    normal: float = 0.1
    eikonal: float = 0.1

    def __post_init__(self):
        for name in ('depth', 'normal', 'eikonal'):
            if getattr(self, name) < 0:
                raise ValueError(f"loss weight '{name}' must be >= 0")


def color_loss(rendered: torch.Tensor, truth: torch.Tensor) -> torch.Tensor:
    """Mean over rays of the channel-summed absolute color error."""
    if rendered.shape != truth.shape:
        raise ValueError(f"color shapes differ: {tuple(rendered.shape)} vs {tuple(truth.shape)}")
    return (rendered - truth).abs().sum(dim=-1).mean()


def eikonal_loss(gradients: torch.Tensor) -> torch.Tensor:
    """Mean of (|grad f| - 1)^2 over every (ray, sample) pair."""
    norms = gradients.reshape(-1, 3).norm(dim=-1)
    return ((norms - 1.0) ** 2).mean()


def depth_loss(rendered: torch.Tensor, target: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """
    Masked L1 depth error divided by the full batch size.

    Masked rays contribute zero but still count in the denominator.
    """
    mask = mask.to(rendered.dtype)
    return (mask * (rendered - target).abs()).sum() / rendered.shape[0]


def cosine(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    a = a / a.norm(dim=-1, keepdim=True).clamp_min(NORM_EPS)
    b = b / b.norm(dim=-1, keepdim=True).clamp_min(NORM_EPS)
    return (a * b).sum(dim=-1)


def predicted_consistency(center: torch.Tensor, neighbours: torch.Tensor) -> torch.Tensor:
    """
    Mean cosine between center gradients (B, 3) and neighbour gradients (B, N, 3).

    Returns:
        torch.Tensor: (B,) consistency values
    """
    return cosine(center[:, None, :], neighbours).mean(dim=-1)


def consistency_loss(predicted: torch.Tensor, target: torch.Tensor,
                     keep: torch.Tensor) -> Tuple[torch.Tensor, int]:
    """Mean squared consistency error over kept pixels; zero when none is kept."""
    count = int(keep.sum())
    if count == 0:
        return predicted.new_zeros(()), 0
    return ((predicted[keep] - target[keep]) ** 2).sum() / count, count


def normal_loss(field, lam: float, origins: torch.Tensor, directions: torch.Tensor,
                neighbour_origins: torch.Tensor, neighbour_directions: torch.Tensor,
                depth: torch.Tensor, opacity: torch.Tensor, target: torch.Tensor,
                supervised: torch.Tensor, opacity_threshold: float = 0.5) -> Tuple[torch.Tensor, int]:
    """
    Normal angular-consistency loss.

    The center normal is the field gradient at o_i + t_i d_i; neighbour normals are
    taken at o_j + t_i d_j, reusing the center ray's rendered depth t_i. Pixels whose
    accumulated opacity does not exceed the threshold, or without a target, are skipped
    and do not count in the mean.

    Args:
        field: SdfField
        lam: Gating level
        origins, directions: (B, 3) center rays
        neighbour_origins, neighbour_directions: (B, N, 3) neighbour rays
        depth: (B,) rendered center depths
        opacity: (B,) accumulated center opacity
        target: (B,) consistency targets
        supervised: (B,) bool, pixel has a target
        opacity_threshold: Minimum opacity for supervision

    Returns:
        Tuple: (loss, number of contributing pixels)
    """
    keep = supervised & (opacity > opacity_threshold)
    if not keep.any():
        return depth.new_zeros(()), 0

    t = depth[keep]
    center = origins[keep] + t[:, None] * directions[keep]
    neighbours = neighbour_origins[keep] + t[:, None, None] * neighbour_directions[keep]
    n = neighbours.shape[1]

    points = torch.cat([center, neighbours.reshape(-1, 3)], dim=0)
    gradients = field.spatial_gradient(points, lam)
    center_grad = gradients[:center.shape[0]]
    neighbour_grad = gradients[center.shape[0]:].reshape(-1, n, 3)

    predicted = predicted_consistency(center_grad, neighbour_grad)
    return consistency_loss(predicted, target[keep], torch.ones_like(predicted, dtype=torch.bool))


def total_loss(color: torch.Tensor, depth: torch.Tensor, normal: torch.Tensor, eikonal: torch.Tensor,
               weights: LossWeights) -> torch.Tensor:
    """
    color + w_depth * depth + w_normal * normal + w_eikonal * eikonal.

    Raises:
        NonFiniteError: If any part is NaN or Inf
    """
    parts = {'color': color, 'depth': depth, 'normal': normal, 'eikonal': eikonal}
    for name, value in parts.items():
        if not torch.isfinite(torch.as_tensor(value)).all():
            raise NonFiniteError(f"{name} loss is not finite")
    return color + weights.depth * depth + weights.normal * normal + weights.eikonal * eikonal
