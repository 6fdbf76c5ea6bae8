"""Learnable signed-distance and color field over a hash-grid encoding."""

import logging
import math
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import torch
import torch.nn as nn

from core.errors import NonFiniteError
from .hash_encoding import FrequencyEmbedding, HashGridConfig, HashGridEncoder


logger = logging.getLogger(__name__)

DTYPES = {'float32': torch.float32, 'float64': torch.float64}


@dataclass(frozen=True)
class FieldConfig:
    """MLP and bandwidth settings of the field."""
    hidden_width: int = 64
    feature_dim: int = 256
    point_bands: int = 6
    direction_bands: int = 4
    softplus_beta: float = 100.0
    init_bandwidth: float = 0.3   # logistic transition width, canonical units
    dtype: str = 'float32'

    def __post_init__(self):
        if self.hidden_width < 1 or self.feature_dim < 1:
            raise ValueError("hidden_width and feature_dim must be >= 1")
        if self.init_bandwidth <= 0:
            raise ValueError("init_bandwidth must be > 0")
        if self.dtype not in DTYPES:
            raise ValueError(f"dtype must be one of {sorted(DTYPES)}")

    @property
    def torch_dtype(self) -> torch.dtype:
        return DTYPES[self.dtype]


@dataclass
class FieldSample:
    """Field outputs at a batch of points."""
    sdf: torch.Tensor          # (B,)
    feature: torch.Tensor      # (B, feature_dim)
    color: torch.Tensor        # (B, 3) in [0, 1]
    gradient: torch.Tensor     # (B, 3), raw (unnormalized) SDF gradient


def check_finite(name: str, tensor: torch.Tensor) -> None:
    if not torch.isfinite(tensor).all():
        raise NonFiniteError(f"Non-finite values in {name}")


class SdfField(nn.Module):
    """
    SDF head plus color head.

    The SDF is f(x) = g(h(x)) + n0 . x - o0 where g is the SDF MLP over the hash
    and frequency encodings and (n0, o0) is a fixed plane stored as buffers. The
    last SDF output row starts at zero, so at initialization the zero level set
    is the plane n0 . x = o0 (horizontal by default).
    """

    def __init__(self, grid: HashGridConfig, config: FieldConfig, seed: int = 0):
        super().__init__()
        self.grid_config = grid
        self.config = config
        dtype = config.torch_dtype
        width = config.hidden_width

        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(seed)
            generator = torch.Generator().manual_seed(seed)
            self.encoder = HashGridEncoder(grid, generator=generator, dtype=dtype)
            self.point_embedding = FrequencyEmbedding(config.point_bands)
            self.direction_embedding = FrequencyEmbedding(config.direction_bands)

            sdf_in = self.encoder.output_dim + self.point_embedding.output_dim(3)
            self.sdf_mlp = nn.Sequential(
                nn.Linear(sdf_in, width),
                nn.Softplus(beta=config.softplus_beta),
                nn.Linear(width, width),
                nn.Softplus(beta=config.softplus_beta),
                nn.Linear(width, 1 + config.feature_dim),
            ).to(dtype)

            color_in = 3 + 3 + config.feature_dim + 2 * self.direction_embedding.output_dim(3)
            self.color_mlp = nn.Sequential(
                nn.Linear(color_in, width),
                nn.ReLU(),
                nn.Linear(width, width),
                nn.ReLU(),
                nn.Linear(width, 3),
            ).to(dtype)

        with torch.no_grad():
            self.sdf_mlp[-1].weight[0].zero_()
            self.sdf_mlp[-1].bias[0].zero_()
            self.color_mlp[-1].weight.zero_()
            self.color_mlp[-1].bias.zero_()

        self.log_bandwidth = nn.Parameter(torch.tensor(math.log(1.0 / config.init_bandwidth), dtype=dtype))
        self.register_buffer('plane_normal', torch.tensor([0.0, 0.0, 1.0], dtype=dtype))
        self.register_buffer('plane_offset', torch.tensor(0.0, dtype=dtype))

    @property
    def dtype(self) -> torch.dtype:
        return self.config.torch_dtype

    @property
    def bandwidth(self) -> torch.Tensor:
        """s = exp(log_bandwidth), positive by construction."""
        return torch.exp(self.log_bandwidth)

    @torch.no_grad()
    def set_plane(self, altitude: float, normal=(0.0, 0.0, 1.0)) -> None:
        """Place the initial zero level set on the plane normal . x = altitude (canonical units)."""
        normal = torch.as_tensor(normal, dtype=self.dtype)
        self.plane_normal.copy_(normal / normal.norm())
        self.plane_offset.fill_(float(altitude))
        logger.debug(f"Field plane set to normal {normal.tolist()} offset {altitude:.4f}")

    def parameter_groups(self) -> Dict[str, list]:
        """Parameters split by learning-rate group: hash, mlp, bandwidth."""
        return {
            'hash': [self.encoder.table],
            'mlp': list(self.sdf_mlp.parameters()) + list(self.color_mlp.parameters()),
            'bandwidth': [self.log_bandwidth],
        }

    def sdf(self, x: torch.Tensor, lam: float) -> Tuple[torch.Tensor, torch.Tensor]:
        """SDF values (B,) and intermediate features (B, feature_dim)."""
        h = torch.cat([self.encoder(x, lam), self.point_embedding(x)], dim=-1)
        out = self.sdf_mlp(h)
        value = out[:, 0] + x @ self.plane_normal - self.plane_offset
        return value, out[:, 1:]

    def gradient_step(self, lam: float) -> float:
        """Half the cell size of the finest active level, in canonical units."""
        n = self.encoder.finest_active_resolution(lam)
        return 1.0 / max(n - 1, 1)

    def spatial_gradient(self, x: torch.Tensor, lam: float, eps: Optional[float] = None) -> torch.Tensor:
        """
        Central-difference SDF gradient.

        Each of the 6 stencil evaluations is an ordinary forward pass, so the
        result is differentiable w.r.t. the parameters without double backward.

        Args:
            x: (B, 3) canonical points
            lam: Gating level
            eps: Stencil half-width; defaults to gradient_step(lam)

        Returns:
            torch.Tensor: (B, 3) gradient
        """
        eps = self.gradient_step(lam) if eps is None else eps
        x = x.clamp(-1.0 + eps, 1.0 - eps)
        offsets = torch.eye(3, dtype=x.dtype, device=x.device) * eps
        stencil = torch.cat([x[:, None, :] + offsets[None], x[:, None, :] - offsets[None]], dim=1)
        values, _ = self.sdf(stencil.reshape(-1, 3), lam)
        values = values.reshape(-1, 6)
        return (values[:, :3] - values[:, 3:]) / (2.0 * eps)

    def forward(self, x: torch.Tensor, d: torch.Tensor, sun: torch.Tensor, lam: float) -> FieldSample:
        """
        Evaluate SDF, gradient and color.

        Args:
            x: (B, 3) canonical points
            d: (B, 3) unit view directions
            sun: (B, 3) unit sun directions
            lam: Gating level

        Returns:
            FieldSample

        Raises:
            NonFiniteError: If an output is NaN or Inf
        """
        sdf, feature = self.sdf(x, lam)
        gradient = self.spatial_gradient(x, lam)
        color_in = torch.cat([
            x, gradient, feature, self.direction_embedding(d), self.direction_embedding(sun)
        ], dim=-1)
        color = torch.sigmoid(self.color_mlp(color_in))

        for name, tensor in (('sdf', sdf), ('gradient', gradient), ('color', color)):
            check_finite(name, tensor)
        return FieldSample(sdf=sdf, feature=feature, color=color, gradient=gradient)


def eval_field(field: SdfField, x: torch.Tensor, d: torch.Tensor, sun: torch.Tensor, lam: float) -> FieldSample:
    """Functional form of SdfField.forward."""
    return field(x, d, sun, lam)


def backprop(loss: torch.Tensor, field: nn.Module) -> Dict[str, torch.Tensor]:
    """
    Reverse-mode accumulation of a scalar loss into the field parameters.

    Returns:
        Dict[str, torch.Tensor]: Parameter name -> gradient

    Raises:
        NonFiniteError: If the loss or any gradient is NaN or Inf
    """
    check_finite('loss', loss)
    loss.backward()
    gradients = {}
    for name, param in field.named_parameters():
        if param.grad is None:
            continue
        check_finite(f"gradient of {name}", param.grad)
        gradients[name] = param.grad
    return gradients


def parameter_count(field: nn.Module) -> int:
    return sum(p.numel() for p in field.parameters())
