"""Multi-resolution hash feature grid with progressive level gating and frequency embedding."""

import logging
import math
from dataclasses import dataclass
from typing import Optional

import torch
import torch.nn as nn


logger = logging.getLogger(__name__)

PRIME_Y = 2654435761
PRIME_Z = 805459861
TABLE_INIT_RANGE = 1e-4

# 8 cell corners as (dx, dy, dz) offsets
_CORNERS = torch.tensor(
    [[i & 1, (i >> 1) & 1, (i >> 2) & 1] for i in range(8)], dtype=torch.long
)


@dataclass(frozen=True)
class HashGridConfig:
    """Hash grid hyper-parameters; resolutions count grid vertices per axis."""
    levels: int = 24
    base_resolution: int = 16
    max_resolution: int = 2048
    table_log2: int = 19
    feature_dim: int = 2

    def __post_init__(self):
        if self.levels < 1:
            raise ValueError("levels must be >= 1")
        if self.base_resolution < 1:
            raise ValueError("base_resolution must be >= 1")
        if self.max_resolution < self.base_resolution:
            raise ValueError("max_resolution must be >= base_resolution")
        if self.table_log2 < 0:
            raise ValueError("table_log2 must be >= 0")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be >= 1")

    @property
    def table_size(self) -> int:
        return 1 << self.table_log2

    @property
    def growth(self) -> float:
        if self.levels == 1:
            return 1.0
        return math.exp((math.log(self.max_resolution) - math.log(self.base_resolution)) / (self.levels - 1))

    def resolution(self, level: int) -> int:
        """Vertices per axis at a 0-based level: floor(N_min * b^level)."""
        # 1e-9 absorbs rounding so the finest level lands exactly on max_resolution
        return int(math.floor(self.base_resolution * self.growth ** level + 1e-9))

    def is_dense(self, level: int) -> bool:
        return self.resolution(level) ** 3 <= self.table_size

    @property
    def output_dim(self) -> int:
        return self.levels * self.feature_dim


def hash_index(level: int, cell: torch.Tensor, config: HashGridConfig) -> torch.Tensor:
    """
    Map integer grid cells to table indices.

    Dense row-major indexing is used when the level's grid fits in the table,
    otherwise the XOR-prime spatial hash modulo the table size.

    Args:
        level: 0-based level index
        cell: Integer tensor (..., 3) of vertex coordinates
        config: Hash grid configuration

    Returns:
        torch.Tensor: Long tensor (...) of table indices
    """
    if not 0 <= level < config.levels:
        raise IndexError(f"level {level} outside [0, {config.levels})")
    cell = cell.long()
    x, y, z = cell[..., 0], cell[..., 1], cell[..., 2]
    if config.is_dense(level):
        n = config.resolution(level)
        return x + y * n + z * n * n
    hashed = x ^ (y * PRIME_Y) ^ (z * PRIME_Z)
    return hashed & (config.table_size - 1)


class FrequencyEmbedding:
    """Sine/cosine positional embedding: [v, sin(2^k pi v), cos(2^k pi v), ...]."""

    def __init__(self, num_bands: int, include_input: bool = True):
        if num_bands < 0:
            raise ValueError("num_bands must be >= 0")
        self.num_bands = num_bands
        self.include_input = include_input

    def output_dim(self, input_dim: int) -> int:
        return input_dim * (2 * self.num_bands + int(self.include_input))

    def __call__(self, v: torch.Tensor) -> torch.Tensor:
        return embed_frequency(v, self.num_bands, self.include_input)


def embed_frequency(v: torch.Tensor, num_bands: int, include_input: bool = True) -> torch.Tensor:
    parts = [v] if include_input else []
    for k in range(num_bands):
        scaled = (2.0 ** k) * math.pi * v
        parts.append(torch.sin(scaled))
        parts.append(torch.cos(scaled))
    return torch.cat(parts, dim=-1)


class HashGridEncoder(nn.Module):
    """
    Multi-resolution hash grid.

    Level i (1-based) contributes only when the gating level lambda >= i. Gated-off
    levels are never looked up, so their outputs are exact zeros and their table
    rows receive exactly zero gradient.
    """

    def __init__(self, config: HashGridConfig, generator: Optional[torch.Generator] = None,
                 dtype: torch.dtype = torch.float32):
        super().__init__()
        self.config = config
        table = torch.empty(config.levels, config.table_size, config.feature_dim, dtype=dtype)
        table.uniform_(-TABLE_INIT_RANGE, TABLE_INIT_RANGE, generator=generator)
        self.table = nn.Parameter(table)
        self._warned_clamp = False

    @property
    def output_dim(self) -> int:
        return self.config.output_dim

    def active_levels(self, lam: float) -> int:
        """Number of active levels: G_i(lambda) = 1 iff lambda >= i."""
        return max(0, min(self.config.levels, int(math.floor(lam))))

    def finest_active_resolution(self, lam: float) -> int:
        return self.config.resolution(max(self.active_levels(lam), 1) - 1)

    def _clamp(self, x: torch.Tensor) -> torch.Tensor:
        outside = (x.abs() > 1.0).any(dim=-1)
        if outside.any():
            count = int(outside.sum())
            message = f"Clamping {count} point(s) outside [-1, 1]^3 before hash encoding"
            if not self._warned_clamp:
                logger.warning(message)
                self._warned_clamp = True
            else:
                logger.debug(message)
            x = x.clamp(-1.0, 1.0)
        return x

    def encode_level(self, x: torch.Tensor, level: int) -> torch.Tensor:
        """Trilinearly interpolated features of one 0-based level for points in [-1, 1]^3."""
        n = self.config.resolution(level)
        pos = (x + 1.0) * 0.5 * (n - 1)
        base = torch.floor(pos).clamp(0, max(n - 2, 0))
        frac = pos - base
        base = base.long()

        corners = (base[:, None, :] + _CORNERS.to(x.device)[None]).clamp(max=n - 1)   # B x 8 x 3
        indices = hash_index(level, corners, self.config)                              # B x 8
        features = self.table[level][indices]                                          # B x 8 x F

        offsets = _CORNERS.to(x.device, x.dtype)[None]                                 # 1 x 8 x 3
        weights = torch.where(offsets > 0, frac[:, None, :], 1.0 - frac[:, None, :]).prod(dim=-1)
        return (weights[..., None] * features).sum(dim=1)

    def forward(self, x: torch.Tensor, lam: float) -> torch.Tensor:
        """
        Encode points.

        Args:
            x: (B, 3) canonical points
            lam: Gating level lambda

        Returns:
            torch.Tensor: (B, L*F) features, gated-off slots zero
        """
        x = self._clamp(x)
        active = self.active_levels(lam)
        parts = [self.encode_level(x, level) for level in range(active)]
        missing = self.config.levels - active
        if missing:
            parts.append(x.new_zeros(x.shape[0], missing * self.config.feature_dim))
        return torch.cat(parts, dim=-1)

    @torch.no_grad()
    def mask_inactive_gradients(self, lam: float) -> None:
        """Zero table gradients of gated-off levels."""
        if self.table.grad is not None:
            self.table.grad[self.active_levels(lam):] = 0.0
