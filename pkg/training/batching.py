"""Memory-resident per-image ray tables and random ray batches with 4-neighbour rays."""

import logging
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional

import numpy as np
import torch

from core.errors import EmptyDatasetError
from core.priors import NEIGHBOURS
from core.rpc_camera import SceneBounds, make_rays, sun_direction
from storage.dataset import DatasetManifest, ImageRecord
from storage.formats import read_mask, read_pfm


logger = logging.getLogger(__name__)


@dataclass
class ImageRays:
    """Rays and supervision of every pixel of one image, row = line, column = sample."""
    image_id: str
    colors: np.ndarray         # H x W x 3
    origins: np.ndarray        # H x W x 3
    directions: np.ndarray     # H x W x 3
    t_far: np.ndarray          # H x W
    sun: np.ndarray            # 3, canonical frame
    depth: np.ndarray          # H x W, 0 where unsupervised
    depth_mask: np.ndarray     # H x W bool
    consistency: np.ndarray    # H x W
    normal_mask: np.ndarray    # H x W bool

    @property
    def shape(self):
        return self.colors.shape[:2]

    @property
    def interior_count(self) -> int:
        h, w = self.shape
        return max(h - 2, 0) * max(w - 2, 0)


@dataclass
class RayBatch:
    """One training batch; neighbour rays feed only the normal loss."""
    origins: torch.Tensor                 # B x 3
    directions: torch.Tensor              # B x 3
    t_far: torch.Tensor                   # B
    neighbour_origins: torch.Tensor       # B x 4 x 3
    neighbour_directions: torch.Tensor    # B x 4 x 3
    colors: torch.Tensor                  # B x 3
    depth: torch.Tensor                   # B
    depth_mask: torch.Tensor              # B bool
    consistency: torch.Tensor             # B
    normal_mask: torch.Tensor             # B bool
    sun: torch.Tensor                     # B x 3
    image_index: np.ndarray               # B
    pixels: np.ndarray                    # B x 2 (row, col)

    def __len__(self) -> int:
        return self.origins.shape[0]


def canonical_sun(bounds: SceneBounds, azimuth: float, elevation: float) -> np.ndarray:
    """Sun direction mapped into the anisotropically scaled canonical frame."""
    direction = sun_direction(azimuth, elevation) / bounds.canonical_scale()
    return direction / np.linalg.norm(direction)


def image_rays(record: ImageRecord, bounds: SceneBounds, fused_dir: Optional[Path] = None) -> ImageRays:
    """
    Precompute rays and targets for every pixel of one image.

    Fused depth, its mask and the consistency map are read from fused_dir
    (<id>.pfm, <id>_mask.png, <id>_consistency.pfm) when present.
    """
    colors = record.load_image()
    h, w = colors.shape[:2]
    rows, cols = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing='ij')
    origins, directions, t_far = make_rays(record.rpc, rows, cols, bounds)

    depth = np.zeros((h, w))
    depth_mask = np.zeros((h, w), dtype=bool)
    consistency = np.zeros((h, w))
    normal_mask = np.zeros((h, w), dtype=bool)

    if fused_dir is not None and (Path(fused_dir) / f"{record.image_id}.pfm").exists():
        fused_dir = Path(fused_dir)
        absolute = read_pfm(fused_dir / f"{record.image_id}.pfm")
        mask_path = fused_dir / f"{record.image_id}_mask.png"
        usable = read_mask(mask_path) if mask_path.exists() else record.load_mask((h, w))
        usable &= np.isfinite(absolute)
        depth = np.where(usable, absolute, 0.0)
        depth_mask = usable
        consistency_path = fused_dir / f"{record.image_id}_consistency.pfm"
        if consistency_path.exists():
            consistency = read_pfm(consistency_path)
            normal_mask = np.isfinite(consistency)
            consistency = np.where(normal_mask, consistency, 0.0)
    else:
        logger.warning(f"{record.image_id}: no fused depth found, color supervision only")

    return ImageRays(
        image_id=record.image_id,
        colors=colors,
        origins=origins,
        directions=directions,
        t_far=t_far,
        sun=canonical_sun(bounds, record.sun_azimuth, record.sun_elevation),
        depth=depth,
        depth_mask=depth_mask,
        consistency=consistency,
        normal_mask=normal_mask,
    )


class TrainingData:
    """All images' ray tables, sampled uniformly over interior pixels."""

    def __init__(self, images: List[ImageRays], dtype: torch.dtype = torch.float32):
        self.images = images
        self.dtype = dtype
        if not any(image.depth_mask.any() for image in images):
            raise EmptyDatasetError("No image carries fused depth supervision")
        counts = np.array([image.interior_count for image in images], dtype=np.int64)
        if counts.sum() == 0:
            raise EmptyDatasetError("No image has interior pixels")
        self._offsets = np.concatenate([[0], np.cumsum(counts)])

    @classmethod
    def from_manifest(cls, manifest: DatasetManifest, fused_dir: Optional[Path] = None,
                      dtype: torch.dtype = torch.float32) -> 'TrainingData':
        images = [image_rays(record, manifest.bounds, fused_dir) for record in manifest.images]
        logger.info(f"Loaded {len(images)} image(s), {sum(i.interior_count for i in images)} interior pixels")
        return cls(images, dtype)

    @property
    def pixel_count(self) -> int:
        return int(self._offsets[-1])

    def locate(self, flat: np.ndarray):
        """Map flat interior-pixel indices to (image index, row, col)."""
        image_index = np.searchsorted(self._offsets, flat, side='right') - 1
        local = flat - self._offsets[image_index]
        widths = np.array([image.shape[1] - 2 for image in self.images])[image_index]
        return image_index, 1 + local // widths, 1 + local % widths


def build_batch(data: TrainingData, rng: np.random.Generator, batch_rays: int) -> RayBatch:
    """
    Draw batch_rays interior pixels uniformly over all images and attach
    their rays, 4-neighbour rays and targets.
    """
    if batch_rays <= 0:
        raise ValueError("batch_rays must be > 0")
    image_index, rows, cols = data.locate(rng.integers(0, data.pixel_count, size=batch_rays))

    b = batch_rays
    n = len(NEIGHBOURS)
    origins, directions = np.empty((b, 3)), np.empty((b, 3))
    n_origins, n_directions = np.empty((b, n, 3)), np.empty((b, n, 3))
    t_far, colors, sun = np.empty(b), np.empty((b, 3)), np.empty((b, 3))
    depth, consistency = np.empty(b), np.empty(b)
    depth_mask, normal_mask = np.empty(b, dtype=bool), np.empty(b, dtype=bool)

    for i in np.unique(image_index):
        image = data.images[i]
        pick = np.flatnonzero(image_index == i)
        r, c = rows[pick], cols[pick]
        origins[pick] = image.origins[r, c]
        directions[pick] = image.directions[r, c]
        t_far[pick] = image.t_far[r, c]
        colors[pick] = image.colors[r, c]
        sun[pick] = image.sun
        depth[pick] = image.depth[r, c]
        depth_mask[pick] = image.depth_mask[r, c]
        consistency[pick] = image.consistency[r, c]
        normal_mask[pick] = image.normal_mask[r, c]
        for k, (dr, dc) in enumerate(NEIGHBOURS):
            n_origins[pick, k] = image.origins[r + dr, c + dc]
            n_directions[pick, k] = image.directions[r + dr, c + dc]

    def tensor(array):
        return torch.from_numpy(array).to(data.dtype)

    return RayBatch(
        origins=tensor(origins),
        directions=tensor(directions),
        t_far=tensor(t_far),
        neighbour_origins=tensor(n_origins),
        neighbour_directions=tensor(n_directions),
        colors=tensor(colors),
        depth=tensor(depth),
        depth_mask=torch.from_numpy(depth_mask),
        consistency=tensor(consistency),
        normal_mask=torch.from_numpy(normal_mask),
        sun=tensor(sun),
        image_index=image_index,
        pixels=np.stack([rows, cols], axis=-1),
    )
