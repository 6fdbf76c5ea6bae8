"""Dataset manifest: scene bounds plus per-image RPC, image, sun and prior paths."""

import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import numpy as np
import yaml

from core.errors import DatasetError
from core.rpc_camera import SceneBounds
from core.types import RpcModel, SparseObservation
from .formats import read_image, read_mask, read_pfm, read_rpc, read_sparse_csv


logger = logging.getLogger(__name__)

BOUNDS_KEYS = ['lat_min', 'lat_max', 'lon_min', 'lon_max', 'alt_ref_lower', 'alt_ref_upper', 'utm_zone']


@dataclass
class ImageRecord:
    """One view of the dataset; paths are absolute."""
    image_id: str
    image_path: Path
    rpc_path: Path
    sun_azimuth: float
    sun_elevation: float
    mask_path: Optional[Path] = None
    depth_path: Optional[Path] = None
    sparse_path: Optional[Path] = None

    @cached_property
    def rpc(self) -> RpcModel:
        return read_rpc(self.rpc_path)

    def load_image(self) -> np.ndarray:
        return read_image(self.image_path)

    def load_mask(self, shape) -> np.ndarray:
        if self.mask_path is None:
            return np.ones(shape, dtype=bool)
        mask = read_mask(self.mask_path)
        if mask.shape != tuple(shape):
            raise DatasetError(f"Mask {self.mask_path} has shape {mask.shape}, expected {tuple(shape)}")
        return mask

    def load_relative_depth(self) -> Optional[np.ndarray]:
        return None if self.depth_path is None else read_pfm(self.depth_path)

    def load_sparse(self) -> List[SparseObservation]:
        return [] if self.sparse_path is None else read_sparse_csv(self.sparse_path, self.image_id)


@dataclass
class DatasetManifest:
    """Parsed dataset manifest."""
    root: Path
    scene: str
    bounds: SceneBounds
    images: List[ImageRecord] = field(default_factory=list)
    gt_dsm: Optional[Path] = None

    def image(self, image_id: str) -> ImageRecord:
        for record in self.images:
            if record.image_id == image_id:
                return record
        raise KeyError(image_id)


def _resolve(root: Path, value: Optional[str]) -> Optional[Path]:
    if value is None:
        return None
    path = Path(value)
    return path if path.is_absolute() else root / path


def load_manifest(path: Union[str, Path]) -> DatasetManifest:
    """
    Load a YAML dataset manifest.

    Args:
        path: Manifest path; relative file paths inside resolve against its directory

    Returns:
        DatasetManifest: Parsed manifest

    Raises:
        DatasetError: If the file is missing or a required key is absent
    """
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"Manifest not found: {path}")
    with open(path, 'r', encoding='utf-8') as f:
        raw = yaml.safe_load(f) or {}

    root = path.parent.resolve()
    bounds_raw = raw.get('bounds')
    if not isinstance(bounds_raw, dict):
        raise DatasetError(f"{path}: missing 'bounds' section")
    missing = [k for k in BOUNDS_KEYS if k not in bounds_raw]
    if missing:
        raise DatasetError(f"{path}: bounds missing keys {missing}")
    try:
        bounds = SceneBounds(**{k: bounds_raw[k] for k in BOUNDS_KEYS})
    except ValueError as e:
        raise DatasetError(f"{path}: invalid bounds: {e}") from e

    images = []
    for i, entry in enumerate(raw.get('images') or []):
        for key in ('id', 'image', 'rpc', 'sun_azimuth', 'sun_elevation'):
            if key not in entry:
                raise DatasetError(f"{path}: images[{i}] missing '{key}'")
        images.append(ImageRecord(
            image_id=str(entry['id']),
            image_path=_resolve(root, entry['image']),
            rpc_path=_resolve(root, entry['rpc']),
            sun_azimuth=float(entry['sun_azimuth']),
            sun_elevation=float(entry['sun_elevation']),
            mask_path=_resolve(root, entry.get('mask')),
            depth_path=_resolve(root, entry.get('depth')),
            sparse_path=_resolve(root, entry.get('sparse')),
        ))

    logger.info(f"Loaded manifest {path}: {len(images)} images, scene '{raw.get('scene', path.stem)}'")
    return DatasetManifest(
        root=root,
        scene=str(raw.get('scene', path.stem)),
        bounds=bounds,
        images=images,
        gt_dsm=_resolve(root, raw.get('gt_dsm')),
    )


def write_manifest(path: Union[str, Path], scene: str, bounds: SceneBounds,
                   images: List[Dict[str, Any]], gt_dsm: Optional[str] = None) -> None:
    """Write a manifest; image entries use paths relative to the manifest directory."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    document = {
        'scene': scene,
        'bounds': {k: (bounds.utm_zone if k == 'utm_zone' else float(getattr(bounds, k))) for k in BOUNDS_KEYS},
        'images': images,
    }
    if gt_dsm is not None:
        document['gt_dsm'] = gt_dsm
    with open(path, 'w', encoding='utf-8') as f:
        yaml.safe_dump(document, f, sort_keys=False)
