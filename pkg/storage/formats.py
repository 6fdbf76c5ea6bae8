"""File formats: RPC text, PFM, PNG, sparse-point CSV and ESRI ASCII grids."""

import logging
import re
from pathlib import Path
from typing import List, Union

import numpy as np
import pandas as pd
from PIL import Image

from core.errors import DatasetError
from core.types import Dsm, RpcModel, SparseObservation


logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

RPC_SCALARS = {
    'LINE_OFF': 'line_off', 'SAMP_OFF': 'samp_off', 'LAT_OFF': 'lat_off',
    'LONG_OFF': 'lon_off', 'HEIGHT_OFF': 'alt_off',
    'LINE_SCALE': 'line_scale', 'SAMP_SCALE': 'samp_scale', 'LAT_SCALE': 'lat_scale',
    'LONG_SCALE': 'lon_scale', 'HEIGHT_SCALE': 'alt_scale',
}
RPC_COEFFS = {
    'LINE_NUM_COEFF': 'line_num', 'LINE_DEN_COEFF': 'line_den',
    'SAMP_NUM_COEFF': 'samp_num', 'SAMP_DEN_COEFF': 'samp_den',
}
SPARSE_COLUMNS = ['u', 'v', 'lon', 'lat', 'alt', 'reproj_error']


# ---------------------------------------------------------------- RPC

def read_rpc(path: PathLike) -> RpcModel:
    """
    Read an RPC text file (one `KEY: value` per line, `=` also accepted).

    Raises:
        DatasetError: If the file is missing or a key is absent/invalid
    """
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"RPC file not found: {path}")

    scalars = {}
    coeffs = {name: [None] * 20 for name in RPC_COEFFS.values()}
    pattern = re.compile(r'^\s*([A-Z_]+?)(?:_(\d+))?\s*[:=]\s*([-+0-9.eE]+)')

    for line_no, line in enumerate(path.read_text(encoding='utf-8').splitlines(), 1):
        if not line.strip() or line.lstrip().startswith('#'):
            continue
        match = pattern.match(line)
        if not match:
            raise DatasetError(f"{path}:{line_no}: cannot parse '{line.strip()}'")
        key, index, value = match.groups()
        if key in RPC_SCALARS and index is None:
            scalars[RPC_SCALARS[key]] = float(value)
        elif key in RPC_COEFFS and index is not None:
            i = int(index)
            if not 1 <= i <= 20:
                raise DatasetError(f"{path}:{line_no}: coefficient index {i} out of range")
            coeffs[RPC_COEFFS[key]][i - 1] = float(value)
        else:
            logger.debug(f"{path}:{line_no}: ignoring key {key}")

    missing = [k for k, name in RPC_SCALARS.items() if name not in scalars]
    missing += [f"{k}_{i + 1}" for k, name in RPC_COEFFS.items()
                for i, c in enumerate(coeffs[name]) if c is None]
    if missing:
        raise DatasetError(f"{path}: missing RPC keys: {', '.join(missing[:5])}")

    try:
        return RpcModel(**{name: np.array(c) for name, c in coeffs.items()}, **scalars)
    except ValueError as e:
        raise DatasetError(f"{path}: {e}") from e


def write_rpc(model: RpcModel, path: PathLike) -> None:
    lines = [f"{key}: {getattr(model, name)!r}" for key, name in RPC_SCALARS.items()]
    for key, name in RPC_COEFFS.items():
        values = getattr(model, name)
        lines += [f"{key}_{i + 1}: {float(values[i])!r}" for i in range(20)]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text('\n'.join(lines) + '\n', encoding='utf-8')


# ---------------------------------------------------------------- PFM

def read_pfm(path: PathLike) -> np.ndarray:
    """Read a single-channel portable float map; returns H x W float64, row 0 at the top."""
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"PFM file not found: {path}")
    with open(path, 'rb') as f:
        header = f.readline().decode('ascii').strip()
        if header not in ('Pf', 'PF'):
            raise DatasetError(f"{path}: not a PFM file (header '{header}')")
        channels = 1 if header == 'Pf' else 3
        width, height = (int(x) for x in f.readline().decode('ascii').split())
        scale = float(f.readline().decode('ascii').strip())
        dtype = '<f4' if scale < 0 else '>f4'
        data = np.frombuffer(f.read(), dtype=dtype)
    expected = width * height * channels
    if data.size != expected:
        raise DatasetError(f"{path}: expected {expected} floats, found {data.size}")
    data = data.reshape(height, width, channels) if channels == 3 else data.reshape(height, width)
    # PFM stores rows bottom-to-top
    return np.flipud(data).astype(np.float64)


def write_pfm(array: np.ndarray, path: PathLike) -> None:
    """Write an H x W array as little-endian single-channel PFM."""
    array = np.asarray(array, dtype='<f4')
    if array.ndim != 2:
        raise ValueError(f"write_pfm expects a 2-D array, got shape {array.shape}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    height, width = array.shape
    with open(path, 'wb') as f:
        f.write(f"Pf\n{width} {height}\n-1.0\n".encode('ascii'))
        f.write(np.ascontiguousarray(np.flipud(array)).tobytes())


# ---------------------------------------------------------------- PNG

def read_image(path: PathLike) -> np.ndarray:
    """Read an 8-bit RGB image as H x W x 3 float64 in [0, 1]."""
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"Image not found: {path}")
    with Image.open(path) as img:
        return np.asarray(img.convert('RGB'), dtype=np.float64) / 255.0


def write_image(rgb: np.ndarray, path: PathLike) -> None:
    """Write an H x W x 3 array in [0, 1] as 8-bit PNG (linear tone map, clipped)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.clip(np.round(np.asarray(rgb) * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(data, mode='RGB').save(path, format='PNG', optimize=False)


def read_mask(path: PathLike) -> np.ndarray:
    """Read an 8-bit mask PNG; True where the pixel is valid (value > 127)."""
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"Mask not found: {path}")
    with Image.open(path) as img:
        return np.asarray(img.convert('L')) > 127


def write_mask(mask: np.ndarray, path: PathLike) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.where(mask, 255, 0).astype(np.uint8), mode='L').save(path, format='PNG')


# ---------------------------------------------------------------- sparse points

def read_sparse_csv(path: PathLike, image_id: str) -> List[SparseObservation]:
    """
    Read a sparse observation CSV (header: u,v,lon,lat,alt,reproj_error).

    Raises:
        DatasetError: If the file is missing or a column is absent
    """
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"Sparse CSV not found: {path}")
    frame = pd.read_csv(path)
    missing = [c for c in SPARSE_COLUMNS if c not in frame.columns]
    if missing:
        raise DatasetError(f"{path}: missing columns {missing}")
    if (frame['reproj_error'] < 0).any():
        raise DatasetError(f"{path}: negative reproj_error")
    return [
        SparseObservation(image_id=image_id, **{c: float(row[c]) for c in SPARSE_COLUMNS})
        for _, row in frame.iterrows()
    ]


def write_sparse_csv(observations: List[SparseObservation], path: PathLike) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(
        [[getattr(o, c) for c in SPARSE_COLUMNS] for o in observations],
        columns=SPARSE_COLUMNS,
    )
    frame.to_csv(path, index=False, float_format='%.12g')


# ---------------------------------------------------------------- ESRI ASCII grid

def write_asc(dsm: Dsm, path: PathLike) -> None:
    """Write a DSM as an ESRI ASCII grid with NODATA_value header."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    heights = np.where(dsm.valid, dsm.heights, dsm.nodata)
    rows, cols = heights.shape
    header = (
        f"ncols {cols}\n"
        f"nrows {rows}\n"
        f"xllcorner {dsm.x_origin!r}\n"
        f"yllcorner {dsm.y_origin!r}\n"
        f"cellsize {dsm.cell_size!r}\n"
        f"NODATA_value {dsm.nodata!r}\n"
    )
    with open(path, 'w', encoding='utf-8') as f:
        f.write(header)
        np.savetxt(f, heights, fmt='%.6f')


def read_asc(path: PathLike) -> Dsm:
    """Read an ESRI ASCII grid; nodata cells keep the declared sentinel."""
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"ASCII grid not found: {path}")
    header = {}
    lines = path.read_text(encoding='utf-8').splitlines()
    body_start = 0
    for body_start, line in enumerate(lines):
        if not line[:1].isalpha():
            break
        key, value = line.split()
        header[key.lower()] = float(value)
    heights = np.loadtxt(lines[body_start:], ndmin=2)

    required = ('ncols', 'nrows', 'xllcorner', 'yllcorner', 'cellsize')
    missing = [k for k in required if k not in header]
    if missing:
        raise DatasetError(f"{path}: missing header keys {missing}")
    if heights.shape != (int(header['nrows']), int(header['ncols'])):
        raise DatasetError(f"{path}: grid shape {heights.shape} does not match header")
    return Dsm(
        heights=heights,
        x_origin=header['xllcorner'],
        y_origin=header['yllcorner'],
        cell_size=header['cellsize'],
        nodata=header.get('nodata_value', -9999.0),
    )
