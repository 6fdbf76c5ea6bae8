"""
Versioned binary checkpoints.

Layout (little-endian):
    8 bytes   magic b'SATDNCKP'
    uint32    format version
    uint32    header length N
    N bytes   UTF-8 JSON header: {"config": ..., "iteration": int,
              "sections": [{"name", "shape", "dtype", "offset", "count"}, ...]}
    payload   '<f4' or '<f8' blobs, matching the tensor's precision; offsets are
              in bytes from the start of the payload

Sections are 'param/<name>' for every field parameter and buffer, and
'adam/<name>/exp_avg', 'adam/<name>/exp_avg_sq', 'adam/<name>/step' for
optimizer state.
"""

import json
import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional, Union

import numpy as np
import torch

from core.errors import DatasetError


logger = logging.getLogger(__name__)

MAGIC = b'SATDNCKP'
VERSION = 2
# version 1 wrote every section as float32
SUPPORTED_VERSIONS = (1, 2)


@dataclass
class Checkpoint:
    config: Dict[str, Any]
    iteration: int
    tensors: Dict[str, np.ndarray]


def save_checkpoint(path: Union[str, Path], field: torch.nn.Module,
                    optimizer: Optional[torch.optim.Optimizer], iteration: int,
                    config: Dict[str, Any]) -> Path:
    """
    Write field parameters, optimizer moments and the iteration counter.

    Args:
        path: Output file
        field: Field module (parameters and buffers are stored)
        optimizer: Adam optimizer over the field's parameters, or None
        iteration: Completed iterations
        config: JSON-serializable configuration echo

    Returns:
        Path: Written file
    """
    tensors: Dict[str, np.ndarray] = {}
    for name, value in field.state_dict().items():
        tensors[f"param/{name}"] = value.detach().cpu().numpy()

    if optimizer is not None:
        names = {id(p): name for name, p in field.named_parameters()}
        for group in optimizer.param_groups:
            for param in group['params']:
                state = optimizer.state.get(param)
                if not state:
                    continue
                name = names[id(param)]
                tensors[f"adam/{name}/exp_avg"] = state['exp_avg'].detach().cpu().numpy()
                tensors[f"adam/{name}/exp_avg_sq"] = state['exp_avg_sq'].detach().cpu().numpy()
                tensors[f"adam/{name}/step"] = np.asarray(float(state['step']))

    sections, blobs, offset = [], [], 0
    for name in sorted(tensors):
        dtype = '<f8' if tensors[name].dtype == np.float64 else '<f4'
        blob = np.ascontiguousarray(tensors[name], dtype=dtype)
        sections.append({'name': name, 'shape': list(blob.shape), 'dtype': dtype, 'offset': offset,
                         'count': int(blob.size)})
        blobs.append(blob.tobytes())
        offset += blob.nbytes

    header = json.dumps(
        {'config': config, 'iteration': int(iteration), 'sections': sections}, sort_keys=True
    ).encode('utf-8')

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + '.tmp')
    with open(tmp, 'wb') as f:
        f.write(MAGIC)
        f.write(struct.pack('<II', VERSION, len(header)))
        f.write(header)
        for blob in blobs:
            f.write(blob)
    tmp.replace(path)
    logger.info(f"Checkpoint saved: {path} (iteration {iteration}, {offset} payload bytes)")
    return path


def read_checkpoint(path: Union[str, Path]) -> Checkpoint:
    """
    Read a checkpoint file.

    Raises:
        DatasetError: If the file is missing, truncated or of an unknown version
    """
    path = Path(path)
    if not path.exists():
        raise DatasetError(f"Checkpoint not found: {path}")
    data = path.read_bytes()
    if data[:len(MAGIC)] != MAGIC:
        raise DatasetError(f"{path}: not a checkpoint (bad magic)")
    version, header_len = struct.unpack_from('<II', data, len(MAGIC))
    if version not in SUPPORTED_VERSIONS:
        raise DatasetError(f"{path}: unsupported checkpoint version {version}")
    start = len(MAGIC) + 8
    header = json.loads(data[start:start + header_len].decode('utf-8'))
    payload = memoryview(data)[start + header_len:]

    tensors = {}
    for section in header['sections']:
        dtype = np.dtype(section.get('dtype', '<f4'))
        end = section['offset'] + dtype.itemsize * section['count']
        if end > len(payload):
            raise DatasetError(f"{path}: section {section['name']} is truncated")
        values = np.frombuffer(payload[section['offset']:end], dtype=dtype)
        tensors[section['name']] = values.reshape(section['shape']).copy()
    return Checkpoint(config=header['config'], iteration=int(header['iteration']), tensors=tensors)


def restore_field(checkpoint: Checkpoint, field: torch.nn.Module) -> None:
    """Load parameters and buffers into a field built from the same configuration."""
    state = {}
    for name, reference in field.state_dict().items():
        key = f"param/{name}"
        if key not in checkpoint.tensors:
            raise DatasetError(f"Checkpoint lacks '{name}'")
        state[name] = torch.from_numpy(checkpoint.tensors[key]).to(reference.dtype).reshape(reference.shape)
    field.load_state_dict(state)


def restore_optimizer(checkpoint: Checkpoint, field: torch.nn.Module, optimizer: torch.optim.Optimizer) -> None:
    """Load Adam moments and step counts for every parameter that has them."""
    restored = 0
    for name, param in field.named_parameters():
        key = f"adam/{name}"
        if f"{key}/exp_avg" not in checkpoint.tensors:
            continue
        optimizer.state[param] = {
            'step': torch.tensor(float(checkpoint.tensors[f"{key}/step"])),
            'exp_avg': torch.from_numpy(checkpoint.tensors[f"{key}/exp_avg"]).to(param.dtype).reshape(param.shape),
            'exp_avg_sq': torch.from_numpy(checkpoint.tensors[f"{key}/exp_avg_sq"]).to(param.dtype).reshape(param.shape),
        }
        restored += 1
    logger.debug(f"Restored optimizer state for {restored} parameter(s)")
