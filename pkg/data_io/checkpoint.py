import json
from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import numpy as np
from pydantic import ValidationError

from helpers.errors import CheckpointError
from helpers.export_helper import atomic_write_bytes
from helpers.logging_helper import get_logger
from helpers.settings import ModelConfig
from models.mustang import ModelParams, init_params

logger = get_logger(__name__)

FORMAT_NAME = 'mustang-checkpoint'
FORMAT_VERSION = 1
PAYLOAD_DTYPE = np.dtype('<f8')


def save_checkpoint(params: ModelParams, model_cfg: ModelConfig, path: Path,
                    meta: Optional[Dict[str, Any]] = None) -> Path:
    """
    Write parameters and architecture to one file

    Layout: a JSON header line (config, array registry with shapes and byte
    offsets, payload size, free-form meta) followed by every array as
    little-endian float64 in registry order.
    """
    registry = []
    chunks = []
    offset = 0
    for name, param in params.named_parameters().items():
        data = np.ascontiguousarray(param.data, dtype=PAYLOAD_DTYPE).tobytes()
        registry.append({'name': name, 'shape': list(param.shape), 'offset': offset})
        chunks.append(data)
        offset += len(data)

    header = {
        'format': FORMAT_NAME,
        'version': FORMAT_VERSION,
        'model_config': model_cfg.model_dump(),
        'arrays': registry,
        'payload_bytes': offset,
        'meta': meta or {},
    }
    blob = json.dumps(header, sort_keys=True).encode('utf-8') + b'\n' + b''.join(chunks)
    atomic_write_bytes(path, blob)
    logger.info(f"Saved checkpoint with {params.total_param_count} parameters to {path}")
    return Path(path)


def _parse_header(raw: bytes, path: Path) -> Tuple[Dict[str, Any], bytes]:
    newline = raw.find(b'\n')
    if newline < 0:
        raise CheckpointError(f"{path}: missing header line")
    try:
        header = json.loads(raw[:newline].decode('utf-8'))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: corrupted header: {e}") from e
    if not isinstance(header, dict) or header.get('format') != FORMAT_NAME:
        raise CheckpointError(f"{path}: not a {FORMAT_NAME} file")
    if header.get('version') != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported version {header.get('version')}")
    return header, raw[newline + 1:]


def load_checkpoint(path: Path) -> Tuple[ModelParams, ModelConfig, Dict[str, Any]]:
    """
    Read a checkpoint written by save_checkpoint

    Returns:
        Tuple of (parameters, model config, meta)

    Raises:
        FileNotFoundError: If the file does not exist
        CheckpointError: On a corrupted header, a registry inconsistent with
            the config, or a truncated payload
    """
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    header, payload = _parse_header(path.read_bytes(), path)

    try:
        model_cfg = ModelConfig(**header['model_config'])
        registry = list(header['arrays'])
        payload_bytes = int(header['payload_bytes'])
    except (KeyError, TypeError, ValueError, ValidationError) as e:
        raise CheckpointError(f"{path}: invalid header: {e}") from e

    if len(payload) != payload_bytes:
        raise CheckpointError(f"{path}: payload has {len(payload)} bytes, header declares {payload_bytes}")

    params = init_params(model_cfg, seed=0)
    expected = params.named_parameters()
    if [entry.get('name') for entry in registry] != list(expected):
        raise CheckpointError(f"{path}: array registry does not match the configured architecture")

    offset = 0
    for entry in registry:
        param = expected[entry['name']]
        shape = tuple(entry.get('shape', ()))
        if shape != param.shape:
            raise CheckpointError(f"{path}: {entry['name']} has shape {shape}, architecture needs {param.shape}")
        if entry.get('offset') != offset:
            raise CheckpointError(f"{path}: {entry['name']} offset {entry.get('offset')} should be {offset}")
        count = int(np.prod(shape, dtype=np.int64))
        end = offset + count * PAYLOAD_DTYPE.itemsize
        if end > len(payload):
            raise CheckpointError(f"{path}: payload truncated inside {entry['name']}")
        data = np.frombuffer(payload[offset:end], dtype=PAYLOAD_DTYPE).reshape(shape).astype(np.float64)
        data.setflags(write=False)
        param.data = data
        offset = end

    if offset != payload_bytes:
        raise CheckpointError(f"{path}: {payload_bytes - offset} trailing payload bytes")
    return params, model_cfg, header.get('meta', {})
