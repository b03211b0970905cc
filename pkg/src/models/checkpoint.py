"""
Checkpoint container.

Byte layout:
    bytes 0..7    magic b"SDMCKPT1"
    bytes 8..15   header length N, little-endian uint64
    next N bytes  UTF-8 JSON header (sorted keys, separators "," and ":"):
                    format_version : 1
                    mlp_config     : MlpConfig fields
                    blocks         : [{"name": ..., "shape": [...]}, ...] in layout order
                    metadata       : free-form run information
    remainder     every block as little-endian float64, C order, in header order
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
from pydantic import ValidationError

from src.models.mlp import MlpConfig, Parameters, parameter_layout
from src.utils.errors import CheckpointError, ShapeMismatchError

logger = logging.getLogger(__name__)

MAGIC = b"SDMCKPT1"
FORMAT_VERSION = 1
_FLOAT = np.dtype("<f8")


def _header_bytes(params: Parameters, metadata: Optional[Dict[str, Any]]) -> bytes:
    header = {
        "format_version": FORMAT_VERSION,
        "mlp_config": params.config.model_dump(),
        "blocks": [{"name": name, "shape": list(shape)} for name, shape, _ in parameter_layout(params.config)],
        "metadata": metadata or {},
    }
    return json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")


def checkpoint_bytes(params: Parameters, metadata: Optional[Dict[str, Any]] = None) -> bytes:
    header = _header_bytes(params, metadata)
    parts = [MAGIC, np.uint64(len(header)).astype("<u8").tobytes(), header]
    parts += [np.ascontiguousarray(params[name], dtype=_FLOAT).tobytes() for name, _, _ in parameter_layout(params.config)]
    return b"".join(parts)


def save_checkpoint(params: Parameters, path: Union[str, Path], metadata: Optional[Dict[str, Any]] = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(checkpoint_bytes(params, metadata))
    tmp.replace(path)
    logger.info("Checkpoint written: %s", path)
    return path


def load_checkpoint(path: Union[str, Path]) -> Tuple[Parameters, Dict[str, Any]]:
    """Returns (parameters, metadata)."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint (bad magic)")
    if len(raw) < 16:
        raise CheckpointError(f"{path} is truncated")

    header_len = int(np.frombuffer(raw[8:16], dtype="<u8")[0])
    try:
        header = json.loads(raw[16:16 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header ({exc})") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported format version {header.get('format_version')}")

    try:
        config = MlpConfig(**header["mlp_config"])
    except (KeyError, ValidationError) as exc:
        raise CheckpointError(f"{path}: invalid model configuration in header") from exc

    expected = [(name, list(shape)) for name, shape, _ in parameter_layout(config)]
    declared = [(block["name"], list(block["shape"])) for block in header.get("blocks", [])]
    if declared != expected:
        raise CheckpointError(f"{path}: block list does not match the model configuration")

    offset = 16 + header_len
    arrays: Dict[str, np.ndarray] = {}
    for name, shape in expected:
        count = int(np.prod(shape))
        end = offset + count * _FLOAT.itemsize
        if end > len(raw):
            raise CheckpointError(f"{path}: truncated in block {name}")
        arrays[name] = np.frombuffer(raw, dtype=_FLOAT, count=count, offset=offset).reshape(shape).astype(np.float64)
        offset = end
    if offset != len(raw):
        raise CheckpointError(f"{path}: {len(raw) - offset} trailing bytes")

    return Parameters(config, arrays), header.get("metadata", {})


def check_compatible(params: Parameters, input_dim: int, n_species: int, source: str = "checkpoint") -> None:
    cfg = params.config
    if cfg.input_dim != input_dim:
        raise ShapeMismatchError(f"{source} expects D={cfg.input_dim} input features, data has D={input_dim}")
    if cfg.output_dim != n_species:
        raise ShapeMismatchError(f"{source} predicts S={cfg.output_dim} species, data has S={n_species}")
