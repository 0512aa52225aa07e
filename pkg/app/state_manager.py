"""
Manages persisted state: FLXR checkpoints, JSON documents and atomic writes.

A checkpoint file is the 4-byte magic "FLXR", a little-endian uint32 format
version, a uint64 manifest length, the JSON manifest (tensor names, shapes,
dtype, byte offsets and free-form metadata) and finally the concatenated
little-endian float32 payload. Every file written by the workbench goes
through a temp-file-then-rename step so readers never see partial files.
"""
import json
import logging
import os
import struct
import tempfile
from pathlib import Path
from typing import Any, Dict, Tuple, Union
import numpy as np
import torch
from pydantic import ValidationError
from app.models import CheckpointManifest, TensorEntry

logger = logging.getLogger(__name__)

MAGIC = b"FLXR"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sIQ")

PathLike = Union[str, Path]


def atomic_write_bytes(path: PathLike, data: bytes) -> Path:
    """
    Writes bytes to `path` through a temporary file in the same directory.
    Returns:
        Path: The written path.
    Raises:
        OSError: If the directory cannot be created or the file cannot be written.
    """
    target = Path(path).expanduser()
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        fd, temp_name = tempfile.mkstemp(dir=target.parent, prefix=f".{target.name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as handle:
                handle.write(data)
                handle.flush()
                os.fsync(handle.fileno())
            os.replace(temp_name, target)
        except BaseException:
            if os.path.exists(temp_name):
                os.unlink(temp_name)
            raise
    except OSError as error:
        logger.error(f"Failed to write '{target}': {error}", exc_info=True)
        raise
    return target


def write_json(path: PathLike, payload: Any) -> Path:
    """Atomically writes a JSON document with stable key order."""
    return atomic_write_bytes(path, (json.dumps(payload, indent=2, sort_keys=True) + "\n").encode("utf-8"))


def read_json(path: PathLike) -> Any:
    """
    Reads a JSON document.
    Raises:
        FileNotFoundError: If the file does not exist.
        RuntimeError: If the file is not valid JSON.
    """
    source = Path(path).expanduser()
    try:
        with source.open("r", encoding="utf-8") as handle:
            return json.load(handle)
    except FileNotFoundError:
        logger.error(f"JSON file not found at '{source}'.")
        raise
    except json.JSONDecodeError as error:
        logger.error(f"File '{source}' contains invalid JSON: {error}", exc_info=True)
        raise RuntimeError(f"Invalid JSON in '{source}'.") from error


def save_tensors(path: PathLike, tensors: Dict[str, torch.Tensor], metadata: Dict[str, Any]) -> Path:
    """
    Saves float32 tensors and JSON metadata as an FLXR checkpoint.
    Args:
        path: Destination file.
        tensors: Name to tensor mapping; every tensor must be float32.
        metadata: JSON-serializable metadata stored in the manifest.
    Returns:
        Path: The written checkpoint path.
    Raises:
        ValueError: If a tensor is not float32.
        OSError: If the file cannot be written.
    """
    entries = []
    chunks = []
    offset = 0
    for name, tensor in tensors.items():
        if tensor.dtype != torch.float32:
            raise ValueError(f"Checkpoint tensor '{name}' must be float32, got {tensor.dtype}.")
        data = tensor.detach().cpu().contiguous().numpy().astype("<f4", copy=False).tobytes()
        entries.append(TensorEntry(name=name, shape=list(tensor.shape), offset=offset, nbytes=len(data)))
        chunks.append(data)
        offset += len(data)
    manifest = CheckpointManifest(tensors=entries, metadata=metadata)
    manifest_bytes = manifest.model_dump_json().encode("utf-8")
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, len(manifest_bytes))
    target = atomic_write_bytes(path, header + manifest_bytes + b"".join(chunks))
    logger.info(f"Saved checkpoint with {len(entries)} tensors ({offset} payload bytes) to '{target}'.")
    return target


def load_tensors(path: PathLike) -> Tuple[Dict[str, torch.Tensor], Dict[str, Any]]:
    """
    Loads an FLXR checkpoint.
    Returns:
        Tuple: Name to float32 tensor mapping and the manifest metadata.
    Raises:
        FileNotFoundError: If the checkpoint does not exist.
        RuntimeError: If the file is not a valid FLXR checkpoint.
    """
    source = Path(path).expanduser()
    try:
        raw = source.read_bytes()
    except FileNotFoundError:
        logger.error(f"Checkpoint not found at '{source}'.")
        raise
    if len(raw) < _HEADER.size:
        raise RuntimeError(f"Checkpoint '{source}' is truncated.")
    magic, version, manifest_length = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise RuntimeError(f"'{source}' is not an FLXR checkpoint.")
    if version != FORMAT_VERSION:
        raise RuntimeError(f"Unsupported checkpoint version {version} in '{source}'.")
    manifest_end = _HEADER.size + manifest_length
    try:
        manifest = CheckpointManifest.model_validate_json(raw[_HEADER.size:manifest_end])
    except ValidationError as error:
        logger.error(f"Checkpoint manifest in '{source}' is invalid: {error}", exc_info=True)
        raise RuntimeError(f"Corrupted checkpoint manifest in '{source}'.") from error
    payload = memoryview(raw)[manifest_end:]
    tensors: Dict[str, torch.Tensor] = {}
    for entry in manifest.tensors:
        if entry.offset + entry.nbytes > len(payload):
            raise RuntimeError(f"Checkpoint tensor '{entry.name}' exceeds the payload of '{source}'.")
        array = np.frombuffer(payload[entry.offset:entry.offset + entry.nbytes], dtype="<f4").astype(np.float32)
        tensors[entry.name] = torch.from_numpy(array.reshape(entry.shape))
    return tensors, manifest.metadata


def rng_state(rng: np.random.Generator) -> Dict[str, Any]:
    """JSON-ready state of a numpy generator."""
    return rng.bit_generator.state


def restore_rng(state: Dict[str, Any]) -> np.random.Generator:
    bit_generator = getattr(np.random, state["bit_generator"])()
    bit_generator.state = state
    return np.random.Generator(bit_generator)


def pack_optimizer(optimizer: torch.optim.Optimizer) -> Tuple[Dict[str, torch.Tensor], Dict[str, Any]]:
    """Splits an optimizer state dict into float32 tensors and JSON metadata."""
    state_dict = optimizer.state_dict()
    tensors: Dict[str, torch.Tensor] = {}
    scalars: Dict[str, Dict[str, Any]] = {}
    for param_id, param_state in state_dict["state"].items():
        for key, value in param_state.items():
            if isinstance(value, torch.Tensor):
                tensors[f"optim.{param_id}.{key}"] = value.detach().to(torch.float32)
            else:
                scalars.setdefault(str(param_id), {})[key] = value
    return tensors, {"param_groups": state_dict["param_groups"], "scalars": scalars}


def unpack_optimizer(tensors: Dict[str, torch.Tensor], metadata: Dict[str, Any]) -> Dict[str, Any]:
    """Inverse of `pack_optimizer`, ready for `optimizer.load_state_dict`."""
    state: Dict[int, Dict[str, Any]] = {}
    for name, tensor in tensors.items():
        if not name.startswith("optim."):
            continue
        _, param_id, key = name.split(".", 2)
        state.setdefault(int(param_id), {})[key] = tensor.clone()
    for param_id, values in metadata.get("scalars", {}).items():
        state.setdefault(int(param_id), {}).update(values)
    return {"state": state, "param_groups": metadata["param_groups"]}
