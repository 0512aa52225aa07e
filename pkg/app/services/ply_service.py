"""This module exports and imports Gaussian clouds as binary little-endian PLY files."""
import io
import logging
from pathlib import Path
from typing import Union
import numpy as np
import torch
from plyfile import PlyData, PlyElement
from app.core.gaussians import GaussianCloud
from app.state_manager import atomic_write_bytes

logger = logging.getLogger(__name__)

PLY_PROPERTIES = (
    "x", "y", "z",
    "f_dc_0", "f_dc_1", "f_dc_2",
    "opacity",
    "scale_0", "scale_1", "scale_2",
    "rot_0", "rot_1", "rot_2", "rot_3",
)
_GRID_COMMENT = "grid_n"


def export_ply(cloud: GaussianCloud, path: Union[str, Path]) -> Path:
    """
    Writes the activated Gaussian fields as float32 vertex properties.
    Args:
        cloud: The cloud to export.
        path: Destination file.
    Returns:
        Path: The written file.
    Raises:
        OSError: If the path is not writable.
    """
    columns = torch.cat(
        [
            cloud.positions,
            cloud.colors,
            cloud.opacities.unsqueeze(-1),
            cloud.scales,
            cloud.rotations,
        ],
        dim=-1,
    ).detach().cpu().to(torch.float32).numpy()
    vertices = np.empty(cloud.count, dtype=[(name, "<f4") for name in PLY_PROPERTIES])
    for index, name in enumerate(PLY_PROPERTIES):
        vertices[name] = columns[:, index]
    comments = [f"{_GRID_COMMENT} {cloud.grid_n}"] if cloud.grid_n is not None else []
    ply = PlyData([PlyElement.describe(vertices, "vertex")], text=False, byte_order="<", comments=comments)
    buffer = io.BytesIO()
    ply.write(buffer)
    target = atomic_write_bytes(path, buffer.getvalue())
    logger.info(f"Exported {cloud.count} Gaussians to '{target}'.")
    return target


def import_ply(path: Union[str, Path]) -> GaussianCloud:
    """
    Reads a cloud written by `export_ply`.
    Raises:
        FileNotFoundError: If the file does not exist.
        RuntimeError: If a required vertex property is missing.
    """
    source = Path(path).expanduser()
    ply = PlyData.read(str(source))
    vertex = ply["vertex"]
    missing = [name for name in PLY_PROPERTIES if name not in vertex.data.dtype.names]
    if missing:
        raise RuntimeError(f"PLY file '{source}' lacks vertex properties {missing}.")
    columns = np.stack([np.asarray(vertex[name], dtype=np.float32) for name in PLY_PROPERTIES], axis=-1)
    data = torch.from_numpy(np.ascontiguousarray(columns))
    grid_n = None
    for comment in ply.comments:
        key, _, value = comment.partition(" ")
        if key == _GRID_COMMENT:
            grid_n = int(value)
    return GaussianCloud(
        positions=data[:, 0:3].clone(),
        colors=data[:, 3:6].clone(),
        opacities=data[:, 6].clone(),
        scales=data[:, 7:10].clone(),
        rotations=data[:, 10:14].clone(),
        grid_n=grid_n,
    )
