"""
This module reads and writes scene datasets.

A scene directory holds `view_{index}.png` files (8-bit RGBA, straight alpha,
RGB composited over the background), a `cameras.json` with one record per
view and optionally the ground-truth cloud as `gt_cloud.ply`.
"""
import io
import logging
from pathlib import Path
from typing import List, Optional, Sequence, Union
import numpy as np
import torch
from PIL import Image
from pydantic import ValidationError
from app.core.cameras import Camera, PosedView
from app.core.gaussians import GaussianCloud
from app.models import CameraRecord
from app.services.ply_service import export_ply, import_ply
from app.state_manager import atomic_write_bytes, read_json, write_json

logger = logging.getLogger(__name__)

CAMERAS_FILE = "cameras.json"
GT_CLOUD_FILE = "gt_cloud.ply"

PathLike = Union[str, Path]


def view_filename(index: int) -> str:
    return f"view_{index}.png"


def quantize_image(image: torch.Tensor) -> np.ndarray:
    """(H, W, C) floats in [0, 1] to uint8."""
    array = image.detach().cpu().to(torch.float64).clamp(0.0, 1.0).numpy()
    return np.round(array * 255.0).astype(np.uint8)


def dequantize_image(array: np.ndarray) -> torch.Tensor:
    return torch.from_numpy(array.astype(np.float32) / 255.0)


def write_png(path: PathLike, image: torch.Tensor) -> Path:
    array = quantize_image(image)
    buffer = io.BytesIO()
    Image.fromarray(array).save(buffer, format="PNG")
    return atomic_write_bytes(path, buffer.getvalue())


def read_png(path: PathLike) -> torch.Tensor:
    with Image.open(path) as handle:
        return dequantize_image(np.asarray(handle.convert("RGBA")))


def camera_record(view: PosedView, index: int) -> CameraRecord:
    cam = view.camera
    return CameraRecord(
        index=index,
        extrinsic=[float(v) for v in cam.extrinsic.reshape(-1).tolist()],
        fx=cam.fx,
        fy=cam.fy,
        cx=cam.cx,
        cy=cam.cy,
        width=cam.width,
        height=cam.height,
        elevation_deg=view.elevation_deg,
        azimuth_deg=view.azimuth_deg,
    )


def camera_from_record(record: CameraRecord) -> Camera:
    return Camera(
        extrinsic=torch.tensor(record.extrinsic, dtype=torch.float64).reshape(4, 4),
        fx=record.fx,
        fy=record.fy,
        cx=record.cx,
        cy=record.cy,
        width=record.width,
        height=record.height,
    )


def write_dataset(scene_dir: PathLike, views: Sequence[PosedView], cloud: Optional[GaussianCloud] = None) -> Path:
    """
    Writes a scene directory.
    Args:
        scene_dir: Target directory, created when missing.
        views: Posed views; their list position becomes the view index.
        cloud: Optional ground-truth cloud.
    Returns:
        Path: The scene directory.
    Raises:
        OSError: If any file cannot be written.
    """
    root = Path(scene_dir).expanduser()
    records = []
    for index, view in enumerate(views):
        write_png(root / view_filename(index), view.image)
        records.append(camera_record(view, index).model_dump())
    write_json(root / CAMERAS_FILE, records)
    if cloud is not None:
        export_ply(cloud, root / GT_CLOUD_FILE)
    logger.info(f"Wrote {len(views)} views to '{root}'.")
    return root


def read_dataset(scene_dir: PathLike) -> List[PosedView]:
    """
    Reads every view of a scene directory, ordered by index.
    Raises:
        FileNotFoundError: If the directory, cameras.json or an image is missing.
        RuntimeError: If the camera records are malformed or not densely indexed.
    """
    root = Path(scene_dir).expanduser()
    try:
        records = [CameraRecord(**entry) for entry in read_json(root / CAMERAS_FILE)]
    except (TypeError, ValidationError) as error:
        logger.error(f"Malformed camera records in '{root}': {error}", exc_info=True)
        raise RuntimeError(f"Malformed {CAMERAS_FILE} in '{root}'.") from error
    records.sort(key=lambda record: record.index)
    if [record.index for record in records] != list(range(len(records))):
        raise RuntimeError(f"View indices in '{root}' are not dense from 0.")
    views = []
    for record in records:
        image_path = root / view_filename(record.index)
        if not image_path.is_file():
            raise FileNotFoundError(f"Missing image '{image_path}' for camera {record.index}.")
        views.append(
            PosedView(
                image=read_png(image_path),
                camera=camera_from_record(record),
                elevation_deg=record.elevation_deg,
                azimuth_deg=record.azimuth_deg,
            )
        )
    return views


def read_ground_truth(scene_dir: PathLike) -> Optional[GaussianCloud]:
    path = Path(scene_dir).expanduser() / GT_CLOUD_FILE
    return import_ply(path) if path.is_file() else None


def list_scenes(root: PathLike) -> List[Path]:
    """Scene directories (those holding a cameras.json) below `root`, sorted by name."""
    base = Path(root).expanduser()
    if (base / CAMERAS_FILE).is_file():
        return [base]
    return sorted(path.parent for path in base.glob(f"*/{CAMERAS_FILE}"))
