"""On-disk formats: raw float32 rasters with JSON sidecars, PNG previews, parameter blobs."""
from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Mapping

import cv2
import numpy as np

RASTER_SUFFIX = ".f32"


def sidecar_path(path: str | Path) -> Path:
    return Path(path).with_suffix(".json")


def write_raster(path: str | Path, data: np.ndarray, role: str, seed: int | None = None,
                 config: Mapping[str, Any] | None = None) -> Path:
    """Write ``data`` (H x W x C) as little-endian float32 plus a JSON sidecar."""
    path = Path(path).with_suffix(RASTER_SUFFIX)
    data = np.asarray(data)
    if data.ndim == 2:
        data = data[:, :, None]
    h, w, c = data.shape
    path.write_bytes(np.ascontiguousarray(data, dtype="<f4").tobytes())
    meta = {"height": h, "width": w, "channels": c, "role": role, "seed": seed,
            "config": dict(config) if config is not None else None}
    sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True))
    return path


def read_raster(path: str | Path) -> tuple[np.ndarray, dict]:
    path = Path(path)
    meta = json.loads(sidecar_path(path).read_text())
    shape = (meta["height"], meta["width"], meta["channels"])
    flat = np.frombuffer(path.read_bytes(), dtype="<f4")
    if flat.size != np.prod(shape):
        raise ValueError(f"{path}: expected {np.prod(shape)} floats, found {flat.size}")
    return flat.reshape(shape).astype(np.float32), meta


def write_png(path: str | Path, data: np.ndarray, bits: int = 8) -> Path:
    """Write a [0, 1] gray or RGB image as an 8- or 16-bit PNG."""
    if bits not in (8, 16):
        raise ValueError("bits must be 8 or 16")
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 3 and data.shape[2] == 1:
        data = data[:, :, 0]
    peak = 255 if bits == 8 else 65535
    codes = np.round(np.clip(data, 0.0, 1.0) * peak).astype(np.uint8 if bits == 8 else np.uint16)
    if codes.ndim == 3:
        codes = codes[:, :, ::-1]  # cv2 stores BGR
    path = Path(path)
    if not cv2.imwrite(str(path), codes):
        raise OSError(f"could not write {path}")
    return path


def read_png(path: str | Path) -> np.ndarray:
    codes = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if codes is None:
        raise OSError(f"could not read {path}")
    peak = 65535.0 if codes.dtype == np.uint16 else 255.0
    if codes.ndim == 3:
        codes = codes[:, :, ::-1]
    else:
        codes = codes[:, :, None]
    return (codes / peak).astype(np.float32)


def read_image(path: str | Path) -> np.ndarray:
    """Load a raster from either a ``.f32`` file (with sidecar) or a PNG."""
    path = Path(path)
    if path.suffix == RASTER_SUFFIX:
        return read_raster(path)[0]
    return read_png(path)


def write_param_blob(path: str | Path, params: Mapping[str, np.ndarray]) -> Path:
    """Concatenate named arrays into one float32 blob with a JSON index.

    The index lists ``{name, shape, offset}`` with offsets in float32 elements.
    """
    path = Path(path)
    index, chunks, offset = [], [], 0
    for name, arr in params.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        index.append({"name": name, "shape": list(arr.shape), "offset": offset})
        chunks.append(arr.tobytes())
        offset += arr.size
    path.write_bytes(b"".join(chunks))
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(index, indent=1))
    return path


def read_param_blob(path: str | Path) -> dict[str, np.ndarray]:
    path = Path(path)
    index = json.loads(path.with_suffix(path.suffix + ".json").read_text())
    flat = np.frombuffer(path.read_bytes(), dtype="<f4")
    out = {}
    for entry in index:
        size = int(np.prod(entry["shape"]))
        out[entry["name"]] = flat[entry["offset"]:entry["offset"] + size].reshape(entry["shape"]).copy()
    return out
