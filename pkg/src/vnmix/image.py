"""Raster container and the colour / CFA / resampling helpers shared by the package."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

COLORSPACES = ("RGB", "YUV", "GRAY")

# BT.601 full range, rows give Y, U, V.
RGB_TO_YUV = np.array([
    [0.299, 0.587, 0.114],
    [-0.168736, -0.331264, 0.5],
    [0.5, -0.418688, -0.081312],
])
YUV_TO_RGB = np.linalg.inv(RGB_TO_YUV)

_RANGE_TOL = 1e-6


class RasterError(ValueError):
    pass


@dataclass
class Raster:
    """H x W x C image with a colour-space tag.

    RGB and GRAY data live in [0, 1]; YUV has Y in [0, 1] and U, V in
    [-0.5, 0.5].
    """

    data: np.ndarray
    colorspace: str = "RGB"

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 2:
            data = data[:, :, None]
        if data.ndim != 3 or data.shape[2] not in (1, 3):
            raise RasterError(f"raster must be HxWx1 or HxWx3, got {data.shape}")
        if self.colorspace not in COLORSPACES:
            raise RasterError(f"unknown colorspace {self.colorspace!r}")
        expected = 1 if self.colorspace == "GRAY" else 3
        if data.shape[2] != expected:
            raise RasterError(f"{self.colorspace} raster needs {expected} channels, got {data.shape[2]}")
        if not np.all(np.isfinite(data)):
            raise RasterError("raster contains non-finite values")
        self.data = data
        lo, hi = self.bounds()
        if np.any(data < lo - _RANGE_TOL) or np.any(data > hi + _RANGE_TOL):
            raise RasterError(f"{self.colorspace} raster values outside declared range")

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        if self.colorspace == "YUV":
            return np.array([0.0, -0.5, -0.5]), np.array([1.0, 0.5, 0.5])
        return np.zeros(self.channels), np.ones(self.channels)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape


def _require(r: Raster, colorspace: str, op: str) -> None:
    if r.colorspace != colorspace:
        raise RasterError(f"{op} expects a {colorspace} raster, got {r.colorspace}")


def _require_even(r: Raster, op: str) -> None:
    if r.height % 2 or r.width % 2:
        raise RasterError(f"{op} needs even dimensions, got {r.height}x{r.width}")


# -- CFA ----------------------------------------------------------------------
# RGGB: (0,0)=R, (0,1)=G, (1,0)=G, (1,1)=B
_RGGB = ((0, 0, 0), (0, 1, 1), (1, 0, 1), (1, 1, 2))


def mosaic(rgb: Raster) -> Raster:
    """Sample an RGB raster through an RGGB Bayer pattern."""
    _require(rgb, "RGB", "mosaic")
    _require_even(rgb, "mosaic")
    out = np.empty((rgb.height, rgb.width))
    for dy, dx, ch in _RGGB:
        out[dy::2, dx::2] = rgb.data[dy::2, dx::2, ch]
    return Raster(out, "GRAY")


def cfa_masks(height: int, width: int) -> np.ndarray:
    masks = np.zeros((height, width, 3))
    for dy, dx, ch in _RGGB:
        masks[dy::2, dx::2, ch] = 1.0
    return masks


def _conv_reflect(plane: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    p = np.pad(plane, 1, mode="reflect")
    h, w = plane.shape
    out = np.zeros_like(plane)
    for i in range(3):
        for j in range(3):
            out += kernel[i, j] * p[i:i + h, j:j + w]
    return out


def demosaic(cfa: Raster) -> Raster:
    """Bilinear RGGB demosaic; sampled positions are kept exactly.

    Borders use reflect padding, which keeps the CFA phase intact, so
    constant planes reproduce exactly everywhere.
    """
    _require(cfa, "GRAY", "demosaic")
    _require_even(cfa, "demosaic")
    plane = cfa.data[:, :, 0]
    masks = cfa_masks(cfa.height, cfa.width)
    k_g = np.array([[0, 1, 0], [1, 4, 1], [0, 1, 0]]) / 4.0
    k_rb = np.array([[1, 2, 1], [2, 4, 2], [1, 2, 1]]) / 4.0
    out = np.empty((cfa.height, cfa.width, 3))
    for ch, kernel in ((0, k_rb), (1, k_g), (2, k_rb)):
        out[:, :, ch] = _conv_reflect(plane * masks[:, :, ch], kernel)
    return Raster(np.clip(out, 0.0, 1.0), "RGB")


# -- colour spaces ------------------------------------------------------------
def rgb_to_yuv(r: Raster) -> Raster:
    _require(r, "RGB", "rgb_to_yuv")
    return Raster(r.data @ RGB_TO_YUV.T, "YUV")


def yuv_to_rgb(r: Raster) -> Raster:
    _require(r, "YUV", "yuv_to_rgb")
    # inverse matrix can overshoot [0, 1] by rounding
    return Raster(np.clip(r.data @ YUV_TO_RGB.T, 0.0, 1.0), "RGB")


def luminance(r: Raster) -> Raster:
    return Raster(rgb_to_yuv(r).data[:, :, :1], "GRAY")


def rgb_to_hsv_array(rgb: np.ndarray) -> np.ndarray:
    """Hexcone RGB -> HSV with all components in [0, 1]."""
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    v = rgb.max(axis=-1)
    c = v - rgb.min(axis=-1)
    safe_c = np.where(c > 0, c, 1.0)
    h = np.where(v == r, ((g - b) / safe_c) % 6.0,
                 np.where(v == g, (b - r) / safe_c + 2.0, (r - g) / safe_c + 4.0))
    h = np.where(c > 0, h / 6.0, 0.0)
    s = np.where(v > 0, c / np.where(v > 0, v, 1.0), 0.0)
    return np.stack([h, s, v], axis=-1)


def hsv_to_rgb_array(hsv: np.ndarray) -> np.ndarray:
    h, s, v = hsv[..., 0:1], hsv[..., 1:2], hsv[..., 2:3]
    n = np.array([5.0, 3.0, 1.0])
    k = (n + 6.0 * h) % 6.0
    return v - v * s * np.clip(np.minimum(k, 4.0 - k), 0.0, 1.0)


# -- white balance ---------------------------------------------------------------
def gray_world_white_balance(r: Raster) -> Raster:
    """Scale each channel so its mean matches the global mean."""
    if r.colorspace == "GRAY":
        return Raster(r.data.copy(), "GRAY")
    _require(r, "RGB", "gray_world_white_balance")
    means = r.data.mean(axis=(0, 1))
    if np.any(means <= 0):
        raise RasterError("gray-world balance undefined: a channel has zero mean")
    gains = means.mean() / means
    return Raster(np.clip(r.data * gains, 0.0, 1.0), "RGB")


# -- resampling -----------------------------------------------------------------
def resize_half(r: Raster) -> Raster:
    _require_even(r, "resize_half")
    h, w, c = r.shape
    return Raster(r.data.reshape(h // 2, 2, w // 2, 2, c).mean(axis=(1, 3)), r.colorspace)


def resize_double(r: Raster) -> Raster:
    return Raster(r.data.repeat(2, axis=0).repeat(2, axis=1), r.colorspace)
