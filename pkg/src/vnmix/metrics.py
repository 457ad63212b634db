"""Evaluation metrics: PSNR, SSIM and Hasler-Suesstrunk colourfulness."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-x ** 2 / (2.0 * sigma ** 2))
    return g / g.sum()


def _check_pair(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def to_8bit(x: np.ndarray) -> np.ndarray:
    """Round [0, 1] data to 8-bit codes and rescale to [0, 1]."""
    return np.round(np.clip(x, 0.0, 1.0) * 255.0) / 255.0


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; ``math.inf`` for identical inputs."""
    a, b = _check_pair(a, b)
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return math.inf
    return float(10.0 * np.log10(peak ** 2 / mse))


def _filter_valid(x: np.ndarray, win: np.ndarray) -> np.ndarray:
    k = win.size
    h, w = x.shape[0] - k + 1, x.shape[1] - k + 1
    rows = sum(win[i] * x[i:i + h] for i in range(k))
    return sum(win[j] * rows[:, j:j + w] for j in range(k))


def ssim(a: np.ndarray, b: np.ndarray, data_range: float = 1.0) -> float:
    """Mean SSIM over valid 11x11 Gaussian windows, averaged over channels."""
    a, b = _check_pair(a, b)
    if a.ndim == 2:
        a, b = a[:, :, None], b[:, :, None]
    if min(a.shape[:2]) < SSIM_WINDOW:
        raise ValueError(f"image {a.shape[:2]} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    win = gaussian_window()
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2
    mu_a, mu_b = _filter_valid(a, win), _filter_valid(b, win)
    s_aa = _filter_valid(a * a, win) - mu_a ** 2
    s_bb = _filter_valid(b * b, win) - mu_b ** 2
    s_ab = _filter_valid(a * b, win) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * s_ab + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (s_aa + s_bb + c2)
    return float(np.mean(num / den))


def colourfulness(rgb: np.ndarray) -> float:
    """Hasler & Suesstrunk (2003) colourfulness of an RGB image in [0, 1]."""
    rgb = np.asarray(rgb, dtype=np.float64)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"colourfulness needs an HxWx3 RGB image, got {rgb.shape}")
    r, g, b = (255.0 * rgb[:, :, i] for i in range(3))
    rg = r - g
    yb = 0.5 * (r + g) - b
    return float(np.sqrt(rg.std() ** 2 + yb.std() ** 2)
                 + 0.3 * np.sqrt(rg.mean() ** 2 + yb.mean() ** 2))


@dataclass
class MetricReport:
    per_image: list[dict] = field(default_factory=list)

    def add(self, name: str, pred: np.ndarray, gt: np.ndarray, quantize_8bit: bool = True) -> dict:
        if quantize_8bit:
            pred, gt = to_8bit(pred), to_8bit(gt)
        entry = {"name": name, "psnr": psnr(pred, gt), "ssim": ssim(pred, gt)}
        entry["colourfulness"] = colourfulness(pred) if np.shape(pred)[-1] == 3 else None
        self.per_image.append(entry)
        return entry

    @property
    def mean(self) -> dict:
        out = {}
        for key in ("psnr", "ssim", "colourfulness"):
            vals = [e[key] for e in self.per_image if e[key] is not None]
            out[key] = float(np.mean(vals)) if vals else None
        return out

    def to_json(self) -> dict:
        def enc(v):
            return "inf" if isinstance(v, float) and math.isinf(v) else v

        return {"per_image": [{k: enc(v) for k, v in e.items()} for e in self.per_image],
                "mean": {k: enc(v) for k, v in self.mean.items()}}
