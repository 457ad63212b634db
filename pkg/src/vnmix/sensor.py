"""Silicon sensor without a hot-mirror: spectra in, quantized noisy rasters out.

The chain per pixel and colour channel is

    electrons  I0 = T * A * U * sum_lambda L(lambda) t(lambda) q(lambda) dlambda
    noisy      I* = Poisson(I0) + Normal(0, sigma^2)
    digital    S  = clip(round((g * I* + V) / eta) / levels, 0, 1)

with ``L = (vis_level * vis_illuminant + nir_level * nir_illuminant) * reflectance``.
A capture through the VIS-pass filter, one through the NIR-pass filter and an
unfiltered one share the same scene, which gives aligned MIX / VIS / NIR images.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import erf

WL_MIN, WL_MAX = 300.0, 950.0
DEFAULT_STEP = 10.0
VIS_CUT = 700.0  # FESH0700 shortpass edge
NIR_CUT = 850.0  # FELH0850 longpass edge
LED_CENTER, LED_FWHM = 880.0, 15.0
LONG_EXPOSURE_FACTOR = 10.0  # 8 s vs 0.8 s
DAY_EXPOSURE, NIGHT_EXPOSURE = 0.08, 0.8
BANDS = ("full", "vis_pass", "nir_pass")


class ConfigError(ValueError):
    pass


def wavelength_grid(step: float = DEFAULT_STEP) -> np.ndarray:
    """Bin centres from 300 nm to 950 nm inclusive (66 bins at 10 nm)."""
    n = int(round((WL_MAX - WL_MIN) / step)) + 1
    return WL_MIN + step * np.arange(n)


@dataclass(frozen=True)
class SpectralCurve:
    """Non-negative samples of a spectral quantity on the fixed wavelength grid.

    ``role`` is informational except for ``"transmittance"``, which is also
    bounded above by one.
    """

    values: np.ndarray
    role: str = "irradiance"
    step: float = DEFAULT_STEP

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        n = wavelength_grid(self.step).size
        if values.shape != (n,):
            raise ConfigError(f"curve needs {n} samples for a {self.step} nm grid, got {values.shape}")
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise ValueError("spectral curve values must be finite and >= 0")
        if self.role == "transmittance" and np.any(values > 1):
            raise ValueError("transmittance must not exceed 1")
        object.__setattr__(self, "values", values)

    @property
    def grid(self) -> np.ndarray:
        return wavelength_grid(self.step)

    @classmethod
    def flat(cls, value: float = 1.0, role: str = "irradiance", step: float = DEFAULT_STEP):
        return cls(np.full(wavelength_grid(step).size, float(value)), role, step)

    def to_dict(self) -> dict:
        return {"values": self.values.tolist(), "role": self.role, "step": self.step}

    @classmethod
    def from_dict(cls, d: dict) -> "SpectralCurve":
        return cls(np.asarray(d["values"]), d.get("role", "irradiance"), d.get("step", DEFAULT_STEP))


def gaussian_curve(center: float, fwhm: float, peak: float = 1.0, step: float = DEFAULT_STEP,
                   role: str = "irradiance") -> SpectralCurve:
    """Gaussian line averaged analytically over each bin.

    Bin averaging keeps the integral right even when the line is narrower
    than the grid spacing.
    """
    grid = wavelength_grid(step)
    sigma = fwhm / (2.0 * np.sqrt(2.0 * np.log(2.0)))
    lo = (grid - step / 2 - center) / (sigma * np.sqrt(2.0))
    hi = (grid + step / 2 - center) / (sigma * np.sqrt(2.0))
    area = 0.5 * (erf(hi) - erf(lo)) * sigma * np.sqrt(2.0 * np.pi)
    return SpectralCurve(peak * area / step, role, step)


def _edge(grid: np.ndarray, cut: float, slope: float) -> np.ndarray:
    """1 above ``cut``; a logistic of width ``slope`` nm when slope > 0."""
    if slope <= 0:
        return (grid >= cut).astype(np.float64)
    return 0.5 * (1.0 + np.tanh((grid - cut) / (2.0 * slope)))


def band_transmittance(band: str, step: float = DEFAULT_STEP, slope: float = 0.0) -> SpectralCurve:
    grid = wavelength_grid(step)
    if band == "full":
        t = np.ones_like(grid)
    elif band == "vis_pass":
        t = 1.0 - _edge(grid, VIS_CUT, slope)
    elif band == "nir_pass":
        t = _edge(grid, NIR_CUT, slope)
    else:
        raise ConfigError(f"unknown band {band!r}; expected one of {BANDS}")
    return SpectralCurve(t, "transmittance", step)


def default_sensitivities(step: float = DEFAULT_STEP, nir_gain: float = 0.45) -> np.ndarray:
    """(3, bins) R, G, B quantum-efficiency curves after the CFA.

    Gaussian VIS peaks at 600/540/460 nm plus one NIR lobe shared by all three
    channels, as for a Bayer sensor without a hot-mirror.
    """
    grid = wavelength_grid(step)
    lobe = nir_gain * np.exp(-0.5 * ((grid - 800.0) / 90.0) ** 2) * _edge(grid, 700.0, 12.0)
    q = np.empty((3, grid.size))
    for ch, peak in enumerate((600.0, 540.0, 460.0)):
        q[ch] = np.exp(-0.5 * ((grid - peak) / 35.0) ** 2) + lobe
    return q


def xenon_vis_illuminant(step: float = DEFAULT_STEP) -> SpectralCurve:
    """Broad visible continuum of a xenon lamp, cut at 700 nm."""
    grid = wavelength_grid(step)
    rise = _edge(grid, 390.0, 15.0)
    values = rise * (0.85 + 0.15 * np.cos((grid - 550.0) / 300.0 * np.pi)) * (grid < VIS_CUT)
    return SpectralCurve(values, "irradiance", step)


def xenon_nir_illuminant(step: float = DEFAULT_STEP) -> SpectralCurve:
    """Near-infrared part of an unfiltered xenon lamp (700-950 nm), rising towards 900 nm."""
    grid = wavelength_grid(step)
    values = np.where(grid >= VIS_CUT, 0.12 + 0.88 * np.exp(-0.5 * ((grid - 905.0) / 45.0) ** 2), 0.0)
    return SpectralCurve(values, "irradiance", step)


def led_illuminant(step: float = DEFAULT_STEP) -> SpectralCurve:
    """880 nm LED, FWHM 15 nm."""
    return gaussian_curve(LED_CENTER, LED_FWHM, 1.0, step)


@dataclass(frozen=True)
class SensorConfig:
    """Radiometric and electronic constants of the capture chain.

    ``full_scale`` is the electron count that maps to digital 1.0; the number
    of output codes is ``round(full_scale * gain / quant_step)``.
    """

    gain: float = 1.0
    bias: float = 0.0
    quant_step: float = 1.0
    exposure: float = DAY_EXPOSURE
    area: float = 1.0
    modulation: float = 360.0  # calibrates the default illuminants to full scale
    thermal_sigma: float = 2.0
    full_scale: float = 4095.0

    def __post_init__(self):
        for name in ("gain", "quant_step", "exposure", "area", "modulation", "full_scale"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"SensorConfig.{name} must be > 0, got {getattr(self, name)}")
        if not self.thermal_sigma >= 0:
            raise ConfigError("SensorConfig.thermal_sigma must be >= 0")
        if self.quant_levels < 1:
            raise ConfigError("full_scale * gain / quant_step must round to at least 1")

    @property
    def quant_levels(self) -> int:
        return int(round_half_away(self.full_scale * self.gain / self.quant_step))

    def with_exposure(self, exposure: float) -> "SensorConfig":
        return SensorConfig(**{**asdict(self), "exposure": exposure})

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SensorConfig":
        return cls(**d)


@dataclass(frozen=True)
class IlluminationSchedule:
    """VIS level per timestamp plus a constant NIR level.

    A timestamp is an index into ``vis_level``. Timestamps whose VIS level is
    below ``night_below`` count as night.
    """

    vis_level: tuple[float, ...]
    nir_level: float
    vis_illuminant: SpectralCurve = field(default_factory=xenon_vis_illuminant)
    nir_illuminant: SpectralCurve = field(default_factory=led_illuminant)
    night_below: float = 0.05

    def __post_init__(self):
        levels = tuple(float(v) for v in np.atleast_1d(self.vis_level))
        if any(v < 0 for v in levels) or self.nir_level < 0:
            raise ValueError("illumination levels must be >= 0")
        if self.vis_illuminant.step != self.nir_illuminant.step:
            raise ConfigError("illuminants are sampled on different grids")
        object.__setattr__(self, "vis_level", levels)

    def level(self, t: int) -> float:
        return self.vis_level[t]

    def is_night(self, t: int) -> bool:
        return self.vis_level[t] < self.night_below

    def spectrum(self, t: int) -> np.ndarray:
        return self.vis_level[t] * self.vis_illuminant.values + self.nir_level * self.nir_illuminant.values


# Levels for the default schedules. With the default SensorConfig a flat 0.5
# reflectance gives, in digital units, VIS 0.30 / NIR 0.12 / gap 0.06 by day and
# VIS 0.024 / NIR 0.34 at night; the 8 s reference lands near the daytime VIS.
DAY_VIS_LEVEL = 1.0
NIGHT_VIS_LEVEL = 0.008
DAY_NIR_LEVEL = 1.6
NIGHT_NIR_LEVEL = 2.0


def day_schedule(step: float = DEFAULT_STEP) -> IlluminationSchedule:
    """Unfiltered xenon lamp: full visible continuum plus its NIR tail."""
    return IlluminationSchedule((DAY_VIS_LEVEL,), DAY_NIR_LEVEL,
                                xenon_vis_illuminant(step), xenon_nir_illuminant(step))


def night_schedule(step: float = DEFAULT_STEP) -> IlluminationSchedule:
    """Dim visible light plus the always-on 880 nm LED."""
    return IlluminationSchedule((NIGHT_VIS_LEVEL,), NIGHT_NIR_LEVEL,
                                xenon_vis_illuminant(step), led_illuminant(step))


@dataclass
class SceneSpec:
    """Per-pixel reflectance spectra, shape (H, W, bins), values in [0, 1]."""

    reflectance: np.ndarray
    seed: int = 0
    step: float = DEFAULT_STEP

    def __post_init__(self):
        r = np.asarray(self.reflectance, dtype=np.float64)
        if r.ndim != 3 or r.shape[2] != wavelength_grid(self.step).size:
            raise ConfigError(f"reflectance must be (H, W, {wavelength_grid(self.step).size}), got {r.shape}")
        if np.any(r < 0) or np.any(r > 1):
            raise ValueError("reflectance must lie in [0, 1]")
        self.reflectance = r

    @property
    def height(self) -> int:
        return self.reflectance.shape[0]

    @property
    def width(self) -> int:
        return self.reflectance.shape[1]


def _smooth_spectrum(rng: np.random.Generator, x: np.ndarray, order: int) -> np.ndarray:
    coef = rng.normal(0.0, 1.0, order) * 0.22 / np.arange(1, order + 1)
    base = rng.uniform(0.15, 0.8)
    curve = base + sum(c * np.cos((k + 1) * np.pi * x) for k, c in enumerate(coef))
    return np.clip(curve, 0.02, 0.98)


def random_scene(height: int, width: int, seed: int, step: float = DEFAULT_STEP,
                 order: int = 3, n_patches: tuple[int, int] = (4, 9)) -> SceneSpec:
    """Piecewise-smooth scene: a gradient background plus random rectangles.

    Every region carries a smooth reflectance spectrum drawn from a low-order
    cosine basis over 300-950 nm; about a third of the rectangles blend two
    spectra along a linear ramp.
    """
    rng = np.random.default_rng(seed)
    grid = wavelength_grid(step)
    x = (grid - WL_MIN) / (WL_MAX - WL_MIN)
    yy, xx = np.mgrid[0:height, 0:width] / max(height, width)

    def ramp():
        theta = rng.uniform(0, 2 * np.pi)
        t = np.cos(theta) * xx + np.sin(theta) * yy
        return ((t - t.min()) / max(np.ptp(t), 1e-9))[:, :, None]

    a, b = _smooth_spectrum(rng, x, order), _smooth_spectrum(rng, x, order)
    w = ramp()
    refl = (1 - w) * a + w * b
    for _ in range(rng.integers(n_patches[0], n_patches[1] + 1)):
        h = rng.integers(max(2, height // 8), max(3, height // 2) + 1)
        wd = rng.integers(max(2, width // 8), max(3, width // 2) + 1)
        y0 = rng.integers(0, height - h + 1)
        x0 = rng.integers(0, width - wd + 1)
        spec = _smooth_spectrum(rng, x, order)
        if rng.uniform() < 0.35:
            w = ramp()[y0:y0 + h, x0:x0 + wd]
            patch = (1 - w) * spec + w * _smooth_spectrum(rng, x, order)
        else:
            patch = np.broadcast_to(spec, (h, wd, grid.size))
        refl[y0:y0 + h, x0:x0 + wd] = patch
    return SceneSpec(refl, seed, step)


def _sens_array(sens, n_bins: int) -> np.ndarray:
    if sens is None:
        raise ConfigError("sensitivity curves required")
    if isinstance(sens, np.ndarray):
        q = np.asarray(sens, dtype=np.float64)
    else:
        q = np.stack([c.values if isinstance(c, SpectralCurve) else np.asarray(c, dtype=np.float64)
                      for c in sens])
    if q.ndim != 2 or q.shape != (3, n_bins):
        raise ConfigError(f"need 3 sensitivity curves of {n_bins} bins, got {q.shape}")
    if np.any(q < 0):
        raise ValueError("sensitivities must be >= 0")
    return q


def released_electrons(scene: SceneSpec, illum: IlluminationSchedule, t: int,
                       sens, band: str, cfg: SensorConfig,
                       filter_slope: float = 0.0) -> np.ndarray:
    """Noise-free electron counts (H, W, 3) for one capture through ``band``."""
    step = scene.step
    if illum.vis_illuminant.step != step:
        raise ConfigError("scene and illumination use different wavelength grids")
    n_bins = wavelength_grid(step).size
    q = _sens_array(sens, n_bins)
    trans = band_transmittance(band, step, filter_slope).values
    weights = (illum.spectrum(t) * trans * step)[:, None] * q.T  # (bins, 3)
    scale = cfg.exposure * cfg.area * cfg.modulation
    return (scene.reflectance @ weights) * scale


def apply_noise(i0: np.ndarray, cfg: SensorConfig, rng: np.random.Generator) -> np.ndarray:
    """Shot noise (Poisson) plus thermal noise (zero-mean Gaussian, sigma electrons)."""
    i0 = np.asarray(i0, dtype=np.float64)
    if np.any(i0 < 0):
        raise ValueError("electron counts must be >= 0")
    shot = rng.poisson(i0).astype(np.float64)
    if cfg.thermal_sigma > 0:
        shot += rng.normal(0.0, cfg.thermal_sigma, size=i0.shape)
    return shot


def round_half_away(x):
    return np.sign(x) * np.floor(np.abs(x) + 0.5)


def quantize(i_star: np.ndarray, cfg: SensorConfig) -> np.ndarray:
    codes = round_half_away((cfg.gain * np.asarray(i_star, dtype=np.float64) + cfg.bias) / cfg.quant_step)
    return np.clip(codes / cfg.quant_levels, 0.0, 1.0)


@dataclass
class SceneTriple:
    """Aligned MIX / VIS / NIR captures of one scene plus the exact deviation map."""

    mixed: np.ndarray
    vis: np.ndarray
    nir: np.ndarray
    deviation: np.ndarray
    vis_long: np.ndarray | None
    meta: dict

    @property
    def night(self) -> bool:
        return self.vis_long is not None


def synthesize_triple(scene: SceneSpec, illum: IlluminationSchedule, t: int, cfg: SensorConfig,
                      rng: np.random.Generator, sens=None, noise: bool = True,
                      filter_slope: float = 0.0,
                      long_factor: float = LONG_EXPOSURE_FACTOR) -> SceneTriple:
    """Capture the scene unfiltered, through the VIS-pass and through the NIR-pass filter.

    The deviation map is the noise-free energy of the 700-850 nm gap that the
    unfiltered capture sees but neither filtered capture does. It is measured
    in digital units as ``max(Q(full) - Q(vis) - Q(nir), 0)`` on noise-free
    electrons, so the noise-free images add up to within one code. Night
    timestamps also get a long-exposure VIS-pass reference.

    With ``noise=False`` shot noise becomes the identity and thermal noise is
    dropped.
    """
    if sens is None:
        sens = default_sensitivities(scene.step)

    def electrons(band, c):
        return released_electrons(scene, illum, t, sens, band, c, filter_slope)

    def capture(i0, c):
        return quantize(apply_noise(i0, c, rng) if noise else i0, c)

    clean = {band: electrons(band, cfg) for band in BANDS}
    mixed = capture(clean["full"], cfg)
    vis = capture(clean["vis_pass"], cfg)
    nir = capture(clean["nir_pass"], cfg)
    deviation = np.maximum(quantize(clean["full"], cfg) - quantize(clean["vis_pass"], cfg)
                           - quantize(clean["nir_pass"], cfg), 0.0)
    vis_long = None
    night = illum.is_night(t)
    if night:
        long_cfg = cfg.with_exposure(cfg.exposure * long_factor)
        vis_long = capture(electrons("vis_pass", long_cfg), long_cfg)
    meta = {"config": cfg.to_dict(), "timestamp": t, "scene_seed": scene.seed,
            "night": night, "noise": noise}
    return SceneTriple(mixed, vis, nir, deviation, vis_long, meta)
