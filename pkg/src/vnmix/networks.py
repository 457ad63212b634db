"""The four sub-networks and their composition into the MIX -> VIS pipeline.

Separation-Net estimates the NIR image, Proportion-Net the fraction of it
that leaks into the 700-850 nm gap, the VIS estimate follows by subtraction,
and the luminance (Restoration-Net) and half-resolution chroma
(Colorization-Net) are restored separately before being merged back to RGB.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensor as T
from .fileio import read_param_blob, write_param_blob
from .image import RGB_TO_YUV, YUV_TO_RGB
from .tensor import Tensor

VARIANTS = ("full", "direct", "no_restoration", "no_separation", "rgb")
COLORSPACES = ("yuv", "hsv")
LOGIT_EPS = 0.01


class TopologyError(ValueError):
    pass


@dataclass(frozen=True)
class UNetSpec:
    depth: int = 3
    base_features: int = 16
    activation: str = "leaky_relu"

    def __post_init__(self):
        if self.depth < 1 or self.base_features < 1:
            raise TopologyError("UNet depth and base_features must be >= 1")
        if self.activation not in ("leaky_relu", "relu"):
            raise TopologyError(f"unknown activation {self.activation!r}")

    def features(self, level: int) -> int:
        return self.base_features * 2 ** level


class Module:
    """Holds named parameter tensors; sub-classes build them in ``__init__``."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.params: dict[str, Tensor] = {}

    def _param(self, name: str, value: np.ndarray) -> Tensor:
        t = T.parameter(value, name)
        self.params[name] = t
        return t

    def conv(self, name: str, cin: int, cout: int, bias: bool = True) -> None:
        self._param(f"{name}.w", T.he_uniform(self.rng, (3, 3, cin, cout)))
        if bias:
            self._param(f"{name}.b", np.zeros(cout))

    def norm(self, name: str, c: int) -> None:
        self._param(f"{name}.scale", np.ones(c))
        self._param(f"{name}.shift", np.zeros(c))

    def apply_conv(self, name: str, x: Tensor, stride: int = 1, resize: bool = False) -> Tensor:
        w, b = self.params[f"{name}.w"], self.params.get(f"{name}.b")
        return T.resize_conv(x, w, b) if resize else T.conv2d(x, w, b, stride)

    def apply_norm(self, name: str, x: Tensor) -> Tensor:
        return T.instance_norm(x, self.params[f"{name}.scale"], self.params[f"{name}.shift"])


def _act(kind: str, x: Tensor) -> Tensor:
    return T.relu(x) if kind == "relu" else T.leaky_relu(x)


def _bounded(kind: str, x: Tensor) -> Tensor:
    if kind == "unit":
        return T.sigmoid(x)
    if kind == "half":
        return 0.5 * T.tanh(x)
    if kind == "none":
        return x
    raise TopologyError(f"unknown output activation {kind!r}")


class UNet(Module):
    """Encoder-decoder with stride-2 downsampling, resize-conv upsampling and concat skips.

    ``stop_level`` > 0 ends the decoder early, so the output has
    1 / 2**stop_level of the input resolution. Blocks at full resolution
    skip instance norm so the head still sees absolute intensity.
    """

    def __init__(self, spec: UNetSpec, in_ch: int, out_ch: int, rng: np.random.Generator,
                 out_act: str = "unit", stop_level: int = 0):
        super().__init__(rng)
        if not 0 <= stop_level < spec.depth:
            raise TopologyError("stop_level must lie in [0, depth)")
        self.spec, self.out_act, self.stop_level = spec, out_act, stop_level
        self.in_ch, self.out_ch = in_ch, out_ch
        f = spec.features
        self.conv("enc0a", in_ch, f(0))
        self.conv("enc0b", f(0), f(0))
        for lvl in range(1, spec.depth + 1):
            self.conv(f"enc{lvl}a", f(lvl - 1), f(lvl), bias=False)
            self.norm(f"enc{lvl}a.in", f(lvl))
            self.conv(f"enc{lvl}b", f(lvl), f(lvl), bias=False)
            self.norm(f"enc{lvl}b.in", f(lvl))
        for lvl in range(spec.depth - 1, stop_level - 1, -1):
            self.conv(f"up{lvl}", f(lvl + 1), f(lvl), bias=False)
            self.norm(f"up{lvl}.in", f(lvl))
            if lvl == 0:
                self.conv("dec0", 2 * f(0), f(0))
            else:
                self.conv(f"dec{lvl}", 2 * f(lvl), f(lvl), bias=False)
                self.norm(f"dec{lvl}.in", f(lvl))
        self.conv("head", f(stop_level), out_ch)

    def _block(self, name: str, x: Tensor, stride: int = 1, resize: bool = False) -> Tensor:
        x = self.apply_conv(name, x, stride, resize)
        if f"{name}.in.scale" in self.params:
            x = self.apply_norm(f"{name}.in", x)
        return _act(self.spec.activation, x)

    def __call__(self, x: Tensor) -> Tensor:
        div = 2 ** self.spec.depth
        if x.shape[1] % div or x.shape[2] % div:
            raise T.ShapeError(f"spatial dims {x.shape[1:3]} must be divisible by {div}")
        if x.shape[3] != self.in_ch:
            raise T.ShapeError(f"expected {self.in_ch} input channels, got {x.shape[3]}")
        skips = []
        for lvl in range(self.spec.depth + 1):
            x = self._block(f"enc{lvl}a", x, stride=1 if lvl == 0 else 2)
            x = self._block(f"enc{lvl}b", x)
            skips.append(x)
        for lvl in range(self.spec.depth - 1, self.stop_level - 1, -1):
            x = self._block(f"up{lvl}", x, resize=True)
            x = self._block(f"dec{lvl}", T.concat_channels(x, skips[lvl]))
        return _bounded(self.out_act, self.apply_conv("head", x))


class RestorationNet(Module):
    """Residual luminance restorer guided by the NIR estimate.

    Input is concat(Y, NIR) scaled to [-1, 1]. The global skip adds the
    network output to logit(Y), so a zero residual returns Y unchanged and the
    sigmoid keeps the result in [0, 1].
    """

    def __init__(self, rng: np.random.Generator, in_ch: int = 4, features: int = 32, blocks: int = 4):
        super().__init__(rng)
        self.blocks, self.in_ch = blocks, in_ch
        self.conv("stem", in_ch, features)
        for i in range(blocks):
            self.conv(f"res{i}a", features, features, bias=False)
            self.norm(f"res{i}a.in", features)
            self.conv(f"res{i}b", features, features, bias=False)
            self.norm(f"res{i}b.in", features)
        self.conv("head", features, 1)

    def __call__(self, y01: Tensor, guide01: Tensor) -> Tensor:
        if y01.shape[:3] != guide01.shape[:3]:
            raise T.ShapeError(f"luminance {y01.shape} and guide {guide01.shape} are not aligned")
        x = T.concat_channels(2.0 * y01 - 1.0, 2.0 * guide01 - 1.0)
        h = T.leaky_relu(self.apply_conv("stem", x))
        for i in range(self.blocks):
            r = T.leaky_relu(self.apply_norm(f"res{i}a.in", self.apply_conv(f"res{i}a", h)))
            r = self.apply_norm(f"res{i}b.in", self.apply_conv(f"res{i}b", r))
            h = h + r
        yc = T.clamp(y01, LOGIT_EPS, 1.0 - LOGIT_EPS)
        return T.sigmoid(self.apply_conv("head", h) + T.log(yc / (1.0 - yc)))


# -- colour helpers on tensors ------------------------------------------------------
def rgb_to_yuv_t(x: Tensor) -> Tensor:
    return T.matmul(x, RGB_TO_YUV.T)


def yuv_to_rgb_t(x: Tensor) -> Tensor:
    return T.matmul(x, YUV_TO_RGB.T)


def hsv_to_rgb_t(h: Tensor, s: Tensor, v: Tensor) -> Tensor:
    k = T.remainder(6.0 * h + np.array([5.0, 3.0, 1.0]), 6.0)
    ramp = T.clamp(T.minimum(k, 4.0 - k), 0.0, 1.0)
    return v - v * s * ramp


def estimate_vis(mixed, nir_est, p) -> Tensor:
    """VIS = clip(mixed - (1 + p) * NIR, 0, 1)."""
    mixed, nir_est, p = T.as_tensor(mixed), T.as_tensor(nir_est), T.as_tensor(p)
    if mixed.shape != nir_est.shape or mixed.shape != p.shape:
        raise T.ShapeError(f"estimate_vis shapes {mixed.shape}, {nir_est.shape}, {p.shape}")
    return T.clamp(mixed - (1.0 + p) * nir_est, 0.0, 1.0)


@dataclass(frozen=True)
class Topology:
    """Everything needed to rebuild a pipeline; serialised next to the parameters."""

    depth: int = 3
    base_features: int = 16
    restoration_features: int = 32
    restoration_blocks: int = 4
    colorization_half: bool = True
    variant: str = "full"
    colorspace: str = "yuv"
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise TopologyError(f"unknown variant {self.variant!r}")
        if self.colorspace not in COLORSPACES:
            raise TopologyError(f"unknown colorspace {self.colorspace!r}")
        if self.colorspace == "hsv" and (self.colorization_half or self.variant != "full"):
            raise TopologyError("the HSV pipeline is the full variant with full-size chroma")

    @property
    def multiple(self) -> int:
        return 2 ** self.depth

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "Topology":
        return cls(**d)


PAPER_TOPOLOGY = Topology(base_features=64)


@dataclass
class PipelineOutput:
    rgb: Tensor
    y_restored: Tensor
    nir_est: Tensor | None = None
    p: Tensor | None = None
    vis_est: Tensor | None = None
    uv: Tensor | None = None
    extras: dict = field(default_factory=dict)

    def intermediates(self) -> dict[str, Tensor]:
        return {k: v for k, v in (("nir_est", self.nir_est), ("p", self.p), ("vis_est", self.vis_est),
                                  ("y_restored", self.y_restored), ("uv", self.uv)) if v is not None}


class Pipeline:
    """Separation -> proportion -> VIS estimate -> (luminance || chroma) -> RGB.

    ``variant`` swaps parts out for the ablation study: ``direct`` maps MIX
    to RGB with a single U-Net, ``no_restoration`` keeps the estimated
    luminance as is, ``no_separation`` feeds MIX where the VIS and NIR
    estimates would go, and ``rgb`` replaces the luminance/chroma split by a
    U-Net working in RGB.
    """

    def __init__(self, topology: Topology = Topology()):
        self.topology = tp = topology
        seeds = np.random.SeedSequence(tp.seed).spawn(5)
        rngs = [np.random.default_rng(s) for s in seeds]
        spec = UNetSpec(tp.depth, tp.base_features)
        self.nets: dict[str, Module] = {}
        if tp.variant == "direct":
            self.nets["direct"] = UNet(spec, 3, 3, rngs[0], out_act="unit")
            return
        if tp.variant != "no_separation":
            self.nets["separation"] = UNet(spec, 3, 3, rngs[0], out_act="unit")
            self.nets["proportion"] = UNet(UNetSpec(tp.depth, tp.base_features, "relu"), 3, 3,
                                           rngs[1], out_act="unit")
        if tp.variant == "rgb":
            self.nets["rgb"] = UNet(spec, 6, 3, rngs[4], out_act="unit")
            return
        if tp.variant != "no_restoration":
            self.nets["restoration"] = RestorationNet(rngs[2], 4, tp.restoration_features,
                                                      tp.restoration_blocks)
        chroma_act = "unit" if tp.colorspace == "hsv" else "half"
        self.nets["colorization"] = UNet(spec, 6, 2, rngs[3], out_act=chroma_act,
                                         stop_level=1 if tp.colorization_half else 0)

    # -- parameters -------------------------------------------------------
    def parameters(self) -> dict[str, Tensor]:
        return {f"{net}/{name}": p for net, m in self.nets.items() for name, p in m.params.items()}

    def n_parameters(self) -> int:
        return sum(p.data.size for p in self.parameters().values())

    def state(self) -> dict[str, np.ndarray]:
        return {k: p.data.copy() for k, p in self.parameters().items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        if set(state) != set(params):
            missing = sorted(set(params) - set(state))[:3]
            extra = sorted(set(state) - set(params))[:3]
            raise TopologyError(f"parameter names do not match topology (missing {missing}, extra {extra})")
        for k, p in params.items():
            if state[k].shape != p.shape:
                raise TopologyError(f"{k}: shape {state[k].shape} != {p.shape}")
            p.data = np.asarray(state[k], dtype=p.data.dtype).copy()

    # -- forward ----------------------------------------------------------
    def check_input(self, mixed: Tensor) -> None:
        m = self.topology.multiple
        if mixed.ndim != 4 or mixed.shape[3] != 3:
            raise T.ShapeError(f"pipeline input must be (N, H, W, 3), got {mixed.shape}")
        if mixed.shape[1] % m or mixed.shape[2] % m:
            raise T.ShapeError(f"input {mixed.shape[1]}x{mixed.shape[2]} is not divisible by {m}; "
                               f"resize or crop to a multiple of {m}")

    def separate(self, mixed01: Tensor) -> tuple[Tensor, Tensor, Tensor]:
        # instance norm discards absolute level, so the net predicts the NIR share of MIX
        nir = mixed01 * self.nets["separation"](2.0 * mixed01 - 1.0)
        p = self.nets["proportion"](mixed01)
        return nir, p, estimate_vis(mixed01, nir, p)

    def __call__(self, mixed01) -> PipelineOutput:
        mixed01 = T.as_tensor(mixed01)
        self.check_input(mixed01)
        tp = self.topology
        if tp.variant == "direct":
            rgb = self.nets["direct"](2.0 * mixed01 - 1.0)
            return PipelineOutput(rgb=rgb, y_restored=T.channels(rgb_to_yuv_t(rgb), 0, 1))

        if tp.variant == "no_separation":
            nir, p, vis = mixed01, None, mixed01
        else:
            nir, p, vis = self.separate(mixed01)

        if tp.variant == "rgb":
            rgb = self.nets["rgb"](T.concat_channels(2.0 * vis - 1.0, 2.0 * nir - 1.0))
            return PipelineOutput(rgb=rgb, y_restored=T.channels(rgb_to_yuv_t(rgb), 0, 1),
                                  nir_est=nir, p=p, vis_est=vis)

        chroma_in = T.concat_channels(2.0 * vis - 1.0, 2.0 * nir - 1.0)
        chroma = self.nets["colorization"](chroma_in)
        chroma_full = T.upsample2x(chroma) if tp.colorization_half else chroma

        if tp.colorspace == "hsv":
            value = T.maximum(T.maximum(T.channels(vis, 0, 1), T.channels(vis, 1, 2)), T.channels(vis, 2, 3))
            y = self.nets["restoration"](value, nir) if "restoration" in self.nets else value
            rgb = hsv_to_rgb_t(T.channels(chroma_full, 0, 1), T.channels(chroma_full, 1, 2), y)
            return PipelineOutput(rgb=rgb, y_restored=y, nir_est=nir, p=p, vis_est=vis, uv=chroma)

        y_vis = T.channels(rgb_to_yuv_t(vis), 0, 1)
        y = self.nets["restoration"](y_vis, nir) if "restoration" in self.nets else y_vis
        rgb = T.clamp(yuv_to_rgb_t(T.concat_channels(y, chroma_full)), 0.0, 1.0)
        return PipelineOutput(rgb=rgb, y_restored=y, nir_est=nir, p=p, vis_est=vis, uv=chroma)

    # -- checkpoints --------------------------------------------------------
    def save(self, path: str | Path) -> Path:
        """Write ``<path>.params`` (float32 blob + index) and ``<path>.topology.json``."""
        path = Path(path)
        write_param_blob(path.with_suffix(".params"), self.state())
        path.with_suffix(".topology.json").write_text(json.dumps(self.topology.to_dict(), indent=2))
        return path

    @classmethod
    def load(cls, path: str | Path) -> "Pipeline":
        path = Path(path)
        topo = Topology.from_dict(json.loads(path.with_suffix(".topology.json").read_text()))
        pipe = cls(topo)
        pipe.load_state(read_param_blob(path.with_suffix(".params")))
        return pipe


def run_pipeline(pipe: Pipeline, mixed: np.ndarray) -> dict[str, np.ndarray]:
    """Inference on one H x W x 3 image in [0, 1]; returns numpy arrays without the batch axis."""
    out = pipe(Tensor(np.asarray(mixed)[None]))
    result = {"rgb": out.rgb.data[0]}
    result.update({k: v.data[0] for k, v in out.intermediates().items()})
    return result


# -- per-net entry points -------------------------------------------------------------
# All take [0, 1] tensors; the [-1, 1] scaling of the inputs happens inside.
def separation_net(pipe: Pipeline, mixed01) -> Tensor:
    return pipe.separate(T.as_tensor(mixed01))[0]


def proportion_net(pipe: Pipeline, mixed01) -> Tensor:
    return pipe.nets["proportion"](T.as_tensor(mixed01))


def restoration_net(pipe: Pipeline, y01, nir01) -> Tensor:
    return pipe.nets["restoration"](T.as_tensor(y01), T.as_tensor(nir01))


def colorization_net(pipe: Pipeline, vis01, nir01) -> Tensor:
    vis01, nir01 = T.as_tensor(vis01), T.as_tensor(nir01)
    return pipe.nets["colorization"](T.concat_channels(2.0 * vis01 - 1.0, 2.0 * nir01 - 1.0))


def full_pipeline(mixed: np.ndarray, pipe: Pipeline) -> dict[str, np.ndarray]:
    """Final RGB plus the intermediates nir_est, p, vis_est, y_restored and uv for one image."""
    return run_pipeline(pipe, mixed)
