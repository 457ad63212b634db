"""Adam training loop with augmentation, plateau LR decay and checkpointing."""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import losses as L
from . import tensor as T
from .dataset import Sample
from .fileio import read_param_blob, write_param_blob
from .image import RGB_TO_YUV, rgb_to_hsv_array
from .networks import Pipeline
from .tensor import Tensor

log = logging.getLogger(__name__)

PROPORTION_EPS = 1e-3


class NumericalError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 4
    patch_size: int = 64
    epochs: int = 60
    plateau_patience: int = 10
    lr_decay: float = 0.5
    plateau_threshold: float = 1e-4
    seed: int = 0
    checkpoint_every: int = 10
    # epochs of separation-only training before the joint objective
    pretrain_separation_epochs: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.patch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size, patch_size must be >= 1 and epochs >= 0")

    @classmethod
    def preset(cls, name: str, **overrides) -> "TrainConfig":
        if name not in PRESETS:
            raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        return replace(PRESETS[name], **overrides)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


PRESETS = {
    # one CPU core, about 30 minutes on 32 scenes; the short schedule needs a larger step
    "desk": TrainConfig(lr=1e-3, epochs=100),
    "paper": TrainConfig(batch_size=10, patch_size=256, epochs=3000),
}


# -- optimizer ----------------------------------------------------------------------
@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0

    def save(self, path: str | Path) -> None:
        arrays = {f"m/{k}": a for k, a in self.m.items()}
        arrays.update({f"v/{k}": a for k, a in self.v.items()})
        write_param_blob(path, arrays)

    @classmethod
    def load(cls, path: str | Path, t: int) -> "AdamState":
        arrays = read_param_blob(path)
        m = {k[2:]: a for k, a in arrays.items() if k.startswith("m/")}
        v = {k[2:]: a for k, a in arrays.items() if k.startswith("v/")}
        return cls(m, v, t)


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdamState,
              cfg: TrainConfig, lr: float | None = None) -> AdamState:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    lr = cfg.lr if lr is None else lr
    for name, g in grads.items():
        if g is None:
            continue
        if g.shape != params[name].shape:
            raise T.ShapeError(f"gradient for {name} has shape {g.shape}, parameter {params[name].shape}")
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient for {name}")
    state.t += 1
    c1 = 1.0 - cfg.beta1 ** state.t
    c2 = 1.0 - cfg.beta2 ** state.t
    for name, g in grads.items():
        if g is None:
            continue
        p = params[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        p.data = p.data - (lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)).astype(p.data.dtype)
    return state


def lr_schedule(history: Sequence[float], cfg: TrainConfig) -> float:
    """Learning rate after the epochs in ``history``.

    The rate halves whenever the best loss has not improved by a relative
    ``plateau_threshold`` for ``plateau_patience`` consecutive epochs.
    """
    lr, best, wait = cfg.lr, math.inf, 0
    for loss in history:
        if loss < best * (1.0 - cfg.plateau_threshold) or not math.isfinite(best):
            best, wait = loss, 0
        else:
            wait += 1
            if wait >= cfg.plateau_patience:
                lr *= cfg.lr_decay
                wait = 0
    return lr


# -- augmentation --------------------------------------------------------------------
@dataclass(frozen=True)
class AugmentDraw:
    y0: int = 0
    x0: int = 0
    flip: bool = False
    rot: int = 0  # quarter turns


def draw_augmentation(shape: tuple[int, int], patch: int, rng: np.random.Generator) -> AugmentDraw:
    h, w = shape
    if patch > h or patch > w:
        raise ValueError(f"crop {patch} larger than image {h}x{w}")
    return AugmentDraw(int(rng.integers(0, h - patch + 1)), int(rng.integers(0, w - patch + 1)),
                       bool(rng.integers(0, 2)), int(rng.integers(0, 4)))


def apply_augmentation(arrays: dict[str, np.ndarray], draw: AugmentDraw, patch: int) -> dict[str, np.ndarray]:
    out = {}
    for k, a in arrays.items():
        if a is None:
            out[k] = None
            continue
        if patch > a.shape[0] or patch > a.shape[1]:
            raise ValueError(f"crop {patch} larger than image {a.shape[:2]}")
        a = a[draw.y0:draw.y0 + patch, draw.x0:draw.x0 + patch]
        if draw.flip:
            a = a[:, ::-1]
        a = np.rot90(a, draw.rot, axes=(0, 1))
        out[k] = np.ascontiguousarray(a)
    return out


def augment(sample: Sample, rng: np.random.Generator, patch: int) -> Sample:
    """Random crop, horizontal flip and quarter-turn, shared by all rasters of the sample."""
    draw = draw_augmentation(sample.mixed.shape[:2], patch, rng)
    return sample.replace_arrays(apply_augmentation(sample.arrays(), draw, patch))


# -- losses for a batch ---------------------------------------------------------------
def proportion_target(deviation: np.ndarray, nir: np.ndarray) -> np.ndarray:
    return np.clip(deviation / np.maximum(nir, PROPORTION_EPS), 0.0, 1.0)


@dataclass
class Batch:
    mixed: np.ndarray
    vis: np.ndarray
    nir: np.ndarray
    deviation: np.ndarray
    target: np.ndarray
    night: np.ndarray

    @classmethod
    def from_samples(cls, samples: Sequence[Sample]) -> "Batch":
        def stack(key):
            return np.stack([getattr(s, key) for s in samples]).astype(np.float32)

        return cls(stack("mixed"), stack("vis"), stack("nir"), stack("deviation"),
                   np.stack([s.target for s in samples]).astype(np.float32),
                   np.array([s.night for s in samples]))


def batch_losses(pipe: Pipeline, batch: Batch, w: L.LossWeights,
                 separation_only: bool = False) -> dict[str, Tensor]:
    tp = pipe.topology
    mixed = Tensor(batch.mixed)
    out = pipe(mixed)
    has_sep = out.p is not None
    sep = Tensor(0.0)
    if has_sep:
        sep = L.separation_loss(out.nir_est, out.vis_est, Tensor(batch.nir), Tensor(batch.vis), mixed, w,
                                p=out.p, p_target=Tensor(proportion_target(batch.deviation, batch.nir)))
    if separation_only and has_sep:
        return {"total": w.alpha * sep, "separation": sep, "restoration": Tensor(0.0)}
    if tp.colorspace == "hsv":
        y_gt = rgb_to_hsv_array(batch.target)[..., 2:3]
    else:
        y_gt = batch.target @ RGB_TO_YUV[0][:, None]
    # the guide only shapes the penalty; letting gradients through would reward edgy NIR estimates
    guide = (out.nir_est if out.nir_est is not None else mixed).detach()
    res = L.restoration_loss(out.rgb, out.y_restored, Tensor(batch.target), Tensor(y_gt), guide, w)
    return {"total": L.total_loss(sep, res, w), "separation": sep, "restoration": res}


# -- training loop ------------------------------------------------------------------------
@dataclass
class TrainResult:
    curve: list[dict]
    checkpoint: Path | None
    pipeline: Pipeline


def _epoch_rng(seed: int, epoch: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, epoch]))


def save_training_state(path: Path, pipe: Pipeline, state: AdamState, curve: list[dict],
                        cfg: TrainConfig, weights: L.LossWeights) -> Path:
    pipe.save(path)
    state.save(path.with_suffix(".adam"))
    path.with_suffix(".train.json").write_text(json.dumps(
        {"t": state.t, "epoch": len(curve), "curve": curve, "config": cfg.to_dict(),
         "weights": weights.to_dict()}, indent=1))
    return path


def write_curve_csv(path: str | Path, curve: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=["epoch", "lr", "total", "separation", "restoration"])
        writer.writeheader()
        for row in curve:
            writer.writerow({k: (f"{v:.9g}" if isinstance(v, float) else v) for k, v in row.items()})


def train(samples: Sequence[Sample], pipe: Pipeline, weights: L.LossWeights, cfg: TrainConfig,
          out: str | Path | None = None, resume: str | Path | None = None,
          epochs: int | None = None) -> TrainResult:
    """Train ``pipe`` in place on day and night samples.

    The loss curve gets one row per epoch. With ``out`` set, a checkpoint is
    written every ``checkpoint_every`` epochs and at the end, and the curve is
    saved as ``<out>.csv``. ``resume`` continues from a checkpoint written by
    this function; ``epochs`` stops early after that many epochs in total.
    """
    if not samples:
        raise ValueError("empty dataset")
    phases = {s.phase for s in samples}
    if phases != {"day", "night"}:
        log.warning("training set lacks %s samples", {"day", "night"} - phases)
    stop = cfg.epochs if epochs is None else min(epochs, cfg.epochs)
    out = Path(out) if out is not None else None
    state, curve = AdamState(), []
    if resume is not None:
        resume = Path(resume)
        info = json.loads(resume.with_suffix(".train.json").read_text())
        pipe.load_state(Pipeline.load(resume).state())
        state = AdamState.load(resume.with_suffix(".adam"), info["t"])
        curve = info["curve"]
    params = pipe.parameters()
    last_good = pipe.state()
    for epoch in range(len(curve), stop):
        lr = lr_schedule([row["total"] for row in curve], cfg)
        rng = _epoch_rng(cfg.seed, epoch)
        order = rng.permutation(len(samples))
        sep_only = epoch < cfg.pretrain_separation_epochs
        sums = {"total": 0.0, "separation": 0.0, "restoration": 0.0}
        n_batches = 0
        for start in range(0, len(order), cfg.batch_size):
            chunk = [augment(samples[i], rng, cfg.patch_size) for i in order[start:start + cfg.batch_size]]
            parts = batch_losses(pipe, Batch.from_samples(chunk), weights, separation_only=sep_only)
            total = parts["total"]
            if not math.isfinite(total.item()):
                if out is not None:
                    pipe.load_state(last_good)
                    save_training_state(out, pipe, state, curve, cfg, weights)
                raise NumericalError(f"loss became {total.item()} in epoch {epoch + 1}; "
                                     f"last good checkpoint: {out}")
            T.zero_grads(params.values())
            total.backward()
            adam_step(params, {k: p.grad for k, p in params.items()}, state, cfg, lr)
            for k in sums:
                sums[k] += parts[k].item()
            n_batches += 1
        row = {"epoch": epoch + 1, "lr": lr, **{k: v / n_batches for k, v in sums.items()}}
        curve.append(row)
        last_good = pipe.state()
        log.info("epoch %d lr %.2e total %.4f sep %.4f res %.4f", row["epoch"], lr,
                 row["total"], row["separation"], row["restoration"])
        if out is not None and cfg.checkpoint_every and (epoch + 1) % cfg.checkpoint_every == 0:
            save_training_state(out, pipe, state, curve, cfg, weights)
    if out is not None:
        save_training_state(out, pipe, state, curve, cfg, weights)
        write_curve_csv(out.with_suffix(".csv"), curve)
    return TrainResult(curve, out, pipe)
