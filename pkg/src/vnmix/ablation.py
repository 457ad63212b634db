"""Ablation conditions 1-10 and held-out evaluation of trained pipelines."""
from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .dataset import Sample
from .image import RGB_TO_YUV
from .losses import LossWeights
from .metrics import MetricReport, psnr, to_8bit
from .networks import Pipeline, Topology, run_pipeline


@dataclass(frozen=True)
class AblationCondition:
    id: int
    label: str
    use_ssim: bool = True
    use_smooth: bool = True
    use_perceptual: bool = True
    separation: bool = True
    restoration: bool = True
    colorization_half: bool = True
    colorspace: str = "yuv"  # yuv | hsv | rgb

    def topology(self, base: Topology = Topology()) -> Topology:
        if not self.separation and not self.restoration:
            variant = "direct"
        elif self.colorspace == "rgb":
            variant = "rgb"
        elif not self.separation:
            variant = "no_separation"
        elif not self.restoration:
            variant = "no_restoration"
        else:
            variant = "full"
        return replace(base, variant=variant, colorization_half=self.colorization_half,
                       colorspace="hsv" if self.colorspace == "hsv" else "yuv")

    def weights(self, base: LossWeights = LossWeights()) -> LossWeights:
        return replace(base, use_ssim=self.use_ssim, use_smooth=self.use_smooth,
                       use_perceptual=self.use_perceptual)


CONDITIONS = {c.id: c for c in (
    AblationCondition(1, "full model"),
    AblationCondition(2, "MAE only", use_ssim=False, use_smooth=False, use_perceptual=False),
    AblationCondition(3, "MAE + SSIM", use_smooth=False, use_perceptual=False),
    AblationCondition(4, "MAE + SSIM + smoothness", use_perceptual=False),
    AblationCondition(5, "w/o separation, w/o restoration", separation=False, restoration=False),
    AblationCondition(6, "with separation, w/o restoration", restoration=False),
    AblationCondition(7, "w/o separation, with restoration", separation=False),
    AblationCondition(8, "full-resolution chroma", colorization_half=False),
    AblationCondition(9, "HSV colour space", colorization_half=False, colorspace="hsv"),
    AblationCondition(10, "RGB colour space", colorspace="rgb"),
)}


def parse_conditions(text: str) -> list[int]:
    """Parse ``"1..10"``, ``"1,5,9"`` or a mix such as ``"1..4,9"``."""
    ids: list[int] = []
    for part in filter(None, (p.strip() for p in text.split(","))):
        m = re.fullmatch(r"(\d+)\s*(?:\.\.|-)\s*(\d+)", part)
        if m:
            lo, hi = int(m.group(1)), int(m.group(2))
            if lo > hi:
                raise ValueError(f"empty condition range {part!r}")
            ids.extend(range(lo, hi + 1))
        elif part.isdigit():
            ids.append(int(part))
        else:
            raise ValueError(f"cannot parse condition {part!r}")
    unknown = [i for i in ids if i not in CONDITIONS]
    if unknown:
        raise ValueError(f"unknown ablation condition(s) {unknown}; valid ids are 1-10")
    if not ids:
        raise ValueError("no conditions given")
    return list(dict.fromkeys(ids))


def _luma(rgb: np.ndarray) -> np.ndarray:
    return rgb @ RGB_TO_YUV[0][:, None]


@dataclass
class Evaluation:
    report: MetricReport = field(default_factory=MetricReport)
    separation: list[dict] = field(default_factory=list)
    night_luma: list[dict] = field(default_factory=list)

    def summary(self) -> dict:
        out = {"rgb": self.report.mean}
        for key, rows in (("separation", self.separation), ("night_luma", self.night_luma)):
            if rows:
                out[key] = {k: float(np.mean([r[k] for r in rows])) for k in rows[0] if k != "name"}
        return out


def evaluate(pipe: Pipeline, samples: Sequence[Sample]) -> Evaluation:
    """Score a pipeline on held-out samples.

    RGB output is compared with the restoration target in 8-bit. Separation
    quality compares the NIR estimate (and, as a baseline, the mixed input)
    with the true NIR capture. At night the restored luminance and the
    luminance of the VIS estimate are both compared with the long exposure.
    """
    ev = Evaluation()
    for s in samples:
        out = run_pipeline(pipe, s.mixed)
        ev.report.add(s.id, out["rgb"], s.target)
        if "nir_est" in out and pipe.topology.variant != "no_separation":
            ev.separation.append({"name": s.id, "nir_psnr": psnr(to_8bit(out["nir_est"]), to_8bit(s.nir)),
                                  "baseline_psnr": psnr(to_8bit(s.mixed), to_8bit(s.nir))})
        if s.night and "vis_est" in out and pipe.topology.colorspace == "yuv":
            y_ref = to_8bit(_luma(s.target))
            ev.night_luma.append({"name": s.id,
                                  "restored_psnr": psnr(to_8bit(out["y_restored"]), y_ref),
                                  "unrestored_psnr": psnr(to_8bit(_luma(out["vis_est"])), y_ref)})
    return ev


def table_row(condition: AblationCondition, ev: Evaluation) -> dict:
    mean = ev.report.mean
    return {"condition": condition.id, "label": condition.label, "psnr": mean["psnr"], "ssim": mean["ssim"]}


def format_table(rows: Sequence[dict]) -> str:
    lines = [f"{'Condition':<44} {'PSNR':>7} {'SSIM':>6}"]
    for r in rows:
        lines.append(f"{str(r['condition']) + '. ' + r['label']:<44} {r['psnr']:7.2f} {r['ssim']:6.3f}")
    return "\n".join(lines)

