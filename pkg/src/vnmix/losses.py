"""Training losses on Tensors: MAE, SSIM, structure-aware smoothness, perceptual, and the composites."""
from __future__ import annotations

from dataclasses import asdict, dataclass
from functools import lru_cache
from importlib import resources

import numpy as np

from . import tensor as T
from .fileio import read_param_blob
from .metrics import SSIM_K1, SSIM_K2, gaussian_window
from .tensor import Tensor


@dataclass
class LossWeights:
    alpha: float = 1.0
    beta: float = 1.0
    lambda_v: float = 100.0
    lambda_n: float = 100.0
    lambda_v2: float = 100.0
    lambda_y: float = 100.0
    gamma1: float = 0.1
    gamma2: float = 5.0
    gamma3: float = 1.0
    gamma4: float = 100.0
    lambda_g: float = 10.0
    # MAE weight on the deviation fraction p against D / max(S_n, eps)
    lambda_p: float = 100.0
    # ablation switches for the SSIM, smoothness and perceptual terms
    use_ssim: bool = True
    use_smooth: bool = True
    use_perceptual: bool = True

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not isinstance(v, bool) and v < 0:
                raise ValueError(f"loss weight {k} must be >= 0")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "LossWeights":
        return cls(**d)


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise T.ShapeError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def mae_loss(a, b) -> Tensor:
    a, b = T.as_tensor(a), T.as_tensor(b)
    _same_shape(a, b, "mae_loss")
    return T.absolute(a - b).mean()


def _blur(x: Tensor, win: np.ndarray) -> Tensor:
    return T.filter1d_valid(T.filter1d_valid(x, win, axis=1), win, axis=2)


def ssim_loss(a, b) -> Tensor:
    """Differentiable mean SSIM of two (N, H, W, C) tensors with values in [0, 1]."""
    a, b = T.as_tensor(a), T.as_tensor(b)
    _same_shape(a, b, "ssim_loss")
    win = gaussian_window()
    if min(a.shape[1:3]) < win.size:
        raise T.ShapeError(f"image {a.shape[1:3]} smaller than the SSIM window")
    c1, c2 = SSIM_K1 ** 2, SSIM_K2 ** 2
    mu_a, mu_b = _blur(a, win), _blur(b, win)
    mu_aa, mu_bb, mu_ab = mu_a * mu_a, mu_b * mu_b, mu_a * mu_b
    s_aa = _blur(a * a, win) - mu_aa
    s_bb = _blur(b * b, win) - mu_bb
    s_ab = _blur(a * b, win) - mu_ab
    num = (2.0 * mu_ab + c1) * (2.0 * s_ab + c2)
    den = (mu_aa + mu_bb + c1) * (s_aa + s_bb + c2)
    return (num / den).mean()


def _diffs(x: Tensor) -> tuple[Tensor, Tensor]:
    dh = x[:, :, 1:, :] - x[:, :, :-1, :]
    dv = x[:, 1:, :, :] - x[:, :-1, :, :]
    return dh, dv


def smoothness_loss(i_n, i_m, lambda_g: float = 10.0) -> Tensor:
    """Mean of |grad I_n| * exp(-lambda_g |grad I_m|) over both directions.

    Forward differences; the replicated border contributes zero gradient but
    still counts in the mean. ``i_m`` may have one channel, in which case it
    guides every channel of ``i_n``.
    """
    i_n, i_m = T.as_tensor(i_n), T.as_tensor(i_m)
    if i_n.shape[:3] != i_m.shape[:3] or i_m.shape[3] not in (1, i_n.shape[3]):
        raise T.ShapeError(f"smoothness_loss: shapes {i_n.shape} and {i_m.shape} do not align")
    count = float(np.prod(i_n.shape))
    total = None
    for dn, dm in zip(_diffs(i_n), _diffs(i_m)):
        term = (T.absolute(dn) * T.exp(T.absolute(dm) * -lambda_g)).sum()
        total = term if total is None else total + term
    return total * (1.0 / count)


# -- perceptual surrogate -------------------------------------------------------
PERCEPTUAL_SEED = 20200101
PERCEPTUAL_FEATURES = (8, 16, 32)
_ASSET = "perceptual_extractor.f32"


def make_extractor_weights(seed: int = PERCEPTUAL_SEED) -> dict[str, np.ndarray]:
    """Weights of the fixed 3-layer stride-2 feature extractor, regenerated from ``seed``."""
    rng = np.random.default_rng(seed)
    weights, cin = {}, 3
    for i, cout in enumerate(PERCEPTUAL_FEATURES):
        weights[f"conv{i}.w"] = T.he_uniform(rng, (3, 3, cin, cout)).astype(np.float32)
        weights[f"conv{i}.b"] = np.zeros(cout, dtype=np.float32)
        cin = cout
    return weights


@lru_cache(maxsize=1)
def extractor_weights() -> dict[str, np.ndarray]:
    """The shipped extractor weights (identical to ``make_extractor_weights()``)."""
    with resources.as_file(resources.files("vnmix") / "assets" / _ASSET) as path:
        return read_param_blob(path)


def perceptual_features(x: Tensor) -> list[Tensor]:
    w = extractor_weights()
    feats, h = [], x
    for i in range(len(PERCEPTUAL_FEATURES)):
        h = T.leaky_relu(T.conv2d(h, Tensor(w[f"conv{i}.w"]), Tensor(w[f"conv{i}.b"]), stride=2))
        feats.append(h)
    return feats


def perceptual_loss(a, b) -> Tensor:
    """Mean over layers of the MAE between extractor features of ``a`` and ``b``."""
    a, b = T.as_tensor(a), T.as_tensor(b)
    _same_shape(a, b, "perceptual_loss")
    if a.shape[-1] != 3:
        raise T.ShapeError("perceptual_loss expects RGB input")
    fa, fb = perceptual_features(a), perceptual_features(b)
    total = None
    for x, y in zip(fa, fb):
        term = mae_loss(x, y)
        total = term if total is None else total + term
    return total * (1.0 / len(fa))


# -- composites -----------------------------------------------------------------
def separation_loss(nir_est, vis_est, nir_gt, vis_gt, mixed, w: LossWeights,
                    p=None, p_target=None) -> Tensor:
    """Weighted MAE + (1 - SSIM) on both separated signals plus NIR smoothness guided by the input.

    With ``p`` and ``p_target`` given, ``lambda_p * MAE(p, p_target)`` is added.
    """
    total = T.Tensor(0.0)
    for weight, est, gt in ((w.lambda_v, vis_est, vis_gt), (w.lambda_n, nir_est, nir_gt)):
        if weight == 0:
            continue
        group = mae_loss(est, gt)
        if w.use_ssim:
            group = group + (1.0 - ssim_loss(est, gt))
        total = total + weight * group
    if w.use_smooth and w.gamma1:
        total = total + w.gamma1 * smoothness_loss(nir_est, mixed, w.lambda_g)
    if p is not None and p_target is not None and w.lambda_p:
        total = total + w.lambda_p * mae_loss(p, p_target)
    return total


def restoration_loss(final_rgb, y_restored, rgb_gt, y_gt, nir_est, w: LossWeights) -> Tensor:
    """Restoration objective on the RGB result and the restored luminance.

    The smoothness terms are guided by the channel mean of ``nir_est``. Pass
    a detached tensor to keep gradients out of the guide.
    """
    guide = T.mean(T.as_tensor(nir_est), axis=-1, keepdims=True)
    total = T.Tensor(0.0)
    if w.lambda_v2:
        total = total + w.lambda_v2 * mae_loss(final_rgb, rgb_gt)
        if w.use_ssim:
            total = total + w.lambda_v2 * (1.0 - ssim_loss(final_rgb, rgb_gt))
    if w.lambda_y:
        total = total + w.lambda_y * mae_loss(y_restored, y_gt)
    if w.use_smooth:
        if w.gamma2:
            total = total + w.gamma2 * smoothness_loss(y_restored, guide, w.lambda_g)
        if w.gamma3:
            total = total + w.gamma3 * smoothness_loss(final_rgb, guide, w.lambda_g)
    if w.use_perceptual and w.gamma4:
        total = total + w.gamma4 * perceptual_loss(final_rgb, rgb_gt)
    return total


def total_loss(sep, res, w: LossWeights) -> Tensor:
    return w.alpha * T.as_tensor(sep) + w.beta * T.as_tensor(res)
