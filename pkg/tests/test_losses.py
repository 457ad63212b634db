from dataclasses import replace

import numpy as np
import pytest

from vnmix import losses as L
from vnmix import tensor as T
from gradcheck import TOL, check_gradients

rng = np.random.default_rng(7)
SHAPE = (1, 12, 12, 3)


def img(shape=SHAPE):
    return rng.uniform(0.05, 0.95, shape)


def t64(x):
    return T.Tensor(np.asarray(x, dtype=np.float64))


def test_default_weights():
    w = L.LossWeights()
    assert (w.alpha, w.beta) == (1.0, 1.0)
    assert w.lambda_v == w.lambda_n == w.lambda_v2 == w.lambda_y == 100.0
    assert (w.gamma1, w.gamma2, w.gamma3, w.gamma4, w.lambda_g) == (0.1, 5.0, 1.0, 100.0, 10.0)
    with pytest.raises(ValueError):
        L.LossWeights(alpha=-1.0)


def test_mae():
    x = img()
    assert L.mae_loss(x, x).item() == 0.0
    assert L.mae_loss(np.zeros(SHAPE), np.ones(SHAPE)).item() == 1.0
    a, b = img(), img()
    with T.precision(np.float64):
        assert abs(L.mae_loss(a, b).item() - np.mean(np.abs(a - b))) < 1e-7
    with pytest.raises(T.ShapeError):
        L.mae_loss(np.zeros((1, 2)), np.zeros((2, 1)))


def test_ssim_loss_properties():
    x = img()
    with T.precision(np.float64):
        assert L.ssim_loss(x, x).item() == pytest.approx(1.0, abs=1e-12)
        c1 = 0.01 ** 2
        val = L.ssim_loss(np.zeros(SHAPE), np.ones(SHAPE)).item()
        assert val == pytest.approx(c1 / (1 + c1), rel=1e-9)
    with pytest.raises(T.ShapeError):
        L.ssim_loss(np.zeros((1, 8, 8, 1)), np.zeros((1, 8, 8, 1)))


def brute_smoothness(i_n, i_m, lam):
    n, h, w, c = i_n.shape
    total = 0.0
    for b in range(n):
        for y in range(h):
            for x in range(w):
                for k in range(c):
                    km = k if i_m.shape[3] > 1 else 0
                    if x + 1 < w:
                        total += abs(i_n[b, y, x + 1, k] - i_n[b, y, x, k]) * np.exp(
                            -lam * abs(i_m[b, y, x + 1, km] - i_m[b, y, x, km]))
                    if y + 1 < h:
                        total += abs(i_n[b, y + 1, x, k] - i_n[b, y, x, k]) * np.exp(
                            -lam * abs(i_m[b, y + 1, x, km] - i_m[b, y, x, km]))
    return total / i_n.size


def test_smoothness_oracles():
    guide = img()
    assert L.smoothness_loss(np.full(SHAPE, 0.3), guide).item() == 0.0
    a, m = img(), img()
    with T.precision(np.float64):
        assert abs(L.smoothness_loss(a, m, 10.0).item() - brute_smoothness(a, m, 10.0)) < 1e-6
        gray = img((1, 12, 12, 1))
        assert abs(L.smoothness_loss(a, gray, 3.0).item() - brute_smoothness(a, gray, 3.0)) < 1e-6
    with pytest.raises(T.ShapeError):
        L.smoothness_loss(np.zeros((1, 4, 4, 3)), np.zeros((1, 4, 5, 3)))


def test_smoothness_vanishes_on_shared_edges():
    step = np.zeros(SHAPE)
    step[:, :, 6:, :] = 1.0
    assert L.smoothness_loss(step, step, 1000.0).item() < 1e-12
    assert L.smoothness_loss(step, np.zeros(SHAPE), 1000.0).item() > 0


def test_perceptual_asset_matches_seed():
    shipped, regenerated = L.extractor_weights(), L.make_extractor_weights()
    assert shipped.keys() == regenerated.keys()
    for k in shipped:
        np.testing.assert_array_equal(shipped[k], regenerated[k])


def test_perceptual_properties():
    x = img((1, 16, 16, 3))
    assert L.perceptual_loss(x, x).item() == 0.0
    for _ in range(100):
        a, b = img((1, 16, 16, 3)), img((1, 16, 16, 3))
        ab, ba = L.perceptual_loss(a, b).item(), L.perceptual_loss(b, a).item()
        assert ab > 0 and ab == pytest.approx(ba, rel=1e-6)
    with pytest.raises(T.ShapeError):
        L.perceptual_loss(np.zeros((1, 8, 8, 1)), np.zeros((1, 8, 8, 1)))


def test_separation_composition():
    nir, vis, nir_gt, vis_gt, mixed = (img() for _ in range(5))
    w = L.LossWeights()
    with T.precision(np.float64):
        got = L.separation_loss(nir, vis, nir_gt, vis_gt, mixed, w).item()
        want = (w.lambda_v * (L.mae_loss(vis, vis_gt).item() + 1 - L.ssim_loss(vis, vis_gt).item())
                + w.lambda_n * (L.mae_loss(nir, nir_gt).item() + 1 - L.ssim_loss(nir, nir_gt).item())
                + w.gamma1 * L.smoothness_loss(nir, mixed, w.lambda_g).item())
        assert abs(got - want) < 1e-6
        perfect = L.separation_loss(nir_gt, vis_gt, nir_gt, vis_gt, mixed, w).item()
        assert perfect == pytest.approx(w.gamma1 * L.smoothness_loss(nir_gt, mixed).item(), abs=1e-9)


def test_separation_proportion_term():
    nir, vis, nir_gt, vis_gt, mixed, p, p_gt = (img() for _ in range(7))
    w = L.LossWeights()
    with T.precision(np.float64):
        base = L.separation_loss(nir, vis, nir_gt, vis_gt, mixed, w).item()
        got = L.separation_loss(nir, vis, nir_gt, vis_gt, mixed, w, p=p, p_target=p_gt).item()
        assert got - base == pytest.approx(w.lambda_p * np.mean(np.abs(p - p_gt)), abs=1e-9)
        off = replace(w, lambda_p=0.0)
        assert L.separation_loss(nir, vis, nir_gt, vis_gt, mixed, off, p=p, p_target=p_gt).item() == base


def test_separation_vis_weight_zero_cuts_gradient():
    w = replace(L.LossWeights(), lambda_v=0.0)
    vis = T.Tensor(img(), requires_grad=True)
    nir = T.Tensor(img(), requires_grad=True)
    L.separation_loss(nir, vis, img(), img(), img(), w).backward()
    assert vis.grad is None or not np.any(vis.grad)
    assert np.any(nir.grad)


def test_restoration_composition():
    rgb, rgb_gt, nir = img(), img(), img()
    y, y_gt = img((1, 12, 12, 1)), img((1, 12, 12, 1))
    w = L.LossWeights()
    with T.precision(np.float64):
        guide = nir.mean(axis=-1, keepdims=True)
        got = L.restoration_loss(rgb, y, rgb_gt, y_gt, nir, w).item()
        want = (w.lambda_v2 * L.mae_loss(rgb, rgb_gt).item() + w.lambda_y * L.mae_loss(y, y_gt).item()
                + w.lambda_v2 * (1 - L.ssim_loss(rgb, rgb_gt).item())
                + w.gamma2 * L.smoothness_loss(y, guide).item()
                + w.gamma3 * L.smoothness_loss(rgb, guide).item()
                + w.gamma4 * L.perceptual_loss(rgb, rgb_gt).item())
        assert abs(got - want) < 1e-6
        perfect = L.restoration_loss(rgb_gt, y_gt, rgb_gt, y_gt, nir, w).item()
        resid = w.gamma2 * L.smoothness_loss(y_gt, guide).item() + w.gamma3 * L.smoothness_loss(rgb_gt, guide).item()
        assert perfect == pytest.approx(resid, abs=1e-9)
    zero = L.LossWeights(**{k: 0.0 for k in ("lambda_v2", "lambda_y", "gamma2", "gamma3", "gamma4")})
    assert L.restoration_loss(rgb, y, rgb_gt, y_gt, nir, zero).item() == 0.0


def test_total_loss():
    w = L.LossWeights()
    assert L.total_loss(2.0, 3.0, w).item() == 5.0
    assert L.total_loss(2.0, 3.0, replace(w, beta=0.0)).item() == 2.0
    w2 = replace(w, alpha=0.5, beta=2.0)
    assert L.total_loss(4.0, 1.0, w2).item() == pytest.approx(
        L.total_loss(2.0, 0.0, w2).item() + L.total_loss(2.0, 1.0, w2).item())


# -- gradient checks on every loss (64-bit, <= 16x16) -------------------------------
def test_grad_mae():
    assert check_gradients(L.mae_loss, img(), img()) <= TOL


def test_grad_ssim():
    assert check_gradients(L.ssim_loss, img(), img()) <= TOL


def test_grad_smoothness():
    assert check_gradients(lambda a, m: L.smoothness_loss(a, m, 10.0), img(), img()) <= TOL


def test_grad_perceptual():
    assert check_gradients(L.perceptual_loss, img((1, 8, 8, 3)), img((1, 8, 8, 3))) <= TOL


def test_grad_separation_loss():
    gts = [img() for _ in range(3)]

    def fn(nir, vis):
        return L.separation_loss(nir, vis, t64(gts[0]), t64(gts[1]), t64(gts[2]), L.LossWeights())

    assert check_gradients(fn, img(), img()) <= TOL


def test_grad_restoration_loss():
    rgb_gt, y_gt, nir = img(), img((1, 12, 12, 1)), img()

    def fn(rgb, y):
        return L.restoration_loss(rgb, y, t64(rgb_gt), t64(y_gt), t64(nir), L.LossWeights())

    assert check_gradients(fn, img(), img((1, 12, 12, 1))) <= TOL


def test_grad_total_loss():
    gts = [img() for _ in range(5)]

    def fn(nir, vis, rgb):
        w = L.LossWeights()
        sep = L.separation_loss(nir, vis, t64(gts[0]), t64(gts[1]), t64(gts[2]), w)
        y = T.mean(rgb, axis=-1, keepdims=True)
        res = L.restoration_loss(rgb, y, t64(gts[3]), t64(gts[4][..., :1]), nir, w)
        return L.total_loss(sep, res, w)

    assert check_gradients(fn, img(), img(), img()) <= TOL
