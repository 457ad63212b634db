import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vnmix import losses
from vnmix import tensor as T
from vnmix.metrics import MetricReport, colourfulness, psnr, ssim

rng = np.random.default_rng(5)


def test_psnr_closed_form():
    a = rng.uniform(0, 0.8, (8, 8, 3))
    assert psnr(a, a + 0.1) == pytest.approx(20.0, abs=1e-6)
    assert psnr(a, a) == math.inf


def test_psnr_matches_direct_formula():
    a, b = rng.uniform(size=(16, 16, 3)), rng.uniform(size=(16, 16, 3))
    oracle = 10 * math.log10(1.0 / float(np.mean((a - b) ** 2)))
    assert abs(psnr(a, b) - oracle) < 1e-9


def test_psnr_shape_mismatch():
    with pytest.raises(ValueError):
        psnr(np.zeros((2, 2)), np.zeros((2, 3)))


def test_psnr_decreases_with_noise():
    a = rng.uniform(size=(16, 16, 3))
    noise = rng.normal(size=a.shape)
    values = [psnr(a, a + s * noise) for s in (0.01, 0.02, 0.05, 0.1)]
    assert all(x > y for x, y in zip(values, values[1:]))


def test_ssim_identity_and_constants():
    x = rng.uniform(size=(16, 16, 3))
    assert ssim(x, x) == 1.0
    c1 = 0.01 ** 2
    assert ssim(np.zeros((16, 16)), np.ones((16, 16))) == pytest.approx(c1 / (1 + c1), rel=1e-9)
    assert ssim(np.zeros((16, 16)), np.ones((16, 16))) == pytest.approx(9.999e-5, abs=1e-8)


def test_ssim_symmetric():
    a, b = rng.uniform(size=(16, 16, 3)), rng.uniform(size=(16, 16, 3))
    assert ssim(a, b) == pytest.approx(ssim(b, a), abs=1e-12)
    assert psnr(a, b) == pytest.approx(psnr(b, a), abs=1e-12)


def test_ssim_too_small():
    with pytest.raises(ValueError):
        ssim(np.zeros((8, 8)), np.zeros((8, 8)))


def test_ssim_loss_agrees_with_metric():
    with T.precision(np.float64):
        for _ in range(20):
            a, b = rng.uniform(size=(16, 16, 3)), rng.uniform(size=(16, 16, 3))
            b = 0.5 * a + 0.5 * b
            loss = losses.ssim_loss(T.Tensor(a[None]), T.Tensor(b[None])).item()
            assert abs(loss - ssim(a, b)) < 1e-6


def test_colourfulness_oracles():
    assert colourfulness(np.full((4, 4, 3), 0.37)) == 0.0
    gray = np.repeat(rng.uniform(size=(6, 6, 1)), 3, axis=2)
    assert colourfulness(gray) == 0.0
    red = np.zeros((4, 4, 3))
    red[..., 0] = 1.0
    assert colourfulness(red) == pytest.approx(0.3 * math.sqrt(255 ** 2 + 127.5 ** 2), abs=1e-9)
    with pytest.raises(ValueError):
        colourfulness(np.zeros((4, 4)))


def brute_colourfulness(rgb):
    px = [tuple(255.0 * v for v in p) for p in rgb.reshape(-1, 3)]
    rg = [r - g for r, g, _ in px]
    yb = [0.5 * (r + g) - b for r, g, b in px]

    def mean(v):
        return sum(v) / len(v)

    def var(v):
        m = mean(v)
        return sum((x - m) ** 2 for x in v) / len(v)

    return math.sqrt(var(rg) + var(yb)) + 0.3 * math.sqrt(mean(rg) ** 2 + mean(yb) ** 2)


def test_colourfulness_brute_force():
    x = rng.uniform(size=(9, 7, 3))
    assert abs(colourfulness(x) - brute_colourfulness(x)) < 1e-6


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_colourfulness_permutation_invariant(seed):
    r = np.random.default_rng(seed)
    x = r.uniform(size=(5, 6, 3))
    perm = r.permutation(30)
    shuffled = x.reshape(30, 3)[perm].reshape(5, 6, 3)
    assert colourfulness(shuffled) == pytest.approx(colourfulness(x), abs=1e-9)


def test_report_means_and_json():
    report = MetricReport()
    a = rng.uniform(size=(16, 16, 3))
    report.add("same", a, a)
    report.add("noisy", np.clip(a + 0.05, 0, 1), a)
    assert report.per_image[0]["psnr"] == math.inf
    finite = report.per_image[1]["psnr"]
    assert report.mean["ssim"] == pytest.approx(np.mean([e["ssim"] for e in report.per_image]))
    assert report.mean["psnr"] == math.inf
    doc = report.to_json()
    assert doc["per_image"][0]["psnr"] == "inf"
    assert doc["per_image"][1]["psnr"] == finite
