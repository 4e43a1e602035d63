import math

import numpy as np
import pytest

from wecdg import losses
from wecdg.errors import ShapeMismatch
from wecdg.gradcheck import check_gradients
from wecdg.tensor import Tensor

C1, C2 = 0.01 ** 2, 0.03 ** 2


def brute_ssim(a, b, size=11, sigma=1.5):
    """Direct 2-D windowed SSIM, one window at a time."""
    h, w, c = a.shape
    size = min(size, h, w)
    size -= 1 - size % 2
    r = np.arange(size) - (size - 1) / 2
    g = np.exp(-(r[:, None] ** 2 + r[None, :] ** 2) / (2 * sigma ** 2))
    g /= g.sum()
    vals = []
    for ch in range(c):
        for i in range(h - size + 1):
            for j in range(w - size + 1):
                pa, pb = a[i:i + size, j:j + size, ch], b[i:i + size, j:j + size, ch]
                ma, mb = (g * pa).sum(), (g * pb).sum()
                va = (g * pa * pa).sum() - ma * ma
                vb = (g * pb * pb).sum() - mb * mb
                cov = (g * pa * pb).sum() - ma * mb
                vals.append((2 * ma * mb + C1) * (2 * cov + C2) / ((ma * ma + mb * mb + C1) * (va + vb + C2)))
    return float(np.mean(vals))


def brute_psnr(a, b):
    se = 0.0
    for x, y in zip(a.ravel(), b.ravel()):
        se += (x - y) ** 2
    mse = se / a.size
    return 99.0 if mse == 0 else min(99.0, 10 * math.log10(1 / mse))


def test_l1_examples(rng):
    gt = rng.uniform(size=(4, 5, 3))
    assert losses.l1_loss(Tensor(gt), Tensor(gt)).item() == 0.0
    assert losses.l1_loss(Tensor(gt + 0.1), Tensor(gt)).item() == pytest.approx(0.1, abs=1e-12)
    out = rng.uniform(size=(4, 5, 3))
    assert abs(losses.l1_loss(Tensor(out), Tensor(gt)).item() - np.abs(out - gt).mean()) < 1e-12
    with pytest.raises(ShapeMismatch):
        losses.l1_loss(Tensor(out), Tensor(gt[:3]))


@pytest.mark.parametrize("shape", [(16, 16, 3), (13, 20, 3), (7, 9, 1)])
def test_ssim_and_psnr_match_brute_force(rng, shape):
    a = rng.uniform(size=shape)
    b = np.clip(a + 0.1 * rng.standard_normal(shape), 0, 1)
    assert abs(losses.ssim_value(a, b) - brute_ssim(a, b)) < 1e-9
    assert abs(losses.psnr(a, b) - brute_psnr(a, b)) < 1e-9


def test_ssim_identity_symmetry_and_constant_case(rng):
    a, b = rng.uniform(size=(12, 14, 3)), rng.uniform(size=(12, 14, 3))
    assert losses.ssim_value(a, a) == pytest.approx(1.0, abs=1e-12)
    assert losses.ssim_loss(Tensor(a), Tensor(a)).item() == pytest.approx(0.0, abs=1e-12)
    assert abs(losses.ssim_value(a, b) - losses.ssim_value(b, a)) < 1e-12
    mu1, mu2 = 0.3, 0.55
    expected = (2 * mu1 * mu2 + C1) / (mu1 ** 2 + mu2 ** 2 + C1)
    got = losses.ssim_value(np.full((16, 16, 3), mu1), np.full((16, 16, 3), mu2))
    assert got == pytest.approx(expected, abs=1e-12)


def test_ssim_checkerboard_complement():
    board = (np.indices((16, 16)).sum(axis=0) % 2).astype(float)[..., None].repeat(3, axis=-1)
    assert losses.ssim_value(1 - board, board) < -0.9
    assert losses.ssim_loss(Tensor(1 - board), Tensor(board)).item() > 1.0


def test_window_shrinks_for_small_images():
    assert losses.window_size(64, 64) == 11
    assert losses.window_size(10, 30) == 9
    assert losses.window_size(7, 8) == 7
    np.testing.assert_allclose(losses.gaussian_window().sum(), 1.0, atol=1e-15)


def test_psnr_examples():
    a = np.full((4, 4, 3), 0.2)
    assert losses.psnr(a, a) == 99.0
    assert losses.psnr(a, a + 0.1) == pytest.approx(20.0, abs=1e-9)


def test_perceptual_examples(rng):
    a, b = rng.uniform(size=(16, 16, 3)), rng.uniform(size=(16, 16, 3))
    assert losses.perceptual_loss(Tensor(a), Tensor(a)).item() == 0.0
    pab = losses.perceptual_loss(Tensor(a), Tensor(b)).item()
    assert pab > 0.0
    assert pab == pytest.approx(losses.perceptual_loss(Tensor(b), Tensor(a)).item(), rel=1e-12)


def test_critic_is_frozen_and_seeded(rng):
    x = Tensor(rng.uniform(size=(1, 16, 16, 3)))
    f1, f2 = losses.critic_features(x), losses.critic_features(x)
    assert [f.shape for f in f1] == [(1, 8, 8, 16), (1, 4, 4, 32), (1, 2, 2, 32)]
    assert all(np.array_equal(a.data, b.data) for a, b in zip(f1, f2))
    assert not np.array_equal(losses.critic_features(x, seed=1)[0].data, f1[0].data)


def test_contrastive_examples(rng):
    gt = rng.uniform(size=(1, 16, 16, 3))
    neg = np.clip(gt ** 2.5 * 0.6, 0, 1)
    assert losses.contrastive_loss(Tensor(gt), gt, neg).item() == 0.0
    assert losses.contrastive_loss(Tensor(neg), gt, neg).item() > 1e5
    vals = [losses.contrastive_loss(Tensor((1 - t) * neg + t * gt), gt, neg).item() for t in (0.0, 0.5, 1.0)]
    assert vals[0] > vals[1] > vals[2] == 0.0


def test_contrastive_skips_samples_without_negative(rng):
    gt = rng.uniform(size=(2, 16, 16, 3))
    neg = gt.copy()
    neg[1] = gt[1] * 0.5
    out = rng.uniform(size=(2, 16, 16, 3))
    both = losses.contrastive_loss(Tensor(out), gt, neg).item()
    only = losses.contrastive_loss(Tensor(out[1:]), gt[1:], neg[1:]).item()
    assert both == pytest.approx(only, rel=1e-12)
    assert losses.contrastive_loss(Tensor(out), gt, gt).item() == 0.0


def test_total_loss_examples(rng):
    gt = rng.uniform(size=(2, 16, 16, 3))
    neg = gt * 0.5
    total, parts = losses.total_loss(Tensor(gt), gt, neg)
    assert total.item() == pytest.approx(0.0, abs=1e-12)
    w = losses.LossWeights()
    assert (w.l1, w.ssim, w.con, w.per) == (0.7, 0.3, 0.1, 0.3)
    out = rng.uniform(size=(2, 16, 16, 3))
    t1, parts = losses.total_loss(Tensor(out), gt, neg, w)
    t2, _ = losses.total_loss(Tensor(out), gt, neg, w.scaled(2.0))
    assert t2.item() == pytest.approx(2 * t1.item(), rel=1e-14)
    recombined = 0.7 * parts["l1"] + 0.3 * parts["ssim"] + 0.1 * parts["con"] + 0.3 * parts["per"]
    assert parts["total"] == pytest.approx(recombined, rel=1e-12)
    assert all(parts[k] >= 0 for k in ("l1", "ssim", "con", "per"))
    with pytest.raises(ValueError):
        losses.LossWeights(l1=-1.0)


def test_total_loss_gradcheck_16x16x3(rng):
    gt = rng.uniform(0.1, 0.9, size=(16, 16, 3))
    neg = gt ** 2
    out = Tensor(np.clip(gt + 0.05 * rng.standard_normal(gt.shape), 0, 1))
    res = check_gradients(lambda: losses.total_loss(out, gt, neg)[0], {"out": out}, max_coords=20)
    assert res.passed, res.per_tensor
