import math

import numpy as np
import pytest

from libRDGSPy.errors import ShapeMismatchError
from libRDGSPy.metrics import (d_ssim, image_metrics, l1, psnr, render_loss, render_loss_terms, ssim,
                               ssim_with_grad)
from libRDGSPy.renderer import RenderedImage


def _scalar_ssim(x, y, size=11, sigma=1.5):
    # Direct per-pixel evaluation with a zero-padded 2D window.
    half = size // 2
    taps = [math.exp(-(k * k) / (2 * sigma * sigma)) for k in range(-half, half + 1)]
    total = sum(taps)
    taps = [t / total for t in taps]
    h, w = x.shape
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    values = []
    for i in range(h):
        for j in range(w):
            mx = my = sxx = syy = sxy = 0.0
            for u in range(-half, half + 1):
                for v in range(-half, half + 1):
                    if 0 <= i + u < h and 0 <= j + v < w:
                        weight = taps[u + half] * taps[v + half]
                        a, b = x[i + u, j + v], y[i + u, j + v]
                        mx += weight * a
                        my += weight * b
                        sxx += weight * a * a
                        syy += weight * b * b
                        sxy += weight * a * b
            sxx -= mx * mx
            syy -= my * my
            sxy -= mx * my
            values.append(((2 * mx * my + c1) * (2 * sxy + c2)) / ((mx * mx + my * my + c1) * (sxx + syy + c2)))
    return sum(values) / len(values)


def test_identical_images():
    image = np.random.default_rng(0).uniform(size=(12, 10, 3))
    assert l1(image, image) == 0.0
    assert d_ssim(image, image) == pytest.approx(0.0, abs=1e-12)
    assert psnr(image, image) == math.inf


def test_black_against_white():
    assert l1(np.ones((4, 4, 3)), np.zeros((4, 4, 3))) == 1.0
    assert psnr(np.ones((4, 4, 3)), np.zeros((4, 4, 3))) == 0.0


def test_ssim_matches_scalar_oracle():
    checkerboard = (np.indices((8, 8)).sum(axis=0) % 2).astype(np.float64)
    shifted = np.roll(checkerboard, 1, axis=1)
    expected = _scalar_ssim(checkerboard, shifted)
    assert ssim(checkerboard[:, :, None], shifted[:, :, None]) == pytest.approx(expected, abs=1e-6)
    assert ssim(checkerboard, shifted) == pytest.approx(expected, abs=1e-6)


def test_ssim_gradient_finite_differences():
    rng = np.random.default_rng(1)
    img = rng.uniform(size=(9, 7, 2))
    ref = rng.uniform(size=(9, 7, 2))
    _, grad = ssim_with_grad(img, ref)
    h = 1e-6
    for index in [(0, 0, 0), (4, 3, 1), (8, 6, 0), (2, 5, 1), (6, 1, 0)]:
        plus, minus = img.copy(), img.copy()
        plus[index] += h
        minus[index] -= h
        numeric = (ssim(plus, ref) - ssim(minus, ref)) / (2 * h)
        assert grad[index] == pytest.approx(numeric, rel=1e-5, abs=1e-9)


def test_render_loss_gradient():
    rng = np.random.default_rng(2)
    img = rng.uniform(size=(6, 6, 3))
    ref = rng.uniform(size=(6, 6, 3))
    value, grad = render_loss(img, ref, 0.2)
    l1_value, d_ssim_value, _ = render_loss_terms(img, ref, 0.2)
    assert value == pytest.approx(0.8 * l1_value + 0.2 * d_ssim_value)
    h = 1e-6
    for index in [(0, 0, 0), (3, 2, 1), (5, 5, 2)]:
        plus, minus = img.copy(), img.copy()
        plus[index] += h
        minus[index] -= h
        numeric = (render_loss(plus, ref)[0] - render_loss(minus, ref)[0]) / (2 * h)
        assert grad[index] == pytest.approx(numeric, rel=1e-4)


def test_shape_mismatch():
    with pytest.raises(ShapeMismatchError):
        l1(np.zeros((4, 4, 3)), np.zeros((4, 5, 3)))


def test_rendered_images_are_accepted():
    rendered = RenderedImage(np.full((5, 5, 3), 1.5), np.ones((5, 5)))
    l1_value, _, psnr_value = image_metrics(rendered, np.ones((5, 5, 3)))
    # Rendered colours are clamped before measuring.
    assert l1_value == 0.0
    assert psnr_value == math.inf
