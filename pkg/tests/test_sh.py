import numpy as np
import pytest

from libRDGSPy.sh import SH_C0, degree_slice, eval_sh, eval_sh_backward, eval_sh_batch, sh_basis, sh_basis_jacobian


def _unit(rng, n):
    d = rng.normal(size=(n, 3))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def test_dc_only_is_view_independent():
    coeffs = np.zeros((16, 3))
    coeffs[0] = [0.3, -0.2, 1.0]
    rng = np.random.default_rng(0)
    colors = [eval_sh(coeffs, d) for d in _unit(rng, 10)]
    for color in colors:
        np.testing.assert_allclose(color, SH_C0 * coeffs[0] + 0.5)


@pytest.mark.parametrize("max_degree", [0, 1, 2])
def test_max_degree_matches_zeroing(max_degree):
    rng = np.random.default_rng(max_degree)
    coeffs = rng.normal(size=(16, 3))
    zeroed = coeffs.copy()
    zeroed[degree_slice(max_degree).stop:] = 0.0
    direction = _unit(rng, 1)[0]
    np.testing.assert_allclose(eval_sh(coeffs, direction, max_degree), eval_sh(zeroed, direction))


def test_bad_degree():
    with pytest.raises(ValueError):
        eval_sh(np.zeros((16, 3)), np.array([0.0, 0.0, 1.0]), 4)


def test_higher_degrees_average_to_zero():
    rng = np.random.default_rng(7)
    coeffs = rng.normal(size=(16, 3))
    directions = _unit(rng, 10000)
    colors, _ = eval_sh_batch(np.broadcast_to(coeffs, (10000, 16, 3)), directions)
    mean_view_dependent = np.mean(colors - (SH_C0 * coeffs[0] + 0.5), axis=0)
    np.testing.assert_allclose(mean_view_dependent, 0.0, atol=5e-2)


def test_batch_matches_single():
    rng = np.random.default_rng(2)
    coeffs = rng.normal(size=(5, 16, 3))
    directions = _unit(rng, 5)
    colors, basis = eval_sh_batch(coeffs, directions)
    assert basis.shape == (5, 16)
    for i in range(5):
        np.testing.assert_allclose(colors[i], eval_sh(coeffs[i], directions[i]), atol=1e-12)


def test_basis_jacobian_finite_differences():
    rng = np.random.default_rng(5)
    directions = _unit(rng, 4)
    jac = sh_basis_jacobian(directions)
    h = 1e-6
    for axis in range(3):
        step = np.zeros(3)
        step[axis] = h
        numeric = (sh_basis(directions + step) - sh_basis(directions - step)) / (2 * h)
        np.testing.assert_allclose(jac[:, :, axis], numeric, atol=1e-6)


def test_backward_coefficients():
    rng = np.random.default_rng(9)
    coeffs = rng.normal(size=(3, 16, 3))
    directions = _unit(rng, 3)
    colors, basis = eval_sh_batch(coeffs, directions)
    grad_colors = rng.normal(size=(3, 3))
    grad_coeffs, grad_dirs = eval_sh_backward(coeffs, directions, basis, grad_colors)
    # Colours are linear in the coefficients.
    np.testing.assert_allclose(grad_coeffs, basis[:, :, None] * grad_colors[:, None, :])
    h = 1e-6
    for axis in range(3):
        step = np.zeros(3)
        step[axis] = h
        plus, _ = eval_sh_batch(coeffs, directions + step)
        minus, _ = eval_sh_batch(coeffs, directions - step)
        numeric = np.sum((plus - minus) / (2 * h) * grad_colors, axis=1)
        np.testing.assert_allclose(grad_dirs[:, axis], numeric, atol=1e-6)
