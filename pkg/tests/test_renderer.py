import numpy as np
import pytest

from libRDGSPy.errors import ShapeMismatchError
from libRDGSPy.gaussians import GaussianCloud, build_covariance
from libRDGSPy.metrics import l1_grad
from libRDGSPy.pruning import MaskSet
from libRDGSPy.renderer import project, render, render_backward
from libRDGSPy.scene import make_desk_scene, orbit_cameras
from libRDGSPy.sh import SH_C0
from libRDGSPy.shared import inverse_sigmoid, sigmoid
from libRDGSPy.types import Camera, RasterSettings


@pytest.fixture
def camera():
    # Looks down +z from the origin; the optical axis hits pixel (8, 8) exactly.
    return Camera(np.eye(3), np.zeros(3), 16.0, 16.0, 8.0, 8.0, 16, 16)


def _point_cloud(positions, colors, opacity_logits, log_scale=np.log(0.01)):
    n = len(positions)
    sh = np.zeros((n, 16, 3))
    sh[:, 0, :] = (np.asarray(colors, dtype=np.float64) - 0.5) / SH_C0
    return GaussianCloud(positions, np.full((n, 3), log_scale), np.tile([1.0, 0.0, 0.0, 0.0], (n, 1)),
                         np.asarray(opacity_logits, dtype=np.float64).reshape(n, 1), sh, dtype=np.float64)


def _small_scene(seed=0, n=5):
    rng = np.random.default_rng(seed)
    positions = np.column_stack([rng.uniform(-0.5, 0.5, n), rng.uniform(-0.5, 0.5, n), rng.uniform(3.0, 5.0, n)])
    sh = rng.normal(scale=0.3, size=(n, 16, 3))
    # Opacities stay below 0.35, so nothing significant is cut off at the 3-sigma rectangle.
    opacity_logits = inverse_sigmoid(rng.uniform(0.15, 0.3, size=(n, 1)))
    return GaussianCloud(positions, np.log(rng.uniform(0.15, 0.35, size=(n, 3))), rng.normal(size=(n, 4)),
                         opacity_logits, sh, dtype=np.float64)


def test_project_center_and_cull(camera):
    cloud = _point_cloud([[0.0, 0.0, 4.0], [0.0, 0.0, -4.0]], [[1, 1, 1], [1, 1, 1]], [0.0, 0.0], 0.0)
    projection = project(cloud, camera)
    np.testing.assert_allclose(projection.means2d[0], [8.0, 8.0])
    assert not projection.culled[0]
    assert projection.culled[1]


def test_projected_covariance_matches_sampling():
    camera = Camera.look_at([0.0, 0.0, -4.0], np.zeros(3), 64, 64)
    rng = np.random.default_rng(11)
    cloud = GaussianCloud([[0.2, -0.1, 0.3]], np.log([[0.05, 0.02, 0.08]]), rng.normal(size=(1, 4)), [[0.0]],
                          dtype=np.float64)
    projection = project(cloud, camera, settings=RasterSettings(cov_floor=0.0))
    covariance = np.linalg.cholesky(build_covariance(cloud.log_scales[0], cloud.rotations[0]))
    samples = cloud.positions[0] + rng.normal(size=(100000, 3)) @ covariance.T
    cam_points = samples @ camera.rotation.T + camera.translation
    pixels = np.column_stack([camera.fx * cam_points[:, 0] / cam_points[:, 2],
                              camera.fy * cam_points[:, 1] / cam_points[:, 2]])
    sampled = np.cov(pixels.T)
    error = np.linalg.norm(sampled - projection.cov2d[0]) / np.linalg.norm(sampled)
    assert error < 0.05


def test_single_opaque_gaussian(camera):
    color = [0.2, 0.7, 0.4]
    image, _ = render(_point_cloud([[0.0, 0.0, 4.0]], [color], [40.0]), camera)
    np.testing.assert_allclose(image.color[8, 8], color, atol=1e-12)


def test_two_gaussians_by_hand(camera):
    cloud = _point_cloud([[0.0, 0.0, 5.0], [0.0, 0.0, 3.0]], [[0, 1, 0], [1, 0, 0]], [0.0, 0.0])
    image, tape = render(cloud, camera)
    np.testing.assert_allclose(image.color[8, 8], [0.5, 0.25, 0.0], atol=1e-12)
    np.testing.assert_array_equal(tape.contributors(8, 8), [1, 0])
    np.testing.assert_allclose(tape.transmittances(8, 8), [1.0, 0.5])
    assert image.alpha[8, 8] == pytest.approx(0.75)


def test_background_shows_through(camera):
    settings = RasterSettings(background=np.array([0.1, 0.2, 0.3]))
    image, _ = render(GaussianCloud(dtype=np.float64), camera, settings=settings)
    np.testing.assert_allclose(image.color, np.broadcast_to([0.1, 0.2, 0.3], (16, 16, 3)))


def test_hard_masked_gaussian_matches_subset():
    cloud = make_desk_scene(3, 10, seed=2).astype(np.float64)
    camera = orbit_cameras(1, width=48, height=48, seed=2)[0]
    masks = MaskSet.init(cloud.count)
    pruned = np.zeros(cloud.count, dtype=bool)
    pruned[::3] = True
    masks.gaussian_mask_raw[pruned] = -5.0
    masked_image, _ = render(cloud, camera, masks)
    subset_image, _ = render(cloud.subset(~pruned), camera)
    np.testing.assert_array_equal(masked_image.color, subset_image.color)


def test_everything_masked_is_background():
    cloud = make_desk_scene(2, 5, seed=1).astype(np.float64)
    camera = orbit_cameras(1, width=32, height=32)[0]
    masks = MaskSet(np.full((cloud.count, 1), -10.0), np.zeros((cloud.count, 3)))
    image, _ = render(cloud, camera, masks)
    np.testing.assert_array_equal(image.color, np.zeros((32, 32, 3)))


def test_order_invariance():
    cloud = make_desk_scene(3, 12, seed=5).astype(np.float64)
    camera = orbit_cameras(2, width=40, height=40, seed=5)[1]
    permutation = np.random.default_rng(5).permutation(cloud.count)
    image, _ = render(cloud, camera)
    shuffled, _ = render(cloud.subset(permutation), camera)
    np.testing.assert_array_equal(image.color, shuffled.color)


def test_thread_count_does_not_change_result():
    cloud = make_desk_scene(3, 12, seed=6).astype(np.float64)
    camera = orbit_cameras(1, width=40, height=40, seed=6)[0]
    one, tape_one = render(cloud, camera, settings=RasterSettings(threads=1))
    four, tape_four = render(cloud, camera, settings=RasterSettings(threads=4))
    np.testing.assert_array_equal(one.color, four.color)
    grad = np.random.default_rng(0).normal(size=(40, 40, 3))
    np.testing.assert_array_equal(render_backward(tape_one, grad).positions, render_backward(tape_four, grad).positions)


def test_zero_image_gradient(camera):
    cloud = _small_scene()
    _, tape = render(cloud, camera)
    grads = render_backward(tape, np.zeros((16, 16, 3)))
    for name in ("positions", "log_scales", "rotations", "opacity_logits", "sh_coeffs"):
        assert not np.any(getattr(grads, name))


def test_gradient_shape_mismatch(camera):
    _, tape = render(_small_scene(), camera)
    with pytest.raises(ShapeMismatchError):
        render_backward(tape, np.zeros((8, 8, 3)))


def _loss(cloud, camera, weights, masks=None):
    image, _ = render(cloud, camera, masks)
    return float(np.sum(image.color * weights))


@pytest.mark.parametrize("attribute", ["positions", "log_scales", "rotations", "opacity_logits", "sh_coeffs"])
def test_gradients_match_finite_differences(camera, attribute):
    cloud = _small_scene(seed=1)
    weights = np.random.default_rng(2).normal(size=(16, 16, 3))
    _, tape = render(cloud, camera)
    analytic = getattr(render_backward(tape, weights), attribute)
    values = getattr(cloud, attribute)
    numeric = np.zeros_like(values)
    h = 1e-5
    for index in np.ndindex(values.shape):
        original = values[index]
        values[index] = original + h
        plus = _loss(cloud, camera, weights)
        values[index] = original - h
        minus = _loss(cloud, camera, weights)
        values[index] = original
        numeric[index] = (plus - minus) / (2 * h)
    scale = np.max(np.abs(numeric))
    assert scale > 0
    np.testing.assert_allclose(analytic, numeric, rtol=1e-3, atol=1e-6 * scale)


def test_mask_gradients_are_straight_through(camera):
    cloud = _small_scene(seed=3)
    weights = np.random.default_rng(4).normal(size=(16, 16, 3))
    rng = np.random.default_rng(5)
    masks = MaskSet(rng.uniform(0.0, 2.0, size=(5, 1)), rng.uniform(0.0, 2.0, size=(5, 3)))
    _, tape = render(cloud, camera, masks)
    grads = render_backward(tape, weights)
    h = 1e-6
    for i in range(cloud.count):
        # Scaling the kept Gaussian's scale and opacity by phi is what the hard mask does.
        def loss_at(phi):
            scaled = cloud.copy()
            scaled.log_scales[i] += np.log(phi)
            scaled.opacity_logits[i] = inverse_sigmoid(phi * sigmoid(cloud.opacity_logits[i]))
            return _loss(scaled, camera, weights, masks)
        d_phi = (loss_at(1.0 + h) - loss_at(1.0 - h)) / (2 * h)
        soft = sigmoid(masks.gaussian_mask_raw[i, 0])
        assert grads.gaussian_mask[i, 0] == pytest.approx(d_phi * soft * (1 - soft), rel=1e-4, abs=1e-9)
    # A kept SH degree contributes its full coefficients, so dL/dtheta is the coefficient-weighted SH gradient.
    unmasked_grads = render_backward(render(cloud, camera)[1], weights)
    per_coeff = np.sum(unmasked_grads.sh_coeffs * cloud.sh_coeffs, axis=2)
    expected = np.stack([per_coeff[:, 1:4].sum(1), per_coeff[:, 4:9].sum(1), per_coeff[:, 9:16].sum(1)], axis=1)
    soft = sigmoid(masks.sh_mask_raw)
    np.testing.assert_allclose(grads.sh_mask, expected * soft * (1 - soft), rtol=1e-9, atol=1e-12)


def test_respawned_gaussian_is_back_on_the_tape(camera):
    cloud = _point_cloud([[0.0, 0.0, 5.0], [0.0, 0.0, 3.0]], [[0, 1, 0], [1, 0, 0]], [0.0, 0.0])
    masks = MaskSet.init(2)
    masks.gaussian_mask_raw[1] = -5.0
    _, tape = render(cloud, camera, masks)
    np.testing.assert_array_equal(tape.contributors(8, 8), [0])
    masks.gaussian_mask_raw[1] = 5.0
    image, tape = render(cloud, camera, masks)
    np.testing.assert_array_equal(tape.contributors(8, 8), [1, 0])
    np.testing.assert_array_equal(image.color, render(cloud, camera)[0].color)


def test_early_stop_changes_pixels_by_at_most_the_cutoff(camera):
    # Five stacked copies at alpha 0.95 leave less than 1e-4 transmittance before the last one.
    positions = [[0.0, 0.0, 3.0 + 0.1 * i] for i in range(5)] + [[0.05, -0.05, 4.0], [-0.1, 0.0, 5.0]]
    colors = np.random.default_rng(4).uniform(0.0, 1.0, size=(7, 3))
    cloud = _point_cloud(positions, colors, inverse_sigmoid(np.full(7, 0.95)), np.log(0.05))
    stopped, tape = render(cloud, camera)
    assert any(np.any((tile.sigma >= 1.0 / 255.0) & ~tile.included) for tile in tape.tiles)
    full, _ = render(cloud, camera, settings=RasterSettings(stop_transmittance=0.0))
    assert np.max(np.abs(stopped.color - full.color)) <= 1e-4


def test_opacity_gradient_points_toward_a_brighter_target(camera):
    cloud = _point_cloud([[0.0, 0.0, 4.0]], [[0.6, 0.5, 0.4]], [0.0], np.log(0.1))
    image, tape = render(cloud, camera)
    target = np.full((16, 16, 3), 0.9)
    grads = render_backward(tape, l1_grad(image.color, target))
    assert grads.opacity_logits[0, 0] < 0.0
    darker = np.zeros((16, 16, 3))
    assert render_backward(tape, l1_grad(image.color, darker)).opacity_logits[0, 0] > 0.0
