import numpy as np
import pytest

from libRDGSPy.errors import DomainError
from libRDGSPy.scene import Dataset, View, make_desk_scene, orbit_cameras, random_rotations
from libRDGSPy.types import Camera


def test_look_at_points_the_camera():
    camera = Camera.look_at([0.0, 0.0, -4.0], np.zeros(3), 32, 24)
    np.testing.assert_allclose(camera.center, [0.0, 0.0, -4.0], atol=1e-12)
    np.testing.assert_allclose(camera.rotation @ camera.rotation.T, np.eye(3), atol=1e-12)
    # The target projects onto the principal point, and world up is image up.
    target = camera.rotation @ np.zeros(3) + camera.translation
    assert target[2] == pytest.approx(4.0)
    np.testing.assert_allclose(target[:2], 0.0, atol=1e-12)
    above = camera.rotation @ np.array([0.0, 1.0, 0.0]) + camera.translation
    assert above[1] < 0


def test_camera_dict_round_trip():
    camera = orbit_cameras(3, width=20, height=10, seed=4)[2]
    restored = Camera.from_dict(camera.to_dict())
    np.testing.assert_array_equal(restored.rotation, camera.rotation)
    np.testing.assert_array_equal(restored.translation, camera.translation)
    assert (restored.fx, restored.cx, restored.width, restored.height) == (camera.fx, camera.cx, 20, 10)


def test_camera_validation():
    with pytest.raises(DomainError):
        Camera(np.eye(3), np.zeros(3), 10.0, 10.0, 0.0, 0.0, 0, 10)
    with pytest.raises(DomainError):
        Camera(np.eye(3), np.zeros(3), -1.0, 10.0, 0.0, 0.0, 10, 10)
    with pytest.raises(DomainError):
        Camera.look_at(np.ones(3), np.ones(3), 10, 10)


def test_orbit_cameras_face_the_origin():
    for camera in orbit_cameras(6, radius=2.5):
        assert np.linalg.norm(camera.center) == pytest.approx(2.5)
        assert (camera.rotation @ np.zeros(3) + camera.translation)[2] == pytest.approx(2.5)


def test_desk_scene_is_deterministic():
    first = make_desk_scene(4, 10, seed=7)
    second = make_desk_scene(4, 10, seed=7)
    assert first.count == 40
    np.testing.assert_array_equal(first.positions, second.positions)
    np.testing.assert_array_equal(first.sh_coeffs, second.sh_coeffs)
    assert np.all(first.rotations[:, 0] >= 0)
    with pytest.raises(ValueError):
        make_desk_scene(0, 10)


def test_random_rotations_are_unit():
    q = random_rotations(50, np.random.default_rng(0))
    np.testing.assert_allclose(np.linalg.norm(q, axis=1), 1.0)


def _views(count, width=8, height=6):
    cameras = orbit_cameras(count, width=width, height=height)
    return [View(camera, np.full((height, width, 3), i / count)) for i, camera in enumerate(cameras)]


def test_split_holds_out_every_eighth_view():
    dataset = Dataset(_views(17))
    train, test = dataset.split()
    assert len(test) == 3
    assert len(train) == 14
    assert test[1] is dataset.views[8]
    assert len(Dataset(_views(5), test_every=0).test_views()) == 5


def test_single_view_trains_and_tests_on_itself():
    dataset = Dataset(_views(1))
    assert len(dataset.train_views()) == 1
    assert len(dataset.test_views()) == 1


def test_mismatched_views_are_rejected():
    views = _views(2)
    views[1] = View(views[1].camera, np.zeros((5, 5, 3)))
    with pytest.raises(ValueError):
        Dataset(views)


def test_dataset_save_and_load(tmp_path):
    cloud = make_desk_scene(2, 8, seed=1)
    dataset = Dataset.from_cloud(cloud, orbit_cameras(3, width=12, height=10, seed=1), test_every=2)
    dataset.save(str(tmp_path / "dataset"))
    loaded = Dataset.load(str(tmp_path / "dataset"))
    assert len(loaded) == 3
    assert loaded.test_every == 2
    for original, restored in zip(dataset.views, loaded.views):
        np.testing.assert_allclose(restored.image, np.round(original.image * 255) / 255, atol=1e-12)
        np.testing.assert_allclose(restored.camera.rotation, original.camera.rotation)


def test_bad_camera_file(tmp_path):
    (tmp_path / "cameras.json").write_text("{not json")
    with pytest.raises(ValueError):
        Dataset.load(str(tmp_path))
