import csv
import dataclasses
import math

import numpy as np
import pytest

from libRDGSPy.codec import decode, encode_model
from libRDGSPy.ecvq import TAGS
from libRDGSPy.errors import NonFiniteLossError
from libRDGSPy.gaussians import GaussianCloud, save_ply
from libRDGSPy.pruning import MaskSet
from libRDGSPy.scene import Dataset, make_desk_scene, orbit_cameras, random_cloud
from libRDGSPy.shared import inverse_sigmoid
from libRDGSPy.trainer import (SWEEP_PRESETS, TrainConfig, TrainingLog, camera_extent, evaluate, load_checkpoint,
                               load_config, pretrain, rd_train, save_checkpoint, sizes_shrink_with_lambda, total_loss)
from libRDGSPy.types import LossComponents


@pytest.fixture(scope="module")
def scene():
    cloud = make_desk_scene(2, 6, seed=3)
    dataset = Dataset.from_cloud(cloud, orbit_cameras(4, width=16, height=16, seed=3), test_every=4)
    return cloud, dataset


def _config(**overrides):
    settings = {"threads": 1, "pretrain_iters": 0, "rd_iters": 0, "codebook_size_geometry": 8,
                "codebook_size_sh": 8, "log_every": 1}
    settings.update(overrides)
    return TrainConfig(**settings)


def test_config_round_trip():
    config = TrainConfig(lambda_gs_prune=0.02, scene_kind="real", rd_selection=False, background=(1.0, 0.5, 0.0))
    loaded = TrainConfig()
    loaded.load(config.dump())
    assert loaded == config
    assert loaded.lr_sh_mask == config.lr_sh_mask_real


def test_config_parsing(tmp_path):
    path = tmp_path / "config.txt"
    path.write_text("# comment\n\nrd_iters = 12\nenable_ecvq = off\nbackground = 0.1, 0.2, 0.3\n")
    config = load_config(str(path))
    assert config.rd_iters == 12
    assert config.enable_ecvq is False
    assert config.background == (0.1, 0.2, 0.3)
    assert load_config(None) == TrainConfig()


@pytest.mark.parametrize("text", ["no_such_key = 1", "rd_iters = many", "rd_iters", "rd_selection = maybe",
                                  "scene_kind = indoor", "lr_scale = -1"])
def test_bad_config(text):
    with pytest.raises(ValueError):
        TrainConfig().load(text)


def test_codebook_settings():
    config = TrainConfig(codebook_size_geometry=64, codebook_size_sh=16, lambda_dc=10.0)
    assert config.codebook_sizes() == {"scale": 64, "rotation": 64, "dc": 64, "sh1": 16, "sh2": 16, "sh3": 16}
    assert config.lambdas()["dc"] == 10.0
    assert set(config.lambdas()) == set(TAGS)


def test_thread_default(monkeypatch):
    monkeypatch.delenv("RDGS_THREADS", raising=False)
    assert TrainConfig().raster_settings().threads == 1
    monkeypatch.setenv("RDGS_THREADS", "3")
    assert TrainConfig().raster_settings().threads == 3
    assert TrainConfig(threads=2).raster_settings().threads == 2
    monkeypatch.setenv("RDGS_THREADS", "lots")
    assert TrainConfig().raster_settings().threads == 1


def test_sweep_presets_run_from_high_compression():
    for points in SWEEP_PRESETS.values():
        assert len(points) >= 2
        assert [p[0] for p in points] == sorted((p[0] for p in points), reverse=True)


def test_total_loss():
    config = TrainConfig(lambda_gs_prune=0.01, lambda_sh_prune=0.1)
    components = LossComponents(gs_prune=0.5, sh_prune=0.4, rate=0.1, vq=0.2, l1=0.3, d_ssim=0.3)
    assert total_loss(components, config) == pytest.approx(0.645)


def test_non_finite_loss_is_named():
    with pytest.raises(NonFiniteLossError) as error:
        total_loss(LossComponents(vq=math.nan), TrainConfig())
    assert error.value.component == "vq"
    with pytest.raises(NonFiniteLossError):
        total_loss(LossComponents(l1=math.inf), TrainConfig())


def test_camera_extent():
    cameras = orbit_cameras(8, radius=2.0)
    extent = camera_extent(cameras)
    centers = np.array([camera.center for camera in cameras])
    assert extent == pytest.approx(1.1 * np.max(np.linalg.norm(centers - centers.mean(axis=0), axis=1)))
    assert camera_extent(cameras[:1]) == 1.1


def test_evaluate_ground_truth(scene):
    cloud, dataset = scene
    metrics = evaluate(cloud, dataset.views)
    assert metrics["psnr"] == math.inf
    assert metrics["l1"] == 0.0
    assert metrics["ssim"] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        evaluate(cloud, [])


def test_zero_iterations_leave_the_cloud_alone(scene):
    cloud, dataset = scene
    fitted = pretrain(dataset, _config(), init=cloud, progress=False)
    np.testing.assert_array_equal(fitted.positions, cloud.positions.astype(np.float64))
    trained, masks, bank = rd_train(fitted, dataset, _config(), progress=False)
    np.testing.assert_array_equal(trained.sh_coeffs, fitted.sh_coeffs)
    assert len(masks) == cloud.count
    # 12 Gaussians share ceil(sqrt(12)) = 4 codewords.
    assert len(bank["scale"].codebook) == 4
    _, _, unscaled = rd_train(fitted, dataset, _config(codebook_scaling=False), progress=False)
    assert len(unscaled["scale"].codebook) == 8


def test_rd_iterations_update_everything(scene, tmp_path):
    cloud, dataset = scene
    training_log = TrainingLog(str(tmp_path / "log.csv"))
    config = _config(rd_iters=3)
    trained, masks, _ = rd_train(cloud, dataset, config, training_log=training_log, progress=False)
    training_log.close()
    assert not np.array_equal(trained.positions, cloud.positions.astype(np.float64))
    assert not np.all(masks.gaussian_mask_raw == MaskSet.init(cloud.count).gaussian_mask_raw)
    with open(tmp_path / "log.csv", newline="") as log_file:
        rows = list(csv.DictReader(log_file))
    assert [row["iteration"] for row in rows] == ["1", "2", "3"]
    assert all(row["stage"] == "rd" for row in rows)
    assert all(math.isfinite(float(row["loss"])) for row in rows)


def test_rd_training_is_deterministic(scene):
    cloud, dataset = scene
    config = _config(rd_iters=2)
    first = rd_train(cloud, dataset, config, progress=False)
    second = rd_train(cloud, dataset, config, progress=False)
    np.testing.assert_array_equal(first[0].positions, second[0].positions)
    np.testing.assert_array_equal(first[2]["dc"].entropy_model.logits, second[2]["dc"].entropy_model.logits)


def test_disabled_stages(scene):
    cloud, dataset = scene
    config = _config(rd_iters=2, enable_gs_prune=False, enable_sh_prune=False, enable_ecvq=False)
    _, masks, bank = rd_train(cloud, dataset, config, progress=False)
    init = MaskSet.init(cloud.count)
    np.testing.assert_array_equal(masks.gaussian_mask_raw, init.gaussian_mask_raw)
    np.testing.assert_array_equal(masks.sh_mask_raw, init.sh_mask_raw)
    np.testing.assert_array_equal(bank["dc"].entropy_model.logits, 0.0)


def test_checkpoint_round_trip(scene, tmp_path):
    cloud, dataset = scene
    trained, masks, bank = rd_train(cloud, dataset, _config(rd_iters=1), progress=False)
    prefix = str(tmp_path / "state")
    save_checkpoint(prefix, trained, masks, bank)
    loaded, loaded_masks, loaded_bank = load_checkpoint(prefix)
    np.testing.assert_array_equal(loaded.positions, trained.positions.astype(np.float32))
    np.testing.assert_array_equal(loaded_masks.sh_mask_raw, masks.sh_mask_raw)
    for tag in TAGS:
        np.testing.assert_array_equal(loaded_bank[tag].codebook.codewords, bank[tag].codebook.codewords)
    save_ply(cloud, str(tmp_path / "bare.ply"))
    _, no_masks, no_bank = load_checkpoint(str(tmp_path / "bare"))
    assert no_masks is None
    assert no_bank is None


def test_empty_dataset(scene):
    cloud, _ = scene
    with pytest.raises(ValueError):
        pretrain(Dataset(), _config(pretrain_iters=1), init=cloud, progress=False)


@pytest.mark.slow
def test_pretraining_improves_a_perturbed_scene(scene):
    cloud, dataset = scene
    rng = np.random.default_rng(0)
    start = cloud.astype(np.float64)
    start.positions += rng.normal(scale=0.05, size=start.positions.shape)
    start.sh_coeffs[:, 0, :] += rng.normal(scale=0.3, size=(start.count, 3))
    before = evaluate(start, dataset.views)["psnr"]
    fitted = pretrain(dataset, _config(pretrain_iters=200, lr_position=0.001), init=start, progress=False)
    assert evaluate(fitted, dataset.views)["psnr"] > before + 1.0


@pytest.mark.slow
def test_rd_training_prunes_and_encodes(scene):
    cloud, dataset = scene
    config = _config(rd_iters=150, lambda_gs_prune=0.0, lambda_sh_prune=5.0, lr_sh_mask_synthetic=0.1)
    trained, masks, bank = rd_train(cloud, dataset, config, progress=False)
    assert np.count_nonzero(masks.sh_hard() == 0) > 0
    result = encode_model(trained, masks, bank)
    decoded = decode(result.data)
    assert decoded.count == int(np.count_nonzero(masks.gaussian_hard()))
    no_prune = dataclasses.replace(config, enable_gs_prune=False, enable_sh_prune=False)
    _, kept_masks, _ = rd_train(cloud, dataset, no_prune, progress=False)
    assert np.all(kept_masks.gaussian_hard() == 1)


def test_sizes_shrink_with_lambda():
    grid = [(0.005, 0.025), (0.001, 0.005), (0.0002, 0.001)]
    assert sizes_shrink_with_lambda(grid, [10.0, 20.0, 30.0])
    assert sizes_shrink_with_lambda(grid[::-1], [30.0, 20.0, 10.0])
    assert not sizes_shrink_with_lambda(grid, [10.0, 10.0, 30.0])
    assert not sizes_shrink_with_lambda(grid, [30.0, 20.0, 10.0])


def _with_hidden_gaussian(cloud):
    # Opacity sigmoid(-10) stays under the 1/255 cutoff, so the Gaussian never reaches a pixel.
    hidden = GaussianCloud(cloud.positions.mean(axis=0, keepdims=True), np.full((1, 3), -3.0), [[1.0, 0.0, 0.0, 0.0]],
                           [[-10.0]], dtype=np.float64)
    names = ("positions", "log_scales", "rotations", "opacity_logits", "sh_coeffs")
    return GaussianCloud(*(np.concatenate([getattr(cloud, name), getattr(hidden, name)]) for name in names),
                         dtype=np.float64)


def test_prune_loss_alone_removes_an_unseen_gaussian(scene):
    cloud, dataset = scene
    hidden = _with_hidden_gaussian(cloud.astype(np.float64))
    config = _config(rd_iters=100, lambda_gs_prune=0.05, lr_gaussian_mask=0.1, enable_ecvq=False,
                     enable_sh_prune=False)
    _, masks, _ = rd_train(hidden, dataset, config, progress=False)
    assert masks.gaussian_hard()[-1, 0] == 0.0
    assert masks.gaussian_mask_raw[-1, 0] < MaskSet.init(1).gaussian_mask_raw[0, 0] - 4.0
    _, kept, _ = rd_train(hidden, dataset, dataclasses.replace(config, lambda_gs_prune=0.0), progress=False)
    assert kept.gaussian_mask_raw[-1, 0] == MaskSet.init(1).gaussian_mask_raw[0, 0]


def test_heavy_gaussian_pruning_leaves_few_survivors(scene):
    cloud, dataset = scene
    config = _config(rd_iters=150, lambda_gs_prune=10.0, lr_gaussian_mask=0.05, enable_ecvq=False,
                     enable_sh_prune=False)
    _, masks, bank = rd_train(cloud, dataset, config, progress=False)
    assert np.mean(masks.gaussian_hard()) < 0.05
    assert all(len(bank[tag].codebook) >= 1 for tag in TAGS)


@pytest.mark.slow
def test_single_gaussian_fits_itself():
    truth = GaussianCloud([[0.0, 0.0, 0.0]], np.log([[0.3, 0.2, 0.25]]), [[1.0, 0.0, 0.0, 0.0]],
                          inverse_sigmoid(np.array([[0.8]])), dtype=np.float64)
    truth.sh_coeffs[0, 0] = [0.7, 0.2, -0.4]
    dataset = Dataset.from_cloud(truth, orbit_cameras(8, width=64, height=64, seed=1), test_every=8)
    start = truth.copy()
    start.positions += 0.02
    start.log_scales += 0.1
    start.opacity_logits -= 0.3
    start.sh_coeffs[0, 0] += 0.2
    assert evaluate(start, dataset.views)["psnr"] < 40.0
    fitted = pretrain(dataset, _config(pretrain_iters=500), init=start, progress=False)
    assert evaluate(fitted, dataset.views)["psnr"] > 40.0


@pytest.mark.slow
def test_lambda_sweep_trades_size_for_quality():
    truth = make_desk_scene(4, 60, seed=5)
    dataset = Dataset.from_cloud(truth, orbit_cameras(12, width=32, height=32, seed=5), test_every=4)
    config = _config(pretrain_iters=300, initial_gaussians=600, rd_iters=400, lr_gaussian_mask=0.05,
                     lr_sh_mask_synthetic=0.05, codebook_size_geometry=8192, codebook_size_sh=4096)
    pretrained = pretrain(dataset, config, progress=False)
    reference = evaluate(pretrained, dataset.views)["psnr"]
    # Five times apart, like the synthetic presets, but larger: a small cloud seen at 32x32 needs more pull.
    grid = [(0.02, 0.1), (0.1, 0.5), (0.5, 2.5)]
    points = []
    for lambda_gs, lambda_sh in grid:
        point_config = dataclasses.replace(config, lambda_gs_prune=lambda_gs, lambda_sh_prune=lambda_sh)
        result = encode_model(*rd_train(pretrained, dataset, point_config, progress=False))
        points.append({"size": len(result.data), "survivors": result.scene.count,
                       "degree": float(np.mean(np.sum(result.scene.sh_hard(), axis=1))),
                       "psnr": evaluate(decode(result.data), dataset.views)["psnr"]})
    assert sizes_shrink_with_lambda(grid, [p["size"] for p in points])
    assert all(b["survivors"] <= a["survivors"] for a, b in zip(points, points[1:]))
    assert all(b["degree"] <= a["degree"] for a, b in zip(points, points[1:]))
    assert points[0]["psnr"] > reference - 1.0
    assert len(pretrained.dump()) >= 10 * points[1]["size"]
