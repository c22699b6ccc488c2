# "trainer.py" from libRDGSPy by NinjaCheetah & Contributors
#
# Two-stage optimization. pretrain() fits the Gaussians against the rendering loss alone; rd_train() then adds the
# Gaussian masks, the SH-degree masks and ECVQ, and optimizes everything jointly against
#
#     L = lambda_gs * L_gs_prune + lambda_sh * L_sh_prune + L_rate + L_vq + (1 - lambda_ssim) * L1 + lambda_ssim * D-SSIM

import csv
import dataclasses
import logging
import math
from dataclasses import dataclass

import numpy as np
from tqdm import tqdm

from .ecvq import TAGS, QuantizerBank, quantize_cloud, quantize_backward
from .errors import NonFiniteLossError
from .gaussians import GaussianCloud, load_ply, save_ply
from .metrics import psnr, render_loss_terms, ssim, l1
from .optim import Adam
from .pruning import MaskSet, gaussian_prune_loss, mask_gradients, prune_ratios, sh_prune_loss
from .renderer import render, render_backward
from .scene import Dataset, View, random_cloud
from .shared import default_threads
from .types import Camera, CloudGradients, LossComponents, RasterSettings

log = logging.getLogger(__name__)

# (lambda_gs_prune, lambda_sh_prune) rate points, from the highest compression to the highest quality.
SWEEP_PRESETS = {
    "real": [(0.05, 0.5), (0.02, 0.2), (0.01, 0.1), (0.005, 0.05), (0.002, 0.02), (0.0005, 0.005)],
    "synthetic": [(0.005, 0.025), (0.002, 0.01), (0.001, 0.005), (0.0005, 0.0025), (0.0002, 0.001),
                  (0.0001, 0.0005)],
}
SCENE_KINDS = ("real", "synthetic")
LOG_COLUMNS = ["iteration", "stage", "loss", "l1", "d_ssim", "gs_prune", "sh_prune", "rate", "vq",
               "gaussian_prune_ratio", "sh_prune_ratio", "psnr"]


@dataclass
class TrainConfig:
    """
    Every knob of a training run. Defaults follow the reference 3DGS learning rates and the RD hyperparameters of the
    method, scaled down to desk-sized scenes.
    """
    lambda_gs_prune: float = 0.005
    lambda_sh_prune: float = 0.05
    lambda_ssim: float = 0.2
    lr_position: float = 0.00016
    lr_scale: float = 0.005
    lr_rotation: float = 0.001
    lr_opacity: float = 0.05
    lr_dc: float = 0.0025
    lr_sh_rest: float = 0.000125
    lr_gaussian_mask: float = 0.01
    lr_sh_mask_real: float = 0.05
    lr_sh_mask_synthetic: float = 0.005
    lr_codebook: float = 0.0002
    lr_logits: float = 0.002
    scene_kind: str = "synthetic"
    phi_threshold: float = 0.1
    theta_threshold: float = 0.1
    lambda_scale: float = 32768.0
    lambda_rotation: float = 256.0
    lambda_dc: float = 256.0
    lambda_sh1: float = 256.0
    lambda_sh2: float = 256.0
    lambda_sh3: float = 256.0
    codebook_size_geometry: int = 8192
    codebook_size_sh: int = 4096
    codebook_scaling: bool = True
    rd_selection: bool = True
    enable_gs_prune: bool = True
    enable_sh_prune: bool = True
    enable_ecvq: bool = True
    pretrain_iters: int = 3000
    rd_iters: int = 5000
    initial_gaussians: int = 1000
    width: int = 64
    height: int = 64
    views: int = 16
    seed: int = 0
    background: tuple = (0.0, 0.0, 0.0)
    threads: int = 0  # 0 takes RDGS_THREADS, or 1 when it is unset
    log_every: int = 100
    position_tolerance: float = 0.01

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if (f.name.startswith("lambda_") or f.name.startswith("lr_") or f.name.endswith("_iters")) and value < 0:
                raise ValueError("'" + f.name + "' must not be negative, got " + str(value) + ".")
        if self.scene_kind not in SCENE_KINDS:
            raise ValueError("'scene_kind' must be one of " + ", ".join(SCENE_KINDS) + ", got '" +
                             str(self.scene_kind) + "'.")
        if len(self.background) != 3:
            raise ValueError("'background' needs three components.")

    @property
    def lr_sh_mask(self) -> float:
        return self.lr_sh_mask_real if self.scene_kind == "real" else self.lr_sh_mask_synthetic

    def lambdas(self) -> dict[str, float]:
        return {"scale": self.lambda_scale, "rotation": self.lambda_rotation, "dc": self.lambda_dc,
                "sh1": self.lambda_sh1, "sh2": self.lambda_sh2, "sh3": self.lambda_sh3}

    def codebook_sizes(self) -> dict[str, int]:
        return {tag: self.codebook_size_geometry if tag in ("scale", "rotation", "dc") else self.codebook_size_sh
                for tag in TAGS}

    def raster_settings(self) -> RasterSettings:
        return RasterSettings(background=np.array(self.background, dtype=np.float64),
                              threads=self.threads if self.threads > 0 else default_threads())

    def load(self, config_data: str) -> None:
        """
        Loads a flat "key = value" config and sets the matching fields. Blank lines and lines starting with # are
        ignored. Values are converted to the type of the field they set.

        Parameters
        ----------
        config_data : str
            The contents of the config file.
        """
        fields = {f.name: f for f in dataclasses.fields(self)}
        for number, line in enumerate(config_data.splitlines(), start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError("Config line " + str(number) + " is not a 'key = value' pair: " + line)
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in fields:
                raise ValueError("Unknown config key '" + key + "' on line " + str(number) + ".")
            setattr(self, key, _coerce(value, type(getattr(TrainConfig(), key)), key))
        self.validate()

    def dump(self) -> str:
        """
        Dumps the config into the flat "key = value" format read by load().
        """
        lines = []
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = ",".join(repr(float(v)) for v in value)
            elif isinstance(value, bool):
                value = "true" if value else "false"
            lines.append(f.name + " = " + str(value))
        return "\n".join(lines) + "\n"


def _coerce(value: str, kind: type, key: str):
    try:
        if kind is bool:
            if value.lower() in ("1", "true", "yes", "on"):
                return True
            if value.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if kind is tuple:
            return tuple(float(v) for v in value.split(","))
        if kind is int:
            return int(value)
        if kind is float:
            return float(value)
        return value
    except ValueError:
        raise ValueError("Config key '" + key + "' expects a " + kind.__name__ + ", got '" + value + "'.")


def load_config(path: str | None) -> TrainConfig:
    config = TrainConfig()
    if path:
        with open(path) as config_file:
            config.load(config_file.read())
    return config


def total_loss(components: LossComponents, config: TrainConfig) -> float:
    """
    Gets the total training objective from its components.

    Parameters
    ----------
    components : LossComponents
        The loss terms.
    config : TrainConfig
        Supplies lambda_gs_prune, lambda_sh_prune and lambda_ssim.

    Returns
    -------
    float
        lambda_gs * gs_prune + lambda_sh * sh_prune + rate + vq + (1 - lambda_ssim) * l1 + lambda_ssim * d_ssim.
    """
    for f in dataclasses.fields(components):
        value = getattr(components, f.name)
        if not math.isfinite(value):
            raise NonFiniteLossError(f.name, value)
    return (config.lambda_gs_prune * components.gs_prune + config.lambda_sh_prune * components.sh_prune +
            components.rate + components.vq + components.render(config.lambda_ssim))


def camera_extent(cameras: list[Camera]) -> float:
    """
    Gets the radius of the camera rig, 1.1 times the largest distance of a camera centre from their mean. Position
    learning rates are scaled by it.
    """
    centers = np.array([camera.center for camera in cameras])
    radius = float(np.max(np.linalg.norm(centers - centers.mean(axis=0), axis=1))) if len(cameras) > 1 else 1.0
    return 1.1 * radius if radius > 0 else 1.0


def sizes_shrink_with_lambda(grid: list[tuple[float, float]], sizes: list[float]) -> bool:
    """
    Checks that file sizes strictly decrease as the (lambda_gs, lambda_sh) grid points grow, whatever order the
    grid was run in.
    """
    ordered = [size for _, size in sorted(zip(grid, sizes), key=lambda pair: pair[0])]
    return all(later < earlier for earlier, later in zip(ordered, ordered[1:]))


def _attribute_params(cloud: GaussianCloud) -> dict[str, np.ndarray]:
    # Slices are views, so Adam updates the cloud itself.
    return {"positions": cloud.positions, "log_scales": cloud.log_scales, "rotations": cloud.rotations,
            "opacity_logits": cloud.opacity_logits, "sh_dc": cloud.sh_coeffs[:, :1, :],
            "sh_rest": cloud.sh_coeffs[:, 1:, :]}


def _attribute_grads(grads: CloudGradients) -> dict[str, np.ndarray]:
    return {"positions": grads.positions, "log_scales": grads.log_scales, "rotations": grads.rotations,
            "opacity_logits": grads.opacity_logits, "sh_dc": grads.sh_coeffs[:, :1, :],
            "sh_rest": grads.sh_coeffs[:, 1:, :]}


def _attribute_lrs(config: TrainConfig, extent: float) -> dict[str, float]:
    return {"positions": config.lr_position * extent, "log_scales": config.lr_scale, "rotations": config.lr_rotation,
            "opacity_logits": config.lr_opacity, "sh_dc": config.lr_dc, "sh_rest": config.lr_sh_rest}


class TrainingLog:
    """
    A TrainingLog writes one CSV row per logged iteration. With no path it only keeps the rows in memory.
    """
    def __init__(self, path: str | None = None):
        self.path = path
        self.rows: list[dict] = []
        self._file = open(path, "w", newline="") if path else None
        self._writer = csv.DictWriter(self._file, fieldnames=LOG_COLUMNS) if self._file else None
        if self._writer:
            self._writer.writeheader()

    def write(self, row: dict) -> None:
        self.rows.append(row)
        if self._writer:
            self._writer.writerow(row)
            self._file.flush()

    def close(self) -> None:
        if self._file:
            self._file.close()
            self._file = None


def _log_row(iteration: int, stage: str, loss: float, components: LossComponents, masks: MaskSet | None,
             image, target) -> dict:
    gaussian_ratio, sh_ratio = prune_ratios(masks) if masks is not None else (0.0, 0.0)
    return {"iteration": iteration, "stage": stage, "loss": loss, "l1": components.l1, "d_ssim": components.d_ssim,
            "gs_prune": components.gs_prune, "sh_prune": components.sh_prune, "rate": components.rate,
            "vq": components.vq, "gaussian_prune_ratio": gaussian_ratio, "sh_prune_ratio": sh_ratio,
            "psnr": psnr(image.clamped(), target)}


def _initial_bank(cloud: GaussianCloud, masks: MaskSet, config: TrainConfig) -> QuantizerBank:
    return QuantizerBank.init_from_cloud(cloud, masks, config.codebook_sizes(), config.seed, config.lambdas(),
                                         config.rd_selection, config.codebook_scaling)


def _training_views(dataset: Dataset) -> list[View]:
    train = dataset.train_views()
    if not train:
        raise ValueError("Cannot train on an empty dataset.")
    return train


def pretrain(dataset: Dataset, config: TrainConfig, init: GaussianCloud | None = None,
             training_log: TrainingLog | None = None, progress: bool = True) -> GaussianCloud:
    """
    Fits a cloud to a dataset with the rendering loss alone. There is no densification: the number of Gaussians is
    fixed by the initialization.

    Parameters
    ----------
    dataset : Dataset
        The views to fit. Only the training split is used.
    config : TrainConfig
        The configuration. pretrain_iters sets the number of steps.
    init : GaussianCloud, optional
        The initial cloud. Defaults to random_cloud(config.initial_gaussians).
    training_log : TrainingLog, optional
        Where to write logged iterations.
    progress : bool
        Whether to show a progress bar.

    Returns
    -------
    GaussianCloud
        The fitted cloud, in float64.
    """
    train = _training_views(dataset)
    if init is None:
        init = random_cloud(config.initial_gaussians, config.seed)
    cloud = init.astype(np.float64)
    rng = np.random.default_rng(config.seed)
    settings = config.raster_settings()
    adam = Adam(_attribute_lrs(config, camera_extent([view.camera for view in dataset.views])))
    params = _attribute_params(cloud)
    log.info("Pretraining %d Gaussians for %d iterations", cloud.count, config.pretrain_iters)
    for iteration in tqdm(range(1, config.pretrain_iters + 1), desc="pretrain", disable=not progress):
        view = train[int(rng.integers(len(train)))]
        image, tape = render(cloud, view.camera, settings=settings)
        l1_value, d_ssim_value, grad_image = render_loss_terms(image.color, view.image, config.lambda_ssim)
        components = LossComponents(l1=l1_value, d_ssim=d_ssim_value)
        loss = total_loss(components, config)
        grads = render_backward(tape, grad_image)
        adam.step(params, _attribute_grads(grads))
        if training_log is not None and (iteration % max(1, config.log_every) == 0 or
                                         iteration == config.pretrain_iters):
            training_log.write(_log_row(iteration, "pretrain", loss, components, None, image, view.image))
    return cloud


def rd_train(cloud: GaussianCloud, dataset: Dataset, config: TrainConfig, masks: MaskSet | None = None,
             bank: QuantizerBank | None = None, training_log: TrainingLog | None = None,
             progress: bool = True) -> tuple[GaussianCloud, MaskSet, QuantizerBank]:
    """
    Runs rate-distortion training on a pretrained cloud. Every iteration samples one training view, quantizes the
    masked cloud, renders the quantized view and updates the attributes, masks, codebooks and logits together.
    Masked Gaussians stay in the cloud; they are only removed when encoding.

    Parameters
    ----------
    cloud : GaussianCloud
        The pretrained cloud.
    dataset : Dataset
        The views. Only the training split is used.
    config : TrainConfig
        The configuration. rd_iters sets the number of steps.
    masks : MaskSet, optional
        Masks to continue from. Defaults to MaskSet.init().
    bank : QuantizerBank, optional
        Quantizers to continue from. Defaults to a bank sampled from the cloud.
    training_log : TrainingLog, optional
        Where to write logged iterations.
    progress : bool
        Whether to show a progress bar.

    Returns
    -------
    tuple[GaussianCloud, MaskSet, QuantizerBank]
        The trained cloud (float64), masks and bank.
    """
    train = _training_views(dataset)
    cloud = cloud.astype(np.float64)
    n = cloud.count
    if masks is None:
        masks = MaskSet.init(n, config.phi_threshold, config.theta_threshold)
    masks.check_size(cloud)
    if bank is None:
        bank = _initial_bank(cloud, masks, config)
    rng = np.random.default_rng(config.seed + 1)
    settings = config.raster_settings()
    lrs = _attribute_lrs(config, camera_extent([view.camera for view in dataset.views]))
    lrs["gaussian_mask"] = config.lr_gaussian_mask
    lrs["sh_mask"] = config.lr_sh_mask
    for tag in TAGS:
        lrs["codebook_" + tag] = config.lr_codebook
        lrs["logits_" + tag] = config.lr_logits
    adam = Adam(lrs)
    params = _attribute_params(cloud)
    params["gaussian_mask"] = masks.gaussian_mask_raw
    params["sh_mask"] = masks.sh_mask_raw
    for tag in TAGS:
        params["codebook_" + tag] = bank[tag].codebook.codewords
        params["logits_" + tag] = bank[tag].entropy_model.logits
    lambda_gs = config.lambda_gs_prune if config.enable_gs_prune else 0.0
    lambda_sh = config.lambda_sh_prune if config.enable_sh_prune else 0.0
    run_config = dataclasses.replace(config, lambda_gs_prune=lambda_gs, lambda_sh_prune=lambda_sh)
    log.info("RD training %d Gaussians for %d iterations (lambda_gs=%g, lambda_sh=%g)", n, config.rd_iters,
             lambda_gs, lambda_sh)
    for iteration in tqdm(range(1, config.rd_iters + 1), desc="rd-train", disable=not progress):
        view = train[int(rng.integers(len(train)))]
        result = quantize_cloud(cloud, masks, bank) if config.enable_ecvq else None
        image, tape = render(cloud, view.camera, masks, result.view if result else None, settings)
        l1_value, d_ssim_value, grad_image = render_loss_terms(image.color, view.image, config.lambda_ssim)
        components = LossComponents(gs_prune=gaussian_prune_loss(masks) if config.enable_gs_prune else 0.0,
                                    sh_prune=sh_prune_loss(masks) if config.enable_sh_prune else 0.0,
                                    rate=result.rate if result else 0.0, vq=result.vq if result else 0.0,
                                    l1=l1_value, d_ssim=d_ssim_value)
        loss = total_loss(components, run_config)
        grads = render_backward(tape, grad_image)
        step_grads = _attribute_grads(grads)
        if result is not None:
            attribute_grads, bank_grads = quantize_backward(result, cloud, bank)
            for name, grad in _attribute_grads(attribute_grads).items():
                step_grads[name] = step_grads[name] + grad
            for tag in TAGS:
                step_grads["codebook_" + tag] = bank_grads.codewords[tag]
                step_grads["logits_" + tag] = bank_grads.logits[tag]
        grad_gaussian, grad_sh = mask_gradients(masks, lambda_gs, lambda_sh, grads.gaussian_mask, grads.sh_mask)
        if config.enable_gs_prune:
            step_grads["gaussian_mask"] = grad_gaussian
        if config.enable_sh_prune:
            step_grads["sh_mask"] = grad_sh
        adam.step(params, step_grads)
        if training_log is not None and (iteration % max(1, config.log_every) == 0 or iteration == config.rd_iters):
            training_log.write(_log_row(iteration, "rd", loss, components, masks, image, view.image))
    if not config.enable_ecvq:
        # Without ECVQ training the codebooks are sampled from the final attributes.
        bank = _initial_bank(cloud, masks, config)
    gaussian_ratio, sh_ratio = prune_ratios(masks)
    log.info("Gaussian prune ratio %.4f, SH prune ratio %.4f", gaussian_ratio, sh_ratio)
    return cloud, masks, bank


def evaluate(cloud: GaussianCloud, views: list[View], masks: MaskSet | None = None,
             settings: RasterSettings | None = None) -> dict[str, float]:
    """
    Renders a cloud from every view and averages the image metrics.

    Parameters
    ----------
    cloud : GaussianCloud
        The cloud.
    views : list[View]
        The views to measure on.
    masks : MaskSet, optional
        Masks to render with.
    settings : RasterSettings, optional
        Rasterizer settings.

    Returns
    -------
    dict[str, float]
        Mean "psnr", "ssim" and "l1" over the views. PSNR is +inf only if every view is reproduced exactly.
    """
    if not views:
        raise ValueError("Cannot evaluate on an empty set of views.")
    values = {"psnr": [], "ssim": [], "l1": []}
    cloud = cloud.astype(np.float64)
    for view in views:
        image, _ = render(cloud, view.camera, masks, settings=settings)
        clamped = image.clamped()
        values["psnr"].append(psnr(clamped, view.image))
        values["ssim"].append(ssim(clamped, view.image))
        values["l1"].append(l1(clamped, view.image))
    return {name: float(np.mean(series)) for name, series in values.items()}


def save_checkpoint(prefix: str, cloud: GaussianCloud, masks: MaskSet | None = None,
                    bank: QuantizerBank | None = None) -> None:
    """
    Saves a training state as prefix.ply plus a prefix.npz sidecar holding the masks and the quantizer bank.
    """
    save_ply(cloud.astype(np.float32), prefix + ".ply")
    arrays = {}
    if masks is not None:
        arrays["gaussian_mask_raw"] = masks.gaussian_mask_raw
        arrays["sh_mask_raw"] = masks.sh_mask_raw
        arrays["thresholds"] = np.array([masks.phi_threshold, masks.theta_threshold])
    if bank is not None:
        arrays.update(bank.to_arrays())
    np.savez(prefix + ".npz", **arrays)


def load_checkpoint(prefix: str) -> tuple[GaussianCloud, MaskSet | None, QuantizerBank | None]:
    """
    Loads a training state saved with save_checkpoint(). Masks and bank are None when the sidecar lacks them.
    """
    cloud = load_ply(prefix + ".ply")
    masks, bank = None, None
    try:
        with np.load(prefix + ".npz") as arrays:
            if "gaussian_mask_raw" in arrays:
                thresholds = arrays["thresholds"]
                masks = MaskSet(arrays["gaussian_mask_raw"], arrays["sh_mask_raw"], float(thresholds[0]),
                                float(thresholds[1]))
            if "codebook_scale" in arrays:
                bank = QuantizerBank.from_arrays({name: arrays[name] for name in arrays.files})
    except FileNotFoundError:
        log.debug("No checkpoint sidecar next to %s.ply", prefix)
    return cloud, masks, bank
