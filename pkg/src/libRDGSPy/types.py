# "types.py" from libRDGSPy by NinjaCheetah & Contributors
#
# Small records shared between modules. Anything with real behaviour lives in its own module.

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError


@dataclass
class Camera:
    """
    A pinhole camera. Camera space follows the reference 3DGS convention: x to the right, y down and z forward, so a
    point is in front of the camera when its camera-space z is positive.

    Attributes
    ----------
    rotation : np.ndarray
        3x3 world-to-camera rotation.
    translation : np.ndarray
        World-to-camera translation, so that p_cam = rotation @ p_world + translation.
    fx, fy : float
        Focal lengths in pixels.
    cx, cy : float
        Principal point in pixels. Pixel centres sit on integer coordinates.
    width, height : int
        Image size in pixels.
    near : float
        Near-plane distance. Gaussians closer than this are culled.
    """
    rotation: np.ndarray
    translation: np.ndarray
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    near: float = 0.01

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        self.validate()

    def validate(self) -> None:
        """
        Checks the camera invariants, raising a DomainError if one is broken.
        """
        if self.width < 1 or self.height < 1:
            raise DomainError("Camera image size must be at least 1x1, got " + str(self.width) + "x" +
                              str(self.height) + ".")
        if self.fx <= 0 or self.fy <= 0:
            raise DomainError("Camera focal lengths must be positive.")
        if self.near <= 0:
            raise DomainError("Camera near plane must be positive.")

    @property
    def center(self) -> np.ndarray:
        """
        The camera centre in world coordinates.
        """
        return -self.rotation.T @ self.translation

    @classmethod
    def look_at(cls, eye, target, width: int, height: int, fov_x: float = np.pi / 3, up=(0.0, 1.0, 0.0),
                near: float = 0.01) -> "Camera":
        """
        Builds a camera at `eye` looking at `target`, with the principal point in the middle of the image.

        Parameters
        ----------
        eye : array-like
            The camera centre.
        target : array-like
            The point the camera looks at.
        width, height : int
            Image size in pixels.
        fov_x : float
            Horizontal field of view in radians. Pixels are square.
        up : array-like
            World up direction.
        near : float
            Near-plane distance.

        Returns
        -------
        Camera
            The new camera.
        """
        eye = np.asarray(eye, dtype=np.float64)
        forward = np.asarray(target, dtype=np.float64) - eye
        norm = np.linalg.norm(forward)
        if norm == 0:
            raise DomainError("Camera eye and target must differ.")
        forward = forward / norm
        right = np.cross(forward, np.asarray(up, dtype=np.float64))
        if np.linalg.norm(right) < 1e-9:
            # Looking straight along the up axis, any perpendicular vector will do.
            right = np.cross(forward, np.array([1.0, 0.0, 0.0]))
        right = right / np.linalg.norm(right)
        down = np.cross(forward, right)
        rotation = np.stack([right, down, forward])
        focal = 0.5 * width / np.tan(0.5 * fov_x)
        return cls(rotation, -rotation @ eye, focal, focal, (width - 1) / 2.0, (height - 1) / 2.0, width, height, near)

    def to_dict(self) -> dict:
        return {
            "rotation": self.rotation.tolist(),
            "translation": self.translation.tolist(),
            "fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
            "width": self.width, "height": self.height, "near": self.near,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Camera":
        return cls(np.array(data["rotation"]), np.array(data["translation"]), float(data["fx"]), float(data["fy"]),
                   float(data["cx"]), float(data["cy"]), int(data["width"]), int(data["height"]),
                   float(data.get("near", 0.01)))


@dataclass
class RasterSettings:
    """
    Fixed parameters of the forward definition of the rasterizer. The backward pass reads the same settings from the
    tape, so forward and backward always agree.

    Attributes
    ----------
    tile_size : int
        Edge length of a square screen tile in pixels.
    cov_floor : float
        Isotropic term added to every projected covariance, in pixels squared.
    alpha_cutoff : float
        A Gaussian is skipped at a pixel when its alpha there is below this value.
    stop_transmittance : float
        Compositing stops for a pixel once its transmittance drops below this value.
    extent_sigmas : float
        Half-width of a Gaussian's screen-space bounding rectangle, in standard deviations.
    background : np.ndarray
        Background colour composited behind everything.
    threads : int
        Number of worker threads used over tiles. Results do not depend on it.
    """
    tile_size: int = 16
    cov_floor: float = 0.3
    alpha_cutoff: float = 1.0 / 255.0
    stop_transmittance: float = 1e-4
    extent_sigmas: float = 3.0
    background: np.ndarray = field(default_factory=lambda: np.zeros(3))
    threads: int = 1


@dataclass
class CloudGradients:
    """
    Gradients of a scalar loss with respect to every stored attribute of a GaussianCloud, plus the raw mask values
    when masks took part in rendering.

    Attributes
    ----------
    positions : np.ndarray
        N x 3.
    log_scales : np.ndarray
        N x 3.
    rotations : np.ndarray
        N x 4.
    opacity_logits : np.ndarray
        N x 1.
    sh_coeffs : np.ndarray
        N x 16 x 3.
    gaussian_mask : np.ndarray or None
        N x 1, gradient of the raw Gaussian mask values.
    sh_mask : np.ndarray or None
        N x 3, gradient of the raw SH mask values.
    """
    positions: np.ndarray
    log_scales: np.ndarray
    rotations: np.ndarray
    opacity_logits: np.ndarray
    sh_coeffs: np.ndarray
    gaussian_mask: np.ndarray | None = None
    sh_mask: np.ndarray | None = None

    @classmethod
    def zeros(cls, n: int, with_masks: bool = False) -> "CloudGradients":
        return cls(np.zeros((n, 3)), np.zeros((n, 3)), np.zeros((n, 4)), np.zeros((n, 1)), np.zeros((n, 16, 3)),
                   np.zeros((n, 1)) if with_masks else None, np.zeros((n, 3)) if with_masks else None)


@dataclass
class LossComponents:
    """
    The terms of the total training objective. Every term is a plain float.

    Attributes
    ----------
    gs_prune : float
        Gaussian-mask sparsity loss.
    sh_prune : float
        Degree-weighted SH-mask sparsity loss.
    rate : float
        ECVQ rate loss, in nats divided by the per-attribute lambda.
    vq : float
        ECVQ codeword distortion.
    l1 : float
        Mean absolute image error.
    d_ssim : float
        Structural dissimilarity, (1 - SSIM) / 2.
    """
    gs_prune: float = 0.0
    sh_prune: float = 0.0
    rate: float = 0.0
    vq: float = 0.0
    l1: float = 0.0
    d_ssim: float = 0.0

    def render(self, lambda_ssim: float) -> float:
        return (1.0 - lambda_ssim) * self.l1 + lambda_ssim * self.d_ssim


@dataclass
class CompositionEntry:
    """
    One row of a bitstream composition report.

    Attributes
    ----------
    category : str
        The name of the category, like "Indexes" or "Scales".
    size : int
        Size in bytes.
    proportion : float
        Share of the total in [0, 1].
    """
    category: str
    size: int
    proportion: float


@dataclass
class AttributeView:
    """
    Replacement values for the quantized attributes of a cloud. The renderer uses these instead of the stored
    attributes; gradients still flow to the stored attributes unchanged (straight-through).

    Attributes
    ----------
    log_scales : np.ndarray
        N x 3 log-scales.
    rotations : np.ndarray
        N x 4 quaternions.
    sh_coeffs : np.ndarray
        N x 16 x 3 SH coefficients.
    """
    log_scales: np.ndarray
    rotations: np.ndarray
    sh_coeffs: np.ndarray
