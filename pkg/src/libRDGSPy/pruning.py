# "pruning.py" from libRDGSPy by NinjaCheetah & Contributors
#
# Learnable Gaussian masks and per-degree SH masks. Soft masks are sigmoids of raw values, hard masks are the soft
# masks binarized at a threshold, and gradients pass the binarization with the straight-through estimator.

import numpy as np

from .errors import ShapeMismatchError
from .gaussians import GaussianCloud
from .shared import sigmoid, inverse_sigmoid
from .sh import degree_slice

# Highest SH degree that can be masked.
SH_MAX_DEGREE = 3
# Raw Gaussian masks start at sigmoid^-1(0.9), so a fresh MaskSet keeps every Gaussian.
GAUSSIAN_MASK_INIT = float(inverse_sigmoid(0.9))
SH_MASK_INIT = 0.0


class MaskSet:
    """
    A MaskSet object holds the raw values of the Gaussian masks and the per-degree SH masks of a cloud.

    Attributes
    ----------
    gaussian_mask_raw : np.ndarray
        N x 1 raw Gaussian mask values.
    sh_mask_raw : np.ndarray
        N x 3 raw SH mask values, one column per degree 1..3.
    phi_threshold : float
        Gaussian mask threshold. A Gaussian is kept iff its soft mask is strictly above it.
    theta_threshold : float
        SH mask threshold. A degree is kept iff its soft mask is strictly above it.
    """
    def __init__(self, gaussian_mask_raw=None, sh_mask_raw=None, phi_threshold: float = 0.1,
                 theta_threshold: float = 0.1):
        self.gaussian_mask_raw: np.ndarray = np.zeros((0, 1)) if gaussian_mask_raw is None else \
            np.asarray(gaussian_mask_raw, dtype=np.float64).reshape(-1, 1)
        self.sh_mask_raw: np.ndarray = np.zeros((0, 3)) if sh_mask_raw is None else \
            np.asarray(sh_mask_raw, dtype=np.float64).reshape(-1, 3)
        if self.gaussian_mask_raw.shape[0] != self.sh_mask_raw.shape[0]:
            raise ShapeMismatchError("Gaussian and SH masks must cover the same number of Gaussians.")
        if not 0 < phi_threshold < 1 or not 0 < theta_threshold < 1:
            raise ValueError("Mask thresholds must lie in (0, 1).")
        self.phi_threshold = phi_threshold
        self.theta_threshold = theta_threshold

    @classmethod
    def init(cls, n: int, phi_threshold: float = 0.1, theta_threshold: float = 0.1) -> "MaskSet":
        """
        Creates masks for n Gaussians that keep everything: Gaussian masks start at soft value 0.9 and SH masks at 0.5.

        Parameters
        ----------
        n : int
            The number of Gaussians.
        phi_threshold : float
            Gaussian mask threshold.
        theta_threshold : float
            SH mask threshold.

        Returns
        -------
        MaskSet
            The new masks.
        """
        return cls(np.full((n, 1), GAUSSIAN_MASK_INIT), np.full((n, 3), SH_MASK_INIT), phi_threshold,
                   theta_threshold)

    def __len__(self) -> int:
        return self.gaussian_mask_raw.shape[0]

    def copy(self) -> "MaskSet":
        return MaskSet(self.gaussian_mask_raw.copy(), self.sh_mask_raw.copy(), self.phi_threshold,
                       self.theta_threshold)

    def gaussian_soft(self) -> np.ndarray:
        return sigmoid(self.gaussian_mask_raw)

    def gaussian_hard(self) -> np.ndarray:
        """
        Gets the N x 1 hard Gaussian masks as floats in {0, 1}.
        """
        return gaussian_mask_forward(self.gaussian_mask_raw, self.phi_threshold)[1]

    def sh_soft(self) -> np.ndarray:
        return sigmoid(self.sh_mask_raw)

    def sh_hard(self) -> np.ndarray:
        """
        Gets the N x 3 hard SH masks as floats in {0, 1}, one column per degree 1..3.
        """
        return sh_mask_forward(self.sh_mask_raw, self.theta_threshold)[1]

    def check_size(self, cloud: GaussianCloud) -> None:
        if len(self) != cloud.count:
            raise ShapeMismatchError("The masks cover " + str(len(self)) + " Gaussians, but the cloud has " +
                                     str(cloud.count) + ".")


def gaussian_mask_forward(raw, threshold: float = 0.1) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Computes the soft and hard Gaussian masks and the straight-through derivative of the hard mask.

    Parameters
    ----------
    raw : float or np.ndarray
        Raw mask values.
    threshold : float
        Binarization threshold on the soft mask.

    Returns
    -------
    tuple[np.ndarray, np.ndarray, np.ndarray]
        The soft masks, the hard masks (1.0 iff soft > threshold, else 0.0) and d(hard)/d(raw) as passed by the
        straight-through estimator, which is the sigmoid derivative soft * (1 - soft).
    """
    soft = sigmoid(np.asarray(raw, dtype=np.float64))
    hard = (soft > threshold).astype(np.float64)
    return soft, hard, soft * (1.0 - soft)


def sh_mask_forward(raw, threshold: float = 0.1) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Computes the soft and hard SH masks per degree. Works exactly like gaussian_mask_forward(), column by column.

    Parameters
    ----------
    raw : np.ndarray
        N x 3 raw SH mask values.
    threshold : float
        Binarization threshold on the soft masks.

    Returns
    -------
    tuple[np.ndarray, np.ndarray, np.ndarray]
        Soft masks, hard masks and straight-through derivatives, each N x 3.
    """
    return gaussian_mask_forward(raw, threshold)


def apply_gaussian_masks(cloud: GaussianCloud, masks: MaskSet) -> tuple[np.ndarray, np.ndarray]:
    """
    Applies the hard Gaussian masks to the activated scales and opacities. Masked Gaussians end up with exactly zero
    scale and opacity.

    Parameters
    ----------
    cloud : GaussianCloud
        The cloud to mask.
    masks : MaskSet
        The masks, sized to the cloud.

    Returns
    -------
    tuple[np.ndarray, np.ndarray]
        The N x 3 masked scales and N x 1 masked opacities.
    """
    masks.check_size(cloud)
    hard = masks.gaussian_hard()
    return hard * np.exp(cloud.log_scales.astype(np.float64)), hard * sigmoid(cloud.opacity_logits.astype(np.float64))


def apply_sh_masks(sh_coeffs: np.ndarray, sh_hard: np.ndarray) -> np.ndarray:
    """
    Zeroes the SH coefficients of every masked degree.

    Parameters
    ----------
    sh_coeffs : np.ndarray
        N x 16 x 3 coefficients.
    sh_hard : np.ndarray
        N x 3 hard SH masks for degrees 1..3.

    Returns
    -------
    np.ndarray
        The masked N x 16 x 3 coefficients. The DC term is never masked.
    """
    sh_coeffs = np.asarray(sh_coeffs, dtype=np.float64)
    if sh_hard.shape[0] != sh_coeffs.shape[0]:
        raise ShapeMismatchError("SH masks and coefficients cover different numbers of Gaussians.")
    return sh_coeffs * sh_coefficient_mask(sh_hard)[:, :, None]


def sh_coefficient_mask(sh_hard: np.ndarray) -> np.ndarray:
    """
    Expands N x 3 per-degree hard masks to N x 16 per-coefficient masks, with the DC column always 1.
    """
    expanded = np.ones((sh_hard.shape[0], 16))
    for degree in range(1, SH_MAX_DEGREE + 1):
        expanded[:, degree_slice(degree)] = sh_hard[:, degree - 1:degree]
    return expanded


def sh_degree_weights(max_degree: int = SH_MAX_DEGREE) -> np.ndarray:
    """
    Gets the weight of each SH degree in the SH prune loss, (2l + 1) / ((k + 1)^2 - 1). They sum to 1.

    Parameters
    ----------
    max_degree : int
        The highest SH degree k. Defaults to 3.

    Returns
    -------
    np.ndarray
        One weight per degree 1..k.
    """
    degrees = np.arange(1, max_degree + 1)
    return (2 * degrees + 1) / ((max_degree + 1) ** 2 - 1)


def gaussian_prune_loss(masks: MaskSet) -> float:
    """
    Gets the Gaussian prune loss, the mean soft Gaussian mask. Defined as 0 for an empty mask set.

    Parameters
    ----------
    masks : MaskSet
        The masks.

    Returns
    -------
    float
        (1 / N) * sum of soft masks.
    """
    if len(masks) == 0:
        return 0.0
    return float(np.mean(masks.gaussian_soft()))


def gaussian_prune_loss_grad(masks: MaskSet) -> np.ndarray:
    """
    Gets the gradient of gaussian_prune_loss() with respect to the raw Gaussian mask values.
    """
    if len(masks) == 0:
        return np.zeros((0, 1))
    soft = masks.gaussian_soft()
    return soft * (1.0 - soft) / len(masks)


def sh_prune_loss(masks: MaskSet) -> float:
    """
    Gets the SH prune loss: the soft SH masks weighted by the share of coefficients their degree holds, averaged over
    Gaussians.

    Parameters
    ----------
    masks : MaskSet
        The masks.

    Returns
    -------
    float
        (1 / N) * sum_i sum_l w_l * soft_i^(l).
    """
    if len(masks) == 0:
        return 0.0
    return float(np.sum(masks.sh_soft() @ sh_degree_weights()) / len(masks))


def sh_prune_loss_grad(masks: MaskSet) -> np.ndarray:
    """
    Gets the gradient of sh_prune_loss() with respect to the raw SH mask values.
    """
    if len(masks) == 0:
        return np.zeros((0, 3))
    soft = masks.sh_soft()
    return soft * (1.0 - soft) * sh_degree_weights()[None, :] / len(masks)


def mask_gradients(masks: MaskSet, lambda_gs_prune: float, lambda_sh_prune: float, render_gaussian_grad=None,
                   render_sh_grad=None) -> tuple[np.ndarray, np.ndarray]:
    """
    Sums the gradients that reach the raw mask values: the weighted prune losses plus whatever the renderer passed
    back through the straight-through estimator.

    Parameters
    ----------
    masks : MaskSet
        The masks.
    lambda_gs_prune : float
        Weight of the Gaussian prune loss.
    lambda_sh_prune : float
        Weight of the SH prune loss.
    render_gaussian_grad : np.ndarray, optional
        N x 1 gradient of the rendering loss with respect to the raw Gaussian masks.
    render_sh_grad : np.ndarray, optional
        N x 3 gradient of the rendering loss with respect to the raw SH masks.

    Returns
    -------
    tuple[np.ndarray, np.ndarray]
        The N x 1 and N x 3 total gradients.
    """
    grad_gaussian = lambda_gs_prune * gaussian_prune_loss_grad(masks)
    grad_sh = lambda_sh_prune * sh_prune_loss_grad(masks)
    if render_gaussian_grad is not None:
        grad_gaussian = grad_gaussian + render_gaussian_grad
    if render_sh_grad is not None:
        grad_sh = grad_sh + render_sh_grad
    return grad_gaussian, grad_sh


def prune_ratios(masks: MaskSet) -> tuple[float, float]:
    """
    Gets the two prune diagnostics of a run: the fraction of Gaussians removed, and the fraction of higher-degree SH
    values of the surviving Gaussians that are masked (each degree counted by its number of coefficients).

    Parameters
    ----------
    masks : MaskSet
        The trained masks.

    Returns
    -------
    tuple[float, float]
        The Gaussian prune ratio and the adaptive SH prune ratio.
    """
    n = len(masks)
    if n == 0:
        return 0.0, 0.0
    keep = masks.gaussian_hard()[:, 0] > 0
    gaussian_ratio = 1.0 - float(np.count_nonzero(keep)) / n
    if not np.any(keep):
        return gaussian_ratio, 1.0
    sh_kept = masks.sh_hard()[keep] @ sh_degree_weights()
    return gaussian_ratio, 1.0 - float(np.mean(sh_kept))
