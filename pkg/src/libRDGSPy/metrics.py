# "metrics.py" from libRDGSPy by NinjaCheetah & Contributors
#
# Image quality measures and the rendering loss. SSIM uses an 11x11 Gaussian window with sigma 1.5 and zero padding,
# the same definition the reference 3DGS trainer uses for its D-SSIM term.

import numpy as np
from scipy.ndimage import correlate1d

from .errors import ShapeMismatchError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def _gaussian_taps(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    offsets = np.arange(size) - size // 2
    taps = np.exp(-(offsets ** 2) / (2.0 * sigma ** 2))
    return taps / taps.sum()


_TAPS = _gaussian_taps()


def _blur(image: np.ndarray) -> np.ndarray:
    # Separable window over rows and columns, every channel on its own.
    out = correlate1d(image, _TAPS, axis=0, mode="constant", cval=0.0)
    return correlate1d(out, _TAPS, axis=1, mode="constant", cval=0.0)


def _as_pair(img, ref) -> tuple[np.ndarray, np.ndarray]:
    img = np.asarray(getattr(img, "color", img), dtype=np.float64)
    ref = np.asarray(getattr(ref, "color", ref), dtype=np.float64)
    if img.shape != ref.shape:
        raise ShapeMismatchError("Cannot compare images of shape " + str(img.shape) + " and " + str(ref.shape) + ".")
    if img.ndim == 2:
        img, ref = img[:, :, None], ref[:, :, None]
    return img, ref


def l1(img, ref) -> float:
    """
    Gets the mean absolute error between two images.
    """
    img, ref = _as_pair(img, ref)
    return float(np.mean(np.abs(img - ref)))


def l1_grad(img, ref) -> np.ndarray:
    img, ref = _as_pair(img, ref)
    return np.sign(img - ref) / img.size


def ssim(img, ref) -> float:
    """
    Gets the mean SSIM of two images, computed per channel and averaged over every pixel and channel.

    Parameters
    ----------
    img : np.ndarray or RenderedImage
        H x W x C image.
    ref : np.ndarray or RenderedImage
        H x W x C reference of the same shape.

    Returns
    -------
    float
        The SSIM, 1 for identical images.
    """
    return ssim_with_grad(img, ref, need_grad=False)[0]


def ssim_with_grad(img, ref, need_grad: bool = True) -> tuple[float, np.ndarray | None]:
    """
    Gets the mean SSIM of two images and its gradient with respect to the first one.

    Parameters
    ----------
    img : np.ndarray or RenderedImage
        H x W x C image to differentiate.
    ref : np.ndarray or RenderedImage
        H x W x C reference.
    need_grad : bool
        Whether to compute the gradient. Defaults to True.

    Returns
    -------
    tuple[float, np.ndarray or None]
        The SSIM and, if requested, dSSIM/dimg with the same shape as img.
    """
    shape = np.shape(getattr(img, "color", img))
    x, y = _as_pair(img, ref)
    mu_x, mu_y = _blur(x), _blur(y)
    sigma_xx = _blur(x * x) - mu_x * mu_x
    sigma_yy = _blur(y * y) - mu_y * mu_y
    sigma_xy = _blur(x * y) - mu_x * mu_y
    a = 2.0 * mu_x * mu_y + SSIM_C1
    b = 2.0 * sigma_xy + SSIM_C2
    c = mu_x * mu_x + mu_y * mu_y + SSIM_C1
    d = sigma_xx + sigma_yy + SSIM_C2
    ssim_map = (a * b) / (c * d)
    value = float(np.mean(ssim_map))
    if not need_grad:
        return value, None
    count = ssim_map.size
    # Partial derivatives of the SSIM map with respect to the blurred moments E[x], E[x^2] and E[xy].
    d_sxx = -ssim_map / d
    d_sxy = 2.0 * a / (c * d)
    d_mu = 2.0 * mu_y * b / (c * d) - 2.0 * mu_x * ssim_map / c
    d_mu = d_mu - 2.0 * mu_x * d_sxx - mu_y * d_sxy
    # The symmetric zero-padded window is its own adjoint.
    grad = (_blur(d_mu) + 2.0 * x * _blur(d_sxx) + y * _blur(d_sxy)) / count
    return value, grad.reshape(shape)


def d_ssim(img, ref) -> float:
    """
    Gets the structural dissimilarity (1 - SSIM) / 2.
    """
    return 0.5 * (1.0 - ssim(img, ref))


def psnr(img, ref) -> float:
    """
    Gets the PSNR of an image against a reference with peak value 1.

    Returns
    -------
    float
        The PSNR in dB, or +inf when the images are identical.
    """
    img, ref = _as_pair(img, ref)
    mse = float(np.mean((img - ref) ** 2))
    if mse == 0.0:
        return float("inf")
    return float(-10.0 * np.log10(mse))


def image_metrics(img, ref) -> tuple[float, float, float]:
    """
    Measures a rendered image against a reference. The rendered image is clamped to [0, 1] first, the way it would be
    when exported.

    Parameters
    ----------
    img : RenderedImage or np.ndarray
        The rendered image.
    ref : RenderedImage or np.ndarray
        The reference image, same dimensions.

    Returns
    -------
    tuple[float, float, float]
        L1, D-SSIM and PSNR (+inf for identical images).
    """
    img, ref = _as_pair(img, ref)
    img = np.clip(img, 0.0, 1.0)
    return l1(img, ref), d_ssim(img, ref), psnr(img, ref)


def render_loss_terms(img, ref, lambda_ssim: float = 0.2) -> tuple[float, float, np.ndarray]:
    """
    Gets the two terms of the rendering loss and the gradient of their weighted sum
    (1 - lambda_ssim) * L1 + lambda_ssim * D-SSIM. Nothing is clamped here.

    Parameters
    ----------
    img : np.ndarray or RenderedImage
        The rendered image.
    ref : np.ndarray or RenderedImage
        The target image.
    lambda_ssim : float
        Weight of the D-SSIM term. Defaults to 0.2.

    Returns
    -------
    tuple[float, float, np.ndarray]
        L1, D-SSIM and dL/dimg.
    """
    shape = np.shape(getattr(img, "color", img))
    l1_value = l1(img, ref)
    ssim_value, ssim_grad = ssim_with_grad(img, ref)
    grad = (1.0 - lambda_ssim) * l1_grad(img, ref).reshape(shape) - 0.5 * lambda_ssim * ssim_grad
    return l1_value, 0.5 * (1.0 - ssim_value), grad


def render_loss(img, ref, lambda_ssim: float = 0.2) -> tuple[float, np.ndarray]:
    """
    Gets the rendering loss (1 - lambda_ssim) * L1 + lambda_ssim * D-SSIM and its gradient with respect to the image.
    """
    l1_value, d_ssim_value, grad = render_loss_terms(img, ref, lambda_ssim)
    return (1.0 - lambda_ssim) * l1_value + lambda_ssim * d_ssim_value, grad
