# "sh.py" from libRDGSPy by NinjaCheetah & Contributors
#
# Real spherical harmonics up to degree 3, with the constants and sign conventions of the reference 3DGS renderer.

import numpy as np

from .gaussians import SH_COEFFS, SH_DEGREE_START

SH_C0 = 0.28209479177387814
SH_C1 = 0.4886025119029199
SH_C2 = (
    1.0925484305920792,
    -1.0925484305920792,
    0.31539156525252005,
    -1.0925484305920792,
    0.5462742152960396,
)
SH_C3 = (
    -0.5900435899266435,
    2.890611442640554,
    -0.4570457994644658,
    0.3731763325901154,
    -0.4570457994644658,
    1.445305721320277,
    -0.5900435899266435,
)
# Colours are stored around this offset, so an all-zero SH vector renders mid grey.
SH_OFFSET = 0.5


def sh_basis(directions: np.ndarray, max_degree: int = 3) -> np.ndarray:
    """
    Evaluates the 16 real SH basis functions along N unit directions. Basis functions above max_degree are zero.

    Parameters
    ----------
    directions : np.ndarray
        N x 3 unit vectors.
    max_degree : int
        Highest degree to evaluate, 0 to 3.

    Returns
    -------
    np.ndarray
        N x 16 basis values.
    """
    directions = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    x, y, z = directions[:, 0], directions[:, 1], directions[:, 2]
    basis = np.zeros((directions.shape[0], SH_COEFFS))
    basis[:, 0] = SH_C0
    if max_degree > 0:
        basis[:, 1] = -SH_C1 * y
        basis[:, 2] = SH_C1 * z
        basis[:, 3] = -SH_C1 * x
    if max_degree > 1:
        xx, yy, zz = x * x, y * y, z * z
        basis[:, 4] = SH_C2[0] * x * y
        basis[:, 5] = SH_C2[1] * y * z
        basis[:, 6] = SH_C2[2] * (2.0 * zz - xx - yy)
        basis[:, 7] = SH_C2[3] * x * z
        basis[:, 8] = SH_C2[4] * (xx - yy)
    if max_degree > 2:
        basis[:, 9] = SH_C3[0] * y * (3.0 * xx - yy)
        basis[:, 10] = SH_C3[1] * x * y * z
        basis[:, 11] = SH_C3[2] * y * (4.0 * zz - xx - yy)
        basis[:, 12] = SH_C3[3] * z * (2.0 * zz - 3.0 * xx - 3.0 * yy)
        basis[:, 13] = SH_C3[4] * x * (4.0 * zz - xx - yy)
        basis[:, 14] = SH_C3[5] * z * (xx - yy)
        basis[:, 15] = SH_C3[6] * x * (xx - 3.0 * yy)
    return basis


def sh_basis_jacobian(directions: np.ndarray) -> np.ndarray:
    """
    Derivatives of the 16 basis functions with respect to the direction components, treating x, y and z as
    independent (the caller chains through the normalization).

    Parameters
    ----------
    directions : np.ndarray
        N x 3 unit vectors.

    Returns
    -------
    np.ndarray
        N x 16 x 3 array, [n, k, a] = d basis_k / d direction_a.
    """
    directions = np.asarray(directions, dtype=np.float64).reshape(-1, 3)
    x, y, z = directions[:, 0], directions[:, 1], directions[:, 2]
    xx, yy, zz = x * x, y * y, z * z
    jac = np.zeros((directions.shape[0], SH_COEFFS, 3))
    jac[:, 1, 1] = -SH_C1
    jac[:, 2, 2] = SH_C1
    jac[:, 3, 0] = -SH_C1
    jac[:, 4, 0], jac[:, 4, 1] = SH_C2[0] * y, SH_C2[0] * x
    jac[:, 5, 1], jac[:, 5, 2] = SH_C2[1] * z, SH_C2[1] * y
    jac[:, 6, 0], jac[:, 6, 1], jac[:, 6, 2] = -2.0 * SH_C2[2] * x, -2.0 * SH_C2[2] * y, 4.0 * SH_C2[2] * z
    jac[:, 7, 0], jac[:, 7, 2] = SH_C2[3] * z, SH_C2[3] * x
    jac[:, 8, 0], jac[:, 8, 1] = 2.0 * SH_C2[4] * x, -2.0 * SH_C2[4] * y
    jac[:, 9, 0], jac[:, 9, 1] = SH_C3[0] * 6.0 * x * y, SH_C3[0] * (3.0 * xx - 3.0 * yy)
    jac[:, 10, 0], jac[:, 10, 1], jac[:, 10, 2] = SH_C3[1] * y * z, SH_C3[1] * x * z, SH_C3[1] * x * y
    jac[:, 11, 0] = SH_C3[2] * -2.0 * x * y
    jac[:, 11, 1] = SH_C3[2] * (4.0 * zz - xx - 3.0 * yy)
    jac[:, 11, 2] = SH_C3[2] * 8.0 * y * z
    jac[:, 12, 0] = SH_C3[3] * -6.0 * x * z
    jac[:, 12, 1] = SH_C3[3] * -6.0 * y * z
    jac[:, 12, 2] = SH_C3[3] * (6.0 * zz - 3.0 * xx - 3.0 * yy)
    jac[:, 13, 0] = SH_C3[4] * (4.0 * zz - 3.0 * xx - yy)
    jac[:, 13, 1] = SH_C3[4] * -2.0 * x * y
    jac[:, 13, 2] = SH_C3[4] * 8.0 * x * z
    jac[:, 14, 0], jac[:, 14, 1], jac[:, 14, 2] = SH_C3[5] * 2.0 * x * z, SH_C3[5] * -2.0 * y * z, SH_C3[5] * (xx - yy)
    jac[:, 15, 0], jac[:, 15, 1] = SH_C3[6] * (3.0 * xx - 3.0 * yy), SH_C3[6] * -6.0 * x * y
    return jac


def eval_sh(coeffs: np.ndarray, direction: np.ndarray, max_degree: int = 3) -> np.ndarray:
    """
    Evaluates the colour of one Gaussian's SH coefficients along a view direction. Degrees above max_degree contribute
    nothing. The result is not clamped.

    Parameters
    ----------
    coeffs : np.ndarray
        16 x 3 SH coefficients.
    direction : np.ndarray
        Unit 3-vector.
    max_degree : int
        Highest degree used, 0 to 3.

    Returns
    -------
    np.ndarray
        The RGB colour.
    """
    if not 0 <= max_degree <= 3:
        raise ValueError("SH degree must be between 0 and 3, got " + str(max_degree) + ".")
    coeffs = np.asarray(coeffs, dtype=np.float64).reshape(SH_COEFFS, 3)
    basis = sh_basis(np.asarray(direction).reshape(1, 3), max_degree)[0]
    return basis @ coeffs + SH_OFFSET


def eval_sh_batch(coeffs: np.ndarray, directions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    Evaluates N colours at once with all degrees enabled. Pruned degrees are expected to already be zeroed in coeffs.

    Parameters
    ----------
    coeffs : np.ndarray
        N x 16 x 3 coefficients.
    directions : np.ndarray
        N x 3 unit view directions.

    Returns
    -------
    tuple[np.ndarray, np.ndarray]
        N x 3 colours and the N x 16 basis values (kept for the backward pass).
    """
    basis = sh_basis(directions, 3)
    return np.einsum("nk,nkc->nc", basis, coeffs) + SH_OFFSET, basis


def eval_sh_backward(coeffs: np.ndarray, directions: np.ndarray, basis: np.ndarray,
                     grad_colors: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    Backward pass of eval_sh_batch.

    Parameters
    ----------
    coeffs : np.ndarray
        N x 16 x 3 coefficients used in the forward pass.
    directions : np.ndarray
        N x 3 unit view directions used in the forward pass.
    basis : np.ndarray
        N x 16 basis values returned by the forward pass.
    grad_colors : np.ndarray
        N x 3 gradient of the loss with respect to the colours.

    Returns
    -------
    tuple[np.ndarray, np.ndarray]
        The N x 16 x 3 gradient for the coefficients and the N x 3 gradient for the (unnormalized-independent)
        direction components.
    """
    grad_coeffs = basis[:, :, None] * grad_colors[:, None, :]
    # d colour_c / d dir_a = sum_k coeffs[k, c] * d basis_k / d dir_a
    per_basis = np.einsum("nkc,nc->nk", coeffs, grad_colors)
    grad_dirs = np.einsum("nk,nka->na", per_basis, sh_basis_jacobian(directions))
    return grad_coeffs, grad_dirs


def degree_slice(degree: int) -> slice:
    """
    Gets the coefficient slice that holds one SH degree.
    """
    return slice(SH_DEGREE_START[degree], SH_DEGREE_START[degree + 1])
