# "renderer.py" from libRDGSPy by NinjaCheetah & Contributors
#
# A tile-based CPU rasterizer for 3D Gaussians with a hand-written backward pass. Every Gaussian is projected to a 2D
# Gaussian, binned into 16x16 screen tiles by its 3-sigma bounding rectangle, and alpha-composited front to back:
#
#     c(p) = sum_u c_u * sigma_u * prod_{v < u} (1 - sigma_v) + T_final * background,  sigma_u = alpha_u * M(p, u)
#
# Work is split over tiles. Gradients are accumulated into per-tile buffers and summed in tile order, so the result
# does not depend on the number of worker threads.

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, ShapeMismatchError
from .gaussians import GaussianCloud, covariances
from .pruning import MaskSet, sh_coefficient_mask
from .shared import sigmoid
from .sh import eval_sh_batch, eval_sh_backward
from .types import AttributeView, Camera, CloudGradients, RasterSettings

log = logging.getLogger(__name__)


@dataclass
class RenderedImage:
    """
    A rendered image. Values are not clamped; use clamped() before measuring or exporting.

    Attributes
    ----------
    color : np.ndarray
        H x W x 3 colours.
    alpha : np.ndarray
        H x W accumulated opacity, 1 - final transmittance.
    """
    color: np.ndarray
    alpha: np.ndarray

    @property
    def height(self) -> int:
        return self.color.shape[0]

    @property
    def width(self) -> int:
        return self.color.shape[1]

    def clamped(self) -> np.ndarray:
        return np.clip(self.color, 0.0, 1.0)


@dataclass
class Projection:
    """
    Per-Gaussian screen-space quantities produced by project().

    Attributes
    ----------
    means2d : np.ndarray
        N x 2 pixel-space means.
    cov2d : np.ndarray
        N x 2 x 2 screen covariances, floor included.
    conics : np.ndarray
        N x 2 x 2 inverses of cov2d.
    depths : np.ndarray
        N camera-space depths.
    culled : np.ndarray
        N booleans, True for Gaussians that take no part in rendering.
    rects : np.ndarray
        N x 4 bounding rectangles (x_min, y_min, x_max, y_max) in pixels.
    """
    means2d: np.ndarray
    cov2d: np.ndarray
    conics: np.ndarray
    depths: np.ndarray
    culled: np.ndarray
    rects: np.ndarray
    # Intermediates for the backward pass.
    cam_points: np.ndarray
    jacobians: np.ndarray
    transforms: np.ndarray
    cov3d: np.ndarray
    factors: np.ndarray
    rot_matrices: np.ndarray


@dataclass
class TileRecord:
    """
    Everything the backward pass needs from one tile. K is the number of Gaussians binned to the tile, P the number
    of pixels in it; pixel-by-Gaussian arrays list Gaussians front to back.
    """
    ids: np.ndarray
    pixel_rows: np.ndarray
    pixel_cols: np.ndarray
    dx: np.ndarray
    dy: np.ndarray
    sigma: np.ndarray
    trans_before: np.ndarray
    included: np.ndarray
    weights: np.ndarray
    trans_final: np.ndarray


class RenderTape:
    """
    A RenderTape records the intermediates of one render() call, so that render_backward() can compute exact
    gradients without redoing the forward pass.

    Attributes
    ----------
    camera : Camera
        The camera rendered from.
    settings : RasterSettings
        The rasterizer settings used.
    projection : Projection
        Per-Gaussian projection results.
    tiles : list[TileRecord]
        Per-tile contribution lists, transmittances and weights, in tile order.
    """
    def __init__(self, camera: Camera, settings: RasterSettings):
        self.camera = camera
        self.settings = settings
        self.projection: Projection | None = None
        self.tiles: list[TileRecord] = []
        # Values of the render graph for the backward pass.
        self.count: int = 0
        self.masked: bool = False
        self.phi_hard: np.ndarray = np.zeros((0, 1))
        self.phi_grad: np.ndarray = np.zeros((0, 1))
        self.theta_hard: np.ndarray = np.zeros((0, 3))
        self.theta_grad: np.ndarray = np.zeros((0, 3))
        self.exp_scales: np.ndarray = np.zeros((0, 3))
        self.scales: np.ndarray = np.zeros((0, 3))
        self.opacity_act: np.ndarray = np.zeros((0, 1))
        self.opacities: np.ndarray = np.zeros((0, 1))
        self.rotations: np.ndarray = np.zeros((0, 4))
        self.sh_source: np.ndarray = np.zeros((0, 16, 3))
        self.sh_effective: np.ndarray = np.zeros((0, 16, 3))
        self.directions: np.ndarray = np.zeros((0, 3))
        self.view_distances: np.ndarray = np.zeros(0)
        self.sh_values: np.ndarray = np.zeros((0, 16))
        self.colors: np.ndarray = np.zeros((0, 3))

    def contributors(self, row: int, col: int) -> np.ndarray:
        """
        Gets the ids of the Gaussians that contributed to one pixel, front to back.

        Parameters
        ----------
        row, col : int
            The pixel.

        Returns
        -------
        np.ndarray
            Gaussian indices in compositing order.
        """
        for tile in self.tiles:
            hit = np.nonzero((tile.pixel_rows == row) & (tile.pixel_cols == col))[0]
            if hit.size:
                return tile.ids[tile.included[hit[0]]]
        return np.zeros(0, dtype=np.int64)

    def transmittances(self, row: int, col: int) -> np.ndarray:
        """
        Gets the transmittance in front of each contributor of one pixel, front to back.
        """
        for tile in self.tiles:
            hit = np.nonzero((tile.pixel_rows == row) & (tile.pixel_cols == col))[0]
            if hit.size:
                return tile.trans_before[hit[0]][tile.included[hit[0]]]
        return np.zeros(0)


def project(cloud: GaussianCloud, cam: Camera, scales: np.ndarray | None = None, opacities: np.ndarray | None = None,
            rotations: np.ndarray | None = None, settings: RasterSettings | None = None) -> Projection:
    """
    Projects every Gaussian of a cloud onto the image plane of a camera, using the first-order (local affine)
    approximation of the perspective projection for the covariance.

    Parameters
    ----------
    cloud : GaussianCloud
        The cloud to project.
    cam : Camera
        The camera.
    scales : np.ndarray, optional
        N x 3 activated scales to use. Defaults to exp(cloud.log_scales).
    opacities : np.ndarray, optional
        N x 1 activated opacities. Gaussians with zero opacity are culled. Defaults to sigmoid(cloud.opacity_logits).
    rotations : np.ndarray, optional
        N x 4 quaternions. Defaults to cloud.rotations.
    settings : RasterSettings, optional
        Rasterizer settings. Defaults to RasterSettings().

    Returns
    -------
    Projection
        Screen-space means, covariances, conics, depths, cull flags and bounding rectangles.
    """
    settings = settings or RasterSettings()
    cam.validate()
    positions = cloud.positions.astype(np.float64)
    n = positions.shape[0]
    if scales is None:
        scales = np.exp(cloud.log_scales.astype(np.float64))
    if opacities is None:
        opacities = sigmoid(cloud.opacity_logits.astype(np.float64))
    if rotations is None:
        rotations = cloud.rotations.astype(np.float64)
    cov3d, factors, rot_matrices = covariances(scales, rotations)
    cam_points = positions @ cam.rotation.T + cam.translation
    depths = cam_points[:, 2]
    in_front = depths > cam.near
    z = np.where(in_front, depths, 1.0)
    x, y = cam_points[:, 0], cam_points[:, 1]
    jacobians = np.zeros((n, 2, 3))
    jacobians[:, 0, 0] = cam.fx / z
    jacobians[:, 0, 2] = -cam.fx * x / (z * z)
    jacobians[:, 1, 1] = cam.fy / z
    jacobians[:, 1, 2] = -cam.fy * y / (z * z)
    transforms = jacobians @ cam.rotation
    cov2d = transforms @ cov3d @ np.swapaxes(transforms, 1, 2)
    cov2d[:, 0, 0] += settings.cov_floor
    cov2d[:, 1, 1] += settings.cov_floor
    det = cov2d[:, 0, 0] * cov2d[:, 1, 1] - cov2d[:, 0, 1] * cov2d[:, 1, 0]
    conics = np.empty_like(cov2d)
    conics[:, 0, 0] = cov2d[:, 1, 1] / det
    conics[:, 1, 1] = cov2d[:, 0, 0] / det
    conics[:, 0, 1] = -cov2d[:, 0, 1] / det
    conics[:, 1, 0] = -cov2d[:, 1, 0] / det
    means2d = np.stack([cam.fx * x / z + cam.cx, cam.fy * y / z + cam.cy], axis=1)
    half_w = settings.extent_sigmas * np.sqrt(cov2d[:, 0, 0])
    half_h = settings.extent_sigmas * np.sqrt(cov2d[:, 1, 1])
    rects = np.stack([means2d[:, 0] - half_w, means2d[:, 1] - half_h,
                      means2d[:, 0] + half_w, means2d[:, 1] + half_h], axis=1)
    outside = (rects[:, 2] < 0) | (rects[:, 0] > cam.width - 1) | (rects[:, 3] < 0) | (rects[:, 1] > cam.height - 1)
    culled = ~in_front | outside | (np.asarray(opacities).reshape(n) <= 0) | ~np.isfinite(det) | (det <= 0)
    return Projection(means2d, cov2d, conics, depths, culled, rects, cam_points, jacobians, transforms, cov3d,
                      factors, rot_matrices)


def render(cloud: GaussianCloud, cam: Camera, masks: MaskSet | None = None, quantized: AttributeView | None = None,
           settings: RasterSettings | None = None) -> tuple[RenderedImage, RenderTape]:
    """
    Renders a cloud from a camera.

    Parameters
    ----------
    cloud : GaussianCloud
        The cloud to render.
    cam : Camera
        The camera.
    masks : MaskSet, optional
        If set, hard Gaussian masks multiply the activated scales and opacities, and hard SH masks zero the masked
        degrees.
    quantized : AttributeView, optional
        If set, its log-scales, rotations and SH coefficients replace the stored ones.
    settings : RasterSettings, optional
        Rasterizer settings. Defaults to RasterSettings().

    Returns
    -------
    tuple[RenderedImage, RenderTape]
        The image and the tape needed by render_backward().
    """
    settings = settings or RasterSettings()
    if cam.width < 1 or cam.height < 1:
        raise DomainError("Cannot render an image with zero resolution.")
    n = cloud.count
    tape = RenderTape(cam, settings)
    tape.count = n
    source = quantized if quantized is not None else cloud
    log_scales = np.asarray(source.log_scales, dtype=np.float64)
    rotations = np.asarray(source.rotations, dtype=np.float64)
    sh_source = np.asarray(source.sh_coeffs, dtype=np.float64)
    if masks is not None:
        masks.check_size(cloud)
        tape.masked = True
        soft = sigmoid(masks.gaussian_mask_raw)
        tape.phi_hard = (soft > masks.phi_threshold).astype(np.float64)
        tape.phi_grad = soft * (1.0 - soft)
        soft = sigmoid(masks.sh_mask_raw)
        tape.theta_hard = (soft > masks.theta_threshold).astype(np.float64)
        tape.theta_grad = soft * (1.0 - soft)
    else:
        tape.phi_hard = np.ones((n, 1))
        tape.theta_hard = np.ones((n, 3))
    tape.exp_scales = np.exp(log_scales)
    tape.scales = tape.phi_hard * tape.exp_scales
    tape.opacity_act = sigmoid(cloud.opacity_logits.astype(np.float64))
    tape.opacities = tape.phi_hard * tape.opacity_act
    tape.rotations = rotations
    tape.sh_source = sh_source
    tape.sh_effective = sh_source * sh_coefficient_mask(tape.theta_hard)[:, :, None]

    projection = project(cloud, cam, tape.scales, tape.opacities, rotations, settings)
    tape.projection = projection
    view_vectors = cloud.positions.astype(np.float64) - cam.center
    tape.view_distances = np.maximum(np.linalg.norm(view_vectors, axis=1), 1e-12)
    tape.directions = view_vectors / tape.view_distances[:, None]
    tape.colors, tape.sh_values = eval_sh_batch(tape.sh_effective, tape.directions)

    color = np.zeros((cam.height, cam.width, 3))
    alpha = np.zeros((cam.height, cam.width))
    # Stable sort on (depth, original index).
    order = np.lexsort((np.arange(n), projection.depths))
    order = order[~projection.culled[order]]
    tiles = _tile_grid(cam, settings.tile_size)
    with ThreadPoolExecutor(max_workers=max(1, settings.threads)) as pool:
        records = list(pool.map(lambda tile: _render_tile(tile, order, tape), tiles))
    for record in records:
        if record is None:
            continue
        tape.tiles.append(record)
    for (row0, row1, col0, col1), record in zip(tiles, records):
        if record is None:
            color[row0:row1, col0:col1] = settings.background
            continue
        h, w = row1 - row0, col1 - col0
        tile_color = record.weights @ tape.colors[record.ids] + record.trans_final[:, None] * settings.background
        color[row0:row1, col0:col1] = tile_color.reshape(h, w, 3)
        alpha[row0:row1, col0:col1] = (1.0 - record.trans_final).reshape(h, w)
    return RenderedImage(color, alpha), tape


def _tile_grid(cam: Camera, tile_size: int) -> list[tuple[int, int, int, int]]:
    tiles = []
    for row0 in range(0, cam.height, tile_size):
        for col0 in range(0, cam.width, tile_size):
            tiles.append((row0, min(row0 + tile_size, cam.height), col0, min(col0 + tile_size, cam.width)))
    return tiles


def _render_tile(tile, order: np.ndarray, tape: RenderTape) -> TileRecord | None:
    row0, row1, col0, col1 = tile
    rects = tape.projection.rects
    settings = tape.settings
    overlap = (rects[order, 0] <= col1 - 1) & (rects[order, 2] >= col0) & \
              (rects[order, 1] <= row1 - 1) & (rects[order, 3] >= row0)
    ids = order[overlap]
    rows, cols = np.mgrid[row0:row1, col0:col1]
    pixel_rows, pixel_cols = rows.reshape(-1), cols.reshape(-1)
    if ids.size == 0:
        return None
    means = tape.projection.means2d[ids]
    conics = tape.projection.conics[ids]
    dx = pixel_cols[:, None] - means[None, :, 0]
    dy = pixel_rows[:, None] - means[None, :, 1]
    power = -0.5 * (conics[None, :, 0, 0] * dx * dx + conics[None, :, 1, 1] * dy * dy) - \
        conics[None, :, 0, 1] * dx * dy
    sigma = tape.opacities[ids, 0][None, :] * np.exp(power)
    significant = sigma >= settings.alpha_cutoff
    sigma = np.where(significant, sigma, 0.0)
    one_minus = 1.0 - sigma
    trans_before = np.ones_like(sigma)
    trans_before[:, 1:] = np.cumprod(one_minus[:, :-1], axis=1)
    included = significant & (trans_before >= settings.stop_transmittance)
    weights = np.where(included, sigma * trans_before, 0.0)
    trans_final = np.prod(np.where(included, one_minus, 1.0), axis=1)
    return TileRecord(ids, pixel_rows, pixel_cols, dx, dy, sigma, trans_before, included, weights, trans_final)


def render_backward(tape: RenderTape, grad_image: np.ndarray) -> CloudGradients:
    """
    Computes exact reverse-mode gradients of a loss with respect to every stored attribute of the rendered cloud, given
    the gradient of the loss with respect to the rendered image.

    Quantized attributes pass gradients straight through to the stored ones. When masks were used, the gradients of
    the raw mask values are filled in with the straight-through rule as well.

    Parameters
    ----------
    tape : RenderTape
        The tape returned by render().
    grad_image : np.ndarray
        H x W x 3 gradient of the loss with respect to the image colours.

    Returns
    -------
    CloudGradients
        Gradients for positions, log-scales, rotations, opacity logits, SH coefficients and, if masks were used, the
        raw mask values. Gradients of culled Gaussians are zero.
    """
    cam = tape.camera
    grad_image = np.asarray(grad_image, dtype=np.float64)
    if grad_image.shape != (cam.height, cam.width, 3):
        raise ShapeMismatchError("Image gradient has shape " + str(grad_image.shape) + ", but the tape was rendered "
                                 "at " + str((cam.height, cam.width, 3)) + ".")
    n = tape.count
    grads = CloudGradients.zeros(n, with_masks=tape.masked)
    if n == 0:
        return grads
    background = np.asarray(tape.settings.background, dtype=np.float64)
    with ThreadPoolExecutor(max_workers=max(1, tape.settings.threads)) as pool:
        partials = list(pool.map(lambda record: _backward_tile(record, tape, grad_image, background), tape.tiles))
    grad_colors = np.zeros((n, 3))
    grad_opacities = np.zeros(n)
    grad_conics = np.zeros((n, 2, 2))
    grad_means = np.zeros((n, 2))
    # Fixed tile order keeps the sums reproducible.
    for record, (g_col, g_opa, g_con, g_mean) in zip(tape.tiles, partials):
        grad_colors[record.ids] += g_col
        grad_opacities[record.ids] += g_opa
        grad_conics[record.ids] += g_con
        grad_means[record.ids] += g_mean

    proj = tape.projection
    live = ~proj.culled
    grad_colors[~live] = 0.0

    # Conic is the inverse of cov2d: dL/dcov = -conic dL/dconic conic.
    grad_cov2d = -proj.conics @ grad_conics @ proj.conics
    grad_cov2d[~live] = 0.0
    grad_means[~live] = 0.0

    x, y, z = proj.cam_points[:, 0], proj.cam_points[:, 1], np.where(live, proj.depths, 1.0)
    fx, fy = cam.fx, cam.fy
    grad_cam = np.zeros((n, 3))
    grad_cam[:, 0] = grad_means[:, 0] * fx / z
    grad_cam[:, 1] = grad_means[:, 1] * fy / z
    grad_cam[:, 2] = -grad_means[:, 0] * fx * x / (z * z) - grad_means[:, 1] * fy * y / (z * z)

    transforms = proj.transforms
    grad_cov3d = np.swapaxes(transforms, 1, 2) @ grad_cov2d @ transforms
    grad_transforms = 2.0 * grad_cov2d @ transforms @ proj.cov3d
    grad_jac = grad_transforms @ cam.rotation.T
    z2, z3 = z * z, z * z * z
    grad_cam[:, 0] += grad_jac[:, 0, 2] * (-fx / z2)
    grad_cam[:, 1] += grad_jac[:, 1, 2] * (-fy / z2)
    grad_cam[:, 2] += grad_jac[:, 0, 0] * (-fx / z2) + grad_jac[:, 0, 2] * (2.0 * fx * x / z3) + \
        grad_jac[:, 1, 1] * (-fy / z2) + grad_jac[:, 1, 2] * (2.0 * fy * y / z3)
    grad_cam[~live] = 0.0
    grads.positions = grad_cam @ cam.rotation

    # cov3d = F F^T with F = R diag(s).
    grad_factor = 2.0 * grad_cov3d @ proj.factors
    grad_factor[~live] = 0.0
    grad_scales = np.einsum("nij,nij->nj", grad_factor, proj.rot_matrices)
    grad_rot = grad_factor * tape.scales[:, None, :]
    grads.rotations = _quaternion_backward(tape.rotations, grad_rot)

    # Colours come from SH evaluated along the view direction, which also depends on the position.
    grad_sh_eff, grad_dirs = eval_sh_backward(tape.sh_effective, tape.directions, tape.sh_values, grad_colors)
    d = tape.directions
    grad_view = (grad_dirs - d * np.sum(d * grad_dirs, axis=1, keepdims=True)) / tape.view_distances[:, None]
    grads.positions += grad_view
    coeff_mask = sh_coefficient_mask(tape.theta_hard)[:, :, None]
    grads.sh_coeffs = grad_sh_eff * coeff_mask

    grads.log_scales = grad_scales * tape.phi_hard * tape.exp_scales
    grad_opacities = grad_opacities.reshape(n, 1)
    grads.opacity_logits = grad_opacities * tape.phi_hard * tape.opacity_act * (1.0 - tape.opacity_act)
    if tape.masked:
        grad_phi = np.sum(grad_scales * tape.exp_scales, axis=1, keepdims=True) + grad_opacities * tape.opacity_act
        grads.gaussian_mask = grad_phi * tape.phi_grad
        per_coeff = np.sum(grad_sh_eff * tape.sh_source, axis=2)
        grad_theta = np.stack([per_coeff[:, 1:4].sum(axis=1), per_coeff[:, 4:9].sum(axis=1),
                               per_coeff[:, 9:16].sum(axis=1)], axis=1)
        grads.sh_mask = grad_theta * tape.theta_grad
    return grads


def _backward_tile(record: TileRecord, tape: RenderTape, grad_image: np.ndarray, background: np.ndarray):
    grad_pix = grad_image[record.pixel_rows, record.pixel_cols]
    colors = tape.colors[record.ids]
    grad_colors = record.weights.T @ grad_pix
    # g[p, k] = dL/dc(p) . c_k
    g = grad_pix @ colors.T
    contrib = record.weights * g
    behind = np.cumsum(contrib[:, ::-1], axis=1)[:, ::-1] - contrib
    bg_dot = grad_pix @ background
    trans_after = record.trans_before * (1.0 - record.sigma)
    safe = np.where(trans_after > 0, trans_after, 1.0)
    behind_dot = np.where(trans_after > 0, (behind + (record.trans_final * bg_dot)[:, None]) / safe, bg_dot[:, None])
    grad_sigma = np.where(record.included, record.trans_before * (g - behind_dot), 0.0)
    opacities = tape.opacities[record.ids, 0]
    gaussian_value = np.where(record.included, record.sigma / np.where(opacities > 0, opacities, 1.0)[None, :], 0.0)
    grad_opacities = np.sum(grad_sigma * gaussian_value, axis=0)
    grad_power = grad_sigma * record.sigma
    dx, dy = record.dx, record.dy
    conics = tape.projection.conics[record.ids]
    grad_con = np.empty((record.ids.size, 2, 2))
    grad_con[:, 0, 0] = -0.5 * np.sum(grad_power * dx * dx, axis=0)
    grad_con[:, 1, 1] = -0.5 * np.sum(grad_power * dy * dy, axis=0)
    grad_con[:, 0, 1] = -0.5 * np.sum(grad_power * dx * dy, axis=0)
    grad_con[:, 1, 0] = grad_con[:, 0, 1]
    grad_mean = np.empty((record.ids.size, 2))
    grad_mean[:, 0] = np.sum(grad_power * (conics[None, :, 0, 0] * dx + conics[None, :, 0, 1] * dy), axis=0)
    grad_mean[:, 1] = np.sum(grad_power * (conics[None, :, 0, 1] * dx + conics[None, :, 1, 1] * dy), axis=0)
    return grad_colors, grad_opacities, grad_con, grad_mean


def _quaternion_backward(rotations: np.ndarray, grad_r: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(rotations, axis=1, keepdims=True)
    q = rotations / norms
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    g = grad_r
    grad_q = np.empty_like(q)
    grad_q[:, 0] = 2 * (-z * g[:, 0, 1] + y * g[:, 0, 2] + z * g[:, 1, 0] - x * g[:, 1, 2] - y * g[:, 2, 0] +
                        x * g[:, 2, 1])
    grad_q[:, 1] = 2 * (y * g[:, 0, 1] + z * g[:, 0, 2] + y * g[:, 1, 0] - 2 * x * g[:, 1, 1] - w * g[:, 1, 2] +
                        z * g[:, 2, 0] + w * g[:, 2, 1] - 2 * x * g[:, 2, 2])
    grad_q[:, 2] = 2 * (-2 * y * g[:, 0, 0] + x * g[:, 0, 1] + w * g[:, 0, 2] + x * g[:, 1, 0] + z * g[:, 1, 2] -
                        w * g[:, 2, 0] + z * g[:, 2, 1] - 2 * y * g[:, 2, 2])
    grad_q[:, 3] = 2 * (-2 * z * g[:, 0, 0] - w * g[:, 0, 1] + x * g[:, 0, 2] + w * g[:, 1, 0] - 2 * z * g[:, 1, 1] +
                        y * g[:, 1, 2] + x * g[:, 2, 0] + y * g[:, 2, 1])
    # Normalization: d(q/|q|)/dq = (I - q_n q_n^T) / |q|.
    return (grad_q - q * np.sum(q * grad_q, axis=1, keepdims=True)) / norms
