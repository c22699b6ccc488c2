# "gaussians.py" from libRDGSPy by NinjaCheetah & Contributors
#
# See docs/ply.md for the exact PLY property layout. It matches the files written by the reference 3DGS trainer, so
# pretrained scenes can be loaded directly.

import io
import logging

import numpy as np
import plyfile
from plyfile import PlyData, PlyElement

from .errors import DomainError, PlyParseError, ShapeMismatchError
from .shared import sigmoid

log = logging.getLogger(__name__)

# Number of SH coefficients per colour channel for degrees 0..3.
SH_COEFFS = 16
# Scalars stored per Gaussian: position, log-scale, quaternion, opacity logit and 48 SH values.
PARAMS_PER_GAUSSIAN = 3 + 3 + 4 + 1 + SH_COEFFS * 3
# First SH coefficient of each degree, so degree l spans [SH_DEGREE_START[l], SH_DEGREE_START[l + 1]).
SH_DEGREE_START = (0, 1, 4, 9, 16)


def ply_property_names(with_normals: bool = True) -> list[str]:
    """
    Gets the vertex property names of a reference 3DGS PLY, in file order.

    Parameters
    ----------
    with_normals : bool
        Whether to include the unused nx, ny, nz properties. Defaults to True.

    Returns
    -------
    list[str]
        The property names.
    """
    names = ["x", "y", "z"]
    if with_normals:
        names += ["nx", "ny", "nz"]
    names += ["f_dc_" + str(i) for i in range(3)]
    names += ["f_rest_" + str(i) for i in range((SH_COEFFS - 1) * 3)]
    names += ["opacity"]
    names += ["scale_" + str(i) for i in range(3)]
    names += ["rot_" + str(i) for i in range(4)]
    return names


class GaussianCloud:
    """
    A GaussianCloud object holds the stored (pre-activation) attributes of N Gaussians, and can be loaded from or
    dumped to the binary PLY layout used by reference 3DGS exports.

    Attributes
    ----------
    positions : np.ndarray
        N x 3 world-space means.
    log_scales : np.ndarray
        N x 3 logarithms of the per-axis extents. Activated scales are exp(log_scales).
    rotations : np.ndarray
        N x 4 quaternions (w, x, y, z). They don't need to be unit length; covariance construction normalizes them.
    opacity_logits : np.ndarray
        N x 1 opacity logits. Activated opacities are sigmoid(opacity_logits).
    sh_coeffs : np.ndarray
        N x 16 x 3 SH coefficients. Index 0 is the DC term, 1..15 are the degree 1..3 harmonics.
    """
    def __init__(self, positions=None, log_scales=None, rotations=None, opacity_logits=None, sh_coeffs=None,
                 dtype=np.float32):
        n = 0 if positions is None else len(positions)
        self.positions: np.ndarray = _as_array(positions, (n, 3), dtype)
        self.log_scales: np.ndarray = _as_array(log_scales, (n, 3), dtype)
        self.rotations: np.ndarray = _as_array(rotations, (n, 4), dtype)
        self.opacity_logits: np.ndarray = _as_array(opacity_logits, (n, 1), dtype)
        self.sh_coeffs: np.ndarray = _as_array(sh_coeffs, (n, SH_COEFFS, 3), dtype)

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def count(self) -> int:
        """
        The number of Gaussians in the cloud.
        """
        return self.positions.shape[0]

    def attributes(self) -> dict[str, np.ndarray]:
        return {
            "positions": self.positions,
            "log_scales": self.log_scales,
            "rotations": self.rotations,
            "opacity_logits": self.opacity_logits,
            "sh_coeffs": self.sh_coeffs,
        }

    def copy(self) -> "GaussianCloud":
        return GaussianCloud(self.positions.copy(), self.log_scales.copy(), self.rotations.copy(),
                             self.opacity_logits.copy(), self.sh_coeffs.copy(), dtype=self.positions.dtype)

    def astype(self, dtype) -> "GaussianCloud":
        """
        Returns a copy of the cloud with every attribute converted to the given dtype.
        """
        return GaussianCloud(self.positions, self.log_scales, self.rotations, self.opacity_logits, self.sh_coeffs,
                             dtype=dtype)

    def subset(self, selection) -> "GaussianCloud":
        """
        Returns a new cloud holding only the selected Gaussians, in selection order.

        Parameters
        ----------
        selection : np.ndarray
            Either a boolean mask of length N or an array of indices.

        Returns
        -------
        GaussianCloud
            The selected Gaussians.
        """
        selection = np.asarray(selection)
        if selection.dtype == bool and selection.shape != (self.count,):
            raise ShapeMismatchError("Boolean selection has " + str(selection.shape[0]) + " entries, but the cloud "
                                     "has " + str(self.count) + " Gaussians.")
        return GaussianCloud(self.positions[selection], self.log_scales[selection], self.rotations[selection],
                             self.opacity_logits[selection], self.sh_coeffs[selection], dtype=self.positions.dtype)

    def scales(self) -> np.ndarray:
        """
        Gets the activated per-axis scales, exp(log_scales).
        """
        return np.exp(self.log_scales)

    def opacities(self) -> np.ndarray:
        """
        Gets the activated opacities, sigmoid(opacity_logits), as an N x 1 array.
        """
        return sigmoid(self.opacity_logits)

    def load(self, ply_data: bytes) -> None:
        """
        Loads raw binary PLY data and sets all attributes of the GaussianCloud object. The normals, if present, are
        read and discarded.

        Parameters
        ----------
        ply_data : bytes
            The data for the PLY you wish to load.
        """
        with io.BytesIO(ply_data) as ply_stream:
            try:
                ply = PlyData.read(ply_stream)
            except plyfile.PlyParseError as e:
                raise PlyParseError("Could not parse PLY data: " + str(e)) from e
            except (ValueError, EOFError) as e:
                raise PlyParseError("Could not parse PLY data: " + str(e)) from e
        if ply.text:
            raise PlyParseError("Only binary PLY files are supported, this one is ASCII.")
        if ply.byte_order != "<":
            raise PlyParseError("Only little-endian PLY files are supported.")
        try:
            vertex = ply["vertex"]
        except KeyError:
            raise PlyParseError("The PLY has no 'vertex' element.")
        present = {prop.name: prop for prop in vertex.properties}
        for name in ply_property_names(with_normals=False):
            if name not in present:
                raise PlyParseError("The PLY is missing the vertex property '" + name + "'.")
            if present[name].val_dtype not in ("f4", "float32", "float"):
                raise PlyParseError("The vertex property '" + name + "' must be float32, not " +
                                    str(present[name].val_dtype) + ".")
        data = vertex.data
        n = len(data)

        def column(name):
            return np.asarray(data[name], dtype=np.float32)

        self.positions = np.stack([column("x"), column("y"), column("z")], axis=1).reshape(n, 3)
        self.log_scales = np.stack([column("scale_" + str(i)) for i in range(3)], axis=1).reshape(n, 3)
        self.rotations = np.stack([column("rot_" + str(i)) for i in range(4)], axis=1).reshape(n, 4)
        self.opacity_logits = column("opacity").reshape(n, 1)
        self.sh_coeffs = np.zeros((n, SH_COEFFS, 3), dtype=np.float32)
        for channel in range(3):
            self.sh_coeffs[:, 0, channel] = column("f_dc_" + str(channel))
        # f_rest is stored channel by channel: all 15 coefficients of red, then green, then blue.
        for channel in range(3):
            for k in range(1, SH_COEFFS):
                self.sh_coeffs[:, k, channel] = column("f_rest_" + str(channel * (SH_COEFFS - 1) + k - 1))
        log.debug("Loaded %d Gaussians from PLY data", n)

    def dump(self) -> bytes:
        """
        Dumps the GaussianCloud object into a binary little-endian PLY in the reference 3DGS layout. Normals are
        written as zeros.

        Returns
        -------
        bytes
            The full PLY file as bytes.
        """
        n = self.count
        names = ply_property_names(with_normals=True)
        elements = np.zeros(n, dtype=[(name, "<f4") for name in names])
        elements["x"], elements["y"], elements["z"] = self.positions[:, 0], self.positions[:, 1], self.positions[:, 2]
        for channel in range(3):
            elements["f_dc_" + str(channel)] = self.sh_coeffs[:, 0, channel]
            for k in range(1, SH_COEFFS):
                elements["f_rest_" + str(channel * (SH_COEFFS - 1) + k - 1)] = self.sh_coeffs[:, k, channel]
        elements["opacity"] = self.opacity_logits[:, 0]
        for i in range(3):
            elements["scale_" + str(i)] = self.log_scales[:, i]
        for i in range(4):
            elements["rot_" + str(i)] = self.rotations[:, i]
        element = PlyElement.describe(elements, "vertex")
        with io.BytesIO() as ply_stream:
            PlyData([element], text=False, byte_order="<").write(ply_stream)
            return ply_stream.getvalue()


def _as_array(value, shape, dtype) -> np.ndarray:
    if value is None:
        return np.zeros(shape, dtype=dtype)
    array = np.array(value, dtype=dtype)
    if array.size == 0 and shape[0] == 0:
        return np.zeros(shape, dtype=dtype)
    if array.shape != shape:
        raise ShapeMismatchError("Expected an array of shape " + str(shape) + ", got " + str(array.shape) + ".")
    return array


def load_ply(path: str) -> GaussianCloud:
    """
    Loads a GaussianCloud from a reference 3DGS PLY file.

    Parameters
    ----------
    path : str
        Path to the PLY file.

    Returns
    -------
    GaussianCloud
        The loaded cloud, in float32.
    """
    with open(path, "rb") as ply_file:
        ply_data = ply_file.read()
    cloud = GaussianCloud()
    cloud.load(ply_data)
    return cloud


def save_ply(cloud: GaussianCloud, path: str) -> None:
    """
    Saves a GaussianCloud to a PLY file that load_ply() reads back bit-exactly.

    Parameters
    ----------
    cloud : GaussianCloud
        The cloud to save.
    path : str
        Where to write the PLY file.
    """
    with open(path, "wb") as ply_file:
        ply_file.write(cloud.dump())


def activate_scales(log_scales: np.ndarray) -> np.ndarray:
    return np.exp(np.asarray(log_scales, dtype=np.float64))


def activate_opacities(opacity_logits: np.ndarray) -> np.ndarray:
    return sigmoid(np.asarray(opacity_logits, dtype=np.float64))


def rotation_matrices(rotations: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """
    Builds rotation matrices from N quaternions (w, x, y, z), normalizing them first.

    Parameters
    ----------
    rotations : np.ndarray
        N x 4 quaternions with nonzero norm.

    Returns
    -------
    tuple[np.ndarray, np.ndarray]
        The N x 3 x 3 rotation matrices and the N x 4 normalized quaternions.
    """
    rotations = np.asarray(rotations, dtype=np.float64).reshape(-1, 4)
    norms = np.linalg.norm(rotations, axis=1, keepdims=True)
    if np.any(norms == 0):
        raise DomainError("Cannot build a rotation from a zero-norm quaternion.")
    q = rotations / norms
    w, x, y, z = q[:, 0], q[:, 1], q[:, 2], q[:, 3]
    matrices = np.empty((q.shape[0], 3, 3))
    matrices[:, 0, 0] = 1 - 2 * (y * y + z * z)
    matrices[:, 0, 1] = 2 * (x * y - w * z)
    matrices[:, 0, 2] = 2 * (x * z + w * y)
    matrices[:, 1, 0] = 2 * (x * y + w * z)
    matrices[:, 1, 1] = 1 - 2 * (x * x + z * z)
    matrices[:, 1, 2] = 2 * (y * z - w * x)
    matrices[:, 2, 0] = 2 * (x * z - w * y)
    matrices[:, 2, 1] = 2 * (y * z + w * x)
    matrices[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return matrices, q


def covariances(scales: np.ndarray, rotations: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Builds the N 3D covariances R diag(s)^2 R^T from activated scales and quaternions.

    Parameters
    ----------
    scales : np.ndarray
        N x 3 activated (and possibly masked) scales.
    rotations : np.ndarray
        N x 4 quaternions.

    Returns
    -------
    tuple[np.ndarray, np.ndarray, np.ndarray]
        The N x 3 x 3 covariances, the factor M = R diag(s) (so that covariance = M M^T) and the rotation matrices.
    """
    matrices, _ = rotation_matrices(rotations)
    factor = matrices * np.asarray(scales, dtype=np.float64)[:, None, :]
    return factor @ np.swapaxes(factor, 1, 2), factor, matrices


def build_covariance(log_scale, rotation) -> np.ndarray:
    """
    Builds one 3D covariance from a log-scale vector and a quaternion.

    Parameters
    ----------
    log_scale : array-like
        The 3 stored log-scales.
    rotation : array-like
        The quaternion (w, x, y, z). It must have nonzero norm.

    Returns
    -------
    np.ndarray
        The symmetric positive semi-definite 3x3 covariance R diag(exp(log_scale))^2 R^T.
    """
    scale = np.exp(np.asarray(log_scale, dtype=np.float64).reshape(1, 3))
    covariance, _, _ = covariances(scale, np.asarray(rotation, dtype=np.float64).reshape(1, 4))
    return covariance[0]
