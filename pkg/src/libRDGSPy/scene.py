# "scene.py" from libRDGSPy by NinjaCheetah & Contributors
#
# A synthetic desk-scale scene generator and the Dataset of (camera, image) views used for training and evaluation.
# Datasets are stored as a directory holding cameras.json and one PNG per view.

import json
import logging
import os
from dataclasses import dataclass

import numpy as np

from .gaussians import GaussianCloud, SH_COEFFS
from .image import read_png, write_png
from .renderer import render
from .shared import inverse_sigmoid
from .types import Camera, RasterSettings

log = logging.getLogger(__name__)

CAMERAS_FILE = "cameras.json"


def random_rotations(count: int, rng: np.random.Generator) -> np.ndarray:
    """
    Draws uniformly distributed unit quaternions (w, x, y, z).
    """
    q = rng.normal(size=(count, 4))
    q /= np.linalg.norm(q, axis=1, keepdims=True)
    # One hemisphere only, so w is never negative.
    return q * np.where(q[:, :1] < 0, -1.0, 1.0)


def make_desk_scene(clusters: int = 6, per_cluster: int = 40, seed: int = 0, extent: float = 1.0) -> GaussianCloud:
    """
    Generates a scene of ellipsoid clusters. Every cluster has its own base colour, and its Gaussians carry small
    random higher-degree SH coefficients, so the scene is view dependent.

    Parameters
    ----------
    clusters : int
        Number of clusters.
    per_cluster : int
        Gaussians per cluster.
    seed : int
        Seed of the generator.
    extent : float
        Cluster centres are drawn from [-extent, extent]^3 scaled by 0.6.

    Returns
    -------
    GaussianCloud
        The generated scene.
    """
    if clusters < 1 or per_cluster < 1:
        raise ValueError("A desk scene needs at least one cluster with at least one Gaussian.")
    rng = np.random.default_rng(seed)
    n = clusters * per_cluster
    centers = rng.uniform(-0.6 * extent, 0.6 * extent, size=(clusters, 3))
    spreads = rng.uniform(0.08, 0.2, size=(clusters, 3)) * extent
    labels = np.repeat(np.arange(clusters), per_cluster)
    positions = centers[labels] + rng.normal(size=(n, 3)) * spreads[labels]
    log_scales = np.log(rng.uniform(0.02, 0.07, size=(n, 3)) * extent)
    rotations = random_rotations(n, rng)
    opacity_logits = inverse_sigmoid(rng.uniform(0.55, 0.95, size=(n, 1)))
    sh = np.zeros((n, SH_COEFFS, 3))
    base = rng.uniform(-1.2, 1.2, size=(clusters, 3))
    sh[:, 0, :] = base[labels] + 0.1 * rng.normal(size=(n, 3))
    sh[:, 1:4, :] = 0.15 * rng.normal(size=(n, 3, 3))
    sh[:, 4:9, :] = 0.08 * rng.normal(size=(n, 5, 3))
    sh[:, 9:16, :] = 0.04 * rng.normal(size=(n, 7, 3))
    return GaussianCloud(positions, log_scales, rotations, opacity_logits, sh)


def random_cloud(count: int, seed: int = 0, extent: float = 1.0) -> GaussianCloud:
    """
    Creates an untrained cloud of isotropic grey Gaussians spread uniformly over [-extent, extent]^3, the way a
    random initialization is done without an SfM point cloud.

    Parameters
    ----------
    count : int
        Number of Gaussians.
    seed : int
        Seed of the generator.
    extent : float
        Half-size of the cube the Gaussians are spread over.

    Returns
    -------
    GaussianCloud
        The initial cloud.
    """
    rng = np.random.default_rng(seed)
    positions = rng.uniform(-extent, extent, size=(count, 3))
    spacing = 2.0 * extent / max(1.0, count ** (1.0 / 3.0))
    log_scales = np.full((count, 3), np.log(0.5 * spacing))
    rotations = np.tile([1.0, 0.0, 0.0, 0.0], (count, 1))
    opacity_logits = np.full((count, 1), float(inverse_sigmoid(0.1)))
    sh = np.zeros((count, SH_COEFFS, 3))
    sh[:, 0, :] = 0.1 * rng.normal(size=(count, 3))
    return GaussianCloud(positions, log_scales, rotations, opacity_logits, sh)


def orbit_cameras(count: int, radius: float = 3.0, width: int = 64, height: int = 64, fov_x: float = np.pi / 3,
                  seed: int = 0) -> list[Camera]:
    """
    Places cameras on a sphere around the origin, all looking at it. Directions follow a Fibonacci spiral over the
    upper three quarters of the sphere, with a seeded random twist.

    Parameters
    ----------
    count : int
        Number of cameras.
    radius : float
        Distance from the origin.
    width, height : int
        Image size of every camera.
    fov_x : float
        Horizontal field of view in radians.
    seed : int
        Seed of the twist.

    Returns
    -------
    list[Camera]
        The cameras.
    """
    rng = np.random.default_rng(seed)
    twist = rng.uniform(0.0, 2.0 * np.pi)
    golden = np.pi * (3.0 - np.sqrt(5.0))
    cameras = []
    for i in range(count):
        # Heights run from near the top of the sphere down to slightly below the equator.
        y = 0.9 - 1.2 * (i + 0.5) / count
        ring = np.sqrt(max(0.0, 1.0 - y * y))
        angle = twist + golden * i
        eye = radius * np.array([ring * np.cos(angle), y, ring * np.sin(angle)])
        cameras.append(Camera.look_at(eye, np.zeros(3), width, height, fov_x))
    return cameras


@dataclass
class View:
    camera: Camera
    image: np.ndarray


class Dataset:
    """
    A Dataset object holds the views of a scene and splits them into a training and a test set: every
    test_every-th view is held out.

    Attributes
    ----------
    views : list[View]
        Every view, in order.
    test_every : int
        Hold-out period. 0 disables the test split.
    """
    def __init__(self, views: list[View] | None = None, test_every: int = 8):
        self.views: list[View] = views or []
        self.test_every = test_every
        self.validate()

    def __len__(self) -> int:
        return len(self.views)

    def validate(self) -> None:
        if not self.views:
            return
        shape = self.views[0].image.shape
        for view in self.views:
            if view.image.shape != shape or view.image.shape[:2] != (view.camera.height, view.camera.width):
                raise ValueError("Every view of a dataset must have the same resolution as its camera and the other "
                                 "views.")

    def split(self) -> tuple[list[View], list[View]]:
        """
        Splits the views into training and test views.

        Returns
        -------
        tuple[list[View], list[View]]
            The training views and the held-out views.
        """
        if self.test_every <= 0 or len(self.views) < 2:
            return list(self.views), []
        train = [view for i, view in enumerate(self.views) if i % self.test_every != 0]
        test = [view for i, view in enumerate(self.views) if i % self.test_every == 0]
        return train, test

    def train_views(self) -> list[View]:
        return self.split()[0]

    def test_views(self) -> list[View]:
        """
        Gets the held-out views, or every view when the split holds nothing out.
        """
        test = self.split()[1]
        return test if test else list(self.views)

    @classmethod
    def from_cloud(cls, cloud: GaussianCloud, cameras: list[Camera], settings: RasterSettings | None = None,
                   test_every: int = 8) -> "Dataset":
        """
        Renders a cloud from every camera and uses the renders as reference images.
        """
        views = []
        for camera in cameras:
            image, _ = render(cloud.astype(np.float64), camera, settings=settings)
            views.append(View(camera, image.clamped()))
        return cls(views, test_every)

    def save(self, path: str) -> None:
        """
        Saves the dataset into a directory as cameras.json and one PNG per view.

        Parameters
        ----------
        path : str
            The directory. It is created if needed.
        """
        os.makedirs(path, exist_ok=True)
        entries = []
        for i, view in enumerate(self.views):
            name = "view_" + str(i).zfill(3) + ".png"
            write_png(view.image, os.path.join(path, name))
            entries.append({"image": name, "camera": view.camera.to_dict()})
        with open(os.path.join(path, CAMERAS_FILE), "w") as cameras_file:
            json.dump({"test_every": self.test_every, "views": entries}, cameras_file, indent=2)

    @classmethod
    def load(cls, path: str) -> "Dataset":
        """
        Loads a dataset saved with save().

        Parameters
        ----------
        path : str
            The directory.

        Returns
        -------
        Dataset
            The loaded dataset.
        """
        try:
            with open(os.path.join(path, CAMERAS_FILE)) as cameras_file:
                data = json.load(cameras_file)
        except json.JSONDecodeError as e:
            raise ValueError("The dataset camera file is not valid JSON: " + str(e)) from e
        views = []
        for entry in data["views"]:
            views.append(View(Camera.from_dict(entry["camera"]), read_png(os.path.join(path, entry["image"]))))
        log.debug("Loaded %d views from %s", len(views), path)
        return cls(views, int(data.get("test_every", 8)))
