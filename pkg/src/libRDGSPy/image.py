# "image.py" from libRDGSPy by NinjaCheetah & Contributors
#
# Image export and import. Images are row-major RGB, floats in [0, 1] in memory and 8-bit on disk.

import numpy as np
from PIL import Image


def to_uint8(image) -> np.ndarray:
    """
    Converts a float image to 8-bit, clamping to [0, 1] and rounding to the nearest level.

    Parameters
    ----------
    image : np.ndarray or RenderedImage
        H x W x 3 float image.

    Returns
    -------
    np.ndarray
        H x W x 3 uint8 image.
    """
    image = np.asarray(getattr(image, "color", image), dtype=np.float64)
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def write_png(image, path: str) -> None:
    Image.fromarray(to_uint8(image)).save(path, format="PNG")


def write_ppm(image, path: str) -> None:
    """
    Writes an image as a binary (P6) PPM.

    Parameters
    ----------
    image : np.ndarray or RenderedImage
        H x W x 3 float image.
    path : str
        Where to write the file.
    """
    pixels = to_uint8(image)
    header = b"P6\n" + str(pixels.shape[1]).encode() + b" " + str(pixels.shape[0]).encode() + b"\n255\n"
    with open(path, "wb") as ppm_file:
        ppm_file.write(header + pixels.tobytes())


def read_png(path: str) -> np.ndarray:
    """
    Reads a PNG (or anything Pillow can open) as an H x W x 3 float image in [0, 1].
    """
    with Image.open(path) as png:
        pixels = np.asarray(png.convert("RGB"), dtype=np.float64)
    return pixels / 255.0


def write_image(image, path: str) -> None:
    """
    Writes an image, choosing PPM for paths ending in .ppm and PNG otherwise.
    """
    if path.lower().endswith(".ppm"):
        write_ppm(image, path)
    else:
        write_png(image, path)
