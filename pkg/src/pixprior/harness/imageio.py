"""8-bit PGM / PNG image I/O with [0, 1] float images in memory."""
import os

import numpy as np
from PIL import Image, UnidentifiedImageError

from ..errors import FormatError, ParameterError

SUPPORTED = (".pgm", ".png")


def load_image(path):
    """Load an 8-bit grayscale or RGB image as float64 in [0, 1] (``v / 255``)."""
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode == "P":
                im = im.convert("RGB")
                mode = "RGB"
            if mode not in ("L", "RGB"):
                raise FormatError(f"{path}: unsupported image mode {mode!r} (only 8-bit gray or RGB)")
            data = np.asarray(im, dtype=np.uint8)
    except (UnidentifiedImageError, OSError, SyntaxError) as exc:
        raise FormatError(f"{path}: cannot decode image ({exc})") from exc
    return data.astype(np.float64) / 255.0


def to_uint8(image):
    image = np.asarray(image, dtype=np.float64)
    if not np.all(np.isfinite(image)):
        raise ParameterError("image has non-finite entries")
    return np.round(np.clip(image, 0.0, 1.0) * 255.0).astype(np.uint8)


def save_image(image, path):
    ext = os.path.splitext(path)[1].lower()
    if ext not in SUPPORTED:
        raise FormatError(f"unsupported output format {ext!r}")
    data = to_uint8(image)
    if data.ndim == 3 and data.shape[2] == 1:
        data = data[..., 0]
    if ext == ".pgm" and data.ndim != 2:
        raise FormatError("PGM output must be grayscale")
    if data.ndim == 3 and data.shape[2] != 3:
        raise FormatError(f"cannot save {data.shape[2]}-channel images")
    im = Image.fromarray(data, mode="L" if data.ndim == 2 else "RGB")
    im.save(path, format="PPM" if ext == ".pgm" else "PNG")
