"""Prior interface shared by the solvers.

A prior exposes ``patch_size`` (``None`` when it scores images of any size),
``log_density(x)`` and ``value_and_grad(x)`` for a 2-D image or an
``(N, H, W)`` batch. The module functions here accept multi-channel images and
treat channels independently.
"""
import numpy as np

from ..errors import ParameterError
from ..imaging import channels_of, merge_channels


class UniformPrior:
    """Flat density on [0, 1]^n: log p = 0 and zero gradient."""

    patch_size = None

    def log_density(self, image):
        image = np.asarray(image, dtype=np.float64)
        return 0.0 if image.ndim == 2 else np.zeros(image.shape[0])

    def value_and_grad(self, image):
        image = np.asarray(image, dtype=np.float64)
        return self.log_density(image), np.zeros_like(image)

    def grad_log_density(self, image):
        return np.zeros_like(np.asarray(image, dtype=np.float64))


def _checked(image):
    image = np.asarray(image, dtype=np.float64)
    if not np.all(np.isfinite(image)):
        raise ParameterError("image has non-finite entries")
    return image


def log_density(prior, image):
    return float(sum(prior.log_density(c) for c in channels_of(_checked(image))))


def grad_log_density(prior, image):
    image = _checked(image)
    return merge_channels([prior.value_and_grad(c)[1] for c in channels_of(image)], image)
