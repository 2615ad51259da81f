"""Synthetic piecewise-structured texture patches used as a desk-scale training corpus."""
import os
from dataclasses import dataclass

import numpy as np

from ..errors import ParameterError
from .imageio import save_image

GENERATORS = ("stripes", "checker", "smooth_gradient", "edge_blobs")


@dataclass
class SyntheticTextureSpec:
    generator: str = "mixed"
    patch_size: int = 16
    count: int = 100
    rng_seed: int = 0
    output_dir: str = None

    def __post_init__(self):
        if self.generator not in GENERATORS + ("mixed",):
            raise ParameterError(f"unknown generator {self.generator!r}")
        if self.patch_size < 2 or self.count < 1:
            raise ParameterError("patch_size must be >= 2 and count >= 1")


def _two_levels(rng, min_gap=0.25):
    while True:
        a, b = rng.uniform(0.05, 0.95, size=2)
        if abs(a - b) >= min_gap:
            return a, b


def stripes(size, rng, period=None):
    """Binary stripes; every row is constant or every column is constant."""
    period = period or int(rng.integers(4, 9))
    duty = int(rng.integers(1, period))
    phase = int(rng.integers(period))
    a, b = _two_levels(rng)
    profile = np.where((np.arange(size) + phase) % period < duty, a, b)
    if rng.random() < 0.5:
        return np.repeat(profile[:, None], size, axis=1)  # rows constant
    return np.repeat(profile[None, :], size, axis=0)  # columns constant


def checker(size, rng, period=None):
    """Checkerboard with square cells of side ``period // 2``."""
    period = period or int(rng.choice([4, 6, 8]))
    cell = max(period // 2, 1)
    oy, ox = rng.integers(period, size=2)
    a, b = _two_levels(rng)
    yy, xx = np.mgrid[:size, :size]
    parity = ((yy + oy) // cell + (xx + ox) // cell) % 2
    return np.where(parity == 0, a, b)


def smooth_gradient(size, rng):
    theta = rng.uniform(0, 2 * np.pi)
    lo, hi = np.sort(rng.uniform(0.0, 1.0, size=2))
    yy, xx = np.mgrid[:size, :size] / max(size - 1, 1)
    t = np.cos(theta) * xx + np.sin(theta) * yy
    t = (t - t.min()) / max(t.max() - t.min(), 1e-12)
    return lo + (hi - lo) * t


def edge_blobs(size, rng):
    """Constant background with one to three constant-intensity discs."""
    img = np.full((size, size), rng.uniform(0.05, 0.95))
    yy, xx = np.mgrid[:size, :size]
    for _ in range(int(rng.integers(1, 4))):
        cy, cx = rng.uniform(0, size, size=2)
        r = rng.uniform(0.15, 0.45) * size
        img[(yy - cy) ** 2 + (xx - cx) ** 2 <= r * r] = rng.uniform(0.05, 0.95)
    return img


_FUNCS = {"stripes": stripes, "checker": checker, "smooth_gradient": smooth_gradient, "edge_blobs": edge_blobs}


def make_texture(generator, size, rng):
    img = _FUNCS[generator](size, rng)
    return np.round(np.clip(img, 0.0, 1.0) * 255.0) / 255.0


def texture_patches(spec):
    """Generate the patches of ``spec`` in memory; returns ``(names, array (N, P, P))``."""
    rng = np.random.default_rng(spec.rng_seed)
    names, out = [], []
    for i in range(spec.count):
        gen = GENERATORS[i % len(GENERATORS)] if spec.generator == "mixed" else spec.generator
        out.append(make_texture(gen, spec.patch_size, rng))
        names.append(f"{gen}_{i:05d}")
    return names, np.stack(out)


def generate_textures(spec, output_dir=None):
    """Write ``spec.count`` PGM patches and return their paths."""
    output_dir = output_dir or spec.output_dir
    if output_dir is None:
        raise ParameterError("no output directory given")
    os.makedirs(output_dir, exist_ok=True)
    names, patches = texture_patches(spec)
    paths = []
    for name, patch in zip(names, patches):
        path = os.path.join(output_dir, name + ".pgm")
        save_image(patch, path)
        paths.append(path)
    return paths
