"""Image-quality and likelihood metrics."""
import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ParameterError
from .imaging import channels_of

SSIM_WINDOW = 8
C1 = 0.01**2
C2 = 0.03**2


@dataclass
class MetricReport:
    psnr_db: float
    ssim: float
    bits_per_dim: float = None

    def to_dict(self):
        return {
            "psnr_db": "inf" if math.isinf(self.psnr_db) else self.psnr_db,
            "ssim": self.ssim,
            "bits_per_dim": self.bits_per_dim,
        }


def _pair(reference, estimate):
    a = np.asarray(reference, dtype=np.float64)
    b = np.asarray(estimate, dtype=np.float64)
    if a.shape != b.shape:
        raise ParameterError(f"shape mismatch {a.shape} vs {b.shape}")
    return channels_of(a), channels_of(b)


def psnr(reference, estimate):
    """PSNR in dB at peak 1.0, averaged over channels; ``inf`` for identical images."""
    vals = []
    for a, b in zip(*_pair(reference, estimate)):
        mse = float(np.mean((a - b) ** 2))
        vals.append(math.inf if mse == 0.0 else 10.0 * math.log10(1.0 / mse))
    return float(np.mean(vals))


def _ssim_channel(a, b, win):
    wa = sliding_window_view(a, (win, win))
    wb = sliding_window_view(b, (win, win))
    mu_a = wa.mean(axis=(-2, -1))
    mu_b = wb.mean(axis=(-2, -1))
    da = wa - mu_a[..., None, None]
    db = wb - mu_b[..., None, None]
    # identical expressions for var and cov so that ssim(x, x) == 1.0 exactly
    var_a = (da * da).mean(axis=(-2, -1))
    var_b = (db * db).mean(axis=(-2, -1))
    cov = (da * db).mean(axis=(-2, -1))
    num = (2 * mu_a * mu_b + C1) * (2 * cov + C2)
    den = (mu_a**2 + mu_b**2 + C1) * (var_a + var_b + C2)
    return float(np.mean(num / den))


def ssim(reference, estimate, window=SSIM_WINDOW):
    """Mean SSIM over all ``window x window`` uniform windows (stride 1), averaged over channels."""
    ca, cb = _pair(reference, estimate)
    if min(ca[0].shape) < window:
        raise ParameterError(f"image {ca[0].shape} smaller than the {window}x{window} window")
    return float(np.mean([_ssim_channel(a, b, window) for a, b in zip(ca, cb)]))


def bits_per_dim(total_nll_nats, pixel_count):
    if pixel_count <= 0:
        raise ParameterError("pixel_count must be positive")
    return float(total_nll_nats) / (pixel_count * math.log(2.0))


def evaluate(reference, estimate, bpd=None):
    return MetricReport(psnr(reference, estimate), ssim(reference, estimate), bpd)
