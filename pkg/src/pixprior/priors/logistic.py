"""Discretized mixture-of-logistics likelihood over 256 intensity levels."""
import math
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F

from ..errors import ParameterError

LEVELS = 256
HALF_BIN = 1.0 / 510.0
MIN_LOG_SCALE = math.log(1e-7)
LOG_PROB_FLOOR = math.log(1e-12)
# bin centres v/255 sit at least 1/255 apart; these split the edge bins from the interior
LOW_EDGE = 0.5 / 255.0
HIGH_EDGE = 254.5 / 255.0


@dataclass
class MixtureParams:
    """Per-pixel mixture parameters, each array shaped ``(K, ...)``."""

    logits: np.ndarray
    means: np.ndarray
    log_scales: np.ndarray

    @property
    def mixtures(self):
        return self.logits.shape[0]

    def weights(self):
        z = self.logits - self.logits.max(axis=0, keepdims=True)
        e = np.exp(z)
        return e / e.sum(axis=0, keepdims=True)

    def scales(self):
        return np.exp(np.maximum(self.log_scales, MIN_LOG_SCALE))

    def tensors(self):
        return tuple(torch.as_tensor(np.asarray(a, dtype=np.float64)) for a in (self.logits, self.means, self.log_scales))


def _log1mexp(d):
    # log(1 - exp(-d)) for d > 0, accurate at both ends
    return torch.where(d > math.log(2.0), torch.log1p(-torch.exp(-d)), torch.log(-torch.expm1(-d)))


def mixture_log_prob(logits, means, log_scales, x):
    """Log-probability of intensity ``x`` (tensor in [0, 1]) under the mixture.

    The mixture axis is 0 for ``logits``/``means``/``log_scales``; ``x`` is
    broadcast against the remaining axes. Bin edges are ``x +- 1/510`` and
    follow ``x`` continuously, which makes the result differentiable in ``x``.
    Values below ``0.5/255`` or above ``254.5/255`` use the open-ended edge
    bins. At the bin centres ``v/255`` the result is the exact discrete
    log-probability of level ``v``.
    """
    log_scales = torch.clamp(log_scales, min=MIN_LOG_SCALE)
    inv_s = torch.exp(-log_scales)
    centred = x.unsqueeze(0) - means
    upper = (centred + HALF_BIN) * inv_s
    lower = (centred - HALF_BIN) * inv_s
    # sigma(a) - sigma(b) = sigma(a) * sigma(-b) * (1 - exp(b - a))
    log_cdf_upper = F.logsigmoid(upper)
    log_sf_lower = F.logsigmoid(-lower)
    log_mid = log_cdf_upper + log_sf_lower + _log1mexp(upper - lower)
    xb = x.unsqueeze(0).expand_as(log_mid)
    log_comp = torch.where(xb < LOW_EDGE, log_cdf_upper, torch.where(xb > HIGH_EDGE, log_sf_lower, log_mid))
    log_w = torch.log_softmax(logits, dim=0)
    out = torch.logsumexp(log_w + log_comp, dim=0)
    return torch.clamp(out, min=LOG_PROB_FLOOR)


def discretized_logistic_logprob(params, value):
    """Log-probability of integer intensity level(s) ``value`` in ``0..255``.

    ``value`` broadcasts against the per-pixel shape of ``params``.
    """
    v = np.asarray(value)
    if not np.issubdtype(v.dtype, np.integer):
        if not np.all(v == np.round(v)):
            raise ParameterError("intensity levels must be integers")
        v = v.astype(np.int64)
    if np.any(v < 0) or np.any(v > LEVELS - 1):
        raise ParameterError("intensity levels must lie in 0..255")
    logits, means, log_scales = params.tensors()
    x = torch.as_tensor(v / (LEVELS - 1.0), dtype=torch.float64)
    with torch.no_grad():
        out = mixture_log_prob(logits, means, log_scales, x)
    return out.numpy()


def relaxed_logprob(params, x):
    """Continuous-input log-probability, ``x`` real in ``[0, 1]``."""
    logits, means, log_scales = params.tensors()
    with torch.no_grad():
        out = mixture_log_prob(logits, means, log_scales, torch.as_tensor(np.asarray(x, dtype=np.float64)))
    return out.numpy()


def level_distribution(params):
    """Probabilities of all 256 levels, shape ``(256, ...)``."""
    shape = params.logits.shape[1:]
    levels = np.arange(LEVELS).reshape((LEVELS,) + (1,) * len(shape))
    logits, means, log_scales = (t.unsqueeze(1) for t in params.tensors())
    x = torch.as_tensor(np.broadcast_to(levels / (LEVELS - 1.0), (LEVELS,) + shape).copy())
    with torch.no_grad():
        return torch.exp(mixture_log_prob(logits, means, log_scales, x)).numpy()
