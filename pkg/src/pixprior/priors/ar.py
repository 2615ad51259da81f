"""Small causal convolutional autoregressive prior.

A first masked convolution that excludes the current pixel is followed by
residual blocks of masked convolutions that include it, and a 1x1 output head
producing ``K`` logits, means and log-scales per pixel. Each pixel's
conditional therefore depends only on pixels strictly before it in raster
order, and summing the per-pixel log-probabilities gives ``log p(X)``.
"""
import math

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from ..errors import ParameterError
from .logistic import LEVELS, MixtureParams, mixture_log_prob

# Output-head bias at initialization: three broad components spread over [0, 1].
# Fitted offline to minimise KL(uniform || mixture) over the 256 levels.
INIT_MEANS = (0.1748, 0.5, 0.8252)
INIT_LOG_SCALE = -2.6395


def causal_mask(kernel_size, include_center):
    c = kernel_size // 2
    mask = torch.zeros(kernel_size, kernel_size, dtype=torch.float64)
    mask[:c, :] = 1.0
    mask[c, : c + (1 if include_center else 0)] = 1.0
    return mask


class MaskedConv2d(nn.Conv2d):
    def __init__(self, in_channels, out_channels, kernel_size, include_center):
        super().__init__(in_channels, out_channels, kernel_size, padding=kernel_size // 2, dtype=torch.float64)
        self.register_buffer("mask", causal_mask(kernel_size, include_center)[None, None])

    def forward(self, x):
        return F.conv2d(x, self.weight * self.mask, self.bias, padding=self.padding)


class ArPriorModel(nn.Module):
    """Causal autoregressive image prior with a discretized-logistic head.

    Args:
        patch_size (int): native square patch size the model scores.
        channels (int): feature width of the hidden layers.
        layers (int): number of centre-including residual blocks.
        mixtures (int): logistic components per pixel.
        first_kernel (int): kernel size of the centre-excluding input layer.
        kernel (int): kernel size of the residual blocks.
        seed (int): initialization seed.
    """

    def __init__(self, patch_size=16, channels=64, layers=5, mixtures=3, first_kernel=7, kernel=3, seed=0):
        super().__init__()
        self.config = dict(
            patch_size=int(patch_size), channels=int(channels), layers=int(layers),
            mixtures=int(mixtures), first_kernel=int(first_kernel), kernel=int(kernel),
            levels=LEVELS, seed=int(seed),
        )
        self.patch_size = int(patch_size)
        self.mixtures = int(mixtures)
        self.input_layer = MaskedConv2d(1, channels, first_kernel, include_center=False)
        self.blocks = nn.ModuleList(MaskedConv2d(channels, channels, kernel, include_center=True) for _ in range(layers))
        self.head = nn.Conv2d(channels, 3 * mixtures, 1, dtype=torch.float64)
        self.reset_parameters(seed)

    def reset_parameters(self, seed):
        gen = torch.Generator().manual_seed(int(seed))
        for conv in [self.input_layer, *self.blocks, self.head]:
            fan_in = conv.weight[0].numel()
            bound = 1.0 / math.sqrt(fan_in)
            with torch.no_grad():
                conv.weight.copy_((torch.rand(conv.weight.shape, generator=gen, dtype=torch.float64) * 2 - 1) * bound)
                conv.bias.copy_((torch.rand(conv.bias.shape, generator=gen, dtype=torch.float64) * 2 - 1) * bound)
        self.set_uniform_head(zero_weights=True)

    def set_uniform_head(self, zero_weights=False):
        """Bias the head towards a near-uniform conditional; optionally zero its weights."""
        k = self.mixtures
        if k == 3:
            means = torch.tensor(INIT_MEANS, dtype=torch.float64)
        else:
            means = torch.linspace(INIT_MEANS[0], INIT_MEANS[-1], k, dtype=torch.float64) if k > 1 else torch.full((1,), 0.5, dtype=torch.float64)
        with torch.no_grad():
            self.head.bias[:k] = 0.0
            self.head.bias[k : 2 * k] = means
            self.head.bias[2 * k :] = INIT_LOG_SCALE
            if zero_weights:
                self.head.weight.zero_()

    # ---------------------------------------------------------------- network

    def head_outputs(self, x):
        """Raw head output for a batch ``(N, H, W)`` of [0, 1] images: three ``(K, N, H, W)`` tensors."""
        h = self.input_layer((2.0 * x - 1.0).unsqueeze(1))
        for block in self.blocks:
            h = h + block(F.elu(h))
        out = self.head(F.elu(h))
        k = self.mixtures
        logits, means, log_scales = out[:, :k], out[:, k : 2 * k], out[:, 2 * k :]
        return tuple(t.transpose(0, 1) for t in (logits, means, log_scales))

    def pixel_log_probs(self, x):
        """Per-pixel log-probabilities ``(N, H, W)`` at continuous intensities ``x``."""
        logits, means, log_scales = self.head_outputs(x)
        return mixture_log_prob(logits, means, log_scales, x)

    def nll(self, x):
        """Mean negative log-likelihood per pixel, in nats."""
        return -self.pixel_log_probs(x).mean()

    # ---------------------------------------------------- numpy-facing prior API

    def _check(self, image):
        image = np.asarray(image, dtype=np.float64)
        if image.ndim == 2:
            image = image[None]
        if image.ndim != 3 or image.shape[1:] != (self.patch_size, self.patch_size):
            raise ParameterError(f"AR prior scores {self.patch_size}x{self.patch_size} patches, got {image.shape}")
        if not np.all(np.isfinite(image)):
            raise ParameterError("image has non-finite entries")
        return image

    def conditional(self, image):
        """MixtureParams of every pixel of one patch, each array shaped ``(K, H, W)``."""
        x = torch.as_tensor(self._check(image))
        with torch.no_grad():
            logits, means, log_scales = self.head_outputs(x)
        return MixtureParams(*(t[:, 0].numpy().copy() for t in (logits, means, log_scales)))

    def log_density(self, image):
        """Exact discrete log p of one patch or a batch; intensities quantized to 8 bits."""
        batch = self._check(image)
        x = torch.as_tensor(np.round(np.clip(batch, 0.0, 1.0) * 255.0) / 255.0)
        with torch.no_grad():
            lp = self.pixel_log_probs(x).sum(dim=(1, 2)).numpy()
        return float(lp[0]) if np.ndim(image) == 2 else lp

    def relaxed_log_density(self, image):
        """The continuous surrogate of log p that ``grad_log_density`` differentiates."""
        batch = self._check(image)
        with torch.no_grad():
            lp = self.pixel_log_probs(torch.as_tensor(batch)).sum(dim=(1, 2)).numpy()
        return float(lp[0]) if np.ndim(image) == 2 else lp

    def value_and_grad(self, image):
        batch = self._check(image)
        x = torch.as_tensor(batch).clone().requires_grad_(True)
        lp = self.pixel_log_probs(x).sum(dim=(1, 2))
        (grad,) = torch.autograd.grad(lp.sum(), x)
        values, g = lp.detach().numpy(), grad.numpy()
        if np.ndim(image) == 2:
            return float(values[0]), g[0]
        return values, g

    def grad_log_density(self, image):
        return self.value_and_grad(image)[1]
