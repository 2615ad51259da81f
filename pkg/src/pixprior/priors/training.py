"""Maximum-likelihood training of the autoregressive prior."""
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from ..errors import NumericError, ParameterError
from ..metrics import bits_per_dim
from .ar import ArPriorModel
from .logistic import LEVELS

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    """Desk-scale training settings.

    ``noise_sigma`` perturbs every training batch with Gaussian noise (then
    re-quantizes); it smooths the learned density so its gradient is useful
    for reconstruction from noisy iterates.
    """

    epochs: int = 20
    batch_size: int = 32
    lr: float = 3e-3
    momentum: float = 0.9
    optimizer: str = "adam"
    holdout_fraction: float = 0.1
    noise_sigma: float = 0.06
    channels: int = 64
    layers: int = 5
    mixtures: int = 3
    first_kernel: int = 7
    kernel: int = 3


@dataclass
class TrainHistory:
    losses: list = field(default_factory=list)
    initial_heldout_bpd: float = float("nan")
    final_heldout_bpd: float = float("nan")
    histogram_heldout_bpd: float = float("nan")
    train_size: int = 0
    heldout_size: int = 0

    def to_dict(self):
        return asdict(self)


def add_noise(patches, sigma, gen):
    """Gaussian noise then 8-bit requantization; identity when ``sigma == 0``."""
    if sigma <= 0:
        return patches
    noisy = patches + sigma * torch.randn(patches.shape, generator=gen, dtype=torch.float64)
    return torch.round(torch.clamp(noisy, 0.0, 1.0) * (LEVELS - 1)) / (LEVELS - 1)


def quantize(patches):
    return np.round(np.clip(patches, 0.0, 1.0) * (LEVELS - 1)) / (LEVELS - 1)


def split_holdout(n, fraction, rng):
    order = rng.permutation(n)
    n_hold = max(1, int(round(fraction * n))) if n > 1 else 0
    return order[n_hold:], order[:n_hold]


def evaluate_bpd(model, patches, batch_size=256):
    """Held-out bits per dimension of already-quantized patches."""
    total, count = 0.0, 0
    with torch.no_grad():
        for start in range(0, len(patches), batch_size):
            x = torch.as_tensor(patches[start : start + batch_size])
            total += float(-model.pixel_log_probs(x).sum())
            count += x.numel()
    return bits_per_dim(total, count)


def histogram_bits_per_dim(train, test, smoothing=1.0):
    """Bits/dim of an independent-pixel 256-bin histogram fit on ``train``, scored on ``test``."""
    train_levels = np.round(np.clip(train, 0, 1) * (LEVELS - 1)).astype(int).ravel()
    test_levels = np.round(np.clip(test, 0, 1) * (LEVELS - 1)).astype(int).ravel()
    counts = np.bincount(train_levels, minlength=LEVELS) + smoothing
    logp = np.log(counts / counts.sum())
    return bits_per_dim(-logp[test_levels].sum(), test_levels.size)


def train_ar_prior(dataset, config=None, rng_seed=0):
    """Fit an :class:`ArPriorModel` to a stack of square patches.

    Args:
        dataset: array ``(N, P, P)`` (or list of ``(P, P)`` arrays) in [0, 1].
        config (TrainConfig): training settings.
        rng_seed (int): seeds initialization, the held-out split and batch order.

    Returns:
        The trained model; ``model.history`` holds the loss trace and held-out
        bits/dim before and after training.
    """
    config = config or TrainConfig()
    if dataset is None or len(dataset) == 0:
        raise ParameterError("empty dataset")
    data = np.asarray(dataset, dtype=np.float64)
    if data.ndim != 3 or data.shape[1] != data.shape[2]:
        raise ParameterError(f"dataset must be (N, P, P), got {data.shape}")
    data = quantize(data)

    rng = np.random.default_rng(rng_seed)
    train_idx, hold_idx = split_holdout(len(data), config.holdout_fraction, rng)
    train, held = data[train_idx], data[hold_idx]
    if len(held) == 0:
        held = train

    model = ArPriorModel(
        patch_size=data.shape[1], channels=config.channels, layers=config.layers,
        mixtures=config.mixtures, first_kernel=config.first_kernel, kernel=config.kernel,
        seed=int(rng.integers(2**31)),
    )
    gen = torch.Generator().manual_seed(int(rng.integers(2**31)))
    held_gen = torch.Generator().manual_seed(int(rng.integers(2**31)))
    # one fixed noisy realization of the held-out split
    held = add_noise(torch.as_tensor(held), config.noise_sigma, held_gen).numpy()
    history = TrainHistory(train_size=len(train), heldout_size=len(held))
    history.initial_heldout_bpd = evaluate_bpd(model, held)

    if config.optimizer == "adam":
        opt = torch.optim.Adam(model.parameters(), lr=config.lr)
    elif config.optimizer == "sgd":
        opt = torch.optim.SGD(model.parameters(), lr=config.lr, momentum=config.momentum)
    else:
        raise ParameterError(f"unknown optimizer {config.optimizer!r}")
    steps = config.epochs * math.ceil(len(train) / config.batch_size)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(opt, T_max=max(steps, 1))

    train_t = torch.as_tensor(train)
    for epoch in range(config.epochs):
        order = torch.randperm(len(train_t), generator=gen)
        epoch_losses = []
        for start in range(0, len(order), config.batch_size):
            batch = add_noise(train_t[order[start : start + config.batch_size]], config.noise_sigma, gen)
            loss = model.nll(batch)
            if not torch.isfinite(loss):
                raise NumericError(f"non-finite training loss at epoch {epoch}, step {len(epoch_losses)}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            sched.step()
            epoch_losses.append(loss.item())
        history.losses.extend(epoch_losses)
        log.info("epoch %d: train nll %.4f nats/dim", epoch, np.mean(epoch_losses))

    history.final_heldout_bpd = evaluate_bpd(model, held)
    # independent-pixel baseline fit on one noisy realization of the training split
    train_noisy = add_noise(train_t, config.noise_sigma, held_gen).numpy()
    history.histogram_heldout_bpd = histogram_bits_per_dim(train_noisy, held)
    model.history = history
    model.heldout = held
    model.eval()
    return model
