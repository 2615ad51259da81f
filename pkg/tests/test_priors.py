import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from pixprior.errors import FormatError, NumericError, ParameterError
from pixprior.imaging import DenseSensingOperator, MaskOperator, make_mask
from pixprior.metrics import bits_per_dim
from pixprior.priors.ar import ArPriorModel
from pixprior.priors.base import UniformPrior, grad_log_density, log_density
from pixprior.priors.checkpoint import load_model, save_model
from pixprior.priors.gmrf import GaussianMrfPrior, gaussian_mrf_map_oracle
from pixprior.priors.logistic import (
    MixtureParams,
    discretized_logistic_logprob,
    level_distribution,
    relaxed_logprob,
)
from pixprior.priors.training import TrainConfig, histogram_bits_per_dim, train_ar_prior


def logistic_cdf(z):
    return 1.0 / (1.0 + math.exp(-z))


def central_fd(f, x, step=1e-4):
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        xp, xm = x.copy(), x.copy()
        xp[idx] += step
        xm[idx] -= step
        g[idx] = (f(xp) - f(xm)) / (2 * step)
    return g


def params(logits, means, log_scales):
    return MixtureParams(*(np.asarray(a, dtype=np.float64).reshape(-1, 1) for a in (logits, means, log_scales)))


# ----------------------------------------------------- discretized logistic


@settings(max_examples=50, deadline=None)
@given(
    st.lists(st.floats(-5, 5), min_size=3, max_size=3),
    st.lists(st.floats(-0.5, 1.5), min_size=3, max_size=3),
    st.lists(st.floats(-12, 3), min_size=3, max_size=3),
)
def test_levels_sum_to_one(logits, means, log_scales):
    p = level_distribution(params(logits, means, log_scales))
    assert abs(p.sum() - 1.0) <= 1e-9


def test_single_component_hand_value():
    # K=1, mu=0.5, s=0.1 at x=0.5: sigma(0.019608) - sigma(-0.019608)
    half = (1 / 510) / 0.1
    expected = logistic_cdf(half) - logistic_cdf(-half)
    got = math.exp(relaxed_logprob(params([0.0], [0.5], [math.log(0.1)]), np.array([0.5]))[0])
    assert got == pytest.approx(expected, rel=1e-12)
    assert got == pytest.approx(9.80e-3, abs=5e-5)


def test_identical_components_collapse():
    one = params([0.0], [0.3], [math.log(0.05)])
    two = params([0.0, 0.0], [0.3, 0.3], [math.log(0.05)] * 2)
    levels = np.arange(256)
    a = discretized_logistic_logprob(MixtureParams(one.logits, one.means, one.log_scales), levels)
    b = discretized_logistic_logprob(MixtureParams(two.logits, two.means, two.log_scales), levels)
    assert np.max(np.abs(a - b)) <= 1e-14


def test_edge_bins_use_open_intervals():
    p = params([0.0], [0.0], [math.log(0.02)])
    lp0 = discretized_logistic_logprob(p, np.array([0]))[0]
    assert math.exp(lp0) == pytest.approx(logistic_cdf((1 / 510) / 0.02), rel=1e-12)
    q = params([0.0], [1.0], [math.log(0.02)])
    lp255 = discretized_logistic_logprob(q, np.array([255]))[0]
    assert math.exp(lp255) == pytest.approx(1 - logistic_cdf((254.5 / 255 - 1.0) / 0.02), rel=1e-12)


def test_logprob_floor_keeps_values_finite():
    p = params([0.0], [0.0], [math.log(1e-7)])
    lp = discretized_logistic_logprob(p, np.array([200]))[0]
    assert lp == pytest.approx(math.log(1e-12))


@pytest.mark.parametrize("value", [-1, 256, 3.5])
def test_logprob_rejects_bad_levels(value):
    with pytest.raises(ParameterError):
        discretized_logistic_logprob(params([0.0], [0.5], [0.0]), np.array([value]))


# ------------------------------------------------------------------ AR model


def small_model(patch=6, seed=0, **kw):
    kw.setdefault("channels", 8)
    kw.setdefault("layers", 2)
    model = ArPriorModel(patch_size=patch, seed=seed, **kw)
    # random head weights so the conditionals actually depend on context
    gen = torch.Generator().manual_seed(seed + 1)
    with torch.no_grad():
        model.head.weight.copy_(0.3 * torch.randn(model.head.weight.shape, generator=gen, dtype=torch.float64))
    return model


def test_zero_weights_give_identical_conditionals():
    model = ArPriorModel(patch_size=5, channels=4, layers=2)
    with torch.no_grad():
        for p in model.parameters():
            if p.dim() > 1:
                p.zero_()
    cond = model.conditional(np.random.default_rng(0).random((5, 5)))
    for arr in (cond.logits, cond.means, cond.log_scales):
        assert np.all(arr == arr[:, :1, :1])


def test_mixture_invariants():
    cond = small_model().conditional(np.random.default_rng(1).random((6, 6)))
    assert np.allclose(cond.weights().sum(axis=0), 1.0)
    assert np.all(cond.scales() > 0)


def test_causality_bit_exact():
    rng = np.random.default_rng(3)
    model = small_model(patch=6, seed=3)
    x = rng.random((6, 6))
    base = model.conditional(x)
    for i in [0, 7, 20, 35]:
        y = x.copy()
        r, c = divmod(i, 6)
        y[r, c] = rng.random()
        pert = model.conditional(y)
        for a, b in zip((base.logits, base.means, base.log_scales), (pert.logits, pert.means, pert.log_scales)):
            assert np.array_equal(a.reshape(a.shape[0], -1)[:, : i + 1], b.reshape(b.shape[0], -1)[:, : i + 1])


def test_perturbation_reaches_later_pixels():
    model = small_model(patch=6, seed=4)
    x = np.random.default_rng(4).random((6, 6))
    y = x.copy()
    y[2, 2] += 0.3
    a, b = model.conditional(x), model.conditional(y)
    later = a.means.reshape(a.means.shape[0], -1)[:, 2 * 6 + 3 :]
    later_b = b.means.reshape(b.means.shape[0], -1)[:, 2 * 6 + 3 :]
    assert np.any(later != later_b)


def test_conditional_shape_mismatch():
    with pytest.raises(ParameterError):
        small_model(patch=6).conditional(np.zeros((5, 5)))


def test_log_density_constant_image_zero_weights():
    model = ArPriorModel(patch_size=4, channels=4, layers=1)
    with torch.no_grad():
        for p in model.parameters():
            if p.dim() > 1:
                p.zero_()
    x = np.full((4, 4), 100 / 255)
    cond = model.conditional(x)
    single = discretized_logistic_logprob(
        MixtureParams(cond.logits[:, :1, :1], cond.means[:, :1, :1], cond.log_scales[:, :1, :1]), np.array([[100]])
    )
    assert model.log_density(x) == pytest.approx(16 * single.item(), rel=1e-12)


def chain_rule_oracle(model, x):
    """Sum of log p(x_i | x_<i), each conditional from its own forward pass with the future blanked."""
    total = 0.0
    levels = np.round(x * 255).astype(int)
    q = levels / 255.0
    h, w = x.shape
    for i in range(h * w):
        r, c = divmod(i, w)
        ctx = q.copy().ravel()
        ctx[i:] = 0.0
        cond = model.conditional(ctx.reshape(h, w))
        p = MixtureParams(cond.logits[:, r, c], cond.means[:, r, c], cond.log_scales[:, r, c])
        total += float(discretized_logistic_logprob(p, np.array(levels[r, c])))
    return total


@pytest.mark.parametrize("size", [2, 4])
def test_log_density_matches_chain_rule(size):
    model = small_model(patch=size, seed=size)
    x = np.random.default_rng(size).random((size, size))
    assert model.log_density(x) == pytest.approx(chain_rule_oracle(model, x), abs=1e-9)


def test_log_density_rejects_non_finite():
    x = np.zeros((6, 6))
    x[0, 0] = np.nan
    with pytest.raises(ParameterError):
        small_model().log_density(x)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_ar_gradient_matches_finite_differences(seed):
    model = small_model(patch=6, seed=seed)
    x = np.random.default_rng(seed).uniform(0.02, 0.98, (6, 6))
    g = model.grad_log_density(x)
    fd = central_fd(model.relaxed_log_density, x)
    assert np.linalg.norm(fd - g) / np.linalg.norm(fd) <= 1e-4


def test_grad_shape_and_multichannel_wrapper():
    model = small_model(patch=6)
    x = np.random.default_rng(0).random((6, 6, 2))
    g = grad_log_density(model, x)
    assert g.shape == x.shape
    assert np.allclose(g[..., 1], model.grad_log_density(x[..., 1]))
    assert log_density(model, x) == pytest.approx(model.log_density(x[..., 0]) + model.log_density(x[..., 1]))


def test_checkpoint_round_trip(tmp_path):
    model = small_model(patch=6, seed=9)
    path = tmp_path / "model.pxp"
    save_model(model, path)
    loaded = load_model(path)
    for (name, a), (_, b) in zip(model.state_dict().items(), loaded.state_dict().items()):
        assert a.numpy().tobytes() == b.numpy().tobytes(), name
    assert loaded.config == model.config


def test_checkpoint_rejects_garbage(tmp_path):
    path = tmp_path / "bad.pxp"
    path.write_bytes(b"PXP1\n1 1\n" + b"\0" * 8)
    with pytest.raises(FormatError):
        load_model(path)


# --------------------------------------------------------------- Gaussian MRF


def test_gmrf_origin():
    prior = GaussianMrfPrior(0.1)
    assert prior.log_density(np.zeros((4, 4))) == 0.0
    assert np.array_equal(prior.grad_log_density(np.zeros((4, 4))), np.zeros((4, 4)))


def test_gmrf_constant_image_gradient():
    prior = GaussianMrfPrior(0.3)
    x = np.full((5, 7), 0.4)
    assert np.allclose(prior.grad_log_density(x), -0.3 * x, atol=1e-15)


def test_gmrf_matches_dense_precision():
    prior = GaussianMrfPrior(0.2)
    x = np.random.default_rng(0).random((4, 5))
    q = prior.precision_matrix((4, 5))
    assert np.allclose(q, q.T)
    assert np.min(np.linalg.eigvalsh(q)) > 0
    assert prior.log_density(x) == pytest.approx(-0.5 * x.ravel() @ q @ x.ravel(), rel=1e-12)
    assert np.allclose(prior.grad_log_density(x).ravel(), -q @ x.ravel())


@pytest.mark.parametrize("seed", [0, 1])
def test_gmrf_gradient_matches_finite_differences(seed):
    prior = GaussianMrfPrior(0.1)
    x = np.random.default_rng(seed).random((6, 6))
    fd = central_fd(prior.log_density, x)
    g = prior.grad_log_density(x)
    assert np.linalg.norm(fd - g) / np.linalg.norm(fd) <= 1e-4


def test_uniform_prior():
    prior = UniformPrior()
    assert prior.log_density(np.ones((3, 3))) == 0.0
    assert np.array_equal(prior.grad_log_density(np.ones((3, 3))), np.zeros((3, 3)))


# ------------------------------------------------------------------- oracle


def test_oracle_identity_hard():
    y = np.random.default_rng(0).random(16)
    op = DenseSensingOperator(np.eye(16), (4, 4), row_orthonormal=True)
    x = gaussian_mrf_map_oracle(op, y, GaussianMrfPrior(0.1), (4, 4), mode="hard")
    assert np.allclose(x.ravel(), y, atol=1e-12)


def test_oracle_soft_tiny_weight_returns_prior_mean():
    y = np.random.default_rng(0).random(16)
    op = DenseSensingOperator(np.eye(16), (4, 4), row_orthonormal=True)
    x = gaussian_mrf_map_oracle(op, y, GaussianMrfPrior(0.1), (4, 4), mode="soft", soft_weight=1e-12)
    assert np.linalg.norm(x) <= 1e-6


def test_oracle_hard_satisfies_constraints_and_kkt():
    rng = np.random.default_rng(5)
    mask = make_mask(4, 4, 0.5, rng)
    x_true = rng.random((4, 4))
    y = mask.forward(x_true)
    prior = GaussianMrfPrior(0.1)
    x = gaussian_mrf_map_oracle(mask, y, prior, (4, 4), mode="hard")
    obs = mask.mask == 1
    assert np.allclose(x[obs], x_true[obs], atol=1e-12)
    # stationarity: gradient vanishes on the free pixels
    assert np.allclose(prior.grad_log_density(x)[~obs], 0.0, atol=1e-10)


def test_oracle_singular_kkt():
    # duplicated constraint rows make the KKT matrix singular
    op = DenseSensingOperator(np.array([[1.0, 0, 0, 0], [1.0, 0, 0, 0]]), (2, 2))
    with pytest.raises(NumericError, match="condition"):
        gaussian_mrf_map_oracle(op, np.array([0.5, 0.5]), GaussianMrfPrior(0.1), (2, 2))


def test_oracle_size_limit():
    with pytest.raises(ParameterError):
        gaussian_mrf_map_oracle(MaskOperator(np.ones((40, 40))), np.zeros((40, 40)), GaussianMrfPrior(), (40, 40))


# ------------------------------------------------------------------ training


def test_uniform_distribution_is_eight_bits():
    assert bits_per_dim(1000 * math.log(256), 1000) == 8.0


def test_bias_only_model_is_near_uniform():
    model = ArPriorModel(patch_size=8, channels=4, layers=1)
    cond = model.conditional(np.random.default_rng(0).random((8, 8)))
    assert np.all(cond.means == cond.means[:, :1, :1])
    levels = np.arange(256)
    lp = discretized_logistic_logprob(
        MixtureParams(cond.logits[:, 0, :1], cond.means[:, 0, :1], cond.log_scales[:, 0, :1]), levels
    )
    bpd = -lp.mean() / math.log(2)
    assert 8.0 < bpd < 8.15


def test_training_learns_constant_images():
    data = np.full((64, 8, 8), 0.4)
    model = train_ar_prior(data, TrainConfig(epochs=150, batch_size=16, channels=8, layers=1, lr=5e-2, noise_sigma=0.0), rng_seed=0)
    assert model.history.final_heldout_bpd <= 1.0
    assert model.history.final_heldout_bpd < model.history.initial_heldout_bpd


def test_training_beats_uniform_on_textures():
    from pixprior.harness.textures import SyntheticTextureSpec, texture_patches

    _, data = texture_patches(SyntheticTextureSpec(count=200, patch_size=8, rng_seed=3))
    model = train_ar_prior(data, TrainConfig(epochs=3, channels=8, layers=1, lr=1e-2), rng_seed=1)
    assert model.history.final_heldout_bpd < 8.0
    assert len(model.history.losses) == 3 * math.ceil(180 / 32)


def test_training_is_deterministic():
    data = np.random.default_rng(0).random((40, 6, 6))
    cfg = TrainConfig(epochs=1, channels=4, layers=1, noise_sigma=0.02)
    a = train_ar_prior(data, cfg, rng_seed=7)
    b = train_ar_prior(data, cfg, rng_seed=7)
    assert a.history.losses == b.history.losses
    for pa, pb in zip(a.parameters(), b.parameters()):
        assert torch.equal(pa, pb)


def test_training_rejects_empty():
    with pytest.raises(ParameterError):
        train_ar_prior(np.zeros((0, 4, 4)))


def test_training_nan_loss_aborts(monkeypatch):
    data = np.random.default_rng(0).random((20, 4, 4))
    monkeypatch.setattr(ArPriorModel, "nll", lambda self, x: torch.tensor(float("nan"), requires_grad=True))
    with pytest.raises(NumericError):
        train_ar_prior(data, TrainConfig(epochs=1, channels=4, layers=1), rng_seed=0)


def test_histogram_baseline():
    data = np.tile(np.array([0.0, 1.0]), (10, 2, 1))
    assert histogram_bits_per_dim(data, data, smoothing=1e-300) == pytest.approx(1.0)
