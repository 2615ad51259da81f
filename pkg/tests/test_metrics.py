import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pixprior.errors import ParameterError
from pixprior.metrics import C1, MetricReport, bits_per_dim, evaluate, psnr, ssim


def test_psnr_identical_is_inf():
    x = np.random.default_rng(0).random((8, 8))
    assert psnr(x, x) == math.inf


def test_psnr_unit_error():
    assert psnr(np.zeros((4, 4)), np.ones((4, 4))) == 0.0


def test_psnr_twenty_db():
    a = np.zeros((10, 10))
    assert psnr(a, a + 0.1) == pytest.approx(20.0, abs=1e-12)


def test_psnr_shape_mismatch():
    with pytest.raises(ParameterError):
        psnr(np.zeros((4, 4)), np.zeros((4, 5)))


def test_psnr_channel_mean():
    a = np.zeros((4, 4, 2))
    b = a.copy()
    b[..., 0] = 0.1
    b[..., 1] = 0.01
    assert psnr(a, b) == pytest.approx((20.0 + 40.0) / 2)


def test_psnr_permutation_invariant():
    rng = np.random.default_rng(1)
    a, b = rng.random((8, 8)), rng.random((8, 8))
    perm = rng.permutation(64)
    assert psnr(a, b) == pytest.approx(psnr(a.ravel()[perm].reshape(8, 8), b.ravel()[perm].reshape(8, 8)), rel=1e-12)


def test_psnr_monotone_in_noise():
    rng = np.random.default_rng(2)
    ref = rng.random((32, 32))
    z = rng.standard_normal((32, 32))
    vals = [psnr(ref, ref + s * z) for s in (0.01, 0.05, 0.1)]
    assert vals[0] > vals[1] > vals[2]


def test_ssim_identical_exact():
    x = np.random.default_rng(3).random((16, 16))
    assert ssim(x, x) == 1.0


def test_ssim_constant_offset_luminance_only():
    # (2 * 0.25 * 0.75 + C1) / (0.25^2 + 0.75^2 + C1); contrast/structure terms are 1
    a = np.full((8, 8), 0.25)
    expected = (2 * 0.25 * 0.75 + C1) / (0.25**2 + 0.75**2 + C1)
    assert ssim(a, a + 0.5) == pytest.approx(expected, rel=1e-12)
    assert ssim(a, a + 0.5) == pytest.approx(0.600064, abs=1e-6)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31))
def test_ssim_symmetric_and_bounded(seed):
    rng = np.random.default_rng(seed)
    a, b = rng.random((12, 10)), rng.random((12, 10))
    s = ssim(a, b)
    assert s == pytest.approx(ssim(b, a), rel=1e-12, abs=1e-15)
    assert -1.0 <= s <= 1.0


def test_ssim_perturbed_below_one():
    x = np.random.default_rng(4).random((16, 16))
    y = x.copy()
    y[5, 5] += 0.1
    assert ssim(x, y) < 1.0


def test_ssim_too_small():
    with pytest.raises(ParameterError):
        ssim(np.zeros((7, 16)), np.zeros((7, 16)))


def test_bits_per_dim():
    assert bits_per_dim(100 * math.log(256), 100) == pytest.approx(8.0, rel=1e-15)
    assert bits_per_dim(37 * math.log(2), 37) == pytest.approx(1.0, rel=1e-15)
    with pytest.raises(ParameterError):
        bits_per_dim(1.0, 0)


def test_report_dict():
    x = np.random.default_rng(5).random((8, 8))
    d = evaluate(x, x).to_dict()
    assert d == {"psnr_db": "inf", "ssim": 1.0, "bits_per_dim": None}
    assert MetricReport(20.0, 0.5, 1.5).to_dict()["psnr_db"] == 20.0
