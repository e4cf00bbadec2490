import numpy as np
import pytest

from mvrcodec.entropy import (
    LATENT_MAX,
    LATENT_MIN,
    FactorizedPrior,
    LatentGrid,
    SoftQuantizer,
    default_z_prior,
    factorized_pmf,
    laplace_pmf,
    quantize_round,
    rate_bits,
)
from mvrcodec.errors import DomainError, RateError, ShapeError


def test_quantize_round_frozen():
    x = np.array([[-1.5, -0.5, -0.2, 0.2, 0.5, 1.5, 300.0, -300.0]], dtype=np.float32)
    grid = quantize_round(x[None])
    np.testing.assert_array_equal(
        grid.values[0, 0], [-2, -1, 0, 0, 1, 2, LATENT_MAX, LATENT_MIN]
    )
    assert grid.values.dtype == np.int32


def test_latent_grid_validation():
    with pytest.raises(ShapeError):
        LatentGrid(np.zeros((2, 2), dtype=np.int32))
    with pytest.raises(DomainError):
        LatentGrid(np.full((1, 1, 1), 400, dtype=np.int32))
    grid = LatentGrid(np.zeros((1, 2, 2), dtype=np.int64))
    assert grid.alphabet_size == LATENT_MAX - LATENT_MIN + 1
    assert grid.to_tensor().dtype == np.float32


def test_soft_quantizer_symmetric_zero():
    sq = SoftQuantizer()
    out = sq(np.zeros((1, 2, 2), dtype=np.float32))
    assert np.all(np.abs(out) < 1e-5)


def test_soft_quantizer_cold_limit():
    # Near-zero temperature collapses onto the closest center.
    centers = np.array([-1.0, 0.0, 2.0])
    sq = SoftQuantizer(centers=centers, temperature=1e-3)
    out = sq(np.array([1.9, -0.8, 0.1]))
    np.testing.assert_allclose(out, [2.0, -1.0, 0.0], atol=1e-6)


def test_soft_quantizer_validation():
    with pytest.raises(DomainError):
        SoftQuantizer(temperature=0.0)
    with pytest.raises(DomainError):
        SoftQuantizer(centers=np.array([1.0, 1.0]))


def test_laplace_pmf_spot_values():
    # Mass of the center bin is 1 - e^{-1/(2 sigma)}.
    assert abs(laplace_pmf(0.0, 0.0, 1.0) - 0.3934693402873666) < 1e-12
    assert abs(laplace_pmf(0.0, 0.0, 2.0) - 0.22119921692859512) < 1e-12
    assert abs(laplace_pmf(5.0, 5.25, 1.0) -
               (1.0 - 0.5 * (np.exp(-0.75) + np.exp(-0.25)))) < 1e-12


def test_laplace_pmf_normalization():
    k = np.arange(-1000, 1001, dtype=np.float64)
    for sigma in (0.1, 1.0, 10.0):
        total = laplace_pmf(k, 0.3, sigma).sum()
        assert abs(total - 1.0) < 1e-9


def test_laplace_pmf_symmetry_bitwise():
    k = np.arange(0, 50, dtype=np.float64)
    for sigma in (0.5, 1.0, 3.0):
        up = laplace_pmf(10.0 + k, 10.0, sigma)
        down = laplace_pmf(10.0 - k, 10.0, sigma)
        np.testing.assert_array_equal(up, down)


def test_laplace_pmf_unimodal():
    k = np.arange(0, 200, dtype=np.float64)
    pmf = laplace_pmf(k, 0.0, 4.0)
    assert np.all(np.diff(pmf) <= 0)


def test_laplace_pmf_rejects_bad_sigma():
    with pytest.raises(DomainError):
        laplace_pmf(0.0, 0.0, 0.0)
    with pytest.raises(DomainError):
        laplace_pmf(np.zeros(3), np.zeros(3), np.array([1.0, -1.0, 2.0]))


def test_laplace_pmf_small_sigma_no_overflow():
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("error")
        pmf = laplace_pmf(np.array([0.0, 1.0, 40.0]), 0.0, 1e-6)
    assert pmf[0] == 1.0
    assert pmf[1] == 0.0 and pmf[2] == 0.0


def test_factorized_prior_validation():
    xs = np.array([[0.0, 1.0, 2.0]])
    with pytest.raises(DomainError):
        FactorizedPrior(xs, np.array([[0.0, 0.5, 0.9]]))
    with pytest.raises(DomainError):
        FactorizedPrior(xs, np.array([[0.0, 0.7, 0.5]]))
    with pytest.raises(DomainError):
        FactorizedPrior(np.array([[0.0, 0.0, 2.0]]), np.array([[0.0, 0.5, 1.0]]))


def test_factorized_prior_bin_pmf_sums_to_one():
    prior = default_z_prior(8, seed=3)
    for c in range(prior.channels):
        values, pmf = prior.bin_pmf(c)
        assert values[0] == -16 and values[-1] == 16
        assert np.all(pmf >= 0)
        assert abs(pmf.sum() - 1.0) < 1e-9


def test_factorized_pmf_matches_per_channel():
    prior = default_z_prior(4, seed=1)
    k = np.array([0, 1, -2, 5])
    channel = np.array([0, 1, 2, 3])
    out = factorized_pmf(prior, k, channel)
    for i in range(4):
        want = prior.cdf(i, k[i] + 0.5) - prior.cdf(i, k[i] - 0.5)
        assert out[i] == want


def test_default_z_prior_deterministic_and_f32_rounded():
    a = default_z_prior(16, seed=9)
    b = default_z_prior(16, seed=9)
    np.testing.assert_array_equal(a.xs, b.xs)
    np.testing.assert_array_equal(a.fs, b.fs)
    assert not np.array_equal(a.fs, default_z_prior(16, seed=10).fs)
    # Knots survive a float32 trip unchanged, so disk and memory agree.
    np.testing.assert_array_equal(a.fs, a.fs.astype(np.float32).astype(np.float64))


def test_rate_bits_frozen():
    values = np.array([0, 1, 0, 1])
    assert rate_bits(values, lambda v: np.full(v.shape, 0.5)) == 4.0


def test_rate_bits_rejects_zero_probability():
    with pytest.raises(RateError, match="flat index 1"):
        rate_bits(np.array([3, 7]), lambda v: np.array([0.5, 0.0]))
