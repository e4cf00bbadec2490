"""Quantization and probability models for the two latent tensors.

The dense latent is priced by a Laplacian convolved with a unit uniform,
so the mass of integer bin k is CDF(k + 1/2) - CDF(k - 1/2). The
bottleneck latent uses a non-parametric per-channel prior stored as a
piecewise-linear CDF. Both give exact probabilities for rate estimates;
the 1/65536 coding floor lives in the range coder's table builder, not
here.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, RateError, ShapeError

__all__ = [
    "LATENT_MIN",
    "LATENT_MAX",
    "LatentGrid",
    "quantize_round",
    "SoftQuantizer",
    "laplace_pmf",
    "FactorizedPrior",
    "factorized_pmf",
    "default_z_prior",
    "rate_bits",
]

LATENT_MIN = -255
LATENT_MAX = 255


@dataclass
class LatentGrid:
    """Integer-valued latent tensor with its clamping bounds."""

    values: np.ndarray
    vmin: int = LATENT_MIN
    vmax: int = LATENT_MAX

    def __post_init__(self) -> None:
        if self.values.ndim != 3:
            raise ShapeError(f"latent grid must be (C, H, W), got {self.values.shape}")
        if not np.issubdtype(self.values.dtype, np.integer):
            raise DomainError(f"latent grid must be integer, got {self.values.dtype}")
        if self.vmin >= self.vmax:
            raise DomainError(f"empty value range [{self.vmin}, {self.vmax}]")
        if self.values.size and (
            self.values.min() < self.vmin or self.values.max() > self.vmax
        ):
            raise DomainError(
                f"latent values outside [{self.vmin}, {self.vmax}]: "
                f"range [{self.values.min()}, {self.values.max()}]"
            )

    @property
    def alphabet_size(self) -> int:
        return self.vmax - self.vmin + 1

    def to_tensor(self) -> np.ndarray:
        return self.values.astype(np.float32)


def quantize_round(x: np.ndarray, vmin: int = LATENT_MIN, vmax: int = LATENT_MAX) -> LatentGrid:
    """Round half away from zero, then clamp into [vmin, vmax]."""
    x = np.asarray(x)
    rounded = np.sign(x) * np.floor(np.abs(x) + 0.5)
    clipped = np.clip(rounded, vmin, vmax).astype(np.int32)
    return LatentGrid(clipped, vmin, vmax)


@dataclass
class SoftQuantizer:
    """Differentiable stand-in for rounding used when fitting models.

    Assigns softmax weights exp(-|x - c_j| / T) over the centers and
    returns the weighted mean. As T -> 0 this approaches nearest-center
    assignment.
    """

    centers: np.ndarray = field(
        default_factory=lambda: np.linspace(LATENT_MIN, LATENT_MAX, 200)
    )
    temperature: float = 1.0

    def __post_init__(self) -> None:
        self.centers = np.asarray(self.centers, dtype=np.float64)
        if self.centers.ndim != 1 or self.centers.size < 2:
            raise ShapeError("need a 1-d array of at least two centers")
        if np.any(np.diff(self.centers) <= 0):
            raise DomainError("centers must be strictly increasing")
        if self.temperature <= 0:
            raise DomainError(f"temperature must be positive, got {self.temperature}")

    def __call__(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        flat = x.reshape(-1, 1)
        logits = -np.abs(flat - self.centers[None, :]) / self.temperature
        logits -= logits.max(axis=1, keepdims=True)
        w = np.exp(logits)
        w /= w.sum(axis=1, keepdims=True)
        return (w @ self.centers).reshape(x.shape)


def laplace_pmf(k: np.ndarray, mu: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """Mass of integer bin k under Laplace(mu, sigma) convolved with U(-1/2, 1/2).

    Evaluates CDF(k + 1/2) - CDF(k - 1/2) with expm1 so nearby tail
    values do not cancel. Written in terms of |k - mu|, so the result is
    bitwise symmetric around the mean.
    """
    k = np.asarray(k, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma <= 0):
        raise DomainError("sigma must be positive")
    d = np.abs(k - mu)
    inv = 1.0 / sigma
    # Exponents are clamped to <= 0: each formula is only selected on the
    # branch where that already holds, and the discarded lane must not
    # overflow for small sigma.
    # Bin entirely on one side of the mean: 0.5 e^{-(d-1/2)/s} (1 - e^{-1/s}).
    one_side = -0.5 * np.exp(np.minimum(-(d - 0.5) * inv, 0.0)) * np.expm1(-inv)
    # Bin straddling the mean: 1 - 0.5 e^{-(d+1/2)/s} - 0.5 e^{-(1/2-d)/s}.
    straddle = 1.0 - 0.5 * (
        np.exp(-(d + 0.5) * inv) + np.exp(np.minimum(-(0.5 - d) * inv, 0.0))
    )
    return np.where(d >= 0.5, one_side, straddle)


@dataclass
class FactorizedPrior:
    """Per-channel piecewise-linear CDF over a fixed support interval.

    xs[c] are strictly increasing knot positions, fs[c] the CDF values at
    those knots, running from exactly 0 to exactly 1. Outside the knot
    range the CDF is flat, so integer bins out there carry zero mass.
    """

    xs: np.ndarray
    fs: np.ndarray

    def __post_init__(self) -> None:
        self.xs = np.asarray(self.xs, dtype=np.float64)
        self.fs = np.asarray(self.fs, dtype=np.float64)
        if self.xs.ndim != 2 or self.xs.shape != self.fs.shape:
            raise ShapeError(
                f"knot arrays must share a (channels, knots) shape, "
                f"got {self.xs.shape} and {self.fs.shape}"
            )
        if self.xs.shape[1] < 2:
            raise ShapeError("need at least two knots per channel")
        if np.any(np.diff(self.xs, axis=1) <= 0):
            raise DomainError("knot positions must be strictly increasing")
        if np.any(np.diff(self.fs, axis=1) < 0):
            raise DomainError("CDF values must be non-decreasing")
        if np.any(self.fs[:, 0] != 0.0) or np.any(self.fs[:, -1] != 1.0):
            raise DomainError("CDF must run from exactly 0 to exactly 1")

    @property
    def channels(self) -> int:
        return self.xs.shape[0]

    def cdf(self, channel: int, x: np.ndarray) -> np.ndarray:
        return np.interp(np.asarray(x, dtype=np.float64), self.xs[channel], self.fs[channel])

    def bin_pmf(self, channel: int) -> tuple[np.ndarray, np.ndarray]:
        """Masses of all integer bins intersecting the support of `channel`.

        Returns (values, pmf) where values are the consecutive integers
        whose bins [k - 1/2, k + 1/2) overlap the knot range.
        """
        lo = int(np.floor(self.xs[channel, 0] + 0.5))
        hi = int(np.ceil(self.xs[channel, -1] - 0.5))
        values = np.arange(lo, hi + 1)
        upper = self.cdf(channel, values + 0.5)
        lower = self.cdf(channel, values - 0.5)
        return values, upper - lower


def factorized_pmf(prior: FactorizedPrior, k: np.ndarray, channel: np.ndarray) -> np.ndarray:
    """Mass of integer bin k under the prior of its channel, vectorized."""
    k = np.asarray(k, dtype=np.float64)
    channel = np.asarray(channel)
    out = np.empty(np.broadcast(k, channel).shape, dtype=np.float64)
    kb, cb = np.broadcast_arrays(k, channel)
    for c in np.unique(cb):
        mask = cb == c
        out[mask] = prior.cdf(int(c), kb[mask] + 0.5) - prior.cdf(int(c), kb[mask] - 0.5)
    return out


def default_z_prior(channels: int, seed: int = 0, knots: int = 33,
                    support: float = 16.0) -> FactorizedPrior:
    """Seeded logistic-shaped prior used when a weight file carries none.

    Knot values are rounded through float32 so that a prior built in
    memory and one reloaded from disk produce identical coding tables.
    """
    rng = np.random.default_rng([int(seed), 0x5A])
    xs = np.tile(np.linspace(-support, support, knots), (channels, 1))
    scale = rng.uniform(1.5, 3.0, size=(channels, 1))
    shift = rng.uniform(-1.0, 1.0, size=(channels, 1))
    raw = 1.0 / (1.0 + np.exp(-(xs - shift) / scale))
    fs = (raw - raw[:, :1]) / (raw[:, -1:] - raw[:, :1])
    fs[:, 0] = 0.0
    fs[:, -1] = 1.0
    xs = xs.astype(np.float32).astype(np.float64)
    fs = fs.astype(np.float32).astype(np.float64)
    return FactorizedPrior(xs, fs)


def rate_bits(values: np.ndarray, pmf) -> float:
    """Ideal code length sum(-log2 p(v)) in bits.

    `pmf` maps an integer array to per-element probabilities. A zero or
    negative probability is unpriceable and raises RateError naming the
    first offending flat index.
    """
    values = np.asarray(values)
    probs = np.asarray(pmf(values.reshape(-1)), dtype=np.float64)
    bad = np.flatnonzero(probs <= 0.0)
    if bad.size:
        i = int(bad[0])
        raise RateError(
            f"symbol {values.reshape(-1)[i]} at flat index {i} has probability {probs[i]}"
        )
    return float(-np.log2(probs).sum())
