"""Block-fading channel: fading laws, K-level quantization and seeded sampling.

Gains are dimensionless power gains with unit noise. A quantized channel
splits the gain axis into intervals ``[z_i, z_{i+1})`` with ``z_0 = 0`` and
``z_K = inf``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

RAYLEIGH = "rayleigh-unit-mean"
TABULATED = "custom-tabulated"


class QuantizationError(ValueError):
    """The fading model cannot be quantized at the requested level."""


@dataclass(frozen=True)
class FadingModel:
    """Distribution of the per-slot channel power gain.

    ``kind == RAYLEIGH`` is an exponential gain with unit mean. A tabulated
    model is given by ``(quantile, gain)`` pairs running from ``(0, 0)`` to
    ``(1, g_max)``; the CDF is the piecewise-linear interpolation between them.
    """

    kind: str = RAYLEIGH
    quantiles: tuple[float, ...] = ()
    gains: tuple[float, ...] = ()

    def __post_init__(self):
        if self.kind == RAYLEIGH:
            return
        if self.kind != TABULATED:
            raise ValueError(f"unknown fading model kind {self.kind!r}")
        q = np.asarray(self.quantiles, dtype=float)
        g = np.asarray(self.gains, dtype=float)
        if q.shape != g.shape or q.size < 2:
            raise ValueError("tabulated model needs at least two (quantile, gain) pairs")
        if q[0] != 0.0 or g[0] != 0.0 or q[-1] != 1.0:
            raise ValueError("tabulated model must start at (0, 0) and end at quantile 1")
        if np.any(np.diff(q) <= 0) or np.any(np.diff(g) <= 0) or not np.all(np.isfinite(g)):
            raise ValueError("tabulated quantiles and gains must be finite and strictly increasing")

    @classmethod
    def rayleigh(cls) -> "FadingModel":
        return cls(RAYLEIGH)

    @classmethod
    def tabulated(cls, pairs) -> "FadingModel":
        pairs = [(float(q), float(g)) for q, g in pairs]
        return cls(TABULATED, tuple(q for q, _ in pairs), tuple(g for _, g in pairs))

    def cdf(self, z):
        z = np.asarray(z, dtype=float)
        if self.kind == RAYLEIGH:
            return np.where(z > 0, -np.expm1(-np.maximum(z, 0.0)), 0.0)
        return np.interp(z, self.gains, self.quantiles, left=0.0, right=1.0)

    def ppf(self, u):
        """Inverse CDF; ``ppf(1)`` is ``inf`` for Rayleigh."""
        u = np.asarray(u, dtype=float)
        if self.kind == RAYLEIGH:
            with np.errstate(divide="ignore"):
                return -np.log1p(-u)
        return np.interp(u, self.quantiles, self.gains)

    def mean(self) -> float:
        if self.kind == RAYLEIGH:
            return 1.0
        g = np.asarray(self.gains)
        dq = np.diff(self.quantiles)
        return float(np.sum(dq * (g[1:] + g[:-1]) / 2))


@dataclass(frozen=True, eq=False)
class QuantizedChannel:
    """Thresholds ``z_0..z_K`` (``z_K = inf``) and state probabilities ``psi``."""

    model: FadingModel
    thresholds: np.ndarray
    probs: np.ndarray = field(repr=False)

    def __post_init__(self):
        for arr in (self.thresholds, self.probs):
            arr.setflags(write=False)

    @property
    def K(self) -> int:
        return len(self.probs)

    def state_of(self, gain):
        """Index ``i`` with ``z_i <= gain < z_{i+1}``; scalar in, int out."""
        idx = np.searchsorted(self.thresholds, gain, side="right") - 1
        idx = np.clip(idx, 0, self.K - 1)
        return int(idx) if np.ndim(idx) == 0 else idx


def quantize_equiprobable(model: FadingModel, K: int) -> QuantizedChannel:
    """Quantize into ``K`` states of probability ``1/K`` each."""
    if K < 1:
        raise QuantizationError("K must be a positive integer")
    if model.kind == TABULATED and len(model.quantiles) < K:
        raise QuantizationError(
            f"tabulated model has {len(model.quantiles)} quantile points, fewer than K={K}")
    z = np.empty(K + 1)
    z[0] = 0.0
    z[1:K] = model.ppf(np.arange(1, K) / K)
    z[K] = np.inf
    if np.any(np.diff(z) <= 0):
        raise QuantizationError("quantization thresholds are not strictly increasing")
    probs = np.full(K, 1.0 / K)
    return QuantizedChannel(model, z, probs)


def sample_gain(model: FadingModel, rng: np.random.Generator, size=None):
    """I.i.d. gain draws; the same generator state gives the same draws."""
    if model.kind == RAYLEIGH:
        return rng.standard_exponential(size)
    return model.ppf(rng.random(size))
