"""Input-density estimation over a bounded window of recent samples.

The rule-growing criterion weights candidate rules by the input density,
approximated with a diagonal Gaussian mixture fitted by expectation
maximisation on the most recent window of inputs.  The mixture components
are consumed through the unnormalised kernel
``exp(-(x - v)^T Sigma^-1 (x - v))`` rather than a proper density, matching
the closed-form significance estimate downstream.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

VARIANCE_FLOOR = 1e-6
WEIGHT_SUM_TOL = 1e-9
EM_MAX_ITER = 50
EM_REL_TOL = 1e-6


@dataclass(frozen=True)
class GmmDensity:
    """Diagonal Gaussian mixture snapshot: weights (H,), means (H, I), variances (H, I)."""

    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "weights", np.asarray(self.weights, dtype=float))
        object.__setattr__(self, "means", np.asarray(self.means, dtype=float))
        object.__setattr__(self, "variances", np.asarray(self.variances, dtype=float))
        if self.weights.ndim != 1 or self.means.ndim != 2 or self.variances.ndim != 2:
            raise ValueError("weights must be (H,), means and variances (H, I)")
        if self.means.shape != self.variances.shape or self.means.shape[0] != self.weights.size:
            raise ValueError("component counts of weights/means/variances disagree")
        if abs(self.weights.sum() - 1.0) > WEIGHT_SUM_TOL:
            raise ValueError(f"mixture weights must sum to 1, got {self.weights.sum()!r}")
        if np.any(self.weights <= 0.0):
            raise ValueError("mixture weights must be strictly positive")
        if np.any(self.variances < VARIANCE_FLOOR * (1.0 - 1e-12)):
            raise ValueError(f"variances must respect the floor {VARIANCE_FLOOR}")

    @property
    def component_count(self) -> int:
        return self.weights.size

    @property
    def input_dim(self) -> int:
        return self.means.shape[1]


class SampleWindow:
    """Ring buffer of the most recent inputs plus running moment accumulators.

    The buffer caps memory at ``capacity`` vectors; the Welford accumulators
    cover every sample ever pushed and back the single-component fallback
    density used before the first mixture fit.
    """

    def __init__(self, capacity: int, dim: int) -> None:
        if capacity < 1 or dim < 1:
            raise ValueError("capacity and dim must be positive")
        self.capacity = int(capacity)
        self.dim = int(dim)
        self._buf = np.zeros((self.capacity, self.dim))
        self._size = 0
        self._cursor = 0
        self.count = 0  # samples ever pushed
        self._mean = np.zeros(self.dim)
        self._m2 = np.zeros(self.dim)

    def __len__(self) -> int:
        return self._size

    def push(self, x: np.ndarray) -> None:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ValueError(f"expected shape ({self.dim},), got {x.shape}")
        self._buf[self._cursor] = x
        self._cursor = (self._cursor + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)
        self.count += 1
        delta = x - self._mean
        self._mean += delta / self.count
        self._m2 += delta * (x - self._mean)

    def samples(self) -> np.ndarray:
        """Window contents in chronological order, shape (size, dim)."""
        if self._size < self.capacity:
            return self._buf[: self._size].copy()
        return np.concatenate([self._buf[self._cursor :], self._buf[: self._cursor]])

    def running_mean(self) -> np.ndarray:
        return self._mean.copy()

    def running_variance(self) -> np.ndarray:
        """Population variance of everything pushed so far, floored."""
        if self.count < 2:
            return np.full(self.dim, VARIANCE_FLOOR)
        return np.maximum(self._m2 / self.count, VARIANCE_FLOOR)

    def moment_density(self) -> GmmDensity:
        """Single-component density matching the running moments."""
        return GmmDensity(
            weights=np.ones(1),
            means=self.running_mean()[None, :],
            variances=self.running_variance()[None, :],
        )


def gaussian_kernel(x, v, sigma_diag) -> float:
    """Unnormalised diagonal Gaussian kernel ``exp(-(x-v)^T Sigma^-1 (x-v))``.

    ``sigma_diag`` holds the diagonal of the variance matrix.
    """
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    sigma_diag = np.asarray(sigma_diag, dtype=float)
    if np.any(sigma_diag <= 0.0):
        raise ValueError("variance diagonal must be strictly positive")
    d = x - v
    return float(np.exp(-np.sum(d * d / sigma_diag)))


def _log_density(samples: np.ndarray, weights, means, variances) -> np.ndarray:
    """Per-sample log density under a proper diagonal Gaussian mixture."""
    d = samples[:, None, :] - means[None, :, :]
    log_comp = -0.5 * np.sum(d * d / variances[None, :, :] + np.log(2.0 * np.pi * variances)[None, :, :], axis=2)
    log_comp = log_comp + np.log(weights)[None, :]
    peak = log_comp.max(axis=1, keepdims=True)
    return peak[:, 0] + np.log(np.exp(log_comp - peak).sum(axis=1))


def gmm_log_likelihood(gmm: GmmDensity, samples: np.ndarray) -> float:
    """Total log likelihood of ``samples`` under the (normalised) mixture."""
    samples = np.asarray(samples, dtype=float)
    return float(_log_density(samples, gmm.weights, gmm.means, gmm.variances).sum())


def _seed_means(samples: np.ndarray, components: int, rng: np.random.Generator) -> np.ndarray:
    """Distance-weighted (k-means++ style) pick of initial component means."""
    n = samples.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = np.sum((samples - samples[chosen[0]]) ** 2, axis=1)
    for _ in range(1, components):
        total = d2.sum()
        if total <= 0.0:
            chosen.append(int(rng.integers(n)))
        else:
            chosen.append(int(rng.choice(n, p=d2 / total)))
        d2 = np.minimum(d2, np.sum((samples - samples[chosen[-1]]) ** 2, axis=1))
    return samples[chosen].copy()


def fit_gmm(window: SampleWindow, components: int, seed) -> GmmDensity:
    """Fit a diagonal Gaussian mixture to the window by EM.

    Seeding is k-means++ style from ``np.random.default_rng(seed)``, so the
    result is a deterministic function of (window contents, seed).  Runs at
    most ``EM_MAX_ITER`` iterations, stopping when the relative log-likelihood
    improvement drops below ``EM_REL_TOL``.  With fewer than
    ``max(2 * components, 4)`` samples, falls back to a single moment-matched
    component.
    """
    if components < 1:
        raise ValueError("components must be >= 1")
    samples = window.samples()
    n = samples.shape[0]
    if n < max(2 * components, 4):
        return window.moment_density()

    rng = np.random.default_rng(seed)
    means = _seed_means(samples, components, rng)
    global_var = np.maximum(samples.var(axis=0), VARIANCE_FLOOR)
    variances = np.tile(global_var, (components, 1))
    weights = np.full(components, 1.0 / components)

    prev_ll = -np.inf
    for _ in range(EM_MAX_ITER):
        # E step in log space.
        d = samples[:, None, :] - means[None, :, :]
        log_comp = -0.5 * np.sum(
            d * d / variances[None, :, :] + np.log(2.0 * np.pi * variances)[None, :, :], axis=2
        )
        log_comp = log_comp + np.log(weights)[None, :]
        peak = log_comp.max(axis=1, keepdims=True)
        resp = np.exp(log_comp - peak)
        norm = resp.sum(axis=1, keepdims=True)
        ll = float((peak[:, 0] + np.log(norm[:, 0])).sum())
        resp /= norm

        if np.isfinite(prev_ll) and abs(ll - prev_ll) <= EM_REL_TOL * max(abs(prev_ll), 1.0):
            break
        prev_ll = ll

        # M step with starved-component guards.
        nk = resp.sum(axis=0)
        safe = np.maximum(nk, 1e-12)
        means = (resp.T @ samples) / safe[:, None]
        diff = samples[:, None, :] - means[None, :, :]
        variances = np.einsum("nh,nhi->hi", resp, diff * diff) / safe[:, None]
        variances = np.maximum(variances, VARIANCE_FLOOR)
        weights = np.maximum(nk / n, 1e-12)
        weights = weights / weights.sum()

    return GmmDensity(weights=weights, means=means, variances=variances)


def mixed_mean(gmm: GmmDensity) -> np.ndarray:
    """Weight-blended mean of the mixture components."""
    return gmm.weights @ gmm.means


def mixed_variance(gmm: GmmDensity) -> np.ndarray:
    """Weight-blended variance diagonal of the mixture components."""
    return gmm.weights @ gmm.variances
