"""Heuristic comparators: MPPI-style weighting and the cross-entropy method.

Both rules keep the correlation structure of the proposal fixed and only
move its mean and marginal variances, smoothed across iterations by a
momentum term ``new <- alpha_m * old + (1 - alpha_m) * estimate``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import ContractError, GaussianProposal
from .trust_region import DegenerateBatch, effective_sample_size, logsumexp, weighted_moments

LAMBDA_FLOOR = 1e-8


@dataclass(frozen=True)
class MppiConfig:
    """``lam=None`` selects the adaptive temperature heuristic."""

    lam: Optional[float] = None
    momentum: float = 0.1
    kappa: float = 10.0

    def __post_init__(self):
        if self.lam is not None and not self.lam > 0:
            raise ContractError("lambda must be positive")
        if not 0.0 <= self.momentum < 1.0:
            raise ContractError("momentum must lie in [0, 1)")
        if not self.kappa > 0:
            raise ContractError("kappa must be positive")

    @property
    def adaptive(self) -> bool:
        return self.lam is None


@dataclass(frozen=True)
class CemConfig:
    elite_fraction: float = 0.1
    momentum: float = 0.1

    def __post_init__(self):
        if not 0.0 < self.elite_fraction <= 1.0:
            raise ContractError("elite_fraction must lie in (0, 1]")
        if not 0.0 <= self.momentum < 1.0:
            raise ContractError("momentum must lie in [0, 1)")

    def elite_count(self, n: int) -> int:
        k = math.ceil(self.elite_fraction * n - 1e-12)
        if k < 2:
            raise ContractError(f"elite count {k} < 2 for N={n}")
        return k


def mppi_weights(costs, lam: float) -> np.ndarray:
    """Softmax of ``-costs / lam`` computed in the log domain."""
    if not lam > 0:
        raise ContractError("lambda must be positive")
    costs = np.asarray(costs, dtype=float)
    ok = np.isfinite(costs)
    if not ok.any():
        raise DegenerateBatch("degenerate batch: every cost is infinite")
    a = np.full(costs.shape, -np.inf)
    a[ok] = -(costs[ok] - costs[ok].min()) / lam
    w = np.exp(a - logsumexp(a))
    return w / w.sum()


def adapt_temperature(costs, kappa: float = 10.0) -> float:
    """Quantile-range heuristic ``max(1e-8, (q90 - min) / kappa)`` over finite costs."""
    c = np.asarray(costs, dtype=float)
    c = c[np.isfinite(c)]
    if c.size == 0:
        raise DegenerateBatch("degenerate batch: every cost is infinite")
    spread = np.quantile(c, 0.9, method="linear") - c.min()
    return max(LAMBDA_FLOOR, float(spread) / kappa)


def momentum_blend(old, new, alpha_m: float):
    if not 0.0 <= alpha_m < 1.0:
        raise ContractError("momentum must lie in [0, 1)")
    return alpha_m * np.asarray(old) + (1.0 - alpha_m) * np.asarray(new)


def _blend_proposal(previous: Optional[GaussianProposal], mean, var, alpha_m, corr_chol):
    if previous is not None and alpha_m > 0:
        mean = momentum_blend(previous.mean, mean, alpha_m)
        var = momentum_blend(previous.variances, var, alpha_m)
    return GaussianProposal.from_marginals(mean, var, corr_chol)


def mppi_update(samples, costs, cfg: MppiConfig, previous: Optional[GaussianProposal] = None,
                corr_chol=None):
    """Weighted moment match followed by momentum smoothing.

    Returns ``(proposal, weights, lam)``.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    lam = adapt_temperature(costs, cfg.kappa) if cfg.adaptive else cfg.lam
    w = mppi_weights(costs, lam)
    mean, var = weighted_moments(samples, w, diagonal_only=True)
    return _blend_proposal(previous, mean, var, cfg.momentum, corr_chol), w, lam


def elite_indices(costs, count: int) -> np.ndarray:
    """Indices of the ``count`` lowest costs; ties go to the lower row index."""
    return np.argsort(np.asarray(costs, dtype=float), kind="stable")[:count]


def cem_update(samples, costs, cfg: CemConfig, correlation_template=None,
               previous: Optional[GaussianProposal] = None, corr_chol=None):
    """Uniform moment match over the elites, then momentum smoothing.

    Without a correlation template the full elite covariance is used and no
    variance momentum is applied.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    costs = np.asarray(costs, dtype=float)
    if len(costs) != len(samples):
        raise ContractError("one cost per sample row required")
    idx = elite_indices(costs, cfg.elite_count(len(costs)))
    elites = samples[idx]
    w = np.full(len(idx), 1.0 / len(idx))
    if corr_chol is None and correlation_template is not None:
        corr_chol = np.linalg.cholesky(correlation_template)
    if corr_chol is None:
        mean, cov = weighted_moments(elites, w)
        if previous is not None and cfg.momentum > 0:
            mean = momentum_blend(previous.mean, mean, cfg.momentum)
        return GaussianProposal.from_cov(mean, cov, jitter=False)
    mean, var = weighted_moments(elites, w, diagonal_only=True)
    return _blend_proposal(previous, mean, var, cfg.momentum, corr_chol)


__all__ = ["MppiConfig", "CemConfig", "mppi_weights", "adapt_temperature", "momentum_blend",
           "mppi_update", "elite_indices", "cem_update", "effective_sample_size"]
