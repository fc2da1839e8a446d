"""KL- and entropy-constrained proposal updates.

Given samples ``v_i`` drawn from the current proposal ``q``, their costs
``J_i`` and log densities ``l_i = log q(v_i)``, the constrained update

    min_p  E_p[J]   s.t.  KL(p || q) <= epsilon,  H(p) >= h_min

has the solution ``p* ∝ q^(eta/(eta+alpha)) exp(-J/(eta+alpha))``. The
multipliers maximize the concave dual

    g(eta, alpha) = -eta*epsilon + alpha*h_min - (eta+alpha) log Z(eta, alpha),
    Z = E_q[ q^(eta/(eta+alpha) - 1) exp(-J/(eta+alpha)) ],

where every expectation is a sample mean over the rows drawn from ``q``.
The weighted samples are then projected back onto a Gaussian by moment
matching. With ``alpha = 0`` the weights are exactly MPPI's softmax weights
at temperature ``eta``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.optimize import brentq

from .core import (JITTER, ContractError, GaussianProposal, SampleBatch, gaussian_entropy,
                   gaussian_kl, gaussian_logpdf_batch)


class DegenerateBatch(ValueError):
    """Every sample has infinite cost."""


class DegenerateEliteMass(ValueError):
    """The weights concentrate on fewer than two effective samples."""


@dataclass(frozen=True)
class TrustRegionConfig:
    epsilon: float = 2.0
    h_min: float = -math.inf
    eta_floor: float = 1e-6
    alpha_floor: float = 0.0
    max_iter: int = 100
    tol: float = 1e-9
    eta0: float = 1.0
    alpha0: float = 0.1
    buffer_in_dual: bool = False

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ContractError("epsilon must be positive")
        if not self.eta_floor > 0:
            raise ContractError("eta_floor must be positive")
        if self.alpha_floor < 0:
            raise ContractError("alpha_floor must be nonnegative")

    @property
    def entropy_active(self) -> bool:
        return self.h_min > -math.inf


@dataclass
class DualState:
    eta: float
    alpha: float
    dual_value: float
    gradient: np.ndarray
    converged: bool
    iterations: int
    kl: float = math.nan
    entropy: float = math.nan
    ess: float = math.nan


def logsumexp(a) -> float:
    """Stable ``log(sum(exp(a)))`` for a 1-D array; ``-inf`` entries are allowed."""
    m = np.max(a)
    if not np.isfinite(m):
        return float(m)
    return float(m + np.log(np.sum(np.exp(a - m))))


def _check(eta, alpha, logp, costs):
    logp = np.asarray(logp, dtype=float).ravel()
    costs = np.asarray(costs, dtype=float).ravel()
    if logp.shape != costs.shape or logp.size == 0:
        raise ContractError("logp and costs must be nonempty and of equal length")
    if not eta > 0 or alpha < 0:
        raise ContractError(f"invalid multipliers eta={eta}, alpha={alpha}")
    ok = np.isfinite(costs)
    if not ok.any():
        raise DegenerateBatch("degenerate batch: every cost is infinite")
    return logp, costs, ok


def _exponents(eta, alpha, logp, costs, ok):
    s = eta + alpha
    a = np.full(costs.shape, -np.inf)
    if alpha == 0.0:
        a[ok] = -costs[ok] / s
    else:
        a[ok] = -(alpha * logp[ok] + costs[ok]) / s
    return a


def log_partition(eta, alpha, logp, costs) -> float:
    """``log Z`` estimated as a log-mean-exp over the rows."""
    logp, costs, ok = _check(eta, alpha, logp, costs)
    a = _exponents(eta, alpha, logp, costs, ok)
    return float(logsumexp(a) - math.log(costs.size))


def _entropy_term(alpha, cfg):
    if alpha == 0.0:
        return 0.0
    if not cfg.entropy_active:
        raise ContractError("alpha must be 0 when the entropy bound is disabled")
    return alpha * cfg.h_min


def dual_value(eta, alpha, logp, costs, cfg: TrustRegionConfig) -> float:
    return (-eta * cfg.epsilon + _entropy_term(alpha, cfg)
            - (eta + alpha) * log_partition(eta, alpha, logp, costs))


def _dual_parts(eta, alpha, logp, costs, cfg, hessian=False):
    """Dual value, gradient and optionally Hessian at one point.

    Costs and log densities are shifted before the weighted moments are
    formed; the gradient is invariant to a cost shift and the log-density
    shift is added back, so only round-off changes.
    """
    logp, costs, ok = _check(eta, alpha, logp, costs)
    n = costs.size
    s = eta + alpha
    j = costs[ok] - costs[ok].min()
    l_ref = float(np.mean(logp[ok]))
    l = logp[ok] - l_ref
    a = -(alpha * l + j) / s
    lse = logsumexp(a)
    w = np.exp(a - lse)
    log_z = lse - math.log(n)
    c = alpha * l + j
    f_eta = c / s ** 2
    f_alpha = -l / s + c / s ** 2
    d_eta = w @ f_eta
    d_alpha = w @ f_alpha
    grad = np.array([-log_z - s * d_eta - cfg.epsilon,
                     -log_z - s * d_alpha + (cfg.h_min + l_ref if cfg.entropy_active else -np.inf)])
    # undo both shifts for the value: log Z gains -(alpha*l_ref + min J)/s
    value = (-eta * cfg.epsilon + _entropy_term(alpha, cfg) - s * log_z
             + alpha * l_ref + costs[ok].min())
    if not hessian:
        return value, grad, None
    dlz = np.array([d_eta, d_alpha])
    h_ee = -2.0 * c / s ** 3
    h_ea = l / s ** 2 - 2.0 * c / s ** 3
    h_aa = 2.0 * l / s ** 2 - 2.0 * c / s ** 3
    fe, fa = f_eta - d_eta, f_alpha - d_alpha
    hz = np.array([[w @ h_ee + w @ (fe * fe), w @ h_ea + w @ (fe * fa)],
                   [w @ h_ea + w @ (fe * fa), w @ h_aa + w @ (fa * fa)]])
    ones = np.ones(2)
    hess = -(np.outer(ones, dlz) + np.outer(dlz, ones) + s * hz)
    return value, grad, hess


def dual_gradient(eta, alpha, logp, costs, cfg: TrustRegionConfig) -> np.ndarray:
    """Analytic gradient ``(dg/deta, dg/dalpha)`` of :func:`dual_value`.

    Uses ``d log Z / d theta = E_w[d exponent / d theta]`` with the
    self-normalized weights ``w``, i.e. the derivative of ``Z`` divided by
    ``Z``. When the entropy bound is disabled the second component is
    ``-inf`` and carries no information.
    """
    return _dual_parts(eta, alpha, logp, costs, cfg)[1]


class _Shifted:
    """Batch data shifted once per solve, with cheap slopes along each multiplier.

    With ``c = alpha * l + j`` and self-normalized weights ``w``:
    ``dg/deta = -log Z - E_w[c] / s - eps`` and
    ``d2g/deta2 = -Var_w[c] / s^3``.
    """

    def __init__(self, logp, costs, cfg):
        logp, costs, ok = _check(1.0, 0.0, logp, costs)
        self.cfg = cfg
        self.log_n = math.log(costs.size)
        self.j = costs[ok] - costs[ok].min()
        self.l_ref = float(np.mean(logp[ok]))
        self.l = logp[ok] - self.l_ref

    def _moments(self, eta, alpha):
        s = eta + alpha
        c = alpha * self.l + self.j if alpha else self.j
        a = c * (-1.0 / s)
        m = a.max()
        e = np.exp(a - m)
        tot = e.sum()
        w = e / tot
        log_z = m + math.log(tot) - self.log_n
        return s, c, w, log_z

    def eta_slope(self, eta, alpha):
        s, c, w, log_z = self._moments(eta, alpha)
        m1 = float(w @ c)
        var = max(float(w @ (c * c)) - m1 * m1, 0.0)
        return -log_z - m1 / s - self.cfg.epsilon, -var / s ** 3

    def alpha_slope(self, eta, alpha):
        s, c, w, log_z = self._moments(eta, alpha)
        d_alpha = -float(w @ self.l) / s + float(w @ c) / s ** 2
        return -log_z - s * d_alpha + self.cfg.h_min + self.l_ref


# beyond this the dual is treated as unbounded (an infeasible bound)
MULTIPLIER_CAP = 1e12


def _solve_eta(alpha, data: _Shifted, cfg, eta_init):
    """Maximize over ``eta`` with ``alpha`` fixed; returns ``(eta, n_steps)``.

    The dual is concave in ``eta`` so its derivative is monotone; the root is
    bracketed on a log scale and refined by Newton steps in ``log eta`` that
    fall back to bisection whenever they leave the bracket.
    """
    def slope(t):
        eta = math.exp(t)
        f, h = data.eta_slope(eta, alpha)
        return f, eta * h

    t_floor = math.log(cfg.eta_floor)
    t = max(math.log(max(eta_init, cfg.eta_floor)), t_floor)
    f, df = slope(t)
    steps = 1
    if f > 0:
        lo, hi = t, None
        while hi is None:
            t_next = t + math.log(10.0)
            if t_next > math.log(MULTIPLIER_CAP):
                return math.exp(t), steps
            t = t_next
            f, df = slope(t)
            steps += 1
            if f > 0:
                lo = t
            else:
                hi = t
    else:
        hi, lo = t, None
        while lo is None:
            if t <= t_floor:
                return cfg.eta_floor, steps
            t = max(t - math.log(10.0), t_floor)
            f, df = slope(t)
            steps += 1
            if f > 0:
                lo = t
            elif t <= t_floor:
                return cfg.eta_floor, steps
            else:
                hi = t
    # bracket [lo, hi] with slope(lo) > 0 >= slope(hi)
    t = 0.5 * (lo + hi)
    f, df = slope(t)
    steps += 1
    for _ in range(cfg.max_iter):
        if abs(f) <= 0.1 * cfg.tol or hi - lo <= 1e-15 * max(1.0, abs(t)):
            break
        if f > 0:
            lo = t
        else:
            hi = t
        t_new = t - f / df if df < 0 else math.nan
        if not lo < t_new < hi:
            t_new = 0.5 * (lo + hi)
        t = t_new
        f, df = slope(t)
        steps += 1
    return math.exp(t), steps


def solve_dual(logp, costs, cfg: TrustRegionConfig, init: Optional[tuple] = None) -> DualState:
    """Maximize the dual over ``eta >= eta_floor``, ``alpha >= alpha_floor``.

    The 2-D problem is split into nested 1-D problems. For fixed ``alpha``
    the best ``eta`` is found by a safeguarded Newton iteration on
    ``dg/deta``. The partial maximum ``max_eta g`` is concave in ``alpha``
    with derivative ``dg/dalpha`` at the inner optimum, whose root is found
    with Brent's method. With the entropy bound disabled ``alpha`` stays at
    zero. ``init`` warm-starts ``(eta, alpha)``.

    ``converged`` reports whether the projected gradient is within
    ``cfg.tol``; it is false when the entropy bound cannot be met (the dual
    is then unbounded in ``alpha``).
    """
    eta0, alpha0 = (cfg.eta0, cfg.alpha0) if init is None else init
    data = _Shifted(logp, costs, cfg)
    steps = 0
    state = {"eta": eta0}

    def alpha_slope(alpha):
        nonlocal steps
        eta, k = _solve_eta(alpha, data, cfg, state["eta"])
        steps += k
        state["eta"] = eta
        return data.alpha_slope(eta, alpha)

    alpha = 0.0 if not cfg.entropy_active else cfg.alpha_floor
    if cfg.entropy_active and alpha_slope(alpha) > 0:
        hi = max(alpha0, cfg.alpha_floor, 1e-6)
        lo = alpha
        while alpha_slope(hi) > 0 and hi < MULTIPLIER_CAP:
            lo, hi = hi, hi * 10.0
        if hi >= MULTIPLIER_CAP:
            alpha = hi
        else:
            alpha = brentq(alpha_slope, lo, hi, xtol=1e-300, rtol=4 * np.finfo(float).eps,
                           maxiter=cfg.max_iter)
    eta, k = _solve_eta(alpha, data, cfg, state["eta"])
    steps += k

    value, grad, _ = _dual_parts(eta, alpha, logp, costs, cfg)
    pgrad = grad.copy()
    if eta <= cfg.eta_floor and grad[0] < 0:
        pgrad[0] = 0.0
    if not cfg.entropy_active or (alpha <= cfg.alpha_floor and grad[1] < 0):
        pgrad[1] = 0.0
    converged = bool(np.linalg.norm(pgrad) <= cfg.tol)
    return DualState(eta=float(eta), alpha=float(alpha), dual_value=float(value),
                     gradient=grad, converged=converged, iterations=steps)


def tr_weights(eta, alpha, logp, costs) -> np.ndarray:
    """Normalized weights ``∝ q^(eta/(eta+alpha) - 1) exp(-J/(eta+alpha))``."""
    logp, costs, ok = _check(eta, alpha, logp, costs)
    if eta + alpha < 1e-6:
        w = np.zeros(costs.size)
        w[int(np.argmin(costs))] = 1.0
        return w
    a = _exponents(eta, alpha, logp, costs, ok)
    w = np.exp(a - logsumexp(a))
    return w / w.sum()


def weighted_moments(samples: np.ndarray, weights: np.ndarray, diagonal_only: bool = False):
    """Weighted mean and covariance (or marginal variances) centred at the weighted mean.

    A jitter of ``JITTER * trace / d`` is added to the diagonal, or plain
    ``JITTER`` when every row coincides.
    """
    mean = weights @ samples
    c = samples - mean
    if diagonal_only:
        var = weights @ (c * c)
        scale = var.mean()
        return mean, var + JITTER * (scale if scale > 0 else 1.0)
    cov = (c * weights[:, None]).T @ c
    scale = np.trace(cov) / cov.shape[0]
    cov[np.diag_indices_from(cov)] += JITTER * (scale if scale > 0 else 1.0)
    return mean, cov


def effective_sample_size(weights) -> float:
    return float(1.0 / np.sum(np.square(weights)))


def _corr_chol(template):
    return None if template is None else np.linalg.cholesky(template)


def project_gaussian(samples, weights, correlation_template=None,
                     corr_chol=None) -> GaussianProposal:
    """Moment-match a weighted sample set to a Gaussian.

    With a correlation template only the marginal variances are estimated and
    the result is ``D^1/2 R D^1/2``. ``corr_chol`` may be passed instead of
    the template to skip refactoring it.
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=float))
    weights = np.asarray(weights, dtype=float)
    if np.sum(weights > 0) < 2 or effective_sample_size(weights) < 1.5:
        raise DegenerateEliteMass("degenerate elite mass: effective sample size below 1.5")
    if corr_chol is None and correlation_template is not None:
        corr_chol = _corr_chol(correlation_template)
    if corr_chol is None:
        mean, cov = weighted_moments(samples, weights)
        return GaussianProposal.from_cov(mean, cov, jitter=False)
    mean, var = weighted_moments(samples, weights, diagonal_only=True)
    return GaussianProposal.from_marginals(mean, var, corr_chol)


def tr_update(proposal: GaussianProposal, batch: SampleBatch, cfg: TrustRegionConfig,
              correlation_template=None, corr_chol=None, init=None):
    """One trust-region update: solve the dual, weight the rows, project.

    Rows tagged as buffered take part in the weights and the projection but
    not in the dual's expectation, unless ``cfg.buffer_in_dual`` is set.
    Returns ``(new_proposal, dual_state)``; the dual state carries
    ``KL(new || old)``, the new entropy and the effective sample size.
    """
    logp = batch.logpdf
    if logp is None:
        logp = gaussian_logpdf_batch(proposal, batch.samples)
        batch.logpdf = logp
    costs = np.asarray(batch.costs, dtype=float)
    rows = slice(None) if cfg.buffer_in_dual else batch.fresh
    dual = solve_dual(logp[rows], costs[rows], cfg, init=init)
    w = tr_weights(dual.eta, dual.alpha, logp, costs)
    batch.weights = w
    dual.ess = effective_sample_size(w)
    new = project_gaussian(batch.samples, w, correlation_template, corr_chol=corr_chol)
    dual.kl = gaussian_kl(new, proposal)
    dual.entropy = gaussian_entropy(new)
    return new, dual
