"""Problem definitions, stacked controls, Gaussian utilities and batch rollout.

A control sequence over a horizon of ``H`` steps with ``d_u`` channels is
stored as one flat vector of length ``H * d_u`` in step-major order
``[u_0, u_1, ..., u_{H-1}]``. Batches of sequences are ``(N, H * d_u)``
arrays.

Dynamics and cost handles are called on batches: ``dynamics(x, u)`` receives
``x`` of shape ``(N, d_x)`` and ``u`` of shape ``(N, d_u)`` and returns the
next states; ``stage_cost(x, u)`` and ``terminal_cost(x)`` return ``(N,)``.
"""

from __future__ import annotations

import enum
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.linalg import solve_triangular

logger = logging.getLogger(__name__)

#: Relative diagonal jitter, scaled by ``trace(C) / d``.
JITTER = 1e-9

LOG_2PI = math.log(2.0 * math.pi)


class ContractError(ValueError):
    """Raised when arguments violate an operation's preconditions."""


@dataclass(frozen=True)
class OcpConfig:
    """Finite-horizon optimal control problem.

    ``rollout_kernel`` is an optional fused implementation with signature
    ``kernel(x0, U) -> costs`` where ``U`` has shape ``(N, H, d_u)``. It
    must agree with the generic handle-based rollout.
    """

    horizon: int
    control_dim: int
    state_dim: int
    control_lower: np.ndarray
    control_upper: np.ndarray
    dynamics: Callable[[np.ndarray, np.ndarray], np.ndarray]
    stage_cost: Callable[[np.ndarray, np.ndarray], np.ndarray]
    terminal_cost: Callable[[np.ndarray], np.ndarray]
    dt: float
    rollout_kernel: Optional[Callable[[np.ndarray, np.ndarray], np.ndarray]] = None

    def __post_init__(self):
        lo = np.asarray(self.control_lower, dtype=float).reshape(self.control_dim)
        hi = np.asarray(self.control_upper, dtype=float).reshape(self.control_dim)
        object.__setattr__(self, "control_lower", lo)
        object.__setattr__(self, "control_upper", hi)
        if self.horizon < 1:
            raise ContractError("horizon must be >= 1")
        if self.control_dim < 1 or self.state_dim < 1:
            raise ContractError("dimensions must be positive")
        if not np.all(lo < hi):
            raise ContractError("control_lower must be < control_upper elementwise")
        if not self.dt > 0:
            raise ContractError("dt must be positive")

    @property
    def sequence_dim(self) -> int:
        return self.horizon * self.control_dim

    def stacked_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Bounds broadcast over the horizon, each of length ``H * d_u``."""
        return np.tile(self.control_lower, self.horizon), np.tile(self.control_upper, self.horizon)


def to_steps(v: np.ndarray, horizon: int, control_dim: int) -> np.ndarray:
    """View flat sequence(s) as ``(..., H, d_u)``."""
    v = np.asarray(v)
    if v.shape[-1] != horizon * control_dim:
        raise ContractError(
            f"sequence length {v.shape[-1]} != horizon*control_dim = {horizon * control_dim}"
        )
    return v.reshape(v.shape[:-1] + (horizon, control_dim))


def from_steps(u: np.ndarray) -> np.ndarray:
    """Inverse of :func:`to_steps`."""
    u = np.asarray(u)
    return u.reshape(u.shape[:-2] + (u.shape[-2] * u.shape[-1],))


class Origin(enum.IntEnum):
    FRESH = 0
    BUFFERED = 1


@dataclass
class SampleBatch:
    """Rows of stacked control sequences with their costs, densities and weights."""

    samples: np.ndarray
    costs: Optional[np.ndarray] = None
    logpdf: Optional[np.ndarray] = None
    weights: Optional[np.ndarray] = None
    origin: Optional[np.ndarray] = None

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=float))
        if self.origin is None:
            self.origin = np.full(len(self.samples), Origin.FRESH, dtype=np.int8)
        else:
            self.origin = np.asarray(self.origin, dtype=np.int8)

    def __len__(self) -> int:
        return self.samples.shape[0]

    @property
    def fresh(self) -> np.ndarray:
        return self.origin == Origin.FRESH


@dataclass(frozen=True)
class GaussianProposal:
    """Gaussian over stacked control sequences, stored with its Cholesky factor.

    Use :meth:`from_cov` or :meth:`from_marginals` rather than the raw
    constructor; they guarantee ``chol @ chol.T == cov``.
    """

    mean: np.ndarray
    cov: np.ndarray
    chol: np.ndarray = field(repr=False)

    @classmethod
    def from_cov(cls, mean, cov, jitter: bool = True) -> "GaussianProposal":
        mean = np.asarray(mean, dtype=float).ravel()
        cov = np.array(cov, dtype=float, ndmin=2)
        d = mean.size
        if cov.shape != (d, d):
            raise ContractError(f"covariance shape {cov.shape} does not match mean of length {d}")
        cov = 0.5 * (cov + cov.T)
        if jitter:
            cov[np.diag_indices(d)] += JITTER * np.trace(cov) / d
        chol = np.linalg.cholesky(cov)
        return cls(mean, cov, chol)

    @classmethod
    def from_marginals(cls, mean, variances, corr_chol=None) -> "GaussianProposal":
        """Build ``D^1/2 R D^1/2`` from marginal variances and a correlation factor.

        ``corr_chol`` is the Cholesky factor of a unit-diagonal correlation
        matrix; ``None`` means independent coordinates.
        """
        mean = np.asarray(mean, dtype=float).ravel()
        sd = np.sqrt(np.broadcast_to(np.asarray(variances, dtype=float), mean.shape))
        if corr_chol is None:
            chol = np.diag(sd)
        else:
            chol = sd[:, None] * corr_chol
        cov = chol @ chol.T
        return cls(mean, cov, chol)

    @property
    def dim(self) -> int:
        return self.mean.size

    @property
    def variances(self) -> np.ndarray:
        return np.diag(self.cov).copy()

    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.chol))))


def gaussian_logpdf_batch(p: GaussianProposal, samples) -> np.ndarray:
    """Log density of each row of ``samples`` under ``p``."""
    x = np.atleast_2d(np.asarray(samples, dtype=float))
    if x.shape[1] != p.dim:
        raise ContractError(f"sample dimension {x.shape[1]} != proposal dimension {p.dim}")
    z = solve_triangular(p.chol, (x - p.mean).T, lower=True, check_finite=False)
    maha = np.einsum("ij,ij->j", z, z)
    return -0.5 * (maha + p.dim * LOG_2PI + p.logdet())


def gaussian_entropy(p: GaussianProposal) -> float:
    return 0.5 * p.dim * (LOG_2PI + 1.0) + float(np.sum(np.log(np.diag(p.chol))))


def gaussian_kl(p: GaussianProposal, q: GaussianProposal) -> float:
    """Closed-form ``KL(p || q)``."""
    if p.dim != q.dim:
        raise ContractError(f"dimension mismatch: {p.dim} vs {q.dim}")
    m = solve_triangular(q.chol, p.chol, lower=True, check_finite=False)
    dm = solve_triangular(q.chol, q.mean - p.mean, lower=True, check_finite=False)
    kl = 0.5 * (np.sum(m * m) + dm @ dm - p.dim + q.logdet() - p.logdet())
    return float(kl)


def _rollout_rows(ocp: OcpConfig, x0: np.ndarray, samples: np.ndarray) -> np.ndarray:
    n = samples.shape[0]
    u = to_steps(samples, ocp.horizon, ocp.control_dim)
    x = np.broadcast_to(x0, (n, ocp.state_dim)).copy()
    cost = np.zeros(n)
    bad = np.zeros(n, dtype=bool)
    with np.errstate(all="ignore"):
        for k in range(ocp.horizon):
            uk = u[:, k, :]
            cost += ocp.stage_cost(x, uk)
            x = ocp.dynamics(x, uk)
            bad |= ~np.isfinite(x).all(axis=1)
        cost += ocp.terminal_cost(x)
    bad |= ~np.isfinite(cost)
    cost[bad] = np.inf
    return cost


def rollout_batch(ocp: OcpConfig, x0, batch, workers: int = 1, use_kernel: bool = True) -> np.ndarray:
    """Cumulative cost of every row of ``batch`` started from ``x0``.

    Rows whose state or cost becomes non-finite get ``+inf`` cost. With
    ``workers > 1`` contiguous row blocks are evaluated on a thread pool;
    rows never interact so the result does not depend on the split.
    """
    samples = batch.samples if isinstance(batch, SampleBatch) else np.atleast_2d(batch)
    samples = np.asarray(samples, dtype=float)
    x0 = np.asarray(x0, dtype=float).ravel()
    if x0.size != ocp.state_dim:
        raise ContractError(f"x0 has {x0.size} entries, expected {ocp.state_dim}")
    if not np.all(np.isfinite(x0)):
        raise ContractError("x0 must be finite")
    if samples.shape[1] != ocp.sequence_dim:
        raise ContractError(f"samples have {samples.shape[1]} columns, expected {ocp.sequence_dim}")

    if use_kernel and ocp.rollout_kernel is not None:
        def run(rows):
            u = np.ascontiguousarray(to_steps(rows, ocp.horizon, ocp.control_dim))
            c = np.asarray(ocp.rollout_kernel(x0, u), dtype=float)
            c[~np.isfinite(c)] = np.inf
            return c
    else:
        def run(rows):
            return _rollout_rows(ocp, x0, rows)

    if workers <= 1 or len(samples) < 2 * workers:
        costs = run(samples)
    else:
        chunks = np.array_split(samples, workers)
        with ThreadPoolExecutor(max_workers=workers) as pool:
            costs = np.concatenate(list(pool.map(run, chunks)))

    n_bad = int(np.sum(np.isinf(costs)))
    if n_bad:
        logger.debug("rollout: %d of %d rows diverged", n_bad, len(costs))
    return costs
