"""Receding-horizon sampling MPC with interchangeable proposal update rules.

Each control step warm-starts the proposal mean (and the sample buffer) by
shifting the previous solution one step, then alternates sampling, clipping,
rollout and a proposal update for a fixed number of iterations. The control
that gets applied is the first block of the cheapest sequence sampled during
the step.

The proposal covariance is always ``D^1/2 R D^1/2`` with ``R`` a fixed
time-correlation template derived from power-law ("colored") noise; updates
only touch the mean and the marginal variances ``D``.
"""

from __future__ import annotations

import enum
import logging
import math
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .baselines import CemConfig, MppiConfig, cem_update, mppi_update
from .core import (JITTER, ContractError, GaussianProposal, OcpConfig, Origin, SampleBatch,
                   gaussian_logpdf_batch, rollout_batch)
from .sampling import ALIASES, UnitSampleSource, random_rotation, transform_samples
from .trust_region import (DegenerateBatch, DegenerateEliteMass, TrustRegionConfig,
                           effective_sample_size, tr_update, weighted_moments)

logger = logging.getLogger(__name__)


class Rule(str, enum.Enum):
    TRUST_REGION = "tr"
    MPPI = "mppi"
    CEM = "cem"


_RULE_CONFIGS = {Rule.TRUST_REGION: TrustRegionConfig, Rule.MPPI: MppiConfig, Rule.CEM: CemConfig}


@dataclass(frozen=True)
class MpcConfig:
    """Controller settings.

    ``init_std`` is the marginal standard deviation of every control channel
    at the start of each step (scalar or one value per channel); ``None``
    lets the environment choose. ``rule_config`` defaults to the rule's own
    default configuration.
    """

    n_samples: int = 40
    iterations: int = 3
    buffer_size: int = 4
    rule: Rule = Rule.TRUST_REGION
    sampler: str = "random"
    init_std: Optional[object] = None
    beta: float = 2.0
    rule_config: Optional[object] = None
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "rule", Rule(self.rule))
        object.__setattr__(self, "sampler", ALIASES.get(self.sampler, self.sampler))
        if self.n_samples < 2:
            raise ContractError("need at least two samples per iteration")
        if self.iterations < 1:
            raise ContractError("need at least one iteration")
        if not 0 <= self.buffer_size < self.n_samples:
            raise ContractError("buffer size must satisfy 0 <= B < N")
        if self.beta < 0:
            raise ContractError("beta must be nonnegative")
        if self.rule_config is None:
            object.__setattr__(self, "rule_config", _RULE_CONFIGS[self.rule]())
        elif not isinstance(self.rule_config, _RULE_CONFIGS[self.rule]):
            raise ContractError(f"rule {self.rule.value} needs a {_RULE_CONFIGS[self.rule].__name__}")


@dataclass
class IterationInfo:
    best_cost: float
    n_buffered: int
    ess: float = math.nan
    eta: float = math.nan
    alpha: float = math.nan
    kl: float = math.nan
    entropy: float = math.nan
    converged: bool = True
    lam: float = math.nan
    degenerate: bool = False


@dataclass
class MpcStepResult:
    control: np.ndarray
    best_sequence: Optional[np.ndarray]
    best_cost: float
    iterations: list = field(default_factory=list)
    duration_ms: float = 0.0
    failed: bool = False


@dataclass
class SampleBuffer:
    """The lowest-cost sequences of the latest iteration, cheapest first.

    ``costs`` holds NaN for entries that must be re-evaluated (after a shift
    to a new start state).
    """

    capacity: int
    sequences: np.ndarray = None
    costs: np.ndarray = None

    def __post_init__(self):
        if self.capacity < 0:
            raise ContractError("buffer capacity must be nonnegative")
        if self.sequences is None:
            self.sequences = np.zeros((0, 0))
            self.costs = np.zeros(0)

    def __len__(self) -> int:
        return len(self.costs)

    def refresh(self, samples: np.ndarray, costs: np.ndarray) -> None:
        finite = np.flatnonzero(np.isfinite(costs))
        order = finite[np.argsort(costs[finite], kind="stable")][: self.capacity]
        self.sequences = samples[order].copy()
        self.costs = costs[order].copy()

    def shifted(self, horizon: int, control_dim: int) -> "SampleBuffer":
        if len(self) == 0:
            return SampleBuffer(self.capacity)
        seqs = shift_warm_start(self.sequences, horizon, control_dim)
        return SampleBuffer(self.capacity, seqs, np.full(len(self), np.nan))


def colored_correlation(horizon: int, control_dim: int, beta: float) -> np.ndarray:
    """Temporal correlation of power-law noise, block-diagonal across channels.

    Noise with spectral density ``1/f^beta`` is synthesized in the frequency
    domain over ``2*horizon`` samples (amplitudes ``f^(-beta/2)``, the DC bin
    borrowing the lowest nonzero frequency's amplitude, real DC and Nyquist
    bins) and cropped to ``horizon``. The expected correlation of that
    process is evaluated exactly instead of by averaging synthetic draws, so
    the template is deterministic. ``beta = 0`` gives the identity.
    """
    if beta < 0:
        raise ContractError("beta must be nonnegative")
    if horizon < 1 or control_dim < 1:
        raise ContractError("horizon and control_dim must be positive")
    m = 2 * horizon
    f = np.arange(m // 2 + 1) / m
    f[0] = f[1]
    power = f ** (-beta)
    # per-bin variance factors of the real-signal inverse transform
    mult = np.full(power.shape, 4.0)
    mult[0] = 2.0
    mult[-1] = 2.0
    lags = np.arange(horizon)
    acov = (mult * power) @ np.cos(2.0 * np.pi * np.outer(np.arange(m // 2 + 1), lags) / m)
    rho = acov / acov[0]
    t = rho[np.abs(lags[:, None] - lags[None, :])]
    t = (t + JITTER * np.eye(horizon)) / (1.0 + JITTER)
    return np.kron(t, np.eye(control_dim))


def clip_controls(samples, bounds) -> np.ndarray:
    """Clamp each ``(step, channel)`` entry to ``bounds = (lower, upper)``.

    The bounds may be per channel (length ``d_u``) or already stacked.
    """
    samples = np.asarray(samples, dtype=float)
    lo, hi = (np.asarray(b, dtype=float).ravel() for b in bounds)
    width = samples.shape[-1]
    if width % lo.size:
        raise ContractError("bounds do not tile the sequence length")
    reps = width // lo.size
    return np.clip(samples, np.tile(lo, reps), np.tile(hi, reps))


def shift_warm_start(seq, horizon: int, control_dim: int) -> np.ndarray:
    """Drop the first control block and repeat the last one (rows or single vector)."""
    seq = np.asarray(seq, dtype=float)
    if seq.shape[-1] != horizon * control_dim:
        raise ContractError("sequence length does not match horizon * control_dim")
    return np.concatenate([seq[..., control_dim:], seq[..., -control_dim:]], axis=-1)


def initial_mean(ocp: OcpConfig) -> np.ndarray:
    lo, hi = ocp.control_lower, ocp.control_upper
    u = np.where((lo <= 0) & (0 <= hi), 0.0, 0.5 * (lo + hi))
    return np.tile(u, ocp.horizon)


@dataclass
class StepContext:
    """Per-episode state shared by every step: streams and fixed templates."""

    ocp: OcpConfig
    cfg: MpcConfig
    rng: np.random.Generator
    source: UnitSampleSource
    corr_chol: np.ndarray
    base_variances: np.ndarray

    @classmethod
    def create(cls, ocp: OcpConfig, cfg: MpcConfig, lcd_set=None, default_std=1.0):
        seq = np.random.SeedSequence(cfg.seed)
        rng_seq, qmc_seq = seq.spawn(2)
        rng = np.random.default_rng(rng_seq)
        source = UnitSampleSource(cfg.sampler, ocp.sequence_dim,
                                  seed=np.random.default_rng(qmc_seq), lcd_set=lcd_set)
        corr = colored_correlation(ocp.horizon, ocp.control_dim, cfg.beta)
        std = default_std if cfg.init_std is None else cfg.init_std
        std = np.broadcast_to(np.asarray(std, dtype=float), (ocp.control_dim,))
        return cls(ocp, cfg, rng, source, np.linalg.cholesky(corr), np.tile(std ** 2, ocp.horizon))

    def proposal(self, mean) -> GaussianProposal:
        return GaussianProposal.from_marginals(mean, self.base_variances, self.corr_chol)


def _degenerate_fallback(batch: SampleBatch, previous: GaussianProposal, corr_chol):
    mean, var = weighted_moments(batch.samples, batch.weights, diagonal_only=True)
    var = np.maximum(var, JITTER * previous.variances.mean())
    return GaussianProposal.from_marginals(mean, var, corr_chol)


def _update(ctx: StepContext, proposal, batch: SampleBatch, dual_init):
    """Apply the configured rule; returns ``(proposal, info_fields, dual_init)``."""
    cfg = ctx.cfg
    rc = cfg.rule_config
    if cfg.rule is Rule.TRUST_REGION:
        try:
            new, dual = tr_update(proposal, batch, rc, corr_chol=ctx.corr_chol, init=dual_init)
        except DegenerateEliteMass:
            new = _degenerate_fallback(batch, proposal, ctx.corr_chol)
            return new, {"degenerate": True, "ess": effective_sample_size(batch.weights)}, None
        info = {"ess": dual.ess, "eta": dual.eta, "alpha": dual.alpha, "kl": dual.kl,
                "entropy": dual.entropy, "converged": dual.converged}
        return new, info, (dual.eta, max(dual.alpha, rc.alpha0))
    if cfg.rule is Rule.MPPI:
        new, w, lam = mppi_update(batch.samples, batch.costs, rc, previous=proposal,
                                  corr_chol=ctx.corr_chol)
        batch.weights = w
        return new, {"ess": effective_sample_size(w), "lam": lam}, None
    new = cem_update(batch.samples, batch.costs, rc, previous=proposal, corr_chol=ctx.corr_chol)
    return new, {}, None


def mpc_step(x, prev_mean, buffer: SampleBuffer, ctx: StepContext, prev_control=None):
    """One control step starting from the previous step's final proposal mean.

    Returns ``(MpcStepResult, final_mean, buffer)``. If every sampled
    sequence diverges the step is flagged as failed and ``prev_control`` is
    repeated.
    """
    t0 = time.perf_counter()
    ocp, cfg = ctx.ocp, ctx.cfg
    h, du = ocp.horizon, ocp.control_dim
    bounds = ocp.stacked_bounds()
    if prev_control is None:
        prev_control = initial_mean(ocp)[:du]

    proposal = ctx.proposal(shift_warm_start(prev_mean, h, du))
    buffer = buffer.shifted(h, du)
    best_cost, best_seq = math.inf, None
    infos = []
    dual_init = None
    failed = False
    for _ in range(cfg.iterations):
        unit = ctx.source.draw(cfg.n_samples, ctx.rng)
        rot = random_rotation(ocp.sequence_dim, ctx.rng) if ctx.source.kind == "lcd" else None
        fresh = transform_samples(unit, proposal, rot)
        rows = np.vstack([fresh, buffer.sequences]) if len(buffer) else fresh
        rows = clip_controls(rows, bounds)
        origin = np.full(len(rows), Origin.FRESH, dtype=np.int8)
        origin[cfg.n_samples:] = Origin.BUFFERED
        costs = np.empty(len(rows))
        known = np.zeros(len(rows), dtype=bool)
        if len(buffer):
            costs[cfg.n_samples:] = buffer.costs
            known[cfg.n_samples:] = np.isfinite(buffer.costs) | np.isinf(buffer.costs)
        todo = ~known
        costs[todo] = rollout_batch(ocp, x, rows[todo], workers=cfg.workers)
        batch = SampleBatch(rows, costs=costs,
                            logpdf=gaussian_logpdf_batch(proposal, rows), origin=origin)
        i = int(np.argmin(costs))
        if costs[i] < best_cost:
            best_cost, best_seq = float(costs[i]), rows[i].copy()
        try:
            proposal, fields_, dual_init = _update(ctx, proposal, batch, dual_init)
        except DegenerateBatch:
            logger.warning("every sampled sequence diverged; repeating the previous control")
            failed = True
            break
        infos.append(IterationInfo(best_cost=float(costs[i]), n_buffered=int(len(buffer)),
                                   **fields_))
        buffer = SampleBuffer(buffer.capacity)
        buffer.refresh(rows, costs)

    if best_seq is None:
        failed = True
        control = np.clip(np.asarray(prev_control, dtype=float), ocp.control_lower, ocp.control_upper)
    else:
        control = best_seq[:du].copy()
    result = MpcStepResult(control=control, best_sequence=best_seq, best_cost=best_cost,
                           iterations=infos, failed=failed)
    result.duration_ms = 1e3 * (time.perf_counter() - t0)
    return result, proposal.mean, buffer


class MpcController:
    """Stateful wrapper that carries the warm-start mean and buffer between steps."""

    def __init__(self, ocp: OcpConfig, cfg: MpcConfig, lcd_set=None, default_std=1.0):
        self.ocp = ocp
        self.cfg = cfg
        self.ctx = StepContext.create(ocp, cfg, lcd_set=lcd_set, default_std=default_std)
        self.reset()

    def reset(self):
        self.mean = initial_mean(self.ocp)
        self.buffer = SampleBuffer(self.cfg.buffer_size)
        self.last_control = self.mean[: self.ocp.control_dim].copy()

    def step(self, x) -> MpcStepResult:
        result, self.mean, self.buffer = mpc_step(x, self.mean, self.buffer, self.ctx,
                                                  prev_control=self.last_control)
        self.last_control = result.control
        return result


@dataclass
class ExperimentRecord:
    cell_id: str
    rule: str
    sampler: str
    env: str
    sweep_value: float
    seed: int
    cum_cost: float
    smoothness: float
    step_ms_mean: float
    step_ms_std: float
    truncated: bool


def smoothness(controls) -> float:
    """Sum of squared differences between consecutive applied controls."""
    u = np.asarray(controls, dtype=float).reshape(len(controls), -1)
    return float(np.sum(np.diff(u, axis=0) ** 2))


def run_episode(ocp: OcpConfig, x0, steps: int, cfg: MpcConfig, stage_cost, lcd_set=None,
                default_std=1.0, record_meta: Optional[dict] = None):
    """Closed-loop simulation applying one MPC step per time step.

    The plant is the prediction model itself. The episode stops early (and is
    flagged as truncated) if the state becomes non-finite. Returns
    ``(states, controls, record, step_results)``.
    """
    if steps < 1:
        raise ContractError("steps must be >= 1")
    ctrl = MpcController(ocp, cfg, lcd_set=lcd_set, default_std=default_std)
    x = np.asarray(x0, dtype=float).ravel()
    states, controls, results = [x], [], []
    cum = 0.0
    truncated = False
    for _ in range(steps):
        res = ctrl.step(x)
        u = res.control
        cum += float(stage_cost(x[None, :], u[None, :])[0])
        x = ocp.dynamics(x[None, :], u[None, :])[0]
        controls.append(u)
        results.append(res)
        states.append(x)
        if not np.all(np.isfinite(x)) or not math.isfinite(cum):
            truncated = True
            break
    ms = np.array([r.duration_ms for r in results])
    meta = dict(cell_id="", rule=cfg.rule.value, sampler=cfg.sampler, env="", sweep_value=math.nan)
    meta.update(record_meta or {})
    record = ExperimentRecord(seed=cfg.seed, cum_cost=cum, smoothness=smoothness(controls),
                              step_ms_mean=float(ms.mean()), step_ms_std=float(ms.std()),
                              truncated=truncated, **meta)
    return np.array(states), np.array(controls), record, results
