"""Unit-Gaussian sample sources and the proposal transform.

Every source produces points meant to represent ``N(0, I)``; they are mapped
onto a proposal with ``v = mean + L @ R @ z`` where ``L`` is the proposal's
Cholesky factor and ``R`` a fresh uniformly random rotation.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.special import ndtri
from scipy.stats import qmc

from .core import ContractError, GaussianProposal

KINDS = ("random", "sobol_scrambled", "halton_scrambled", "lcd")

#: Short names used on the command line.
ALIASES = {"random": "random", "sobol": "sobol_scrambled", "halton": "halton_scrambled",
           "lcd": "lcd"}

SOBOL_MAX_DIM = 21201
HALTON_MAX_DIM = 1000

# uniform points are clamped to [EPS, 1 - EPS] before the inverse CDF
EPS = 2.0 ** -53 * 2


def gaussianize(u: np.ndarray) -> np.ndarray:
    """Map uniform points in the unit cube to standard-normal points, per coordinate."""
    return ndtri(np.clip(u, EPS, 1.0 - EPS))


@dataclass
class UnitSampleSource:
    """A stream of standard-normal point sets.

    Quasi-random kinds keep a cursor: consecutive draws return consecutive
    blocks of the scrambled sequence, so the output is a pure function of
    ``(seed, number of previous draws)``.
    """

    kind: str
    dim: int
    seed: int = 0
    lcd_set: Optional[object] = None
    _engine: Optional[qmc.QMCEngine] = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.kind = ALIASES.get(self.kind, self.kind)
        if self.kind not in KINDS:
            raise ContractError(f"unknown sampling kind {self.kind!r}")
        if self.dim < 1:
            raise ContractError("dimension must be positive")
        if self.kind == "lcd":
            if self.lcd_set is None:
                raise ContractError("lcd sources need an LcdSampleSet")
            if self.lcd_set.dim != self.dim:
                raise ContractError(
                    f"LCD set dimension {self.lcd_set.dim} != source dimension {self.dim}")
        elif self.kind == "sobol_scrambled":
            if self.dim > SOBOL_MAX_DIM:
                raise ContractError(f"Sobol supports at most {SOBOL_MAX_DIM} dimensions")
            self._engine = qmc.Sobol(self.dim, scramble=True, seed=self.seed)
        elif self.kind == "halton_scrambled":
            if self.dim > HALTON_MAX_DIM:
                raise ContractError(f"Halton is limited to {HALTON_MAX_DIM} dimensions here")
            self._engine = qmc.Halton(self.dim, scramble=True, seed=self.seed)

    def draw(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """Return an ``(n, dim)`` array of standard-normal points."""
        if self.kind == "random":
            return rng.standard_normal((n, self.dim))
        if self.kind == "lcd":
            if self.lcd_set.count != n:
                raise ContractError(
                    f"LCD set holds {self.lcd_set.count} points but {n} were requested; "
                    "generate a set of exactly this size")
            return self.lcd_set.points.copy()
        with warnings.catch_warnings():
            # non-power-of-two Sobol blocks are fine for our purposes
            warnings.simplefilter("ignore", UserWarning)
            u = self._engine.random(n)
        return gaussianize(u)


def draw_unit(source: UnitSampleSource, n: int, rng: np.random.Generator) -> np.ndarray:
    return source.draw(n, rng)


def random_rotation(dim: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed rotation in SO(dim)."""
    if dim < 1:
        raise ContractError("dimension must be positive")
    a = rng.standard_normal((dim, dim))
    q, r = np.linalg.qr(a)
    q *= np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def transform_samples(unit: np.ndarray, proposal: GaussianProposal,
                      rotation: Optional[np.ndarray] = None) -> np.ndarray:
    """Map unit points onto the proposal, rotating before scaling."""
    unit = np.atleast_2d(np.asarray(unit, dtype=float))
    if unit.shape[1] != proposal.dim:
        raise ContractError(f"unit points have dimension {unit.shape[1]}, proposal {proposal.dim}")
    scale = proposal.chol
    if rotation is not None:
        if rotation.shape != (proposal.dim, proposal.dim):
            raise ContractError("rotation shape does not match proposal dimension")
        scale = scale @ rotation
    return proposal.mean + unit @ scale.T
