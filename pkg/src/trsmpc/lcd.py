"""Deterministic Dirac-mixture approximations of the standard normal.

Point sets are optimized offline by minimizing a smooth discrepancy between
the equally weighted point set and ``N(0, I)``:

* a multi-scale Gaussian-kernel maximum mean discrepancy, whose expectations
  against the standard normal are available in closed form, and
* a penalty on the deviation of the sample mean and covariance from ``0``
  and ``I`` (or, for sets too small to have full rank, from the closest
  reachable covariance, see :func:`covariance_target`).

The kernel widths scale with the dimension so that every scale sees
non-negligible interactions between points.

File format (plain text)::

    LCD v1
    <dim> <count>
    # optional comment lines, metadata as key=value pairs
    <count> rows of <dim> floats with 17 significant digits
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

from .core import ContractError

#: Kernel variances as multiples of the dimension.
WIDTHS = (0.0625, 0.125, 0.25, 0.5, 1.0, 2.0)
MOMENT_WEIGHT = 10.0
N_STARTS = 5

#: ``(count, dim)`` pairs shipped with the package.
SHIPPED = tuple((n, d) for d in (40, 50) for n in (20, 40, 100, 300))


class LcdFormatError(ValueError):
    """Malformed LCD sample file."""


@dataclass
class LcdSampleSet:
    points: np.ndarray
    objective: float = float("nan")
    iterations: int = 0
    seed: int = 0
    quality_ok: bool = True
    history: list = field(default_factory=list, repr=False)

    @property
    def count(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


def moment_errors(points: np.ndarray) -> tuple[float, float]:
    """Euclidean norm of the sample mean and max-abs deviation of the covariance from I.

    The covariance uses the ``1/N`` convention.
    """
    m = points.mean(axis=0)
    c = points - m
    cov = c.T @ c / len(points)
    return float(np.linalg.norm(m)), float(np.max(np.abs(cov - np.eye(points.shape[1]))))


def check_quality(points: np.ndarray) -> bool:
    """Mean norm within ``0.02 sqrt(d)``; covariance entries within 0.05 of I once ``N >= d + 2``.

    Smaller sets have a rank-deficient sample covariance, so the entrywise
    test is only applied to sets large enough to have full rank.
    """
    n, d = points.shape
    if not np.all(np.isfinite(points)):
        return False
    mean_err, cov_err = moment_errors(points)
    return mean_err <= 0.02 * math.sqrt(d) and (n < d + 2 or cov_err <= 0.05)


def covariance_target(n: int, d: int) -> np.ndarray:
    """Closest reachable covariance for ``n`` centred points in ``d`` dimensions.

    With ``n > d`` this is ``I``. Otherwise the ``k = d - n + 1`` missing
    directions are taken from the real Fourier basis (constant, then cosine
    and sine pairs of increasing frequency). The removed projection is then
    close to circulant, so every diagonal entry loses about ``k / d``, the
    smallest possible worst case.
    """
    k = d - n + 1
    if k <= 0:
        return np.eye(d)
    i = np.arange(d)
    rows = [np.full(d, 1.0 / math.sqrt(d))]
    freq = 1
    while len(rows) < k:
        phase = 2.0 * np.pi * freq * i / d
        for wave in (np.cos(phase), np.sin(phase)):
            if len(rows) < k and np.linalg.norm(wave) > 1e-8:
                rows.append(wave / np.linalg.norm(wave))
        freq += 1
    basis = np.array(rows)
    return np.eye(d) - basis.T @ basis


def nn_distance_cv(points: np.ndarray) -> float:
    """Coefficient of variation of nearest-neighbour distances (lower = more homogeneous)."""
    sq = np.sum(points ** 2, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * points @ points.T
    np.fill_diagonal(d2, np.inf)
    nn = np.sqrt(np.maximum(d2.min(axis=1), 0.0))
    return float(nn.std() / nn.mean())


def standardize_moments(points: np.ndarray) -> np.ndarray:
    """Affinely correct a set to exactly zero mean and identity covariance (``N > dim``)."""
    n, d = points.shape
    if n <= d:
        raise ContractError("exact moments need more points than dimensions")
    c = points - points.mean(axis=0)
    cov = c.T @ c / n
    w, v = np.linalg.eigh(cov)
    return c @ (v / np.sqrt(w)) @ v.T


def discrepancy(x: np.ndarray, widths=WIDTHS, moment_weight=MOMENT_WEIGHT, target=None):
    """Objective value and gradient for an ``(N, d)`` point set.

    ``target`` is the covariance the moment penalty aims for (default ``I``).
    """
    n, d = x.shape
    sq = np.sum(x * x, axis=1)
    d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * x @ x.T, 0.0)
    f = 0.0
    g = np.zeros_like(x)
    for s in widths:
        b2 = s * d
        # normalise each scale by E[k] for two independent standard normals
        log_norm = 0.5 * d * math.log(b2 / (b2 + 2.0))
        k = np.exp(-d2 / (2.0 * b2) - log_norm)
        cross = np.exp(0.5 * d * math.log(b2 / (b2 + 1.0)) - log_norm - sq / (2.0 * (b2 + 1.0)))
        f += k.sum() / n ** 2 - 2.0 * cross.sum() / n + 1.0
        ksum = k.sum(axis=1)
        g += (-2.0 / (n ** 2 * b2)) * (ksum[:, None] * x - k @ x)
        g += (2.0 / (n * (b2 + 1.0))) * cross[:, None] * x
    m = x.mean(axis=0)
    f += moment_weight * (m @ m)
    g += moment_weight * 2.0 * m / n
    c = x - m
    e = c.T @ c / n - (np.eye(d) if target is None else target)
    f += moment_weight * np.sum(e * e)
    g += moment_weight * 4.0 / n * c @ e
    return f, g


def optimize_lcd_set(n: int, dim: int, budget: int = 500, seed: int = 0,
                     n_starts: int = N_STARTS) -> LcdSampleSet:
    """Optimize an ``n``-point set in ``dim`` dimensions; best of ``n_starts`` L-BFGS runs.

    The result is deterministic in ``(n, dim, budget, seed)``. If the moment
    invariants are not met the set is still returned with ``quality_ok`` false.
    """
    if n < 2:
        raise ContractError("need at least two points")
    if budget < 1:
        raise ContractError("budget must be >= 1")
    rng = np.random.default_rng(seed)
    target = covariance_target(n, dim)
    best = None
    for _ in range(n_starts):
        x0 = rng.standard_normal((n, dim))
        history = []

        def fun(flat):
            f, g = discrepancy(flat.reshape(n, dim), target=target)
            return f, g.ravel()

        def record(xk):
            history.append(fun(xk)[0])

        res = minimize(fun, x0.ravel(), jac=True, method="L-BFGS-B", callback=record,
                       options={"maxiter": budget, "maxcor": 20, "ftol": 1e-15, "gtol": 1e-10})
        if best is None or res.fun < best[0].fun:
            best = (res, history)
    res, history = best
    points = res.x.reshape(n, dim)
    return LcdSampleSet(points=points, objective=float(res.fun), iterations=int(res.nit),
                        seed=seed, quality_ok=check_quality(points), history=history)


def save_sample_set(sample_set: LcdSampleSet, path) -> None:
    pts = sample_set.points
    if not np.all(np.isfinite(pts)):
        raise ContractError("refusing to save non-finite points")
    lines = ["LCD v1", f"{sample_set.dim} {sample_set.count}",
             f"# objective={sample_set.objective!r} iterations={sample_set.iterations} "
             f"seed={sample_set.seed} quality_ok={int(sample_set.quality_ok)}"]
    lines += [" ".join(f"{v:.17g}" for v in row) for row in pts]
    Path(path).write_text("\n".join(lines) + "\n")


def _parse_meta(comment: str, meta: dict) -> None:
    for token in comment.lstrip("#").split():
        if "=" in token:
            key, value = token.split("=", 1)
            meta[key] = value


def load_sample_set(path) -> LcdSampleSet:
    path = Path(path)
    text = path.read_text().splitlines()
    if not text or text[0].strip() != "LCD v1":
        raise LcdFormatError(f"{path}:1: expected 'LCD v1' header")
    if len(text) < 2:
        raise LcdFormatError(f"{path}:2: missing '<dim> <count>' line")
    try:
        dim, count = (int(t) for t in text[1].split())
    except ValueError:
        raise LcdFormatError(f"{path}:2: expected two integers '<dim> <count>', got {text[1]!r}")
    if dim < 1 or count < 1:
        raise LcdFormatError(f"{path}:2: dim and count must be positive")
    meta, rows = {}, []
    for lineno, line in enumerate(text[2:], start=3):
        stripped = line.strip()
        if not stripped:
            continue
        if stripped.startswith("#"):
            _parse_meta(stripped, meta)
            continue
        try:
            row = [float(t) for t in stripped.split()]
        except ValueError:
            raise LcdFormatError(f"{path}:{lineno}: could not parse floats")
        if len(row) != dim:
            raise LcdFormatError(f"{path}:{lineno}: expected {dim} values, found {len(row)}")
        if not all(math.isfinite(v) for v in row):
            raise LcdFormatError(f"{path}:{lineno}: non-finite value")
        rows.append(row)
    if len(rows) != count:
        raise LcdFormatError(f"{path}: header declares {count} rows but {len(rows)} were found "
                             "(shape mismatch)")
    return LcdSampleSet(points=np.array(rows, dtype=float),
                        objective=float(meta.get("objective", "nan")),
                        iterations=int(meta.get("iterations", 0)),
                        seed=int(meta.get("seed", 0)),
                        quality_ok=bool(int(meta.get("quality_ok", 1))))


def shipped_filename(n: int, dim: int) -> str:
    return f"lcd_n{n}_d{dim}.txt"


def load_shipped(n: int, dim: int) -> LcdSampleSet:
    """Load a set bundled with the package; no nearest-size fallback."""
    ref = resources.files("trsmpc") / "data" / shipped_filename(n, dim)
    if not ref.is_file():
        raise FileNotFoundError(
            f"no shipped LCD set for N={n}, dim={dim}; create one with "
            f"`trsmpc lcd-gen --n {n} --dim {dim} --out <path>`")
    with resources.as_file(ref) as p:
        return load_sample_set(p)
