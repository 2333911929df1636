"""
mvn_quad.py

Rectangle probabilities P(lower <= X <= upper) for X ~ N(0, corr).

Separation of variables after a pivoted, variable-reordering Cholesky
factorisation; the remaining (d-1)-dimensional integral is estimated with
independently scrambled Sobol point sets and antithetic pairs. The batch
spread gives the error estimate, and the point count doubles until the 99%
error bound reaches the target accuracy or the point cap is hit.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import ndtr, ndtri
from scipy.stats import qmc

from .errors import DomainError

log = logging.getLogger(__name__)

DEFAULT_ACCURACY = 1e-5
DEFAULT_REPLICATES = 5
MAX_POINTS = 10_000_000

N_BATCHES = 8
START_LOG2 = 10
Z_99 = 2.5758293035489004
SQRT_2PI = np.sqrt(2.0 * np.pi)
PSD_TOL = 1e-8
_TINY = 1e-15
# rounding slack for coordinates fixed by the earlier ones
_SLACK = 1e-10


@dataclass(frozen=True, eq=False)
class MvnProblem:
    lower: NDArray[np.float64]
    upper: NDArray[np.float64]
    corr: NDArray[np.float64]
    accuracy: float = DEFAULT_ACCURACY
    seed: int = 0
    replicates: int = DEFAULT_REPLICATES
    max_points: int = MAX_POINTS

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        corr = np.atleast_2d(np.asarray(self.corr, dtype=float))
        d = lo.size
        if hi.size != d or corr.shape != (d, d):
            raise DomainError(f"bounds of size {lo.size}/{hi.size} do not match matrix {corr.shape}")
        if np.any(np.isnan(lo)) or np.any(np.isnan(hi)) or np.any(lo >= hi):
            raise DomainError("need lower < upper in every coordinate")
        if not np.allclose(corr, corr.T, atol=1e-12):
            raise DomainError("correlation matrix is not symmetric")
        if not np.allclose(np.diag(corr), 1.0, atol=1e-12):
            raise DomainError("correlation matrix needs a unit diagonal")
        if d > 1 and np.linalg.eigvalsh(corr).min() < -PSD_TOL:
            raise DomainError("correlation matrix is not positive semidefinite")
        if self.accuracy <= 0:
            raise DomainError(f"accuracy must be positive, got {self.accuracy}")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "corr", corr)

    @property
    def dim(self) -> int:
        return int(self.lower.size)


class MvnResult(NamedTuple):
    probability: float
    error: float
    n_points: int
    precise: bool


def _swap(arr: NDArray[np.float64], a, b) -> None:
    held = np.copy(arr[a])
    arr[a] = np.copy(arr[b])
    arr[b] = held


def _next_pivot(factor, lo, hi, mean, k: int, tol: float):
    """Remaining coordinate with the least conditional mass: (index, scale, mass, a, b)."""
    best = (k, 0.0, 1.0, 0.0, 0.0)
    for i in range(k, factor.shape[0]):
        var = factor[i, i]
        if var <= tol:
            continue
        scale = np.sqrt(var)
        shift = factor[i, :k] @ mean[:k]
        a = (lo[i] - shift) / scale
        b = (hi[i] - shift) / scale
        mass = ndtr(b) - ndtr(a)
        if mass <= best[2]:
            best = (i, scale, mass, a, b)
    return best


def _truncated_mean(a: float, b: float, mass: float, tol: float) -> float:
    if abs(mass) > tol:
        return (np.exp(-a * a / 2) - np.exp(-b * b / 2)) / (SQRT_2PI * mass)
    if a < -10:
        return b
    if b > 10:
        return a
    return (a + b) / 2


def _pivoted_factor(corr, lower, upper, tol: float = 1e-10):
    """
    Lower-triangular factor of corr with variables reordered so the
    coordinate with the least expected mass comes next, bounds permuted and
    scaled alongside. Directions whose pivot falls under tol get a zero
    column, which turns that coordinate into an indicator on the earlier ones.

    Reordering and elimination are those of scipy.stats._qmvnt._permuted_cholesky.
    """
    factor = np.array(corr, dtype=np.float64)
    lo = np.array(lower, dtype=np.float64)
    hi = np.array(upper, dtype=np.float64)
    n = factor.shape[0]

    sd = np.sqrt(np.maximum(np.diag(factor), 0.0))
    sd[sd == 0.0] = 1.0
    lo /= sd
    hi /= sd
    factor /= np.outer(sd, sd)

    mean = np.zeros(n)
    for k in range(n):
        i, scale, mass, a, b = _next_pivot(factor, lo, hi, mean, k, tol)
        if i > k:
            factor[i, i] = factor[k, k]
            _swap(factor, np.s_[i, :k], np.s_[k, :k])
            _swap(factor, np.s_[i + 1:, i], np.s_[i + 1:, k])
            _swap(factor, np.s_[k + 1:i, k], np.s_[i, k + 1:i])
            _swap(lo, k, i)
            _swap(hi, k, i)
        if scale <= (k + 1) * tol:
            factor[k:, k] = 0.0
            mean[k] = (lo[k] + hi[k]) / 2
            continue
        factor[k, k] = scale
        factor[k, k + 1:] = 0.0
        for r in range(k + 1, n):
            factor[r, k] /= scale
            factor[r, k + 1:r + 1] -= factor[r, k] * factor[k + 1:r + 1, k]
        mean[k] = _truncated_mean(a, b, mass, tol)
        factor[k, :k + 1] /= scale
        lo[k] /= scale
        hi[k] /= scale
    return factor, lo, hi


def _integrand(factor, lo, hi, u: NDArray[np.float64]) -> NDArray[np.float64]:
    n = factor.shape[0]
    m = u.shape[0]
    diag = factor[0, 0]
    left = np.full(m, ndtr(lo[0] / diag))
    width = np.full(m, ndtr(hi[0] / diag)) - left
    prod = width.copy()
    z = np.zeros((n - 1, m))
    for i in range(1, n):
        z[i - 1] = ndtri(np.clip(left + u[:, i - 1] * width, _TINY, 1.0 - _TINY))
        shift = factor[i, :i] @ z[:i]
        diag = factor[i, i]
        if diag > 0:
            left = ndtr((lo[i] - shift) / diag)
            width = ndtr((hi[i] - shift) / diag) - left
        else:
            # degenerate coordinate: fully determined by the earlier ones
            left = np.zeros(m)
            width = ((shift >= lo[i] - _SLACK) & (shift <= hi[i] + _SLACK)).astype(float)
        prod = prod * width
    return prod


def mvn_rectangle(problem: MvnProblem, replicate: int = 0) -> MvnResult:
    """One randomized QMC estimate; deterministic in (problem.seed, replicate)."""
    if problem.dim == 1:
        p = float(ndtr(problem.upper[0]) - ndtr(problem.lower[0]))
        return MvnResult(p, 0.0, 0, True)

    factor, lo, hi = _pivoted_factor(problem.corr, problem.lower, problem.upper)
    rng = np.random.default_rng([problem.seed, replicate])
    dim = problem.dim - 1

    used = 0
    m = START_LOG2
    while True:
        batch = np.empty(N_BATCHES)
        for j in range(N_BATCHES):
            u = qmc.Sobol(dim, scramble=True, seed=rng).random_base2(m)
            batch[j] = 0.5 * (_integrand(factor, lo, hi, u).mean() + _integrand(factor, lo, hi, 1.0 - u).mean())
        used += N_BATCHES * 2 * (1 << m)
        prob = float(batch.mean())
        err = float(Z_99 * batch.std(ddof=1) / np.sqrt(N_BATCHES))
        if err <= problem.accuracy:
            return MvnResult(prob, err, used, True)
        if used + N_BATCHES * 2 * (2 << m) > problem.max_points:
            log.warning(
                "MVN accuracy %.1e not reached after %d points (error %.2e); returning best estimate",
                problem.accuracy, used, err,
            )
            return MvnResult(prob, err, used, False)
        m += 1


def median_of_replicates(problem: MvnProblem, r: int | None = None, threads: int = 1) -> float:
    """Median of r independent-seed estimates."""
    r = problem.replicates if r is None else r
    if r < 1 or r % 2 == 0:
        raise DomainError(f"replicate count must be odd and >= 1, got {r}")
    if problem.dim == 1 or r == 1:
        return mvn_rectangle(problem, 0).probability
    if threads > 1:
        with ThreadPoolExecutor(max_workers=min(threads, r)) as pool:
            results = list(pool.map(lambda i: mvn_rectangle(problem, i), range(r)))
    else:
        results = [mvn_rectangle(problem, i) for i in range(r)]
    return float(np.median([res.probability for res in results]))


def orthant_below(upper: ArrayLike, corr: ArrayLike, **settings) -> MvnProblem:
    """P(X <= upper) problem, the form used by boundary and power equations."""
    upper = np.atleast_1d(np.asarray(upper, dtype=float))
    return MvnProblem(np.full(upper.size, -np.inf), upper, corr, **settings)

