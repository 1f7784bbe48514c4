"""Multi-start Nelder-Mead over a box.

Each coordinate is optimized in an unconstrained internal variable:
``logit`` maps the real line onto a finite interval, ``log`` onto a
half-line ``[lower, inf)`` (capped at a finite upper bound if present) and
``linear`` is the identity followed by clipping to the box.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import minimize as _scipy_minimize
from scipy.special import expit, logit
from scipy.stats import qmc

from .exceptions import OptimizationError
from .rng import STREAM_STARTS, int_seed

TRANSFORMS = ("linear", "log", "logit")
_EDGE = 1e-12
# half-width of the start box used along unbounded directions
_UNBOUNDED_START = 3.0


@dataclass(frozen=True)
class BoxDomain:
    """Rectangular parameter domain with per-coordinate transforms.

    Parameters
    ----------
    lower, upper : array_like
        Bounds; infinite values are allowed.
    transforms : sequence of {'linear', 'log', 'logit'}, optional
        Defaults to ``logit`` for finite intervals, ``log`` for half-lines
        bounded below and ``linear`` otherwise.
    names : sequence of str, optional
    start_lower, start_upper : array_like, optional
        Box from which Latin-hypercube starts are drawn. Defaults to the
        domain, with infinite sides replaced by a finite window.
    """

    lower: np.ndarray
    upper: np.ndarray
    transforms: Optional[tuple] = None
    names: Optional[tuple] = None
    start_lower: Optional[np.ndarray] = None
    start_upper: Optional[np.ndarray] = None

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape:
            raise ValueError("lower and upper must have the same length")
        if np.any(lo > hi):
            raise ValueError("lower must not exceed upper")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if self.transforms is None:
            tr = tuple("logit" if np.isfinite(a) and np.isfinite(b)
                       else "log" if np.isfinite(a) else "linear" for a, b in zip(lo, hi))
        else:
            tr = tuple(self.transforms)
        if len(tr) != lo.size or any(t not in TRANSFORMS for t in tr):
            raise ValueError(f"transforms must be one of {TRANSFORMS} per coordinate")
        for t, a, b in zip(tr, lo, hi):
            if t == "logit" and not (np.isfinite(a) and np.isfinite(b)):
                raise ValueError("logit transform needs finite bounds")
            if t == "log" and not np.isfinite(a):
                raise ValueError("log transform needs a finite lower bound")
        object.__setattr__(self, "transforms", tr)
        if self.names is not None:
            object.__setattr__(self, "names", tuple(self.names))
        slo = lo if self.start_lower is None else np.asarray(self.start_lower, dtype=float)
        shi = hi if self.start_upper is None else np.asarray(self.start_upper, dtype=float)
        slo = np.where(np.isfinite(slo), slo, np.where(np.isfinite(shi), shi - 2 * _UNBOUNDED_START,
                                                       -_UNBOUNDED_START))
        shi = np.where(np.isfinite(shi), shi, slo + 2 * _UNBOUNDED_START)
        object.__setattr__(self, "start_lower", slo)
        object.__setattr__(self, "start_upper", shi)

    @property
    def dim(self) -> int:
        return self.lower.size

    def clip(self, x) -> np.ndarray:
        return np.clip(np.asarray(x, dtype=float), self.lower, self.upper)

    def to_external(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        x = np.empty_like(u)
        for k, t in enumerate(self.transforms):
            lo, hi = self.lower[k], self.upper[k]
            if t == "logit":
                x[k] = lo + (hi - lo) * expit(u[k])
            elif t == "log":
                x[k] = lo + np.exp(min(u[k], 700.0))
            else:
                x[k] = u[k]
        return self.clip(x)

    def to_internal(self, x) -> np.ndarray:
        x = self.clip(x)
        u = np.empty_like(x)
        for k, t in enumerate(self.transforms):
            lo, hi = self.lower[k], self.upper[k]
            if t == "logit":
                frac = (x[k] - lo) / (hi - lo) if hi > lo else 0.5
                u[k] = logit(np.clip(frac, _EDGE, 1 - _EDGE))
            elif t == "log":
                u[k] = np.log(max(x[k] - lo, _EDGE * max(1.0, abs(lo))))
            else:
                u[k] = x[k]
        return u


@dataclass
class OptimResult:
    """Outcome of :func:`minimize`.

    ``start_index`` counts the extra starts first, then the Latin-hypercube
    starts.
    """

    argmin: np.ndarray
    value: float
    n_evals: int
    converged: bool
    start_index: int


def latin_hypercube_starts(domain: BoxDomain, n: int, seed: int) -> np.ndarray:
    if n <= 0:
        return np.empty((0, domain.dim))
    sampler = qmc.LatinHypercube(d=domain.dim, seed=int_seed(seed, STREAM_STARTS))
    return qmc.scale(sampler.random(n), domain.start_lower, domain.start_upper) \
        if np.all(domain.start_upper > domain.start_lower) else \
        domain.start_lower + sampler.random(n) * (domain.start_upper - domain.start_lower)


def minimize(objective: Callable[[np.ndarray], float], domain: BoxDomain, n_starts: int = 8,
             tol: float = 1e-8, seed: int = 0, max_evals: int = 2000,
             extra_starts: Optional[Sequence] = None) -> OptimResult:
    """Minimize ``objective`` over ``domain`` by multi-start Nelder-Mead.

    Parameters
    ----------
    objective : callable
        Maps an external parameter vector to a float; ``inf`` or ``nan`` act
        as a penalty.
    domain : BoxDomain
    n_starts : int
        Number of Latin-hypercube starts.
    tol : float
        Simplex-size and value-change tolerance (internal coordinates).
    seed : int
        Seed for the start design.
    max_evals : int
        Evaluation budget per start.
    extra_starts : sequence of array_like, optional
        Additional starts tried before the Latin-hypercube ones, typically
        solutions of nested submodels.

    Returns
    -------
    OptimResult
        The best point found. Every start point is itself a candidate, so the
        returned value never exceeds the objective at any start.
    """
    if domain.dim == 0:
        value = _safe(objective, np.empty(0))
        if not np.isfinite(value):
            raise OptimizationError("objective is not finite at the only point")
        return OptimResult(np.empty(0), value, 1, True, 0)
    starts = [domain.clip(s) for s in (extra_starts or [])]
    starts.extend(latin_hypercube_starts(domain, n_starts, seed))
    if not starts:
        raise ValueError("need at least one start")

    def internal(u):
        return _safe(objective, domain.to_external(u))

    best: Optional[OptimResult] = None
    total_evals = 0
    for index, x0 in enumerate(starts):
        candidates = [(x0, _safe(objective, x0), True)]
        with np.errstate(invalid="ignore"):  # inf - inf in the simplex spread test
            res = _scipy_minimize(internal, domain.to_internal(x0), method="Nelder-Mead",
                                  options={"xatol": tol, "fatol": tol, "maxfev": max_evals,
                                           "adaptive": domain.dim > 3})
        total_evals += int(res.nfev) + 1
        x_end = domain.to_external(res.x)
        candidates.append((x_end, _safe(objective, x_end), bool(res.success)))
        for x, value, ok in candidates:
            if np.isfinite(value) and (best is None or value < best.value):
                best = OptimResult(x.copy(), float(value), 0, ok, index)
    if best is None:
        raise OptimizationError("no start produced a finite objective value")
    best.n_evals = total_evals
    return best


def _safe(objective, x) -> float:
    try:
        value = float(objective(x))
    except (FloatingPointError, ZeroDivisionError, OverflowError):
        return np.inf
    return value if np.isfinite(value) else np.inf
