"""Diagnostic designs with closed-form population answers.

The linear-versus-quadratic design draws pseudo-true rules
``f(x) = a + b x + c x**2`` with standard normal coefficients and inputs
``X ~ U(-1, 1)``. Least squares projections are then explicit: the best
linear rule leaves ``c (x**2 - 1/3)``, whose mean square is ``4 c**2 / 45``,
and the best constant additionally leaves ``b x`` with mean square
``b**2 / 3``. This gives exact targets for the sampling theory of the
estimated-discrepancy regime and for the learning curve.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .engine import (DiscrepancySpec, ModelClass, discrepancy, estimated_from_losses,
                     gmm_criterion, learning_curve)
from .optimize import BoxDomain
from .parallel import parallel_map
from .rng import make_rng

QUAD_RESIDUAL_MS = 4.0 / 45.0
LINEAR_MS = 1.0 / 3.0


def _lstsq_solver(columns):
    def solver(target, spec):
        x = np.asarray(spec.points, dtype=float)
        A = columns(x)
        w = np.sqrt(spec.normalized_weights(len(x)))
        return np.linalg.lstsq(A * w[:, None], np.asarray(target) * w, rcond=None)[0]
    return solver


def linear_class() -> ModelClass:
    """``theta_0 + theta_1 x`` fitted by weighted least squares."""

    def columns(x):
        return np.column_stack([np.ones_like(x), x])

    return ModelClass("linear", BoxDomain([-1e3, -1e3], [1e3, 1e3]),
                      lambda theta, x: columns(np.asarray(x, dtype=float)) @ theta, _lstsq_solver(columns))


def constant_class() -> ModelClass:
    """Constant rules; the baseline nested in :func:`linear_class`."""

    def columns(x):
        return np.ones((len(x), 1))

    return ModelClass("constant", BoxDomain([-1e3], [1e3]),
                      lambda theta, x: np.full(len(np.asarray(x)), float(theta[0])), _lstsq_solver(columns))


@dataclass(frozen=True)
class QuadraticRule:
    """``a + b x + c x**2``."""

    a: float
    b: float
    c: float

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.a + self.b * x + self.c * x * x


def quadratic_draws(M: int, seed: int) -> list[QuadraticRule]:
    coef = make_rng(seed, 0).standard_normal((M, 3))
    return [QuadraticRule(*row) for row in coef]


def sample_inputs(rng: np.random.Generator, n: int) -> np.ndarray:
    return rng.uniform(-1.0, 1.0, size=n)


def population_discrepancies(draws) -> tuple[np.ndarray, np.ndarray]:
    """Exact linear-class and constant-baseline discrepancies under ``U(-1, 1)``."""
    b = np.array([f.b for f in draws])
    c = np.array([f.c for f in draws])
    d1 = QUAD_RESIDUAL_MS * c ** 2
    return d1, d1 + LINEAR_MS * b ** 2


def population_restrictiveness(draws) -> float:
    d1, d0 = population_discrepancies(draws)
    return float(d1.sum() / d0.sum())


def estimated_on_sample(draws, x: np.ndarray):
    """Estimated ratio and influence-function result on one input sample."""
    spec = DiscrepancySpec("squared_l2", x)
    lin, const = linear_class(), constant_class()
    l1, l0 = [], []
    for f in draws:
        g = f(x)
        t1 = lin.solver(g, spec)
        t0 = const.solver(g, spec)
        l1.append((lin.predict(t1, x) - g) ** 2)
        l0.append((const.predict(t0, x) - g) ** 2)
    return estimated_from_losses(np.array(l1), np.array(l0))


@dataclass
class CoverageResult:
    coverage: float
    r_population: float
    mean_r_hat: float
    mean_se: float
    sd_r_hat: float
    reps: int


def coverage_simulation(reps: int = 500, n: int = 500, M: int = 20, seed: int = 0,
                        workers: Optional[int] = None) -> CoverageResult:
    """Fraction of nominal 95% intervals covering the population ratio.

    The draws are held fixed and only the input sample is redrawn.
    """
    draws = quadratic_draws(M, seed)
    r_pop = population_restrictiveness(draws)

    def job(rep):
        x = sample_inputs(make_rng(seed, 1, rep), n)
        res, _ = estimated_on_sample(draws, x)
        lo, hi = res.ci
        return res.r_hat, res.se, lo <= r_pop <= hi

    out = parallel_map(job, range(reps), workers)
    r = np.array([o[0] for o in out])
    return CoverageResult(float(np.mean([o[2] for o in out])), r_pop, float(r.mean()),
                          float(np.mean([o[1] for o in out])), float(r.std(ddof=1)), reps)


def learning_curve_limit(n_grid=(32, 128, 512, 2048), M: int = 20, reps: int = 5, seed: int = 0):
    """Learning curve of the linear class against its population limit.

    Returns
    -------
    curve : list of (n, L_n, se)
    limit : float
        Mean population discrepancy of the linear class over the draws.
    """
    draws = quadratic_draws(M, seed)
    quad = np.linspace(-1.0, 1.0, 4001)
    w = np.full(quad.size, 1.0)
    w[[0, -1]] = 0.5
    spec = DiscrepancySpec("squared_l2", quad, w)
    lin = linear_class()

    def fitter(x, y):
        return lin.solver(y, DiscrepancySpec("squared_l2", x))

    curve = learning_curve(lin, draws, n_grid, spec, sample_inputs, fitter, reps, seed)
    return curve, float(population_discrepancies(draws)[0].mean())


def rad_vc_identity(n: int = 200, seed: int = 0) -> tuple[float, float]:
    """Correlation and mismatch discrepancies between two random sign rules."""
    rng = make_rng(seed, 0)
    f = rng.choice([-1.0, 1.0], size=n)
    g = rng.choice([-1.0, 1.0], size=n)
    pts = np.arange(n)
    rad = discrepancy(DiscrepancySpec("rad_correlation", pts), f, g)
    vc = discrepancy(DiscrepancySpec("vc_mismatch", pts), f, g)
    return rad, vc


@dataclass
class GmmDegeneracy:
    thetas: np.ndarray
    sample_q: np.ndarray
    population_q: np.ndarray
    prediction_d: np.ndarray
    n: int


def gmm_irrelevant_instruments(n: int = 2000, theta0: float = 1.0, seed: int = 0,
                               thetas=np.linspace(-2.0, 4.0, 13)) -> GmmDegeneracy:
    """GMM criterion with an instrument independent of the regressor.

    ``Y = theta0 X + e`` with ``X, Z, e`` independent standard normal. The
    population moment ``E[Z (Y - theta X)] = E[Z] E[Y - theta X]`` vanishes
    for every ``theta``, while the prediction discrepancy
    ``(theta - theta0)**2 E[X**2]`` does not.
    """
    rng = make_rng(seed, 0)
    X, Z, e = rng.standard_normal((3, n))
    Y = theta0 * X + e
    W = np.eye(1)
    q = np.array([gmm_criterion([t], Y, X, Z, W) for t in thetas])
    pop = np.zeros_like(q)  # E[Z] = 0 and Z is independent of (X, e)
    d = (np.asarray(thetas) - theta0) ** 2
    return GmmDegeneracy(np.asarray(thetas, dtype=float), q, pop, d, n)


@dataclass
class Check:
    name: str
    value: float
    target: float
    passed: bool


def run_checks(seed: int = 0, coverage_reps: int = 200, workers: Optional[int] = None) -> list[Check]:
    """The diagnostic suite reported by the ``diagnostics`` subcommand."""
    checks = []
    rad, vc = rad_vc_identity(seed=seed)
    checks.append(Check("rad_equals_twice_vc", rad - 2.0 * vc, 0.0, rad == 2.0 * vc))
    g = gmm_irrelevant_instruments(seed=seed)
    nq = float(g.n * g.sample_q.max())
    moving = g.prediction_d[g.thetas != 1.0]
    checks.append(Check("gmm_population_q_zero", float(np.abs(g.population_q).max()), 0.0,
                        bool(np.all(g.population_q == 0.0) and moving.min() > 0)))
    checks.append(Check("gmm_sample_q_times_n", nq, 50.0, nq < 50.0))
    curve, limit = learning_curve_limit(seed=seed)
    rel = abs(curve[-1][1] / limit - 1.0)
    checks.append(Check("learning_curve_limit_rel_error", rel, 0.05, rel < 0.05))
    cov = coverage_simulation(coverage_reps, seed=seed, workers=workers)
    checks.append(Check("ci_coverage", cov.coverage, 0.95, 0.90 <= cov.coverage <= 0.98))
    return checks
