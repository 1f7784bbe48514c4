"""Linear demand and supply, and the two-firm entry game.

Demand and supply
-----------------
``Y = (Q, P)`` solves ``Y = B Y + alpha + Gamma X + e`` with
``B = [[0, beta_1], [beta_2, 0]]`` and ``Gamma = diag(gamma_1, gamma_2)``.
Three discrepancies are provided:

* reduced form: distance of a rule ``x -> R^2`` to the conditional means
  ``(I - B)^{-1}(alpha + Gamma x)``;
* demand only: the demand equation identified by the exclusion of the supply
  shifter, where only the conditional mean ``E[f(P, x) | x]`` of a rule
  ``f(P, x)`` is restricted;
* structural form: the demand equation as a counterfactual map of price and
  demand shifter, fitted under the joint design measure of ``(P, X)``.

All expectations are exact sums over discrete designs.

Entry game
----------
Firm ``k`` enters when ``alpha_k + beta_k y_other + gamma_k x_k >= e_k``.
With ``beta <= 0`` both ``(1, 0)`` and ``(0, 1)`` are equilibria on a
rectangle of shocks, and a selection probability ``q(x)`` allocates that
rectangle. The discrepancy to a target choice-probability rule minimizes
over ``q`` in closed form at every ``x``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy import stats
from scipy.special import expit, logit

from .engine import (DiscrepancySpec, ModelClass, OptimSettings, RestrictivenessResult,
                     known_from_values, restrictiveness_known)
from .exceptions import DegenerateError, DomainError
from .kernels import GaussianProcessSampler, KernelSpec
from .optimize import BoxDomain, minimize
from .parallel import parallel_map
from .rng import STREAM_LATENT, int_seed, make_rng

ERROR_MODELS = ("independent_logistic", "independent_normal")
SINGULAR_TOL = 1e-12
DEFAULT_STRUCTURAL_KERNEL = KernelSpec("matern32", 1.0, 1.0)


def grid_design(size: int = 5, low: float = -1.0, high: float = 1.0) -> np.ndarray:
    """Points of a ``size x size`` grid on ``[low, high]^2``, first coordinate slowest."""
    axis = np.linspace(low, high, size)
    a, b = np.meshgrid(axis, axis, indexing="ij")
    return np.column_stack([a.ravel(), b.ravel()])


def _gp_values(points, M: int, seed: int, kernel: KernelSpec, outputs: int, stream: int = STREAM_LATENT):
    """``M`` draws of ``outputs`` independent GP paths, shape ``(M, n, outputs)``."""
    sampler = GaussianProcessSampler(kernel, points)
    out = np.empty((M, sampler.points.shape[0], outputs))
    for m in range(M):
        rng = make_rng(seed, stream, m)
        for k in range(outputs):
            out[m, :, k] = sampler.draw_values(rng)
    return out


# ---------------------------------------------------------------------------
# demand and supply


@dataclass(frozen=True)
class SimEqParams:
    """Coefficients of the two-equation system.

    ``alpha`` and ``gamma`` hold one entry per equation, ``beta`` the two
    off-diagonal entries of ``B``.
    """

    alpha: tuple
    beta: tuple
    gamma: tuple

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            v = tuple(float(a) for a in getattr(self, name))
            if len(v) != 2:
                raise ValueError(f"{name} must have two entries")
            object.__setattr__(self, name, v)

    @classmethod
    def from_vector(cls, theta) -> "SimEqParams":
        t = np.asarray(theta, dtype=float)
        return cls(tuple(t[0:2]), tuple(t[2:4]), tuple(t[4:6]))

    def vector(self) -> np.ndarray:
        return np.array(self.alpha + self.beta + self.gamma)

    @property
    def B(self) -> np.ndarray:
        return np.array([[0.0, self.beta[0]], [self.beta[1], 0.0]])

    @property
    def Gamma(self) -> np.ndarray:
        return np.diag(self.gamma)


def ds_reduced_form(params: SimEqParams, x) -> np.ndarray:
    """Conditional means ``(I - B)^{-1}(alpha + Gamma x)``.

    ``x`` may be a single point of length 2 or an array of shape ``(n, 2)``;
    the output has the same shape.
    """
    det = 1.0 - params.beta[0] * params.beta[1]
    if abs(det) < SINGULAR_TOL:
        raise DomainError("beta_1 * beta_2 = 1 makes the system singular")
    x = np.asarray(x, dtype=float)
    rhs = np.asarray(params.alpha) + x @ params.Gamma.T
    inv = np.array([[1.0, params.beta[0]], [params.beta[1], 1.0]]) / det
    return rhs @ inv.T


def structural_residual(params: SimEqParams, y, x) -> np.ndarray:
    """``B y + alpha + Gamma x - y``; zero at the conditional means."""
    y = np.asarray(y, dtype=float)
    x = np.asarray(x, dtype=float)
    return y @ params.B.T + np.asarray(params.alpha) + x @ params.Gamma.T - y


def reduced_form_coefficients_to_params(intercepts, Pi) -> SimEqParams:
    """Structural coefficients whose reduced form is ``intercepts + Pi x``.

    Requires ``Pi`` nonsingular with nonzero diagonal.
    """
    Pi = np.asarray(Pi, dtype=float)
    if abs(Pi[0, 0]) < SINGULAR_TOL or abs(Pi[1, 1]) < SINGULAR_TOL:
        raise DomainError("reduced form with a zero diagonal coefficient")
    b1 = Pi[0, 1] / Pi[1, 1]
    b2 = Pi[1, 0] / Pi[0, 0]
    det = 1.0 - b1 * b2
    if abs(det) < SINGULAR_TOL:
        raise DomainError("reduced-form coefficient matrix is singular")
    alpha = np.array([[1.0, -b1], [-b2, 1.0]]) @ np.asarray(intercepts, dtype=float)
    return SimEqParams(tuple(alpha), (b1, b2), (Pi[0, 0] * det, Pi[1, 1] * det))


def _weighted_lstsq(A, y, w):
    sw = np.sqrt(np.asarray(w, dtype=float))
    coef, *_ = np.linalg.lstsq(A * sw[:, None], y * (sw[:, None] if y.ndim > 1 else sw), rcond=None)
    return coef


def reduced_form_model() -> ModelClass:
    """Conditional-mean class of the system, solved exactly by least squares.

    Away from a measure-zero set every affine map ``x -> R^2`` is the
    reduced form of some structural parameter, so the best fit is the
    weighted least-squares projection on ``(1, x_1, x_2)`` per output.
    """
    names = ("alpha_1", "alpha_2", "beta_1", "beta_2", "gamma_1", "gamma_2")
    domain = BoxDomain([-np.inf] * 6, [np.inf] * 6, ("linear",) * 6, names)

    def predict(theta, x):
        return ds_reduced_form(SimEqParams.from_vector(theta), x)

    def solver(target, spec):
        x = np.asarray(spec.points, dtype=float)
        A = np.column_stack([np.ones(len(x)), x])
        coef = _weighted_lstsq(A, np.asarray(target, dtype=float), spec.normalized_weights(len(x)))
        Pi = coef[1:].T
        # nudge a vanishing diagonal; the fit changes by O(1e-12)
        Pi = Pi + np.diag(np.where(np.abs(np.diag(Pi)) < 1e-10, 1e-10, 0.0))
        return reduced_form_coefficients_to_params(coef[0], Pi).vector()

    return ModelClass("reduced form", domain, predict, solver)


def constant_model(outputs: int) -> ModelClass:
    """Constant rules, solved by the weighted mean."""
    domain = BoxDomain([-np.inf] * outputs, [np.inf] * outputs, ("linear",) * outputs)

    def predict(theta, x):
        n = len(x) if not hasattr(x, "num_obs") else x.num_obs
        out = np.tile(np.asarray(theta, dtype=float), (n, 1))
        return out if outputs > 1 else out[:, 0]

    def solver(target, spec):
        t = np.asarray(target, dtype=float).reshape(len(target), -1)
        return spec.normalized_weights(len(t)) @ t

    return ModelClass("constant", domain, predict, solver)


def reduced_form_draws(points, M: int, seed: int = 0,
                       kernel: KernelSpec = DEFAULT_STRUCTURAL_KERNEL) -> np.ndarray:
    """Pseudo-true ``R^2``-valued rules: two independent GP paths per draw."""
    return _gp_values(points, M, seed, kernel, 2)


def ds_rf_restrictiveness(draws, points=None, M: Optional[int] = None, seed: int = 0,
                          workers: Optional[int] = None) -> RestrictivenessResult:
    """Reduced-form restrictiveness on a uniform discrete design.

    ``draws`` is an array ``(M, n, 2)`` of rule values at ``points`` (by
    default the 5 x 5 grid on ``[-1, 1]^2``).
    """
    points = grid_design() if points is None else np.asarray(points, dtype=float)
    draws = np.asarray(draws, dtype=float)
    if M is not None:
        draws = draws[:M]
    spec = DiscrepancySpec("squared_l2", points)
    _check_variation(draws)
    return restrictiveness_known(reduced_form_model(), constant_model(2), list(draws), spec,
                                 seed=seed, workers=workers)


def _check_variation(draws):
    d = np.asarray(draws, dtype=float)
    spread = d.reshape(d.shape[0], d.shape[1], -1).var(axis=1).sum(axis=-1)
    if not spread.mean() > 0:
        raise DegenerateError("pseudo-true rules are constant, so the baseline discrepancy is zero")


@dataclass(frozen=True)
class DemandDesign:
    """Discrete joint design of price and the shifters.

    ``x`` holds the shifter support ``(n, 2)`` with weights ``px``; at each
    ``x_i`` price takes the values ``prices[i, k]`` with conditional
    probabilities ``pk[i, k]``.
    """

    x: np.ndarray
    px: np.ndarray
    prices: np.ndarray
    pk: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float)
        px = np.asarray(self.px, dtype=float)
        prices = np.asarray(self.prices, dtype=float)
        pk = np.asarray(self.pk, dtype=float)
        if x.ndim != 2 or prices.shape[0] != x.shape[0] or pk.shape != prices.shape or px.shape != (x.shape[0],):
            raise ValueError("design arrays are not conformable")
        if np.any(px < 0) or np.any(pk < 0):
            raise ValueError("design probabilities must be nonnegative")
        if abs(px.sum() - 1) > 1e-12 or np.any(np.abs(pk.sum(axis=1) - 1) > 1e-12):
            raise ValueError("design probabilities must sum to one")
        for name, v in (("x", x), ("px", px), ("prices", prices), ("pk", pk)):
            object.__setattr__(self, name, v)

    @classmethod
    def linear(cls, x=None, pi=(0.0, 0.5, 1.0), offsets=(-0.5, 0.0, 0.5), probs=None) -> "DemandDesign":
        """Price ``pi_0 + pi_1 x_1 + pi_2 x_2 + c`` with ``c`` drawn from ``offsets``."""
        x = grid_design() if x is None else np.asarray(x, dtype=float)
        offsets = np.asarray(offsets, dtype=float)
        probs = np.full(offsets.size, 1.0 / offsets.size) if probs is None else np.asarray(probs, dtype=float)
        base = pi[0] + x @ np.asarray(pi[1:], dtype=float)
        return cls(x, np.full(len(x), 1.0 / len(x)), base[:, None] + offsets[None, :],
                   np.tile(probs, (len(x), 1)))

    @property
    def joint_points(self) -> np.ndarray:
        """Support of ``(P, X_1, X_2)``, shape ``(n * K, 3)``, price fastest."""
        n, K = self.prices.shape
        return np.column_stack([self.prices.ravel(), np.repeat(self.x, K, axis=0)])

    @property
    def joint_weights(self) -> np.ndarray:
        return (self.px[:, None] * self.pk).ravel()

    @property
    def mean_price(self) -> np.ndarray:
        return (self.prices * self.pk).sum(axis=1)

    def conditional_mean(self, values) -> np.ndarray:
        """``E[f(P, x) | x]`` from values at :attr:`joint_points`."""
        return (np.asarray(values, dtype=float).reshape(self.prices.shape) * self.pk).sum(axis=1)


def demand_draws(design: DemandDesign, M: int, seed: int = 0,
                 kernel: KernelSpec = DEFAULT_STRUCTURAL_KERNEL) -> np.ndarray:
    """Pseudo-true demand functions of ``(P, X_1)`` at the joint support, ``(M, n * K)``."""
    pts = design.joint_points[:, :2]
    uniq, inverse = np.unique(pts, axis=0, return_inverse=True)
    vals = _gp_values(uniq, M, seed, kernel, 1)[..., 0]
    return vals[:, inverse.ravel()]


def _weighted_projection_residual(A, y, w) -> float:
    """Weighted mean squared residual of the least-squares fit of ``y`` on ``A``."""
    coef = _weighted_lstsq(A, y, w)
    r = y - A @ coef
    return float(np.dot(w, r * r))


def _weighted_var(y, w) -> float:
    m = np.dot(w, y)
    return float(np.dot(w, (y - m) ** 2))


def demand_only_discrepancy(values, design: DemandDesign) -> tuple[float, float]:
    """Model and baseline discrepancies of one rule for the demand-only model.

    The model ``alpha + beta P + gamma x_1`` with errors mean independent of
    ``x`` restricts only ``E[f(P, x) | x]``; its best fit is the projection
    of that conditional mean on ``(1, E[P | x], x_1)`` under the design of
    ``x``. The baseline discrepancy is the variance of the conditional mean.
    """
    gbar = design.conditional_mean(values)
    A = np.column_stack([np.ones(len(design.x)), design.mean_price, design.x[:, 0]])
    return _weighted_projection_residual(A, gbar, design.px), _weighted_var(gbar, design.px)


def structural_form_discrepancy(values, design: DemandDesign) -> tuple[float, float]:
    """Model and baseline discrepancies of one rule for the structural form.

    The best fit is the projection of ``f(P, X_1)`` on ``(1, P, X_1)`` under
    the joint design measure; the baseline discrepancy is ``Var f(P, X_1)``.
    """
    pts = design.joint_points
    w = design.joint_weights
    y = np.asarray(values, dtype=float)
    A = np.column_stack([np.ones(len(pts)), pts[:, 0], pts[:, 1]])
    return _weighted_projection_residual(A, y, w), _weighted_var(y, w)


def demand_only_restrictiveness(draws, design: DemandDesign) -> RestrictivenessResult:
    """Restrictiveness of the demand equation identified by an excluded shifter."""
    return _ratio_from(draws, design, demand_only_discrepancy)


def ds_sf_restrictiveness(draws, design: DemandDesign) -> RestrictivenessResult:
    """Structural-form restrictiveness of the demand equation."""
    return _ratio_from(draws, design, structural_form_discrepancy)


def _ratio_from(draws, design, discrepancy_fn) -> RestrictivenessResult:
    draws = np.atleast_2d(np.asarray(draws, dtype=float))
    pairs = np.array([discrepancy_fn(v, design) for v in draws])
    # a variance at round-off level of the squared values counts as zero
    if not pairs[:, 1].mean() > 1e-14 * max(1.0, float(np.mean(draws ** 2))):
        raise DegenerateError("pseudo-true rules have constant conditional means")
    return known_from_values(pairs[:, 0], pairs[:, 1])


def brute_force_semiparametric_infimum(values, design: DemandDesign) -> float:
    """Infimum over ``theta`` and every function ``h`` on the joint support.

    The class is ``alpha + beta p + gamma x_1 + h(p, x) - E[h(P, x) | x]``;
    it is linear in ``(theta, h)``, so the infimum of the mean squared
    distance to ``values`` under the joint design measure is a weighted
    least-squares residual with one column per parameter and per support
    point of ``h``.
    """
    pts = design.joint_points
    w = design.joint_weights
    n, K = design.prices.shape
    cols = [np.ones(n * K), pts[:, 0], pts[:, 1]]
    for i in range(n):
        for k in range(K):
            # indicator of support point (i, k) minus its conditional mean given x_i
            col = np.zeros((n, K))
            col[i, :] -= design.pk[i, k]
            col[i, k] += 1.0
            cols.append(col.ravel())
    A = np.column_stack(cols)
    return _weighted_projection_residual(A, np.asarray(values, dtype=float), w)


# ---------------------------------------------------------------------------
# entry game


@dataclass(frozen=True)
class EntryParams:
    """Payoff coefficients of the two firms; ``beta`` must be nonpositive."""

    alpha: tuple
    beta: tuple
    gamma: tuple
    errors: str = "independent_logistic"

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            v = tuple(float(a) for a in getattr(self, name))
            if len(v) != 2:
                raise ValueError(f"{name} must have two entries")
            object.__setattr__(self, name, v)
        if any(b > 0 for b in self.beta):
            raise DomainError("strategic effects beta must be nonpositive")
        if self.errors not in ERROR_MODELS:
            raise ValueError(f"errors must be one of {ERROR_MODELS}")

    @classmethod
    def from_vector(cls, theta, errors: str = "independent_logistic") -> "EntryParams":
        t = np.asarray(theta, dtype=float)
        return cls(tuple(t[0:2]), tuple(np.minimum(t[2:4], 0.0)), tuple(t[4:6]), errors)

    def vector(self) -> np.ndarray:
        return np.array(self.alpha + self.beta + self.gamma)


def _cdf(errors: str, v):
    return expit(v) if errors == "independent_logistic" else stats.norm.cdf(v)


@dataclass(frozen=True)
class EntryRegions:
    """Probabilities of the five outcome regions, each of shape ``(n,)``."""

    p00: np.ndarray
    p11: np.ndarray
    p10_unique: np.ndarray
    p01_unique: np.ndarray
    p_mult: np.ndarray

    def total(self) -> np.ndarray:
        return self.p00 + self.p11 + self.p10_unique + self.p01_unique + self.p_mult


def entry_regions(params: EntryParams, x) -> EntryRegions:
    """Region probabilities at ``x`` (one point of length 2 or an ``(n, 2)`` array)."""
    x = np.atleast_2d(np.asarray(x, dtype=float))
    a, b, g = params.alpha, params.beta, params.gamma
    F1_0 = _cdf(params.errors, a[0] + g[0] * x[:, 0])           # firm 1 enters when firm 2 stays out
    F1_1 = _cdf(params.errors, a[0] + b[0] + g[0] * x[:, 0])
    F2_0 = _cdf(params.errors, a[1] + g[1] * x[:, 1])
    F2_1 = _cdf(params.errors, a[1] + b[1] + g[1] * x[:, 1])
    return EntryRegions(
        p00=(1 - F1_0) * (1 - F2_0),
        p11=F1_1 * F2_1,
        p10_unique=F1_1 * (1 - F2_1) + (F1_0 - F1_1) * (1 - F2_0),
        p01_unique=(1 - F1_1) * F2_1 + (1 - F1_0) * (F2_0 - F2_1),
        p_mult=(F1_0 - F1_1) * (F2_0 - F2_1),
    )


def ccp_from_regions(regions: EntryRegions, q) -> np.ndarray:
    """Choice probabilities ``(p00, p01, p10, p11)`` per point, shape ``(n, 4)``.

    ``q`` is the probability of selecting ``(1, 0)`` on the multiplicity region.
    """
    q = np.broadcast_to(np.asarray(q, dtype=float), regions.p_mult.shape)
    if np.any((q < 0) | (q > 1)):
        raise ValueError("selection probability must lie in [0, 1]")
    p10 = regions.p10_unique + q * regions.p_mult
    p01 = regions.p01_unique + (1 - q) * regions.p_mult
    return np.column_stack([regions.p00, p01, p10, regions.p11])


def entry_ccp(params: EntryParams, x, q) -> np.ndarray:
    """Choice probabilities under selection probability ``q``."""
    return ccp_from_regions(entry_regions(params, x), q)


def optimal_selection(regions: EntryRegions, g) -> np.ndarray:
    """Per-point ``q`` minimizing the squared distance to target CCPs ``g``.

    Only ``p10`` and ``p01`` depend on ``q``; the unconstrained minimizer is
    clipped to ``[0, 1]``. Where the multiplicity region is empty ``q`` is
    irrelevant and set to 1/2.
    """
    g = np.atleast_2d(np.asarray(g, dtype=float))
    pm = regions.p_mult
    num = regions.p01_unique - regions.p10_unique + pm + g[:, 2] - g[:, 1]
    with np.errstate(divide="ignore", invalid="ignore"):
        q = np.where(pm > 0, num / (2 * pm), 0.5)
    return np.clip(q, 0.0, 1.0)


def entry_domain(alpha_bound: float = 5.0, beta_lower: float = -5.0, gamma_bound: float = 5.0) -> BoxDomain:
    """Parameter box ``(alpha_1, alpha_2, beta_1, beta_2, gamma_1, gamma_2)``."""
    lo = [-alpha_bound] * 2 + [beta_lower] * 2 + [-gamma_bound] * 2
    hi = [alpha_bound] * 2 + [0.0] * 2 + [gamma_bound] * 2
    tr = ("logit",) * 2 + (("logit",) * 2 if np.isfinite(beta_lower) else ("linear",) * 2) + ("logit",) * 2
    start_lo = [-2.0] * 2 + [max(beta_lower, -3.0)] * 2 + [-2.0] * 2
    start_hi = [2.0] * 2 + [0.0] * 2 + [2.0] * 2
    names = ("alpha_1", "alpha_2", "beta_1", "beta_2", "gamma_1", "gamma_2")
    return BoxDomain(lo, hi, tr, names, start_lo, start_hi)


@dataclass
class EntryFit:
    value: float
    theta: np.ndarray
    q: np.ndarray


def entry_objective(theta, g, x, errors: str = "independent_logistic") -> tuple[float, np.ndarray]:
    regions = entry_regions(EntryParams.from_vector(theta, errors), x)
    q = optimal_selection(regions, g)
    p = ccp_from_regions(regions, q)
    return float(np.mean(np.sum((p - g) ** 2, axis=1))), q


def entry_discrepancy(g, x=None, domain: Optional[BoxDomain] = None,
                      opt: OptimSettings = OptimSettings(), seed: int = 0,
                      errors: str = "independent_logistic", warm_starts: Optional[Sequence] = None) -> EntryFit:
    """Best fit of the game to target CCPs ``g`` with optimal selection.

    ``x`` is the uniform design (default 5 x 5 grid on ``[-1, 1]^2``).
    """
    x = grid_design() if x is None else np.asarray(x, dtype=float)
    g = np.asarray(g, dtype=float)
    domain = domain or entry_domain()
    res = minimize(lambda t: entry_objective(t, g, x, errors)[0], domain, opt.n_starts, opt.tol,
                   seed, opt.max_evals, warm_starts)
    value, q = entry_objective(res.argmin, g, x, errors)
    return EntryFit(value, res.argmin, q)


def stick_breaking(latent) -> np.ndarray:
    """Map three latent values per point to ``(p00, p01, p10, p11)``.

    Offsets ``logit(1/4), logit(1/3), 0`` centre the map at the uniform
    vector when the latent values are zero.
    """
    z = np.asarray(latent, dtype=float)
    offsets = np.array([logit(1 / 4), logit(1 / 3), 0.0])
    v = expit(z + offsets)
    rest = np.ones(z.shape[:-1])
    out = []
    for k in range(3):
        out.append(rest * v[..., k])
        rest = rest * (1 - v[..., k])
    out.append(rest)
    return np.stack(out, axis=-1)


def entry_draws(M: int, x=None, seed: int = 0, kernel: KernelSpec = DEFAULT_STRUCTURAL_KERNEL) -> np.ndarray:
    """Pseudo-true CCP rules on the design, shape ``(M, n, 4)``."""
    x = grid_design() if x is None else np.asarray(x, dtype=float)
    return stick_breaking(_gp_values(x, M, seed, kernel, 3))


def uniform_ccp_discrepancy(g) -> float:
    g = np.asarray(g, dtype=float)
    return float(np.mean(np.sum((g - 0.25) ** 2, axis=-1)))


def entry_restrictiveness(draws, x=None, domain: Optional[BoxDomain] = None,
                          opt: OptimSettings = OptimSettings(), seed: int = 0,
                          errors: str = "independent_logistic",
                          workers: Optional[int] = None) -> tuple[RestrictivenessResult, list]:
    """Restrictiveness of the entry game against the uniform CCP baseline.

    Returns the result and the per-draw :class:`EntryFit` objects.
    """
    x = grid_design() if x is None else np.asarray(x, dtype=float)
    draws = np.asarray(draws, dtype=float)

    def job(m):
        return entry_discrepancy(draws[m], x, domain, opt, int_seed(seed, m), errors)

    fits = parallel_map(job, range(len(draws)), workers)
    base = [uniform_ccp_discrepancy(g) for g in draws]
    return known_from_values([f.value for f in fits], base, [f.theta for f in fits]), fits
