"""Discrepancies, restrictiveness estimators and diagnostics.

Restrictiveness of a model class relative to a baseline is the ratio

    r = E[d(F_model, f)] / E[d(F_base, f)]

where ``f`` is a pseudo-true rule drawn from the eligible set and
``d(F, f)`` is the smallest discrepancy between ``f`` and any member of
``F``. Two estimation regimes are supported.

*Known discrepancy.* The input distribution is a fixed weighted point set,
so each ``d(F, f_m)`` is computed exactly (up to optimization) and the only
uncertainty comes from the ``M`` draws. The standard error is the delta
method for a ratio of means.

*Estimated discrepancy.* The input distribution is the empirical measure of
a sample ``X_1..X_n``. Conditional on the draws, the ratio is asymptotically
normal with influence function

    psi_i = (Phi1_i - r Phi0_i) / mu0,

where ``Phi1_i`` and ``Phi0_i`` average the centred per-observation losses
over draws. Alternatively the sample can be bootstrapped with the draws held
fixed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable, Optional, Sequence

import numpy as np

from .exceptions import DegenerateError
from .optimize import BoxDomain, OptimResult, minimize
from .parallel import parallel_map
from .rng import STREAM_BOOTSTRAP, int_seed, make_rng

LOSSES = ("squared_l2", "l2_root", "rad_correlation", "vc_mismatch")
INFERENCE = ("known_d", "estimated_d_if", "estimated_d_bootstrap")


# ---------------------------------------------------------------------------
# discrepancies


@dataclass(frozen=True)
class DiscrepancySpec:
    """A discrepancy functional and the input measure it averages over.

    Parameters
    ----------
    loss : {'squared_l2', 'l2_root', 'rad_correlation', 'vc_mismatch'}
    points : array_like or object
        Evaluation inputs. Anything a rule or a model's ``predict`` accepts;
        an object exposing ``take(indices)`` can also be resampled.
    weights : array_like, optional
        Nonnegative weights, normalized to sum to one. Uniform by default.
    scale : float
        Positive multiplier applied to every reported discrepancy.
    """

    loss: str = "squared_l2"
    points: Any = None
    weights: Optional[np.ndarray] = None
    scale: float = 1.0

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}")
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        if self.weights is not None:
            w = np.asarray(self.weights, dtype=float)
            if np.any(w < 0) or not w.sum() > 0:
                raise ValueError("weights must be nonnegative with a positive sum")
            object.__setattr__(self, "weights", w / w.sum())

    @property
    def n(self) -> int:
        if self.weights is not None:
            return self.weights.size
        return num_obs(self.points)

    def normalized_weights(self, n: Optional[int] = None) -> np.ndarray:
        n = self.n if n is None else n
        return np.full(n, 1.0 / n) if self.weights is None else self.weights

    def pointwise(self, f_vals, g_vals) -> np.ndarray:
        """Per-observation loss before weighting and scaling."""
        f = np.asarray(f_vals, dtype=float)
        g = np.asarray(g_vals, dtype=float)
        if f.shape != g.shape:
            raise ValueError(f"rule outputs have different shapes {f.shape} and {g.shape}")
        if self.loss in ("squared_l2", "l2_root"):
            diff = (f - g).reshape(f.shape[0], -1)
            return np.einsum("ij,ij->i", diff, diff)
        if not (np.all(np.abs(f) == 1) and np.all(np.abs(g) == 1)):
            raise ValueError(f"{self.loss} needs rules with values in {{-1, +1}}")
        if self.loss == "rad_correlation":
            return 1.0 - f * g
        return (f != g).astype(float)

    def aggregate(self, losses) -> float:
        """Weighted mean of per-observation losses, unscaled."""
        value = float(np.dot(self.normalized_weights(len(losses)), losses))
        return np.sqrt(max(value, 0.0)) if self.loss == "l2_root" else value

    def with_points(self, points, weights=None) -> "DiscrepancySpec":
        return DiscrepancySpec(self.loss, points, weights, self.scale)


def num_obs(points) -> int:
    if hasattr(points, "num_obs"):
        return int(points.num_obs)
    return len(points)


def take_obs(points, idx):
    """Subsample (with repetition) the observations of ``points``."""
    if hasattr(points, "take"):
        return points.take(idx)
    return np.asarray(points)[idx]


def evaluate_rule(rule, points) -> np.ndarray:
    """Values of ``rule`` at ``points``; arrays are taken as already evaluated."""
    if callable(rule):
        return np.asarray(rule(points), dtype=float)
    return np.asarray(rule, dtype=float)


def discrepancy(spec: DiscrepancySpec, f, g) -> float:
    """``d(f, g)`` under ``spec``; rules may be callables or value arrays."""
    losses = spec.pointwise(evaluate_rule(f, spec.points), evaluate_rule(g, spec.points))
    return spec.scale * spec.aggregate(losses)


# ---------------------------------------------------------------------------
# model classes


@dataclass(frozen=True)
class OptimSettings:
    """Inner optimizer settings."""

    n_starts: int = 8
    tol: float = 1e-8
    max_evals: int = 2000


@dataclass
class ModelClass:
    """A parametric family of prediction rules.

    Parameters
    ----------
    name : str
    domain : BoxDomain
        Parameter box; a zero-dimensional box makes the class a single rule.
    predict : callable
        ``predict(theta, points)`` returns predictions stacked along the first
        axis, one row per observation.
    solver : callable, optional
        ``solver(target_values, spec)`` returning an exact minimizer; used
        instead of numerical search when supplied (e.g. least squares).
    """

    name: str
    domain: BoxDomain
    predict: Callable[[np.ndarray, Any], np.ndarray]
    solver: Optional[Callable] = None

    @classmethod
    def fixed(cls, name: str, rule: Callable) -> "ModelClass":
        """A class containing only ``rule``."""
        return cls(name, BoxDomain(np.empty(0), np.empty(0)), lambda theta, x: rule(x))

    @property
    def num_params(self) -> int:
        return self.domain.dim

    def rule(self, theta) -> Callable:
        theta = np.asarray(theta, dtype=float)
        return lambda x: self.predict(theta, x)


@dataclass
class FitResult:
    """Best member of a class for one target rule."""

    value: float
    theta: np.ndarray
    losses: np.ndarray
    optim: Optional[OptimResult] = None


def fit_class(model: ModelClass, target_values, spec: DiscrepancySpec,
              opt: OptimSettings = OptimSettings(), seed: int = 0,
              warm_starts: Optional[Sequence] = None) -> FitResult:
    """Minimize the discrepancy between ``model`` and fixed target values."""
    target = np.asarray(target_values, dtype=float)

    def objective(theta):
        pred = model.predict(theta, spec.points)
        return spec.aggregate(spec.pointwise(pred, target))

    result = None
    if model.solver is not None:
        theta = np.asarray(model.solver(target, spec), dtype=float)
        value = objective(theta)
        for start in warm_starts or []:
            v = objective(np.asarray(start, dtype=float))
            if v < value:
                theta, value = np.asarray(start, dtype=float), v
    else:
        result = minimize(objective, model.domain, n_starts=opt.n_starts, tol=opt.tol, seed=seed,
                          max_evals=opt.max_evals, extra_starts=warm_starts)
        theta, value = result.argmin, result.value
    losses = spec.pointwise(model.predict(theta, spec.points), target)
    return FitResult(spec.scale * value, theta, losses, result)


def model_discrepancy(model: ModelClass, g, spec: DiscrepancySpec,
                      opt: OptimSettings = OptimSettings(), seed: int = 0,
                      warm_starts: Optional[Sequence] = None) -> tuple[float, np.ndarray]:
    """``inf_theta d(f_theta, g)`` and its minimizer.

    The value never exceeds the discrepancy at any supplied warm start.
    """
    fit = fit_class(model, evaluate_rule(g, spec.points), spec, opt, seed, warm_starts)
    return fit.value, fit.theta


# ---------------------------------------------------------------------------
# restrictiveness


@dataclass
class RestrictivenessResult:
    """Estimated restrictiveness and its per-draw ingredients."""

    r_hat: float
    se: float
    M: int
    per_draw_model_d: np.ndarray
    per_draw_base_d: np.ndarray
    argmins: list = field(default_factory=list)
    inference: str = "known_d"
    n: Optional[int] = None

    @property
    def ci(self) -> tuple[float, float]:
        return self.r_hat - 1.96 * self.se, self.r_hat + 1.96 * self.se


@dataclass
class InfluenceBundle:
    """Plug-in influence terms for the estimated-discrepancy regime.

    ``phi1`` and ``phi0`` are the centred per-observation losses of the model
    and the baseline, averaged over draws; ``psi`` combines them.
    """

    phi1: np.ndarray
    phi0: np.ndarray
    psi: np.ndarray
    sigma2: float


def known_from_values(model_d, base_d, argmins=None) -> RestrictivenessResult:
    """Ratio of mean discrepancies with a delta-method standard error."""
    num = np.asarray(model_d, dtype=float)
    den = np.asarray(base_d, dtype=float)
    M = num.size
    if den.mean() <= 0:
        raise DegenerateError("mean baseline discrepancy must be positive")
    r = num.mean() / den.mean()
    if M > 1:
        cov = np.cov(num, den, ddof=1)
        var = (cov[0, 0] - 2 * r * cov[0, 1] + r * r * cov[1, 1]) / (M * den.mean() ** 2)
        se = float(np.sqrt(max(var, 0.0)))
    else:
        se = float("nan")
    return RestrictivenessResult(float(r), se, M, num, den, list(argmins or []), "known_d")


def restrictiveness_known(model: ModelClass, baseline: ModelClass, draws: Sequence,
                          spec: DiscrepancySpec, opt: OptimSettings = OptimSettings(),
                          seed: int = 0, warm_starts: Optional[Sequence] = None,
                          workers: Optional[int] = None) -> RestrictivenessResult:
    """Restrictiveness with discrepancies computed on a fixed input measure.

    Parameters
    ----------
    draws : sequence
        Pseudo-true rules (callables or values at ``spec.points``).
    warm_starts : sequence, optional
        Per-draw lists of extra starting points for the model fit.
    """

    def job(m):
        starts = warm_starts[m] if warm_starts is not None else None
        g = evaluate_rule(draws[m], spec.points)
        fit = fit_class(model, g, spec, opt, int_seed(seed, m), starts)
        base = fit_class(baseline, g, spec, opt, int_seed(seed, m, 1))
        return fit.value, base.value, fit.theta

    out = parallel_map(job, range(len(draws)), workers)
    return known_from_values([o[0] for o in out], [o[1] for o in out], [o[2] for o in out])


def estimated_from_losses(model_losses, base_losses, argmins=None):
    """Ratio estimate and influence-function inference from loss matrices.

    Parameters
    ----------
    model_losses, base_losses : array_like, shape (M, n)
        Per-observation losses at each draw's fitted model and baseline.

    Returns
    -------
    RestrictivenessResult, InfluenceBundle
    """
    l1 = np.atleast_2d(np.asarray(model_losses, dtype=float))
    l0 = np.atleast_2d(np.asarray(base_losses, dtype=float))
    M, n = l1.shape
    d1 = l1.mean(axis=1)
    d0 = l0.mean(axis=1)
    mu1, mu0 = d1.mean(), d0.mean()
    if mu0 <= 0:
        raise DegenerateError("mean baseline discrepancy must be positive")
    r = mu1 / mu0
    phi1 = (l1 - d1[:, None]).mean(axis=0)
    phi0 = (l0 - d0[:, None]).mean(axis=0)
    psi = (phi1 - r * phi0) / mu0
    sigma2 = float(np.var(psi, ddof=1)) if n > 1 else 0.0
    result = RestrictivenessResult(float(r), float(np.sqrt(sigma2 / n)), M, d1, d0,
                                   list(argmins or []), "estimated_d_if", n)
    return result, InfluenceBundle(phi1, phi0, psi, sigma2)


def _estimated_losses(model, baseline, draws, spec, opt, seed, workers, warm_starts=None):
    def job(m):
        g = evaluate_rule(draws[m], spec.points)
        starts = warm_starts[m] if warm_starts is not None else None
        fit = fit_class(model, g, spec, opt, int_seed(seed, m), starts)
        base = fit_class(baseline, g, spec, opt, int_seed(seed, m, 1))
        return fit.losses, base.losses, fit.theta

    out = parallel_map(job, range(len(draws)), workers)
    return np.array([o[0] for o in out]), np.array([o[1] for o in out]), [o[2] for o in out]


def _check_estimable(spec: DiscrepancySpec):
    if spec.loss != "squared_l2":
        raise ValueError("the estimated regime needs the per-observation squared_l2 loss")
    if spec.weights is not None and not np.allclose(spec.weights, spec.weights[0]):
        raise ValueError("the estimated regime uses the empirical (equal-weight) measure")


def restrictiveness_estimated(model: ModelClass, baseline: ModelClass, draws: Sequence, data_X,
                              spec: DiscrepancySpec = DiscrepancySpec(),
                              opt: OptimSettings = OptimSettings(), seed: int = 0,
                              workers: Optional[int] = None, min_n: int = 30):
    """Restrictiveness with discrepancies estimated on a sample of inputs.

    Returns
    -------
    RestrictivenessResult, InfluenceBundle
    """
    spec = spec.with_points(data_X)
    _check_estimable(spec)
    if num_obs(data_X) < min_n:
        raise ValueError(f"need at least {min_n} observations")
    l1, l0, argmins = _estimated_losses(model, baseline, draws, spec, opt, seed, workers)
    result, bundle = estimated_from_losses(l1, l0, argmins)
    result.per_draw_model_d = spec.scale * result.per_draw_model_d
    result.per_draw_base_d = spec.scale * result.per_draw_base_d
    return result, bundle


def bootstrap_se(model: ModelClass, baseline: ModelClass, draws: Sequence, data_X, B: int = 500,
                 seed: int = 0, spec: DiscrepancySpec = DiscrepancySpec(),
                 opt: OptimSettings = OptimSettings(), workers: Optional[int] = None,
                 return_replicates: bool = False):
    """Bootstrap standard error of the estimated ratio.

    The input sample is resampled with replacement ``B`` times while the
    draws stay fixed; each replicate refits every draw.
    """
    if B < 2:
        raise ValueError("B must be at least 2")
    n = num_obs(data_X)
    values = [evaluate_rule(g, data_X) for g in draws]

    def job(b):
        idx = make_rng(seed, STREAM_BOOTSTRAP, b).integers(0, n, size=n)
        sub = spec.with_points(take_obs(data_X, idx))
        l1, l0, _ = _estimated_losses(model, baseline, [v[idx] for v in values], sub, opt,
                                      int_seed(seed, b), 1)
        return l1.mean() / l0.mean()

    reps = np.array(parallel_map(job, range(B), workers))
    se = float(np.std(reps, ddof=1))
    return (se, reps) if return_replicates else se


# ---------------------------------------------------------------------------
# completeness and diagnostics


@dataclass
class CompletenessResult:
    """Share of the baseline's loss removed by the model."""

    kappa: float
    se: float
    loss_model: float
    loss_base: float
    theta: np.ndarray = field(default_factory=lambda: np.empty(0))


def completeness_from_losses(loss_model: float, loss_base: float, loss_bench: float = 0.0) -> float:
    if loss_base - loss_bench <= 0:
        raise DegenerateError("baseline loss equals the benchmark loss")
    return (loss_base - loss_model) / (loss_base - loss_bench)


def completeness(model: ModelClass, observed: tuple, baseline: ModelClass,
                 spec: DiscrepancySpec = DiscrepancySpec(), opt: OptimSettings = OptimSettings(),
                 B: int = 100, seed: int = 0, loss_bench: float = 0.0,
                 warm_starts: Optional[Sequence] = None) -> CompletenessResult:
    """In-sample completeness ``(L_base - L_model) / (L_base - L_bench)``.

    Parameters
    ----------
    observed : (inputs, outcomes)
    B : int
        Bootstrap replicates over observations for the standard error; each
        replicate warm-starts at the full-sample fits.
    """
    X, Y = observed
    Y = np.asarray(Y, dtype=float)
    if num_obs(X) == 0:
        raise ValueError("observed data is empty")
    spec_x = spec.with_points(X)
    fit_m = fit_class(model, Y, spec_x, opt, int_seed(seed, 0), warm_starts)
    fit_b = fit_class(baseline, Y, spec_x, opt, int_seed(seed, 1))
    kappa = completeness_from_losses(fit_m.value, fit_b.value, loss_bench)
    reps = []
    n = num_obs(X)
    quick = OptimSettings(n_starts=0, tol=opt.tol, max_evals=opt.max_evals)
    for b in range(B):
        idx = make_rng(seed, STREAM_BOOTSTRAP, b).integers(0, n, size=n)
        sub = spec.with_points(take_obs(X, idx))
        lm = fit_class(model, Y[idx], sub, quick, 0, [fit_m.theta]).value
        lb = fit_class(baseline, Y[idx], sub, quick, 0, [fit_b.theta]).value
        if lb - loss_bench > 0:
            reps.append(completeness_from_losses(lm, lb, loss_bench))
    se = float(np.std(reps, ddof=1)) if len(reps) > 1 else float("nan")
    return CompletenessResult(float(kappa), se, fit_m.value, fit_b.value, fit_m.theta)


def learning_curve(model: ModelClass, draws: Sequence, n_grid: Sequence[int], spec: DiscrepancySpec,
                   sample_inputs: Callable[[np.random.Generator, int], Any],
                   fitter: Optional[Callable] = None, reps: int = 1, seed: int = 0,
                   opt: OptimSettings = OptimSettings()) -> list[tuple[int, float, float]]:
    """Average population risk of the fitted rule as the sample size grows.

    For every ``n`` and draw ``f``, noise-free samples ``Y_i = f(X_i)`` are
    drawn, the class is fitted by ``fitter(X, Y)`` (least squares on the
    sample by default) and the fitted rule's discrepancy to ``f`` is
    evaluated on ``spec``'s population measure.

    Returns
    -------
    list of (n, L_n, standard error of L_n)
    """
    if fitter is None:
        def fitter(X, Y):
            return fit_class(model, Y, spec.with_points(X), opt).theta
    out = []
    for n in n_grid:
        risks = []
        for m, f in enumerate(draws):
            for rep in range(reps):
                X = sample_inputs(make_rng(seed, n, m, rep), n)
                theta = fitter(X, evaluate_rule(f, X))
                risks.append(discrepancy(spec, model.rule(theta), f))
        risks = np.asarray(risks)
        se = float(risks.std(ddof=1) / np.sqrt(risks.size)) if risks.size > 1 else 0.0
        out.append((int(n), float(risks.mean()), se))
    return out


def gmm_criterion(theta, Y, X, Z, W) -> float:
    """Quadratic-form GMM criterion for a linear index model.

    ``Q = gbar' W gbar`` with ``gbar = mean_i Z_i (Y_i - X_i' theta)``.
    """
    Y = np.asarray(Y, dtype=float)
    X = np.asarray(X, dtype=float)
    Z = np.asarray(Z, dtype=float)
    W = np.atleast_2d(np.asarray(W, dtype=float))
    if X.ndim == 1:
        X = X[:, None]
    if Z.ndim == 1:
        Z = Z[:, None]
    if not (len(Y) == len(X) == len(Z)):
        raise ValueError("Y, X and Z must have the same number of rows")
    if W.shape != (Z.shape[1], Z.shape[1]):
        raise ValueError("W must be square with one row per instrument")
    if not np.allclose(W, W.T) or np.linalg.eigvalsh(0.5 * (W + W.T)).min() < -1e-10 * max(1.0, np.abs(W).max()):
        raise ValueError("weight matrix must be symmetric positive semidefinite")
    resid = Y - X @ np.atleast_1d(np.asarray(theta, dtype=float))
    gbar = (Z * resid[:, None]).mean(axis=0)
    return float(gbar @ W @ gbar)
