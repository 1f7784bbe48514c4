"""Certainty equivalents of binary lotteries.

A lottery ``(z_hi, z_lo, p)`` pays ``z_hi`` with probability ``p`` and
``z_lo`` otherwise, with ``0 <= z_lo <= z_hi <= 1``. Two parametric families
predict its certainty equivalent:

* cumulative prospect theory (CPT), with power utility ``z**alpha`` and the
  probability weighting ``delta p**gamma / (delta p**gamma + (1-p)**gamma)``;
* disappointment aversion (DA), with weighting ``p / (1 + (1 - p) eta)``.

Both return the expected value at their benchmark parameters, which serves
as the baseline rule. Pseudo-true rules are monotone Gaussian-process draws
pushed into ``[z_lo, z_hi]`` by a logistic transform.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .engine import DiscrepancySpec, ModelClass, OptimSettings, fit_class, known_from_values
from .kernels import GaussianProcessSampler, KernelSpec, SplineBasis, spline_prior_sample
from .optimize import BoxDomain
from .parallel import parallel_map
from .rng import STREAM_LATENT, STREAM_SPLINE, int_seed, make_rng
from .shape import (GridInterpolant, PartialOrderSpec, comparable_pairs, monotone_from_latent,
                    range_transform)

LOTTERY_ORDER = PartialOrderSpec(("increasing", "increasing", "increasing"))


@dataclass(frozen=True)
class Family:
    """Parameter names, benchmark values and boxes of a model family."""

    name: str
    params: tuple
    benchmark: tuple
    lower: tuple
    upper: tuple
    transforms: tuple


CPT = Family("CPT", ("alpha", "gamma", "delta"), (1.0, 1.0, 1.0), (0.01, 0.01, 0.01),
             (1.0, 1.0, 20.0), ("logit", "logit", "log"))
DA = Family("DA", ("alpha", "eta"), (1.0, 0.0), (0.01, -0.99), (1.0, 20.0), ("logit", "logit"))
FAMILIES = {"cpt": CPT, "da": DA}

_ALIASES = {"α": "alpha", "γ": "gamma", "δ": "delta", "η": "eta", "a": "alpha", "g": "gamma",
            "d": "delta", "e": "eta"}

# free-parameter sets reported for each family, in table order
DEFAULT_MASKS = {
    "cpt": [("alpha", "gamma", "delta"), ("alpha", "gamma"), ("gamma", "delta"),
            ("alpha", "delta"), ("alpha",), ("gamma",), ("delta",)],
    "da": [("alpha", "eta"), ("eta",)],
}

# completeness of each specification on the experimental data, used only as
# the horizontal coordinate of the frontier output (not recomputed here)
REFERENCE_COMPLETENESS = {
    ("cpt", ("alpha", "gamma", "delta")): 0.95,
    ("cpt", ("alpha", "gamma")): 0.95,
    ("cpt", ("gamma", "delta")): 0.95,
    ("cpt", ("alpha", "delta")): 0.27,
    ("cpt", ("alpha",)): 0.25,
    ("cpt", ("gamma",)): 0.71,
    ("cpt", ("delta",)): 0.26,
    ("da", ("alpha", "eta")): 0.27,
    ("da", ("eta",)): 0.27,
}


def parse_free(text: str, family: str) -> tuple:
    """Parse ``"alpha,gamma"`` (Greek letters allowed) into canonical order."""
    fam = FAMILIES[family]
    names = [_ALIASES.get(t.strip(), t.strip()) for t in text.split(",") if t.strip()]
    unknown = [n for n in names if n not in fam.params]
    if unknown:
        raise ValueError(f"unknown {fam.name} parameters: {unknown}")
    return tuple(p for p in fam.params if p in names)


# ---------------------------------------------------------------------------
# certainty equivalents


def _split(lot):
    x = np.asarray(lot, dtype=float)
    return x[..., 0], x[..., 1], x[..., 2]


def _ce(z_hi, z_lo, w, alpha):
    u = w * z_hi ** alpha + (1.0 - w) * z_lo ** alpha
    return np.clip(u ** (1.0 / alpha), z_lo, z_hi)


def cpt_weight(p, gamma, delta):
    """CPT probability weighting with ``w(0) = 0`` and ``w(1) = 1``."""
    pg = np.asarray(p, dtype=float) ** gamma
    qg = (1.0 - np.asarray(p, dtype=float)) ** gamma
    return delta * pg / (delta * pg + qg)


def da_weight(p, eta):
    p = np.asarray(p, dtype=float)
    return p / (1.0 + (1.0 - p) * eta)


def cpt_ce(lot, alpha: float = 1.0, gamma: float = 1.0, delta: float = 1.0):
    """CPT certainty equivalent of ``lot = (z_hi, z_lo, p)`` (vectorized)."""
    z_hi, z_lo, p = _split(lot)
    return _ce(z_hi, z_lo, cpt_weight(p, gamma, delta), alpha)


def da_ce(lot, alpha: float = 1.0, eta: float = 0.0):
    """DA certainty equivalent of ``lot = (z_hi, z_lo, p)`` (vectorized)."""
    z_hi, z_lo, p = _split(lot)
    return _ce(z_hi, z_lo, da_weight(p, eta), alpha)


def expected_value(lot):
    z_hi, z_lo, p = _split(lot)
    return p * z_hi + (1.0 - p) * z_lo


_CE = {"CPT": cpt_ce, "DA": da_ce}


class RiskModel(ModelClass):
    """A family with some parameters free and the rest at benchmark."""

    def __init__(self, family: str, free: Sequence[str]):
        fam = FAMILIES[family]
        free = tuple(p for p in fam.params if p in free)
        idx = [fam.params.index(p) for p in free]
        self.family = family
        self.free = free
        self.free_index = np.array(idx, dtype=int)
        self.benchmark = np.array(fam.benchmark)
        domain = BoxDomain(np.array(fam.lower)[idx], np.array(fam.upper)[idx],
                           tuple(fam.transforms[i] for i in idx), free)
        ce = _CE[fam.name]
        label = f"{fam.name}({','.join(free)})"
        super().__init__(label, domain, lambda theta, x: ce(x, *self.full_params(theta)))

    def full_params(self, theta) -> np.ndarray:
        full = self.benchmark.copy()
        full[self.free_index] = theta
        return full

    def embed(self, full) -> np.ndarray:
        return np.asarray(full, dtype=float)[self.free_index]


def build_risk_model(family: str, free: Sequence[str]) -> RiskModel:
    """Model class for ``family`` ('cpt' or 'da') with ``free`` parameters."""
    return RiskModel(family.lower(), free)


def expected_value_model() -> ModelClass:
    return ModelClass.fixed("EV", expected_value)


# ---------------------------------------------------------------------------
# eligible set


def lottery_grid(resolution: int = 9) -> np.ndarray:
    """Feasible nodes ``z_hi >= z_lo`` of a ``resolution**3`` grid, lexicographic."""
    if resolution < 2:
        raise ValueError("grid resolution must be at least 2")
    ax = np.linspace(0.0, 1.0, resolution)
    g = np.stack(np.meshgrid(ax, ax, ax, indexing="ij"), axis=-1).reshape(-1, 3)
    return g[g[:, 0] >= g[:, 1]]


class LotteryRule:
    """Pseudo-true certainty-equivalent rule.

    Holds the monotone latent ``g`` on the feasible grid nodes. Values are
    ``z_lo + (z_hi - z_lo) * sigmoid(g)``. Off the grid, the latent is
    interpolated multilinearly over the full cube after extending it to
    infeasible nodes by ``G(a, b, p) = g(max(a, b), b, p)``, which keeps it
    monotone, and the transform is applied at the query's own bounds.
    """

    def __init__(self, points: np.ndarray, latent: np.ndarray, resolution: int,
                 mix_weight: float = 0.5, converged: bool = True):
        self.points = points
        self.latent = latent
        self.resolution = resolution
        self.mix_weight = mix_weight
        self.converged = converged
        self.values = range_transform(latent, points[:, 1], points[:, 0])
        self._interp = None

    def _interpolant(self) -> GridInterpolant:
        if self._interp is None:
            r = self.resolution
            ax = np.linspace(0.0, 1.0, r)
            lookup = {}
            for k, (a, b, p) in enumerate(np.rint(self.points * (r - 1)).astype(int)):
                lookup[(a, b, p)] = self.latent[k]
            cube = np.empty((r, r, r))
            for a in range(r):
                for b in range(r):
                    for p in range(r):
                        cube[a, b, p] = lookup[(max(a, b), b, p)]
            self._interp = GridInterpolant((ax, ax, ax), cube)
        return self._interp

    def latent_at(self, x) -> np.ndarray:
        values, _ = self._interpolant()(x)
        return values

    def __call__(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape == self.points.shape and np.array_equal(x, self.points):
            return self.values
        if np.any(x[:, 0] < x[:, 1]):
            raise ValueError("lotteries need z_hi >= z_lo")
        return range_transform(self.latent_at(x), x[:, 1], x[:, 0])


class LotterySampler:
    """Monotone eligible-set draws on the lottery grid.

    Parameters
    ----------
    kernel : KernelSpec
        Covariance of the latent Gaussian process. With ``latent='spline'``
        only its variance is used, as the target variance of the spline.
    resolution : int
    seed : int
    latent : {'gp', 'spline'}
    """

    def __init__(self, kernel: KernelSpec, resolution: int = 9, seed: int = 0, latent: str = "gp",
                 max_iter: int = 500, spline_knots: int = 4, spline_penalty: float = 10.0):
        if latent not in ("gp", "spline"):
            raise ValueError("latent must be 'gp' or 'spline'")
        self.kernel = kernel
        self.resolution = resolution
        self.seed = seed
        self.latent = latent
        self.max_iter = max_iter
        self.points = lottery_grid(resolution)
        self.pairs = comparable_pairs(self.points, LOTTERY_ORDER)
        self.spline_penalty = spline_penalty
        if latent == "gp":
            self._gp = GaussianProcessSampler(kernel, self.points)
        else:
            self._basis = SplineBasis.build([(0.0, 1.0)] * 3, K=spline_knots, kind="bspline")

    def latent_values(self, m: int) -> np.ndarray:
        if self.latent == "gp":
            return self._gp.draw_values(make_rng(self.seed, STREAM_LATENT, m))
        draw = spline_prior_sample(None, 4, self.spline_penalty, self.seed, STREAM_SPLINE, m,
                                   target_sd=np.sqrt(self.kernel.variance), basis=self._basis)
        return draw(self.points)

    def draw(self, m: int) -> LotteryRule:
        values, w, converged = monotone_from_latent(self.latent_values(m), self.pairs, self.max_iter)
        return LotteryRule(self.points, values, self.resolution, w, converged)


def lottery_eligible_sampler(kernel: KernelSpec, resolution: int = 9, M: int = 1, seed: int = 0,
                             latent: str = "gp") -> list[LotteryRule]:
    """``M`` pseudo-true certainty-equivalent rules; draw ``m`` depends only on ``(seed, m)``."""
    if M < 1:
        raise ValueError("M must be at least 1")
    sampler = LotterySampler(kernel, resolution, seed, latent)
    return [sampler.draw(m) for m in range(M)]


# ---------------------------------------------------------------------------
# application


@dataclass
class RiskDrawResult:
    """Per-draw discrepancies and argmins for every requested mask."""

    draw: int
    base_d: float
    model_d: dict
    argmins: dict


def nested_fit_order(masks: Sequence[tuple]) -> list[tuple]:
    return sorted(set(masks), key=lambda m: (len(m), masks.index(m)))


def fit_risk_draw(rule_values: np.ndarray, masks: dict, spec: DiscrepancySpec,
                  opt: OptimSettings, seed: int, draw: int) -> RiskDrawResult:
    """Fit every mask to one draw, warm-starting each at its nested submodels.

    ``masks`` maps a family key to the list of free-parameter tuples. Each
    fit also starts from the benchmark, so no model does worse than the
    expected-value baseline, and from the embedded argmin of every smaller
    mask it contains, so larger masks never do worse than nested ones.
    """
    base = fit_class(expected_value_model(), rule_values, spec, opt)
    model_d, argmins = {}, {}
    for fam_key, fam_masks in masks.items():
        fam = FAMILIES[fam_key]
        solved = {(): np.array(fam.benchmark)}
        for mask in nested_fit_order(list(fam_masks)):
            model = RiskModel(fam_key, mask)
            starts = [model.embed(full) for sub, full in solved.items() if set(sub) <= set(mask)]
            fit = fit_class(model, rule_values, spec, opt,
                            int_seed(seed, draw, len(model_d) + 1), starts)
            solved[mask] = model.full_params(fit.theta)
            model_d[(fam_key, mask)] = fit.value
            argmins[(fam_key, mask)] = model.full_params(fit.theta)
    return RiskDrawResult(draw, base.value, model_d, argmins)


def run_risk(kernel: KernelSpec, M: int, seed: int, resolution: int = 9, latent: str = "gp",
             masks: Optional[dict] = None, opt: OptimSettings = OptimSettings(),
             workers: Optional[int] = None, max_iter: int = 500):
    """Restrictiveness of every requested CPT/DA specification.

    Returns
    -------
    results : dict
        ``(family, mask) -> RestrictivenessResult``.
    draws : list of RiskDrawResult
    """
    masks = masks if masks is not None else DEFAULT_MASKS
    sampler = LotterySampler(kernel, resolution, seed, latent, max_iter)
    spec = DiscrepancySpec("l2_root", sampler.points)

    def job(m):
        rule = sampler.draw(m)
        return fit_risk_draw(rule.values, masks, spec, opt, seed, m)

    draws = parallel_map(job, range(M), workers)
    base = [d.base_d for d in draws]
    results = {}
    for fam_key, fam_masks in masks.items():
        for mask in fam_masks:
            key = (fam_key, tuple(mask))
            results[key] = known_from_values([d.model_d[key] for d in draws], base,
                                             [d.argmins[key] for d in draws])
    return results, draws
