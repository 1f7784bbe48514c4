"""Choice models with endogenous prices and a nonparametric control term.

Utilities are ``u_jm = x_jm'b + h~_jm`` where ``h~ = h - Pi(h | z)`` removes
from a random function ``h`` its least-squares projection on a quadratic
basis in the instruments, so that the structural error stays mean
independent of them. Model shares are computed over inside goods only and
rescaled so that they sum to ``1 - s0m``, with ``s0m`` the observed outside
share of market ``m``. The constant drops out of the inside softmax, so the
characteristics are ``(price, mushy)``.

The infimum over ``h`` is approximated by the best of ``M_h`` random
Fourier-feature draws, and the inner minimization over the parametric
coefficients is warm-started across draws.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from itertools import combinations_with_replacement
from typing import Optional, Sequence

import numpy as np
from scipy import linalg

from .choice import (ChoiceEligibleSampler, MarketPanel, mnl_from_utilities, mxl_from_utilities,
                     nl_from_utilities, simulation_draws)
from .engine import (CompletenessResult, DiscrepancySpec, ModelClass, OptimSettings,
                     completeness_from_losses, estimated_from_losses, fit_class)
from .exceptions import DataError
from .kernels import RffBasis, rff_sample
from .optimize import BoxDomain
from .parallel import parallel_map
from .rng import STREAM_BOOTSTRAP, STREAM_RFF, int_seed, make_rng

IV_MODELS = ("mnl", "nl", "mxl")
IV_CHARACTERISTICS = ("price", "mushy")
RFF_FEATURES = 512
RFF_LENGTHSCALE = 1.0
RFF_AMPLITUDE_SD = 1.0
DEFAULT_MH = 20
DEFAULT_SCREEN = 3
RANK_TOL = 1e-10


class InstrumentWarning(UserWarning):
    """An instrument or basis column was dropped."""


# ---------------------------------------------------------------------------
# instruments and projection


def select_instruments(panel: MarketPanel, L: int = 2) -> np.ndarray:
    """Indices of the ``L`` instruments most correlated with price.

    Ranking is by absolute sample correlation over all products, ties going
    to the lower index. Instruments with zero variance are skipped with an
    :class:`InstrumentWarning`.
    """
    if panel.instruments is None:
        raise DataError("panel has no instruments")
    p = panel.flat(panel.price)
    Z = panel.flat(panel.instruments)
    sd = Z.std(axis=0)
    usable = np.nonzero(sd > 0)[0]
    if usable.size < Z.shape[1]:
        dropped = sorted(set(range(Z.shape[1])) - set(usable.tolist()))
        warnings.warn(f"instruments {dropped} have zero variance and were excluded",
                      InstrumentWarning, stacklevel=2)
    if L < 1 or usable.size < L:
        raise DataError(f"need at least {L} usable instruments, found {usable.size}")
    if p.std() == 0:
        raise DataError("price has zero variance")
    pc = (p - p.mean()) / p.std()
    corr = np.abs(((Z[:, usable] - Z[:, usable].mean(axis=0)) / sd[usable]).T @ pc) / p.size
    # rounding lets exact ties survive BLAS summation order
    order = np.lexsort((usable, -np.round(corr, 12)))
    return usable[order[:L]]


def quadratic_columns(z: np.ndarray) -> tuple[np.ndarray, list[str]]:
    """``1``, every ``z_k`` and every product ``z_k z_l`` with ``k <= l``."""
    z = np.asarray(z, dtype=float)
    z = z[:, None] if z.ndim == 1 else z
    L = z.shape[1]
    cols = [np.ones(z.shape[0])]
    names = ["1"]
    for k in range(L):
        cols.append(z[:, k])
        names.append(f"z{k + 1}")
    for k, l in combinations_with_replacement(range(L), 2):
        cols.append(z[:, k] * z[:, l])
        names.append(f"z{k + 1}^2" if k == l else f"z{k + 1}*z{l + 1}")
    return np.column_stack(cols), names


@dataclass
class ProjectionBasis:
    """Least-squares projection onto a set of basis columns.

    Dependent columns are dropped (with an :class:`InstrumentWarning`) by
    a pivoted QR decomposition, and the retained span is stored through an
    orthonormal factor ``Q``.
    """

    columns: np.ndarray
    names: list
    kept: np.ndarray
    Q: np.ndarray = field(repr=False)

    @classmethod
    def from_columns(cls, columns, names: Optional[Sequence[str]] = None,
                     tol: float = RANK_TOL) -> "ProjectionBasis":
        B = np.asarray(columns, dtype=float)
        if B.ndim == 1:
            B = B[:, None]
        names = list(names) if names is not None else [f"b{k}" for k in range(B.shape[1])]
        if B.shape[1] == 0 or not np.all(np.isfinite(B)):
            raise DataError("projection basis must have finite columns")
        # scale columns so the rank test is not driven by units
        norms = np.linalg.norm(B, axis=0)
        Bs = B / np.where(norms > 0, norms, 1.0)
        _, R, piv = linalg.qr(Bs, mode="economic", pivoting=True)
        diag = np.abs(np.diag(R))
        if diag.size == 0 or diag[0] == 0:
            raise DataError("projection basis has rank zero")
        rank = int(np.sum(diag > tol * diag[0]))
        kept = np.sort(piv[:rank])
        if rank < B.shape[1]:
            dropped = [names[k] for k in sorted(set(range(B.shape[1])) - set(kept.tolist()))]
            warnings.warn(f"dropped linearly dependent basis columns {dropped}",
                          InstrumentWarning, stacklevel=2)
        Q, _ = np.linalg.qr(B[:, kept])
        return cls(B[:, kept], [names[k] for k in kept], kept, Q)

    @classmethod
    def quadratic(cls, z) -> "ProjectionBasis":
        """Full quadratic basis in the instruments ``z`` of shape ``(n, L)``."""
        cols, names = quadratic_columns(np.asarray(z, dtype=float).reshape(len(z), -1))
        return cls.from_columns(cols, names)

    @property
    def rank(self) -> int:
        return self.Q.shape[1]

    def fitted(self, h) -> np.ndarray:
        h = np.asarray(h, dtype=float)
        return self.Q @ (self.Q.T @ h)


def project_onto_instruments(h, basis: ProjectionBasis) -> tuple[np.ndarray, np.ndarray]:
    """Split ``h`` into its projection ``h_bar`` and residual ``h_tilde``."""
    h = np.asarray(h, dtype=float)
    if h.shape[0] != basis.Q.shape[0]:
        raise ValueError("h and the basis have different numbers of rows")
    h_bar = basis.fitted(h)
    return h_bar, h - h_bar


def standardize(a: np.ndarray) -> np.ndarray:
    """Columns shifted to mean zero and scaled to unit standard deviation."""
    a = np.asarray(a, dtype=float)
    sd = a.std(axis=0)
    return (a - a.mean(axis=0)) / np.where(sd > 0, sd, 1.0)


@dataclass
class ControlSetup:
    """Inputs shared by all ``h`` draws on one panel.

    Attributes
    ----------
    panel : MarketPanel
    instruments : ndarray of int
        Selected instrument indices.
    xi : ndarray, shape (n_products_total, 1 + L)
        Standardized ``(price, z_1, .., z_L)`` at valid products.
    basis : ProjectionBasis
    """

    panel: MarketPanel
    instruments: np.ndarray
    xi: np.ndarray
    basis: ProjectionBasis

    @classmethod
    def build(cls, panel: MarketPanel, num_iv: int = 2,
              instruments: Optional[Sequence[int]] = None) -> "ControlSetup":
        if panel.s0 is None:
            raise DataError("the endogenous application needs observed outside shares")
        idx = np.asarray(instruments if instruments is not None
                         else select_instruments(panel, num_iv), dtype=int)
        z = panel.flat(panel.instruments)[:, idx]
        xi = standardize(np.column_stack([panel.flat(panel.price), z]))
        return cls(panel, idx, xi, ProjectionBasis.quadratic(z))

    def scatter(self, flat) -> np.ndarray:
        out = np.zeros(self.panel.valid.shape)
        out[self.panel.valid] = flat
        return out


@dataclass
class HDraw:
    """One random control function and its instrument-orthogonal part.

    ``values``, ``h_bar`` and ``h_tilde`` are laid out as the panel,
    ``(n_markets, J)``, with zeros at padding.
    """

    rff: RffBasis
    values: np.ndarray
    h_bar: np.ndarray
    h_tilde: np.ndarray


def draw_h(setup: ControlSetup, seed: int, *keys: int, D: int = RFF_FEATURES,
           lengthscale: float = RFF_LENGTHSCALE, amplitude_sd: float = RFF_AMPLITUDE_SD) -> HDraw:
    rff = rff_sample(D, lengthscale, amplitude_sd, setup.xi.shape[1], seed, STREAM_RFF, *keys)
    h = rff(setup.xi)
    h_bar, h_tilde = project_onto_instruments(h, setup.basis)
    return HDraw(rff, setup.scatter(h), setup.scatter(h_bar), setup.scatter(h_tilde))


def h_candidates(setup: ControlSetup, M_h: int = DEFAULT_MH, seed: int = 0, **rff_options) -> list[HDraw]:
    """``M_h`` control-function draws; draw ``k`` depends only on ``(seed, k)``."""
    if M_h < 1:
        raise ValueError("M_h must be at least 1")
    return [draw_h(setup, seed, k, **rff_options) for k in range(M_h)]


# ---------------------------------------------------------------------------
# share maps with a fixed outside share


def iv_share_map(kind: str, panel: MarketPanel, beta, extra=None, u_adjust=None,
                 nu: Optional[np.ndarray] = None) -> np.ndarray:
    """Inside shares summing to ``1 - s0m`` in every market.

    Parameters
    ----------
    kind : {'mnl', 'nl', 'mxl'}
    panel : MarketPanel
        Supplies ``(price, mushy)``, the nests and ``s0``.
    beta : array_like, shape (2,)
        Coefficients on price and mushy.
    extra : float or array_like, optional
        ``rho`` for NL, ``sigma`` (one per characteristic) for MXL.
    u_adjust : ndarray, optional
        Added to the utilities, normally ``h_tilde``.
    nu : ndarray, shape (R, 2), optional
        Simulation draws for MXL.
    """
    if panel.s0 is None:
        raise DataError("panel has no outside shares")
    X = panel.characteristics[..., 1:]
    u = X @ np.asarray(beta, dtype=float)
    if u_adjust is not None:
        u = u + np.asarray(u_adjust, dtype=float)
    if kind == "mnl":
        inside = mnl_from_utilities(u, panel.valid, outside=False)
    elif kind == "nl":
        inside = nl_from_utilities(u, float(np.asarray(extra).reshape(())), panel.nests,
                                   panel.valid, outside=False)
    elif kind == "mxl":
        if nu is None:
            raise ValueError("MXL needs simulation draws")
        inside = mxl_from_utilities(u, X, np.asarray(extra, dtype=float), nu, panel.valid, outside=False)
    else:
        raise ValueError(f"model must be one of {IV_MODELS}")
    return (1.0 - panel.s0)[:, None] * np.where(panel.valid, inside, 0.0)


@dataclass
class MarketRows:
    """Markets together with one control draw, indexable by market."""

    panel: MarketPanel
    h_tilde: np.ndarray

    def take(self, idx) -> "MarketRows":
        idx = np.asarray(idx)
        return MarketRows(self.panel.take(idx), self.h_tilde[idx])

    def __len__(self) -> int:
        return self.panel.num_obs


class IVChoiceModel(ModelClass):
    """Fixed-outside-share MNL, NL or MXL with the control term as an offset.

    Parameters are ``(beta_price, beta_mushy)``, then ``rho`` (NL) or
    ``(sigma_price, sigma_mushy)`` (MXL). The MNL point sits at zero extras.
    """

    def __init__(self, kind: str, R: int = 500, seed: int = 0, rho_max: float = 0.95,
                 sigma_max: float = 10.0, beta_start: float = 5.0):
        if kind not in IV_MODELS:
            raise ValueError(f"model must be one of {IV_MODELS}")
        K = len(IV_CHARACTERISTICS)
        lo, hi, tr = [-np.inf] * K, [np.inf] * K, ["linear"] * K
        names = [f"beta_{c}" for c in IV_CHARACTERISTICS]
        if kind == "nl":
            lo, hi, tr, names = lo + [0.0], hi + [rho_max], tr + ["logit"], names + ["rho"]
        elif kind == "mxl":
            lo, hi, tr = lo + [0.0] * K, hi + [sigma_max] * K, tr + ["logit"] * K
            names = names + [f"sigma_{c}" for c in IV_CHARACTERISTICS]
        slo = [-beta_start] * K + list(lo[K:])
        shi = [beta_start] * K + [min(h, 3.0) for h in hi[K:]]
        self.kind = kind
        self.K = K
        self.nu = simulation_draws(R, K, seed) if kind == "mxl" else None
        super().__init__(f"{kind.upper()}-IV", BoxDomain(lo, hi, tuple(tr), tuple(names), slo, shi),
                         self._predict)

    def _predict(self, theta, rows: MarketRows) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        extra = None if self.kind == "mnl" else theta[self.K:]
        return iv_share_map(self.kind, rows.panel, theta[:self.K], extra, rows.h_tilde, self.nu)

    def embed_mnl(self, beta) -> np.ndarray:
        extra = {"mnl": 0, "nl": 1, "mxl": self.K}[self.kind]
        return np.concatenate([np.asarray(beta, dtype=float)[:self.K], np.zeros(extra)])

    def interior_start(self, beta) -> np.ndarray:
        extra = {"mnl": 0, "nl": 1, "mxl": self.K}[self.kind]
        return np.concatenate([np.asarray(beta, dtype=float)[:self.K], np.full(extra, 0.5)])


def control_baseline() -> ModelClass:
    """Shares from the control term alone (``beta = 0``)."""
    return ModelClass("baseline-IV", BoxDomain(np.empty(0), np.empty(0)),
                      lambda theta, rows: iv_share_map("mnl", rows.panel, np.zeros(2), None, rows.h_tilde))


# ---------------------------------------------------------------------------
# infimum over the control function


@dataclass
class SemiparamFit:
    """Best fit over the control draws.

    Attributes
    ----------
    value : float
        Smallest discrepancy found.
    theta : ndarray
    h_index : int
        Index of the control draw attaining ``value``.
    losses : ndarray, shape (n_markets,)
        Per-market losses at the best fit.
    per_h : ndarray, shape (M_h,)
        Best value for each control draw.
    per_h_theta : list of ndarray
        Minimizer for each control draw.
    """

    value: float
    theta: np.ndarray
    h_index: int
    losses: np.ndarray
    per_h: np.ndarray
    per_h_theta: list = field(default_factory=list)


def semiparam_discrepancy(model: ModelClass, target, panel: MarketPanel, hdraws: Sequence[HDraw],
                          opt: OptimSettings = OptimSettings(n_starts=0), seed: int = 0,
                          warm_starts: Optional[Sequence] = None,
                          per_draw_starts: Optional[Sequence[Sequence]] = None) -> SemiparamFit:
    """Minimize the share discrepancy over parameters and control draws.

    Control draw ``k`` is fitted from ``warm_starts``, ``per_draw_starts[k]``,
    the best parameters found so far and ``opt.n_starts`` Latin-hypercube
    starts (at least one when no warm start is given). Ties between draws go
    to the lower index.
    """
    if not hdraws:
        raise ValueError("need at least one control draw")
    target = np.asarray(target, dtype=float)
    best: Optional[SemiparamFit] = None
    per_h = np.empty(len(hdraws))
    thetas = []
    fixed = [np.asarray(s, dtype=float) for s in (warm_starts or [])]
    for k, hd in enumerate(hdraws):
        spec = DiscrepancySpec("squared_l2", MarketRows(panel, hd.h_tilde))
        starts = fixed + [np.asarray(s, dtype=float) for s in (per_draw_starts[k] if per_draw_starts else [])]
        if best is not None and model.num_params:
            starts.append(best.theta)
        local = opt if (starts or not model.num_params) else \
            OptimSettings(max(opt.n_starts, 1), opt.tol, opt.max_evals)
        fit = fit_class(model, target, spec, local, int_seed(seed, k), starts or None)
        per_h[k] = fit.value
        thetas.append(fit.theta)
        if best is None or fit.value < best.value:
            best = SemiparamFit(fit.value, fit.theta, k, fit.losses, per_h)
    best.per_h = per_h
    best.per_h_theta = thetas
    return best


def fit_iv_models(target, panel: MarketPanel, models: dict, hdraws: Sequence[HDraw],
                  opt: OptimSettings = OptimSettings(n_starts=0), seed: int = 0,
                  screen: Optional[int] = DEFAULT_SCREEN) -> dict:
    """Fit MNL first, then NL and MXL from the embedded MNL solutions.

    The MNL search starts at ``beta = 0`` and at the best earlier optimum.
    On every control draw each richer model is warm-started at the exact MNL
    point of that draw, so its value never exceeds the MNL value. With
    ``screen`` set, the richer models are only refitted on the ``screen``
    control draws where MNL fits best (ties to the lower index). The best MNL
    draw is always among them, so the ordering above still holds.
    """
    fits = {}
    mnl = models.get("mnl") or IVChoiceModel("mnl")
    fits["mnl"] = semiparam_discrepancy(mnl, target, panel, hdraws, opt, seed, [np.zeros(mnl.K)])
    keep = np.arange(len(hdraws))
    if screen is not None and screen < len(hdraws):
        keep = np.sort(np.argsort(fits["mnl"].per_h, kind="stable")[:screen])
    for kind in ("nl", "mxl"):
        if kind in models:
            model = models[kind]
            starts = [[model.embed_mnl(fits["mnl"].per_h_theta[k]),
                       model.interior_start(fits["mnl"].per_h_theta[k])] for k in keep]
            fit = semiparam_discrepancy(model, target, panel, [hdraws[k] for k in keep], opt,
                                        seed + 1, per_draw_starts=starts)
            fit.h_index = int(keep[fit.h_index])
            fits[kind] = fit
    return {k: v for k, v in fits.items() if k in models}


def baseline_discrepancy(target, panel: MarketPanel, hdraws: Sequence[HDraw]) -> SemiparamFit:
    return semiparam_discrepancy(control_baseline(), target, panel, hdraws)


# ---------------------------------------------------------------------------
# restrictiveness


@dataclass
class EndogenousRun:
    """Restrictiveness of each model on one eligible set.

    ``results`` maps model kind to its :class:`RestrictivenessResult`;
    ``fits`` holds the per-draw :class:`SemiparamFit` objects.
    """

    results: dict
    fits: list
    base_fits: list
    setup: ControlSetup


def restrictiveness_endog(models: dict, sampler: ChoiceEligibleSampler, M: int, setup: ControlSetup,
                          M_h: int = DEFAULT_MH, seed: int = 0,
                          opt: OptimSettings = OptimSettings(n_starts=0),
                          workers: Optional[int] = None, rff_options: Optional[dict] = None,
                          screen: Optional[int] = DEFAULT_SCREEN) -> EndogenousRun:
    """Restrictiveness with markets as observations.

    Every pseudo-true draw is compared with the same ``M_h`` control draws,
    both for the models and for the ``beta = 0`` baseline.
    """
    if M < 1:
        raise ValueError("M must be at least 1")
    hdraws = h_candidates(setup, M_h, seed, **(rff_options or {}))
    panel = setup.panel

    def job(m):
        target = sampler.draw(m)
        fits = fit_iv_models(target, panel, models, hdraws, opt, int_seed(seed, m), screen)
        return fits, baseline_discrepancy(target, panel, hdraws)

    out = parallel_map(job, range(M), workers)
    fits = [o[0] for o in out]
    base = [o[1] for o in out]
    base_losses = np.array([b.losses for b in base])
    results = {}
    for kind in models:
        model_losses = np.array([f[kind].losses for f in fits])
        res, _ = estimated_from_losses(model_losses, base_losses, [f[kind].theta for f in fits])
        results[kind] = res
    return EndogenousRun(results, fits, base, setup)


def iv_completeness(panel: MarketPanel, models: dict, hdraws: Sequence[HDraw], B: int = 100,
                    seed: int = 0, opt: OptimSettings = OptimSettings(n_starts=0),
                    screen: Optional[int] = DEFAULT_SCREEN) -> dict:
    """Completeness of each model on the observed shares.

    The models and the ``beta = 0`` baseline are fitted once on all markets.
    The standard error resamples markets with these fits held fixed.
    """
    if panel.shares is None:
        raise DataError("completeness needs observed shares")
    target = panel.shares
    fits = fit_iv_models(target, panel, models, hdraws, opt, seed, screen)
    base = baseline_discrepancy(target, panel, hdraws)
    n = panel.num_obs
    idx = [make_rng(seed, STREAM_BOOTSTRAP, b).integers(0, n, size=n) for b in range(B)]
    out = {}
    for kind, fit in fits.items():
        kappa = completeness_from_losses(fit.value, base.value)
        reps = [completeness_from_losses(fit.losses[i].mean(), base.losses[i].mean())
                for i in idx if base.losses[i].mean() > 0]
        se = float(np.std(reps, ddof=1)) if len(reps) > 1 else float("nan")
        out[kind] = CompletenessResult(float(kappa), se, fit.value, base.value, fit.theta)
    return out
