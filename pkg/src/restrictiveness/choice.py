"""Discrete-choice share maps and nonparametric eligible sets.

Each market offers ``J`` inside products and an outside option with utility
zero. Product characteristics are ``x = (1, price, mushy)`` where ``mushy``
is a binary category. Three parametric share maps are provided:

* multinomial logit (MNL), ``p_j = exp(x_j'b) / (1 + sum_k exp(x_k'b))``;
* nested logit (NL) with nests given by the category and nesting
  parameter ``rho`` in ``[0, 1)``, reducing to MNL at ``rho = 0``;
* mixed logit (MXL), MNL averaged over normal random coefficients
  ``b + diag(sigma) nu`` with fixed simulation draws ``nu``.

Pseudo-true share systems are simulated from ``Ns`` consumers whose
utilities combine a price effect that decreases in price within each
category with individual Gaussian-process taste shocks (``np_both``),
random coefficients (``np_mean``) or a random parametric index
(``np_individual``).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numba
import numpy as np

from .engine import DiscrepancySpec, ModelClass, OptimSettings, estimated_from_losses, fit_class
from .exceptions import DataError, RestrictivenessError
from .kernels import GaussianProcessSampler, KernelSpec, SplineBasis, spline_prior_sample
from .optimize import BoxDomain
from .parallel import parallel_map
from .rng import STREAM_CONSUMERS, STREAM_DATA, STREAM_LATENT, STREAM_SPLINE, int_seed, make_rng
from .shape import monotone_decreasing_in_price

ELIGIBLE_SETS = ("np_both", "np_mean", "np_individual")
CHOICE_MODELS = ("mnl", "nl", "mxl")
CHARACTERISTICS = ("constant", "price", "mushy")

# default prior settings for the eligible sets
DEFAULT_CHOICE_KERNEL = KernelSpec("product_categorical", 10.0, 10.0, 0.6)
BETA_PRIOR_SD = 20.0
MAX_REJECTION_TRIES = 1_000_000


# ---------------------------------------------------------------------------
# market data


@dataclass
class MarketPanel:
    """Products by market, padded to a common width.

    Attributes
    ----------
    market_ids : ndarray, shape (n_markets,)
    product_ids : ndarray, shape (n_markets, J)
    price, mushy : ndarray, shape (n_markets, J)
    valid : ndarray of bool, shape (n_markets, J)
        False marks padding where a market has fewer products.
    shares : ndarray, optional
        Observed inside shares (zero at padding).
    s0 : ndarray, optional
        Outside shares.
    instruments : ndarray, optional, shape (n_markets, J, L)
    shifter : ndarray, optional
        Unobserved quality shifter of synthetic data (diagnostics only).
    """

    market_ids: np.ndarray
    product_ids: np.ndarray
    price: np.ndarray
    mushy: np.ndarray
    valid: np.ndarray
    shares: Optional[np.ndarray] = None
    s0: Optional[np.ndarray] = None
    instruments: Optional[np.ndarray] = None
    shifter: Optional[np.ndarray] = None

    def __post_init__(self):
        self.price = np.asarray(self.price, dtype=float)
        self.mushy = np.asarray(self.mushy, dtype=float)
        self.valid = np.asarray(self.valid, dtype=bool)
        shape = self.price.shape
        if self.mushy.shape != shape or self.valid.shape != shape:
            raise DataError("price, mushy and valid must share one shape")
        if not np.all(np.isfinite(self.price[self.valid])):
            raise DataError("prices must be finite")
        if self.shares is not None:
            self.shares = np.where(self.valid, np.asarray(self.shares, dtype=float), 0.0)
            if np.any(self.shares[self.valid] <= 0):
                raise DataError("observed shares must be positive")
            total = self.shares.sum(axis=1)
            if self.s0 is None:
                self.s0 = 1.0 - total
            elif np.any(np.abs(np.asarray(self.s0) + total - 1.0) > 1e-8):
                raise DataError("outside and inside shares must sum to one")
        if self.s0 is not None:
            self.s0 = np.asarray(self.s0, dtype=float)
            if np.any(self.s0 <= 0) or np.any(self.s0 >= 1):
                raise DataError("outside shares must lie strictly between 0 and 1")

    @property
    def num_obs(self) -> int:
        return self.price.shape[0]

    @property
    def num_products(self) -> int:
        return self.price.shape[1]

    @property
    def num_instruments(self) -> int:
        return 0 if self.instruments is None else self.instruments.shape[2]

    @property
    def characteristics(self) -> np.ndarray:
        """``(n_markets, J, 3)`` array of ``(1, price, mushy)``."""
        return np.stack([np.ones_like(self.price), self.price, self.mushy], axis=-1)

    @property
    def nests(self) -> np.ndarray:
        return self.mushy.astype(np.int64)

    def take(self, idx) -> "MarketPanel":
        """Panel of the markets ``idx`` (repeats allowed)."""
        idx = np.asarray(idx)
        opt = lambda a: None if a is None else a[idx]
        return MarketPanel(self.market_ids[idx], self.product_ids[idx], self.price[idx],
                           self.mushy[idx], self.valid[idx], opt(self.shares), opt(self.s0),
                           opt(self.instruments), opt(self.shifter))

    def flat(self, a: np.ndarray) -> np.ndarray:
        """Entries of a ``(n_markets, J, ...)`` array at valid products."""
        return a[self.valid]


def load_markets_csv(path) -> MarketPanel:
    """Read a panel with columns ``market_id, product_id, price, mushy``.

    Optional columns are ``share`` and instruments ``z1 .. zL``.
    """
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        cols = reader.fieldnames or []
        required = {"market_id", "product_id", "price", "mushy"}
        missing = required - set(cols)
        if missing:
            raise DataError(f"market CSV is missing columns {sorted(missing)}")
        zcols = sorted([c for c in cols if c.startswith("z") and c[1:].isdigit()], key=lambda c: int(c[1:]))
        rows = list(reader)
    if not rows:
        raise DataError("market CSV has no rows")
    markets = []
    for r in rows:
        if r["market_id"] not in markets:
            markets.append(r["market_id"])
    index = {m: i for i, m in enumerate(markets)}
    counts = np.zeros(len(markets), dtype=int)
    for r in rows:
        counts[index[r["market_id"]]] += 1
    J = counts.max()
    n = len(markets)
    price = np.zeros((n, J))
    mushy = np.zeros((n, J))
    valid = np.zeros((n, J), dtype=bool)
    pid = np.empty((n, J), dtype=object)
    has_share = "share" in cols and all(r["share"] not in ("", None) for r in rows)
    shares = np.zeros((n, J)) if has_share else None
    inst = np.zeros((n, J, len(zcols))) if zcols else None
    fill = np.zeros(n, dtype=int)
    for line, r in enumerate(rows, start=2):
        m = index[r["market_id"]]
        j = fill[m]
        fill[m] += 1
        try:
            price[m, j] = float(r["price"])
            mushy[m, j] = float(r["mushy"])
            if has_share:
                shares[m, j] = float(r["share"])
            if zcols:
                inst[m, j] = [float(r[c]) for c in zcols]
        except ValueError as exc:
            raise DataError(f"line {line}: {exc}") from exc
        if mushy[m, j] not in (0.0, 1.0):
            raise DataError(f"line {line}: mushy must be 0 or 1")
        pid[m, j] = r["product_id"]
        valid[m, j] = True
    return MarketPanel(np.array(markets, dtype=object), pid, price, mushy, valid, shares, None, inst)


def write_markets_csv(panel: MarketPanel, path) -> None:
    L = panel.num_instruments
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["market_id", "product_id", "price", "mushy"]
                   + (["share"] if panel.shares is not None else [])
                   + [f"z{l + 1}" for l in range(L)])
        for m in range(panel.num_obs):
            for j in range(panel.num_products):
                if not panel.valid[m, j]:
                    continue
                row = [panel.market_ids[m], panel.product_ids[m, j], repr(float(panel.price[m, j])),
                       int(panel.mushy[m, j])]
                if panel.shares is not None:
                    row.append(repr(float(panel.shares[m, j])))
                row += [repr(float(panel.instruments[m, j, l])) for l in range(L)]
                w.writerow(row)


@dataclass(frozen=True)
class SyntheticMarketSettings:
    """Settings of the synthetic cereal-shaped panel.

    Prices are ``price_unit * (base_j + sum_l a_l z_l + endogeneity * shifter
    + noise)`` with the instrument loadings ``a`` planted on a few of the
    candidate instruments. The default unit puts prices near 5.6 with a
    standard deviation of about 1.9, and the default utility keeps outside
    shares between about 0.35 and 0.7. Observed shares follow a logit with the
    latent shifter.
    """

    n_markets: int = 94
    n_products: int = 24
    n_instruments: int = 20
    planted: tuple = ((3, 0.30), (11, 0.22), (6, 0.12))
    endogenous: bool = True
    endogeneity: float = 0.25
    shifter_sd: float = 0.6
    price_noise_sd: float = 0.08
    true_beta: tuple = (-0.5, -0.7, 0.3)
    n_mushy: int = 10
    price_unit: float = 3.0


def generate_markets(settings: SyntheticMarketSettings = SyntheticMarketSettings(),
                     seed: int = 0) -> MarketPanel:
    """Synthetic panel with the shape of the cereal data.

    In the endogenous mode the latent quality shifter enters both price and
    utility; otherwise price is independent of it.
    """
    s = settings
    rng = make_rng(seed, STREAM_DATA)
    n, J, L = s.n_markets, s.n_products, s.n_instruments
    mushy = np.zeros(J)
    mushy[rng.permutation(J)[:s.n_mushy]] = 1.0
    base = rng.uniform(1.2, 2.8, size=J)
    z = rng.standard_normal((n, J, L))
    shifter = rng.normal(0.0, s.shifter_sd, size=(n, J))
    loading = np.zeros(L)
    for l, a in s.planted:
        if l < L:
            loading[l] = a
    k = s.endogeneity if s.endogenous else 0.0
    price = base + z @ loading + k * shifter + rng.normal(0.0, s.price_noise_sd, size=(n, J))
    price = s.price_unit * np.maximum(price, 0.05)
    mushy = np.broadcast_to(mushy, (n, J)).copy()
    b = np.asarray(s.true_beta)
    delta = b[0] + b[1] * price + b[2] * mushy + shifter
    shares = mnl_from_utilities(delta)
    return MarketPanel(np.arange(n), np.broadcast_to(np.arange(J), (n, J)).copy(), price, mushy,
                       np.ones((n, J), dtype=bool), shares, None, z, shifter)


# ---------------------------------------------------------------------------
# share maps


def _masked(u, valid):
    return u if valid is None else np.where(valid, u, -np.inf)


def mnl_from_utilities(u, valid=None, outside: bool = True) -> np.ndarray:
    """Logit shares from utilities ``u`` of shape ``(..., J)``.

    With ``outside`` the outside option (utility 0) enters the denominator;
    otherwise inside shares sum to one.
    """
    u = _masked(np.asarray(u, dtype=float), valid)
    if not np.all(np.isfinite(u) | (u == -np.inf)):
        raise ValueError("utilities must be finite")
    c = u.max(axis=-1, keepdims=True)
    if outside:
        c = np.maximum(c, 0.0)
    e = np.exp(u - c)
    den = e.sum(axis=-1, keepdims=True)
    if outside:
        den = den + np.exp(-c)
    return e / den


def utilities(X, beta) -> np.ndarray:
    return np.asarray(X, dtype=float) @ np.asarray(beta, dtype=float)


def mnl_shares(X, beta, valid=None) -> np.ndarray:
    """MNL inside shares for characteristics ``X`` of shape ``(..., J, K)``."""
    return mnl_from_utilities(utilities(X, beta), valid)


def nl_from_utilities(u, rho: float, nests, valid=None, outside: bool = True) -> np.ndarray:
    """Nested-logit shares; ``nests`` assigns an integer nest to every product.

    Within-nest shares use ``u / (1 - rho)``; nest ``g`` has inclusive value
    ``IV_g = log sum_{j in g} exp(u_j / (1 - rho))`` and probability
    proportional to ``exp((1 - rho) IV_g)``.
    """
    if not 0.0 <= rho < 1.0:
        raise ValueError("rho must lie in [0, 1)")
    u = _masked(np.asarray(u, dtype=float), valid)
    nests = np.broadcast_to(np.asarray(nests), u.shape)
    lam = 1.0 - rho
    v = u / lam
    labels = np.unique(nests)
    iv = np.full(u.shape[:-1] + (labels.size,), -np.inf)
    for g, lab in enumerate(labels):
        vg = np.where(nests == lab, v, -np.inf)
        c = vg.max(axis=-1)
        ok = np.isfinite(c)
        cs = np.where(ok, c, 0.0)
        with np.errstate(divide="ignore"):
            iv[..., g] = np.where(ok, cs + np.log(np.exp(vg - cs[..., None]).sum(axis=-1)), -np.inf)
    top = lam * iv
    c = top.max(axis=-1, keepdims=True)
    if outside:
        c = np.maximum(c, 0.0)
    den = np.exp(top - c).sum(axis=-1, keepdims=True)
    if outside:
        den = den + np.exp(-c)
    log_pg = top - c - np.log(den)
    gidx = np.searchsorted(labels, nests)
    iv_j = np.take_along_axis(iv, gidx, axis=-1)
    lpg_j = np.take_along_axis(log_pg, gidx, axis=-1)
    with np.errstate(invalid="ignore"):
        out = np.exp(v - iv_j + lpg_j)
    return np.where(np.isfinite(v), out, 0.0)


def nl_shares(X, beta, rho, nests, valid=None) -> np.ndarray:
    return nl_from_utilities(utilities(X, beta), rho, nests, valid)


@numba.njit(cache=True)
def _mxl_kernel(u, X, sigma, nu, valid, outside):
    n, J = u.shape
    R = nu.shape[0]
    K = X.shape[2]
    out = np.zeros((n, J))
    util = np.empty(J)
    for r in range(R):
        for m in range(n):
            c = 0.0 if outside else -np.inf
            for j in range(J):
                if valid[m, j]:
                    s = u[m, j]
                    for k in range(K):
                        s += sigma[k] * nu[r, k] * X[m, j, k]
                    util[j] = s
                    if s > c:
                        c = s
            den = np.exp(-c) if outside else 0.0
            for j in range(J):
                if valid[m, j]:
                    util[j] = np.exp(util[j] - c)
                    den += util[j]
            for j in range(J):
                if valid[m, j]:
                    out[m, j] += util[j] / den
    return out / R


def simulation_draws(R: int, K: int, seed: int, *keys: int) -> np.ndarray:
    """Standard normal draws ``(R, K)`` reused across parameter values."""
    if R < 1:
        raise ValueError("R must be at least 1")
    return make_rng(seed, STREAM_CONSUMERS, *keys).standard_normal((R, K))


def mxl_from_utilities(u, X, sigma, nu, valid=None, outside: bool = True) -> np.ndarray:
    """Mixed-logit shares with mean utilities ``u`` and draws ``nu``."""
    u = np.atleast_2d(np.asarray(u, dtype=float))
    X = np.asarray(X, dtype=float).reshape(u.shape + (-1,))
    valid = np.ones(u.shape, dtype=bool) if valid is None else np.asarray(valid, dtype=bool).reshape(u.shape)
    if not np.all(np.isfinite(u[valid])):
        raise ValueError("utilities must be finite")
    return _mxl_kernel(u, X, np.asarray(sigma, dtype=float), np.asarray(nu, dtype=float), valid, outside)


def mxl_shares(X, beta, sigma, R: int = 500, seed: int = 0, valid=None, nu=None) -> np.ndarray:
    """MXL inside shares, simulated with ``R`` draws (or the given ``nu``)."""
    X = np.asarray(X, dtype=float)
    squeeze = X.ndim == 2
    X3 = X[None] if squeeze else X
    if nu is None:
        nu = simulation_draws(R, X3.shape[-1], seed)
    out = mxl_from_utilities(utilities(X3, beta), X3, sigma, nu,
                             None if valid is None else np.asarray(valid).reshape(X3.shape[:2]))
    return out[0] if squeeze else out


def choice_discrepancy(model_shares, pseudo_shares) -> float:
    """Mean over markets of ``sum_j (p_jm - s_jm)**2``."""
    p = np.asarray(model_shares, dtype=float)
    s = np.asarray(pseudo_shares, dtype=float)
    if p.shape != s.shape:
        raise ValueError(f"share systems have different shapes {p.shape} and {s.shape}")
    return float(np.mean(np.sum((p - s) ** 2, axis=-1)))


def uniform_shares(panel: MarketPanel) -> np.ndarray:
    J = panel.valid.sum(axis=1, keepdims=True)
    return np.where(panel.valid, 1.0 / (J + 1.0), 0.0)


# ---------------------------------------------------------------------------
# eligible sets


def inverse_gamma(rng: np.random.Generator, shape: float = 2.0, scale: float = 1.0, size=None):
    """Inverse-gamma draws with density proportional to ``x**(-shape-1) exp(-scale/x)``."""
    return scale / rng.gamma(shape, 1.0, size=size)


def truncated_beta_prior(rng: np.random.Generator, K: int = 3, sd: float = BETA_PRIOR_SD,
                         price_index: int = 1, max_tries: int = MAX_REJECTION_TRIES):
    """Normal coefficient draw conditioned on a negative price coefficient.

    Returns the draw and the number of tries used by rejection.
    """
    for tries in range(1, max_tries + 1):
        beta = rng.normal(0.0, sd, size=K)
        if beta[price_index] < 0:
            return beta, tries
    raise RestrictivenessError("rejection sampler for the coefficient prior did not accept")


@dataclass
class ChoiceEligibleSampler:
    """Simulates pseudo-true share systems on a fixed panel.

    Parameters
    ----------
    panel : MarketPanel
    kind : {'np_both', 'np_mean', 'np_individual'}
    kernel : KernelSpec
        Product kernel over ``(price, mushy)``.
    Ns : int
        Simulated consumers per draw.
    seed : int
    latent : {'gp', 'spline'}
        Prior for the latent of the common price effect.
    """

    panel: MarketPanel
    kind: str = "np_both"
    kernel: KernelSpec = DEFAULT_CHOICE_KERNEL
    Ns: int = 2000
    seed: int = 0
    latent: str = "gp"
    chunk: int = 250
    _gp: Optional[GaussianProcessSampler] = field(default=None, init=False, repr=False)

    def __post_init__(self):
        if self.kind not in ELIGIBLE_SETS:
            raise ValueError(f"eligible set must be one of {ELIGIBLE_SETS}")
        if self.Ns < 1:
            raise ValueError("Ns must be at least 1")
        panel = self.panel
        self.points = np.column_stack([panel.flat(panel.price), panel.flat(panel.mushy)])
        self._gp = GaussianProcessSampler(self.kernel, self.points)
        # the latent of the common component is drawn independently per market
        self._market_gp = [GaussianProcessSampler(self.kernel, np.column_stack(
            [panel.price[mk, panel.valid[mk]], panel.mushy[mk, panel.valid[mk]]]))
            for mk in range(panel.num_obs)]
        if self.latent == "spline":
            p = panel.flat(panel.price)
            self._basis = SplineBasis.build([(p.min(), p.max())], K=4)

    def _scatter(self, flat: np.ndarray) -> np.ndarray:
        out = np.zeros(self.panel.valid.shape + flat.shape[1:])
        out[self.panel.valid] = flat
        return out

    def _spline_values(self, rng_keys: tuple, size: int) -> np.ndarray:
        """``size`` spline draws over all valid products, stacked in columns."""
        p = self.panel.flat(self.panel.price)[:, None]
        cats = self.panel.flat(self.panel.mushy).astype(int)
        cols = []
        for i in range(size):
            draw = spline_prior_sample(None, 4, 10.0, self.seed, *rng_keys, i,
                                       target_sd=np.sqrt(self.kernel.variance), num_categories=2,
                                       category_correlation=self.kernel.categorical_correlation,
                                       basis=self._basis)
            cols.append(draw(p, cats))
        return np.column_stack(cols)

    def common_component(self, m: int) -> np.ndarray:
        """Price effect ``f``, decreasing in price within category, centred per market."""
        panel = self.panel
        if self.latent == "spline":
            h = self._scatter(self._spline_values((STREAM_SPLINE, m), 1)[:, 0])
        else:
            rng = make_rng(self.seed, STREAM_LATENT, m)
            h = np.zeros(panel.valid.shape)
            for mk, gp in enumerate(self._market_gp):
                h[mk, panel.valid[mk]] = gp.draw_values(rng)
        f = np.zeros_like(h)
        for mk in range(panel.num_obs):
            v = panel.valid[mk]
            f[mk, v] = monotone_decreasing_in_price(h[mk, v], panel.price[mk, v], panel.mushy[mk, v])
        return f

    def individual_components(self, rng: np.random.Generator, m: int, chunk: int, size: int) -> np.ndarray:
        """Consumer taste functions, shape ``(size, n_markets, J)``."""
        if self.latent == "spline":
            vals = self._spline_values((STREAM_SPLINE, m, chunk + 1), size)
        else:
            vals = self._gp.draw_values(rng, size)
        return self._scatter(vals).transpose(2, 0, 1)

    def draw(self, m: int, return_parts: bool = False):
        """Inside shares ``(n_markets, J)`` of pseudo-true draw ``m``."""
        rng = make_rng(self.seed, STREAM_CONSUMERS, m)
        X = self.panel.characteristics
        valid = self.panel.valid
        parts = {}
        if self.kind in ("np_both", "np_mean"):
            mean_u = self.common_component(m)
        else:
            beta, tries = truncated_beta_prior(rng, X.shape[-1])
            parts["beta"], parts["tries"] = beta, tries
            mean_u = utilities(X, beta)
        if self.kind == "np_mean":
            sigma = inverse_gamma(rng, 2.0, 1.0, size=X.shape[-1])
            parts["sigma"] = sigma
        total = np.zeros(valid.shape)
        done = 0
        chunk = 0
        while done < self.Ns:
            size = min(self.chunk, self.Ns - done)
            if self.kind == "np_mean":
                nu = rng.standard_normal((size, X.shape[-1]))
                u = mean_u[None] + np.einsum("mjk,ik->imj", X, nu * sigma)
            else:
                u = mean_u[None] + self.individual_components(rng, m, chunk, size)
            total += mnl_from_utilities(u, valid[None]).sum(axis=0)
            done += size
            chunk += 1
        shares = np.where(valid, total / self.Ns, 0.0)
        parts["mean_utility"] = mean_u
        return (shares, parts) if return_parts else shares


def eligible_np_both(panel: MarketPanel, kernel: KernelSpec = DEFAULT_CHOICE_KERNEL, Ns: int = 2000,
                     seed: int = 0, M: int = 1) -> list[np.ndarray]:
    s = ChoiceEligibleSampler(panel, "np_both", kernel, Ns, seed)
    return [s.draw(m) for m in range(M)]


def eligible_np_mean(panel: MarketPanel, kernel: KernelSpec = DEFAULT_CHOICE_KERNEL, Ns: int = 2000,
                     seed: int = 0, M: int = 1) -> list[np.ndarray]:
    s = ChoiceEligibleSampler(panel, "np_mean", kernel, Ns, seed)
    return [s.draw(m) for m in range(M)]


def eligible_np_individual(panel: MarketPanel, kernel: KernelSpec = DEFAULT_CHOICE_KERNEL,
                           Ns: int = 2000, seed: int = 0, M: int = 1) -> list[np.ndarray]:
    s = ChoiceEligibleSampler(panel, "np_individual", kernel, Ns, seed)
    return [s.draw(m) for m in range(M)]


# ---------------------------------------------------------------------------
# model classes


BETA_START = 5.0


def _beta_box(K: int):
    return [-np.inf] * K, [np.inf] * K, ["linear"] * K


class ChoiceModel(ModelClass):
    """MNL, NL or MXL share map as a model class over markets.

    Parameters are ``beta`` (one per characteristic), then ``rho`` for NL or
    ``sigma`` (one per characteristic) for MXL. The MNL point sits at
    ``rho = 0`` or ``sigma = 0``, and :meth:`embed_mnl` maps an MNL solution
    there.
    """

    def __init__(self, kind: str, R: int = 500, seed: int = 0, rho_max: float = 0.95,
                 sigma_max: float = 10.0, K: int = 3):
        if kind not in CHOICE_MODELS:
            raise ValueError(f"model must be one of {CHOICE_MODELS}")
        lo, hi, tr = _beta_box(K)
        names = [f"beta_{c}" for c in CHARACTERISTICS[:K]]
        if kind == "nl":
            lo, hi, tr, names = lo + [0.0], hi + [rho_max], tr + ["logit"], names + ["rho"]
        elif kind == "mxl":
            lo, hi, tr = lo + [0.0] * K, hi + [sigma_max] * K, tr + ["logit"] * K
            names = names + [f"sigma_{c}" for c in CHARACTERISTICS[:K]]
        slo = [-BETA_START] * K + list(lo[K:])
        shi = [BETA_START] * K + [min(h, 3.0) for h in hi[K:]]
        domain = BoxDomain(lo, hi, tuple(tr), tuple(names), slo, shi)
        self.kind = kind
        self.K = K
        self.nu = simulation_draws(R, K, seed) if kind == "mxl" else None
        super().__init__(kind.upper(), domain, self._predict)

    def _predict(self, theta, panel: MarketPanel) -> np.ndarray:
        X = panel.characteristics
        u = utilities(X, theta[:self.K])
        if self.kind == "mnl":
            return mnl_from_utilities(u, panel.valid)
        if self.kind == "nl":
            return nl_from_utilities(u, float(theta[self.K]), panel.nests, panel.valid)
        return mxl_from_utilities(u, X, theta[self.K:], self.nu, panel.valid)

    def embed_mnl(self, beta) -> np.ndarray:
        extra = {"mnl": 0, "nl": 1, "mxl": self.K}[self.kind]
        return np.concatenate([np.asarray(beta, dtype=float), np.zeros(extra)])

    def interior_start(self, beta) -> np.ndarray:
        """MNL solution with the extra parameters moved off the boundary."""
        extra = {"mnl": 0, "nl": 1, "mxl": self.K}[self.kind]
        return np.concatenate([np.asarray(beta, dtype=float), np.full(extra, 0.5)])


def uniform_baseline() -> ModelClass:
    return ModelClass.fixed("uniform", uniform_shares)


def fit_choice_models(target: np.ndarray, panel: MarketPanel, models: dict, spec: DiscrepancySpec,
                      opt: OptimSettings, seed: int, extra_opt: Optional[OptimSettings] = None) -> dict:
    """Fit MNL first, then NL and MXL warm-started at the MNL solution.

    Both richer models start from the exact MNL point (so they never do
    worse than MNL) and from a nearby interior point. The MNL fit also
    starts at ``beta = 0``, the uniform baseline.
    """
    spec = spec.with_points(panel)
    fits = {}
    mnl = models.get("mnl") or ChoiceModel("mnl", K=panel.characteristics.shape[-1])
    fits["mnl"] = fit_class(mnl, target, spec, opt, seed, [np.zeros(mnl.K)])
    beta = fits["mnl"].theta
    extra_opt = extra_opt or opt
    for kind in ("nl", "mxl"):
        if kind in models:
            model = models[kind]
            fits[kind] = fit_class(model, target, spec, extra_opt, seed + 1,
                                   [model.embed_mnl(beta), model.interior_start(beta)])
    return {k: v for k, v in fits.items() if k in models}


@dataclass
class ChoiceDrawFit:
    """Per-market losses and argmins of every model on one pseudo-true draw."""

    draw: int
    base_losses: np.ndarray
    losses: dict
    thetas: dict


def run_choice(panel: MarketPanel, sampler: ChoiceEligibleSampler, models: dict, M: int, seed: int = 0,
               opt: OptimSettings = OptimSettings(n_starts=2),
               workers: Optional[int] = None) -> tuple[dict, list]:
    """Restrictiveness of each model with markets as the observations.

    Returns
    -------
    results : dict
        Model kind to :class:`RestrictivenessResult` in the estimated regime.
    draws : list of ChoiceDrawFit
    """
    if M < 1:
        raise ValueError("M must be at least 1")
    spec = DiscrepancySpec().with_points(panel)
    extra = OptimSettings(0, opt.tol, opt.max_evals)
    baseline = uniform_baseline()

    def job(m):
        target = sampler.draw(m)
        fits = fit_choice_models(target, panel, models, spec, opt, int_seed(seed, m), extra)
        base = fit_class(baseline, target, spec)
        return ChoiceDrawFit(m, base.losses, {k: f.losses for k, f in fits.items()},
                             {k: f.theta for k, f in fits.items()})

    draws = parallel_map(job, range(M), workers)
    base = np.array([d.base_losses for d in draws])
    results = {}
    for kind in models:
        res, _ = estimated_from_losses(np.array([d.losses[kind] for d in draws]), base,
                                       [d.thetas[kind] for d in draws])
        results[kind] = res
    return results, draws
