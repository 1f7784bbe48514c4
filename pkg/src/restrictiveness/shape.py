"""Shape constraints on sampled functions.

Monotonicity is imposed on grid samples by iterative pairwise averaging
(:func:`mce`), and :func:`monotone_sampler` mixes an increasing and a
decreasing projection of a Gaussian-process draw into a single increasing
function. :func:`interpolate` extends a grid sample multilinearly, which
preserves componentwise monotonicity.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numba
import numpy as np
from scipy.interpolate import RegularGridInterpolator
from scipy.special import expit

from .kernels import GaussianProcessSampler, GridSample, KernelSpec, as_points
from .rng import STREAM_LATENT, make_rng

DIRECTIONS = ("increasing", "decreasing", "unordered")
MONOTONE_TOL = 1e-9


class MCEConvergenceWarning(RuntimeWarning):
    """The averaging sweep hit its pass limit before reaching a fixed point."""


class ClampWarning(RuntimeWarning):
    """An interpolation query was outside the grid and was clamped."""


@dataclass(frozen=True)
class PartialOrderSpec:
    """Direction of the order along each input coordinate.

    ``x <= y`` holds when every increasing coordinate satisfies
    ``x_k <= y_k``, every decreasing coordinate ``x_k >= y_k`` and every
    unordered coordinate is equal.
    """

    directions: tuple

    def __post_init__(self):
        object.__setattr__(self, "directions", tuple(self.directions))
        if any(d not in DIRECTIONS for d in self.directions):
            raise ValueError(f"directions must be drawn from {DIRECTIONS}")
        if all(d == "unordered" for d in self.directions):
            raise ValueError("at least one coordinate must be ordered")

    @classmethod
    def increasing(cls, dim: int) -> "PartialOrderSpec":
        return cls(("increasing",) * dim)

    def signs(self) -> np.ndarray:
        return np.array([{"increasing": 1.0, "decreasing": -1.0, "unordered": 0.0}[d]
                         for d in self.directions])


def comparable_pairs(points, order: PartialOrderSpec) -> np.ndarray:
    """All index pairs ``(i, j)`` with ``x_j`` strictly above ``x_i``.

    Pairs come in lexicographic order of ``(i, j)``.
    """
    pts = as_points(points)
    if pts.shape[1] != len(order.directions):
        raise ValueError("order has the wrong number of coordinates")
    signs = order.signs()
    oriented = pts * np.where(signs == 0, 1.0, signs)
    ordered = signs != 0
    diff = oriented[None, :, :] - oriented[:, None, :]          # diff[i, j] = x_j - x_i
    ge = np.all(diff[:, :, ordered] >= 0, axis=2)
    same_unordered = np.all(diff[:, :, ~ordered] == 0, axis=2)
    distinct = np.any(diff != 0, axis=2)
    i, j = np.nonzero(ge & same_unordered & distinct)
    return np.column_stack([i, j]).astype(np.int64)


@numba.njit(cache=True)
def _sweep(values, pairs, max_iter):
    f = values.copy()
    for it in range(max_iter):
        changed = False
        for k in range(pairs.shape[0]):
            i = pairs[k, 0]
            j = pairs[k, 1]
            if f[j] < f[i]:
                avg = 0.5 * (f[i] + f[j])
                f[i] = avg
                f[j] = avg
                changed = True
        if not changed:
            return f, it + 1, True
    return f, max_iter, False


def mce_pairs(values, pairs: np.ndarray, max_iter: int = 500, warn: bool = True):
    """Averaging sweep over precomputed comparable pairs.

    Returns
    -------
    values : ndarray
    passes : int
    converged : bool
    """
    if max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    v = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError("values must be finite")
    out, passes, converged = _sweep(v, pairs, int(max_iter))
    if not converged and warn:
        warnings.warn(f"monotone averaging did not converge in {max_iter} passes",
                      MCEConvergenceWarning, stacklevel=2)
    return out, passes, converged


def mce(values, points, order: PartialOrderSpec, max_iter: int = 500) -> np.ndarray:
    """Make ``values`` monotone by repeated pairwise averaging.

    Every comparable pair ``x_i < x_j`` with ``f_j < f_i`` is replaced by its
    average, sweeping the pairs in lexicographic order until a pass makes no
    change or ``max_iter`` passes have run (a :class:`MCEConvergenceWarning`
    is issued in that case). Averaging conserves the sum of the values.
    """
    out, _, _ = mce_pairs(values, comparable_pairs(points, order), max_iter)
    return out


def is_monotone(values, pairs: np.ndarray, tol: float = MONOTONE_TOL) -> bool:
    """Check ``values[i] <= values[j] + tol`` over comparable pairs."""
    v = np.asarray(values)
    if pairs.size == 0:
        return True
    return bool(np.all(v[pairs[:, 0]] <= v[pairs[:, 1]] + tol))


@dataclass
class MonotoneSample:
    """Increasing function obtained by mixing two projections of a latent draw.

    Attributes
    ----------
    grid : GridSample
        Points and the final monotone values.
    order : PartialOrderSpec
    mix_weight : float
        Weight ``w_plus`` on the increasing projection.
    latent : ndarray
        Unconstrained latent values.
    converged : bool
        Whether both averaging sweeps reached a fixed point.
    """

    grid: GridSample
    order: PartialOrderSpec
    mix_weight: float
    latent: np.ndarray
    converged: bool = True

    @property
    def values(self) -> np.ndarray:
        return self.grid.values


def monotone_from_latent(latent, pairs: np.ndarray, max_iter: int = 500):
    """Mix the increasing and decreasing projections of ``latent``.

    Returns
    -------
    values : ndarray
        ``w g_plus - (1 - w) g_minus``.
    w_plus : float
    converged : bool
    """
    h = np.asarray(latent, dtype=float)
    g_plus, _, c1 = mce_pairs(h, pairs, max_iter)
    neg, _, c2 = mce_pairs(-h, pairs, max_iter)
    g_minus = -neg
    e_plus = float(np.sum((h - g_plus) ** 2))
    e_minus = float(np.sum((h - g_minus) ** 2))
    total = e_plus + e_minus
    w_plus = 0.5 if total == 0.0 else e_minus / total
    return w_plus * g_plus - (1.0 - w_plus) * g_minus, w_plus, c1 and c2


def monotone_sampler(spec: KernelSpec, points, order: PartialOrderSpec, N: int, seed: int,
                     max_iter: int = 500) -> list[MonotoneSample]:
    """Draw ``N`` monotone functions on ``points``.

    Draw ``i`` uses the latent GP generated from ``(seed, i)``.
    """
    if N < 1:
        raise ValueError("N must be at least 1")
    sampler = GaussianProcessSampler(spec, points)
    pairs = comparable_pairs(sampler.points, order)
    out = []
    for i in range(N):
        h = sampler.draw_values(make_rng(seed, STREAM_LATENT, i))
        values, w, conv = monotone_from_latent(h, pairs, max_iter)
        out.append(MonotoneSample(GridSample(sampler.points, values, order), order, w, h, conv))
    return out


def range_transform(g, lo, hi):
    """Map ``g`` into ``[lo, hi]`` through the logistic function."""
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    if np.any(hi < lo):
        raise ValueError("hi must not be below lo")
    out = lo + (hi - lo) * expit(g)
    return float(out) if np.ndim(out) == 0 else out


class GridInterpolant:
    """Multilinear interpolant of values on a rectangular grid.

    Parameters
    ----------
    axes : sequence of 1-D arrays
        Strictly increasing grid coordinates along each dimension.
    values : ndarray
        Values with shape ``tuple(len(a) for a in axes)``.
    """

    def __init__(self, axes: Sequence[np.ndarray], values: np.ndarray):
        self.axes = tuple(np.asarray(a, dtype=float) for a in axes)
        self.lower = np.array([a[0] for a in self.axes])
        self.upper = np.array([a[-1] for a in self.axes])
        self._interp = RegularGridInterpolator(self.axes, np.asarray(values, dtype=float),
                                               method="linear", bounds_error=True)

    @classmethod
    def from_sample(cls, sample: GridSample) -> "GridInterpolant":
        """Build from a sample whose points form a full rectangular grid."""
        pts = sample.points
        axes = [np.unique(pts[:, k]) for k in range(pts.shape[1])]
        shape = tuple(len(a) for a in axes)
        if int(np.prod(shape)) != pts.shape[0]:
            raise ValueError("sample points do not form a full rectangular grid")
        idx = tuple(np.searchsorted(a, pts[:, k]) for k, a in enumerate(axes))
        grid = np.full(shape, np.nan)
        grid[idx] = sample.values
        if np.isnan(grid).any():
            raise ValueError("sample points do not form a full rectangular grid")
        return cls(axes, grid)

    def __call__(self, query) -> tuple[np.ndarray, np.ndarray]:
        """Interpolate at ``query`` of shape ``(m, k)``.

        Returns
        -------
        values : ndarray, shape (m,)
        clamped : ndarray of bool, shape (m,)
            True where the query was outside the grid and was clamped.
        """
        q = np.atleast_2d(np.asarray(query, dtype=float))
        inside = np.all((q >= self.lower) & (q <= self.upper), axis=1)
        q = np.clip(q, self.lower, self.upper)
        return self._interp(q), ~inside


def interpolate(sample, query):
    """Multilinear interpolation of a rectangular-grid sample.

    ``sample`` is a :class:`GridSample` on a full rectangular grid or a
    prebuilt :class:`GridInterpolant`. Queries outside the bounding box are
    clamped to it and a :class:`ClampWarning` is issued. A single query
    vector returns a float; a 2-D array of queries returns an array.
    """
    interp = sample if isinstance(sample, GridInterpolant) else GridInterpolant.from_sample(sample)
    q = np.asarray(query, dtype=float)
    single = q.ndim < 2
    q = q.reshape(1, -1) if single else q
    values, clamped = interp(q)
    if clamped.any():
        warnings.warn(f"{int(clamped.sum())} interpolation queries clamped to the grid box",
                      ClampWarning, stacklevel=2)
    return float(values[0]) if single else values


def softplus(x):
    return np.logaddexp(0.0, x)


def monotone_decreasing_in_price(latent, prices, categories) -> np.ndarray:
    """Price effect that is weakly decreasing in price within each category.

    Within a category, products sorted by price receive
    ``f(p_(k)) = -sum_{r=2..k} softplus(h_(r)) (p_(r) - p_(r-1))`` and the
    result is centred to zero mean over all products passed in (one market).
    """
    h = np.asarray(latent, dtype=float)
    p = np.asarray(prices, dtype=float)
    c = np.asarray(categories)
    if not h.shape == p.shape == c.shape:
        raise ValueError("latent, prices and categories must be conformable")
    out = np.zeros_like(p)
    for cat in np.unique(c):
        idx = np.nonzero(c == cat)[0]
        idx = idx[np.argsort(p[idx], kind="stable")]
        steps = softplus(h[idx[1:]]) * np.diff(p[idx])
        out[idx] = -np.concatenate([[0.0], np.cumsum(steps)])
    return out - out.mean() if out.size else out
