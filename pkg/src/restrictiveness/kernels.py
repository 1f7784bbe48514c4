"""Covariance kernels and function-space priors.

Three kinds of random functions are provided:

* exact Gaussian-process draws on a finite set of points
  (:func:`gp_sample`, :class:`GaussianProcessSampler`);
* random Fourier feature expansions whose frequencies are scaled Student-t
  draws, which reproduce a Matern-3/2 covariance in expectation
  (:func:`rff_sample`);
* additive penalized cubic splines with a second-difference prior on the
  coefficients (:func:`spline_prior_sample`).

The Matern-3/2 kernel is

.. math::

    k(x, x') = \\sigma^2 \\left(1 + \\frac{\\sqrt{3} r}{\\ell}\\right)
               \\exp\\left(-\\frac{\\sqrt{3} r}{\\ell}\\right),
    \\qquad r = \\lVert x - x' \\rVert_2 .
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.linalg
from scipy.interpolate import BSpline
from scipy.spatial.distance import cdist

from .exceptions import NumericalError
from .rng import make_rng

KERNEL_FAMILIES = ("matern32", "sqexp", "product_categorical")
_SQRT3 = np.sqrt(3.0)

JITTER_START = 1e-10
JITTER_MAX = 1e-6


@dataclass(frozen=True)
class KernelSpec:
    """Stationary covariance kernel.

    Parameters
    ----------
    family : {'matern32', 'sqexp', 'product_categorical'}
        Kernel family. ``product_categorical`` multiplies a continuous kernel
        on all but the last coordinate by ``1{d = d'} + rho * 1{d != d'}``,
        where ``d`` is the last (categorical) coordinate.
    variance : float
        Marginal variance.
    lengthscale : float
        Length-scale of the continuous part.
    categorical_correlation : float
        Cross-category correlation ``rho`` for ``product_categorical``.
    continuous_family : {'matern32', 'sqexp'}
        Continuous part used by ``product_categorical``.
    """

    family: str = "matern32"
    variance: float = 1.0
    lengthscale: float = 1.0
    categorical_correlation: float = 0.0
    continuous_family: str = "matern32"

    def __post_init__(self):
        if self.family not in KERNEL_FAMILIES:
            raise ValueError(f"unknown kernel family {self.family!r}")
        if self.continuous_family not in ("matern32", "sqexp"):
            raise ValueError(f"unknown continuous family {self.continuous_family!r}")
        if not self.variance > 0:
            raise ValueError("kernel variance must be positive")
        if not self.lengthscale > 0:
            raise ValueError("kernel lengthscale must be positive")
        if not -1.0 <= self.categorical_correlation <= 1.0:
            raise ValueError("categorical_correlation must lie in [-1, 1]")


def _stationary(family: str, r: np.ndarray, variance: float, lengthscale: float) -> np.ndarray:
    if family == "matern32":
        s = _SQRT3 * r / lengthscale
        return variance * (1.0 + s) * np.exp(-s)
    return variance * np.exp(-0.5 * (r / lengthscale) ** 2)


def as_points(points) -> np.ndarray:
    """Coerce to a 2-D ``(n, k)`` array; a 1-D input is a column of scalars."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.ndim != 2:
        raise ValueError("points must be a 1-D or 2-D array")
    return pts


def kernel_matrix(spec: KernelSpec, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cross-covariance matrix ``K[i, j] = k(a_i, b_j)``."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    if spec.family == "product_categorical":
        if a.shape[1] < 2:
            raise ValueError("product_categorical needs a continuous and a categorical coordinate")
        r = cdist(a[:, :-1], b[:, :-1])
        same = a[:, -1][:, None] == b[:, -1][None, :]
        factor = np.where(same, 1.0, spec.categorical_correlation)
        return _stationary(spec.continuous_family, r, spec.variance, spec.lengthscale) * factor
    r = cdist(a, b)
    return _stationary(spec.family, r, spec.variance, spec.lengthscale)


def kernel_eval(spec: KernelSpec, x, x2) -> float:
    """Kernel value ``k(x, x2)`` for two input vectors."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x2 = np.atleast_1d(np.asarray(x2, dtype=float))
    if x.shape != x2.shape:
        raise ValueError(f"dimension mismatch: {x.shape} vs {x2.shape}")
    return float(kernel_matrix(spec, x[None, :], x2[None, :])[0, 0])


def gram_matrix(spec: KernelSpec, points, jitter: float = 0.0) -> np.ndarray:
    """Gram matrix of ``points`` with ``jitter`` added to the diagonal."""
    if jitter < 0:
        raise ValueError("jitter must be non-negative")
    k = kernel_matrix(spec, as_points(points), as_points(points))
    k = 0.5 * (k + k.T)
    k[np.diag_indices_from(k)] += jitter
    return k


def gram_cholesky(spec: KernelSpec, points) -> tuple[np.ndarray, float]:
    """Lower Cholesky factor of the Gram matrix with escalating jitter.

    Jitter starts at ``1e-10 * variance`` and is multiplied by ten until the
    factorization succeeds or ``1e-6 * variance`` is exceeded.

    Returns
    -------
    chol : ndarray
        Lower-triangular factor.
    jitter : float
        Jitter that was finally used.
    """
    base = gram_matrix(spec, as_points(points))
    jitter = JITTER_START * spec.variance
    while jitter <= JITTER_MAX * spec.variance * (1 + 1e-12):
        k = base.copy()
        k[np.diag_indices_from(k)] += jitter
        try:
            return scipy.linalg.cholesky(k, lower=True, check_finite=False), jitter
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise NumericalError("Gram matrix is not positive definite even with maximal jitter")


@dataclass
class GridSample:
    """A function realized on a finite set of points.

    Attributes
    ----------
    points : ndarray, shape (n, k)
    values : ndarray, shape (n,)
    order : PartialOrderSpec, optional
    """

    points: np.ndarray
    values: np.ndarray
    order: Optional[object] = None

    def __post_init__(self):
        self.points = as_points(self.points)
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape != (self.points.shape[0],):
            raise ValueError("values must have one entry per point")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("sample values must be finite")


class GaussianProcessSampler:
    """Exact GP sampler that caches the Cholesky factor for repeated draws.

    Parameters
    ----------
    spec : KernelSpec
    points : array_like, shape (n, k)
    """

    def __init__(self, spec: KernelSpec, points):
        self.spec = spec
        self.points = as_points(points)
        self.chol, self.jitter = gram_cholesky(spec, self.points)

    def draw_values(self, rng: np.random.Generator, size: Optional[int] = None) -> np.ndarray:
        """Return ``L z``; with ``size`` the draws are stacked in columns."""
        n = self.points.shape[0]
        z = rng.standard_normal(n if size is None else (n, size))
        return self.chol @ z

    def sample(self, seed: int, *keys: int) -> GridSample:
        return GridSample(self.points, self.draw_values(make_rng(seed, *keys)))


def gp_sample(spec: KernelSpec, points, seed: int) -> GridSample:
    """Exact Gaussian-process draw at ``points`` from a seeded generator."""
    return GaussianProcessSampler(spec, points).sample(seed)


@dataclass(frozen=True)
class RffBasis:
    """Random Fourier feature expansion.

    ``h(xi) = sqrt(2 / D) * sum_d a_d cos(w_d' xi + b_d)``.
    """

    amplitudes: np.ndarray
    frequencies: np.ndarray
    phases: np.ndarray
    amplitude_sd: float

    @property
    def num_features(self) -> int:
        return self.amplitudes.shape[0]

    @property
    def dim(self) -> int:
        return self.frequencies.shape[1]

    def _features(self, xi: np.ndarray) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        if xi.shape[-1] != self.dim:
            raise ValueError(f"expected inputs of dimension {self.dim}")
        return np.cos(xi @ self.frequencies.T + self.phases)

    def __call__(self, xi) -> np.ndarray:
        """Evaluate at ``xi`` with shape ``(..., dim)``."""
        return np.sqrt(2.0 / self.num_features) * (self._features(xi) @ self.amplitudes)

    def feature_kernel(self, xi, xi2) -> np.ndarray:
        """Kernel implied by this basis with amplitudes at their variance.

        Converges to the Matern-3/2 kernel (product over coordinates) as the
        number of features grows.
        """
        f1 = self._features(xi)
        f2 = self._features(xi2)
        return self.amplitude_sd ** 2 * 2.0 * np.mean(f1 * f2, axis=-1)


def rff_sample(D: int, lengthscale: float, amplitude_sd: float, dim: int, seed: int,
               *keys: int) -> RffBasis:
    """Draw a random Fourier feature basis.

    Frequencies are independent Student-t(3) draws per coordinate divided by
    ``lengthscale``, phases are uniform on ``[0, 2 pi)`` and amplitudes are
    normal with standard deviation ``amplitude_sd``.
    """
    if D < 1 or dim < 1:
        raise ValueError("D and dim must be positive")
    if not lengthscale > 0 or amplitude_sd < 0:
        raise ValueError("lengthscale must be positive and amplitude_sd non-negative")
    rng = make_rng(seed, *keys)
    phases = rng.uniform(0.0, 2.0 * np.pi, size=D)
    amplitudes = rng.normal(0.0, 1.0, size=D) * amplitude_sd
    frequencies = rng.standard_t(3.0, size=(D, dim)) / lengthscale
    return RffBasis(amplitudes, frequencies, phases, float(amplitude_sd))


# ---------------------------------------------------------------------------
# penalized splines


def _truncated_power(x: np.ndarray, knots: np.ndarray) -> np.ndarray:
    cols = [x, x ** 2, x ** 3] + [np.clip(x - k, 0.0, None) ** 3 for k in knots]
    return np.column_stack(cols)


SPLINE_KINDS = ("truncated_power", "bspline")


def _bspline_columns(u: np.ndarray, inner: np.ndarray) -> np.ndarray:
    t = np.concatenate([np.zeros(4), inner, np.ones(4)])
    return BSpline.design_matrix(np.clip(u, 0.0, 1.0), t, 3).toarray()


@dataclass(frozen=True)
class SplineBasis:
    """Additive cubic spline basis with an intercept.

    Two constructions are available per input dimension, both on the range
    rescaled to ``[0, 1]`` with ``K`` equally spaced interior knots:

    ``truncated_power``
        Columns ``x, x^2, x^3, (x - k_1)^3_+, ...`` centred and
        orthonormalized (QR) over reference points, scaled to unit mean
        square. The penalty is a square second-difference operator with zero
        padding, so every non-intercept direction is shrunk.
    ``bspline``
        Cubic B-spline columns centred over reference points (orthogonal to
        the intercept). The penalty is the usual P-spline second difference
        of adjacent coefficients, which leaves linear trends unpenalized.
    """

    lower: np.ndarray
    upper: np.ndarray
    knots: tuple
    centers: tuple
    transforms: tuple
    kind: str = "truncated_power"

    @classmethod
    def build(cls, x_range: Sequence[tuple[float, float]], K: int = 4, grid_size: int = 101,
              reference=None, kind: str = "truncated_power") -> "SplineBasis":
        lower = np.array([lo for lo, _ in x_range], dtype=float)
        upper = np.array([hi for _, hi in x_range], dtype=float)
        if K < 1:
            raise ValueError("K must be at least 1")
        if kind not in SPLINE_KINDS:
            raise ValueError(f"spline kind must be one of {SPLINE_KINDS}")
        if np.any(upper <= lower):
            raise ValueError("spline range must be nondegenerate")
        knots, centers, transforms = [], [], []
        for k in range(len(lower)):
            if reference is None:
                ref = np.linspace(lower[k], upper[k], grid_size)
            else:
                ref = np.asarray(reference, dtype=float)[:, k]
            u = (ref - lower[k]) / (upper[k] - lower[k])
            kn = np.arange(1, K + 1) / (K + 1)
            if kind == "bspline":
                raw = _bspline_columns(u, kn)
                center = raw.mean(axis=0)
                transform = np.eye(raw.shape[1])
            else:
                raw = _truncated_power(u, kn)
                center = raw.mean(axis=0)
                _, r = np.linalg.qr(raw - center)
                # keep numerically independent directions only
                keep = np.abs(np.diag(r)) > 1e-10 * np.abs(np.diag(r)).max()
                transform = np.linalg.pinv(r)[:, keep] * np.sqrt(len(u))
            knots.append(kn)
            centers.append(center)
            transforms.append(transform)
        return cls(lower, upper, tuple(knots), tuple(centers), tuple(transforms), kind)

    @property
    def block_sizes(self) -> list[int]:
        return [t.shape[1] for t in self.transforms]

    @property
    def num_columns(self) -> int:
        return 1 + sum(self.block_sizes)

    def _raw(self, u, kn):
        return _bspline_columns(u, kn) if self.kind == "bspline" else _truncated_power(u, kn)

    def design(self, x) -> np.ndarray:
        x = np.atleast_2d(np.asarray(x, dtype=float))
        blocks = [np.ones((x.shape[0], 1))]
        for k, (kn, c, t) in enumerate(zip(self.knots, self.centers, self.transforms)):
            u = (x[:, k] - self.lower[k]) / (self.upper[k] - self.lower[k])
            blocks.append((self._raw(u, kn) - c) @ t)
        return np.hstack(blocks)

    def penalty_matrix(self) -> np.ndarray:
        """Block-diagonal second-difference penalty ``D'D``; the intercept is unpenalized."""
        p = self.num_columns
        out = np.zeros((p, p))
        start = 1
        for size in self.block_sizes:
            if self.kind == "bspline":
                d = np.diff(np.eye(size), n=2, axis=0)
            else:
                d = np.diff(np.eye(size + 2), n=2, axis=0)[:, 1:-1]
            out[start:start + size, start:start + size] = d.T @ d
            start += size
        return out

    def prior_covariance(self, penalty: float) -> np.ndarray:
        if penalty < 0:
            raise ValueError("penalty must be non-negative")
        prec = np.eye(self.num_columns) + penalty * self.penalty_matrix()
        try:
            return np.linalg.inv(prec)
        except np.linalg.LinAlgError as exc:
            raise NumericalError("singular spline penalty system") from exc


@dataclass(frozen=True)
class SplineDraw:
    """A penalized-spline prior draw, standardized pointwise.

    ``h(x) = target_sd * (B(x) alpha + c[category]) / sqrt(v(x))`` where
    ``v(x)`` is the prior variance of the unstandardized spline at ``x``, so
    every point has marginal variance ``target_sd**2`` like a stationary GP.
    """

    basis: SplineBasis
    coefficients: np.ndarray
    penalty: float
    target_sd: float
    covariance: np.ndarray
    category_effect: np.ndarray = field(default_factory=lambda: np.zeros(0))

    @property
    def knots(self):
        return self.basis.knots

    def __call__(self, x, categories=None) -> np.ndarray:
        b = self.basis.design(x)
        out = b @ self.coefficients
        var = np.einsum("ij,jk,ik->i", b, self.covariance, b)
        if self.category_effect.size:
            if categories is None:
                raise ValueError("this draw needs a category for every point")
            out = out + self.category_effect[np.asarray(categories, dtype=int)]
            var = var + 1.0
        return self.target_sd * out / np.sqrt(var)


def spline_prior_sample(x_range, K: int = 4, penalty: float = 10.0, seed: int = 0, *keys: int,
                        target_sd: float = 1.0, num_categories: int = 0,
                        category_correlation: float = 0.6,
                        basis: Optional[SplineBasis] = None) -> SplineDraw:
    """Draw an additive penalized spline.

    Coefficients follow ``N(0, (I + penalty D'D)^{-1})``. With
    ``num_categories > 0`` an equicorrelated per-category offset with unit
    variance and correlation ``category_correlation`` is added. The draw is
    rescaled pointwise to marginal standard deviation ``target_sd``.
    """
    if basis is None:
        basis = SplineBasis.build(x_range, K=K)
    cov = basis.prior_covariance(penalty)
    rng = make_rng(seed, *keys)
    chol = np.linalg.cholesky(cov + 1e-14 * np.eye(cov.shape[0]))
    alpha = chol @ rng.standard_normal(cov.shape[0])
    effect = np.zeros(0)
    if num_categories > 0:
        c = np.full((num_categories, num_categories), category_correlation)
        np.fill_diagonal(c, 1.0)
        effect = np.linalg.cholesky(c + 1e-14 * np.eye(num_categories)) @ rng.standard_normal(num_categories)
    return SplineDraw(basis, alpha, float(penalty), float(target_sd), cov, effect)
