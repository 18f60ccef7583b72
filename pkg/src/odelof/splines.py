"""B-spline bases, penalized smoothing, and spline-valued functions.

Basis evaluation is delegated to scipy's BSpline; penalty Grams are built
here by per-span Gauss-Legendre quadrature, which is exact because the
integrands are piecewise polynomials.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Union

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.interpolate import BSpline
from scipy.linalg import cho_factor, cho_solve

from .errors import ArgumentError, RankError
from .systems import TimeSeries, _frozen


@dataclass(frozen=True)
class BSplineBasis:
    """Clamped B-spline basis of a given order on a breakpoint grid.

    Parameters
    ----------
    order : int
        Spline order (degree + 1); 4 means cubic.
    breakpoints : ndarray
        Strictly increasing knots including both domain endpoints.
    """

    order: int
    breakpoints: np.ndarray

    def __post_init__(self):
        if not isinstance(self.order, (int, np.integer)) or self.order < 1:
            raise ArgumentError(f"order must be a positive integer, got {self.order!r}")
        bp = np.asarray(self.breakpoints, dtype=float)
        if bp.ndim != 1 or bp.size < 2:
            raise ArgumentError("breakpoints must be a 1-D array with at least 2 entries")
        if not np.all(np.isfinite(bp)):
            raise ArgumentError("breakpoints contain non-finite values")
        if np.any(np.diff(bp) <= 0):
            raise ArgumentError("breakpoints must be strictly increasing")
        object.__setattr__(self, "order", int(self.order))
        object.__setattr__(self, "breakpoints", _frozen(bp))

    @property
    def degree(self) -> int:
        return self.order - 1

    @property
    def domain(self) -> tuple[float, float]:
        return float(self.breakpoints[0]), float(self.breakpoints[-1])

    @property
    def size(self) -> int:
        """Number of basis functions."""
        return self.breakpoints.size - 1 + self.degree

    @property
    def knots(self) -> np.ndarray:
        """Full clamped knot vector (endpoint multiplicity = order)."""
        k = self.degree
        return np.concatenate(
            [np.full(k, self.breakpoints[0]), self.breakpoints, np.full(k, self.breakpoints[-1])]
        )

    @property
    def support_width(self) -> float:
        """Widest basis-function support; order * spacing on uniform grids."""
        k = self.knots
        spans = k[self.order:] - k[: k.size - self.order]
        return float(spans.max())

    def _check_inside(self, t: np.ndarray) -> np.ndarray:
        lo, hi = self.domain
        tol = 1e-9 * (hi - lo)
        if t.size and (t.min() < lo - tol or t.max() > hi + tol):
            raise ArgumentError(
                f"evaluation points must lie in [{lo:g}, {hi:g}]; "
                f"got range [{t.min():g}, {t.max():g}]"
            )
        return np.clip(t, lo, hi)

    def design_matrix(self, t, deriv: int = 0) -> np.ndarray:
        """Evaluate all basis functions (or a derivative) at points ``t``."""
        if deriv < 0 or deriv >= self.order:
            raise ArgumentError(f"deriv must be in 0..{self.order - 1}, got {deriv}")
        t = self._check_inside(np.atleast_1d(np.asarray(t, dtype=float)))
        b = BSpline(self.knots, np.eye(self.size), self.degree, extrapolate=True)
        if deriv:
            b = b.derivative(deriv)
        return b(t)

    def penalty_gram(self, deriv: int = 2) -> np.ndarray:
        """Exact Gram matrix of derivative inner products.

        ``P[i, j] = integral of B_i^(deriv) * B_j^(deriv)`` over the domain,
        computed span by span with a Gauss-Legendre rule of the exact degree.
        """
        if deriv < 0 or deriv >= self.order:
            raise ArgumentError(f"deriv must be in 0..{self.order - 1}, got {deriv}")
        q = self.order - deriv
        xi, wi = _gauss_rule(q)
        a = self.breakpoints[:-1]
        b = self.breakpoints[1:]
        half = 0.5 * (b - a)
        nodes = (0.5 * (a + b)[:, None] + half[:, None] * xi[None, :]).ravel()
        weights = (half[:, None] * wi[None, :]).ravel()
        d = self.design_matrix(nodes, deriv)
        gram = d.T @ (weights[:, None] * d)
        return 0.5 * (gram + gram.T)


@lru_cache(maxsize=16)
def _gauss_rule(q: int) -> tuple[np.ndarray, np.ndarray]:
    return leggauss(q)


def make_basis(order: int, domain: tuple[float, float], knot_spacing: float) -> BSplineBasis:
    """Uniform clamped basis on ``domain`` with knots every ``knot_spacing``.

    The spacing is rounded so an integer number of spans tiles the domain
    exactly.
    """
    lo, hi = float(domain[0]), float(domain[1])
    if not (np.isfinite(lo) and np.isfinite(hi)) or hi <= lo:
        raise ArgumentError(f"domain must be a finite increasing pair, got {domain!r}")
    if not np.isfinite(knot_spacing) or knot_spacing <= 0:
        raise ArgumentError(f"knot_spacing must be positive, got {knot_spacing!r}")
    n_spans = max(1, int(round((hi - lo) / knot_spacing)))
    return BSplineBasis(order, np.linspace(lo, hi, n_spans + 1))


@dataclass(frozen=True)
class SplineFunction:
    """A spline (possibly vector-valued) as basis plus coefficients.

    ``coefficients`` has shape (K,) for a scalar function or (K, m) for m
    outputs sharing one basis.
    """

    basis: BSplineBasis
    coefficients: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=float)
        if c.ndim not in (1, 2) or c.shape[0] != self.basis.size:
            raise ArgumentError(
                f"coefficients must have leading dimension {self.basis.size}, got {c.shape}"
            )
        if not np.all(np.isfinite(c)):
            raise ArgumentError("coefficients contain non-finite values")
        object.__setattr__(self, "coefficients", _frozen(c))

    @property
    def n_outputs(self) -> int:
        return 1 if self.coefficients.ndim == 1 else self.coefficients.shape[1]

    def __call__(self, t, deriv: int = 0):
        """Evaluate the spline or one of its derivatives at ``t``."""
        if deriv < 0 or deriv >= self.basis.order:
            raise ArgumentError(f"deriv must be in 0..{self.basis.order - 1}, got {deriv}")
        scalar_in = np.isscalar(t) or np.ndim(t) == 0
        tt = self.basis._check_inside(np.atleast_1d(np.asarray(t, dtype=float)))
        b = BSpline(self.basis.knots, self.coefficients, self.basis.degree, extrapolate=True)
        if deriv:
            b = b.derivative(deriv)
        out = b(tt)
        return out[0] if scalar_in else out

    def to_dict(self) -> dict:
        """JSON-ready representation; exact float round trip."""
        return {
            "order": self.basis.order,
            "breakpoints": self.basis.breakpoints.tolist(),
            "coefficients": self.coefficients.tolist(),
        }

    @staticmethod
    def from_dict(d: dict) -> "SplineFunction":
        basis = BSplineBasis(int(d["order"]), np.asarray(d["breakpoints"], dtype=float))
        return SplineFunction(basis, np.asarray(d["coefficients"], dtype=float))


class SmoothingOperator:
    """Penalized least-squares smoother with precomputed factorization.

    Fixing (times, basis, penalty) once allows many response vectors to be
    smoothed at the cost of one triangular solve each; the bootstrap loops
    rely on this. Smoothing is linear in the data by construction.
    """

    def __init__(self, times, basis: BSplineBasis, penalty: float):
        t = np.asarray(times, dtype=float)
        if not np.isfinite(penalty) or penalty < 0:
            raise ArgumentError(f"penalty must be nonnegative and finite, got {penalty!r}")
        self.basis = basis
        self.penalty = float(penalty)
        self.times = t
        self.design = basis.design_matrix(t)
        gram = self.design.T @ self.design
        if penalty > 0:
            gram = gram + penalty * basis.penalty_gram(2)
        try:
            self._factor = cho_factor(gram)
        except np.linalg.LinAlgError:
            raise RankError(
                f"smoothing system is singular ({t.size} observations, "
                f"{basis.size} basis functions, penalty={penalty:g}); "
                "increase the penalty or coarsen the knots"
            ) from None

    def fit(self, values) -> SplineFunction:
        y = np.asarray(values, dtype=float)
        one_d = y.ndim == 1
        if one_d:
            y = y[:, None]
        if y.shape[0] != self.times.size:
            raise ArgumentError(
                f"values have {y.shape[0]} rows, operator was built for {self.times.size}"
            )
        coef = cho_solve(self._factor, self.design.T @ y)
        if not np.all(np.isfinite(coef)):
            raise RankError("smoothing produced non-finite coefficients")
        return SplineFunction(self.basis, coef[:, 0] if one_d else coef)


def smooth_timeseries(
    series: Union[TimeSeries, tuple], basis: BSplineBasis, penalty: float
) -> SplineFunction:
    """Fit penalized least-squares spline coordinates to observed values.

    Minimizes ``sum_i ||y_i - s(t_i)||^2 + penalty * integral ||s''||^2``
    per output coordinate, all coordinates sharing the basis and penalty.
    The penalty weight is fixed by the caller; there is no automatic
    selection here.

    Raises
    ------
    RankError
        If the normal equations are singular (e.g. penalty 0 with more
        basis functions than observations).
    """
    if isinstance(series, TimeSeries):
        times, values = series.times, series.values
    else:
        times, values = series
        times = np.asarray(times, dtype=float)
        values = np.asarray(values, dtype=float)
    return SmoothingOperator(times, basis, penalty).fit(values)
