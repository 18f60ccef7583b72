"""Penalized-spline scatter smoother with GCV.

Fits h(x) = alpha + sum_g f_g(x_g) by penalized least squares over column
groups: each group is either a single predictor (univariate cubic
B-spline term) or several predictors smoothed jointly by a tensor
product of marginal bases, so the surface can carry interactions. The
default is fully additive; ``SmootherSettings.interaction`` joins all
columns into one tensor term, and callers may pass explicit ``groups``.
One shared smoothing weight is chosen by generalized cross-validation on
a fixed log grid. Every term uses knots at predictor quantiles, a
sum-to-zero constraint absorbed by reparameterization, a curvature
penalty, and a null-space shrinkage penalty so lambda -> inf shrinks the
whole term away (EDF -> 1 for pure-noise responses).

The design is factorized once (thin QR + eigendecomposition of the
reparameterized penalty), after which each response-only refit costs
O(n k): the nested bootstrap/permutation loops depend on this.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import eigh, null_space, qr, solve_triangular

from .errors import ArgumentError, DegenerateDesignError
from .splines import BSplineBasis

_RIDGE_REL = 1e-10


@dataclass(frozen=True)
class SmootherSettings:
    """Knobs for the scatter smoother.

    total_dim is split across terms in proportion to the number of
    predictor columns each term smooths (floor min_term_dim per
    univariate term) and capped at n/4 for small samples. A tensor term
    over q columns uses the largest per-direction dimension d with
    d**q inside its share, never below 4. With ``interaction`` all
    predictor columns form one joint tensor term instead of separate
    additive terms. The lambda grid is log-uniform.
    """

    total_dim: int = 40
    min_term_dim: int = 6
    order: int = 4
    n_lambda: int = 61
    log10_lambda: tuple[float, float] = (-8.0, 8.0)
    interaction: bool = False


@dataclass
class _Term:
    cols: tuple[int, ...]
    bases: list[BSplineBasis]
    transform: np.ndarray  # (prod K_d, k_term) constraint null-space basis
    los: tuple[float, ...]
    his: tuple[float, ...]

    def columns(self, x: np.ndarray) -> np.ndarray:
        # Clip to the training box: predictions beyond it hold the
        # boundary value rather than extrapolating polynomials.
        block = None
        for basis, j, lo, hi in zip(self.bases, self.cols, self.los, self.his):
            marg = basis.design_matrix(np.clip(x[:, j], lo, hi))
            block = marg if block is None else _row_kron(block, marg)
        return block @ self.transform


def _row_kron(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    return (a[:, :, None] * b[:, None, :]).reshape(a.shape[0], -1)


class AdditiveSmootherDesign:
    """Factorized smoother design for one predictor matrix.

    Build once per predictor set; call :meth:`fit_values` for every new
    response sharing those predictors. ``groups`` partitions the
    predictor columns into terms: singleton groups get univariate spline
    terms, larger groups get joint tensor-product terms. By default the
    fit is additive (all singletons) unless ``settings.interaction``
    joins every column into one tensor term.
    """

    def __init__(
        self,
        predictors,
        settings: Optional[SmootherSettings] = None,
        groups: Optional[list[tuple[int, ...]]] = None,
        _shared: Optional[tuple["AdditiveSmootherDesign", tuple[int, ...]]] = None,
    ):
        # _shared = (template, columns): reuse the template's term bases,
        # design columns, and penalty blocks for groups whose predictor
        # columns are all listed and identical to the template's.
        # Permutation loops vary one predictor while the rest never
        # change; rebuilding only the changed term keeps those loops
        # cheap.
        self.settings = settings or SmootherSettings()
        x = np.asarray(predictors, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2:
            raise ArgumentError(f"predictors must be 1-D or 2-D, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ArgumentError("predictors contain non-finite values")
        n, p = x.shape
        if n < 8:
            raise ArgumentError(f"need at least 8 rows to smooth, got {n}")
        self.n, self.p = n, p
        self.predictors = x
        self.groups = self._normalize_groups(groups, p)

        total = min(self.settings.total_dim, max(n // 4, self.settings.min_term_dim * p))
        template, shared_cols = _shared if _shared is not None else (None, ())
        tmpl_terms = (
            {t.cols: i for i, t in enumerate(template.terms)} if template is not None else {}
        )
        self.terms = []
        self._term_cols = []
        self._term_pens = []
        for grp in self.groups:
            if template is not None and all(j in shared_cols for j in grp):
                at = tmpl_terms.get(grp)
                if at is None:
                    raise ArgumentError(
                        f"shared predictor group {grp} has no matching template term"
                    )
                for j in grp:
                    if not np.array_equal(x[:, j], template.predictors[:, j]):
                        raise ArgumentError(
                            f"shared predictor column {j} differs from the template"
                        )
                self.terms.append(template.terms[at])
                self._term_cols.append(template._term_cols[at])
                self._term_pens.append(template._term_pens[at])
            else:
                term = self._build_term(x, grp, total * len(grp) // p)
                self.terms.append(term)
                self._term_cols.append(term.columns(x))
                self._term_pens.append(self._term_penalty(term))

        design = np.hstack([np.ones((n, 1))] + self._term_cols)
        k = design.shape[1]
        if k + 2 > n:
            raise DegenerateDesignError(
                f"additive design has {k} columns for {n} rows; reduce total_dim"
            )
        penalty = np.zeros((k, k))
        at = 1
        for block, pen in zip(self._term_cols, self._term_pens):
            kj = block.shape[1]
            penalty[at : at + kj, at : at + kj] = pen
            at += kj

        # Tiny fixed ridge keeps R invertible under accidental collinearity;
        # its effect on RSS/EDF is corrected exactly below.
        eps = _RIDGE_REL * (np.sum(design**2) / k)
        aug = np.vstack([design, np.sqrt(eps) * np.eye(k)])
        r = qr(aug, mode="economic")[1]
        m = solve_triangular(r, penalty.T, trans=1, lower=False)
        m = solve_triangular(r, m.T, trans=1, lower=False)
        lam_eig, u = eigh(0.5 * (m + m.T))
        lam_eig = np.clip(lam_eig, 0.0, None)
        v = solve_triangular(r, u, lower=False)  # R^{-1} U

        self.design = design
        self.eps = eps
        self._v = v
        self._eig = lam_eig
        self._gram_corr = v.T @ v  # C = U^T R^{-T} R^{-1} U
        self._edf_weights = 1.0 - eps * np.diag(self._gram_corr)
        lo, hi = self.settings.log10_lambda
        self.lambda_grid = np.logspace(lo, hi, self.settings.n_lambda)

    def _normalize_groups(
        self, groups: Optional[list[tuple[int, ...]]], p: int
    ) -> tuple[tuple[int, ...], ...]:
        if groups is None:
            if self.settings.interaction and p >= 2:
                return (tuple(range(p)),)
            return tuple((j,) for j in range(p))
        seen: set[int] = set()
        clean = []
        for grp in groups:
            grp = tuple(int(j) for j in np.atleast_1d(grp))
            if not grp:
                raise ArgumentError("predictor groups must be non-empty")
            for j in grp:
                if not 0 <= j < p:
                    raise ArgumentError(
                        f"group column {j} outside predictor range 0..{p - 1}"
                    )
                if j in seen:
                    raise ArgumentError(f"predictor column {j} appears in two groups")
                seen.add(j)
            clean.append(grp)
        if len(seen) != p:
            raise ArgumentError("groups must cover every predictor column exactly once")
        return tuple(clean)

    def _build_term(self, x: np.ndarray, grp: tuple[int, ...], budget: int) -> _Term:
        q = len(grp)
        if q == 1:
            dim = max(self.settings.min_term_dim, budget)
            dims = [dim]
        else:
            # Largest per-direction dimension whose tensor fits the
            # group's share of total_dim; 4 is one cubic span.
            dim = 4
            while (dim + 1) ** q <= budget:
                dim += 1
            dims = [dim] * q
        bases, los, his = [], [], []
        block = None
        for j, dim_j in zip(grp, dims):
            basis, lo, hi = self._marginal_basis(x[:, j], dim_j)
            bases.append(basis)
            los.append(lo)
            his.append(hi)
            marg = basis.design_matrix(x[:, j])
            block = marg if block is None else _row_kron(block, marg)
        z = null_space(block.mean(axis=0)[None, :])
        return _Term(cols=grp, bases=bases, transform=z, los=tuple(los), his=tuple(his))

    def _marginal_basis(self, xj: np.ndarray, dim: int) -> tuple[BSplineBasis, float, float]:
        lo, hi = float(xj.min()), float(xj.max())
        if hi - lo <= 0 or hi - lo < 1e-12 * max(1.0, abs(hi)):
            raise DegenerateDesignError(
                "constant predictor: its smooth term would reduce to the mean"
            )
        order = self.settings.order
        n_breaks = max(2, dim - order + 2)
        qs = np.quantile(xj, np.linspace(0.0, 1.0, n_breaks))
        qs[0], qs[-1] = lo, hi
        breaks = [qs[0]]
        tol = 1e-10 * (hi - lo)
        for q in qs[1:]:
            if q - breaks[-1] > tol:
                breaks.append(q)
        if len(breaks) < 2:
            raise DegenerateDesignError(
                "predictor has too few distinct values for a spline term"
            )
        return BSplineBasis(order, np.asarray(breaks)), lo, hi

    def _term_penalty(self, term: _Term) -> np.ndarray:
        z = term.transform
        # Directionwise curvature: integrated squared second derivative
        # along each group direction, the other directions entering
        # through their function-space Gram. Summands are normalized so
        # one lambda weights all directions comparably.
        pen = None
        for d in range(len(term.bases)):
            block = None
            for e, basis in enumerate(term.bases):
                factor = basis.penalty_gram(2 if e == d else 0)
                block = factor if block is None else np.kron(block, factor)
            scale = np.linalg.norm(block)
            if scale > 0:
                block = block / scale
            pen = block if pen is None else pen + block
        curv = z.T @ pen @ z
        curv = 0.5 * (curv + curv.T)
        scale = np.linalg.norm(curv)
        if scale > 0:
            curv = curv / scale
        w, v = eigh(curv)
        null = v[:, w <= 1e-10 * max(w.max(), 1.0)]
        # Shrinkage of the curvature null space (linear trends and their
        # products) lets lambda -> inf remove the term entirely.
        return curv + null @ null.T

    @property
    def n_columns(self) -> int:
        return self.design.shape[1]

    def design_for(self, predictors) -> np.ndarray:
        x = np.asarray(predictors, dtype=float)
        if x.ndim == 1:
            x = x[:, None]
        if x.shape[1] != self.p:
            raise ArgumentError(f"expected {self.p} predictor columns, got {x.shape[1]}")
        blocks = [np.ones((x.shape[0], 1))]
        blocks += [term.columns(x) for term in self.terms]
        return np.hstack(blocks)

    def fit_values(self, responses) -> "SmootherFit":
        """GCV-smoothed fit of new responses on the precomputed design."""
        y = np.asarray(responses, dtype=float)
        one_d = y.ndim == 1
        if one_d:
            y = y[:, None]
        if y.shape[0] != self.n:
            raise ArgumentError(f"responses have {y.shape[0]} rows, design has {self.n}")
        if not np.all(np.isfinite(y)):
            raise ArgumentError("responses contain non-finite values")

        z = self._v.T @ (self.design.T @ y)  # (k, m)
        lam = self.lambda_grid
        d = 1.0 / (1.0 + lam[:, None] * self._eig[None, :])  # (L, k)
        edf = d @ self._edf_weights
        yy = np.sum(y * y, axis=0)
        z2 = z * z
        rss = np.zeros(lam.size)
        for j in range(y.shape[1]):
            dz = d * z[:, j][None, :]
            corr = np.einsum("lk,kq,lq->l", dz, self._gram_corr, dz)
            rss += yy[j] - 2.0 * (d @ z2[:, j]) + (d * d) @ z2[:, j] - self.eps * corr
        rss = np.clip(rss, 0.0, None)
        gcv = rss / (self.n - edf) ** 2
        pick = lam.size - 1 - int(np.argmin(gcv[::-1]))  # ties -> largest lambda

        dk = d[pick]
        beta = self._v @ (dk[:, None] * z)
        fitted = self.design @ beta
        return SmootherFit(
            coefficients=beta if not one_d else beta[:, 0],
            fitted=fitted if not one_d else fitted[:, 0],
            edf=float(edf[pick]),
            lam=float(lam[pick]),
            gcv=float(gcv[pick]),
        )


@dataclass(frozen=True)
class SmootherFit:
    coefficients: np.ndarray
    fitted: np.ndarray
    edf: float
    lam: float
    gcv: float


@dataclass
class ScatterSmoother:
    """Fitted scatter smoother: carries its design for new predictions."""

    design: AdditiveSmootherDesign = field(repr=False)
    coefficients: np.ndarray = field(repr=False)
    fitted: np.ndarray = field(repr=False)
    edf: float = 0.0
    lam: float = 0.0
    gcv: float = 0.0

    def predict(self, predictors) -> np.ndarray:
        """Evaluate the fitted surface at new predictor rows."""
        return self.design.design_for(predictors) @ self.coefficients


def fit_scatter_smoother(
    predictors,
    responses,
    settings: Optional[SmootherSettings] = None,
    groups: Optional[list[tuple[int, ...]]] = None,
) -> ScatterSmoother:
    """Fit the GCV scatter smoother to (x, y) data.

    Parameters
    ----------
    predictors : array (n,) or (n, p)
    responses : array (n,) or (n, m)
        Multiple response columns share one design and one GCV-chosen
        smoothing weight.
    settings : SmootherSettings, optional
        The default fit is additive across predictor columns; set
        ``interaction=True`` for one joint tensor-product surface.
    groups : list of column-index tuples, optional
        Explicit partition of the predictor columns into smooth terms,
        overriding the additive/interaction default.

    Raises
    ------
    DegenerateDesignError
        For constant predictors (the fit would reduce to the mean) or a
        design with more columns than the data can support.
    """
    design = AdditiveSmootherDesign(predictors, settings, groups=groups)
    fit = design.fit_values(responses)
    return ScatterSmoother(
        design=design,
        coefficients=fit.coefficients,
        fitted=fit.fitted,
        edf=fit.edf,
        lam=fit.lam,
        gcv=fit.gcv,
    )
