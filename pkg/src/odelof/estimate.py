"""Two-stage gradient matching and empirical forcing estimation.

Stage one smooths the data into x_hat(t) (see :mod:`odelof.splines`); the
functions here match model rates to the smooth's derivative:

* :func:`gradient_match` minimizes the weighted quadrature approximation of
  ``integral ||dx_hat/dt - f(x_hat; t, theta)||^2`` over theta, in closed
  form when f is affine in theta and by damped Gauss-Newton otherwise.
* :func:`estimate_forcing` then estimates g(t) = Psi(t) D with theta held
  fixed, either added to one coordinate's equation (closed form) or
  replacing one parameter (Gauss-Newton on D).

``x_hat`` arguments are callables ``x_hat(t, deriv)`` returning state values
or their time derivative; a SplineFunction qualifies.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .errors import ArgumentError, ConvergenceError, RankError
from .rng import SeedLike, rng_from
from .splines import BSplineBasis, SplineFunction
from .systems import DynamicalSystem, rate_values

_GN_MAX_ITER = 100
_GN_TOL = 1e-10
_N_STARTS = 8


def quad_grid(times, per_spacing: int = 4) -> tuple[np.ndarray, np.ndarray]:
    """Trapezoid nodes and weights refining a time grid.

    Each observation interval is split into ``per_spacing`` equal pieces;
    weights are the nonuniform trapezoid rule on the refined grid.
    """
    t = np.asarray(times, dtype=float)
    if t.ndim != 1 or t.size < 2 or np.any(np.diff(t) <= 0):
        raise ArgumentError("times must be 1-D and strictly increasing")
    if per_spacing < 1:
        raise ArgumentError(f"per_spacing must be >= 1, got {per_spacing}")
    pieces = [
        np.linspace(t[i], t[i + 1], per_spacing + 1)[:-1] for i in range(t.size - 1)
    ]
    nodes = np.concatenate(pieces + [t[-1:]])
    h = np.diff(nodes)
    w = np.zeros(nodes.size)
    w[:-1] += 0.5 * h
    w[1:] += 0.5 * h
    return nodes, w


@dataclass(frozen=True)
class GradientMatchFit:
    """Result of matching model rates to a smoothed trajectory.

    ``objective`` is the total weighted squared mismatch; ``objectives``
    breaks it down per state coordinate.
    """

    theta: np.ndarray
    objective: float
    objectives: np.ndarray
    converged: bool
    n_iter: int
    quad_times: np.ndarray
    quad_weights: np.ndarray


def _state_on_grid(xhat, nodes: np.ndarray, dim: int) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(xhat(nodes, 0), dtype=float)
    dx = np.asarray(xhat(nodes, 1), dtype=float)
    if x.ndim == 1:
        x = x[:, None]
        dx = dx[:, None]
    if x.shape != (nodes.size, dim) or dx.shape != (nodes.size, dim):
        raise ArgumentError(
            f"x_hat evaluates to shape {x.shape}, expected ({nodes.size}, {dim})"
        )
    return x, dx


def _resolve_mask(system: DynamicalSystem, theta_init, free_mask) -> tuple[np.ndarray, np.ndarray]:
    if free_mask is None:
        mask = np.ones(system.n_params, dtype=bool)
    else:
        mask = np.asarray(free_mask, dtype=bool)
        if mask.shape != (system.n_params,):
            raise ArgumentError(
                f"free_mask must have shape ({system.n_params},), got {mask.shape}"
            )
    if not mask.any():
        raise ArgumentError("free_mask leaves no parameter to estimate")
    if theta_init is None:
        if not mask.all():
            raise ArgumentError("fixed parameters need values: pass theta_init")
        base = np.zeros(system.n_params)
    else:
        base = np.asarray(theta_init, dtype=float)
        if base.shape != (system.n_params,):
            raise ArgumentError(
                f"theta_init must have shape ({system.n_params},), got {base.shape}"
            )
    return mask, base


def gradient_match(
    xhat,
    system: DynamicalSystem,
    times,
    theta_init=None,
    free_mask=None,
    quad_per_spacing: int = 4,
    max_iter: int = _GN_MAX_ITER,
    tol: float = _GN_TOL,
    seed: SeedLike = 0,
) -> GradientMatchFit:
    """Estimate theta by gradient matching with g held at zero.

    Parameters
    ----------
    xhat : callable
        ``xhat(t, deriv)`` -> values, e.g. a fitted SplineFunction.
    times : array
        Observation grid defining the quadrature (4 nodes per spacing by
        default).
    theta_init : array, optional
        Start for Gauss-Newton and source of values for masked-out (fixed)
        parameters. When omitted for a nonlinear system, a seeded 8-start
        multistart around zero is used.
    free_mask : bool array, optional
        Parameters to estimate; the rest stay at their theta_init values.

    Raises
    ------
    RankError
        If the linear-in-theta design is rank deficient (degenerate
        trajectory).
    ConvergenceError
        If Gauss-Newton cannot produce a finite objective.
    """
    nodes, w = quad_grid(times, quad_per_spacing)
    x, dx = _state_on_grid(xhat, nodes, system.dim)
    mask, base = _resolve_mask(system, theta_init, free_mask)
    sw = np.sqrt(w)

    if system.linear_in_params:
        theta0 = base.copy()
        theta0[mask] = 0.0
        c = rate_values(system, x, nodes, theta0)
        free_idx = np.nonzero(mask)[0]
        cols = np.empty((nodes.size, system.dim, free_idx.size))
        for k, j in enumerate(free_idx):
            tj = theta0.copy()
            tj[j] = 1.0
            cols[:, :, k] = rate_values(system, x, nodes, tj) - c
        a = (sw[:, None, None] * cols).reshape(-1, free_idx.size)
        b = (sw[:, None] * (dx - c)).reshape(-1)
        sol, _, rank, _ = np.linalg.lstsq(a, b, rcond=None)
        if rank < free_idx.size:
            raise RankError(
                f"gradient-matching design is rank deficient ({rank} < {free_idx.size}); "
                "the trajectory does not excite every parameter"
            )
        theta = theta0
        theta[free_idx] = sol
        resid = dx - rate_values(system, x, nodes, theta)
        per_coord = np.einsum("q,qd->d", w, resid**2)
        return GradientMatchFit(
            theta=theta,
            objective=float(per_coord.sum()),
            objectives=per_coord,
            converged=True,
            n_iter=1,
            quad_times=nodes,
            quad_weights=w,
        )

    free_idx = np.nonzero(mask)[0]

    def objective_parts(theta):
        resid = dx - rate_values(system, x, nodes, theta)
        per_coord = np.einsum("q,qd->d", w, resid**2)
        return (sw[:, None] * resid).reshape(-1), per_coord

    if theta_init is not None:
        starts = [base.copy()]
    else:
        rng = rng_from(seed)
        starts = [np.zeros(system.n_params)]
        starts += [rng.standard_normal(system.n_params) for _ in range(_N_STARTS - 1)]
        for s in starts:
            s[~mask] = base[~mask]

    best = None
    for start in starts:
        result = _gauss_newton(objective_parts, start, free_idx, max_iter, tol)
        if result is None:
            continue
        if best is None or result[1] < best[1]:
            best = result
    if best is None:
        raise ConvergenceError(
            f"gradient matching for {system.name} found no finite objective "
            f"from {len(starts)} start(s)"
        )
    theta, obj, per_coord, converged, n_iter = best
    return GradientMatchFit(
        theta=theta,
        objective=float(obj),
        objectives=per_coord,
        converged=converged,
        n_iter=n_iter,
        quad_times=nodes,
        quad_weights=w,
    )


def _gauss_newton(objective_parts, theta0, free_idx, max_iter, tol):
    """Damped Gauss-Newton over theta[free_idx]; returns None if the start
    never reaches a finite objective."""
    theta = np.asarray(theta0, dtype=float).copy()
    r, per_coord = objective_parts(theta)
    if not np.all(np.isfinite(r)):
        return None
    obj = float(r @ r)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        jac = np.empty((r.size, free_idx.size))
        for k, j in enumerate(free_idx):
            h = 1e-6 * max(1.0, abs(theta[j]))
            tp = theta.copy()
            tp[j] += h
            tm = theta.copy()
            tm[j] -= h
            rp, _ = objective_parts(tp)
            rm, _ = objective_parts(tm)
            jac[:, k] = (rp - rm) / (2.0 * h)
        if not np.all(np.isfinite(jac)):
            return None
        step, *_ = np.linalg.lstsq(jac, r, rcond=None)
        scale = 1.0
        improved = False
        while scale > 1e-4:
            trial = theta.copy()
            trial[free_idx] -= scale * step
            r_t, pc_t = objective_parts(trial)
            if np.all(np.isfinite(r_t)):
                obj_t = float(r_t @ r_t)
                if obj_t <= obj:
                    theta, r, per_coord = trial, r_t, pc_t
                    improved = obj_t < obj
                    if abs(obj - obj_t) <= tol * max(obj, 1e-300):
                        obj = obj_t
                        converged = True
                    else:
                        obj = obj_t
                    break
            scale *= 0.5
        if converged or not improved:
            converged = converged or not improved
            break
    return theta, obj, per_coord, converged, it


def gradient_match_order2(xhat, times, quad_per_spacing: int = 4) -> GradientMatchFit:
    """Fit the second-order model x'' = a + b x' + c x + d x^2 + e x (x')^2.

    ``xhat`` must be a scalar smooth; its first and second derivatives are
    evaluated on the quadrature grid and the coefficients come from one
    weighted linear regression. Returns theta = (a, b, c, d, e).
    """
    nodes, w = quad_grid(times, quad_per_spacing)
    x = np.asarray(xhat(nodes, 0), dtype=float)
    if x.ndim != 1:
        x = np.squeeze(x)
    if x.shape != (nodes.size,):
        raise ArgumentError("gradient_match_order2 needs a scalar smooth")
    xd = np.squeeze(np.asarray(xhat(nodes, 1), dtype=float))
    xdd = np.squeeze(np.asarray(xhat(nodes, 2), dtype=float))
    design = np.column_stack([np.ones_like(x), xd, x, x * x, x * xd * xd])
    sw = np.sqrt(w)
    sol, _, rank, _ = np.linalg.lstsq(sw[:, None] * design, sw * xdd, rcond=None)
    if rank < 5:
        raise RankError(
            f"second-order design is rank deficient (rank {rank} < 5); "
            "the trajectory does not separate the regressors"
        )
    resid = xdd - design @ sol
    obj = float(w @ resid**2)
    return GradientMatchFit(
        theta=sol,
        objective=obj,
        objectives=np.array([obj]),
        converged=True,
        n_iter=1,
        quad_times=nodes,
        quad_weights=w,
    )


@dataclass(frozen=True)
class ForcingEstimate:
    """Estimated empirical forcing g(t) = Psi(t) D with theta held fixed.

    ``objective`` is the weighted squared mismatch of the forced model on
    the rows g touches (the target coordinate in additive mode, all
    coordinates in replacement mode); ``objective_unforced`` is the same
    quantity at g's neutral value, for before/after comparison.
    """

    g: SplineFunction
    mode: str
    target: int
    objective: float
    objective_unforced: float
    converged: bool
    n_iter: int


class ForcingOperator:
    """Cached closed-form additive forcing estimator for a fixed grid.

    The forcing design, quadrature, and normal-equation factorization
    depend only on (g_basis, times, penalty), so bootstrap replicates that
    share the observation grid reuse one instance.
    """

    def __init__(
        self,
        system: DynamicalSystem,
        g_basis: BSplineBasis,
        times,
        penalty: float = 0.0,
        quad_per_spacing: int = 4,
    ):
        if system.forcing is None or system.forcing.mode != "additive":
            raise ArgumentError("ForcingOperator requires a system with additive forcing")
        if not np.isfinite(penalty) or penalty < 0:
            raise ArgumentError(f"penalty must be nonnegative, got {penalty!r}")
        self.system = system
        self.basis = g_basis
        self.nodes, self.weights = quad_grid(times, quad_per_spacing)
        self.psi = g_basis.design_matrix(self.nodes)
        gram = self.psi.T @ (self.weights[:, None] * self.psi)
        if penalty > 0:
            gram = gram + penalty * g_basis.penalty_gram(2)
        try:
            self._factor = cho_factor(gram)
        except np.linalg.LinAlgError:
            raise RankError(
                "forcing design is singular; refine the quadrature or add a penalty"
            ) from None

    def fit(self, xhat, theta) -> ForcingEstimate:
        target = self.system.forcing.target - 1
        x, dx = _state_on_grid(xhat, self.nodes, self.system.dim)
        resid = dx[:, target] - rate_values(self.system, x, self.nodes, theta)[:, target]
        coef = cho_solve(self._factor, self.psi.T @ (self.weights * resid))
        post = resid - self.psi @ coef
        return ForcingEstimate(
            g=SplineFunction(self.basis, coef),
            mode="additive",
            target=self.system.forcing.target,
            objective=float(self.weights @ post**2),
            objective_unforced=float(self.weights @ resid**2),
            converged=True,
            n_iter=1,
        )


def estimate_forcing(
    xhat,
    system: DynamicalSystem,
    theta,
    g_basis: BSplineBasis,
    times,
    penalty: float = 0.0,
    quad_per_spacing: int = 4,
    max_iter: int = _GN_MAX_ITER,
    tol: float = _GN_TOL,
) -> ForcingEstimate:
    """Estimate the empirical forcing for a fitted model.

    Additive mode solves a penalized least-squares problem in closed form;
    parameter-replacement mode runs Gauss-Newton on the coefficients D,
    started at the constant function equal to the replaced parameter's
    current value.
    """
    if system.forcing is None:
        raise ArgumentError(f"system {system.name} has no forcing specification")
    theta = np.asarray(theta, dtype=float)
    if theta.shape != (system.n_params,):
        raise ArgumentError(
            f"theta must have shape ({system.n_params},), got {theta.shape}"
        )
    if system.forcing.mode == "additive":
        op = ForcingOperator(system, g_basis, times, penalty, quad_per_spacing)
        return op.fit(xhat, theta)

    nodes, w = quad_grid(times, quad_per_spacing)
    x, dx = _state_on_grid(xhat, nodes, system.dim)
    psi = g_basis.design_matrix(nodes)
    sw = np.sqrt(w)
    if penalty > 0:
        pen_w, pen_v = np.linalg.eigh(g_basis.penalty_gram(2))
        pen_root = (pen_v * np.sqrt(np.clip(pen_w, 0.0, None))).T * np.sqrt(penalty)
    else:
        pen_root = None

    def residual(coef):
        g = psi @ coef
        r = (sw[:, None] * (dx - rate_values(system, x, nodes, theta, g))).reshape(-1)
        if pen_root is not None:
            r = np.concatenate([r, pen_root @ coef])
        return r

    replaced = theta[system.forcing.target - 1]
    coef = np.full(g_basis.size, replaced, dtype=float)  # partition of unity
    r = residual(coef)
    if not np.all(np.isfinite(r)):
        raise ConvergenceError("replacement forcing start produced non-finite residuals")
    obj_unforced = float(r @ r)
    obj = obj_unforced
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        dgh = 1e-6 * max(1.0, float(np.abs(psi @ coef).max()))
        gp = psi @ coef + dgh
        gm = psi @ coef - dgh
        fp = rate_values(system, x, nodes, theta, gp)
        fm = rate_values(system, x, nodes, theta, gm)
        df_dg = (fp - fm) / (2.0 * dgh)  # (nq, d)
        jac = -(sw[:, None] * df_dg).reshape(-1)[:, None] * np.repeat(
            psi, system.dim, axis=0
        )
        if pen_root is not None:
            jac = np.vstack([jac, pen_root])
        step, *_ = np.linalg.lstsq(jac, r, rcond=None)
        scale = 1.0
        improved = False
        while scale > 1e-4:
            trial = coef - scale * step
            r_t = residual(trial)
            if np.all(np.isfinite(r_t)):
                obj_t = float(r_t @ r_t)
                if obj_t <= obj:
                    if abs(obj - obj_t) <= tol * max(obj, 1e-300):
                        converged = True
                    coef, r, obj = trial, r_t, obj_t
                    improved = True
                    break
            scale *= 0.5
        if converged or not improved:
            converged = converged or not improved
            break
    return ForcingEstimate(
        g=SplineFunction(g_basis, coef),
        mode="parameter_replacement",
        target=system.forcing.target,
        objective=obj,
        objective_unforced=obj_unforced,
        converged=converged,
        n_iter=it,
    )
