"""Dynamical systems, trajectory generation, and noisy observation.

A :class:`DynamicalSystem` bundles a rate function dx/dt = f(x; t, theta)
with metadata the estimators need: parameter count, whether f is affine in
theta, and where an empirical forcing g(t) enters (added to one coordinate's
equation, or replacing one parameter). Rate callables take
``(x, t, theta, g)`` and must broadcast over a leading batch axis of ``x``;
``g is None`` means unforced. Additive injection is applied centrally by
:func:`forced_rate`, so additive systems may ignore their ``g`` argument;
parameter-replacement systems consume it themselves.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ArgumentError, BlowupError
from .rng import SeedLike, rng_from

RateFn = Callable[[np.ndarray, object, np.ndarray, object], np.ndarray]

# States beyond this magnitude count as divergence during integration.
BLOWUP_LIMIT = 1e8

_FORCING_MODES = ("additive", "parameter_replacement")


@dataclass(frozen=True)
class ForcingSpec:
    """Where an empirical forcing g(t) enters a system.

    Parameters
    ----------
    mode : str
        ``"additive"``: g(t) is added to one coordinate's rate equation.
        ``"parameter_replacement"``: g(t) replaces one scalar parameter.
    target : int
        1-based index of the affected coordinate (additive) or of the
        replaced parameter (replacement).
    """

    mode: str
    target: int

    def __post_init__(self):
        if self.mode not in _FORCING_MODES:
            raise ArgumentError(
                f"forcing mode must be one of {_FORCING_MODES}, got {self.mode!r}"
            )
        if not isinstance(self.target, (int, np.integer)) or self.target < 1:
            raise ArgumentError(f"forcing target must be a 1-based index, got {self.target!r}")


@dataclass(frozen=True)
class DynamicalSystem:
    """A parametric rate function with forcing metadata.

    Parameters
    ----------
    name : str
        Identifier used in configs and reports.
    dim : int
        State dimension d.
    n_params : int
        Length of the parameter vector theta.
    rate : callable
        ``rate(x, t, theta, g) -> dx/dt`` with ``x`` of shape (d,) or (n, d)
        and matching output. ``g`` is None, a scalar, or shape (n,).
    linear_in_params : bool
        True when the rate is affine in theta for every fixed (x, t, g);
        enables the closed-form gradient-matching path.
    forcing : ForcingSpec or None
        Default forcing entry point for this system.
    theta_default : ndarray or None
        Conventional parameter values, used by configs when none are given.
    """

    name: str
    dim: int
    n_params: int
    rate: RateFn
    linear_in_params: bool = False
    forcing: Optional[ForcingSpec] = None
    theta_default: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.dim < 1:
            raise ArgumentError(f"system dimension must be >= 1, got {self.dim}")
        if self.n_params < 0:
            raise ArgumentError(f"n_params must be >= 0, got {self.n_params}")
        if self.forcing is not None and self.forcing.mode == "additive":
            if self.forcing.target > self.dim:
                raise ArgumentError(
                    f"additive forcing target {self.forcing.target} exceeds dim {self.dim}"
                )
        if self.forcing is not None and self.forcing.mode == "parameter_replacement":
            if self.forcing.target > self.n_params:
                raise ArgumentError(
                    f"replaced parameter index {self.forcing.target} exceeds "
                    f"n_params {self.n_params}"
                )
        if self.theta_default is not None:
            th = np.asarray(self.theta_default, dtype=float)
            if th.shape != (self.n_params,):
                raise ArgumentError(
                    f"theta_default has shape {th.shape}, expected ({self.n_params},)"
                )
            object.__setattr__(self, "theta_default", _frozen(th))


def with_forcing(system: DynamicalSystem, forcing: Optional[ForcingSpec]) -> DynamicalSystem:
    """Copy of ``system`` with a different forcing entry point."""
    return dataclasses.replace(system, forcing=forcing)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=float)
    a.flags.writeable = False
    return a


def _check_times(times: np.ndarray, what: str) -> np.ndarray:
    t = np.asarray(times, dtype=float)
    if t.ndim != 1 or t.size < 2:
        raise ArgumentError(f"{what} must be a 1-D array with at least 2 entries")
    if not np.all(np.isfinite(t)):
        raise ArgumentError(f"{what} contain non-finite values")
    if np.any(np.diff(t) <= 0):
        raise ArgumentError(f"{what} must be strictly increasing")
    return _frozen(t)


@dataclass(frozen=True)
class Trajectory:
    """States of a system on a time grid: ``states[i]`` is x(times[i])."""

    times: np.ndarray
    states: np.ndarray

    def __post_init__(self):
        t = _check_times(self.times, "trajectory times")
        x = np.asarray(self.states, dtype=float)
        if x.ndim != 2 or x.shape[0] != t.size:
            raise ArgumentError(
                f"states must have shape (len(times), d), got {x.shape} for {t.size} times"
            )
        if not np.all(np.isfinite(x)):
            raise ArgumentError("trajectory states contain non-finite values")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "states", _frozen(x))

    @property
    def dim(self) -> int:
        return self.states.shape[1]


@dataclass(frozen=True)
class TimeSeries:
    """Observed (possibly noisy, possibly partial) values on a time grid."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = _check_times(self.times, "observation times")
        y = np.asarray(self.values, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        if y.ndim != 2 or y.shape[0] != t.size:
            raise ArgumentError(
                f"values must have shape (len(times), m), got {y.shape} for {t.size} times"
            )
        if not np.all(np.isfinite(y)):
            raise ArgumentError("observed values contain non-finite values")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", _frozen(y))

    @property
    def dim(self) -> int:
        return self.values.shape[1]


def _check_theta(system: DynamicalSystem, theta) -> np.ndarray:
    th = np.asarray(theta, dtype=float)
    if th.shape != (system.n_params,):
        raise ArgumentError(
            f"theta has shape {th.shape}, {system.name} expects ({system.n_params},)"
        )
    if not np.all(np.isfinite(th)):
        raise ArgumentError("theta contains non-finite values")
    return th


def forced_rate(system: DynamicalSystem, x: np.ndarray, t, theta: np.ndarray, g=None) -> np.ndarray:
    """Rate with the forcing applied according to the system's ForcingSpec."""
    if g is None or system.forcing is None:
        return system.rate(x, t, theta, None)
    if system.forcing.mode == "additive":
        out = np.array(system.rate(x, t, theta, None), dtype=float)
        out[..., system.forcing.target - 1] += g
        return out
    return system.rate(x, t, theta, g)


def rate_values(
    system: DynamicalSystem,
    states: np.ndarray,
    times: np.ndarray,
    theta: np.ndarray,
    g=None,
) -> np.ndarray:
    """Evaluate the (forced) rate on a batch of states.

    Tries one vectorized call first; falls back to a row loop for user
    systems whose rate does not broadcast.
    """
    states = np.asarray(states, dtype=float)
    times = np.asarray(times, dtype=float)
    if states.ndim != 2 or states.shape[1] != system.dim:
        raise ArgumentError(f"states must have shape (n, {system.dim})")
    try:
        out = np.asarray(forced_rate(system, states, times, theta, g), dtype=float)
        if out.shape == states.shape:
            return out
    except (ValueError, IndexError, TypeError):
        pass
    out = np.empty_like(states)
    for i in range(states.shape[0]):
        gi = None if g is None else (g if np.isscalar(g) else g[i])
        out[i] = forced_rate(system, states[i], float(times[i]), theta, gi)
    return out


def _forcing_value(forcing, t: float) -> float:
    return float(forcing(t))


def integrate(
    system: DynamicalSystem,
    theta,
    x0,
    times,
    forcing: Optional[Callable[[float], float]] = None,
    substep: Optional[float] = None,
) -> Trajectory:
    """Integrate dx/dt = f(x; t, theta [, g]) with classical RK4.

    Uses a fixed internal substep no larger than the smallest grid spacing;
    each grid interval is tiled by the largest uniform substep that divides
    it, so results are deterministic for a given grid and substep.

    Parameters
    ----------
    forcing : callable, optional
        g(t), applied per the system's ForcingSpec. Must be defined on the
        whole time range.
    substep : float, optional
        Upper bound on the internal step. Defaults to the smallest grid
        spacing (one step per interval).

    Raises
    ------
    BlowupError
        If the state leaves |x| <= 1e8 or becomes non-finite.
    """
    th = _check_theta(system, theta)
    t_grid = _check_times(np.asarray(times, dtype=float), "integration times")
    x = np.asarray(x0, dtype=float)
    if x.shape != (system.dim,):
        raise ArgumentError(f"x0 has shape {x.shape}, expected ({system.dim},)")
    if not np.all(np.isfinite(x)):
        raise ArgumentError("x0 contains non-finite values")
    spacing = np.diff(t_grid)
    h_max = spacing.min() if substep is None else float(substep)
    if h_max <= 0:
        raise ArgumentError(f"substep must be positive, got {h_max}")

    def f(xv, tv):
        if forcing is None:
            return np.asarray(system.rate(xv, tv, th, None), dtype=float)
        return np.asarray(forced_rate(system, xv, tv, th, _forcing_value(forcing, tv)), dtype=float)

    out = np.empty((t_grid.size, system.dim))
    out[0] = x
    for i in range(t_grid.size - 1):
        dt = spacing[i]
        n_sub = max(1, math.ceil(dt / h_max - 1e-12))
        h = dt / n_sub
        t = t_grid[i]
        for _ in range(n_sub):
            k1 = f(x, t)
            k2 = f(x + 0.5 * h * k1, t + 0.5 * h)
            k3 = f(x + 0.5 * h * k2, t + 0.5 * h)
            k4 = f(x + h * k3, t + h)
            x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            t += h
            if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > BLOWUP_LIMIT:
                raise BlowupError(f"integration of {system.name} diverged at t={t:.6g}", t)
        out[i + 1] = x
    return Trajectory(t_grid, out)


def simulate_sde(
    system: DynamicalSystem,
    theta,
    sigma2,
    x0,
    times,
    step: float = 1e-3,
    seed: SeedLike = None,
) -> Trajectory:
    """Euler-Maruyama simulation of dx = f(x; t, theta) dt + sigma dW.

    ``step`` is an upper bound: each grid interval is tiled by the largest
    uniform substep <= step that divides it exactly, so the number of noise
    draws is a deterministic function of the grid and the same seed always
    reproduces the same path.

    Parameters
    ----------
    sigma2 : float or sequence
        Diffusion variance per unit time, scalar or one value per coordinate.
    seed : int or SeedSequence
        Required; drives the Brownian increments.
    """
    th = _check_theta(system, theta)
    t_grid = _check_times(np.asarray(times, dtype=float), "simulation times")
    x = np.asarray(x0, dtype=float)
    if x.shape != (system.dim,):
        raise ArgumentError(f"x0 has shape {x.shape}, expected ({system.dim},)")
    s2 = np.broadcast_to(np.asarray(sigma2, dtype=float), (system.dim,)).copy()
    if np.any(s2 < 0) or not np.all(np.isfinite(s2)):
        raise ArgumentError(f"sigma2 must be nonnegative and finite, got {sigma2!r}")
    if step <= 0:
        raise ArgumentError(f"step must be positive, got {step}")
    if seed is None:
        raise ArgumentError("simulate_sde requires an explicit seed")
    rng = rng_from(seed)

    out = np.empty((t_grid.size, system.dim))
    out[0] = x
    for i in range(t_grid.size - 1):
        dt = t_grid[i + 1] - t_grid[i]
        n_sub = max(1, math.ceil(dt / step - 1e-12))
        h = dt / n_sub
        scale = np.sqrt(s2 * h)
        t = t_grid[i]
        for _ in range(n_sub):
            drift = np.asarray(system.rate(x, t, th, None), dtype=float)
            x = x + drift * h + scale * rng.standard_normal(system.dim)
            t += h
            if not np.all(np.isfinite(x)) or np.max(np.abs(x)) > BLOWUP_LIMIT:
                raise BlowupError(f"SDE simulation of {system.name} diverged at t={t:.6g}", t)
        out[i + 1] = x
    return Trajectory(t_grid, out)


def observe(
    trajectory: Trajectory,
    noise_var,
    seed: SeedLike,
    observed: Optional[Sequence[int]] = None,
) -> TimeSeries:
    """Add i.i.d. Gaussian observation noise to (a subset of) coordinates.

    Parameters
    ----------
    noise_var : float or sequence
        Observation noise variance, scalar or one value per observed
        coordinate.
    observed : sequence of int, optional
        1-based coordinate indices to keep, in order. Defaults to all.
    """
    if observed is None:
        idx = np.arange(trajectory.dim)
    else:
        idx = np.asarray(list(observed), dtype=int) - 1
        if idx.size == 0:
            raise ArgumentError("observed must name at least one coordinate")
        if np.any(idx < 0) or np.any(idx >= trajectory.dim):
            raise ArgumentError(
                f"observed indices must lie in 1..{trajectory.dim}, got {list(observed)}"
            )
    v = np.broadcast_to(np.asarray(noise_var, dtype=float), (idx.size,))
    if np.any(v < 0) or not np.all(np.isfinite(v)):
        raise ArgumentError(f"noise_var must be nonnegative and finite, got {noise_var!r}")
    rng = rng_from(seed)
    clean = trajectory.states[:, idx]
    noisy = clean + np.sqrt(v) * rng.standard_normal(clean.shape)
    return TimeSeries(trajectory.times, noisy)


def scale_rate(system: DynamicalSystem, factor: float) -> DynamicalSystem:
    """System with its rate multiplied by a constant (time speed-up)."""
    if not np.isfinite(factor) or factor == 0:
        raise ArgumentError(f"scale factor must be finite and nonzero, got {factor}")
    base = system.rate

    def scaled(x, t, theta, g):
        return factor * np.asarray(base(x, t, theta, g), dtype=float)

    return dataclasses.replace(system, name=f"{system.name}_x{factor:g}", rate=scaled)


# --- builtin systems -------------------------------------------------------


def _linear2d_rate(x, t, th, g):
    x1, x2 = x[..., 0], x[..., 1]
    return np.stack([th[0] * x1 + th[1] * x2, th[2] * x1 + th[3] * x2], axis=-1)


def _vanderpol_rate(x, t, th, g):
    x1, x2 = x[..., 0], x[..., 1]
    a, b = th
    return np.stack([a * x2, b * (x2 - x1 - x2**3 / 3.0)], axis=-1)


def _rossler_rate(x, t, th, g):
    x1, x2, x3 = x[..., 0], x[..., 1], x[..., 2]
    a, b, c = th
    return np.stack([-x2 - x3, x1 + a * x2, b + x3 * (x1 - c)], axis=-1)


def _rm_log_rate(x, t, th, g):
    # State is (log C, log B); p is replaced by g(t) when forcing is active.
    r, k_c, big_g, k_b, chi, delta, p = th
    if g is not None:
        p = g
    c = np.exp(x[..., 0])
    b = np.exp(x[..., 1])
    uptake = p * big_g / (k_b + p * c)
    return np.stack([r * (1.0 - c / k_c) - uptake * b, chi * uptake * c - delta], axis=-1)


def _vanderpol_order2_rate(x, t, th, g):
    # Second-order scalar model in companion form: state (x, dx/dt).
    x1, x2 = x[..., 0], x[..., 1]
    a, b, c, d, e = th
    return np.stack(
        [x2, a + b * x2 + c * x1 + d * x1**2 + e * x1 * x2**2], axis=-1
    )


_BUILTINS = {
    "linear2d": dict(
        dim=2,
        n_params=4,
        rate=_linear2d_rate,
        linear_in_params=True,
        forcing=ForcingSpec("additive", 2),
        theta_default=(0.0, -1.0, 1.0, 0.0),
    ),
    "vanderpol": dict(
        dim=2,
        n_params=2,
        rate=_vanderpol_rate,
        linear_in_params=True,
        forcing=ForcingSpec("additive", 2),
        theta_default=(0.25, 4.0),
    ),
    "rossler": dict(
        dim=3,
        n_params=3,
        rate=_rossler_rate,
        linear_in_params=True,
        forcing=ForcingSpec("additive", 1),
        theta_default=(0.2, 0.2, 3.0),
    ),
    "rossler_chaotic": dict(
        dim=3,
        n_params=3,
        rate=_rossler_rate,
        linear_in_params=True,
        forcing=ForcingSpec("additive", 1),
        theta_default=(0.2, 0.2, 5.7),
    ),
    "rosenzweig_macarthur_log": dict(
        dim=2,
        n_params=7,
        rate=_rm_log_rate,
        linear_in_params=False,
        forcing=ForcingSpec("parameter_replacement", 7),
        theta_default=(1.0, 6.0, 1.0, 2.0, 0.5, 0.2, 1.0),
    ),
    "vanderpol_order2": dict(
        dim=2,
        n_params=5,
        rate=_vanderpol_order2_rate,
        linear_in_params=True,
        forcing=ForcingSpec("additive", 2),
        theta_default=(0.0, 1.0, -1.0, 0.0, -1.0),
    ),
}


def builtin_system(name: str) -> DynamicalSystem:
    """Look up a builtin system by name.

    Available: linear2d, vanderpol, rossler, rossler_chaotic,
    rosenzweig_macarthur_log, vanderpol_order2.
    """
    try:
        spec = _BUILTINS[name]
    except KeyError:
        known = ", ".join(sorted(_BUILTINS))
        raise ArgumentError(f"unknown system {name!r}; available: {known}") from None
    return DynamicalSystem(
        name=name,
        dim=spec["dim"],
        n_params=spec["n_params"],
        rate=spec["rate"],
        linear_in_params=spec["linear_in_params"],
        forcing=spec["forcing"],
        theta_default=np.asarray(spec["theta_default"], dtype=float),
    )


def builtin_names() -> tuple[str, ...]:
    return tuple(sorted(_BUILTINS))
