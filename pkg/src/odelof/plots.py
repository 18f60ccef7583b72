"""Plot-ready CSV exports for a diagnostic report.

No rendering happens here: each export is a tidy CSV a notebook or
plotting tool can consume directly. All files use 17-significant-digit
floats and LF endings so reruns are byte-identical.
"""

from __future__ import annotations

import os
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .diagnose import DiagnosticReport
from .errors import ArgumentError, BlowupError
from .smoothers import AdditiveSmootherDesign, SmootherSettings
from .splines import SplineFunction
from .systems import DynamicalSystem, TimeSeries, builtin_system, integrate, rate_values

_SURFACE_SIDE = 41
_CURVE_POINTS = 201


def _write_csv(path: Path, header: list[str], columns: list[np.ndarray]) -> None:
    n = columns[0].shape[0]
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for i in range(n):
            fh.write(",".join(f"{col[i]:.17g}" for col in columns) + "\n")


def export_diagnostic_plots(
    report: DiagnosticReport,
    series: TimeSeries,
    out_dir: Union[str, os.PathLike],
    system: Optional[DynamicalSystem] = None,
) -> list[Path]:
    """Write the four diagnostic plot files for a finished test.

    * ``g_vs_state.csv``: trimmed g-hat against the fitted state, for the
      functional-dependence scatter.
    * ``rate_overlay.csv``: smoothed derivatives against forced model rates
      at every observation time.
    * ``h_surface.csv`` (case 2) or ``h_lag.csv`` (case 3): the fitted
      lack-of-fit smooths.
    * ``series_overlay.csv``: data, smooth, and the bare (unforced) model
      solution started from the smooth's initial state.

    ``system`` defaults to the builtin named in the report; pass it
    explicitly for custom models.
    """
    if series.times.size != report.n_obs:
        raise ArgumentError(
            f"series has {series.times.size} rows, report was built on {report.n_obs}"
        )
    if system is None:
        system = builtin_system(report.model)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    xhat = SplineFunction.from_dict(report.xhat_spline)
    g = SplineFunction.from_dict(report.g_spline)
    theta = np.asarray(report.theta, dtype=float)
    second_order = bool(report.settings.get("second_order"))

    times = series.times
    n = times.size
    sl = slice(report.end_trim, n - report.end_trim)
    x_obs = np.asarray(xhat(times))
    if x_obs.ndim == 1:
        x_obs = x_obs[:, None]
    if second_order:
        states = np.column_stack([xhat(times), xhat(times, 1)])
    else:
        states = x_obs
    g_obs = np.asarray(g(times))
    paths = []

    t_trim = times[sl]
    s_trim = states[sl]
    g_trim = g_obs[sl]
    header = ["time", "g"] + [f"s{j + 1}" for j in range(s_trim.shape[1])]
    cols = [t_trim, g_trim] + [s_trim[:, j] for j in range(s_trim.shape[1])]
    path = out / "g_vs_state.csv"
    _write_csv(path, header, cols)
    paths.append(path)

    dx_obs = np.asarray(xhat(times, 1))
    if dx_obs.ndim == 1:
        dx_obs = dx_obs[:, None]
    if second_order:
        dstates = np.column_stack([xhat(times, 1), xhat(times, 2)])
    else:
        dstates = dx_obs
    f_obs = rate_values(system, states, times, theta, g_obs)
    d = dstates.shape[1]
    header = ["time"] + [f"dxdt{j + 1}" for j in range(d)] + [f"f{j + 1}" for j in range(d)]
    cols = [times] + [dstates[:, j] for j in range(d)] + [f_obs[:, j] for j in range(d)]
    path = out / "rate_overlay.csv"
    _write_csv(path, header, cols)
    paths.append(path)

    paths.append(_export_h(report, out, t_trim, s_trim, g_trim))
    paths.append(_export_series_overlay(report, out, series, xhat, x_obs, system, theta, second_order))
    return paths


def _smoother_settings(report: DiagnosticReport) -> SmootherSettings:
    return SmootherSettings(
        total_dim=int(report.settings.get("smoother_total_dim", 40)),
        interaction=bool(report.settings.get("smoother_interaction", True)),
    )


def _export_h(report, out, t_trim, s_trim, g_trim) -> Path:
    settings = _smoother_settings(report)
    if report.kind == "case2":
        design = AdditiveSmootherDesign(s_trim, settings)
        fit = design.fit_values(g_trim)
        smoother = design
        coef = fit.coefficients
        if s_trim.shape[1] == 1:
            grid = np.linspace(s_trim[:, 0].min(), s_trim[:, 0].max(), _CURVE_POINTS)
            h = smoother.design_for(grid[:, None]) @ coef
            path = out / "h_surface.csv"
            _write_csv(path, ["s1", "h"], [grid, h])
            return path
        g1 = np.linspace(s_trim[:, 0].min(), s_trim[:, 0].max(), _SURFACE_SIDE)
        g2 = np.linspace(s_trim[:, 1].min(), s_trim[:, 1].max(), _SURFACE_SIDE)
        m1, m2 = np.meshgrid(g1, g2, indexing="ij")
        pts = np.column_stack([m1.ravel(), m2.ravel()])
        if s_trim.shape[1] > 2:
            med = np.median(s_trim[:, 2:], axis=0)
            pts = np.column_stack([pts, np.tile(med, (pts.shape[0], 1))])
        h = smoother.design_for(pts) @ coef
        path = out / "h_surface.csv"
        _write_csv(path, ["s1", "s2", "h"], [pts[:, 0], pts[:, 1], h])
        return path

    # case 3: h0 and h1 predictions on the lag-valid rows.
    delta = float(report.delta)
    lag_t = t_trim - delta
    valid = lag_t >= t_trim[0] - 1e-12
    design0 = AdditiveSmootherDesign(s_trim, settings)
    h0 = design0.fit_values(g_trim)
    lagged = np.interp(lag_t[valid], t_trim, g_trim)
    m = s_trim.shape[1]
    # lag term stays additive next to the (possibly joint) state smooth,
    # matching the diagnostic fit
    groups = [tuple(range(m)), (m,)] if settings.interaction and m >= 2 else None
    design1 = AdditiveSmootherDesign(
        np.column_stack([s_trim[valid], lagged]), settings, groups=groups
    )
    h1 = design1.fit_values(g_trim[valid])
    path = out / "h_lag.csv"
    _write_csv(
        path,
        ["time", "g", "h0", "h1"],
        [t_trim[valid], g_trim[valid], h0.fitted[valid], h1.fitted],
    )
    return path


def _export_series_overlay(
    report, out, series, xhat, x_obs, system, theta, second_order
) -> Path:
    times = series.times
    if second_order:
        x0 = np.array([float(xhat(times[0])), float(xhat(times[0], 1))])
    else:
        x0 = x_obs[0]
    spacing = float(np.median(np.diff(times)))
    sol = np.full((times.size, system.dim), np.nan)
    try:
        traj = integrate(system, theta, x0, times, substep=spacing / 4.0)
        sol = traj.states
    except BlowupError as exc:
        k = int(np.searchsorted(times, exc.time))
        if k >= 2:
            try:
                traj = integrate(system, theta, x0, times[:k], substep=spacing / 4.0)
                sol[:k] = traj.states
            except BlowupError:
                pass
    m = series.values.shape[1]
    sol_obs = sol[:, :m] if not second_order else sol[:, :1]
    header = (
        ["time"]
        + [f"y{j + 1}" for j in range(m)]
        + [f"xhat{j + 1}" for j in range(m)]
        + [f"model{j + 1}" for j in range(sol_obs.shape[1])]
    )
    cols = (
        [times]
        + [series.values[:, j] for j in range(m)]
        + [x_obs[:, j] for j in range(m)]
        + [sol_obs[:, j] for j in range(sol_obs.shape[1])]
    )
    path = out / "series_overlay.csv"
    _write_csv(path, header, cols)
    return path
