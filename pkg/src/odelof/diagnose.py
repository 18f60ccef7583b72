"""Lack-of-fit tests for fitted ODE models.

The estimated forcing g(t) soaks up whatever the proposed model misses.
Its structure is then classified by two nested tests:

* case 2 ("is g a function of the state?"): F compares the variance
  explained by a smooth h(x_hat) to the residual around it. The null of
  exchangeable g blocks is simulated by permuting blocks of g values.
* case 3 ("does lagged g add information beyond the state?"): F compares
  h1(x_hat, g(t - delta)) against h0(x_hat). The null keeps the state
  relationship and permutes blocks of the residuals eta = g - h0(x_hat),
  reconstructing g* = h0(x_hat) + eta*.

Both are wrapped in a residual bootstrap over the data smoothing, giving
one permutation p-value p_b per bootstrap replicate:
``p_b = (1 + #{F_kb >= F_0b}) / (B2 + 1)``; the test rejects when the mean
of the p_b falls below alpha.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Union

import numpy as np

from . import __version__
from .errors import ArgumentError, OdelofError, TestAbortedError
from .pipeline import PipelineRunner, PipelineSettings
from .rng import SeedLike, as_seed_sequence, rng_from
from .smoothers import AdditiveSmootherDesign
from .splines import SplineFunction
from .systems import DynamicalSystem, TimeSeries


class FStatResult(NamedTuple):
    """F value plus a degeneracy flag (None, "zero_over_zero",
    or "zero_denominator")."""

    value: float
    flag: Optional[str]


def _as_rows(a, name: str) -> np.ndarray:
    v = np.asarray(a, dtype=float)
    if v.ndim == 1:
        v = v[:, None]
    if v.ndim != 2 or v.shape[0] < 2:
        raise ArgumentError(f"{name} must have at least 2 rows, got shape {np.shape(a)}")
    if not np.all(np.isfinite(v)):
        raise ArgumentError(f"{name} contains non-finite values")
    return v


def _ratio(num: float, den: float) -> FStatResult:
    if den == 0.0:
        if num == 0.0:
            return FStatResult(0.0, "zero_over_zero")
        return FStatResult(math.inf, "zero_denominator")
    return FStatResult(num / den, None)


def f_stat_case2(g, h) -> FStatResult:
    """State-dependence statistic: variance of h around its mean over the
    mean squared residual of g around h."""
    gv = _as_rows(g, "g")
    hv = _as_rows(h, "h")
    if gv.shape != hv.shape:
        raise ArgumentError(f"g and h must share a shape, got {gv.shape} vs {hv.shape}")
    num = float(np.mean(np.sum((hv - hv.mean(axis=0)) ** 2, axis=1)))
    den = float(np.mean(np.sum((gv - hv) ** 2, axis=1)))
    return _ratio(num, den)


def f_stat_case3(g, h0, h1) -> FStatResult:
    """Lag-dependence statistic: mean squared gap between the lag-augmented
    and state-only smooths over the residual of g around the former."""
    gv = _as_rows(g, "g")
    h0v = _as_rows(h0, "h0")
    h1v = _as_rows(h1, "h1")
    if not (gv.shape == h0v.shape == h1v.shape):
        raise ArgumentError(
            f"g, h0, h1 must share a shape, got {gv.shape}, {h0v.shape}, {h1v.shape}"
        )
    num = float(np.mean(np.sum((h1v - h0v) ** 2, axis=1)))
    den = float(np.mean(np.sum((gv - h1v) ** 2, axis=1)))
    return _ratio(num, den)


def block_permute(values, block_len: int, rng: np.random.Generator) -> np.ndarray:
    """Permute consecutive blocks of rows; a final short block permutes
    along with the full ones. The row multiset is preserved."""
    v = np.asarray(values, dtype=float)
    n = v.shape[0]
    if block_len < 1:
        raise ArgumentError(f"block_len must be >= 1, got {block_len}")
    if n < 1:
        raise ArgumentError("nothing to permute")
    starts = np.arange(0, n, block_len)
    order = rng.permutation(starts.size)
    chunks = [v[starts[i] : starts[i] + block_len] for i in order]
    return np.concatenate(chunks, axis=0)


def residual_bootstrap_resample(
    values, fitted, rng: np.random.Generator
) -> np.ndarray:
    """Resample observation rows as fitted + resampled joint residuals."""
    y = np.asarray(values, dtype=float)
    f = np.asarray(fitted, dtype=float)
    if y.shape != f.shape:
        raise ArgumentError(f"values {y.shape} and fitted {f.shape} must match")
    resid = y - f
    idx = rng.integers(0, y.shape[0], size=y.shape[0])
    return f + resid[idx]


@dataclass(frozen=True)
class TestConfig:
    """Resampling controls for the diagnostic tests.

    ``seed`` is required: the whole test is a deterministic function of it.
    ``block_len`` defaults to the smallest number of samples whose span
    strictly exceeds the g-basis support width; ``end_trim`` to half a
    block per end; ``delta`` to twice the block span.
    """

    __test__ = False  # keep pytest from collecting the Test* name

    seed: SeedLike
    b1: int = 100
    b2: int = 199
    block_len: Optional[int] = None
    delta: Optional[float] = None
    alpha: float = 0.05
    end_trim: Optional[int] = None
    max_failed_fraction: float = 0.1

    def __post_init__(self):
        if self.b1 < 1 or self.b2 < 1:
            raise ArgumentError(f"b1 and b2 must be >= 1, got {self.b1}, {self.b2}")
        if not 0.0 < self.alpha < 1.0:
            raise ArgumentError(f"alpha must be in (0, 1), got {self.alpha}")
        if self.block_len is not None and self.block_len < 2:
            raise ArgumentError(f"block_len must be >= 2, got {self.block_len}")
        if self.delta is not None and (not np.isfinite(self.delta) or self.delta <= 0):
            raise ArgumentError(f"delta must be positive, got {self.delta}")
        if self.end_trim is not None and self.end_trim < 0:
            raise ArgumentError(f"end_trim must be >= 0, got {self.end_trim}")
        if not 0.0 <= self.max_failed_fraction < 1.0:
            raise ArgumentError(
                f"max_failed_fraction must be in [0, 1), got {self.max_failed_fraction}"
            )


@dataclass(frozen=True)
class DiagnosticReport:
    """Everything needed to reproduce, inspect, and plot one test run."""

    kind: str
    reject: bool
    p_mean: float
    alpha: float
    p_values: tuple
    f0: float
    f0_flag: Optional[str]
    f0_boot: tuple
    n_degenerate: int
    b1: int
    b2: int
    block_len: int
    end_trim: int
    delta: Optional[float]
    spacing: float
    n_obs: int
    n_failed: int
    failure_messages: tuple
    seed_entropy: Union[int, list]
    model: str
    theta: tuple
    edf_h: float
    edf_h_alt: Optional[float]
    g_spline: dict = field(repr=False)
    xhat_spline: dict = field(repr=False)
    settings: dict = field(repr=False)
    version: str = __version__

    def to_dict(self) -> dict:
        d = {
            "kind": self.kind,
            "reject": self.reject,
            "p_mean": self.p_mean,
            "alpha": self.alpha,
            "p_values": list(self.p_values),
            "f0": _json_float(self.f0),
            "f0_flag": self.f0_flag,
            "f0_boot": [_json_float(v) for v in self.f0_boot],
            "n_degenerate": self.n_degenerate,
            "b1": self.b1,
            "b2": self.b2,
            "block_len": self.block_len,
            "end_trim": self.end_trim,
            "delta": self.delta,
            "spacing": self.spacing,
            "n_obs": self.n_obs,
            "n_failed": self.n_failed,
            "failure_messages": list(self.failure_messages),
            "seed_entropy": self.seed_entropy,
            "model": self.model,
            "theta": list(self.theta),
            "edf_h": self.edf_h,
            "edf_h_alt": self.edf_h_alt,
            "g_spline": self.g_spline,
            "xhat_spline": self.xhat_spline,
            "settings": self.settings,
            "version": self.version,
        }
        return d

    @staticmethod
    def from_dict(d: dict) -> "DiagnosticReport":
        return DiagnosticReport(
            kind=d["kind"],
            reject=bool(d["reject"]),
            p_mean=float(d["p_mean"]),
            alpha=float(d["alpha"]),
            p_values=tuple(d["p_values"]),
            f0=_from_json_float(d["f0"]),
            f0_flag=d.get("f0_flag"),
            f0_boot=tuple(_from_json_float(v) for v in d["f0_boot"]),
            n_degenerate=int(d["n_degenerate"]),
            b1=int(d["b1"]),
            b2=int(d["b2"]),
            block_len=int(d["block_len"]),
            end_trim=int(d["end_trim"]),
            delta=None if d["delta"] is None else float(d["delta"]),
            spacing=float(d["spacing"]),
            n_obs=int(d["n_obs"]),
            n_failed=int(d["n_failed"]),
            failure_messages=tuple(d["failure_messages"]),
            seed_entropy=d["seed_entropy"],
            model=d["model"],
            theta=tuple(d["theta"]),
            edf_h=float(d["edf_h"]),
            edf_h_alt=None if d["edf_h_alt"] is None else float(d["edf_h_alt"]),
            g_spline=d["g_spline"],
            xhat_spline=d["xhat_spline"],
            settings=d["settings"],
            version=d.get("version", __version__),
        )

    def save(self, path: Union[str, os.PathLike]) -> None:
        with open(path, "w", newline="\n") as fh:
            fh.write(report_json(self))

    @staticmethod
    def load(path: Union[str, os.PathLike]) -> "DiagnosticReport":
        with open(path) as fh:
            return DiagnosticReport.from_dict(json.load(fh))


def report_json(report: DiagnosticReport) -> str:
    return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"


def _json_float(v: float):
    # JSON has no inf; the F statistic can be legitimately infinite.
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return v


def _from_json_float(v) -> float:
    if isinstance(v, str):
        return float(v)
    return float(v)


def default_block_len(support_width: float, spacing: float) -> int:
    """Smallest sample count whose span strictly exceeds the basis support."""
    if spacing <= 0 or not np.isfinite(spacing):
        raise ArgumentError(f"spacing must be positive, got {spacing}")
    return int(math.floor(support_width / spacing)) + 1


def case2_test(
    series: TimeSeries,
    system: DynamicalSystem,
    config: TestConfig,
    pipeline: Optional[PipelineSettings] = None,
) -> DiagnosticReport:
    """Test whether the estimated forcing depends on the fitted state."""
    return _run_test("case2", series, system, config, pipeline)


def case3_test(
    series: TimeSeries,
    system: DynamicalSystem,
    config: TestConfig,
    pipeline: Optional[PipelineSettings] = None,
) -> DiagnosticReport:
    """Test whether lagged forcing values add information beyond the state."""
    return _run_test("case3", series, system, config, pipeline)


class _Case2Stat:
    def __init__(self, times_trim, smoother_settings, delta=None):
        self.settings = smoother_settings

    def evaluate(self, states_trim, g_trim, perm_rng=None, b2=0, block_len=0):
        design = AdditiveSmootherDesign(states_trim, self.settings)
        fit = design.fit_values(g_trim)
        f0 = f_stat_case2(g_trim, fit.fitted)
        p_b = None
        if perm_rng is not None:
            count = 0
            for _ in range(b2):
                g_k = block_permute(g_trim, block_len, perm_rng)
                fk = design.fit_values(g_k)
                s = f_stat_case2(g_k, fk.fitted)
                if s.value >= f0.value:
                    count += 1
            p_b = (1 + count) / (b2 + 1)
        return f0, p_b, fit.edf, None


class _Case3Stat:
    def __init__(self, times_trim, smoother_settings, delta):
        self.settings = smoother_settings
        self.times = times_trim
        self.delta = float(delta)
        lag_t = times_trim - self.delta
        self.valid = lag_t >= times_trim[0] - 1e-12
        if int(self.valid.sum()) < 16:
            raise ArgumentError(
                f"lag delta={delta:g} leaves {int(self.valid.sum())} usable rows; "
                "shorten the lag or the trim"
            )
        self.lag_times = lag_t[self.valid]

    def _lagged(self, g):
        return np.interp(self.lag_times, self.times, g)

    def evaluate(self, states_trim, g_trim, perm_rng=None, b2=0, block_len=0):
        design0 = AdditiveSmootherDesign(states_trim, self.settings)
        h0 = design0.fit_values(g_trim)
        f0, h1_edf, template = self._stat(states_trim, g_trim, h0.fitted, None)
        p_b = None
        if perm_rng is not None:
            eta = g_trim - h0.fitted
            count = 0
            for _ in range(b2):
                eta_k = block_permute(eta, block_len, perm_rng)
                g_k = h0.fitted + eta_k
                h0_k = design0.fit_values(g_k)
                f_k, _, _ = self._stat(states_trim, g_k, h0_k.fitted, template)
                if f_k.value >= f0.value:
                    count += 1
            p_b = (1 + count) / (b2 + 1)
        return f0, p_b, h0.edf, h1_edf

    def _stat(self, states_trim, g, h0_fitted, template):
        lagged = self._lagged(g)
        x1 = np.column_stack([states_trim[self.valid], lagged])
        m = x1.shape[1] - 1
        # the lagged-g term enters additively next to the state smooth
        # even when the states form one joint interaction term
        groups = [tuple(range(m)), (m,)] if self.settings.interaction and m >= 2 else None
        # state columns are fixed within one bootstrap replicate; only the
        # lagged-g term changes across permutations
        shared = None if template is None else (template, tuple(range(m)))
        design1 = AdditiveSmootherDesign(x1, self.settings, groups=groups, _shared=shared)
        h1 = design1.fit_values(g[self.valid])
        return (
            f_stat_case3(g[self.valid], h0_fitted[self.valid], h1.fitted),
            h1.edf,
            design1,
        )


def _run_test(kind, series, system, config, pipeline):
    if not isinstance(series, TimeSeries):
        raise ArgumentError(f"series must be a TimeSeries, got {type(series).__name__}")
    if not isinstance(config, TestConfig):
        raise ArgumentError(f"config must be a TestConfig, got {type(config).__name__}")
    settings = pipeline or PipelineSettings()
    runner = PipelineRunner(series.times, system, settings)
    fit0 = runner.run(series.values)

    times = series.times
    spacing = float(np.median(np.diff(times)))
    block_len = config.block_len or default_block_len(
        runner.g_basis.support_width, spacing
    )
    trim = config.end_trim if config.end_trim is not None else math.ceil(block_len / 2)
    n = times.size
    if n - 2 * trim < max(2 * block_len, 24):
        raise ArgumentError(
            f"{n} observations minus 2x{trim} trim leave too few points for "
            f"blocks of {block_len}"
        )
    sl = slice(trim, n - trim)
    t_trim = times[sl]
    delta = None
    if kind == "case3":
        delta = config.delta if config.delta is not None else 2.0 * block_len * spacing

    stat_cls = _Case2Stat if kind == "case2" else _Case3Stat
    stat = stat_cls(t_trim, settings.smoother, delta)

    f0, _, edf_h, edf_alt = stat.evaluate(fit0.state_obs[sl], fit0.g_obs[sl])

    root = as_seed_sequence(config.seed)
    rep_seeds = root.spawn(config.b1)
    p_values = []
    f0_boot = []
    n_degenerate = 0
    failures = []
    max_failures = math.floor(config.max_failed_fraction * config.b1)
    for b in range(config.b1):
        boot_ss, perm_ss = rep_seeds[b].spawn(2)
        boot_rng = rng_from(boot_ss)
        y_b = residual_bootstrap_resample(series.values, fit0.fitted_obs, boot_rng)
        try:
            fit_b = runner.run(y_b)
            f0_b, p_b, _, _ = stat.evaluate(
                fit_b.state_obs[sl],
                fit_b.g_obs[sl],
                perm_rng=rng_from(perm_ss),
                b2=config.b2,
                block_len=block_len,
            )
        except OdelofError as exc:
            failures.append(f"replicate {b}: {exc}")
            if len(failures) > max_failures:
                raise TestAbortedError(
                    f"{len(failures)} of {b + 1} bootstrap replicates failed "
                    f"(cap {max_failures} of {config.b1}); last error: {exc}",
                    n_failed=len(failures),
                    n_total=b + 1,
                    messages=failures,
                ) from exc
            continue
        p_values.append(p_b)
        f0_boot.append(f0_b.value)
        if f0_b.flag is not None:
            n_degenerate += 1

    if not p_values:
        raise TestAbortedError(
            "all bootstrap replicates failed",
            n_failed=len(failures),
            n_total=config.b1,
            messages=failures,
        )
    p_mean = float(np.mean(p_values))

    theta = fit0.match.theta
    settings_echo = {
        "x_order": settings.x_order,
        "x_knot_spacing": settings.x_knot_spacing,
        "x_penalty": settings.x_penalty,
        "g_order": settings.g_order,
        "g_knot_spacing": settings.g_knot_spacing,
        "g_penalty": settings.g_penalty,
        "quad_per_spacing": settings.quad_per_spacing,
        "second_order": settings.second_order,
        "smoother_total_dim": settings.smoother.total_dim,
        "smoother_n_lambda": settings.smoother.n_lambda,
        "smoother_interaction": settings.smoother.interaction,
    }
    return DiagnosticReport(
        kind=kind,
        reject=bool(p_mean < config.alpha),
        p_mean=p_mean,
        alpha=config.alpha,
        p_values=tuple(p_values),
        f0=f0.value,
        f0_flag=f0.flag,
        f0_boot=tuple(f0_boot),
        n_degenerate=n_degenerate,
        b1=config.b1,
        b2=config.b2,
        block_len=block_len,
        end_trim=trim,
        delta=delta,
        spacing=spacing,
        n_obs=n,
        n_failed=len(failures),
        failure_messages=tuple(failures[:10]),
        seed_entropy=(
            int(root.entropy)
            if isinstance(root.entropy, (int, np.integer))
            else [int(v) for v in root.entropy]
        ),
        model=runner.system.name,
        theta=tuple(float(v) for v in theta),
        edf_h=float(edf_h),
        edf_h_alt=None if edf_alt is None else float(edf_alt),
        g_spline=fit0.forcing.g.to_dict(),
        xhat_spline=fit0.xhat.to_dict(),
        settings=settings_echo,
        version=__version__,
    )
