import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from odelof import (
    ArgumentError,
    BlowupError,
    ForcingSpec,
    TimeSeries,
    Trajectory,
    builtin_names,
    builtin_system,
    integrate,
    observe,
    rate_values,
    scale_rate,
    simulate_sde,
    with_forcing,
)
from odelof.systems import forced_rate

# independently computed reference: Rossler (a, b, c) = (0.2, 0.2, 3),
# x0 = (1, 1, 0), state at t = 10
ROSSLER_T10 = np.array([-0.535644877056667, -3.675735151134275, 0.047310606616105])

# Ornstein-Uhlenbeck marginal: Var[x(1)] for dx = -x dt + dW, x(0) = 0
OU_VAR_1 = 0.5 * (1.0 - np.exp(-2.0))

# van der Pol second coordinate at t = 1, sigma2 = 0.01, x0 = (0, 2):
# frozen from a 100k-path Euler-Maruyama run
VDP_SDE_VAR = 0.004306


def circle_system():
    return builtin_system("linear2d")


class TestIntegrate:
    def test_circular_motion_matches_closed_form(self):
        sys = circle_system()
        times = np.linspace(0.0, 2 * np.pi, 101)
        traj = integrate(sys, (0.0, -1.0, 1.0, 0.0), (1.0, 0.0), times, substep=0.01)
        assert_allclose(traj.states[:, 0], np.cos(times), atol=1e-8)
        assert_allclose(traj.states[:, 1], np.sin(times), atol=1e-8)

    def test_fourth_order_convergence(self):
        sys = circle_system()
        times = np.array([0.0, 2 * np.pi])
        exact = np.array([1.0, 0.0])

        def err(h):
            traj = integrate(sys, (0.0, -1.0, 1.0, 0.0), (1.0, 0.0), times, substep=h)
            return np.max(np.abs(traj.states[-1] - exact))

        ratio = err(0.02) / err(0.01)
        assert ratio >= 12.0

    def test_rossler_reference_point(self):
        sys = builtin_system("rossler")
        traj = integrate(sys, (0.2, 0.2, 3.0), (1.0, 1.0, 0.0), [0.0, 10.0], substep=2e-3)
        assert_allclose(traj.states[-1], ROSSLER_T10, atol=1e-8)

    def test_exponential_decay(self):
        sys = circle_system()
        times = np.linspace(0.0, 3.0, 31)
        traj = integrate(sys, (-1.0, 0.0, 0.0, -1.0), (1.0, 1.0), times, substep=0.01)
        assert_allclose(traj.states[:, 0], np.exp(-times), rtol=1e-8)

    def test_substep_default_uses_grid_spacing(self):
        sys = circle_system()
        times = np.linspace(0.0, 1.0, 11)
        a = integrate(sys, (0.0, -1.0, 1.0, 0.0), (1.0, 0.0), times)
        b = integrate(sys, (0.0, -1.0, 1.0, 0.0), (1.0, 0.0), times, substep=0.1)
        assert_allclose(a.states, b.states, rtol=0, atol=0)

    def test_blowup_raises_with_time(self):
        sys = builtin_system("vanderpol_order2")
        with pytest.raises(BlowupError) as exc:
            integrate(sys, sys.theta_default, (1.0, 0.0), np.linspace(0.0, 55.0, 441))
        assert exc.value.time > 0

    def test_forcing_callable_shifts_target_row(self):
        sys = circle_system()
        times = np.linspace(0.0, 2.0, 21)
        base = integrate(sys, (0.0, 0.0, 0.0, 0.0), (0.0, 0.0), times, substep=0.01)
        forced = integrate(
            sys, (0.0, 0.0, 0.0, 0.0), (0.0, 0.0), times, substep=0.01, forcing=np.cos
        )
        # with zero dynamics, x2(t) integrates the forcing: sin(t)
        assert_allclose(base.states, 0.0, atol=1e-14)
        assert_allclose(forced.states[:, 1], np.sin(times), atol=1e-8)
        assert_allclose(forced.states[:, 0], 0.0, atol=1e-14)

    def test_rejects_bad_x0(self):
        sys = circle_system()
        with pytest.raises(ArgumentError):
            integrate(sys, sys.theta_default, (1.0, 0.0, 0.0), [0.0, 1.0])


class TestSde:
    def test_zero_noise_first_order_convergence(self):
        sys = circle_system()
        theta = (-1.0, 0.0, 0.0, -1.0)

        def err(step):
            traj = simulate_sde(sys, theta, 0.0, (1.0, 1.0), [0.0, 1.0], step=step, seed=5)
            return abs(traj.states[-1, 0] - np.exp(-1.0))

        ratio = err(0.02) / err(0.01)
        assert 1.5 <= ratio <= 3.0

    def test_ou_variance_matches_closed_form(self):
        sys = circle_system()
        theta = (-1.0, 0.0, 0.0, -1.0)
        finals = np.empty(500)
        for i in range(500):
            traj = simulate_sde(
                sys, theta, 1.0, (0.0, 0.0), [0.0, 1.0], step=2e-3, seed=(82, i)
            )
            finals[i] = traj.states[-1, 0]
        assert abs(np.var(finals) - OU_VAR_1) / OU_VAR_1 < 0.2

    def test_vanderpol_variance_matches_reference(self):
        sys = builtin_system("vanderpol")
        finals = np.empty(300)
        for i in range(300):
            traj = simulate_sde(
                sys, (0.25, 4.0), 0.01, (0.0, 2.0), [0.0, 1.0], step=1e-3, seed=(7, i)
            )
            finals[i] = traj.states[-1, 1]
        assert abs(np.var(finals) - VDP_SDE_VAR) / VDP_SDE_VAR < 0.25

    def test_seed_determinism(self):
        sys = builtin_system("vanderpol")
        a = simulate_sde(sys, (0.25, 4.0), 0.01, (0.0, 2.0), [0.0, 1.0], seed=99)
        b = simulate_sde(sys, (0.25, 4.0), 0.01, (0.0, 2.0), [0.0, 1.0], seed=99)
        c = simulate_sde(sys, (0.25, 4.0), 0.01, (0.0, 2.0), [0.0, 1.0], seed=100)
        assert np.array_equal(a.states, b.states)
        assert not np.array_equal(a.states, c.states)

    def test_seed_required(self):
        sys = builtin_system("vanderpol")
        with pytest.raises(ArgumentError, match="seed"):
            simulate_sde(sys, (0.25, 4.0), 0.01, (0.0, 2.0), [0.0, 1.0])


class TestObserve:
    def test_zero_noise_returns_states(self):
        traj = Trajectory(np.array([0.0, 1.0, 2.0]), np.arange(6.0).reshape(3, 2))
        series = observe(traj, 0.0, seed=1)
        assert_allclose(series.values, traj.states, rtol=0, atol=0)

    def test_observed_subset_in_order(self):
        traj = Trajectory(np.array([0.0, 1.0]), np.array([[1.0, 2.0, 3.0], [4.0, 5.0, 6.0]]))
        series = observe(traj, 0.0, seed=1, observed=(3, 1))
        assert_allclose(series.values, [[3.0, 1.0], [6.0, 4.0]])

    def test_noise_variance_roughly_right(self):
        traj = Trajectory(np.linspace(0, 1, 2000), np.zeros((2000, 1)))
        series = observe(traj, 0.25, seed=42)
        assert abs(np.var(series.values) - 0.25) / 0.25 < 0.2

    def test_bad_indices_rejected(self):
        traj = Trajectory(np.array([0.0, 1.0]), np.zeros((2, 2)))
        with pytest.raises(ArgumentError):
            observe(traj, 0.1, seed=1, observed=(0,))
        with pytest.raises(ArgumentError):
            observe(traj, 0.1, seed=1, observed=(3,))


class TestForcingPlumbing:
    def test_additive_adds_to_target_row(self):
        sys = circle_system()
        x = np.array([1.0, 2.0])
        theta = np.asarray(sys.theta_default)
        base = np.asarray(sys.rate(x, 0.0, theta, None))
        forced = forced_rate(sys, x, 0.0, theta, g=0.7)
        expect = base.copy()
        expect[1] += 0.7
        assert_allclose(forced, expect)

    def test_replacement_is_consumed_by_rate(self):
        sys = builtin_system("rosenzweig_macarthur_log")
        x = np.array([0.1, -0.2])
        theta = np.asarray(sys.theta_default)
        swapped = theta.copy()
        swapped[6] = 2.5
        direct = np.asarray(sys.rate(x, 0.0, swapped, None))
        via_g = forced_rate(sys, x, 0.0, theta, g=2.5)
        assert_allclose(via_g, direct)

    def test_with_forcing_replaces_spec(self):
        sys = with_forcing(circle_system(), ForcingSpec("additive", 1))
        assert sys.forcing.target == 1

    def test_scale_rate_scales(self):
        sys = scale_rate(builtin_system("rossler"), 2.0)
        x = np.array([1.0, 1.0, 0.0])
        theta = np.asarray(sys.theta_default)
        base = builtin_system("rossler").rate(x, 0.0, theta, None)
        assert_allclose(sys.rate(x, 0.0, theta, None), 2.0 * np.asarray(base))
        assert sys.name.endswith("_x2")

    def test_rate_values_batches_rows(self):
        sys = builtin_system("rossler")
        x = np.random.default_rng(3).normal(size=(10, 3))
        t = np.linspace(0, 1, 10)
        theta = np.asarray(sys.theta_default)
        batch = rate_values(sys, x, t, theta)
        rows = np.stack([np.asarray(sys.rate(x[i], t[i], theta, None)) for i in range(10)])
        assert_allclose(batch, rows)


@settings(max_examples=30, deadline=None)
@given(
    th1=st.lists(st.floats(-3, 3), min_size=4, max_size=4),
    th2=st.lists(st.floats(-3, 3), min_size=4, max_size=4),
    x=st.lists(st.floats(-2, 2), min_size=2, max_size=2),
)
def test_linear2d_rate_affine_in_theta(th1, th2, x):
    sys = builtin_system("linear2d")
    xv = np.asarray(x)
    r = lambda th: np.asarray(sys.rate(xv, 0.0, np.asarray(th), None))
    both = r(np.add(th1, th2))
    zero = r(np.zeros(4))
    assert_allclose(both, r(th1) + r(th2) - zero, atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(
    th1=st.lists(st.floats(-3, 3), min_size=3, max_size=3),
    th2=st.lists(st.floats(-3, 3), min_size=3, max_size=3),
    x=st.lists(st.floats(-2, 2), min_size=3, max_size=3),
)
def test_rossler_rate_affine_in_theta(th1, th2, x):
    sys = builtin_system("rossler")
    xv = np.asarray(x)
    r = lambda th: np.asarray(sys.rate(xv, 0.0, np.asarray(th), None))
    both = r(np.add(th1, th2))
    zero = r(np.zeros(3))
    assert_allclose(both, r(th1) + r(th2) - zero, atol=1e-9)


class TestContainers:
    def test_non_monotone_times_rejected(self):
        with pytest.raises(ArgumentError):
            TimeSeries(np.array([0.0, 2.0, 1.0]), np.zeros((3, 1)))

    def test_nan_rejected(self):
        with pytest.raises(ArgumentError):
            TimeSeries(np.array([0.0, 1.0]), np.array([[np.nan], [0.0]]))

    def test_one_dim_values_promoted(self):
        series = TimeSeries(np.array([0.0, 1.0]), np.array([3.0, 4.0]))
        assert series.values.shape == (2, 1)
        assert series.dim == 1

    def test_values_are_read_only(self):
        series = TimeSeries(np.array([0.0, 1.0]), np.array([3.0, 4.0]))
        with pytest.raises(ValueError):
            series.values[0, 0] = 9.0


def test_builtin_names_and_unknown_error():
    names = builtin_names()
    assert "vanderpol" in names and "rossler_chaotic" in names
    with pytest.raises(ArgumentError, match="vanderpol"):
        builtin_system("not_a_system")
