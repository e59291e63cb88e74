import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jetgen.flow import (FlowConfig, NumericalFailure, interpolate, ode_sample, reconstruct_x1, sample_base,
                         sample_time, target_field)


def test_sample_time_degenerate_law():
    cfg = FlowConfig(time_mu=0.0, time_sigma=0.0)
    t = sample_time(cfg, np.random.default_rng(0), size=100)
    np.testing.assert_array_equal(t, 0.5)


def test_sample_time_median_and_clamp():
    t = sample_time(FlowConfig(), np.random.default_rng(1), size=100_000)
    assert abs(np.median(t) - 1 / (1 + np.exp(0.8))) < 0.01
    assert t.min() >= 0.05


def test_interpolate_examples():
    x0, x1 = np.array([1.0, -1.0]), np.array([2.0, 4.0])
    np.testing.assert_allclose(interpolate(x0, x1, 0.0), x0, rtol=0, atol=np.spacing(4.0))
    np.testing.assert_array_equal(interpolate(x0, x1, 1.0), x1)
    np.testing.assert_allclose(interpolate(np.zeros(2), x1, 0.25), [0.5, 1.0])


def test_interpolate_rejects_shape_mismatch():
    with pytest.raises(ValueError, match="shape"):
        interpolate(np.zeros(2), np.zeros(3), 0.5)
    with pytest.raises(ValueError, match="shape"):
        target_field(np.zeros(2), np.zeros(3))


def test_target_field_examples():
    x = np.array([0.3, -2.0])
    np.testing.assert_array_equal(target_field(x, x), 0.0)
    np.testing.assert_array_equal(target_field(np.array([1.0, 1.0]), np.array([3.0, 0.0])), [2.0, -1.0])


@settings(max_examples=50, deadline=None)
@given(st.floats(0, 0.5), st.floats(0, 0.5), st.integers(0, 2**31 - 1))
def test_path_increment_is_linear(t, h, seed):
    rng = np.random.default_rng(seed)
    x0, x1 = rng.normal(size=5), rng.normal(size=5)
    diff = interpolate(x0, x1, t + h) - interpolate(x0, x1, t)
    np.testing.assert_allclose(diff, h * target_field(x0, x1), atol=1e-12)


def test_reconstruct_examples():
    np.testing.assert_allclose(reconstruct_x1(np.array([0.5]), np.array([2.0]), 0.75), [1.0])
    xt = np.array([0.1, 0.2])
    np.testing.assert_array_equal(reconstruct_x1(xt, np.array([9.0, -9.0]), 1.0), xt)


def cfm_identity_ulps(rng, n=1000):
    """Worst reconstruction error over ``n`` triples, in ulps of max(|x0|, |x1|)."""
    worst = 0.0
    for _ in range(n):
        scale = 10.0 ** rng.integers(-3, 4, size=2)
        x0, x1 = rng.normal(size=8) * scale[0], rng.normal(size=8) * scale[1]
        t = rng.uniform()
        x1_hat = reconstruct_x1(interpolate(x0, x1, t), target_field(x0, x1), t)
        ulp = np.spacing(np.maximum(np.abs(x0), np.abs(x1)))
        worst = max(worst, float(np.max(np.abs(x1_hat - x1) / ulp)))
    return worst


def test_reconstruct_identity_within_one_ulp():
    assert cfm_identity_ulps(np.random.default_rng(2)) <= 1.0


def test_sample_base_modes():
    rng = np.random.default_rng(3)
    assert not sample_base((4, 5), "zero", rng).any()
    g = sample_base((1_000_000,), "gaussian", rng)
    assert abs(g.mean()) < 0.01 and abs(g.var() - 1) < 0.01
    a = sample_base((3,), "gaussian", np.random.default_rng(7))
    b = sample_base((3,), "gaussian", np.random.default_rng(7))
    np.testing.assert_array_equal(a, b)
    with pytest.raises(ValueError):
        sample_base((3,), "uniform", rng)


def test_config_validation():
    with pytest.raises(ValueError):
        FlowConfig(t_eps=0.0)
    with pytest.raises(ValueError):
        FlowConfig(ode_steps=0)
    with pytest.raises(ValueError):
        FlowConfig(base_mode="laplace")


def _const_field(k):
    return lambda x, t, c: np.broadcast_to(k, x.shape)


def test_constant_field_is_exact_for_any_step_count():
    k = np.array([[0.5, -1.0, 2.0]])
    for steps in (1, 7, 50):
        cfg = FlowConfig(base_mode="zero", ode_steps=steps)
        out = ode_sample(_const_field(k), [0], (1, 3), cfg, np.random.default_rng(0))
        np.testing.assert_allclose(out[0], k, atol=1e-12)


def test_one_step_from_gaussian_base():
    k = np.full((2, 3), 0.25)
    cfg = FlowConfig(ode_steps=1)
    x0 = sample_base((1, 2, 3), "gaussian", np.random.default_rng(5))
    out = ode_sample(_const_field(k), [0], (2, 3), cfg, np.random.default_rng(5))
    np.testing.assert_allclose(out, x0 + k)


def _euler_errors(field, exact, steps_list):
    errs = []
    for n in steps_list:
        out = ode_sample(field, [0], (1, 1), FlowConfig(base_mode="zero", ode_steps=n), np.random.default_rng(0))
        errs.append(abs(out[0, 0, 0] - exact))
    return np.array(errs)


def test_euler_global_error_slope():
    # dx/dt = cos(t) + x from x(0)=0: x(1) = (e - cos 1 + sin 1) / 2
    field = lambda x, t, c: np.cos(t)[:, None, None] + x
    exact = (np.e - np.cos(1.0) + np.sin(1.0)) / 2
    steps = np.array([50, 100, 200, 400, 800])
    errs = _euler_errors(field, exact, steps)
    slope = np.polyfit(np.log(steps), np.log(errs), 1)[0]
    assert abs(slope + 1) < 0.1


def test_time_only_field_error_halves():
    field = lambda x, t, c: (2 * t)[:, None, None]  # x(1) = 1
    errs = _euler_errors(field, 1.0, [10, 20, 40])
    np.testing.assert_allclose(errs[1:] / errs[:-1], 0.5, rtol=1e-6)


def test_zero_base_is_deterministic_for_a_class():
    field = lambda x, t, c: np.sin(x + t[:, None, None]) + c[:, None, None]
    cfg = FlowConfig(base_mode="zero", ode_steps=10)
    a = ode_sample(field, [1, 1, 1], (2, 4), cfg, np.random.default_rng(0))
    b = ode_sample(field, [1], (2, 4), cfg, np.random.default_rng(99))
    np.testing.assert_array_equal(a[0], a[1])
    np.testing.assert_array_equal(a[0], b[0])


def test_guidance_scale_one_never_calls_null_branch():
    calls = []

    def field(x, t, c):
        calls.append(c.copy())
        return np.ones_like(x) * c[:, None, None]

    cfg = FlowConfig(base_mode="zero", ode_steps=4, guidance_scale=1.0)
    out = ode_sample(field, [2], (1, 2), cfg, np.random.default_rng(0), null_class=3)
    assert all((c == 2).all() for c in calls)
    np.testing.assert_allclose(out, 2.0)


def test_guidance_mixes_fields():
    field = lambda x, t, c: np.where(c[:, None, None] == 3, 1.0, 2.0) * np.ones_like(x)
    cfg = FlowConfig(base_mode="zero", ode_steps=2, guidance_scale=3.0)
    out = ode_sample(field, [0], (1, 1), cfg, np.random.default_rng(0), null_class=3)
    np.testing.assert_allclose(out, 1.0 + 3.0 * (2.0 - 1.0))


def test_numerical_failure_reports_step():
    field = lambda x, t, c: np.where(t[:, None, None] >= 0.5, np.inf, 1.0) * np.ones_like(x)
    with pytest.raises(NumericalFailure) as info:
        ode_sample(field, [0], (1, 1), FlowConfig(base_mode="zero", ode_steps=4), np.random.default_rng(0))
    assert info.value.step == 2
    assert info.value.max_abs == pytest.approx(0.5)
