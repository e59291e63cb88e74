import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from jetgen.objectives import (LossWeights, chordal_half_sq, l1_optimal_constant, l_cons, l_corr, l_recon, l_tv,
                               pearson, soft_threshold, total_loss)
from jetgen.tensorgrad import grad_check


def _val(t):
    return float(t.data)


def _signals(seed, shape=(3, 2, 64)):
    return np.random.default_rng(seed).normal(size=shape)


def test_recon_examples():
    assert _val(l_recon([0.0, 0.0], [0.0, 0.0])) == 0.0
    assert _val(l_recon([0.0, 0.0], [1.0, -3.0])) == 2.0
    with pytest.raises(ValueError, match="shape"):
        l_recon(np.zeros(2), np.zeros(3))


def test_l1_minimizer_is_median_not_mean():
    samples = np.array([0.0, 0.0, 0.0, 10.0])
    grid = np.linspace(-1, 11, 12001)
    risk = np.abs(samples[None] - grid[:, None]).sum(axis=1)
    best = grid[risk == risk.min()]
    assert best.min() <= 0.0 <= best.max()
    assert not np.any(np.isclose(best, 2.5))
    assert l1_optimal_constant(samples) == 0.0


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 15), st.integers(0, 2**31 - 1))
def test_median_property_on_grid(n, seed):
    x = np.random.default_rng(seed).normal(size=2 * n + 1)
    grid = np.linspace(x.min(), x.max(), 4001)
    risk = np.abs(x[None] - grid[:, None]).sum(axis=1)
    step = grid[1] - grid[0]
    assert abs(grid[np.argmin(risk)] - l1_optimal_constant(x)) <= step


def test_cons_examples():
    x = _signals(0)
    assert _val(l_cons(x, x, 2.0)) == pytest.approx(0.0, abs=1e-12)
    assert _val(l_cons(x, x + 1.0, 2.0)) == pytest.approx(2.0, rel=1e-12)
    mu = x.mean(axis=-1, keepdims=True)
    doubled = 2.0 * (x - mu) + mu
    assert _val(l_cons(x, doubled, 3.0)) == pytest.approx(3.0 * x.std(axis=-1).mean(), rel=1e-9)
    with pytest.raises(ValueError, match="T >= 2"):
        l_cons(np.zeros((1, 1)), np.zeros((1, 1)))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**31 - 1), st.floats(-2, 2), st.floats(0.5, 2))
def test_cons_zero_iff_moments_match(seed, shift, gain):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(2, 3, 50))
    # same moments, different waveform: permute time within each channel
    y = rng.permuted(x, axis=-1)
    assert _val(l_cons(x, y, 1.0, smooth=0.0)) < 1e-9
    z = gain * y + shift
    loss = _val(l_cons(x, z, 1.0, smooth=0.0))
    mismatch = max(np.abs(x.mean(-1) - z.mean(-1)).max(), np.abs(x.std(-1) - z.std(-1)).max())
    assert (loss < 1e-9) == (mismatch < 1e-9)
    assert loss >= mismatch / x[..., 0].size - 1e-15


def test_tv_examples():
    assert _val(l_tv(np.full((1, 1, 8), 3.0))) == 0.0
    assert _val(l_tv([[0.0, 1.0, 0.0, 1.0]], 0.5)) == pytest.approx(0.5 * 3 / 4)
    assert _val(l_tv([[0.0, 1.0, 2.0, 3.0]], 0.5)) == pytest.approx(0.5 * 3 / 4)


def test_corr_examples():
    x = _signals(1)
    assert _val(l_corr(x, x, 0.3)) == pytest.approx(0.0, abs=1e-12)
    assert _val(l_corr(x, 2.5 * x - 4.0, 0.3)) == pytest.approx(0.0, abs=1e-12)
    assert _val(l_corr(x, -x, 0.3)) == pytest.approx(0.6, rel=1e-12)


def test_corr_zero_variance_names_channel():
    x = _signals(2, (2, 3, 16))
    y = x.copy()
    y[1, 2] = 5.0
    with pytest.raises(ValueError, match=r"estimate at index \(1, 2\)"):
        pearson(x, y)


def test_smoothed_and_exact_correlation_agree():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(2, 3, 40)) * 1e-2
    y = x + rng.normal(size=x.shape) * 1e-2
    assert abs(_val(pearson(x, y)) - _val(pearson(x, y, smooth=1e-14))) < 1e-8


def test_chordal_identity():
    rng = np.random.default_rng(4)
    for _ in range(200):
        x = rng.normal(size=(4, 37)) * rng.uniform(0.1, 10)
        y = rng.normal(size=(4, 37)) + rng.uniform(-5, 5)
        rho = np.array([_val(pearson(x[c], y[c])) for c in range(4)])
        np.testing.assert_allclose(1.0 - rho, chordal_half_sq(x, y), rtol=0, atol=1e-10)


def test_soft_threshold_examples():
    assert soft_threshold(0.3, 0.5) == 0.0
    assert soft_threshold(2.0, 0.5) == 1.5
    assert soft_threshold(-2.0, 0.5) == -1.5
    with pytest.raises(ValueError):
        soft_threshold(1.0, -0.1)


@settings(max_examples=60, deadline=None)
@given(st.floats(-5, 5), st.floats(0, 3))
def test_soft_threshold_is_the_l1_prox(y, lam):
    grid = np.linspace(-8, 8, 160001)
    obj = 0.5 * (y - grid) ** 2 + lam * np.abs(grid)
    assert abs(grid[np.argmin(obj)] - soft_threshold(y, lam)) <= grid[1] - grid[0]


def test_total_loss_examples():
    x = _signals(5)
    y = x + _signals(6) * 0.1
    b = total_loss(x, y, LossWeights(0.0, 0.0, 0.0))
    assert b.total_value == b.recon
    zero = total_loss(x, x, LossWeights(1.0, 0.0, 0.1))
    assert zero.total_value == pytest.approx(0.0, abs=1e-7)
    # TV penalizes the estimate alone, so an exact estimate still pays its roughness
    exact = total_loss(x, x, LossWeights(1.0, 0.1, 0.1))
    assert exact.total_value == pytest.approx(_val(l_tv(x, 0.1)), abs=1e-7)


def test_total_loss_is_sum_of_terms():
    x, y = _signals(7), _signals(8)
    b = total_loss(x, y, LossWeights(1.0, 0.05, 0.1), smooth=False)
    assert b.total_value == pytest.approx(b.recon + b.cons + b.tv + b.corr, rel=1e-12)
    assert min(b.recon, b.cons, b.tv, b.corr) >= 0


def test_weights_reject_negative():
    with pytest.raises(ValueError, match="tv"):
        LossWeights(tv=-0.1)


def test_total_loss_gradient_matches_finite_differences():
    rng = np.random.default_rng(9)
    x1 = rng.normal(size=(2, 3, 20))
    # keep every |x1 - x1_hat| and every forward difference well away from zero
    x1_hat = x1 + rng.choice([-1, 1], size=x1.shape) * rng.uniform(0.2, 1.0, size=x1.shape)
    w = LossWeights(1.0, 0.1, 0.1)
    err = grad_check(lambda p: total_loss(x1, p["y"], w, smooth=False).total, {"y": x1_hat}, 1e-6)
    assert err < 1e-5
