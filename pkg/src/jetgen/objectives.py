"""Composite training objective: L1 reconstruction plus moment, TV and correlation terms.

All loss functions accept numpy arrays or :class:`~jetgen.tensorgrad.Tensor`
inputs shaped ``(C, T)`` or ``(B, C, T)`` and return a scalar Tensor, so the
same code serves training (differentiable) and evaluation.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .tensorgrad import Tensor

VAR_EPS = 1e-12
# added to variances inside the training-time correlation and std
SMOOTH_EPS = 1e-14


@dataclass(frozen=True)
class LossWeights:
    cons: float = 1.0
    tv: float = 0.1
    corr: float = 0.1

    def __post_init__(self):
        for name in ("cons", "tv", "corr"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"loss weight {name} must be finite and >= 0, got {v}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class LossBreakdown:
    """Weighted terms; ``total`` keeps the graph for backpropagation."""

    recon: float
    cons: float
    tv: float
    corr: float
    total: Tensor

    @property
    def total_value(self) -> float:
        return float(self.total.data)

    def as_row(self) -> dict:
        return {"recon": self.recon, "cons": self.cons, "tv": self.tv, "corr": self.corr,
                "total": self.total_value}


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _check_same(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


def l_recon(x1, x1_hat) -> Tensor:
    """Mean absolute error over every entry."""
    x1, x1_hat = _t(x1), _t(x1_hat)
    _check_same(x1, x1_hat, "l_recon")
    return (x1 - x1_hat).abs().mean()


def channel_moments(x: Tensor, smooth: float = 0.0):
    """Per-channel time mean and population std."""
    mu = x.mean(axis=-1)
    var = x.var(axis=-1)
    sd = (var + smooth).sqrt() if smooth else var.sqrt()
    return mu, sd


def l_cons(x1, x1_hat, weight: float = 1.0, smooth: float = SMOOTH_EPS) -> Tensor:
    x1, x1_hat = _t(x1), _t(x1_hat)
    _check_same(x1, x1_hat, "l_cons")
    if x1.shape[-1] < 2:
        raise ValueError(f"l_cons needs T >= 2, got T={x1.shape[-1]}")
    mu_a, sd_a = channel_moments(x1, smooth)
    mu_b, sd_b = channel_moments(x1_hat, smooth)
    return ((mu_a - mu_b).abs().mean() + (sd_a - sd_b).abs().mean()) * weight


def l_tv(x1_hat, weight: float = 1.0) -> Tensor:
    """Forward-difference total variation, summed over time and divided by T."""
    x = _t(x1_hat)
    n = x.shape[-1]
    if n < 2:
        raise ValueError(f"l_tv needs T >= 2, got T={n}")
    diff = x[..., 1:] - x[..., :-1]
    return diff.abs().mean() * (weight * (n - 1) / n)


def pearson(x1, x1_hat, smooth: float = 0.0) -> Tensor:
    """Mean over batch and channels of the per-channel Pearson coefficient along time.

    With ``smooth == 0`` a channel whose variance is below ``VAR_EPS`` raises.
    """
    a, b = _t(x1), _t(x1_hat)
    _check_same(a, b, "pearson")
    ac = a - a.mean(axis=-1, keepdims=True)
    bc = b - b.mean(axis=-1, keepdims=True)
    va = (ac * ac).mean(axis=-1)
    vb = (bc * bc).mean(axis=-1)
    if not smooth:
        for arr, label in ((va.data, "target"), (vb.data, "estimate")):
            low = np.argwhere(np.atleast_1d(arr) <= VAR_EPS)
            if low.size:
                raise ValueError(f"zero-variance channel in {label} at index {tuple(int(i) for i in low[0])}")
    cov = (ac * bc).mean(axis=-1)
    rho = cov / ((va + smooth) * (vb + smooth)).sqrt()
    return rho.mean()


def l_corr(x1, x1_hat, weight: float = 1.0, smooth: float = 0.0) -> Tensor:
    return (1.0 - pearson(x1, x1_hat, smooth)) * weight


def total_loss(x1, x1_hat, weights: LossWeights, smooth: bool = True) -> LossBreakdown:
    """Reconstruction plus every constraint whose weight is positive.

    ``smooth`` selects the finite-gradient variants used in training.
    """
    x1, x1_hat = _t(x1), _t(x1_hat)
    recon = l_recon(x1, x1_hat)
    total = recon
    parts = {"cons": 0.0, "tv": 0.0, "corr": 0.0}
    if weights.cons > 0:
        term = l_cons(x1, x1_hat, weights.cons, SMOOTH_EPS if smooth else 0.0)
        parts["cons"] = float(term.data)
        total = total + term
    if weights.tv > 0:
        term = l_tv(x1_hat, weights.tv)
        parts["tv"] = float(term.data)
        total = total + term
    if weights.corr > 0:
        term = l_corr(x1, x1_hat, weights.corr, SMOOTH_EPS if smooth else 0.0)
        parts["corr"] = float(term.data)
        total = total + term
    return LossBreakdown(float(recon.data), parts["cons"], parts["tv"], parts["corr"], total)


# -- analytic fixtures for the theory checks --------------------------------


def soft_threshold(y, lam: float):
    """``sign(y) * max(|y| - lam, 0)``: the proximal map of ``lam * |g|``."""
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    y = np.asarray(y, dtype=np.float64)
    out = np.sign(y) * np.maximum(np.abs(y) - lam, 0.0)
    return float(out) if out.ndim == 0 else out


def sphere_projection(x) -> np.ndarray:
    """Center along the last axis and scale to unit Euclidean norm."""
    x = np.asarray(x, dtype=np.float64)
    c = x - x.mean(axis=-1, keepdims=True)
    return c / np.linalg.norm(c, axis=-1, keepdims=True)


def chordal_half_sq(x, y) -> np.ndarray:
    """Half squared chordal distance between sphere projections, per channel."""
    d = sphere_projection(x) - sphere_projection(y)
    return 0.5 * np.sum(d * d, axis=-1)


def l1_optimal_constant(samples) -> float:
    """Minimizer of ``sum |x_i - a|`` (the sample median)."""
    return float(np.median(np.asarray(samples, dtype=np.float64)))
