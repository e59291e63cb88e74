"""Spectral features: pooled log-magnitude Fourier features, Welch PSD, band powers, PSD slope."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Optional, Tuple

import numpy as np
from scipy import signal as sps

BANDS = (
    ("delta", 0.5, 4.0),
    ("theta", 4.0, 8.0),
    ("alpha", 8.0, 13.0),
    ("beta", 13.0, 30.0),
    ("gamma", 30.0, 45.0),
)
SLOPE_RANGE = (1.0, 45.0)


@dataclass(frozen=True)
class SpectralFeatureConfig:
    k_feat: int = 64
    k_spat: int = 4
    f_cut: float = 45.0
    eps_cov: float = 1e-6

    def __post_init__(self):
        if self.k_feat < 1 or self.k_spat < 1:
            raise ValueError("k_feat and k_spat must be >= 1")
        if self.f_cut <= 0 or self.eps_cov < 0:
            raise ValueError("f_cut must be positive and eps_cov non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


def _standardize_rows(f: np.ndarray) -> np.ndarray:
    mu = f.mean(axis=-1, keepdims=True)
    sd = f.std(axis=-1, keepdims=True)
    # constant rows (e.g. all-zero input) map to zero
    safe = np.where(sd > 0, sd, 1.0)
    return np.where(sd > 0, (f - mu) / safe, 0.0)


def _pool(x: np.ndarray, groups: int, axis: int) -> np.ndarray:
    parts = np.array_split(np.arange(x.shape[axis]), groups)
    return np.stack([np.take(x, p, axis=axis).mean(axis=axis) for p in parts], axis=axis)


def ts_fid_features(x, fs: float, config: SpectralFeatureConfig = SpectralFeatureConfig(),
                    standardize: bool = True) -> np.ndarray:
    """Pooled log-magnitude spectrum of a ``(C, T)`` segment or a ``(B, C, T)`` batch.

    Frequencies above ``f_cut`` are dropped; when fewer than ``k_feat`` bins
    remain every bin is kept, and ``k_spat`` is capped at ``C``.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
    if config.f_cut > fs / 2:
        raise ValueError(f"f_cut={config.f_cut} exceeds the Nyquist frequency {fs / 2}")
    t = x.shape[-1]
    mag = np.abs(np.fft.rfft(x, axis=-1))
    n_keep = int(np.floor(config.f_cut * t / fs)) + 1
    mag = mag[..., :n_keep]
    mag = _pool(mag, min(config.k_feat, n_keep), axis=-1)
    mag = _pool(mag, min(config.k_spat, x.shape[1]), axis=1)
    feats = np.log1p(mag).reshape(x.shape[0], -1)
    if standardize:
        feats = _standardize_rows(feats)
    return feats[0] if single else feats


def default_nperseg(t: int, fs: float) -> int:
    """Two-second windows, shortened to the segment when needed."""
    return int(min(t, round(2 * fs)))


def welch_psd(x, fs: float, nperseg: Optional[int] = None) -> Tuple[np.ndarray, np.ndarray]:
    """Hann-window, 50%-overlap Welch density along the last axis (no detrending)."""
    x = np.asarray(x, dtype=np.float64)
    t = x.shape[-1]
    nperseg = default_nperseg(t, fs) if nperseg is None else int(nperseg)
    if nperseg > t:
        raise ValueError(f"window of {nperseg} samples is longer than the series ({t})")
    if nperseg < 2:
        raise ValueError("window must span at least 2 samples")
    return sps.welch(x, fs=fs, window="hann", nperseg=nperseg, noverlap=nperseg // 2,
                     detrend=False, scaling="density", axis=-1)


def bandpower_features(x, fs: float, pooled: bool = True, nperseg: Optional[int] = None) -> np.ndarray:
    """Integrated Welch power in the delta..gamma bands.

    Returns ``(..., 5)`` channel-averaged powers, or ``(..., C, 5)`` when
    ``pooled`` is false.  Bands are half-open ``[lo, hi)``.
    """
    if fs / 2 < BANDS[-1][2]:
        missing = [name for name, lo, hi in BANDS if hi > fs / 2]
        raise ValueError(f"fs={fs} Hz cannot resolve band(s) {', '.join(missing)} (need fs >= 90)")
    f, p = welch_psd(x, fs, nperseg)
    df = f[1] - f[0]
    out = np.stack([p[..., (f >= lo) & (f < hi)].sum(axis=-1) * df for _, lo, hi in BANDS], axis=-1)
    if pooled and out.ndim >= 2:
        out = out.mean(axis=-2)
    return out


def psd_slope(x, fs: float, frange: Tuple[float, float] = SLOPE_RANGE, nperseg: Optional[int] = None):
    """Channel-averaged log10-log10 least-squares slope of the Welch PSD over ``frange``.

    Accepts ``(C, T)`` (returns a float) or ``(B, C, T)`` (returns ``(B,)``).
    """
    if fs / 2 < frange[1]:
        raise ValueError(f"fs={fs} Hz does not reach {frange[1]} Hz")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None]
    f, p = welch_psd(x, fs, nperseg)
    m = (f >= frange[0]) & (f <= frange[1])
    lf = np.log10(f[m])
    lp = np.log10(np.maximum(p[..., m], np.finfo(np.float64).tiny))
    lfc = lf - lf.mean()
    slopes = ((lp - lp.mean(axis=-1, keepdims=True)) @ lfc) / (lfc @ lfc)
    out = slopes.mean(axis=-1)
    return float(out) if np.ndim(out) == 0 else out
