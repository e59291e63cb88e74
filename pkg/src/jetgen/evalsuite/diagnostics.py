"""Per-segment signal diagnostics: RMS envelope, drift, Hjorth parameters and event morphology."""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .distances import dtw_matrix

EVENT_WINDOW = 40  # samples (0.4 s at 100 Hz)
MAX_EVENTS = 400


def rms_envelope(x) -> np.ndarray:
    """``sqrt(mean_c x_c(t)^2)`` per time point; ``(C, T) -> (T,)``, batches keep the leading axis."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        return np.abs(x)
    return np.sqrt(np.mean(x * x, axis=-2))


def drift_stats(x) -> np.ndarray:
    """``(slope, D_mu, D_sigma)`` for a ``(C, T)`` segment, or ``(B, 3)`` for a batch.

    The slope is the least-squares fit of the RMS envelope against time
    rescaled to [0, 1]; the D scores compare first and last quarters.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 2
    if single:
        x = x[None]
    t = x.shape[-1]
    if t < 8:
        raise ValueError(f"drift_stats needs T >= 8, got {t}")
    env = rms_envelope(x)
    tau = np.linspace(0.0, 1.0, t)
    tc = tau - tau.mean()
    slope = ((env - env.mean(axis=-1, keepdims=True)) @ tc) / (tc @ tc)
    q = t // 4
    first, last = x[..., :q], x[..., -q:]
    d_mu = np.abs(first.mean(-1) - last.mean(-1)).mean(-1)
    d_sigma = np.abs(first.std(-1) - last.std(-1)).mean(-1)
    out = np.stack([slope, d_mu, d_sigma], axis=-1)
    # exact zeros for constant input despite round-off in the fit
    out[np.abs(out) < 1e-13] = 0.0
    return out[0] if single else out


def hjorth(x) -> np.ndarray:
    """``(activity, mobility, complexity)`` along the last axis (population variances)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] < 3:
        raise ValueError(f"hjorth needs at least 3 samples, got {x.shape[-1]}")
    dx = np.diff(x, axis=-1)
    ddx = np.diff(dx, axis=-1)
    v0, v1, v2 = x.var(-1), dx.var(-1), ddx.var(-1)
    if np.any(v0 <= 0) or np.any(v1 <= 0):
        raise ValueError("hjorth is undefined for a zero-variance series")
    mob = np.sqrt(v1 / v0)
    comp = np.sqrt(v2 / v1) / mob
    return np.stack([v0, mob, comp], axis=-1)


def segment_hjorth(x) -> np.ndarray:
    """Channel-averaged Hjorth triple of ``(C, T)`` or ``(B, C, T)`` input."""
    return hjorth(x).mean(axis=-2)


def envelope_statistic(x) -> np.ndarray:
    """Temporal-envelope statistic: standard deviation over time of the RMS envelope."""
    return rms_envelope(x).std(axis=-1)


# ---------------------------------------------------------------------------
# events
# ---------------------------------------------------------------------------


def detect_events(x, threshold: float = 4.0, min_distance: Optional[int] = None) -> List[int]:
    """Peaks of the RMS envelope above ``median + threshold * MAD`` (1.4826-scaled)."""
    env = rms_envelope(x)
    min_distance = EVENT_WINDOW // 2 if min_distance is None else min_distance
    med = np.median(env)
    mad = 1.4826 * np.median(np.abs(env - med))
    if mad <= 0:
        return []
    level = med + threshold * mad
    cand = np.where((env[1:-1] > level) & (env[1:-1] >= env[:-2]) & (env[1:-1] >= env[2:]))[0] + 1
    picked: List[int] = []
    for i in cand[np.argsort(-env[cand], kind="stable")]:
        if all(abs(int(i) - p) >= min_distance for p in picked):
            picked.append(int(i))
    return sorted(picked)


def event_windows(data, events: Sequence[Sequence[int]], window: int = EVENT_WINDOW) -> np.ndarray:
    """Channel-mean windows of length ``window`` centered on each event that fits inside its segment."""
    data = np.asarray(data, dtype=np.float64)
    half = window // 2
    out = []
    for seg, evs in zip(data, events):
        trace = seg.mean(axis=0)
        for e in evs:
            lo = int(e) - half
            if lo >= 0 and lo + window <= trace.size:
                out.append(trace[lo:lo + window])
    return np.array(out).reshape(len(out), window)


def _thin(w: np.ndarray, limit: int) -> np.ndarray:
    if len(w) <= limit:
        return w
    return w[np.linspace(0, len(w) - 1, limit).round().astype(int)]


@dataclass(frozen=True)
class EventMorphology:
    pearson: float
    dtw: float
    n_real: int
    n_gen: int


def _row_pearson(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ac = a - a.mean(1, keepdims=True)
    bc = b - b.mean(1, keepdims=True)
    den = np.sqrt((ac * ac).sum(1) * (bc * bc).sum(1))
    return np.where(den > 0, (ac * bc).sum(1) / np.where(den > 0, den, 1.0), 0.0)


def event_morphology(real_windows, gen_windows, limit: int = MAX_EVENTS) -> Optional[EventMorphology]:
    """Greedy nearest-by-DTW matching of generated to real event windows.

    Returns ``None`` (absent) when either side has no events.
    """
    real = np.asarray(real_windows, dtype=np.float64)
    gen = np.asarray(gen_windows, dtype=np.float64)
    if real.size == 0 or gen.size == 0:
        return None
    real, gen = _thin(real, limit), _thin(gen, limit)
    d = dtw_matrix(gen, real)
    nearest = np.argmin(d, axis=1)
    r = _row_pearson(gen, real[nearest])
    return EventMorphology(float(r.mean()), float(d[np.arange(len(gen)), nearest].mean()), len(real), len(gen))
