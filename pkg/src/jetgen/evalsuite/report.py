"""Full evaluation protocol and the JSON metric report."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from ..synthgen import Dataset
from .clustering import cluster_silhouette
from .diagnostics import (EVENT_WINDOW, detect_events, drift_stats, envelope_statistic, event_morphology,
                          event_windows, segment_hjorth)
from .distances import frechet_distance, wasserstein1
from .proxy import proxy_delta_acc, proxy_features
from .spectral import SpectralFeatureConfig, psd_slope, ts_fid_features

REPORT_VERSION = 1


@dataclass(frozen=True)
class EvalConfig:
    spectral: SpectralFeatureConfig = field(default_factory=SpectralFeatureConfig)
    event_window: int = EVENT_WINDOW
    event_threshold: float = 4.0
    kmeans_init: int = 10
    seed: int = 0
    floor: bool = True

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "EvalConfig":
        d = dict(d)
        if "spectral" in d:
            d["spectral"] = SpectralFeatureConfig(**d["spectral"])
        return cls(**d)

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


@dataclass
class Metrics:
    ts_fid: float
    silhouette: float
    drift_w1: Dict[str, float]
    hjorth_w1: Optional[Dict[str, float]]
    psd_slope_w1: float
    envelope_w1: float
    event_pearson: Optional[float]
    event_dtw: Optional[float]
    n_events: Dict[str, int]


@dataclass
class MetricReport:
    metrics: Metrics
    floor: Optional[Metrics]
    n_real: int
    n_gen: int
    proxy_delta_acc: Optional[float] = None
    degenerate: List[str] = field(default_factory=list)
    config: dict = field(default_factory=dict)
    config_hash: str = ""
    version: int = REPORT_VERSION

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        d = dict(d)
        d["metrics"] = Metrics(**d["metrics"])
        d["floor"] = Metrics(**d["floor"]) if d.get("floor") else None
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "MetricReport":
        return cls.from_dict(json.loads(text))

    def save(self, path) -> Path:
        path = Path(path)
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text(self.to_json())
        except OSError as exc:
            raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
        return path


DRIFT_KEYS = ("slope", "d_mu", "d_sigma")
HJORTH_KEYS = ("activity", "mobility", "complexity")


def ts_fid(real, gen, fs: float, config: SpectralFeatureConfig = SpectralFeatureConfig()) -> float:
    return frechet_distance(ts_fid_features(real, fs, config), ts_fid_features(gen, fs, config), config.eps_cov)


def silhouette(real, gen, fs: float, k: int, seed: int = 0, n_init: int = 10) -> float:
    """k-means silhouette on log band-power features of the pooled real and generated segments."""
    real, gen = np.asarray(real), np.asarray(gen)
    if len(real) == 0 or len(gen) == 0:
        raise ValueError("silhouette needs non-empty real and generated sets")
    pool = np.concatenate([real, gen])
    if len(pool) < k:
        raise ValueError(f"need at least k={k} samples, got {len(pool)}")
    return cluster_silhouette(proxy_features(pool, fs), k, seed=seed, n_init=n_init)


class _Stats:
    """Per-segment statistics of one set, computed once and reused for the floor."""

    def __init__(self, data: np.ndarray, fs: float, events, config: EvalConfig, label: str, notes: List[str]):
        self.data = data
        self.drift = drift_stats(data)
        try:
            self.hjorth = segment_hjorth(data)
        except ValueError:
            self.hjorth = None
            notes.append(f"{label}: zero-variance channel(s), Hjorth undefined")
        self.slope = psd_slope(data, fs)
        self.env = envelope_statistic(data)
        if events is None:
            events = [detect_events(seg, config.event_threshold) for seg in data]
        self.events = events
        self.feats = ts_fid_features(data, fs, config.spectral)
        if not np.any(self.feats):
            notes.append(f"{label}: constant spectra, features degenerate")

    def subset(self, idx: np.ndarray) -> "_Stats":
        out = object.__new__(_Stats)
        out.data = self.data[idx]
        out.drift = self.drift[idx]
        out.hjorth = None if self.hjorth is None else self.hjorth[idx]
        out.slope = self.slope[idx]
        out.env = self.env[idx]
        out.events = [self.events[i] for i in idx]
        out.feats = self.feats[idx]
        return out


def _compare(a: _Stats, b: _Stats, fs: float, k: int, config: EvalConfig) -> Metrics:
    ev_a = event_windows(a.data, a.events, config.event_window)
    ev_b = event_windows(b.data, b.events, config.event_window)
    morph = event_morphology(ev_a, ev_b)
    hj = None
    if a.hjorth is not None and b.hjorth is not None:
        hj = {key: wasserstein1(a.hjorth[:, i], b.hjorth[:, i]) for i, key in enumerate(HJORTH_KEYS)}
    return Metrics(
        ts_fid=frechet_distance(a.feats, b.feats, config.spectral.eps_cov),
        silhouette=silhouette(a.data, b.data, fs, k, config.seed, config.kmeans_init),
        drift_w1={key: wasserstein1(a.drift[:, i], b.drift[:, i]) for i, key in enumerate(DRIFT_KEYS)},
        hjorth_w1=hj,
        psd_slope_w1=wasserstein1(a.slope, b.slope),
        envelope_w1=wasserstein1(a.env, b.env),
        event_pearson=None if morph is None else morph.pearson,
        event_dtw=None if morph is None else morph.dtw,
        n_events={"real": len(ev_a), "gen": len(ev_b)},
    )


def split_halves(labels: Sequence[int]):
    """Class-stratified alternating split into two halves."""
    labels = np.asarray(labels)
    first, second = [], []
    for k in np.unique(labels):
        idx = np.flatnonzero(labels == k)
        first.extend(idx[0::2])
        second.extend(idx[1::2])
    return np.sort(first), np.sort(second)


def evaluate(real: Dataset, gen: Dataset, config: EvalConfig = EvalConfig(),
             proxy_train: Optional[Dataset] = None) -> MetricReport:
    """Compare generated segments to real ones and, optionally, the real set's two halves.

    Real event times come from the corpus manifest when available; generated
    events are detected as RMS-envelope peaks.  ``proxy_train`` enables the
    band-power logistic-regression utility proxy (``real`` is its test set).
    """
    if len(real) == 0 or len(gen) == 0:
        raise ValueError("both sets must be non-empty")
    if real.geometry != gen.geometry:
        raise ValueError(f"geometry mismatch: real {real.geometry} vs generated {gen.geometry}")
    if real.fs != gen.fs:
        raise ValueError(f"sample-rate mismatch: real {real.fs} vs generated {gen.fs}")
    fs = real.fs
    k = max(real.num_classes, 2)
    notes: List[str] = []
    rs = _Stats(real.data.astype(np.float64), fs, real.events, config, "real", notes)
    gs = _Stats(gen.data.astype(np.float64), fs, gen.events if gen.events else None, config, "gen", notes)
    metrics = _compare(rs, gs, fs, k, config)
    floor = None
    if config.floor and len(real) >= 4:
        ia, ib = split_halves(real.labels)
        floor = _compare(rs.subset(ia), rs.subset(ib), fs, k, config)
    proxy = None
    if proxy_train is not None:
        proxy = proxy_delta_acc((proxy_train.data, proxy_train.labels), (gen.data, gen.labels),
                                (real.data, real.labels), fs, real.num_classes)
    return MetricReport(metrics, floor, len(real), len(gen), proxy, notes, config.to_dict(), config.digest())
