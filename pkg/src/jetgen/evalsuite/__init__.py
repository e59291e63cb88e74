"""Evaluation metrics: spectral features, distances, clustering, diagnostics and the report."""

from .clustering import KMeansResult, cluster_silhouette, kmeans, silhouette_score
from .diagnostics import (EventMorphology, detect_events, drift_stats, envelope_statistic, event_morphology,
                          event_windows, hjorth, rms_envelope, segment_hjorth)
from .distances import dtw, dtw_matrix, frechet_distance, wasserstein1
from .proxy import LogisticRegression, proxy_delta_acc
from .report import EvalConfig, MetricReport, Metrics, evaluate, silhouette, split_halves, ts_fid
from .spectral import BANDS, SpectralFeatureConfig, bandpower_features, psd_slope, ts_fid_features, welch_psd

__all__ = [
    "BANDS", "EvalConfig", "EventMorphology", "KMeansResult", "LogisticRegression", "MetricReport", "Metrics",
    "SpectralFeatureConfig", "bandpower_features", "cluster_silhouette", "detect_events", "drift_stats", "dtw",
    "dtw_matrix", "envelope_statistic", "evaluate", "event_morphology", "event_windows", "frechet_distance",
    "hjorth", "kmeans", "proxy_delta_acc", "psd_slope", "rms_envelope", "segment_hjorth", "silhouette",
    "silhouette_score", "split_halves", "ts_fid", "ts_fid_features", "wasserstein1", "welch_psd",
]
