"""Class-conditional generation from a trained checkpoint."""

from __future__ import annotations

from dataclasses import replace
from typing import Optional, Sequence

import numpy as np

from .flow import FlowConfig, ode_sample
from .model import predict
from .synthgen import Dataset, make_dataset
from .trainer import Checkpoint


def generate(ck: Checkpoint, labels: Sequence[int], seed: int, flow: Optional[FlowConfig] = None,
             use_ema: bool = True, batch_size: int = 128) -> np.ndarray:
    """Euler-integrate the learned field for each label; returns ``(n, C, T)`` float32.

    Batches draw their base noise from one seeded generator in order, so the
    output depends only on ``seed``, ``labels`` and the checkpoint.
    """
    flow = ck.train.flow if flow is None else flow
    model = ck.model
    params = ck.ema if use_ema else ck.params
    dtype = np.dtype(ck.train.dtype)
    labels = np.asarray(labels, dtype=np.int64).reshape(-1)
    if labels.size and (labels.min() < 0 or labels.max() >= model.num_classes):
        raise ValueError(f"class label out of range [0, {model.num_classes - 1}]")
    rng = np.random.default_rng(seed)

    def field(x, t, c):
        return predict(x.astype(dtype, copy=False), t, c, params, model)

    out = [ode_sample(field, labels[i:i + batch_size], (model.channels, model.samples), flow, rng,
                      null_class=model.null_class, dtype=dtype)
           for i in range(0, labels.size, batch_size)]
    if not out:
        return np.zeros((0, model.channels, model.samples), dtype=np.float32)
    return np.concatenate(out).astype(np.float32)


def generate_dataset(ck: Checkpoint, labels: Sequence[int], seed: int, classes: Sequence[str], fs: float,
                     scale: float, flow: Optional[FlowConfig] = None, **kw) -> Dataset:
    data = generate(ck, labels, seed, flow, **kw)
    return make_dataset(data, labels, classes, fs, scale, seed)


def matched_labels(real_labels: Sequence[int]) -> np.ndarray:
    """Generation labels with the same class histogram as a reference set (class-sorted)."""
    counts = np.bincount(np.asarray(real_labels, dtype=np.int64))
    return np.repeat(np.arange(counts.size), counts)


def with_base(ck: Checkpoint, mode: str) -> FlowConfig:
    return replace(ck.train.flow, base_mode=mode)
