"""EEG segment data model, amplitude normalization and patch tokenization."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DEFAULT_SCALE = 0.01


@dataclass(frozen=True)
class EegSegment:
    """A ``C x T`` multi-channel signal in normalized units (raw * scale)."""

    data: np.ndarray
    fs: float
    scale: float = 1.0

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"segment data must be C x T with C, T >= 1, got shape {arr.shape}")
        if self.fs <= 0:
            raise ValueError(f"sample rate must be positive, got {self.fs}")
        _check_finite(arr)

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def samples(self) -> int:
        return self.data.shape[1]

    def denormalize(self) -> np.ndarray:
        """Raw amplitudes, inverting :func:`normalize`."""
        return np.asarray(self.data) / self.scale


@dataclass(frozen=True)
class LabeledSegment:
    segment: EegSegment
    class_id: int
    events: tuple = ()  # transient onset samples, when known


@dataclass(frozen=True)
class PatchSequence:
    """Tokens ``(C, N, P)``; flat order is channel-major: all patches of channel 0 first."""

    tokens: np.ndarray
    patch_size: int

    @property
    def channels(self) -> int:
        return self.tokens.shape[0]

    @property
    def num_patches(self) -> int:
        return self.tokens.shape[1]

    def flat(self) -> np.ndarray:
        c, n, p = self.tokens.shape
        return self.tokens.reshape(c * n, p)

    def channel_index(self) -> np.ndarray:
        return np.repeat(np.arange(self.channels), self.num_patches)

    def temporal_index(self) -> np.ndarray:
        return np.tile(np.arange(self.num_patches), self.channels)


def _check_finite(arr: np.ndarray) -> None:
    bad = ~np.isfinite(arr)
    if bad.any():
        c, t = np.argwhere(bad)[0]
        raise ValueError(f"non-finite value at channel {c}, sample {t}")


def normalize(raw, scale: float = DEFAULT_SCALE, fs: float = 100.0) -> EegSegment:
    """Scale raw amplitudes into model units."""
    if not scale > 0:
        raise ValueError(f"scale must be positive, got {scale}")
    arr = np.asarray(raw, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[None, :]
    _check_finite(arr)
    return EegSegment(arr * scale, fs=fs, scale=scale)


def patchify(segment: EegSegment | np.ndarray, patch_size: int) -> PatchSequence:
    data = segment.data if isinstance(segment, EegSegment) else np.asarray(segment)
    c, t = data.shape
    if patch_size < 1 or t % patch_size:
        raise ValueError(f"T={t} is not divisible by patch size P={patch_size}")
    return PatchSequence(data.reshape(c, t // patch_size, patch_size), patch_size)


def unpatchify(patches: PatchSequence) -> np.ndarray:
    c, n, p = patches.tokens.shape
    return patches.tokens.reshape(c, n * p)


def token_count(channels: int, samples: int, patch_size: int) -> int:
    if samples % patch_size:
        raise ValueError(f"T={samples} is not divisible by patch size P={patch_size}")
    return channels * (samples // patch_size)
