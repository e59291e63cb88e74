"""Class-conditional synthetic EEG corpus, class-balanced sampling and the dataset file format.

Each class mixes a ``1/f^chi`` background, an optional narrow-band rhythm,
optional heavy-tailed transients at Poisson times shared by all channels,
and a slow multiplicative envelope.

Dataset file layout (little-endian)::

    b"JETD0001"
    uint32 header_length, header_length bytes of UTF-8 JSON
    per segment: int32 class_id, C*T float32 (channel-major)

The sidecar manifest (``<file>.manifest.json``) records the full corpus spec,
per-class counts and the transient onset samples of every segment.
"""

from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .signal_core import DEFAULT_SCALE, EegSegment, LabeledSegment

MAGIC = b"JETD0001"
FORMAT_VERSION = 1
PARETO_SHAPE = 3.0


class DatasetFormatError(OSError):
    """Malformed or truncated dataset file."""


# ---------------------------------------------------------------------------
# specs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PeakSpec:
    center: float
    bandwidth: float
    power: float


@dataclass(frozen=True)
class BurstSpec:
    rate: float
    amplitude: float
    width: float = 0.05  # seconds (Gaussian sigma)


@dataclass(frozen=True)
class EnvelopeSpec:
    depth: float = 0.0
    rate: float = 0.2  # Hz


@dataclass(frozen=True)
class ClassSpec:
    name: str
    chi: float
    amplitude: float = 100.0
    peak: Optional[PeakSpec] = None
    bursts: Optional[BurstSpec] = None
    envelope: EnvelopeSpec = field(default_factory=EnvelopeSpec)

    def validate(self, fs: float) -> None:
        if not 0.5 <= self.chi <= 3.0:
            raise ValueError(f"class {self.name!r}: chi must lie in [0.5, 3], got {self.chi}")
        if self.amplitude <= 0:
            raise ValueError(f"class {self.name!r}: amplitude must be positive")
        if self.peak is not None:
            if not 0 < self.peak.center < fs / 2:
                raise ValueError(f"class {self.name!r}: peak.center must lie in (0, {fs / 2}), got {self.peak.center}")
            if self.peak.bandwidth <= 0 or self.peak.power < 0:
                raise ValueError(f"class {self.name!r}: peak bandwidth must be > 0 and power >= 0")
        if self.bursts is not None:
            if self.bursts.rate < 0 or self.bursts.amplitude < 0 or self.bursts.width <= 0:
                raise ValueError(f"class {self.name!r}: bursts need rate >= 0, amplitude >= 0, width > 0")
        if not 0 <= self.envelope.depth < 1 or self.envelope.rate < 0:
            raise ValueError(f"class {self.name!r}: envelope.depth must lie in [0, 1) and rate >= 0")

    @classmethod
    def from_dict(cls, d: dict) -> "ClassSpec":
        d = dict(d)
        peak = d.pop("peak", None)
        bursts = d.pop("bursts", None)
        env = d.pop("envelope", None)
        return cls(
            peak=PeakSpec(**peak) if peak else None,
            bursts=BurstSpec(**bursts) if bursts else None,
            envelope=EnvelopeSpec(**env) if env else EnvelopeSpec(),
            **d,
        )


@dataclass(frozen=True)
class Geometry:
    channels: int = 4
    samples: int = 400
    fs: float = 100.0


def default_classes() -> Tuple[ClassSpec, ...]:
    return (
        ClassSpec("background", chi=1.5, amplitude=100.0,
                  peak=PeakSpec(10.0, 1.0, 0.1), envelope=EnvelopeSpec(0.3, 0.3)),
        ClassSpec("spike_wave", chi=1.0, amplitude=80.0,
                  peak=PeakSpec(3.0, 0.5, 1.0), bursts=BurstSpec(0.75, 3.0, 0.03),
                  envelope=EnvelopeSpec(0.2, 0.25)),
        ClassSpec("artifact", chi=2.0, amplitude=120.0,
                  bursts=BurstSpec(0.4, 6.0, 0.08), envelope=EnvelopeSpec(0.5, 0.5)),
    )


@dataclass(frozen=True)
class CorpusSpec:
    classes: Tuple[ClassSpec, ...] = field(default_factory=default_classes)
    counts: Tuple[int, ...] = (430, 128, 42)  # 10:3:1, 600 segments
    channels: int = 4
    samples: int = 400
    fs: float = 100.0
    scale: float = DEFAULT_SCALE
    seed: int = 0

    def validate(self) -> None:
        if len(self.classes) < 2:
            raise ValueError("corpus needs at least 2 classes")
        if len(self.counts) != len(self.classes):
            raise ValueError(f"counts has {len(self.counts)} entries for {len(self.classes)} classes")
        if any(int(n) < 1 for n in self.counts):
            raise ValueError(f"every class count must be >= 1, got {list(self.counts)}")
        if self.channels < 1 or self.samples < 16 or self.fs <= 0 or self.scale <= 0:
            raise ValueError("geometry needs channels >= 1, samples >= 16, fs > 0, scale > 0")
        for c in self.classes:
            c.validate(self.fs)

    @property
    def geometry(self) -> Geometry:
        return Geometry(self.channels, self.samples, self.fs)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["classes"] = [asdict(c) for c in self.classes]
        d["counts"] = list(self.counts)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "CorpusSpec":
        d = dict(d)
        if "classes" in d:
            d["classes"] = tuple(ClassSpec.from_dict(c) for c in d["classes"])
        if "counts" in d:
            d["counts"] = tuple(int(n) for n in d["counts"])
        return cls(**d)


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------


def gen_colored_noise(chi: float, n: int, fs: float, rng: np.random.Generator) -> np.ndarray:
    """Unit-variance noise with power spectral density ``~ 1/f^chi``."""
    if not 0.0 <= chi <= 4.0:
        raise ValueError(f"chi must lie in [0, 4], got {chi}")
    if n < 16:
        raise ValueError(f"need at least 16 samples, got {n}")
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1.0 / fs)
    gain = np.zeros_like(f)
    gain[1:] = f[1:] ** (-chi / 2.0)
    x = np.fft.irfft(spec * gain, n)
    x -= x.mean()
    return x / x.std()


def narrowband_noise(center: float, bandwidth: float, n: int, fs: float, rng: np.random.Generator) -> np.ndarray:
    """Unit-variance noise with a Gaussian spectral bump at ``center`` Hz."""
    spec = np.fft.rfft(rng.standard_normal(n))
    f = np.fft.rfftfreq(n, 1.0 / fs)
    x = np.fft.irfft(spec * np.exp(-0.5 * ((f - center) / bandwidth) ** 2), n)
    x -= x.mean()
    sd = x.std()
    return x / sd if sd > 0 else x


def _burst_train(spec: BurstSpec, geo: Geometry, rng: np.random.Generator):
    n = geo.samples
    count = rng.poisson(spec.rate * n / geo.fs)
    sigma = spec.width * geo.fs
    margin = min(int(math.ceil(2 * sigma)), n // 4)
    onsets = np.sort(rng.integers(margin, n - margin, size=count)) if count else np.zeros(0, dtype=np.int64)
    amps = spec.amplitude * (rng.pareto(PARETO_SHAPE, size=count) + 1.0) * rng.choice([-1.0, 1.0], size=count)
    gains = rng.uniform(0.5, 1.0, size=geo.channels)
    t = np.arange(n)
    wave = np.zeros(n)
    for onset, amp in zip(onsets, amps):
        wave += amp * np.exp(-0.5 * ((t - onset) / sigma) ** 2)
    return gains[:, None] * wave[None, :], [int(o) for o in onsets]


def gen_class_segment(spec: ClassSpec, class_id: int, geo: Geometry, rng: np.random.Generator,
                      scale: float = DEFAULT_SCALE) -> LabeledSegment:
    """One normalized segment; transient onsets are attached as ``events``."""
    spec.validate(geo.fs)
    c, n, fs = geo.channels, geo.samples, geo.fs
    x = np.stack([gen_colored_noise(spec.chi, n, fs, rng) for _ in range(c)])
    if spec.peak is not None and spec.peak.power > 0:
        osc = np.stack([narrowband_noise(spec.peak.center, spec.peak.bandwidth, n, fs, rng) for _ in range(c)])
        x = x + math.sqrt(spec.peak.power) * osc
    env = spec.envelope
    if env.depth > 0:
        phase = rng.uniform(0.0, 2.0 * math.pi)
        x = x * (1.0 + env.depth * np.sin(2.0 * math.pi * env.rate * np.arange(n) / fs + phase))[None, :]
    events: List[int] = []
    if spec.bursts is not None and spec.bursts.amplitude > 0 and spec.bursts.rate > 0:
        bursts, events = _burst_train(spec.bursts, geo, rng)
        x = x + bursts
    raw = spec.amplitude * x
    return LabeledSegment(EegSegment(raw * scale, fs=fs, scale=scale), class_id, tuple(events))


def segment_rng(master_seed: int, index: int) -> np.random.Generator:
    """Independent per-segment generator derived from the corpus seed."""
    return np.random.default_rng([int(master_seed), int(index)])


@dataclass
class Dataset:
    data: np.ndarray  # (n, C, T) float32
    labels: np.ndarray  # (n,) int
    header: dict
    events: Optional[List[List[int]]] = None

    @property
    def num_classes(self) -> int:
        return len(self.header["classes"])

    @property
    def fs(self) -> float:
        return float(self.header["fs"])

    @property
    def geometry(self) -> Tuple[int, int]:
        return int(self.header["C"]), int(self.header["T"])

    def __len__(self) -> int:
        return int(self.labels.size)

    def class_counts(self) -> List[int]:
        return [int(np.sum(self.labels == k)) for k in range(self.num_classes)]

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        events = [self.events[i] for i in idx] if self.events is not None else None
        header = dict(self.header)
        header["counts"] = [int(np.sum(self.labels[idx] == k)) for k in range(self.num_classes)]
        return Dataset(self.data[idx], self.labels[idx], header, events)


def generate_corpus(spec: CorpusSpec) -> Dataset:
    spec.validate()
    geo = spec.geometry
    segs, labels, events = [], [], []
    index = 0
    for class_id, (cspec, count) in enumerate(zip(spec.classes, spec.counts)):
        for _ in range(int(count)):
            seg = gen_class_segment(cspec, class_id, geo, segment_rng(spec.seed, index), spec.scale)
            segs.append(seg.segment.data)
            labels.append(class_id)
            events.append(list(seg.events))
            index += 1
    header = corpus_header(spec)
    return Dataset(np.asarray(segs, dtype=np.float32), np.asarray(labels, dtype=np.int64), header, events)


def corpus_header(spec: CorpusSpec) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "C": spec.channels,
        "T": spec.samples,
        "fs": spec.fs,
        "scale": spec.scale,
        "classes": [c.name for c in spec.classes],
        "counts": [int(n) for n in spec.counts],
        "seed": spec.seed,
    }


def manifest_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".manifest.json")


def build_corpus(spec: CorpusSpec, path) -> Tuple[Path, Path]:
    """Generate the corpus and write the dataset file plus its manifest."""
    ds = generate_corpus(spec)
    path = Path(path)
    write_dataset(path, ds)
    manifest = {
        "format_version": FORMAT_VERSION,
        "seed": spec.seed,
        "counts": [int(n) for n in spec.counts],
        "spec": spec.to_dict(),
        "events": ds.events,
    }
    mpath = manifest_path(path)
    _write_bytes(mpath, (json.dumps(manifest, sort_keys=True, indent=1) + "\n").encode())
    return path, mpath


# ---------------------------------------------------------------------------
# file format
# ---------------------------------------------------------------------------


def _write_bytes(path: Path, payload: bytes) -> None:
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(payload)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def encode_dataset(ds: Dataset) -> bytes:
    n = len(ds)
    c, t = ds.geometry
    if ds.data.shape != (n, c, t):
        raise ValueError(f"data shape {ds.data.shape} does not match header geometry ({n}, {c}, {t})")
    header = json.dumps(ds.header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    rec = np.dtype([("label", "<i4"), ("x", "<f4", (c * t,))])
    body = np.empty(n, dtype=rec)
    body["label"] = ds.labels
    body["x"] = np.asarray(ds.data, dtype=np.float32).reshape(n, c * t)
    return MAGIC + struct.pack("<I", len(header)) + header + body.tobytes()


def write_dataset(path, ds: Dataset) -> Path:
    path = Path(path)
    _write_bytes(path, encode_dataset(ds))
    return path


def decode_dataset(payload: bytes, source: str = "<bytes>") -> Dataset:
    if payload[:8] != MAGIC:
        raise DatasetFormatError(f"{source}: bad magic {payload[:8]!r}")
    if len(payload) < 12:
        raise DatasetFormatError(f"{source}: truncated header")
    (hlen,) = struct.unpack("<I", payload[8:12])
    try:
        header = json.loads(payload[12:12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DatasetFormatError(f"{source}: unreadable header ({exc})") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise DatasetFormatError(f"{source}: unsupported format_version {header.get('format_version')!r}")
    c, t = int(header["C"]), int(header["T"])
    n = int(sum(header["counts"]))
    rec = np.dtype([("label", "<i4"), ("x", "<f4", (c * t,))])
    body = payload[12 + hlen:]
    if len(body) != n * rec.itemsize:
        raise DatasetFormatError(f"{source}: payload has {len(body)} bytes, expected {n * rec.itemsize}")
    arr = np.frombuffer(body, dtype=rec)
    labels = arr["label"].astype(np.int64)
    if n and (labels.min() < 0 or labels.max() >= len(header["classes"])):
        raise DatasetFormatError(f"{source}: class id out of range")
    data = arr["x"].reshape(n, c, t).astype(np.float32)
    return Dataset(data, labels, header)


def read_dataset(path, with_events: bool = True) -> Dataset:
    path = Path(path)
    try:
        payload = path.read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc.strerror or exc}") from exc
    ds = decode_dataset(payload, str(path))
    mpath = manifest_path(path)
    if with_events and mpath.exists():
        try:
            ds.events = json.loads(mpath.read_text()).get("events")
        except json.JSONDecodeError as exc:
            raise DatasetFormatError(f"{mpath}: unreadable manifest ({exc})") from exc
    return ds


def make_dataset(data: np.ndarray, labels: Sequence[int], classes: Sequence[str], fs: float,
                 scale: float = DEFAULT_SCALE, seed: int = 0, events=None) -> Dataset:
    data = np.asarray(data, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.int64)
    header = {
        "format_version": FORMAT_VERSION,
        "C": int(data.shape[1]),
        "T": int(data.shape[2]),
        "fs": float(fs),
        "scale": float(scale),
        "classes": list(classes),
        "counts": [int(np.sum(labels == k)) for k in range(len(classes))],
        "seed": int(seed),
    }
    return Dataset(data, labels, header, events)


# ---------------------------------------------------------------------------
# class-balanced sampler
# ---------------------------------------------------------------------------


class ClassBalancedSampler:
    """Draws sample ``i`` with probability proportional to ``N_{c(i)}^-alpha``."""

    def __init__(self, labels: Sequence[int], alpha: float, rng: np.random.Generator):
        if not 0.0 <= alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
        labels = np.asarray(labels, dtype=np.int64)
        if labels.size == 0:
            raise ValueError("sampler needs at least one sample")
        self.alpha = alpha
        self.labels = labels
        counts = np.bincount(labels)
        w = counts[labels].astype(np.float64) ** (-alpha)
        self.weights = w / w.sum()
        self.cumulative = np.cumsum(self.weights)
        self.cumulative[-1] = 1.0
        self.rng = rng

    def next(self) -> int:
        return int(np.searchsorted(self.cumulative, self.rng.random(), side="right"))

    def draw(self, n: int) -> np.ndarray:
        idx = np.searchsorted(self.cumulative, self.rng.random(n), side="right")
        return np.minimum(idx, self.labels.size - 1)

    def class_mass(self) -> Dict[int, float]:
        return {int(k): float(self.weights[self.labels == k].sum()) for k in np.unique(self.labels)}


def sampler_next(sampler: ClassBalancedSampler) -> int:
    return sampler.next()
