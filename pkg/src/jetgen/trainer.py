"""AdamW optimization loop with warmup, EMA weights, label dropout and checkpoints.

Checkpoint layout (little-endian)::

    b"JETC0001"
    uint32 header_length, JSON header {format_version, model, train, step, dtype, params: [{name, shape, offset}]}
    float64 blocks: raw params, EMA params, first moments, second moments (each in manifest order)
    uint32 state_length, JSON bit-generator state
"""

from __future__ import annotations

import csv
import io
import json
import math
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from .flow import FlowConfig, interpolate, reconstruct_x1, sample_base, sample_time
from .model import JetConfig, as_leaves, forward, init_params, is_decay_exempt, param_shapes
from .objectives import LossWeights, total_loss
from .synthgen import ClassBalancedSampler, Dataset
from .tensorgrad import Tape, Tensor, backward

MAGIC = b"JETC0001"
FORMAT_VERSION = 1
LOG_COLUMNS = ("step", "recon", "cons", "tv", "corr", "total", "lr")


class CheckpointFormatError(OSError):
    """Malformed or truncated checkpoint file."""


class TrainingFailure(FloatingPointError):
    def __init__(self, step: int, terms: dict, max_activation: float):
        self.step = step
        self.terms = terms
        self.max_activation = max_activation
        parts = ", ".join(f"{k}={v:.4g}" for k, v in terms.items())
        super().__init__(f"non-finite loss at step {step} ({parts}; max|v| = {max_activation:.4g})")


@dataclass(frozen=True)
class TrainConfig:
    """Defaults are the full-scale recipe; :func:`desk_train_config` gives the CPU one."""

    lr: float = 5e-5
    betas: Tuple[float, float] = (0.9, 0.95)
    weight_decay: float = 0.01
    batch_size: int = 256
    epochs: int = 200
    warmup_epochs: float = 5.0
    ema_decay: float = 0.9999
    label_drop: float = 0.1
    alpha: float = 1.0
    seed: int = 0
    flow: FlowConfig = field(default_factory=FlowConfig)
    weights: LossWeights = field(default_factory=LossWeights)
    max_steps: Optional[int] = None
    adam_eps: float = 1e-8
    dtype: str = "float32"

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        if not (self.lr > 0 and math.isfinite(self.lr)):
            raise ValueError(f"lr must be positive, got {self.lr}")
        if len(self.betas) != 2 or not all(0.0 <= b < 1.0 for b in self.betas):
            raise ValueError(f"betas must lie in [0, 1), got {self.betas}")
        if not 0.0 <= self.ema_decay < 1.0:
            raise ValueError(f"ema_decay must lie in [0, 1), got {self.ema_decay}")
        if not 0.0 <= self.label_drop < 1.0 + 1e-12:
            raise ValueError(f"label_drop must lie in [0, 1], got {self.label_drop}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.batch_size < 1 or self.epochs < 0 or self.warmup_epochs < 0 or self.weight_decay < 0:
            raise ValueError("batch_size >= 1, epochs >= 0, warmup_epochs >= 0 and weight_decay >= 0 required")
        if self.max_steps is not None and self.max_steps < 0:
            raise ValueError("max_steps must be >= 0")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got {self.dtype!r}")

    def steps_per_epoch(self, n: int) -> int:
        return max(1, math.ceil(n / self.batch_size))

    def total_steps(self, n: int) -> int:
        steps = self.epochs * self.steps_per_epoch(n)
        return steps if self.max_steps is None else min(steps, self.max_steps)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        if "flow" in d:
            d["flow"] = FlowConfig(**d["flow"])
        if "weights" in d:
            d["weights"] = LossWeights(**d["weights"])
        if "betas" in d:
            d["betas"] = tuple(d["betas"])
        return cls(**d)


def desk_train_config(**overrides) -> TrainConfig:
    """CPU recipe: batch 32, 300 epochs (5.7k steps on a 600-segment corpus), EMA 0.999."""
    base = TrainConfig(lr=1e-3, batch_size=32, epochs=300, warmup_epochs=5.0, ema_decay=0.999)
    return replace(base, **overrides)


@dataclass
class OptimState:
    m: Dict[str, np.ndarray]
    v: Dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: Dict[str, np.ndarray]) -> "OptimState":
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()}, 0)


def adamw_step(params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray], state: OptimState,
               config: TrainConfig, lr: Optional[float] = None,
               exempt: Callable[[str], bool] = is_decay_exempt) -> Tuple[Dict[str, np.ndarray], OptimState]:
    """One decoupled-weight-decay Adam update with bias correction (returns new dicts)."""
    lr = config.lr if lr is None else lr
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise FloatingPointError(f"non-finite gradient for parameter {name!r}")
    b1, b2 = config.betas
    step = state.step + 1
    c1 = 1.0 - b1 ** step
    c2 = 1.0 - b2 ** step
    new_p, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * (g * g)
        update = (m / c1) / (np.sqrt(v / c2) + config.adam_eps)
        decay = 0.0 if exempt(name) else config.weight_decay
        q = p * (1.0 - lr * decay) - lr * update if decay else p - lr * update
        new_p[name] = q.astype(p.dtype, copy=False)
        new_m[name] = m.astype(p.dtype, copy=False)
        new_v[name] = v.astype(p.dtype, copy=False)
    return new_p, OptimState(new_m, new_v, step)


def lr_schedule(epoch: float, config: TrainConfig) -> float:
    """Linear ramp from 0 to ``lr`` over the warmup epochs, constant afterwards."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    if config.warmup_epochs <= 0 or epoch >= config.warmup_epochs:
        return config.lr
    return config.lr * epoch / config.warmup_epochs


def step_lr(step: int, steps_per_epoch: int, config: TrainConfig) -> float:
    """Rate for 0-based ``step``: warmup counts completed batches, so the first step is > 0."""
    return lr_schedule((step + 1) / steps_per_epoch, config)


def ema_update(ema: Dict[str, np.ndarray], params: Dict[str, np.ndarray], decay: float) -> Dict[str, np.ndarray]:
    out = {}
    for name, p in params.items():
        e = ema[name]
        if e.shape != p.shape:
            raise ValueError(f"EMA shape mismatch for {name!r}: {e.shape} vs {p.shape}")
        out[name] = p.copy() if decay == 0.0 else (decay * e + (1.0 - decay) * p).astype(p.dtype, copy=False)
    return out


# ---------------------------------------------------------------------------
# checkpoint
# ---------------------------------------------------------------------------


@dataclass
class Checkpoint:
    model: JetConfig
    train: TrainConfig
    params: Dict[str, np.ndarray]
    ema: Dict[str, np.ndarray]
    optim: OptimState
    rng_state: dict

    @property
    def step(self) -> int:
        return self.optim.step

    def rng(self) -> np.random.Generator:
        bitgen = np.random.PCG64()
        bitgen.state = self.rng_state
        return np.random.Generator(bitgen)


def _jsonable_state(state: dict) -> dict:
    return json.loads(json.dumps(state, default=int))


def encode_checkpoint(ck: Checkpoint) -> bytes:
    manifest, offset = [], 0
    for name, shape in param_shapes(ck.model):
        if ck.params[name].shape != shape:
            raise ValueError(f"parameter {name!r} has shape {ck.params[name].shape}, expected {shape}")
        manifest.append({"name": name, "shape": list(shape), "offset": offset})
        offset += int(np.prod(shape))
    header = {
        "format_version": FORMAT_VERSION,
        "model": ck.model.to_dict(),
        "train": ck.train.to_dict(),
        "step": ck.step,
        "dtype": ck.train.dtype,
        "params": manifest,
        "block_size": offset,
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    blocks = []
    for group in (ck.params, ck.ema, ck.optim.m, ck.optim.v):
        blocks.append(np.concatenate([np.asarray(group[e["name"]], dtype="<f8").ravel() for e in manifest]))
    sbytes = json.dumps(_jsonable_state(ck.rng_state), sort_keys=True, separators=(",", ":")).encode()
    return (MAGIC + struct.pack("<I", len(hbytes)) + hbytes + np.concatenate(blocks).tobytes()
            + struct.pack("<I", len(sbytes)) + sbytes)


def decode_checkpoint(payload: bytes, source: str = "<bytes>") -> Checkpoint:
    if payload[:8] != MAGIC:
        raise CheckpointFormatError(f"{source}: bad magic {payload[:8]!r}")
    try:
        (hlen,) = struct.unpack("<I", payload[8:12])
        header = json.loads(payload[12:12 + hlen].decode())
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"{source}: unreadable header ({exc})") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointFormatError(f"{source}: unsupported format_version {header.get('format_version')!r}")
    model = JetConfig(**header["model"])
    train = TrainConfig.from_dict(header["train"])
    size = int(header["block_size"])
    start = 12 + hlen
    end = start + 4 * size * 8
    if len(payload) < end + 4:
        raise CheckpointFormatError(f"{source}: truncated parameter blocks")
    flat = np.frombuffer(payload[start:end], dtype="<f8").reshape(4, size)
    (slen,) = struct.unpack("<I", payload[end:end + 4])
    if len(payload) != end + 4 + slen:
        raise CheckpointFormatError(f"{source}: generator state has {len(payload) - end - 4} bytes, expected {slen}")
    try:
        rng_state = json.loads(payload[end + 4:].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointFormatError(f"{source}: unreadable generator state ({exc})") from exc
    dtype = np.dtype(header["dtype"])
    groups = []
    for row in flat:
        g = {}
        for e in header["params"]:
            n = int(np.prod(e["shape"]))
            g[e["name"]] = row[e["offset"]:e["offset"] + n].reshape(e["shape"]).astype(dtype)
        groups.append(g)
    return Checkpoint(model, train, groups[0], groups[1], OptimState(groups[2], groups[3], int(header["step"])), rng_state)


def save_checkpoint(path, ck: Checkpoint) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(encode_checkpoint(ck))
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    try:
        payload = path.read_bytes()
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc.strerror or exc}") from exc
    return decode_checkpoint(payload, str(path))


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    log: List[dict]

    def log_csv(self) -> str:
        return format_log(self.log)


def format_log(rows: List[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(LOG_COLUMNS)
    for r in rows:
        writer.writerow([r["step"]] + [repr(float(r[k])) for k in LOG_COLUMNS[1:]])
    return buf.getvalue()


def init_checkpoint(model: JetConfig, config: TrainConfig) -> Checkpoint:
    rng = np.random.default_rng(config.seed)
    params = init_params(model, rng, dtype=np.dtype(config.dtype))
    ema = {k: v.copy() for k, v in params.items()}
    return Checkpoint(model, config, params, ema, OptimState.zeros_like(params), rng.bit_generator.state)


def train_step(params, x1: np.ndarray, labels: np.ndarray, model: JetConfig, config: TrainConfig,
               rng: np.random.Generator, step: int = 0):
    """Loss breakdown and gradients for one batch; consumes base, time and drop draws from ``rng``."""
    dtype = np.dtype(config.dtype)
    b = x1.shape[0]
    drop = rng.random(b) < config.label_drop
    c = np.where(drop, model.null_class, labels)
    x0 = sample_base(x1.shape, config.flow.base_mode, rng, dtype=dtype)
    t = sample_time(config.flow, rng, size=b)
    x_t = interpolate(x0, x1, t.astype(dtype)).astype(dtype, copy=False)
    leaves = as_leaves(params)
    with Tape():
        v = forward(x_t, t, c, leaves, model)
        x1_hat = reconstruct_x1(Tensor(x_t), v, t)
        parts = total_loss(Tensor(x1), x1_hat, config.weights, smooth=True)
        if not math.isfinite(parts.total_value):
            raise TrainingFailure(step, parts.as_row(), float(np.max(np.abs(v.data))))
        grads = backward(parts.total, params=leaves)
    return parts, grads


def train(config: TrainConfig, dataset: Dataset, model: Optional[JetConfig] = None,
          resume: Optional[Checkpoint] = None, until: Optional[int] = None,
          progress: Optional[Callable[[dict], None]] = None) -> TrainResult:
    """Run (or continue) training; ``until`` stops early at that global step.

    All randomness (init, sampler, base, time, label drop) flows from one
    generator seeded by ``config.seed`` and saved in every checkpoint.
    """
    if resume is None:
        if model is None:
            c, t = dataset.geometry
            model = JetConfig(channels=c, samples=t, num_classes=dataset.num_classes)
        ck = init_checkpoint(model, config)
    else:
        ck = resume
        model, config = ck.model, ck.train
    if dataset.geometry != (model.channels, model.samples):
        raise ValueError(f"dataset geometry {dataset.geometry} does not match model ({model.channels}, {model.samples})")
    if dataset.num_classes != model.num_classes:
        raise ValueError(f"dataset has {dataset.num_classes} classes, model expects {model.num_classes}")
    dtype = np.dtype(config.dtype)
    data = dataset.data.astype(dtype, copy=False)
    rng = ck.rng()
    sampler = ClassBalancedSampler(dataset.labels, config.alpha, rng)
    spe = config.steps_per_epoch(len(dataset))
    total = config.total_steps(len(dataset))
    stop = total if until is None else min(until, total)
    params, ema, optim = ck.params, ck.ema, ck.optim
    log: List[dict] = []
    while optim.step < stop:
        step = optim.step
        idx = sampler.draw(config.batch_size)
        parts, grads = train_step(params, data[idx], dataset.labels[idx], model, config, rng, step)
        lr = step_lr(step, spe, config)
        params, optim = adamw_step(params, grads, optim, config, lr=lr)
        ema = ema_update(ema, params, config.ema_decay)
        row = {"step": step + 1, **parts.as_row(), "lr": lr}
        log.append(row)
        if progress is not None:
            progress(row)
    out = Checkpoint(model, config, params, ema, optim, rng.bit_generator.state)
    return TrainResult(out, log)
