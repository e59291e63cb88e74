"""Patch-token transformer that predicts the flow-matching vector field.

Tokens keep channel identity: each length-``P`` patch of each channel is
projected on its own, giving ``C*N`` tokens in channel-major order.  Time and
class are summed into one conditioning vector that drives adaLN modulation
(shift, scale and, by default, a residual gate) in every block.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Dict, Iterator, Tuple

import numpy as np

from .tensorgrad import Tensor, parameter, take_rows

LN_EPS = 1e-6
TIME_SCALE = 1000.0


@dataclass(frozen=True)
class JetConfig:
    channels: int = 4
    samples: int = 400
    patch_size: int = 50
    embed_dim: int = 64
    depth: int = 4
    heads: int = 4
    num_classes: int = 3
    label_drop: float = 0.1
    mlp_ratio: int = 4
    time_freq_dim: int = 64
    gated: bool = True

    def __post_init__(self):
        if self.embed_dim % self.heads:
            raise ValueError(f"embed_dim={self.embed_dim} not divisible by heads={self.heads}")
        if self.samples % self.patch_size:
            raise ValueError(f"T={self.samples} is not divisible by patch size P={self.patch_size}")
        if not 0.0 <= self.label_drop < 1.0:
            raise ValueError(f"label_drop must lie in [0, 1), got {self.label_drop}")
        if min(self.channels, self.depth, self.heads, self.num_classes, self.mlp_ratio) < 1:
            raise ValueError("channels, depth, heads, num_classes and mlp_ratio must be >= 1")
        if self.time_freq_dim < 2 or self.time_freq_dim % 2:
            raise ValueError("time_freq_dim must be an even integer >= 2")

    @property
    def num_patches(self) -> int:
        return self.samples // self.patch_size

    @property
    def num_tokens(self) -> int:
        return self.channels * self.num_patches

    @property
    def null_class(self) -> int:
        return self.num_classes

    @property
    def mod_chunks(self) -> int:
        return 6 if self.gated else 4

    def to_dict(self) -> dict:
        return asdict(self)


# full-scale geometry (16 x 2000 @ 200 Hz, P=200); D/L/H are our choice
FULL_SCALE = JetConfig(
    channels=16, samples=2000, patch_size=200, embed_dim=768, depth=12, heads=12,
    num_classes=2, time_freq_dim=256,
)


def param_shapes(cfg: JetConfig) -> Iterator[Tuple[str, Tuple[int, ...]]]:
    d, p = cfg.embed_dim, cfg.patch_size
    hid = cfg.mlp_ratio * d
    yield "embed.weight", (p, d)
    yield "embed.bias", (d,)
    yield "pos_embed", (cfg.num_tokens, d)
    yield "time.fc1.weight", (cfg.time_freq_dim, d)
    yield "time.fc1.bias", (d,)
    yield "time.fc2.weight", (d, d)
    yield "time.fc2.bias", (d,)
    yield "class_table", (cfg.num_classes + 1, d)
    for i in range(cfg.depth):
        b = f"blocks.{i}."
        yield b + "mod.weight", (d, cfg.mod_chunks * d)
        yield b + "mod.bias", (cfg.mod_chunks * d,)
        yield b + "attn.qkv.weight", (d, 3 * d)
        # no key bias: it shifts every score of a query equally and cancels in the softmax
        yield b + "attn.qv.bias", (2 * d,)
        yield b + "attn.proj.weight", (d, d)
        yield b + "attn.proj.bias", (d,)
        yield b + "mlp.fc1.weight", (d, hid)
        yield b + "mlp.fc1.bias", (hid,)
        yield b + "mlp.fc2.weight", (hid, d)
        yield b + "mlp.fc2.bias", (d,)
    yield "final.mod.weight", (d, 2 * d)
    yield "final.mod.bias", (2 * d,)
    yield "final.out.weight", (d, p)
    yield "final.out.bias", (p,)


def count_params(cfg: JetConfig) -> int:
    """Closed-form parameter census."""
    d, p, k = cfg.embed_dim, cfg.patch_size, cfg.num_classes
    hid = cfg.mlp_ratio * d
    m = cfg.mod_chunks
    embed = p * d + d + cfg.num_tokens * d
    time = cfg.time_freq_dim * d + d + d * d + d
    classes = (k + 1) * d
    block = (d * m * d + m * d) + (3 * d * d + 2 * d) + (d * d + d) + (d * hid + hid) + (hid * d + d)
    final = d * 2 * d + 2 * d + d * p + p
    return embed + time + classes + cfg.depth * block + final


def is_decay_exempt(name: str) -> bool:
    """Embedding tables and modulation heads are excluded from weight decay."""
    return name in ("pos_embed", "class_table") or ".mod." in name


def sincos_table(n: int, dim: int, max_period: float = 10000.0) -> np.ndarray:
    """Fixed sine/cosine position codes ``(n, dim)`` with entries in [-1, 1]."""
    half = dim // 2
    freqs = np.exp(-math.log(max_period) * np.arange(half) / half)
    args = np.arange(n)[:, None] * freqs[None]
    table = np.zeros((n, dim))
    table[:, :half] = np.sin(args)
    table[:, half:2 * half] = np.cos(args)
    return table


def init_params(cfg: JetConfig, rng: np.random.Generator, zero_init: bool = True,
                dtype=np.float64) -> Dict[str, np.ndarray]:
    """Xavier-uniform linears, N(0, 0.02) class/time embeddings, sine/cosine positions.

    The position table starts at unit scale (as DiT's fixed table does) and is
    then learned; its constant offset keeps token amplitude visible through
    layer normalization.

    With ``zero_init`` (adaLN-Zero) every modulation head and the output
    projection start at zero, so the initial field is identically zero.
    """
    params = {}
    for name, shape in param_shapes(cfg):
        if name.endswith(".bias"):
            arr = np.zeros(shape)
        elif name == "pos_embed":
            arr = sincos_table(*shape)
        elif name == "class_table" or name.startswith("time."):
            arr = rng.normal(0.0, 0.02, size=shape)
        else:
            bound = math.sqrt(6.0 / (shape[0] + shape[1]))
            arr = rng.uniform(-bound, bound, size=shape)
        if zero_init and (".mod." in name or name.startswith("final.out")):
            arr = np.zeros(shape)
        params[name] = arr.astype(dtype)
    if not zero_init:
        # exercise every path, including biases
        for name in params:
            if name.endswith(".bias"):
                params[name] = rng.normal(0.0, 0.1, size=params[name].shape).astype(dtype)
    return params


def as_leaves(params: Dict[str, np.ndarray]) -> Dict[str, Tensor]:
    return {k: parameter(v, k, dtype=v.dtype) for k, v in params.items()}


def timestep_embedding(t: np.ndarray, dim: int, max_period: float = 10000.0) -> np.ndarray:
    t = np.asarray(t, dtype=np.float64).reshape(-1) * TIME_SCALE
    half = dim // 2
    freqs = np.exp(-math.log(max_period) * np.arange(half) / half)
    args = t[:, None] * freqs[None]
    return np.concatenate([np.cos(args), np.sin(args)], axis=-1)


def _silu(x: Tensor) -> Tensor:
    return x * x.sigmoid()


def _layer_norm(x: Tensor) -> Tensor:
    mu = x.mean(axis=-1, keepdims=True)
    var = x.var(axis=-1, keepdims=True)
    return (x - mu) / (var + LN_EPS).sqrt()


def _linear(x: Tensor, params, name: str) -> Tensor:
    return x @ params[name + ".weight"] + params[name + ".bias"]


def modulate(x: Tensor, shift: Tensor, scale: Tensor) -> Tensor:
    """Normalize over features, then apply ``(1 + scale)`` and ``shift`` per sample."""
    return _layer_norm(x) * (scale + 1.0) + shift


def _tensorize(params) -> Dict[str, Tensor]:
    return {k: v if isinstance(v, Tensor) else Tensor(v) for k, v in params.items()}


def embed(x, params, cfg: JetConfig) -> Tensor:
    """Token states ``(B, C*N, D)`` for a batch ``(B, C, T)``."""
    x = x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=_param_dtype(params)))
    if x.ndim == 2:
        x = x.reshape(1, *x.shape)
    if x.shape[1:] != (cfg.channels, cfg.samples):
        raise ValueError(f"input geometry {x.shape[1:]} does not match config ({cfg.channels}, {cfg.samples})")
    params = _tensorize(params)
    b = x.shape[0]
    tokens = x.reshape(b, cfg.num_tokens, cfg.patch_size)
    return _linear(tokens, params, "embed") + params["pos_embed"]


def conditioning(t, c, params, cfg: JetConfig) -> Tensor:
    """Sum of the time embedding (sinusoid -> MLP) and the class embedding."""
    params = _tensorize(params)
    dtype = _param_dtype(params)
    freq = Tensor(timestep_embedding(t, cfg.time_freq_dim).astype(dtype))
    temb = _linear(_silu(_linear(freq, params, "time.fc1")), params, "time.fc2")
    labels = np.asarray(c, dtype=np.int64).reshape(-1)
    if labels.size and (labels.min() < 0 or labels.max() > cfg.num_classes):
        raise ValueError(f"class label out of range [0, {cfg.num_classes}]")
    if labels.size == 1 and temb.shape[0] > 1:
        labels = np.repeat(labels, temb.shape[0])
    return temb + take_rows(params["class_table"], labels)


def block_modulation(cond: Tensor, params, cfg: JetConfig, index: int) -> Tuple[Tensor, ...]:
    """Per-block (shift, scale, gate) pairs for attention and MLP branches."""
    params = _tensorize(params)
    d = cfg.embed_dim
    mod = _linear(_silu(cond), params, f"blocks.{index}.mod")
    b = mod.shape[0]
    chunks = [mod[:, i * d:(i + 1) * d].reshape(b, 1, d) for i in range(cfg.mod_chunks)]
    if cfg.gated:
        return tuple(chunks)
    one = Tensor(np.ones((b, 1, d), dtype=mod.dtype))
    s1, sc1, s2, sc2 = chunks
    return s1, sc1, one, s2, sc2, one


def attention(x: Tensor, params, name: str, heads: int) -> Tensor:
    b, n, d = x.shape
    dh = d // heads
    qkv = (x @ params[name + ".qkv.weight"]).reshape(b, n, 3, heads, dh).transpose(2, 0, 3, 1, 4)
    bias = params[name + ".qv.bias"].reshape(2, heads, 1, dh)
    q, k, v = qkv[0] + bias[0], qkv[1], qkv[2] + bias[1]
    att = ((q @ k.transpose(0, 1, 3, 2)) * (1.0 / math.sqrt(dh))).softmax()
    o = (att @ v).transpose(0, 2, 1, 3).reshape(b, n, d)
    return _linear(o, params, name + ".proj")


def transformer_block(h: Tensor, mods: Tuple[Tensor, ...], params, cfg: JetConfig, index: int) -> Tensor:
    shift1, scale1, gate1, shift2, scale2, gate2 = mods
    name = f"blocks.{index}"
    h = h + gate1 * attention(modulate(h, shift1, scale1), params, name + ".attn", cfg.heads)
    ff = _linear(_linear(modulate(h, shift2, scale2), params, name + ".mlp.fc1").gelu(), params, name + ".mlp.fc2")
    return h + gate2 * ff


def forward(x_t, t, c, params, cfg: JetConfig) -> Tensor:
    """Vector field ``v(x_t, t, c)`` with the same shape as ``x_t`` (``(B, C, T)``).

    ``c == cfg.num_classes`` selects the learned null token.
    """
    params = _tensorize(params)
    h = embed(x_t, params, cfg)
    b = h.shape[0]
    t = np.broadcast_to(np.asarray(t, dtype=np.float64).reshape(-1), (b,))
    c = np.broadcast_to(np.asarray(c, dtype=np.int64).reshape(-1), (b,))
    cond = conditioning(t, c, params, cfg)
    for i in range(cfg.depth):
        h = transformer_block(h, block_modulation(cond, params, cfg, i), params, cfg, i)
        if not np.isfinite(h.data).all():
            raise FloatingPointError(f"non-finite activation in block {i}")
    fmod = _linear(_silu(cond), params, "final.mod")
    d = cfg.embed_dim
    shift = fmod[:, :d].reshape(b, 1, d)
    scale = fmod[:, d:].reshape(b, 1, d)
    out = _linear(modulate(h, shift, scale), params, "final.out")
    return out.reshape(b, cfg.channels, cfg.samples)


def _param_dtype(params) -> np.dtype:
    first = next(iter(params.values()))
    return first.dtype


def predict(x_t: np.ndarray, t, c, params: Dict[str, np.ndarray], cfg: JetConfig) -> np.ndarray:
    """Tape-free evaluation returning a numpy array."""
    return forward(x_t, t, c, params, cfg).data
