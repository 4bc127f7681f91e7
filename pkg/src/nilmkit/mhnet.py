"""Multi-head dilated-convolution disaggregator with attention pooling.

One model per appliance. The window of aggregate (P, Q) readings runs
through parallel dilated-conv stacks (one per dilation ratio), the
concatenated feature map is pooled into a context vector by a learned
per-timestep attention score, and two small FC heads turn each of the
center output positions into a power estimate (relu-terminated) and an
on/off probability (sigmoid-terminated). The returned gated series is
their elementwise product.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from . import tensor as tz
from .errors import CheckpointError, ConfigError, DimensionError
from .tensor import Tensor

CHECKPOINT_MAGIC = b"MHN1"
CHECKPOINT_VERSION = 1


@dataclass
class MhNetConfig:
    """Architecture hyperparameters; sizes default to a desk-scale model."""

    input_len: int = 256            # window length m, samples at 1 Hz
    output_len: int = 64            # predicted center span L
    input_channels: int = 2         # active power P, reactive power Q
    head_dilations: tuple[int, ...] = (1, 2, 3)
    layers_per_head: int = 3
    channels_per_layer: int = 16
    kernel_size: int = 5            # must be odd (same padding)
    attention_hidden: int = 16
    fc_hidden: int = 64

    def __post_init__(self):
        self.head_dilations = tuple(int(d) for d in self.head_dilations)
        self.validate()

    def validate(self) -> None:
        if self.output_len < 1 or self.input_len < self.output_len:
            raise ConfigError(f"need input_len >= output_len >= 1, "
                              f"got {self.input_len} and {self.output_len}")
        if (self.input_len - self.output_len) % 2 != 0:
            raise ConfigError("input_len - output_len must be even for symmetric centering")
        if not self.head_dilations or any(d < 1 for d in self.head_dilations):
            raise ConfigError(f"head_dilations must be nonempty positive, got {self.head_dilations}")
        if self.kernel_size % 2 == 0 or self.kernel_size < 1:
            raise ConfigError(f"kernel_size must be odd, got {self.kernel_size}")
        for name in ("input_channels", "layers_per_head", "channels_per_layer",
                     "attention_hidden", "fc_hidden"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")

    @property
    def total_channels(self) -> int:
        return self.channels_per_layer * len(self.head_dilations)

    @property
    def margin(self) -> int:
        """Samples dropped on each side of the window before the output span."""
        return (self.input_len - self.output_len) // 2

    def to_dict(self) -> dict:
        return {
            "input_len": self.input_len,
            "output_len": self.output_len,
            "input_channels": self.input_channels,
            "head_dilations": list(self.head_dilations),
            "layers_per_head": self.layers_per_head,
            "channels_per_layer": self.channels_per_layer,
            "kernel_size": self.kernel_size,
            "attention_hidden": self.attention_hidden,
            "fc_hidden": self.fc_hidden,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MhNetConfig":
        return cls(**{k: tuple(v) if k == "head_dilations" else v for k, v in d.items()})


def _layer_shapes(config: MhNetConfig) -> list[tuple[str, tuple[int, ...], int, int]]:
    """Parameter declaration order: (name, shape, fan_in, fan_out) per entry."""
    c = config.channels_per_layer
    k = config.kernel_size
    ct = config.total_channels
    entries = []
    for hi in range(len(config.head_dilations)):
        for li in range(config.layers_per_head):
            c_in = config.input_channels if li == 0 else c
            entries.append((f"head{hi}.conv{li}.weight", (c, c_in, k), c_in * k, c * k))
            entries.append((f"head{hi}.conv{li}.bias", (c,), c_in * k, c * k))
    entries.append(("attn.fc0.weight", (config.attention_hidden, ct), ct, config.attention_hidden))
    entries.append(("attn.fc0.bias", (config.attention_hidden,), ct, config.attention_hidden))
    entries.append(("attn.fc1.weight", (1, config.attention_hidden), config.attention_hidden, 1))
    entries.append(("attn.fc1.bias", (1,), config.attention_hidden, 1))
    for head in ("power", "onoff"):
        entries.append((f"{head}.fc0.weight", (config.fc_hidden, 2 * ct), 2 * ct, config.fc_hidden))
        entries.append((f"{head}.fc0.bias", (config.fc_hidden,), 2 * ct, config.fc_hidden))
        entries.append((f"{head}.fc1.weight", (1, config.fc_hidden), config.fc_hidden, 1))
        entries.append((f"{head}.fc1.bias", (1,), config.fc_hidden, 1))
    return entries


class MhNetModel:
    """Parameter set plus topology for one appliance's disaggregator.

    ``params`` maps declaration-ordered names to requires_grad Tensors.
    ``meta`` carries artifact plumbing that must travel with a checkpoint
    (appliance name, input normalization, thresholds); it never affects
    the forward pass.
    """

    def __init__(self, config: MhNetConfig, params: dict[str, Tensor], meta: dict | None = None):
        self.config = config
        self.params = params
        self.meta = dict(meta or {})
        for name, shape, _, _ in _layer_shapes(config):
            if name not in params or params[name].shape != shape:
                raise ConfigError(f"parameter {name} missing or misshaped for this config")

    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for name, arr in state.items():
            self.params[name].data = arr.copy()


def xavier_bound(fan_in: int, fan_out: int) -> float:
    return float(np.sqrt(6.0 / (fan_in + fan_out)))


def build(config: MhNetConfig, seed: int) -> MhNetModel:
    """Initialize a model: every layer parameter ~ uniform(-s, s), Xavier s.

    Deterministic for a fixed (config, seed): parameters are drawn in
    declaration order from one numpy Generator.
    """
    config.validate()
    rng = np.random.default_rng(seed)
    params: dict[str, Tensor] = {}
    for name, shape, fan_in, fan_out in _layer_shapes(config):
        s = xavier_bound(fan_in, fan_out)
        params[name] = Tensor(rng.uniform(-s, s, size=shape), requires_grad=True)
    return MhNetModel(config, params)


def _check_window(config: MhNetConfig, window: Tensor) -> None:
    if window.data.ndim not in (2, 3) or \
            window.shape[-2:] != (config.input_channels, config.input_len):
        raise DimensionError(
            f"window shape {window.shape} does not match config "
            f"({config.input_channels} x {config.input_len})")


def forward_features(model: MhNetModel, window) -> Tensor:
    """Run all dilation heads and concatenate on the channel axis.

    window is [2, m] (or [B, 2, m]); the result keeps length m because
    every conv layer is same-padded.
    """
    window = window if isinstance(window, Tensor) else Tensor(window)
    _check_window(model.config, window)
    cfg = model.config
    heads = []
    for hi, d in enumerate(cfg.head_dilations):
        x = window
        for li in range(cfg.layers_per_head):
            x = tz.relu(tz.conv1d(x, model.params[f"head{hi}.conv{li}.weight"],
                                  model.params[f"head{hi}.conv{li}.bias"],
                                  dilation=d, padding="same"))
        heads.append(x)
    return tz.concat(heads, axis=-2) if len(heads) > 1 else heads[0]


def attention_scores(model: MhNetModel, features: Tensor) -> Tensor:
    """Per-timestep scalar score from a two-layer perceptron shared across t."""
    cols = tz.transpose_last2(features)                      # [..., m, C]
    h = tz.relu(tz.linear(cols, model.params["attn.fc0.weight"], model.params["attn.fc0.bias"]))
    e = tz.linear(h, model.params["attn.fc1.weight"], model.params["attn.fc1.bias"])
    return tz.reshape(e, e.shape[:-1])                       # [..., m]


def attention(model: MhNetModel, features) -> tuple[Tensor, Tensor]:
    """Softmax-normalized weights over time and the weighted column sum.

    Returns (alphas [..., m], context [..., C_total]).
    """
    features = features if isinstance(features, Tensor) else Tensor(features)
    scores = attention_scores(model, features)
    alphas = tz.softmax(scores)
    weights = tz.tile_rows(alphas, features.shape[-2])       # [..., C, m]
    context = tz.sum_last(tz.elementwise_mul(features, weights))
    return alphas, context


def _fc_head(model: MhNetModel, head: str, fc_in: Tensor) -> Tensor:
    h = tz.relu(tz.linear(fc_in, model.params[f"{head}.fc0.weight"],
                          model.params[f"{head}.fc0.bias"]))
    out = tz.linear(h, model.params[f"{head}.fc1.weight"], model.params[f"{head}.fc1.bias"])
    return tz.reshape(out, out.shape[:-1])                   # [..., L]


def forward(model: MhNetModel, window) -> tuple[Tensor, Tensor, Tensor]:
    """Full pass: (power [..., L], onoff_prob [..., L], gated = power * prob).

    Each of the L center positions sees its own feature column concatenated
    with the global attention context before the two FC heads.
    """
    window = window if isinstance(window, Tensor) else Tensor(window)
    _check_window(model.config, window)
    cfg = model.config
    features = forward_features(model, window)
    _, context = attention(model, features)

    off = cfg.margin
    center = tz.slice_last(features, off, off + cfg.output_len)   # [..., C, L]
    cols = tz.transpose_last2(center)                             # [..., L, C]
    ctx = tz.tile_rows(context, cfg.output_len)                   # [..., L, C]
    fc_in = tz.concat([cols, ctx], axis=-1)                       # [..., L, 2C]

    power = tz.relu(_fc_head(model, "power", fc_in))
    onoff_prob = tz.sigmoid(_fc_head(model, "onoff", fc_in))
    gated = tz.elementwise_mul(power, onoff_prob)
    return power, onoff_prob, gated


# -- checkpoint format ---------------------------------------------------
#
# little-endian binary:
#   magic "MHN1" | version u32 | json_len u32 | UTF-8 JSON document
#   | parameter blob (contiguous float64, declaration order) | CRC-32 u32
# The JSON document holds {"config": ..., "meta": ...}; the CRC covers all
# preceding bytes.


def save(model: MhNetModel, path) -> None:
    doc = json.dumps({"config": model.config.to_dict(), "meta": model.meta},
                     sort_keys=True).encode("utf-8")
    blob = b"".join(np.ascontiguousarray(p.data, dtype="<f8").tobytes()
                    for p in model.parameters())
    payload = CHECKPOINT_MAGIC + struct.pack("<I", CHECKPOINT_VERSION)
    payload += struct.pack("<I", len(doc)) + doc + blob
    crc = zlib.crc32(payload) & 0xFFFFFFFF
    with open(path, "wb") as fh:
        fh.write(payload + struct.pack("<I", crc))


def load(path) -> MhNetModel:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 16:
        raise CheckpointError(f"truncated checkpoint: {len(raw)} bytes")
    if raw[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"bad magic {raw[:4]!r}, not a model checkpoint")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (stored_crc,) = struct.unpack_from("<I", raw, len(raw) - 4)
    if zlib.crc32(raw[:-4]) & 0xFFFFFFFF != stored_crc:
        raise CheckpointError("checksum mismatch: checkpoint is corrupt")
    (json_len,) = struct.unpack_from("<I", raw, 8)
    doc_end = 12 + json_len
    if doc_end > len(raw) - 4:
        raise CheckpointError("truncated checkpoint header")
    try:
        doc = json.loads(raw[12:doc_end].decode("utf-8"))
        config = MhNetConfig.from_dict(doc["config"])
    except (ValueError, KeyError, TypeError, ConfigError) as exc:
        raise CheckpointError(f"unreadable checkpoint config: {exc}") from exc

    params: dict[str, Tensor] = {}
    cursor = doc_end
    blob = raw[:-4]
    for name, shape, _, _ in _layer_shapes(config):
        count = int(np.prod(shape))
        nbytes = count * 8
        if cursor + nbytes > len(blob):
            raise CheckpointError("truncated parameter blob")
        arr = np.frombuffer(blob, dtype="<f8", count=count, offset=cursor).reshape(shape)
        params[name] = Tensor(arr.copy(), requires_grad=True)
        cursor += nbytes
    if cursor != len(blob):
        raise CheckpointError("parameter blob has trailing bytes")
    return MhNetModel(config, params, meta=doc.get("meta") or {})
