"""Model definition: encoder, projector, decoder, classifier, and parameter storage.

The encoder treats the F band values of a C x F sample as input feature
maps over the length-C channel axis: three conv1d+ReLU stages, global
average pooling over the channel axis, then a linear map to the
embedding. Projector and classifier are 2-layer MLPs; the decoder is one
linear layer back to C x F.

Checkpoints are a single file: 4-byte magic, u32 LE JSON length, a JSON
index (config plus name -> shape / byte offset), then all parameters as
contiguous little-endian float64, in offset order. Round-trips are
bit-exact.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigurationError, DimensionError, FormatError

CHECKPOINT_MAGIC = b"SCMC"

LOG_SIGMA_CONTRASTIVE = "loss.log_sigma_c"
LOG_SIGMA_RECONSTRUCTION = "loss.log_sigma_r"


@dataclass(frozen=True)
class ConvStage:
    out_channels: int
    kernel: int = 3
    stride: int = 1
    padding: int = 1


DEFAULT_ENCODER = (ConvStage(32), ConvStage(64), ConvStage(128))


@dataclass(frozen=True)
class NetworkConfig:
    channel_count: int
    band_count: int
    class_count: int
    encoder: tuple[ConvStage, ConvStage, ConvStage] = DEFAULT_ENCODER
    embedding_dim: int = 128
    projection_dim: int = 64
    classifier_hidden: int = 64

    def __post_init__(self):
        if len(self.encoder) != 3:
            raise ConfigurationError(f"encoder needs exactly 3 stages, got {len(self.encoder)}")
        if self.embedding_dim < 2 or self.projection_dim < 2:
            raise ConfigurationError("embedding_dim and projection_dim must be >= 2")
        if min(self.channel_count, self.band_count, self.class_count) < 1:
            raise ConfigurationError("channel_count, band_count, class_count must be positive")

    def to_dict(self):
        doc = asdict(self)
        doc["encoder"] = [asdict(stage) for stage in self.encoder]
        return doc

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        doc["encoder"] = tuple(ConvStage(**stage) for stage in doc["encoder"])
        return cls(**doc)


def _parameter_shapes(config: NetworkConfig):
    """Name -> shape map, in canonical order. Linear weights are [in, out]."""
    shapes = {}
    in_channels = config.band_count
    for i, stage in enumerate(config.encoder, start=1):
        shapes[f"encoder.conv{i}.weight"] = (stage.out_channels, in_channels, stage.kernel)
        shapes[f"encoder.conv{i}.bias"] = (stage.out_channels,)
        in_channels = stage.out_channels
    shapes["encoder.embed.weight"] = (in_channels, config.embedding_dim)
    shapes["encoder.embed.bias"] = (config.embedding_dim,)
    shapes["projector.fc1.weight"] = (config.embedding_dim, config.embedding_dim)
    shapes["projector.fc1.bias"] = (config.embedding_dim,)
    shapes["projector.fc2.weight"] = (config.embedding_dim, config.projection_dim)
    shapes["projector.fc2.bias"] = (config.projection_dim,)
    flat = config.channel_count * config.band_count
    shapes["decoder.fc.weight"] = (config.embedding_dim, flat)
    shapes["decoder.fc.bias"] = (flat,)
    shapes["classifier.fc1.weight"] = (config.embedding_dim, config.classifier_hidden)
    shapes["classifier.fc1.bias"] = (config.classifier_hidden,)
    shapes["classifier.fc2.weight"] = (config.classifier_hidden, config.class_count)
    shapes["classifier.fc2.bias"] = (config.class_count,)
    shapes[LOG_SIGMA_CONTRASTIVE] = (1,)
    shapes[LOG_SIGMA_RECONSTRUCTION] = (1,)
    return shapes


def parameter_count(config: NetworkConfig) -> int:
    """Total trainable scalars, a pure function of the config."""
    return sum(int(np.prod(shape)) for shape in _parameter_shapes(config).values())


def _fans(name, shape):
    if name.endswith(".bias") or name.startswith("loss."):
        return None
    if len(shape) == 3:  # conv weight [out, in, k]
        return shape[1] * shape[2], shape[0] * shape[2]
    return shape[0], shape[1]  # linear weight [in, out]


class ParameterStore:
    """Named, ordered map of trainable tensors. Shapes are fixed after init."""

    def __init__(self, config: NetworkConfig, params: dict[str, Tensor]):
        self.config = config
        self.params = params

    def __getitem__(self, name) -> Tensor:
        return self.params[name]

    def names(self):
        return list(self.params)

    def zero_grads(self):
        for p in self.params.values():
            p.zero_grad()

    def clone(self) -> "ParameterStore":
        fresh = {}
        for name, p in self.params.items():
            t = Tensor(p.data.copy(), requires_grad=True)
            fresh[name] = t
        return ParameterStore(self.config, fresh)

    @property
    def log_sigma_contrastive(self) -> Tensor:
        return self.params[LOG_SIGMA_CONTRASTIVE]

    @property
    def log_sigma_reconstruction(self) -> Tensor:
        return self.params[LOG_SIGMA_RECONSTRUCTION]


def init_parameters(config: NetworkConfig, seed: int) -> ParameterStore:
    """Uniform +-sqrt(6 / (fan_in + fan_out)) weights, zero biases; seed-reproducible."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x696E]))
    params = {}
    for name, shape in _parameter_shapes(config).items():
        fans = _fans(name, shape)
        if fans is None:
            data = np.zeros(shape, dtype=np.float64)
        else:
            bound = np.sqrt(6.0 / (fans[0] + fans[1]))
            data = rng.uniform(-bound, bound, size=shape)
        params[name] = Tensor(data, requires_grad=True)
    return ParameterStore(config, params)


# ---------------------------------------------------------------------------
# forward passes
# ---------------------------------------------------------------------------

def _as_batch_tensor(x):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _linear(x, weight, bias):
    return ad.matmul(x, weight) + bias


def encode(store: ParameterStore, x) -> Tensor:
    """[B, C, F] batch to [B, embedding_dim]; per-sample, batch-order equivariant."""
    x = _as_batch_tensor(x)
    cfg = store.config
    if x.data.ndim != 3 or x.data.shape[1:] != (cfg.channel_count, cfg.band_count):
        raise DimensionError(
            f"encode expects [B, {cfg.channel_count}, {cfg.band_count}], got {x.data.shape}"
        )
    t = ad.transpose(x, (0, 2, 1))  # bands become input maps over the channel axis
    for i, stage in enumerate(cfg.encoder, start=1):
        w = store[f"encoder.conv{i}.weight"]
        b = store[f"encoder.conv{i}.bias"]
        t = ad.bias_relu(ad.conv1d(t, w, stride=stage.stride, padding=stage.padding), b)
    pooled = ad.tensor_mean(t, axis=2)
    return _linear(pooled, store["encoder.embed.weight"], store["encoder.embed.bias"])


def project(store: ParameterStore, h) -> Tensor:
    h = _as_batch_tensor(h)
    hidden = ad.relu(_linear(h, store["projector.fc1.weight"], store["projector.fc1.bias"]))
    return _linear(hidden, store["projector.fc2.weight"], store["projector.fc2.bias"])


def decode(store: ParameterStore, h) -> Tensor:
    h = _as_batch_tensor(h)
    cfg = store.config
    flat = _linear(h, store["decoder.fc.weight"], store["decoder.fc.bias"])
    return ad.reshape(flat, (h.data.shape[0], cfg.channel_count, cfg.band_count))


def classify(store: ParameterStore, h) -> Tensor:
    h = _as_batch_tensor(h)
    hidden = ad.relu(_linear(h, store["classifier.fc1.weight"], store["classifier.fc1.bias"]))
    return _linear(hidden, store["classifier.fc2.weight"], store["classifier.fc2.bias"])


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(store: ParameterStore, path) -> None:
    names = store.names()
    offsets = {}
    cursor = 0
    chunks = []
    for name in names:
        data = np.ascontiguousarray(store[name].data, dtype="<f8")
        offsets[name] = cursor
        cursor += data.nbytes
        chunks.append(data.tobytes())
    index = {
        "format_version": 1,
        "config": store.config.to_dict(),
        "parameters": {
            name: {"shape": list(store[name].data.shape), "offset": offsets[name]}
            for name in names
        },
    }
    blob = json.dumps(index, sort_keys=True, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(b"".join(chunks))


def load_checkpoint(path, expected_config: NetworkConfig | None = None) -> ParameterStore:
    raw = Path(path).read_bytes()
    if len(raw) < 8 or raw[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a checkpoint file")
    (json_len,) = struct.unpack_from("<I", raw, 4)
    if len(raw) < 8 + json_len:
        raise FormatError(f"{path}: truncated index ({len(raw)} bytes)")
    try:
        index = json.loads(raw[8 : 8 + json_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: unreadable index: {exc}") from exc
    config = NetworkConfig.from_dict(index["config"])
    payload = raw[8 + json_len :]

    entries = sorted(index["parameters"].items(), key=lambda kv: kv[1]["offset"])
    expected_shapes = _parameter_shapes(config)
    params = {}
    cursor = 0
    for name, meta in entries:
        shape = tuple(meta["shape"])
        if name not in expected_shapes or expected_shapes[name] != shape:
            raise FormatError(f"{path}: parameter {name!r} has shape {shape}, "
                              f"expected {expected_shapes.get(name)}")
        if meta["offset"] != cursor:
            raise FormatError(f"{path}: parameter {name!r} offset {meta['offset']} != {cursor}")
        nbytes = int(np.prod(shape)) * 8
        if cursor + nbytes > len(payload):
            raise FormatError(
                f"{path}: payload too short, expected {cursor + nbytes} bytes, got {len(payload)}"
            )
        data = np.frombuffer(payload, dtype="<f8", count=int(np.prod(shape)), offset=cursor)
        params[name] = Tensor(data.reshape(shape).copy(), requires_grad=True)
        cursor += nbytes
    if cursor != len(payload):
        raise FormatError(f"{path}: {len(payload) - cursor} trailing payload bytes")
    if set(params) != set(expected_shapes):
        missing = sorted(set(expected_shapes) - set(params))
        raise FormatError(f"{path}: missing parameters {missing}")

    if expected_config is not None and expected_config != config:
        stored = _parameter_shapes(config)
        wanted = _parameter_shapes(expected_config)
        for name in wanted:
            if stored.get(name) != wanted[name]:
                raise DimensionError(
                    f"checkpoint parameter {name!r} has shape {stored.get(name)}, "
                    f"expected {wanted[name]} for the requested config"
                )
        raise DimensionError("checkpoint config differs from the requested config")
    return ParameterStore(config, params)
