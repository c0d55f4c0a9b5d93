"""Streaming keyword detector built from SVDF layers and bottleneck projections.

An SVDF layer is a rank-1 factored convolution: each unit projects the input
frame with a feature filter, keeps the last ``memory_T`` projections, and
takes their inner product with a time filter. Bottlenecks are bias-free
linear projections. A scalar logit head scores every frame; the utterance
score is the max frame score.

Training uses binary cross-entropy on the utterance score, gradients by
hand-written reverse accumulation, and SGD with momentum.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence, Union

import numpy as np

logger = logging.getLogger(__name__)

CHECKPOINT_MAGIC = b"KWSC"
CHECKPOINT_VERSION = 1


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class SvdfLayerConfig:
    input_dim: int
    num_units: int
    memory_T: int
    activation: str = "relu"

    def __post_init__(self):
        if min(self.input_dim, self.num_units, self.memory_T) < 1:
            raise ModelError(f"SVDF dimensions must be positive: {self}")
        if self.activation not in ("relu", "identity"):
            raise ModelError(f"unknown activation {self.activation!r}")

    @property
    def output_dim(self) -> int:
        return self.num_units

    @property
    def param_count(self) -> int:
        return self.input_dim * self.num_units + self.num_units * self.memory_T + self.num_units


@dataclass(frozen=True)
class BottleneckConfig:
    input_dim: int
    output_dim: int

    def __post_init__(self):
        if min(self.input_dim, self.output_dim) < 1:
            raise ModelError(f"bottleneck dimensions must be positive: {self}")

    @property
    def param_count(self) -> int:
        return self.input_dim * self.output_dim


LayerConfig = Union[SvdfLayerConfig, BottleneckConfig]


@dataclass(frozen=True)
class ModelConfig:
    layers: tuple[LayerConfig, ...]
    input_dim: int = 120

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers:
            raise ModelError("a model needs at least one layer")
        dim = self.input_dim
        for i, layer in enumerate(self.layers):
            if layer.input_dim != dim:
                raise ModelError(f"layer {i} expects input dim {layer.input_dim}, gets {dim}")
            dim = layer.output_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].output_dim

    @property
    def param_count(self) -> int:
        return sum(layer.param_count for layer in self.layers) + self.output_dim + 1

    def to_dict(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "layers": [{"type": "svdf" if isinstance(l, SvdfLayerConfig) else "bottleneck", **asdict(l)} for l in self.layers],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        layers = []
        for l in d["layers"]:
            l = dict(l)
            kind = l.pop("type")
            layers.append(SvdfLayerConfig(**l) if kind == "svdf" else BottleneckConfig(**l))
        return cls(tuple(layers), d.get("input_dim", 120))

    def digest(self) -> bytes:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).digest()


def build_config(spec: Sequence, input_dim: int = 120) -> ModelConfig:
    """Build from a compact spec: ("svdf", units, memory[, activation]) or ("bottleneck", dim)."""
    layers, dim = [], input_dim
    for item in spec:
        if item[0] == "svdf":
            layers.append(SvdfLayerConfig(dim, item[1], item[2], item[3] if len(item) > 3 else "relu"))
        elif item[0] == "bottleneck":
            layers.append(BottleneckConfig(dim, item[1]))
        else:
            raise ModelError(f"unknown layer kind {item[0]!r}")
        dim = layers[-1].output_dim
    return ModelConfig(tuple(layers), input_dim)


def desk_config(units: int = 64, memory: int = 8, bottleneck: int = 16) -> ModelConfig:
    """4 SVDF + 2 bottlenecks, about 21k parameters."""
    return build_config(
        [("svdf", units, memory), ("svdf", units, memory), ("bottleneck", bottleneck),
         ("svdf", units, memory), ("svdf", units, memory), ("bottleneck", bottleneck)]
    )


def large_config() -> ModelConfig:
    """7 SVDF + 3 bottlenecks, about 320k parameters."""
    return build_config(
        [("svdf", 256, 8), ("svdf", 256, 8), ("bottleneck", 64),
         ("svdf", 256, 8), ("svdf", 256, 8), ("bottleneck", 64),
         ("svdf", 256, 8), ("svdf", 256, 8), ("bottleneck", 64),
         ("svdf", 128, 8)]
    )


def tiny_config(units: int = 8, memory: int = 4, input_dim: int = 6) -> ModelConfig:
    return build_config([("svdf", units, memory), ("svdf", units, memory)], input_dim)


NAMED_CONFIGS = {"desk": desk_config, "large": large_config, "tiny": lambda: tiny_config(input_dim=120)}


@dataclass
class Model:
    config: ModelConfig
    params: dict[str, np.ndarray]
    # fixed per-dimension input affine; not trained
    input_shift: np.ndarray = field(default=None)
    input_scale: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.input_shift is None:
            self.input_shift = np.zeros(self.config.input_dim)
        if self.input_scale is None:
            self.input_scale = np.ones(self.config.input_dim)

    @property
    def param_count(self) -> int:
        return sum(p.size for p in self.params.values())

    def copy(self) -> "Model":
        return Model(self.config, {k: v.copy() for k, v in self.params.items()}, self.input_shift.copy(), self.input_scale.copy())

    def normalizer_from(self, sequences: Sequence[np.ndarray]) -> None:
        frames = np.concatenate(list(sequences), axis=0)
        self.input_shift = frames.mean(axis=0)
        self.input_scale = 1.0 / np.maximum(frames.std(axis=0), 1e-3)


def _names(i: int, layer: LayerConfig) -> list[str]:
    if isinstance(layer, SvdfLayerConfig):
        return [f"svdf{i}.feature", f"svdf{i}.time", f"svdf{i}.bias"]
    return [f"bottleneck{i}.proj"]


def init(config: ModelConfig, seed: int = 0, dtype=np.float64) -> Model:
    """Uniform(+-1/sqrt(fan_in)) weights, zero biases; float32 trains about twice as fast."""
    rng = np.random.default_rng(seed)

    def uniform(shape, fan_in):
        bound = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape).astype(dtype)

    params: dict[str, np.ndarray] = {}
    for i, layer in enumerate(config.layers):
        if isinstance(layer, SvdfLayerConfig):
            feat, time_, bias = _names(i, layer)
            params[feat] = uniform((layer.input_dim, layer.num_units), layer.input_dim)
            params[time_] = uniform((layer.num_units, layer.memory_T), layer.memory_T)
            params[bias] = np.zeros(layer.num_units, dtype=dtype)
        else:
            params[_names(i, layer)[0]] = uniform((layer.input_dim, layer.output_dim), layer.input_dim)
    params["head.weight"] = uniform((config.output_dim,), config.output_dim)
    params["head.bias"] = np.zeros(1, dtype=dtype)
    return Model(config, params)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x)))


# ---------------------------------------------------------------- batch mode

def forward_batch(model: Model, x: np.ndarray, keep: bool = False):
    """Frame logits [B x T] for inputs [B x T x D], zero history before t=0.

    With ``keep`` also returns the activations needed by ``backward_batch``.
    """
    if x.ndim != 3 or x.shape[2] != model.config.input_dim:
        raise ModelError(f"expected [B x T x {model.config.input_dim}] input, got {x.shape}")
    dtype = model.params["head.bias"].dtype
    h = ((x - model.input_shift) * model.input_scale).astype(dtype, copy=False)
    cache = []
    p = model.params
    for i, layer in enumerate(model.config.layers):
        if isinstance(layer, SvdfLayerConfig):
            feat, time_, bias = (p[n] for n in _names(i, layer))
            m, t = layer.memory_T, h.shape[1]
            f = h @ feat
            fp = np.concatenate([np.zeros((f.shape[0], m - 1, f.shape[2]), dtype=dtype), f], axis=1)
            pre = bias + sum(fp[:, j : j + t, :] * time_[:, j] for j in range(m))
            out = np.maximum(pre, 0.0) if layer.activation == "relu" else pre
            if keep:
                cache.append((h, fp, pre))
            h = out
        else:
            if keep:
                cache.append((h,))
            h = h @ p[_names(i, layer)[0]]
    logits = h @ p["head.weight"] + p["head.bias"][0]
    if keep:
        return logits, (cache, h)
    return logits


def _flat(a: np.ndarray) -> np.ndarray:
    return a.reshape(-1, a.shape[-1])


def backward_batch(model: Model, cache, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    layer_cache, top = cache
    p = model.params
    grads = {"head.weight": dlogits.reshape(-1) @ top.reshape(-1, top.shape[2]), "head.bias": np.array([dlogits.sum()])}
    dh = dlogits[:, :, None] * p["head.weight"]
    for i in reversed(range(len(model.config.layers))):
        layer = model.config.layers[i]
        if isinstance(layer, SvdfLayerConfig):
            h, fp, pre = layer_cache[i]
            fname, tname, bname = _names(i, layer)
            m, t = layer.memory_T, h.shape[1]
            dpre = dh * (pre > 0) if layer.activation == "relu" else dh
            grads[bname] = dpre.sum(axis=(0, 1))
            dtime = np.empty_like(p[tname])
            dfp = np.zeros_like(fp)
            for j in range(m):
                dtime[:, j] = (fp[:, j : j + t, :] * dpre).sum(axis=(0, 1))
                dfp[:, j : j + t, :] += dpre * p[tname][:, j]
            grads[tname] = dtime
            df = dfp[:, m - 1 :, :]
            grads[fname] = _flat(h).T @ _flat(df)
            dh = df @ p[fname].T
        else:
            (h,) = layer_cache[i]
            name = _names(i, layer)[0]
            grads[name] = _flat(h).T @ _flat(dh)
            dh = dh @ p[name].T
    return grads


# ------------------------------------------------------------ streaming mode

@dataclass
class StreamState:
    buffers: list[np.ndarray | None]

    def reset(self) -> None:
        for b in self.buffers:
            if b is not None:
                b.fill(0.0)


def new_state(model: Model) -> StreamState:
    return StreamState([np.zeros((l.num_units, l.memory_T)) if isinstance(l, SvdfLayerConfig) else None for l in model.config.layers])


def forward_streaming(model: Model, frame: np.ndarray, state: StreamState) -> tuple[float, StreamState]:
    """Score one frame causally, updating ``state`` in place (and returning it)."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape != (model.config.input_dim,):
        raise ModelError(f"expected a {model.config.input_dim}-dim frame, got shape {frame.shape}")
    if len(state.buffers) != len(model.config.layers):
        raise ModelError("stream state does not match the model")
    h = (frame - model.input_shift) * model.input_scale
    p = model.params
    for i, layer in enumerate(model.config.layers):
        if isinstance(layer, SvdfLayerConfig):
            feat, time_, bias = (p[n] for n in _names(i, layer))
            buf = state.buffers[i]
            if buf is None or buf.shape != (layer.num_units, layer.memory_T):
                raise ModelError(f"stream buffer {i} has the wrong shape")
            buf[:, :-1] = buf[:, 1:]
            buf[:, -1] = h @ feat
            pre = np.einsum("um,um->u", buf, time_) + bias
            h = np.maximum(pre, 0.0) if layer.activation == "relu" else pre
        else:
            h = h @ p[_names(i, layer)[0]]
    return float(sigmoid(h @ p["head.weight"] + p["head.bias"][0])), state


def forward_utterance(model: Model, features: np.ndarray) -> tuple[np.ndarray, float]:
    """Per-frame scores from the streaming path, and their max."""
    features = np.asarray(features)
    if features.ndim != 2 or features.shape[0] == 0:
        raise ModelError("features must be a nonempty [T x D] matrix")
    state = new_state(model)
    scores = np.array([forward_streaming(model, f, state)[0] for f in features])
    return scores, float(scores.max())


# ---------------------------------------------------------------- training

def pad_batch(sequences: Sequence[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad to a common length; returns inputs and a validity mask.

    Padding sits after each sequence, so causal layers never see it in valid frames.
    """
    lengths = [len(s) for s in sequences]
    if min(lengths) < 1:
        raise ModelError("empty feature sequence")
    t = max(lengths)
    x = np.zeros((len(sequences), t, sequences[0].shape[1]))
    mask = np.zeros((len(sequences), t), dtype=bool)
    for b, s in enumerate(sequences):
        x[b, : len(s)] = s
        mask[b, : len(s)] = True
    return x, mask


def utterance_logits(logits: np.ndarray, mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    masked = np.where(mask, logits, -np.inf)
    idx = masked.argmax(axis=1)
    return masked[np.arange(len(idx)), idx], idx


def score_sequences(model: Model, sequences: Sequence[np.ndarray], batch_size: int = 64) -> np.ndarray:
    """Utterance scores for many sequences using the batch path."""
    out = np.empty(len(sequences))
    order = np.argsort([len(s) for s in sequences], kind="stable")
    for start in range(0, len(order), batch_size):
        chunk = order[start : start + batch_size]
        x, mask = pad_batch([sequences[i] for i in chunk])
        z, _ = utterance_logits(forward_batch(model, x), mask)
        out[chunk] = sigmoid(z)
    return out


def _softplus(z):
    return np.logaddexp(0.0, z)


def loss_and_grad(model: Model, batch: Sequence[tuple[np.ndarray, int]]) -> tuple[float, dict[str, np.ndarray]]:
    """Mean binary cross-entropy of utterance scores, and its gradient."""
    if not batch:
        raise ModelError("empty batch")
    labels = np.array([y for _, y in batch])
    if not np.all((labels == 0) | (labels == 1)):
        raise ModelError("labels must be 0 or 1")
    x, mask = pad_batch([s for s, _ in batch])
    logits, cache = forward_batch(model, x, keep=True)
    z, idx = utterance_logits(logits, mask)
    loss = float(np.mean(_softplus(z) - labels * z))
    dlogits = np.zeros_like(logits)
    dlogits[np.arange(len(idx)), idx] = (sigmoid(z) - labels) / len(batch)
    return loss, backward_batch(model, cache, dlogits)


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 5000
    batch_size: int = 32
    learning_rate: float = 0.05
    momentum: float = 0.9
    seed: int = 0
    checkpoint_count: int = 10
    max_grad_norm: float | None = 5.0

    def __post_init__(self):
        if not self.steps >= self.checkpoint_count >= 1:
            raise ModelError("need steps >= checkpoint_count >= 1")
        if self.batch_size < 1:
            raise ModelError("batch_size must be >= 1")


@dataclass
class Checkpoint:
    step: int
    model: Model
    train_loss: float


def checkpoint_steps(steps: int, count: int) -> list[int]:
    return [math.ceil(i * steps / count) for i in range(1, count + 1)]


def train(model: Model, train_set: Sequence[tuple[np.ndarray, int]], config: TrainConfig) -> list[Checkpoint]:
    """SGD with momentum; returns ``checkpoint_count`` evenly spaced snapshots.

    ``train_loss`` of a checkpoint is the mean batch loss since the previous one.
    """
    labels = {int(y) for _, y in train_set}
    if labels != {0, 1}:
        raise ModelError(f"training needs both classes, got {sorted(labels)}")
    rng = np.random.default_rng(config.seed)
    velocity = {k: np.zeros_like(v) for k, v in model.params.items()}
    save_at = set(checkpoint_steps(config.steps, config.checkpoint_count))
    checkpoints: list[Checkpoint] = []
    order = rng.permutation(len(train_set))
    cursor, window = 0, []
    for step in range(1, config.steps + 1):
        if cursor + config.batch_size > len(order):
            order, cursor = rng.permutation(len(train_set)), 0
        batch = [train_set[i] for i in order[cursor : cursor + config.batch_size]]
        cursor += config.batch_size
        loss, grads = loss_and_grad(model, batch)
        window.append(loss)
        if config.max_grad_norm is not None:
            norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
            if norm > config.max_grad_norm:
                grads = {k: g * (config.max_grad_norm / norm) for k, g in grads.items()}
        for k, g in grads.items():
            velocity[k] = config.momentum * velocity[k] - config.learning_rate * g
            model.params[k] += velocity[k]
        if step in save_at:
            checkpoints.append(Checkpoint(step, model.copy(), float(np.mean(window))))
            logger.info("step %d loss %.4f", step, checkpoints[-1].train_loss)
            window = []
    return checkpoints


# ------------------------------------------------------------- checkpoint I/O

def save_checkpoint(path, model: Model, step: int = 0) -> None:
    """Binary parameter blocks (little-endian float32) plus a JSON config sidecar."""
    path = Path(path)
    blocks = dict(model.params)
    blocks["input.shift"] = model.input_shift
    blocks["input.scale"] = model.input_scale
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(model.config.digest())
        f.write(struct.pack("<II", step, len(blocks)))
        for name in sorted(blocks):
            arr = np.ascontiguousarray(blocks[name], dtype="<f4")
            encoded = name.encode()
            f.write(struct.pack("<H", len(encoded)) + encoded)
            f.write(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.tobytes())
    sidecar = {"model_config": model.config.to_dict(), "step": step}
    path.with_suffix(".json").write_text(json.dumps(sidecar, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def load_checkpoint(path) -> tuple[Model, int]:
    path = Path(path)
    config = ModelConfig.from_dict(json.loads(path.with_suffix(".json").read_text(encoding="utf-8"))["model_config"])
    with open(path, "rb") as f:
        if f.read(4) != CHECKPOINT_MAGIC:
            raise ModelError(f"{path}: not a checkpoint")
        (version,) = struct.unpack("<I", f.read(4))
        if version != CHECKPOINT_VERSION:
            raise ModelError(f"{path}: unsupported checkpoint version {version}")
        if f.read(32) != config.digest():
            raise ModelError(f"{path}: config sidecar does not match the checkpoint")
        step, count = struct.unpack("<II", f.read(8))
        blocks = {}
        for _ in range(count):
            (n,) = struct.unpack("<H", f.read(2))
            name = f.read(n).decode()
            (ndim,) = struct.unpack("<B", f.read(1))
            shape = struct.unpack(f"<{ndim}I", f.read(4 * ndim))
            size = int(np.prod(shape)) if shape else 1
            blocks[name] = np.frombuffer(f.read(4 * size), dtype="<f4").reshape(shape).astype(np.float64)
    shift, scale = blocks.pop("input.shift"), blocks.pop("input.scale")
    return Model(config, blocks, shift, scale), step
