"""Mini-batch training loop, optimizers and checkpoint persistence.

Training pairs a sample's visual feature with its class's semantic
vectors. Every epoch the pairs are reshuffled (seeded), split into
mini-batches (the last batch may be short), and one optimizer step is
taken per batch. The learning rate at epoch ``e`` is exactly
``lr * lr_decay ** e``.

Checkpoints are a single binary file: magic ``ZSLC``, u32 LE version,
a length-prefixed ``key = value`` text block holding the architecture
config, the parameter arrays (name, shape, float64 LE data), and a
trailing CRC32 of everything before it. Round-trips are bit-exact.
"""

from __future__ import annotations

import dataclasses
import struct
import zlib
from pathlib import Path
from typing import Iterable

import numpy as np

from .data import Dataset
from .network import (
    EmbeddingModel,
    FusionNet,
    NetConfig,
    V_TO_S,
    VisualMapNet,
    init_model,
)

CHECKPOINT_MAGIC = b"ZSLC"
CHECKPOINT_VERSION = 1

OPTIMIZERS = ("adam", "sgd")


@dataclasses.dataclass(frozen=True)
class TrainConfig:
    """Optimizer choice and loop settings.

    ``optimizer`` is ``adam`` or ``sgd`` (SGD with momentum; momentum 0
    gives plain SGD). ``l2_lambda`` set to None inherits the weight
    penalty from the architecture config; a number overrides it.
    """

    optimizer: str = "adam"
    lr: float = 1e-4
    momentum: float = 0.9
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = 256
    epochs: int = 200
    lr_decay: float = 1.0
    l2_lambda: float | None = None
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self) -> None:
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if not 0 <= self.momentum < 1:
            raise ValueError("momentum must be in [0, 1)")
        if not 0 < self.beta1 < 1 or not 0 < self.beta2 < 1:
            raise ValueError("beta1 and beta2 must be in (0, 1)")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be at least 1")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must be in (0, 1]")
        if self.l2_lambda is not None and self.l2_lambda < 0:
            raise ValueError("l2_lambda must be >= 0")


@dataclasses.dataclass
class TrainHistory:
    """Per-epoch mean loss and the learning rate each epoch ran with."""

    losses: list[float] = dataclasses.field(default_factory=list)
    lrs: list[float] = dataclasses.field(default_factory=list)

    def __len__(self) -> int:
        return len(self.losses)


class Adam:
    """Adam with bias correction; updates parameters in place."""

    def __init__(self, params: dict[str, np.ndarray], config: TrainConfig):
        self.params = params
        self.lr = config.lr
        self.beta1 = config.beta1
        self.beta2 = config.beta2
        self.epsilon = config.epsilon
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.steps = 0

    def step(self, grads: dict[str, np.ndarray]) -> None:
        _check_shapes(self.params, grads)
        self.steps += 1
        c1 = 1.0 - self.beta1 ** self.steps
        c2 = 1.0 - self.beta2 ** self.steps
        for name, p in self.params.items():
            g = grads[name]
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.epsilon)


class SgdMomentum:
    """Classic momentum: u <- mu*u + g; p <- p - lr*u."""

    def __init__(self, params: dict[str, np.ndarray], config: TrainConfig):
        self.params = params
        self.lr = config.lr
        self.momentum = config.momentum
        self.velocity = {k: np.zeros_like(v) for k, v in params.items()}
        self.steps = 0

    def step(self, grads: dict[str, np.ndarray]) -> None:
        _check_shapes(self.params, grads)
        self.steps += 1
        for name, p in self.params.items():
            u = self.velocity[name]
            u *= self.momentum
            u += grads[name]
            p -= self.lr * u


def _check_shapes(params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
    if set(params) != set(grads):
        raise ValueError("gradient bundle does not cover the trained parameters")
    for name, p in params.items():
        if grads[name].shape != p.shape:
            raise ValueError(
                f"gradient shape {grads[name].shape} does not match "
                f"parameter {name} {p.shape}"
            )


def make_optimizer(params: dict[str, np.ndarray], config: TrainConfig):
    if config.optimizer == "adam":
        return Adam(params, config)
    return SgdMomentum(params, config)


def train(
    dataset: Dataset,
    net_config: NetConfig,
    train_config: TrainConfig,
    active: Iterable[str],
) -> tuple[EmbeddingModel, TrainHistory]:
    """Train an embedding model on the dataset's seen classes.

    The same seed drives both initialization and shuffling, so the run is
    fully deterministic. Returns the trained model and per-epoch history.
    """
    tags = tuple(sorted(set(active)))
    if not tags:
        raise ValueError("active modality set is empty")
    if net_config.embed_dim != dataset.visual.dim:
        raise ValueError(
            f"embed_dim {net_config.embed_dim} does not match "
            f"visual feature dim {dataset.visual.dim}"
        )
    if train_config.l2_lambda is not None:
        net_config = dataclasses.replace(net_config, l2_lambda=train_config.l2_lambda)
    model = init_model(net_config, train_config.seed)
    history = TrainHistory()
    if train_config.epochs == 0:
        return model, history

    n = dataset.visual.rows
    if n == 0:
        raise ValueError("empty training set")
    targets = dataset.visual.values
    labels = dataset.visual.labels
    semantics = {tag: dataset.table(tag).matrix(labels) for tag in tags}

    params = model.trainable_params(tags)
    optimizer = make_optimizer(params, train_config)
    rng = np.random.default_rng(train_config.seed)
    for epoch in range(train_config.epochs):
        optimizer.lr = train_config.lr * train_config.lr_decay**epoch
        order = rng.permutation(n) if train_config.shuffle else np.arange(n)
        total = 0.0
        for start in range(0, n, train_config.batch_size):
            idx = order[start : start + train_config.batch_size]
            batch = {tag: semantics[tag][idx] for tag in tags}
            loss, grads = model.loss_and_grad(batch, targets[idx], tags)
            optimizer.step(grads)
            total += loss * idx.size
        history.losses.append(total / n)
        history.lrs.append(optimizer.lr)
    return model, history


def save_history(history: TrainHistory, path: str | Path) -> None:
    """Write the history as ``epoch,loss,lr`` CSV with full-precision floats."""
    lines = ["epoch,loss,lr"]
    for epoch, (loss, lr) in enumerate(zip(history.losses, history.lrs)):
        lines.append(f"{epoch},{repr(float(loss))},{repr(float(lr))}")
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# checkpoints


def _encode_config(config: NetConfig) -> bytes:
    dims = ",".join(f"{tag}:{dim}" for tag, dim in config.modality_dims.items())
    lines = [
        f"direction = {config.direction}",
        f"embed_dim = {config.embed_dim}",
        f"head_hidden = {config.head_hidden}",
        f"head_out = {config.head_out}",
        f"l2_lambda = {repr(float(config.l2_lambda))}",
        f"modality_dims = {dims}",
    ]
    return "\n".join(lines).encode("utf-8")


def _decode_config(blob: bytes) -> NetConfig:
    fields: dict[str, str] = {}
    try:
        text = blob.decode("utf-8")
    except UnicodeDecodeError:
        raise ValueError("corrupted payload (config block is not text)") from None
    for line in text.splitlines():
        if not line.strip():
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"corrupted payload (bad config line {line!r})")
        fields[key.strip()] = value.strip()
    try:
        dims = {}
        for item in fields["modality_dims"].split(","):
            tag, _, dim = item.partition(":")
            dims[tag] = int(dim)
        return NetConfig(
            modality_dims=dims,
            head_hidden=int(fields["head_hidden"]),
            head_out=int(fields["head_out"]),
            embed_dim=int(fields["embed_dim"]),
            direction=fields["direction"],
            l2_lambda=float(fields["l2_lambda"]),
        )
    except (KeyError, ValueError) as exc:
        raise ValueError(f"corrupted payload (config block: {exc})") from None


def save_checkpoint(model: EmbeddingModel, path: str | Path) -> None:
    """Serialize config and parameters; identical models produce identical bytes."""
    buf = bytearray()
    buf += CHECKPOINT_MAGIC
    buf += struct.pack("<I", CHECKPOINT_VERSION)
    config_blob = _encode_config(model.config)
    buf += struct.pack("<I", len(config_blob))
    buf += config_blob
    params = model.all_params()
    buf += struct.pack("<I", len(params))
    for name in sorted(params):
        arr = np.ascontiguousarray(params[name], dtype="<f8")
        encoded = name.encode("utf-8")
        buf += struct.pack("<H", len(encoded))
        buf += encoded
        buf += struct.pack("<B", arr.ndim)
        buf += struct.pack(f"<{arr.ndim}Q", *arr.shape)
        buf += arr.tobytes()
    buf += struct.pack("<I", zlib.crc32(bytes(buf)))
    Path(path).write_bytes(bytes(buf))


class _Cursor:
    """Bounds-checked reader; any overrun means a corrupted payload."""

    def __init__(self, data: bytes):
        self.data = data
        self.off = 0

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.data):
            raise ValueError("corrupted payload (truncated)")
        chunk = self.data[self.off : self.off + n]
        self.off += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_checkpoint(path: str | Path) -> EmbeddingModel:
    """Read a checkpoint back into a model, verifying the trailing checksum."""
    data = Path(path).read_bytes()
    if len(data) < 8 or data[:4] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: malformed header")
    (version,) = struct.unpack_from("<I", data, 4)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported version {version}")
    if len(data) < 12:
        raise ValueError(f"{path}: corrupted payload (truncated)")
    body, stored = data[:-4], struct.unpack("<I", data[-4:])[0]
    if zlib.crc32(body) != stored:
        raise ValueError(f"{path}: corrupted payload (checksum mismatch)")

    cur = _Cursor(body)
    cur.take(8)  # magic + version, already validated
    try:
        (config_len,) = cur.unpack("<I")
        config = _decode_config(cur.take(config_len))
        (n_params,) = cur.unpack("<I")
        params: dict[str, np.ndarray] = {}
        for _ in range(n_params):
            (name_len,) = cur.unpack("<H")
            name = cur.take(name_len).decode("utf-8")
            (ndim,) = cur.unpack("<B")
            shape = cur.unpack(f"<{ndim}Q")
            count = int(np.prod(shape)) if ndim else 1
            raw = cur.take(count * 8)
            params[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from None
    if cur.off != len(body):
        raise ValueError(f"{path}: corrupted payload (trailing bytes)")

    fusion_params = {k: v for k, v in params.items() if not k.startswith("vmap.")}
    vmap_params = {k: v for k, v in params.items() if k.startswith("vmap.")}
    expected = {f"head.{tag}.{suffix}" for tag in config.tags for suffix in ("W1", "b1", "W2", "b2")}
    expected |= {"out.W3", "out.b3"}
    if config.direction == V_TO_S:
        expected |= {f"vmap.{suffix}" for suffix in ("W1", "b1", "W2", "b2", "W3", "b3")}
    if set(params) != expected:
        raise ValueError(f"{path}: corrupted payload (parameter set mismatch)")
    fusion = FusionNet(config, fusion_params)
    visual_map = VisualMapNet(config, vmap_params) if config.direction == V_TO_S else None
    return EmbeddingModel(config, fusion, visual_map)
