"""Small feed-forward network engine: dense ReLU layers, softmax-ready logits,
inverted dropout after the last hidden layer, and momentum SGD with weight
decay and weighted minibatch sampling.

Everything is double precision and deterministic under a seed. Parameters are
addressable as one flat vector, which is what the weight-posterior methods
(SWAG, variational nets) operate on. Gradients are hand-derived backprop for
this fixed topology; no autodiff.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from deferbench.errors import (
    ConfigError,
    DivergenceError,
    FormatError,
    InputShapeError,
    LabelError,
)
from deferbench.losses import LossSpec
from deferbench.rng import child_rng

_MAGIC = b"DFB1"
_VERSION = 1


@dataclass(frozen=True)
class NetConfig:
    input_dim: int
    hidden_dims: tuple[int, ...]
    output_dim: int
    dropout_rate: float = 0.0
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.input_dim < 1:
            raise ConfigError(f"input_dim must be positive, got {self.input_dim}")
        if any(h < 1 for h in self.hidden_dims):
            raise ConfigError(f"hidden_dims must be positive, got {self.hidden_dims}")
        if self.output_dim < 2:
            raise ConfigError(f"output_dim must be >= 2, got {self.output_dim}")
        if not (0.0 <= self.dropout_rate < 1.0):
            raise ConfigError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        if not (0 <= int(self.seed) < 2**64):
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {self.seed}")

    def to_text(self) -> str:
        """Canonical single-definition text form (sorted keys, one per line)."""
        fields = {
            "dropout_rate": repr(float(self.dropout_rate)),
            "hidden_dims": ",".join(str(h) for h in self.hidden_dims),
            "input_dim": str(self.input_dim),
            "output_dim": str(self.output_dim),
            "seed": str(int(self.seed)),
        }
        return "".join(f"{k}={v}\n" for k, v in sorted(fields.items()))

    @classmethod
    def from_text(cls, text: str) -> "NetConfig":
        kv = {}
        for line in text.splitlines():
            if not line.strip():
                continue
            key, _, value = line.partition("=")
            kv[key.strip()] = value.strip()
        try:
            hidden = tuple(int(h) for h in kv["hidden_dims"].split(",") if h)
            return cls(
                input_dim=int(kv["input_dim"]),
                hidden_dims=hidden,
                output_dim=int(kv["output_dim"]),
                dropout_rate=float(kv["dropout_rate"]),
                seed=int(kv["seed"]),
            )
        except KeyError as exc:
            raise FormatError(f"missing NetConfig field {exc}") from exc


@dataclass(frozen=True)
class SgdConfig:
    learning_rate: float
    momentum: float = 0.9
    weight_decay: float = 0.0
    batch_size: int = 128
    epochs: int = 30
    seed: int = 0

    def __post_init__(self):
        if not self.learning_rate >= 0.0:
            raise ConfigError(f"learning_rate must be non-negative, got {self.learning_rate}")
        if not (0.0 <= self.momentum < 1.0):
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if not self.weight_decay >= 0.0:
            raise ConfigError(f"weight_decay must be non-negative, got {self.weight_decay}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be positive")
        if not (0 <= int(self.seed) < 2**64):
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {self.seed}")


@dataclass
class Network:
    """Dense feed-forward net; weights[i] is (fan_in, fan_out), biases[i] is (fan_out,)."""

    config: NetConfig
    weights: list = field(default_factory=list)
    biases: list = field(default_factory=list)

    @property
    def parameter_count(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self) -> "Network":
        return Network(
            config=self.config,
            weights=[w.copy() for w in self.weights],
            biases=[b.copy() for b in self.biases],
        )


def init_network(config: NetConfig) -> Network:
    """He-initialized network, deterministic under config.seed."""
    rng = child_rng(config.seed, "init")
    dims = (config.input_dim, *config.hidden_dims, config.output_dim)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        weights.append(rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return Network(config=config, weights=weights, biases=biases)


def get_params(net: Network) -> np.ndarray:
    """Flat parameter vector: per layer, row-major weights then bias."""
    parts = []
    for w, b in zip(net.weights, net.biases):
        parts.append(w.ravel())
        parts.append(b)
    return np.concatenate(parts)


def set_params(net: Network, flat: np.ndarray) -> None:
    """Load a flat vector back into the network (in place)."""
    flat = np.asarray(flat, dtype=np.float64)
    if flat.shape != (net.parameter_count,):
        raise InputShapeError(
            f"expected {net.parameter_count} parameters, got shape {flat.shape}"
        )
    offset = 0
    for w, b in zip(net.weights, net.biases):
        w[...] = flat[offset : offset + w.size].reshape(w.shape)
        offset += w.size
        b[...] = flat[offset : offset + b.size]
        offset += b.size


def with_params(net: Network, flat: np.ndarray) -> Network:
    """Copy of ``net`` carrying the given flat parameter vector."""
    out = net.copy()
    set_params(out, flat)
    return out


def draw_dropout_mask(rng: np.random.Generator, shape, rate: float) -> np.ndarray:
    """Inverted-dropout mask: zeros with probability ``rate``, survivors scaled 1/(1-rate)."""
    keep = rng.random(shape) >= rate
    return keep.astype(np.float64) / (1.0 - rate)


def _check_batch(net: Network, batch) -> np.ndarray:
    batch = np.asarray(batch, dtype=np.float64)
    if batch.ndim != 2 or batch.shape[1] != net.config.input_dim:
        raise InputShapeError(
            f"batch must be (B, {net.config.input_dim}), got shape {batch.shape}"
        )
    return batch


def _forward_cached(net: Network, batch: np.ndarray, dropout_mask=None):
    """Forward pass keeping the intermediates backprop needs.

    dropout_mask, when given, multiplies the last hidden activation and must
    already include the 1/(1-p) survivor scaling.
    """
    activations = [batch]
    a = batch
    n_hidden = len(net.weights) - 1
    for i in range(n_hidden):
        z = a @ net.weights[i] + net.biases[i]
        a = np.maximum(z, 0.0)
        activations.append(a)
    if dropout_mask is not None and n_hidden > 0:
        a = a * dropout_mask
    logits = a @ net.weights[-1] + net.biases[-1]
    return logits, (activations, a, dropout_mask)


def forward(net: Network, batch, dropout_on: bool = False, rng=None) -> np.ndarray:
    """Logits for a batch; with dropout_on and rate > 0 a fresh mask is drawn from rng."""
    batch = _check_batch(net, batch)
    mask = None
    rate = net.config.dropout_rate
    if dropout_on and rate > 0.0 and len(net.weights) > 1:
        if rng is None:
            raise ConfigError("dropout_on with rate > 0 requires an rng")
        mask = draw_dropout_mask(rng, (batch.shape[0], net.weights[-1].shape[0]), rate)
    logits, _ = _forward_cached(net, batch, mask)
    return logits


def _backward_cached(net: Network, cache, dlogits: np.ndarray) -> np.ndarray:
    """Gradient of the (already reduced) loss w.r.t. the flat parameter vector."""
    activations, last_input, dropout_mask = cache
    n_layers = len(net.weights)
    grads_w = [None] * n_layers
    grads_b = [None] * n_layers

    delta = dlogits
    grads_w[-1] = last_input.T @ delta
    grads_b[-1] = delta.sum(axis=0)

    for i in range(n_layers - 2, -1, -1):
        delta = delta @ net.weights[i + 1].T
        if i == n_layers - 2 and dropout_mask is not None:
            delta = delta * dropout_mask
        delta = delta * (activations[i + 1] > 0.0)
        grads_w[i] = activations[i].T @ delta
        grads_b[i] = delta.sum(axis=0)

    parts = []
    for gw, gb in zip(grads_w, grads_b):
        parts.append(gw.ravel())
        parts.append(gb)
    return np.concatenate(parts)


def backward(net: Network, batch, targets, loss: LossSpec, dropout_mask=None) -> np.ndarray:
    """Gradient of the mean batch loss with respect to the flat parameter vector."""
    batch = _check_batch(net, batch)
    targets = np.asarray(targets, dtype=np.int64)
    if targets.shape != (batch.shape[0],):
        raise LabelError(f"expected {batch.shape[0]} targets, got shape {targets.shape}")
    logits, cache = _forward_cached(net, batch, dropout_mask)
    dlogits = loss.grad(logits, targets) / batch.shape[0]
    return _backward_cached(net, cache, dlogits)


def mean_loss(net: Network, batch, targets, loss: LossSpec) -> float:
    """Mean loss over a batch with dropout off."""
    batch = _check_batch(net, batch)
    logits, _ = _forward_cached(net, batch, None)
    return float(loss.loss(logits, np.asarray(targets, dtype=np.int64)).mean())


def draw_minibatch_indices(
    rng: np.random.Generator, weights: np.ndarray, batch_size: int
) -> np.ndarray:
    """Weighted sampling with replacement; this is the oversampling mechanism."""
    p = weights / weights.sum()
    return rng.choice(weights.shape[0], size=batch_size, replace=True, p=p)


@dataclass
class TrainResult:
    network: Network
    checkpoints: list  # one flat parameter vector per epoch, post-update
    epoch_losses: list  # mean training loss per epoch


def train(
    net: Network,
    batch,
    targets,
    loss: LossSpec,
    sgd: SgdConfig,
    sample_weights=None,
) -> TrainResult:
    """Momentum SGD with weighted minibatch sampling; one checkpoint per epoch.

    The update is v = momentum*v + (grad + weight_decay*theta); theta -= lr*v.
    Raises DivergenceError naming the epoch if any batch loss goes non-finite.
    """
    x = _check_batch(net, batch)
    y = np.asarray(targets, dtype=np.int64)
    n = x.shape[0]
    if y.shape != (n,):
        raise LabelError(f"expected {n} targets, got shape {y.shape}")
    if sample_weights is None:
        sample_weights = np.ones(n)
    sample_weights = np.asarray(sample_weights, dtype=np.float64)
    if sample_weights.shape != (n,):
        raise InputShapeError(f"expected {n} sample weights, got {sample_weights.shape}")
    if np.any(sample_weights <= 0.0):
        raise ConfigError("sample weights must all be positive")

    net = net.copy()
    rng_batches = child_rng(sgd.seed, "batches")
    rng_dropout = child_rng(sgd.seed, "dropout")
    rate = net.config.dropout_rate
    use_dropout = rate > 0.0 and len(net.weights) > 1

    params = get_params(net)
    velocity = np.zeros_like(params)
    steps_per_epoch = max(1, -(-n // sgd.batch_size))
    checkpoints, epoch_losses = [], []

    for epoch in range(1, sgd.epochs + 1):
        loss_sum = 0.0
        for _ in range(steps_per_epoch):
            idx = draw_minibatch_indices(rng_batches, sample_weights, sgd.batch_size)
            xb, yb = x[idx], y[idx]
            mask = None
            if use_dropout:
                mask = draw_dropout_mask(
                    rng_dropout, (xb.shape[0], net.weights[-1].shape[0]), rate
                )
            logits, cache = _forward_cached(net, xb, mask)
            if not np.all(np.isfinite(logits)):
                raise DivergenceError(f"training diverged at epoch {epoch}: non-finite logits")
            batch_loss = float(loss.loss(logits, yb).mean())
            if not np.isfinite(batch_loss):
                raise DivergenceError(f"training diverged at epoch {epoch}: loss={batch_loss}")
            loss_sum += batch_loss
            grad = _backward_cached(net, cache, loss.grad(logits, yb) / xb.shape[0])
            grad += sgd.weight_decay * params
            velocity = sgd.momentum * velocity + grad
            params = params - sgd.learning_rate * velocity
            set_params(net, params)
        checkpoints.append(params.copy())
        epoch_losses.append(loss_sum / steps_per_epoch)

    return TrainResult(network=net, checkpoints=checkpoints, epoch_losses=epoch_losses)


# ---------------------------------------------------------------------------
# Checkpoint container ("DFB1"): header, canonical NetConfig text, float64
# parameter payload, then optional named float64 sections (used by the weight
# posteriors to stash second moments, deviation matrices, log-stddevs, ...).
# ---------------------------------------------------------------------------


def write_checkpoint(path, config: NetConfig, params: np.ndarray, sections=None) -> None:
    params = np.ascontiguousarray(params, dtype="<f8")
    config_text = config.to_text().encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", _VERSION))
        fh.write(struct.pack("<Q", params.size))
        fh.write(struct.pack("<I", len(config_text)))
        fh.write(config_text)
        fh.write(params.tobytes())
        if sections:
            fh.write(struct.pack("<I", len(sections)))
            for name, payload in sections.items():
                payload = np.ascontiguousarray(payload, dtype="<f8")
                encoded = name.encode("utf-8")
                fh.write(struct.pack("<I", len(encoded)))
                fh.write(encoded)
                fh.write(struct.pack("<Q", payload.size))
                fh.write(payload.ravel().tobytes())


def read_checkpoint(path):
    """Returns (NetConfig, params, sections) where sections maps name -> 1-D array."""
    with open(path, "rb") as fh:
        if fh.read(4) != _MAGIC:
            raise FormatError(f"{path}: bad magic, not a DFB1 checkpoint")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != _VERSION:
            raise FormatError(f"{path}: unsupported DFB1 version {version}")
        (count,) = struct.unpack("<Q", fh.read(8))
        (config_len,) = struct.unpack("<I", fh.read(4))
        config = NetConfig.from_text(fh.read(config_len).decode("utf-8"))
        raw = fh.read(count * 8)
        if len(raw) != count * 8:
            raise FormatError(f"{path}: truncated parameter payload")
        params = np.frombuffer(raw, dtype="<f8").copy()
        sections = {}
        head = fh.read(4)
        if head:
            (n_sections,) = struct.unpack("<I", head)
            for _ in range(n_sections):
                (name_len,) = struct.unpack("<I", fh.read(4))
                name = fh.read(name_len).decode("utf-8")
                (size,) = struct.unpack("<Q", fh.read(8))
                payload = fh.read(size * 8)
                if len(payload) != size * 8:
                    raise FormatError(f"{path}: truncated section {name!r}")
                sections[name] = np.frombuffer(payload, dtype="<f8").copy()
    return config, params, sections


def load_network(path) -> Network:
    config, params, _ = read_checkpoint(path)
    net = init_network(config)
    set_params(net, params)
    return net
