"""From-scratch and distillation training loops over small dense encoders.

The encoders are fully-connected stacks; the distillation mechanism only
touches the embedding interface, so nothing here depends on a particular
backbone. Both loops share one batch engine so that a distillation run with
kd_weight=0 consumes the random stream identically to a from-scratch run and
produces a bitwise-identical loss trace.

Determinism contract: (encoder init_seed, train seed, config, manifest,
feature store) fully determine every parameter trajectory. The loop is
single-threaded on purpose.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    ConfigError,
    DimensionMismatch,
    DivergenceDetected,
    EmptyManifest,
    EpochOutOfRange,
    FormatVersionMismatch,
    FrozenViolation,
    MissingSample,
    ShapeMismatch,
)
from .formats import (
    CHECKPOINT_SCHEMA,
    atomic_write_text,
    canonical_json,
    decode_array,
    encode_array,
    read_text,
)
from .losses import (
    LossConfig,
    NormStats,
    head_loss_and_grads,
    init_prototypes,
    kd_loss_and_grads,
)
from .sampling import DatasetManifest

_ACTIVATIONS = ("relu", "tanh", "identity")


@dataclass
class EncoderSpec:
    """Shape and initialization of a fully-connected embedding encoder."""

    input_dim: int
    hidden_widths: tuple[int, ...]
    embedding_dim: int
    activation: str = "relu"
    init_seed: int = 0

    def __post_init__(self):
        self.hidden_widths = tuple(int(w) for w in self.hidden_widths)
        dims = (self.input_dim, *self.hidden_widths, self.embedding_dim)
        if any(int(d) < 1 for d in dims):
            raise ValueError(f"all layer widths must be positive, got {dims}")
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def layer_dims(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden_widths, self.embedding_dim)

    @property
    def n_params(self) -> int:
        dims = self.layer_dims
        return sum((dims[i] + 1) * dims[i + 1] for i in range(len(dims) - 1))


def _act(name: str, pre: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(pre, 0.0)
    if name == "tanh":
        return np.tanh(pre)
    return pre


def _act_grad(name: str, pre: np.ndarray, out: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (pre > 0.0).astype(np.float64)
    if name == "tanh":
        return 1.0 - out * out
    return np.ones_like(pre)


class Encoder:
    """Dense feature-to-embedding map with hand-rolled forward/backward."""

    def __init__(self, spec: EncoderSpec):
        self.spec = spec
        rng = np.random.Generator(np.random.PCG64(spec.init_seed))
        dims = spec.layer_dims
        self.weights = [rng.standard_normal((dims[i], dims[i + 1]))
                        * math.sqrt(2.0 / dims[i])
                        for i in range(len(dims) - 1)]
        self.biases = [np.zeros(dims[i + 1]) for i in range(len(dims) - 1)]

    def parameters(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def _check_input(self, x) -> np.ndarray:
        arr = np.atleast_2d(np.asarray(x, dtype=np.float64))
        if arr.shape[1] != self.spec.input_dim:
            raise DimensionMismatch(
                f"encoder expects input dim {self.spec.input_dim}, "
                f"got {arr.shape[1]}")
        return arr

    def forward(self, x) -> np.ndarray:
        """Embeddings for a (B, input_dim) batch or a single feature vector."""
        single = np.asarray(x).ndim == 1
        h = self._check_input(x)
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            pre = h @ w + b
            h = pre if i == last else _act(self.spec.activation, pre)
        return h[0] if single else h

    def forward_cached(self, x):
        """Forward pass keeping per-layer inputs and pre-activations."""
        h = self._check_input(x)
        cache = []
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            pre = h @ w + b
            out = pre if i == last else _act(self.spec.activation, pre)
            cache.append((h, pre, out))
            h = out
        return h, cache

    def backward(self, cache, d_embedding) -> list[np.ndarray]:
        """Gradients for every parameter, ordered like parameters()."""
        d_out = np.asarray(d_embedding, dtype=np.float64)
        grads: list[np.ndarray] = []
        last = len(self.weights) - 1
        for i in range(last, -1, -1):
            inp, pre, out = cache[i]
            d_pre = d_out if i == last else \
                d_out * _act_grad(self.spec.activation, pre, out)
            grads.insert(0, d_pre.sum(axis=0))          # bias
            grads.insert(0, inp.T @ d_pre)              # weight
            if i > 0:
                d_out = d_pre @ self.weights[i].T
        return grads

    def param_digest(self) -> str:
        """SHA-256 over all parameter bytes; pins the frozen-teacher contract."""
        h = hashlib.sha256()
        for p in self.parameters():
            h.update(str(p.shape).encode())
            h.update(p.tobytes())
        return h.hexdigest()


@dataclass
class TrainConfig:
    """Optimizer schedule and loop controls.

    Defaults mirror the reference regimen (26 epochs, batch 256, lr 0.1
    decayed by 10 at epochs 8/14/20/25, SGD momentum 0.9, flips only);
    desk() swaps in the small-batch profile used by the toy experiments.
    """

    epochs: int = 26
    batch_size: int = 256
    base_lr: float = 0.1
    lr_milestones: tuple[int, ...] = (8, 14, 20, 25)
    lr_factor: float = 10.0
    momentum: float = 0.9
    weight_decay: float = 0.0
    hflip_prob: float = 0.5
    seed: int = 0

    def __post_init__(self):
        self.lr_milestones = tuple(int(m) for m in self.lr_milestones)
        if self.epochs < 0:
            raise ConfigError(f"epochs must be >= 0, got {self.epochs}")
        if self.batch_size < 1:
            raise ConfigError(f"batch_size must be >= 1, got {self.batch_size}")
        if not self.base_lr > 0:
            raise ConfigError(f"base_lr must be positive, got {self.base_lr}")
        if not self.lr_factor > 1:
            raise ConfigError(f"lr_factor must exceed 1, got {self.lr_factor}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be non-negative")
        if not 0.0 <= self.hflip_prob <= 1.0:
            raise ConfigError(f"hflip_prob must lie in [0, 1], got {self.hflip_prob}")
        if any(b <= a for a, b in zip(self.lr_milestones, self.lr_milestones[1:])):
            raise ConfigError(f"milestones must increase: {self.lr_milestones}")
        if any(m >= self.epochs for m in self.lr_milestones):
            raise ConfigError(
                f"milestones {self.lr_milestones} must lie below epochs "
                f"{self.epochs}")

    @classmethod
    def desk(cls, **overrides) -> "TrainConfig":
        overrides.setdefault("batch_size", 64)
        return cls(**overrides)


def lr_at_epoch(epoch: int, cfg: TrainConfig) -> float:
    """base_lr divided by factor^(milestones passed); boundary-inclusive."""
    if not 0 <= epoch < cfg.epochs:
        raise EpochOutOfRange(f"epoch {epoch} outside [0, {cfg.epochs})")
    passed = sum(1 for m in cfg.lr_milestones if m <= epoch)
    return cfg.base_lr / cfg.lr_factor ** passed


def hflip_augment(feature, p: float, rng: np.random.Generator) -> np.ndarray:
    """Coordinate-reversal flip with probability p (an involution).

    Always consumes exactly one uniform draw, so toggling p does not shift
    the rest of the random stream.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"flip probability must lie in [0, 1], got {p}")
    arr = np.asarray(feature, dtype=np.float64)
    if rng.random() < p:
        return arr[::-1].copy()
    return arr


def _augment_batch(xb: np.ndarray, p: float, rng: np.random.Generator):
    mask = rng.random(xb.shape[0]) < p
    if mask.any():
        xb = xb.copy()
        xb[mask] = xb[mask, ::-1]
    return xb


def sgd_step(params, grads, lr: float, momentum: float, velocity) -> None:
    """In-place SGD with classical momentum.

    velocity <- momentum * velocity + grad; param <- param - lr * velocity.
    """
    if not (len(params) == len(grads) == len(velocity)):
        raise ShapeMismatch(
            f"got {len(params)} params, {len(grads)} grads, "
            f"{len(velocity)} velocity buffers")
    for p, g, v in zip(params, grads, velocity):
        if not (p.shape == g.shape == v.shape):
            raise ShapeMismatch(
                f"param {p.shape}, grad {g.shape}, velocity {v.shape}")
        v *= momentum
        v += g
        p -= lr * v


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    lr: float
    cls_loss: float
    kd_loss: float
    total_loss: float


@dataclass
class TrainResult:
    encoder: Encoder
    prototypes: np.ndarray
    stats: NormStats | None
    trace: list[EpochStats]
    rng_state: dict = field(default_factory=dict)


def _gather_training_set(manifest: DatasetManifest, store, input_dim: int):
    manifest.validate()
    if not manifest.entries:
        raise EmptyManifest(f"manifest {manifest.name!r} has no entries")
    labels_of = manifest.dense_labels()
    feats = []
    for e in manifest.entries:
        try:
            feats.append(np.asarray(store[e.payload_ref], dtype=np.float64))
        except KeyError:
            raise MissingSample(
                f"feature store cannot resolve {e.payload_ref!r}") from None
    x = np.stack(feats)
    if x.shape[1] != input_dim:
        raise DimensionMismatch(
            f"features have dim {x.shape[1]}, encoder expects {input_dim}")
    y = np.array([labels_of[e.identity_id] for e in manifest.entries],
                 dtype=np.int64)
    return x, y, len(labels_of)


def _train(spec: EncoderSpec, manifest: DatasetManifest, store,
           loss_cfg: LossConfig, cfg: TrainConfig,
           teacher: Encoder | None) -> TrainResult:
    x, y, n_classes = _gather_training_set(manifest, store, spec.input_dim)
    encoder = Encoder(spec)
    prototypes = init_prototypes(n_classes, spec.embedding_dim, seed=cfg.seed)
    stats = NormStats.default() if loss_cfg.margin.kind == "adaface" else None
    rng = np.random.Generator(np.random.PCG64(cfg.seed))
    use_kd = teacher is not None and loss_cfg.kd_weight > 0.0

    params = encoder.parameters() + [prototypes]
    velocity = [np.zeros_like(p) for p in params]
    n = x.shape[0]
    trace: list[EpochStats] = []
    for epoch in range(cfg.epochs):
        lr = lr_at_epoch(epoch, cfg)
        order = rng.permutation(n)
        cls_sum = kd_sum = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            xb = _augment_batch(x[idx], cfg.hflip_prob, rng)
            yb = y[idx]

            emb, cache = encoder.forward_cached(xb)
            head = head_loss_and_grads(emb, prototypes, yb, loss_cfg.margin,
                                       rng=rng, stats=stats)
            d_emb = head.d_embedding
            kd_val = 0.0
            if use_kd:
                t_emb = teacher.forward(xb)
                kd_val, _, d_student = kd_loss_and_grads(
                    t_emb, emb, normalized=loss_cfg.kd_on_normalized,
                    reduction=loss_cfg.kd_reduction)
                d_emb = d_emb + loss_cfg.kd_weight * d_student
            batch_total = head.loss + loss_cfg.kd_weight * kd_val
            if not math.isfinite(batch_total):
                raise DivergenceDetected(
                    f"non-finite loss {batch_total!r} at epoch {epoch}, "
                    f"batch starting {start}")

            grads = encoder.backward(cache, d_emb) + [head.d_prototypes]
            if cfg.weight_decay > 0.0:
                grads = [g + cfg.weight_decay * p
                         for g, p in zip(grads, params)]
            sgd_step(params, grads, lr, cfg.momentum, velocity)

            cls_sum += head.loss * idx.size
            kd_sum += kd_val * idx.size
        cls_mean = cls_sum / n
        kd_mean = kd_sum / n
        trace.append(EpochStats(epoch, lr, cls_mean, kd_mean,
                                cls_mean + loss_cfg.kd_weight * kd_mean))
    return TrainResult(encoder, prototypes, stats, trace,
                       rng_state=rng.bit_generator.state)


def train_from_scratch(spec: EncoderSpec, manifest: DatasetManifest, store,
                       loss_cfg: LossConfig, cfg: TrainConfig) -> TrainResult:
    """Minibatch SGD on the classification loss only (no teacher)."""
    return _train(spec, manifest, store, loss_cfg, cfg, teacher=None)


def distill(teacher: Encoder, student_spec: EncoderSpec,
            manifest: DatasetManifest, store, loss_cfg: LossConfig,
            cfg: TrainConfig) -> TrainResult:
    """Train a student against the frozen teacher's embeddings.

    The teacher only runs forward; its parameter digest is checked after the
    loop so any accidental in-place update fails loudly.
    """
    if teacher.spec.embedding_dim != student_spec.embedding_dim:
        raise DimensionMismatch(
            f"teacher embeds into {teacher.spec.embedding_dim} dims, "
            f"student into {student_spec.embedding_dim}")
    digest_before = teacher.param_digest()
    result = _train(student_spec, manifest, store, loss_cfg, cfg,
                    teacher=teacher)
    if teacher.param_digest() != digest_before:
        raise FrozenViolation("teacher parameters changed during distillation")
    return result


# ---------------------------------------------------------------------------
# checkpoints


@dataclass
class Checkpoint:
    encoder: Encoder
    prototypes: np.ndarray | None
    stats: NormStats | None
    config_digest: str
    rng_state: dict | None


def checkpoint_save(encoder: Encoder, prototypes, stats: NormStats | None,
                    path, config_digest: str = "",
                    rng_state: dict | None = None,
                    extra_header: dict | None = None) -> None:
    """Bit-exact snapshot of an encoder head state, written atomically."""
    spec = encoder.spec
    doc = {
        "schema": CHECKPOINT_SCHEMA,
        "spec": {
            "input_dim": spec.input_dim,
            "hidden_widths": list(spec.hidden_widths),
            "embedding_dim": spec.embedding_dim,
            "activation": spec.activation,
            "init_seed": spec.init_seed,
        },
        "weights": [encode_array(w) for w in encoder.weights],
        "biases": [encode_array(b) for b in encoder.biases],
        "prototypes": (None if prototypes is None
                       else encode_array(np.asarray(prototypes))),
        "norm_stats": (None if stats is None
                       else {"mean_norm": stats.mean_norm,
                             "std_norm": stats.std_norm}),
        "config_digest": config_digest,
        "rng_state": rng_state,
    }
    for key, value in (extra_header or {}).items():
        if key in doc:
            raise ValueError(f"extra header key collides with checkpoint field: {key}")
        doc[key] = value
    atomic_write_text(path, canonical_json(doc) + "\n")


def checkpoint_load(path, expect_embedding_dim: int | None = None) -> Checkpoint:
    text = read_text(path)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatVersionMismatch(f"{path}: undecodable checkpoint: {exc}") from exc
    if doc.get("schema") != CHECKPOINT_SCHEMA:
        raise FormatVersionMismatch(
            f"{path}: expected schema {CHECKPOINT_SCHEMA!r}, "
            f"found {doc.get('schema')!r}")
    try:
        spec = EncoderSpec(
            input_dim=int(doc["spec"]["input_dim"]),
            hidden_widths=tuple(doc["spec"]["hidden_widths"]),
            embedding_dim=int(doc["spec"]["embedding_dim"]),
            activation=doc["spec"]["activation"],
            init_seed=int(doc["spec"]["init_seed"]),
        )
        weights = [decode_array(w) for w in doc["weights"]]
        biases = [decode_array(b) for b in doc["biases"]]
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatVersionMismatch(f"{path}: malformed checkpoint: {exc}") from exc
    if expect_embedding_dim is not None \
            and spec.embedding_dim != expect_embedding_dim:
        raise DimensionMismatch(
            f"checkpoint embeds into {spec.embedding_dim} dims, "
            f"expected {expect_embedding_dim}")

    encoder = Encoder(spec)
    expected = [w.shape for w in encoder.weights] + [b.shape for b in encoder.biases]
    loaded = [w.shape for w in weights] + [b.shape for b in biases]
    if expected != loaded:
        raise FormatVersionMismatch(
            f"{path}: parameter shapes {loaded} do not match spec {expected}")
    encoder.weights = weights
    encoder.biases = biases

    raw_stats = doc.get("norm_stats")
    stats = None if raw_stats is None else NormStats(
        mean_norm=float(raw_stats["mean_norm"]),
        std_norm=float(raw_stats["std_norm"]))
    raw_protos = doc.get("prototypes")
    prototypes = None if raw_protos is None else decode_array(raw_protos)
    return Checkpoint(encoder, prototypes, stats,
                      str(doc.get("config_digest", "")), doc.get("rng_state"))
