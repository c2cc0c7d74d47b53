"""Margin-based classification heads and the embedding-distillation objective.

Three heads share one parametric core: the target class logit is
``s * (cos(theta_y + ang) - add)`` while non-target logits stay ``s * cos``.

    arcface:          ang = m,                add = 0
    elastic_arcface:  ang ~ Normal(m, std),   add = 0   (drawn per call)
    adaface:          ang = -m * norm_hat,    add = m * norm_hat + m

where ``norm_hat`` rescales the raw (pre-normalization) feature norm against
running statistics, so low-norm (low-quality) samples receive a weaker
margin. All gradient code treats ang/add as per-call constants: the sampled
elastic margin and the norm-adaptive terms steer the geometry of the loss but
are not themselves differentiated through.

The distillation term is the mean squared difference between teacher and
student embeddings; the combined objective is
``classification_loss + kd_weight * kd_loss``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .core import ZERO_NORM_EPS
from .errors import (
    DimensionMismatch,
    IndexOutOfRange,
    UninitializedStats,
    ZeroVector,
)

MARGIN_KINDS = ("arcface", "elastic_arcface", "adaface")

# Raw feature norms are clipped into this range before entering the AdaFace
# statistics, so a single exploding sample cannot poison the running mean.
ADAFACE_NORM_MIN = 0.001
ADAFACE_NORM_MAX = 100.0

# Backward-pass clamp: keeps d(arccos)/d(cos) finite near the poles. The
# forward pass is exact (cos clipped to [-1, 1] only), so reference values
# like s*cos(m) at theta=0 hold to full precision.
_GRAD_COS_CLAMP = 1e-7
_STD_FLOOR = 1e-6


@dataclass
class MarginConfig:
    """Head selection plus its scalar parameters.

    std is only read by elastic_arcface; h and ema_momentum only by adaface.
    """

    kind: str = "arcface"
    s: float = 64.0
    m: float = 0.5
    std: float = 0.0
    h: float = 0.333
    ema_momentum: float = 0.01

    def __post_init__(self):
        if self.kind not in MARGIN_KINDS:
            raise ValueError(f"unknown margin kind {self.kind!r}")
        if not self.s > 0:
            raise ValueError("scale s must be positive")
        if not 0.0 <= self.m < math.pi / 2:
            raise ValueError("margin m must lie in [0, pi/2)")
        if self.std < 0:
            raise ValueError("std must be non-negative")
        if not self.h > 0:
            raise ValueError("h must be positive")
        if not 0.0 < self.ema_momentum <= 1.0:
            raise ValueError("ema_momentum must lie in (0, 1]")

    @classmethod
    def arcface(cls, s: float = 64.0, m: float = 0.5) -> "MarginConfig":
        return cls(kind="arcface", s=s, m=m)

    @classmethod
    def elastic_arcface(cls, s: float = 64.0, m: float = 0.5,
                        std: float = 0.05) -> "MarginConfig":
        return cls(kind="elastic_arcface", s=s, m=m, std=std)

    @classmethod
    def adaface(cls, s: float = 60.0, m: float = 0.4, h: float = 0.333,
                ema_momentum: float = 0.01) -> "MarginConfig":
        return cls(kind="adaface", s=s, m=m, h=h, ema_momentum=ema_momentum)


@dataclass
class LossConfig:
    """Combined objective: classification head plus weighted distillation."""

    margin: MarginConfig = field(default_factory=MarginConfig)
    kd_weight: float = 1.0
    kd_on_normalized: bool = False
    kd_reduction: str = "mean"

    def __post_init__(self):
        if self.kd_weight < 0:
            raise ValueError("kd_weight must be non-negative")
        if self.kd_reduction not in ("mean", "sum"):
            raise ValueError("kd_reduction must be 'mean' or 'sum'")


@dataclass
class NormStats:
    """Running EMA of feature norms for the adaface head.

    Construct with explicit values (or via .default()) before first use;
    passing an unset instance to the head raises UninitializedStats.
    """

    mean_norm: float | None = None
    std_norm: float | None = None

    @classmethod
    def default(cls) -> "NormStats":
        # Wide prior so early batches get a near-neutral margin.
        return cls(mean_norm=20.0, std_norm=100.0)

    @property
    def initialized(self) -> bool:
        return self.mean_norm is not None and self.std_norm is not None

    def update(self, norms: np.ndarray, momentum: float) -> None:
        """Fold a batch of clipped feature norms into the running stats."""
        if not self.initialized:
            raise UninitializedStats("NormStats used before initialization")
        batch_mean = float(np.mean(norms))
        batch_std = float(np.std(norms)) if norms.size > 1 else 0.0
        self.mean_norm = (1.0 - momentum) * self.mean_norm + momentum * batch_mean
        new_std = (1.0 - momentum) * self.std_norm + momentum * batch_std
        self.std_norm = max(new_std, _STD_FLOOR)


@dataclass
class HeadGradients:
    """Loss value with gradients w.r.t. raw embeddings and raw prototypes."""

    loss: float
    d_embedding: np.ndarray
    d_prototypes: np.ndarray


def init_prototypes(n_classes: int, dim: int, seed: int) -> np.ndarray:
    """Random class-prototype matrix (n_classes, dim), rows near unit scale."""
    if n_classes < 1 or dim < 1:
        raise ValueError("n_classes and dim must be positive")
    rng = np.random.Generator(np.random.PCG64(seed))
    w = rng.standard_normal((n_classes, dim))
    return w / math.sqrt(dim)


def _as_batch(embeddings, name: str = "embedding"):
    z = np.asarray(embeddings, dtype=np.float64)
    single = z.ndim == 1
    z = np.atleast_2d(z)
    if z.ndim != 2:
        raise DimensionMismatch(f"{name} must be 1-D or 2-D, got {z.shape}")
    if not np.all(np.isfinite(z)):
        raise ZeroVector(f"{name} contains non-finite components")
    return z, single


def _normalize_rows(m: np.ndarray, what: str):
    norms = np.linalg.norm(m, axis=1)
    if np.any(norms <= ZERO_NORM_EPS):
        raise ZeroVector(f"{what} contains a zero row")
    return m / norms[:, None], norms


def _check_labels(labels, n_classes: int, batch: int) -> np.ndarray:
    y = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    if y.shape != (batch,):
        raise DimensionMismatch(f"labels shape {y.shape} != ({batch},)")
    if np.any(y < 0) or np.any(y >= n_classes):
        raise IndexOutOfRange(f"label outside [0, {n_classes})")
    return y


def _target_transform(cos_y: np.ndarray, ang: np.ndarray):
    """cos(theta_y + ang) with the standard monotone continuation past pi.

    Returns the transformed target cosine and its derivative w.r.t. cos_y.
    ang == 0 passes cos_y through bitwise, so a zero-margin head equals plain
    scaled-cosine logits exactly.
    """
    c = np.clip(cos_y, -1.0, 1.0)
    theta = np.arccos(c)
    shifted = theta + ang
    past_pi = shifted > np.pi
    zero_margin = ang == 0.0

    with np.errstate(invalid="ignore"):
        tgt = np.where(
            zero_margin,
            cos_y,
            np.where(past_pi, cos_y - ang * np.sin(ang), np.cos(shifted)),
        )
    # Derivative clamped near the arccos poles; forward stays exact.
    c_safe = np.clip(cos_y, -1.0 + _GRAD_COS_CLAMP, 1.0 - _GRAD_COS_CLAMP)
    d_interior = np.sin(shifted) / np.sqrt(1.0 - c_safe * c_safe)
    d_tgt = np.where(zero_margin | past_pi, 1.0, d_interior)
    return tgt, d_tgt


def _forward(embeddings, prototypes, labels, scale, ang, add):
    z, single = _as_batch(embeddings)
    w = np.asarray(prototypes, dtype=np.float64)
    if w.ndim != 2:
        raise DimensionMismatch(f"prototypes must be 2-D, got {w.shape}")
    if w.shape[1] != z.shape[1]:
        raise DimensionMismatch(
            f"embedding dim {z.shape[1]} != prototype dim {w.shape[1]}")
    b = z.shape[0]
    y = _check_labels(labels, w.shape[0], b)

    z_hat, z_norms = _normalize_rows(z, "embedding")
    w_hat, w_norms = _normalize_rows(w, "prototypes")
    cos = z_hat @ w_hat.T
    rows = np.arange(b)
    ang = np.broadcast_to(np.asarray(ang, dtype=np.float64), (b,))
    add = np.broadcast_to(np.asarray(add, dtype=np.float64), (b,))

    tgt, d_tgt = _target_transform(cos[rows, y], ang)
    logits = scale * cos
    logits[rows, y] = scale * (tgt - add)
    cache = (z, z_hat, z_norms, w_hat, w_norms, y, d_tgt, single)
    return logits, cache


def margin_logits(embeddings, prototypes, labels, scale, ang_margin,
                  add_margin=0.0) -> np.ndarray:
    """Parametric head: explicit angular and additive margins per sample.

    Accepts a single (D,) embedding with an int label or a (B, D) batch with
    a (B,) label vector; margins may be scalars or per-sample vectors.
    """
    logits, cache = _forward(embeddings, prototypes, labels, scale,
                             ang_margin, add_margin)
    return logits[0] if cache[-1] else logits


def margin_logits_arcface(embedding, prototypes, y, cfg: MarginConfig
                          ) -> np.ndarray:
    """Additive angular margin on the target class: s * cos(theta_y + m)."""
    return margin_logits(embedding, prototypes, y, cfg.s, cfg.m, 0.0)


def sample_elastic_margins(cfg: MarginConfig, rng: np.random.Generator,
                           size: int) -> np.ndarray:
    """Per-sample margins m_i ~ Normal(m, std); std=0 degenerates to m."""
    return rng.normal(cfg.m, cfg.std, size=size)


def margin_logits_elastic(embedding, prototypes, y, cfg: MarginConfig,
                          rng: np.random.Generator) -> np.ndarray:
    """Arcface with the target margin redrawn from Normal(m, std) per call."""
    z, single = _as_batch(embedding)
    margins = sample_elastic_margins(cfg, rng, z.shape[0])
    out = margin_logits(z, prototypes, y if not single else [y],
                        cfg.s, margins, 0.0)
    return out[0] if single else out


def adaface_margin_terms(raw_norms: np.ndarray, cfg: MarginConfig,
                         stats: NormStats):
    """(ang, add, clipped norms) for the norm-adaptive margin.

    norm_hat = clip((|z| - mean) / (std / h), -1, 1); high-norm samples get
    the full angular penalty, low-norm samples a mostly additive one.
    """
    if stats is None or not stats.initialized:
        raise UninitializedStats("adaface requires initialized NormStats")
    safe = np.clip(raw_norms, ADAFACE_NORM_MIN, ADAFACE_NORM_MAX)
    norm_hat = np.clip((safe - stats.mean_norm) / (stats.std_norm / cfg.h),
                       -1.0, 1.0)
    ang = -cfg.m * norm_hat
    add = cfg.m * norm_hat + cfg.m
    return ang, add, safe


def margin_logits_adaface(embedding, prototypes, y, cfg: MarginConfig,
                          stats: NormStats) -> np.ndarray:
    """Norm-adaptive margin head; updates stats by EMA after use."""
    z, single = _as_batch(embedding)
    norms = np.linalg.norm(z, axis=1)
    ang, add, safe = adaface_margin_terms(norms, cfg, stats)
    out = margin_logits(z, prototypes, y if not single else [y],
                        cfg.s, ang, add)
    stats.update(safe, cfg.ema_momentum)
    return out[0] if single else out


def cross_entropy(logits, y: int) -> float:
    """-log softmax(logits)[y] with max-subtraction stabilization."""
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1:
        raise DimensionMismatch(f"logits must be 1-D, got {z.shape}")
    if not np.all(np.isfinite(z)):
        raise ValueError("logits contain non-finite values")
    if not 0 <= y < z.shape[0]:
        raise IndexOutOfRange(f"class index {y} outside [0, {z.shape[0]})")
    shifted = z - np.max(z)
    return float(np.log(np.sum(np.exp(shifted))) - shifted[y])


def kd_embedding_loss(teacher_emb, student_emb, reduction: str = "mean"
                      ) -> float:
    """Squared difference between embeddings, averaged over dimensions.

    reduction='sum' skips the dimension average (exposed for completeness;
    mean is the default so the value is comparable across embedding sizes).
    """
    t = np.asarray(teacher_emb, dtype=np.float64)
    s = np.asarray(student_emb, dtype=np.float64)
    if t.shape != s.shape:
        raise DimensionMismatch(f"embedding shapes differ: {t.shape} vs {s.shape}")
    sq = (t - s) ** 2
    if reduction == "sum":
        return float(np.sum(sq) / (t.shape[0] if t.ndim == 2 else 1))
    return float(np.mean(sq))


def total_loss(cls_loss: float, kd_loss: float, kd_weight: float) -> float:
    """Combined objective: classification plus weighted distillation."""
    if kd_loss < 0:
        raise ValueError("kd_loss must be non-negative")
    if kd_weight < 0:
        raise ValueError("kd_weight must be non-negative")
    return cls_loss + kd_weight * kd_loss


def margin_loss_and_grads(embeddings, prototypes, labels, scale, ang, add
                          ) -> HeadGradients:
    """Mean cross-entropy over the batch with analytic gradients.

    Margins are per-call constants; gradients flow through the cosine
    geometry (including row normalization of embeddings and prototypes) only.
    """
    logits, cache = _forward(embeddings, prototypes, labels, scale, ang, add)
    z, z_hat, z_norms, w_hat, w_norms, y, d_tgt, single = cache
    b = z.shape[0]
    rows = np.arange(b)

    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    probs = exp / exp.sum(axis=1, keepdims=True)
    losses = np.log(exp.sum(axis=1)) - shifted[rows, y]
    loss = float(losses.mean())

    d_logits = probs.copy()
    d_logits[rows, y] -= 1.0
    d_logits /= b

    d_cos = scale * d_logits
    d_cos[rows, y] *= d_tgt

    d_z_hat = d_cos @ w_hat
    d_w_hat = d_cos.T @ z_hat
    d_z = (d_z_hat - np.sum(d_z_hat * z_hat, axis=1, keepdims=True) * z_hat
           ) / z_norms[:, None]
    d_w = (d_w_hat - np.sum(d_w_hat * w_hat, axis=1, keepdims=True) * w_hat
           ) / w_norms[:, None]
    return HeadGradients(loss, d_z[0] if single else d_z, d_w)


def head_loss_and_grads(embeddings, prototypes, labels, cfg: MarginConfig,
                        rng: np.random.Generator | None = None,
                        stats: NormStats | None = None) -> HeadGradients:
    """Dispatch to the configured head and return loss plus gradients.

    elastic_arcface draws its margins from rng here; adaface reads and then
    EMA-updates stats. Both extras are treated as constants for the backward
    pass, matching the forward-only heads.
    """
    z, single = _as_batch(embeddings)
    y = labels if not single else [labels]
    if cfg.kind == "arcface":
        out = margin_loss_and_grads(z, prototypes, y, cfg.s, cfg.m, 0.0)
    elif cfg.kind == "elastic_arcface":
        if rng is None:
            raise ValueError("elastic_arcface requires an rng")
        margins = sample_elastic_margins(cfg, rng, z.shape[0])
        out = margin_loss_and_grads(z, prototypes, y, cfg.s, margins, 0.0)
    else:
        norms = np.linalg.norm(z, axis=1)
        ang, add, safe = adaface_margin_terms(norms, cfg, stats)
        out = margin_loss_and_grads(z, prototypes, y, cfg.s, ang, add)
        stats.update(safe, cfg.ema_momentum)
    if single:
        out.d_embedding = out.d_embedding[0]
    return out


def kd_loss_and_grads(teacher_emb, student_emb, normalized: bool = False,
                      reduction: str = "mean"):
    """(loss, d_teacher, d_student) for the embedding-matching term.

    With normalized=True the squared difference is taken between the
    l2-normalized embeddings and gradients flow through the normalization.
    Batch inputs (B, D) average the per-sample loss over the batch.
    """
    t, t_single = _as_batch(teacher_emb, "teacher embedding")
    s, s_single = _as_batch(student_emb, "student embedding")
    if t.shape != s.shape:
        raise DimensionMismatch(f"embedding shapes differ: {t.shape} vs {s.shape}")
    b, d = t.shape
    denom = b * (d if reduction == "mean" else 1)

    if normalized:
        t_hat, t_norms = _normalize_rows(t, "teacher embedding")
        s_hat, s_norms = _normalize_rows(s, "student embedding")
        diff = t_hat - s_hat
        loss = float(np.sum(diff * diff) / denom)
        g_t_hat = 2.0 * diff / denom
        g_s_hat = -g_t_hat
        d_t = (g_t_hat - np.sum(g_t_hat * t_hat, axis=1, keepdims=True) * t_hat
               ) / t_norms[:, None]
        d_s = (g_s_hat - np.sum(g_s_hat * s_hat, axis=1, keepdims=True) * s_hat
               ) / s_norms[:, None]
    else:
        diff = t - s
        loss = float(np.sum(diff * diff) / denom)
        d_t = 2.0 * diff / denom
        d_s = -d_t

    if t_single and s_single:
        d_t, d_s = d_t[0], d_s[0]
    return loss, d_t, d_s
