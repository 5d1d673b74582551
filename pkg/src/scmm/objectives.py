"""Training objectives: soft contrastive loss, aggregate reconstruction, joint total.

Pairwise sample weights come from the original data space: raw pairwise
distances are min-max normalized over the off-diagonal pairs of the batch,
then squashed through a scaled sigmoid so the most similar pairs approach
the upper bound alpha and dissimilar pairs approach zero. With alpha = 0
every cross-pair weight vanishes and the contrastive term reduces exactly
to the classic normalized-temperature cross-entropy over positive pairs.

Reconstruction goes through a similarity-weighted aggregate: each anchor's
embedding is rebuilt as the softmax-over-similarities combination of the
other embeddings in the batch, decoded, and compared to the original
sample with mean squared error. The two losses are balanced by trainable
log-variance weights.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigurationError, DegenerateBatchError, DimensionError
from .network import ParameterStore

_NEG_INF = -1e30
_NORM_EPS = 1e-24

METRIC_COSINE_NEGATIVE = "cosine_negative"
METRIC_EUCLIDEAN = "euclidean"
METRIC_MANHATTAN = "manhattan"
METRICS = (METRIC_COSINE_NEGATIVE, METRIC_EUCLIDEAN, METRIC_MANHATTAN)

MODE_SOFT_ORIGINAL = "soft_original_space"
MODE_SOFT_EMBEDDING = "soft_embedding_space"
MODE_HARD = "hard"
MODES = (MODE_SOFT_ORIGINAL, MODE_SOFT_EMBEDDING, MODE_HARD)


@dataclass(frozen=True)
class SoftCLConfig:
    metric: str = METRIC_COSINE_NEGATIVE
    alpha: float = 0.5
    sharpness: float = 0.05
    temperature: float = 0.5
    mode: str = MODE_SOFT_ORIGINAL

    def __post_init__(self):
        if self.metric not in METRICS:
            raise ConfigurationError(f"unknown metric {self.metric!r}")
        if self.mode not in MODES:
            raise ConfigurationError(f"unknown soft-CL mode {self.mode!r}")
        if not (0.0 <= self.alpha <= 1.0):
            raise ConfigurationError(f"alpha must lie in [0, 1], got {self.alpha}")
        if self.sharpness <= 0.0:
            raise ConfigurationError(f"sharpness must be positive, got {self.sharpness}")
        if self.temperature <= 0.0:
            raise ConfigurationError(f"temperature must be positive, got {self.temperature}")


@dataclass
class BatchEmbeddings:
    """Paired views of one batch: row i of each field belongs to sample i.

    The contrastive universe is the 2B-row stack [originals; masked]; when
    both views were produced by one joint forward pass the stacked tensors
    can be passed as joint_z / joint_h to avoid re-concatenation.
    """

    z_orig: Tensor
    z_masked: Tensor
    h_orig: Tensor
    h_masked: Tensor
    joint_z: Tensor | None = None
    joint_h: Tensor | None = None

    def __post_init__(self):
        if self.z_orig.data.shape != self.z_masked.data.shape:
            raise DimensionError("z_orig and z_masked must have identical shapes")
        if self.h_orig.data.shape != self.h_masked.data.shape:
            raise DimensionError("h_orig and h_masked must have identical shapes")
        if self.z_orig.data.shape[0] != self.h_orig.data.shape[0]:
            raise DimensionError("projected and encoded batches differ in size")

    @classmethod
    def from_joint(cls, joint_z: Tensor, joint_h: Tensor, batch_size: int) -> "BatchEmbeddings":
        return cls(
            z_orig=ad.slice_rows(joint_z, 0, batch_size),
            z_masked=ad.slice_rows(joint_z, batch_size, 2 * batch_size),
            h_orig=ad.slice_rows(joint_h, 0, batch_size),
            h_masked=ad.slice_rows(joint_h, batch_size, 2 * batch_size),
            joint_z=joint_z,
            joint_h=joint_h,
        )

    def z_all(self) -> Tensor:
        # joint_z is authoritative only when the views were sliced from it;
        # otherwise rebuild so later mutation of the views is observed
        if self.joint_z is not None:
            return self.joint_z
        return ad.concat_rows([self.z_orig, self.z_masked])

    def h_all(self) -> Tensor:
        if self.joint_h is not None:
            return self.joint_h
        return ad.concat_rows([self.h_orig, self.h_masked])

    @property
    def batch_size(self):
        return self.z_orig.data.shape[0]


# ---------------------------------------------------------------------------
# soft assignments (plain numpy; weights are coefficients, not differentiated)
# ---------------------------------------------------------------------------

def pairwise_distance(samples: np.ndarray, metric: str) -> np.ndarray:
    """Raw pairwise distances between flattened samples, [B, B]."""
    flat = np.asarray(samples, dtype=np.float64).reshape(len(samples), -1)
    if metric == METRIC_COSINE_NEGATIVE:
        norms = np.sqrt((flat * flat).sum(axis=1)) + 1e-300
        unit = flat / norms[:, None]
        return -(unit @ unit.T)
    if metric == METRIC_EUCLIDEAN:
        sq = (flat * flat).sum(axis=1)
        gram = flat @ flat.T
        d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * gram, 0.0)
        return np.sqrt(d2)
    if metric == METRIC_MANHATTAN:
        return np.abs(flat[:, None, :] - flat[None, :, :]).sum(axis=2)
    raise ConfigurationError(f"unknown metric {metric!r}")


def normalized_distance(samples, metric: str = METRIC_COSINE_NEGATIVE) -> np.ndarray:
    """Min-max normalize raw distances over all off-diagonal pairs to [0, 1].

    The batch's most-similar pair maps to 0 and the least-similar to 1; the
    diagonal is zeroed and unused. Raises when every off-diagonal distance
    is equal (the normalization has no scale).
    """
    if hasattr(samples[0], "values"):
        samples = np.stack([m.values for m in samples])
    samples = np.asarray(samples, dtype=np.float64)
    if len(samples) < 2:
        raise ConfigurationError(f"need at least 2 samples, got {len(samples)}")
    raw = pairwise_distance(samples, metric)
    off = ~np.eye(len(samples), dtype=bool)
    lo = raw[off].min()
    hi = raw[off].max()
    if hi - lo <= 0.0:
        raise DegenerateBatchError(
            f"all {off.sum()} pairwise distances equal ({lo:.6g}); cannot normalize"
        )
    out = (raw - lo) / (hi - lo)
    np.fill_diagonal(out, 0.0)
    return np.clip(out, 0.0, 1.0)


def soft_assignments(distances: np.ndarray, alpha: float, sharpness: float) -> np.ndarray:
    """Weight 2*alpha*sigmoid(-distance/sharpness) per pair; alpha at distance 0."""
    if sharpness <= 0.0:
        raise ConfigurationError(f"sharpness must be positive, got {sharpness}")
    d = np.asarray(distances, dtype=np.float64)
    x = -d / sharpness
    return 2.0 * alpha / (1.0 + np.exp(-x))


def batch_weights(samples, config: SoftCLConfig, embeddings: np.ndarray | None = None) -> np.ndarray:
    """Full B x B weight table for a batch under the configured mode.

    Hard mode returns all zeros. Embedding-space mode measures distances
    between projected embeddings instead of raw samples (pass them in);
    original-space mode uses the raw samples and can be precomputed offline.
    """
    count = len(samples)
    if config.mode == MODE_HARD:
        return np.zeros((count, count), dtype=np.float64)
    if config.mode == MODE_SOFT_EMBEDDING:
        if embeddings is None:
            raise ConfigurationError("embedding-space mode needs projected embeddings")
        dist = normalized_distance(np.asarray(embeddings, dtype=np.float64), config.metric)
    else:
        dist = normalized_distance(samples, config.metric)
    return soft_assignments(dist, config.alpha, config.sharpness)


# ---------------------------------------------------------------------------
# differentiable pieces
# ---------------------------------------------------------------------------

def _unit_rows(t: Tensor) -> Tensor:
    sq = ad.tensor_sum(ad.square(t), axis=1, keepdims=True)
    return ad.div(t, ad.sqrt(sq + _NORM_EPS))


def _cosine_matrix(a: Tensor, b: Tensor) -> Tensor:
    return ad.matmul(_unit_rows(a), ad.transpose(_unit_rows(b), (1, 0)))


def soft_contrastive_loss(emb: BatchEmbeddings, weights: np.ndarray | None, temperature: float) -> Tensor:
    """Weighted cross-view contrastive loss over all 2B embeddings as anchors.

    Every anchor's positive is its other view (coefficient 1); every other
    embedding contributes with the weight of its source sample (both views
    of a sample share one weight). Log-probabilities are row softmaxes of
    cosine similarity over the other 2B - 1 embeddings at the given
    temperature; the result is averaged over anchors.
    """
    if temperature <= 0.0:
        raise ConfigurationError(f"temperature must be positive, got {temperature}")
    b = emb.batch_size
    if weights is None:
        weights = np.zeros((b, b), dtype=np.float64)
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != (b, b):
        raise DimensionError(f"weights must be [{b}, {b}], got {weights.shape}")

    z_all = emb.z_all()
    sims = _cosine_matrix(z_all, z_all)
    logits = ad.scale(sims, 1.0 / temperature) + Tensor(np.eye(2 * b) * _NEG_INF)
    log_probs = ad.log_softmax_rows(logits)

    cross = weights.copy()
    np.fill_diagonal(cross, 0.0)
    eye = np.eye(b)
    coef = np.block([[cross, cross + eye], [cross + eye, cross]])
    return ad.scale(ad.tensor_sum(ad.mul(Tensor(coef), log_probs)), -1.0 / (2 * b))


def aggregate(
    emb: BatchEmbeddings,
    temperature: float,
    include_masked: bool = True,
    anchor_masked: bool = False,
) -> tuple[Tensor, np.ndarray]:
    """Similarity-weighted combination of the other embeddings, per anchor.

    For each anchor (the original view by default), softmax the cosine
    similarities to the pool of other projected embeddings at the given
    temperature and combine the matching encoder embeddings. Returns the
    combined [B, embedding_dim] tensor and a detached copy of the weights.
    """
    if temperature <= 0.0:
        raise ConfigurationError(f"temperature must be positive, got {temperature}")
    b = emb.batch_size
    if b < 2:
        raise ConfigurationError(f"aggregation needs a batch of >= 2 samples, got {b}")

    anchors = emb.z_masked if anchor_masked else emb.z_orig
    if include_masked:
        z_pool = emb.z_all()
        h_pool = emb.h_all()
        self_mask = np.zeros((b, 2 * b))
        self_mask[np.arange(b), np.arange(b) + (b if anchor_masked else 0)] = _NEG_INF
    else:
        z_pool = emb.z_masked if anchor_masked else emb.z_orig
        h_pool = emb.h_masked if anchor_masked else emb.h_orig
        self_mask = np.eye(b) * _NEG_INF

    sims = _cosine_matrix(anchors, z_pool)
    logits = ad.scale(sims, 1.0 / temperature) + Tensor(self_mask)
    attn = ad.softmax_rows(logits)
    combined = ad.matmul(attn, h_pool)
    return combined, attn.data.copy()


def reconstruction_loss(x: np.ndarray, x_r: Tensor) -> Tensor:
    """Per-sample squared L2 reconstruction error, averaged over the batch."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != x_r.data.shape:
        raise DimensionError(f"shapes differ: {x.shape} vs {x_r.data.shape}")
    diff = ad.sub(x_r, Tensor(x))
    return ad.scale(ad.tensor_sum(ad.square(diff)), 1.0 / x.shape[0])


def total_loss(
    loss_contrastive: Tensor | None,
    loss_reconstruction: Tensor | None,
    store: ParameterStore,
) -> Tensor:
    """Uncertainty-balanced sum of the enabled losses.

    Each enabled term contributes exp(-2 * log_sigma) / 2 times the loss
    plus log_sigma, with the log_sigma scalars trainable; a disabled term
    contributes nothing (its log_sigma stays out of the graph).
    """
    terms = []
    if loss_contrastive is not None:
        s = ad.reshape(store.log_sigma_contrastive, ())
        terms.append(ad.scale(ad.mul(ad.exp(ad.scale(s, -2.0)), loss_contrastive), 0.5) + s)
    if loss_reconstruction is not None:
        s = ad.reshape(store.log_sigma_reconstruction, ())
        terms.append(ad.scale(ad.mul(ad.exp(ad.scale(s, -2.0)), loss_reconstruction), 0.5) + s)
    if not terms:
        raise ConfigurationError("at least one loss term must be enabled")
    out = terms[0]
    for term in terms[1:]:
        out = ad.add(out, term)
    return out
