"""Masked-view generation for C x F feature matrices.

Four strategies share one masking ratio r (probability that any given
element is zeroed):

* random   - every element is masked independently.
* channel  - whole channels (rows) are masked, all-or-nothing.
* hybrid   - each channel independently picks the channel-mask row with
             probability mu, otherwise the random-mask row.
* parallel - the whole sample picks one of the two pure strategies, with
             probability mu for channel masking.

Masks are binary keep-grids (1 keeps, 0 zeroes) and every draw is fully
determined by its seed.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DimensionError
from .features import FeatureMatrix

STRATEGY_RANDOM = "random"
STRATEGY_CHANNEL = "channel"
STRATEGY_PARALLEL = "parallel"
STRATEGY_HYBRID = "hybrid"
STRATEGIES = (STRATEGY_RANDOM, STRATEGY_CHANNEL, STRATEGY_PARALLEL, STRATEGY_HYBRID)


@dataclass(frozen=True)
class MaskConfig:
    strategy: str = STRATEGY_HYBRID
    ratio: float = 0.5
    threshold: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ConfigurationError(f"unknown masking strategy {self.strategy!r}")
        _check_ratio(self.ratio)
        _check_threshold(self.threshold)


@dataclass
class MaskPlan:
    """Binary keep-grid plus the per-channel strategy that produced each row."""

    mask: np.ndarray
    per_channel_strategy: list[str] = field(default_factory=list)

    @property
    def masked_fraction(self):
        return 1.0 - float(self.mask.mean())


def _check_dims(channels, bands):
    if channels < 1 or bands < 1:
        raise ConfigurationError(f"mask dimensions must be positive, got {channels} x {bands}")


def _check_ratio(ratio):
    if not (0.0 < ratio < 1.0):
        raise ConfigurationError(f"masking ratio must lie in (0, 1), got {ratio}")


def _check_threshold(threshold):
    if not (0.0 <= threshold <= 1.0):
        raise ConfigurationError(f"masking threshold must lie in [0, 1], got {threshold}")


def random_mask(channels: int, bands: int, ratio: float, seed: int) -> MaskPlan:
    """Each element independently masked with probability ratio."""
    _check_dims(channels, bands)
    _check_ratio(ratio)
    rng = np.random.default_rng(seed)
    keep = (rng.random((channels, bands)) >= ratio).astype(np.float64)
    return MaskPlan(mask=keep, per_channel_strategy=[STRATEGY_RANDOM] * channels)


def channel_mask(channels: int, bands: int, ratio: float, seed: int) -> MaskPlan:
    """Each channel independently masked whole with probability ratio."""
    _check_dims(channels, bands)
    _check_ratio(ratio)
    rng = np.random.default_rng(seed)
    keep_rows = (rng.random(channels) >= ratio).astype(np.float64)
    keep = np.repeat(keep_rows[:, None], bands, axis=1)
    return MaskPlan(mask=keep, per_channel_strategy=[STRATEGY_CHANNEL] * channels)


def hybrid_mask(channels: int, bands: int, ratio: float, threshold: float, seed: int) -> MaskPlan:
    """Per-channel mixture of the two pure masks.

    Draws a random mask and a channel mask at the same ratio, then routes
    channel c to the channel mask when U_c <= threshold (U uniform on [0, 1)),
    so threshold 1 guarantees channel masking for every row.
    """
    _check_dims(channels, bands)
    _check_ratio(ratio)
    _check_threshold(threshold)
    rng = np.random.default_rng(seed)
    mask_r = (rng.random((channels, bands)) >= ratio).astype(np.float64)
    rows_c = (rng.random(channels) >= ratio).astype(np.float64)
    mask_c = np.repeat(rows_c[:, None], bands, axis=1)
    routing = rng.random(channels) <= threshold
    keep = np.where(routing[:, None], mask_c, mask_r)
    strategies = [STRATEGY_CHANNEL if routed else STRATEGY_RANDOM for routed in routing]
    return MaskPlan(mask=keep, per_channel_strategy=strategies)


def parallel_mask(channels: int, bands: int, ratio: float, threshold: float, seed: int) -> MaskPlan:
    """Whole-sample choice between the two pure strategies (no per-channel mix)."""
    _check_dims(channels, bands)
    _check_ratio(ratio)
    _check_threshold(threshold)
    rng = np.random.default_rng(seed)
    use_channel = bool(rng.random() <= threshold)
    # consume a fresh stream so the chosen sub-mask matches the pure draw in law
    sub_seed = int(rng.integers(0, 2**63 - 1))
    if use_channel:
        plan = channel_mask(channels, bands, ratio, sub_seed)
    else:
        plan = random_mask(channels, bands, ratio, sub_seed)
    return plan


def draw_mask(config: MaskConfig, channels: int, bands: int, seed: int) -> MaskPlan:
    if config.strategy == STRATEGY_RANDOM:
        return random_mask(channels, bands, config.ratio, seed)
    if config.strategy == STRATEGY_CHANNEL:
        return channel_mask(channels, bands, config.ratio, seed)
    if config.strategy == STRATEGY_PARALLEL:
        return parallel_mask(channels, bands, config.ratio, config.threshold, seed)
    return hybrid_mask(channels, bands, config.ratio, config.threshold, seed)


def draw_mask_batch(config: MaskConfig, count: int, channels: int, bands: int, seed) -> np.ndarray:
    """Keep-grids for a whole batch, [count, C, F], from one seeded stream.

    Same per-sample law as draw_mask; drawing all sub-masks in one shot
    keeps the hot training path off the per-sample generator setup cost.
    """
    _check_dims(channels, bands)
    rng = np.random.default_rng(seed)
    ratio = config.ratio
    if config.strategy == STRATEGY_RANDOM:
        return (rng.random((count, channels, bands)) >= ratio).astype(np.float64)
    if config.strategy == STRATEGY_CHANNEL:
        rows = (rng.random((count, channels)) >= ratio).astype(np.float64)
        return np.repeat(rows[:, :, None], bands, axis=2)
    mask_r = (rng.random((count, channels, bands)) >= ratio).astype(np.float64)
    rows_c = (rng.random((count, channels)) >= ratio).astype(np.float64)
    mask_c = np.repeat(rows_c[:, :, None], bands, axis=2)
    if config.strategy == STRATEGY_HYBRID:
        routed = rng.random((count, channels)) <= config.threshold
        return np.where(routed[:, :, None], mask_c, mask_r)
    whole = rng.random(count) <= config.threshold  # parallel: one choice per sample
    return np.where(whole[:, None, None], mask_c, mask_r)


def apply_mask(matrix: FeatureMatrix, plan: MaskPlan) -> FeatureMatrix:
    """Element-wise product; kept entries are bit-identical to the input."""
    if matrix.values.shape != plan.mask.shape:
        raise DimensionError(
            f"mask shape {plan.mask.shape} does not match matrix shape {matrix.values.shape}"
        )
    return FeatureMatrix(
        values=matrix.values * plan.mask,
        label=matrix.label,
        subject_id=matrix.subject_id,
        session_id=matrix.session_id,
        trial_id=matrix.trial_id,
    )
