"""Band-power feature extraction for multi-channel recordings.

Turns a raw [C, T] recording into per-window C x F feature matrices: each
entry is the differential entropy (in nats, Gaussian closed form) of one
channel restricted to one frequency band. Filtering happens once over the
full recording per band, then the filtered signal is cut into
non-overlapping windows.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.signal import butter, sosfiltfilt

from .errors import ConfigurationError, ContractError, DomainError

_LOG_2PI_E = float(np.log(2.0 * np.pi * np.e))


@dataclass(frozen=True)
class BandSpec:
    name: str
    low: float
    high: float

    def __post_init__(self):
        if not (0.0 < self.low < self.high):
            raise ConfigurationError(
                f"band {self.name!r}: need 0 < low < high, got ({self.low}, {self.high})"
            )


DEFAULT_BANDS = (
    BandSpec("delta", 1.0, 4.0),
    BandSpec("theta", 4.0, 8.0),
    BandSpec("alpha", 8.0, 14.0),
    BandSpec("beta", 14.0, 31.0),
    BandSpec("gamma", 31.0, 50.0),
)


@dataclass
class RawRecording:
    """Channel-major samples [C, T] at a fixed sample rate."""

    samples: np.ndarray
    sample_rate: float
    channel_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 2:
            raise ContractError(f"samples must be [C, T], got shape {self.samples.shape}")
        if not self.channel_names:
            self.channel_names = [f"ch{i:02d}" for i in range(self.samples.shape[0])]
        if len(self.channel_names) != self.samples.shape[0]:
            raise ContractError("channel_names length must match channel count")

    @property
    def channel_count(self):
        return self.samples.shape[0]

    @property
    def duration_samples(self):
        return self.samples.shape[1]


@dataclass
class FeatureMatrix:
    """C x F grid of per-channel, per-band differential entropies (nats)."""

    values: np.ndarray
    label: int | None = None
    subject_id: int | None = None
    session_id: int | None = None
    trial_id: int | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ContractError(f"values must be C x F, got shape {self.values.shape}")

    @property
    def channel_count(self):
        return self.values.shape[0]

    @property
    def band_count(self):
        return self.values.shape[1]


def bandpass(recording: RawRecording, band: BandSpec) -> RawRecording:
    """Zero-phase 4th-order Butterworth bandpass, applied forward and backward."""
    nyquist = recording.sample_rate / 2.0
    if not (0.0 < band.low < band.high < nyquist):
        raise ConfigurationError(
            f"band {band.name!r} ({band.low}-{band.high} Hz) outside (0, {nyquist}) Hz"
        )
    sos = butter(4, [band.low, band.high], btype="bandpass", fs=recording.sample_rate, output="sos")
    filtered = sosfiltfilt(sos, recording.samples, axis=1)
    return RawRecording(
        samples=np.ascontiguousarray(filtered),
        sample_rate=recording.sample_rate,
        channel_names=list(recording.channel_names),
    )


def segment(recording: RawRecording, window_seconds: float) -> list[RawRecording]:
    """Cut into non-overlapping windows in temporal order; the tail remainder is dropped."""
    window = int(round(window_seconds * recording.sample_rate))
    if window < 1:
        raise ContractError(
            f"window of {window_seconds}s at {recording.sample_rate} Hz holds no samples"
        )
    count = recording.duration_samples // window
    return [
        RawRecording(
            samples=recording.samples[:, i * window : (i + 1) * window].copy(),
            sample_rate=recording.sample_rate,
            channel_names=list(recording.channel_names),
        )
        for i in range(count)
    ]


def differential_entropy(values: np.ndarray) -> float:
    """0.5 * ln(2*pi*e * var) with population variance, natural log (nats)."""
    values = np.asarray(values, dtype=np.float64)
    if values.size < 2:
        raise ContractError(f"differential entropy needs at least 2 samples, got {values.size}")
    var = float(values.var())
    if var <= 0.0:
        raise DomainError("differential entropy undefined for a constant segment (zero variance)")
    return 0.5 * (_LOG_2PI_E + float(np.log(var)))


def extract_features(
    recording: RawRecording,
    bands=DEFAULT_BANDS,
    window_seconds: float = 1.0,
) -> list[FeatureMatrix]:
    """One C x F matrix per window; entry (c, f) is the DE of channel c in band f."""
    filtered = [bandpass(recording, band) for band in bands]
    per_band_windows = [segment(rec, window_seconds) for rec in filtered]
    window_count = min(len(w) for w in per_band_windows) if per_band_windows else 0
    matrices = []
    for w in range(window_count):
        grid = np.empty((recording.channel_count, len(bands)), dtype=np.float64)
        for f in range(len(bands)):
            windowed = per_band_windows[f][w].samples
            for c in range(recording.channel_count):
                grid[c, f] = differential_entropy(windowed[c])
        matrices.append(FeatureMatrix(values=grid))
    return matrices
